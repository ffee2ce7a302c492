"""Outcome-side computations: ATE, Horvitz-Thompson estimation, bounds.

The design-based analysis revolves around the decomposition mu = X b + v
with v orthogonal to the covariate columns: the balanced design drives the
estimator's asymptotic variance down from ||mu||^2 / n^2 (independent fair
coin assignment) to ||v||^2 / n^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .linalg import CovariateSetup
from .skeletal import conditioning_kappa


@dataclass(frozen=True)
class OutcomeData:
    """Potential outcomes under the two treatments; mu = a + b."""

    a: np.ndarray
    b: np.ndarray
    mu: np.ndarray

    @classmethod
    def from_pair(cls, a, b) -> "OutcomeData":
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape or a.ndim != 1:
            raise DataError("outcome vectors must be equal-length 1-D arrays")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise DataError("outcome vectors contain non-finite entries")
        return cls(a=a, b=b, mu=a + b)


def ate(a, b) -> float:
    """Average treatment effect (1/n) sum (a_i - b_i)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"outcome length mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(a - b))


def ht_estimate(z, a, b) -> float:
    """Horvitz-Thompson estimate under equal assignment probabilities 1/2.

    tau_hat = (1/n) (sum_{z_i=+1} 2 a_i - sum_{z_i=-1} 2 b_i).
    """
    z = np.asarray(z, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not (z.shape == a.shape == b.shape):
        raise DataError("assignment and outcome vectors must share a length")
    if not np.all(np.abs(z) == 1.0):
        raise DataError("assignment vector entries must be +1 or -1")
    n = z.shape[0]
    treated = z > 0
    return float((2.0 * a[treated].sum() - 2.0 * b[~treated].sum()) / n)


@dataclass(frozen=True)
class ResidualDecomposition:
    """mu = X beta_ls + v with v in the orthogonal complement of ColSp(X)."""

    beta_ls: np.ndarray
    v: np.ndarray
    v_norm_sq: float
    v_inf: float
    rank: int
    rank_deficient: bool


def residual_projection(mu, X) -> ResidualDecomposition:
    """Project mu off the covariate column space.

    Uses an SVD-based least squares solve, so rank deficiency is handled by
    projecting onto the actual column space; beta_ls is the minimum-norm
    coefficient vector.
    """
    mu = np.asarray(mu, dtype=np.float64)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] != mu.shape[0]:
        raise DataError(f"X has {X.shape[0]} rows but mu has length {mu.shape[0]}")
    if X.shape[1] == 0:
        v = mu.copy()
        return ResidualDecomposition(
            beta_ls=np.zeros(0), v=v, v_norm_sq=float(v @ v),
            v_inf=float(np.max(np.abs(v))) if v.size else 0.0, rank=0, rank_deficient=False,
        )
    beta, _, rank, _ = np.linalg.lstsq(X, mu, rcond=None)
    v = mu - X @ beta
    return ResidualDecomposition(
        beta_ls=beta,
        v=v,
        v_norm_sq=float(v @ v),
        v_inf=float(np.max(np.abs(v))),
        rank=int(rank),
        rank_deficient=bool(rank < X.shape[1]),
    )


def mse_bound(decomp: ResidualDecomposition, setup: CovariateSetup, n: int) -> float:
    """Certified upper bound on n E[(tau_hat - tau)^2] for the walk design.

    Evaluates (1/(phi n)) ||mu - X b||^2 + xi^2 ||b||^2 / ((1 - phi) n)
    at b = beta_ls; an upper bound for the infimum over b.
    """
    phi = setup.phi
    beta_sq = float(decomp.beta_ls @ decomp.beta_ls)
    return decomp.v_norm_sq / (phi * n) + setup.xi**2 * beta_sq / ((1.0 - phi) * n)


def mse_bound_tightened(decomp: ResidualDecomposition, setup: CovariateSetup, n: int, mu) -> float:
    """Cheap improvement: minimize the bound over the ray c * beta_ls.

    Since v is orthogonal to X beta_ls the bound is quadratic in c with a
    closed-form minimizer; never worse than the plain bound.
    """
    mu = np.asarray(mu, dtype=np.float64)
    phi = setup.phi
    fit = mu - decomp.v  # X beta_ls
    fit_sq = float(fit @ fit)
    beta_sq = float(decomp.beta_ls @ decomp.beta_ls)
    pen = setup.xi**2 * beta_sq / (1.0 - phi)
    denom = fit_sq / phi + pen
    c = (fit_sq / phi) / denom if denom > 0 else 0.0
    return (decomp.v_norm_sq + (1.0 - c) ** 2 * fit_sq) / (phi * n) + c * c * pen / n


def kappa_diagnostic(setup: CovariateSetup) -> float:
    """Conditioning ratio n / lambda_min(Y^T Y); 0 with no covariates, inf when singular."""
    return conditioning_kappa(setup)


def formal_condition(decomp: ResidualDecomposition, setup: CovariateSetup, n: int) -> float:
    """Normality diagnostic sqrt(d) (||v||_inf / ||v||) kappa^2 log n.

    Small values indicate the regime where the standardized contrast is
    approximately Gaussian.
    """
    if decomp.v_norm_sq == 0.0:
        raise DataError("residual vector is zero; the limiting law is degenerate")
    kappa = conditioning_kappa(setup)
    return math.sqrt(setup.d) * (decomp.v_inf / math.sqrt(decomp.v_norm_sq)) * kappa**2 * math.log(n)


def predicted_variances(decomp: ResidualDecomposition, mu, n: int) -> tuple[float, float]:
    """(var_iid, var_gsw) = (||mu||^2 / n^2, ||v||^2 / n^2); the second never exceeds the first."""
    mu = np.asarray(mu, dtype=np.float64)
    return float(mu @ mu) / n**2, decomp.v_norm_sq / n**2


def regularity_diagnostics(decomp: ResidualDecomposition, setup: CovariateSetup, n: int) -> dict:
    """Raw regularity quantities, reported for the user to judge.

    No thresholds are enforced: the relevant constants are not pinned down,
    so these are surfaced as-is alongside the estimates.
    """
    log_n = math.log(max(n, 2))
    v_norm = math.sqrt(decomp.v_norm_sq)
    X = setup.X
    lam_min_x = float(np.linalg.eigvalsh(X.T @ X)[0]) if X.shape[1] else 0.0
    return {
        "residual_density": (decomp.v_inf / v_norm) * log_n**3 if v_norm > 0 else math.inf,
        "covariate_conditioning": lam_min_x / n,
        "row_norm_growth": setup.xi**2 / (setup.d * log_n) if setup.d else 0.0,
        "residual_mass": decomp.v_norm_sq / log_n**2,
    }


@dataclass(frozen=True)
class EstimateReport:
    """Point estimates plus every variance handle the analysis provides."""

    tau: float | None
    tau_hat: float | None
    mse_bound: float
    mse_bound_tightened: float
    var_iid: float
    var_gsw_asymptotic: float
    kappa: float
    formal_condition_value: float | None
    diagnostics: dict = field(default_factory=dict)
    rank_deficient: bool = False


def build_report(setup: CovariateSetup, outcomes: OutcomeData | None, mu, z=None) -> EstimateReport:
    """Assemble the full report for one dataset (and one assignment, if given)."""
    mu = np.asarray(mu, dtype=np.float64)
    decomp = residual_projection(mu, setup.X)
    n = setup.n
    var_iid, var_gsw = predicted_variances(decomp, mu, n)
    try:
        cond = formal_condition(decomp, setup, n)
    except DataError:
        cond = None
    tau = tau_hat = None
    if outcomes is not None:
        tau = ate(outcomes.a, outcomes.b)
        if z is not None:
            tau_hat = ht_estimate(z, outcomes.a, outcomes.b)
    return EstimateReport(
        tau=tau,
        tau_hat=tau_hat,
        mse_bound=mse_bound(decomp, setup, n),
        mse_bound_tightened=mse_bound_tightened(decomp, setup, n, mu),
        var_iid=var_iid,
        var_gsw_asymptotic=var_gsw,
        kappa=conditioning_kappa(setup),
        formal_condition_value=cond,
        diagnostics=regularity_diagnostics(decomp, setup, n),
        rank_deficient=decomp.rank_deficient,
    )
