"""Replication engine, exact small-n oracles, and statistical diagnostics.

Everything here is deterministic given its seed: replication k draws from
the stream keyed by (seed, k) as documented in ``_rng``, covariate and
outcome generators use reserved stream keys, and aggregation reads samples
from per-replication slots so results do not depend on execution order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from ._rng import replication_stream
from .errors import DataError, LogicError, ParameterError
from .estimator import ht_estimate, residual_projection
from .linalg import CovariateSetup, build_setup, init_inverse, step_direction
from .sampler import FREEZE_TOL, feasible_interval, run_gsw
from .skeletal import run_coupled, run_skeletal

# Stream keys reserved for data generation; replication streams use small
# spawn keys so these can never collide.
_X_STREAM_KEY = 2**31
_OUTCOME_STREAM_KEY = 2**31 + 1

ENUMERATION_MAX_N = 4
BRUTEFORCE_MAX_N = 12


def normal_cdf(x: float) -> float:
    """Standard normal CDF via the C library's erfc: Phi(x) = erfc(-x / sqrt(2)) / 2.

    Correctly rounded to double precision, comfortably within 1e-10 absolute.
    """
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def ks_distance(samples) -> float:
    """Two-sided Kolmogorov-Smirnov distance to the standard normal.

    The caller standardizes the samples (a CLT target is divided by ||v||).
    """
    s = np.sort(np.asarray(samples, dtype=np.float64))
    m = s.shape[0]
    if m == 0:
        raise DataError("cannot compute a KS distance from no samples")
    cdf = np.array([normal_cdf(x) for x in s])
    grid = np.arange(1, m + 1) / m
    return float(max((grid - cdf).max(), (cdf - (grid - 1.0 / m)).max()))


# ---------------------------------------------------------------------------
# Sampling without replacement: exact moments and their brute-force twin


@dataclass(frozen=True)
class SrsworCase:
    """Centered population values and a sample size for moment formulas."""

    x: np.ndarray
    a: int
    centered: bool
    original_mean: float


def make_srswor_case(x, a: int) -> SrsworCase:
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not (1 <= a <= n):
        raise ParameterError(f"sample size a={a} must lie in [1, {n}]")
    mean = float(x.mean())
    if mean != 0.0:
        return SrsworCase(x=x - mean, a=a, centered=True, original_mean=mean)
    return SrsworCase(x=x.copy(), a=a, centered=False, original_mean=0.0)


def srswor_moments(case: SrsworCase) -> tuple[float, float | None]:
    """Exact E[W^2] and E[W^4] for W the sum of a draws without replacement.

    With (n)_k the k-th falling factorial and sum x_i = 0:

        E[W^2] = a(n-a)/(n)_2 * sum x_i^2
        E[W^4] = 3 (a)_2 (n-a)_2 / (n)_4 * (sum x_i^2)^2
                 + a(n-a)/(n)_2 * (1 - 6(a-1)(n-a-1)/((n-2)(n-3))) * sum x_i^4

    The fourth moment needs n >= 4; below that only E[W^2] is returned.
    """
    x, a = case.x, case.a
    n = x.shape[0]
    if n == 1:
        return 0.0, None
    s2 = float(np.sum(x**2))
    s4 = float(np.sum(x**4))
    m2 = a * (n - a) / (n * (n - 1)) * s2
    if n < 4:
        return m2, None
    m4 = (
        3.0 * a * (a - 1) * (n - a) * (n - a - 1) / (n * (n - 1) * (n - 2) * (n - 3)) * s2**2
        + a * (n - a) / (n * (n - 1)) * (1.0 - 6.0 * (a - 1) * (n - a - 1) / ((n - 2) * (n - 3))) * s4
    )
    return m2, m4


def srswor_bruteforce(case: SrsworCase) -> tuple[float, float | None]:
    """Definitional enumeration over all C(n, a) subsets."""
    x, a = case.x, case.a
    n = x.shape[0]
    if n > BRUTEFORCE_MAX_N:
        raise LogicError(f"brute force enumerates subsets only up to n={BRUTEFORCE_MAX_N}")
    total2 = total4 = 0.0
    count = 0
    for subset in combinations(range(n), a):
        w = float(x[list(subset)].sum())
        total2 += w * w
        total4 += w**4
        count += 1
    m2 = total2 / count
    m4 = total4 / count if n >= 4 else None
    return m2, m4


# ---------------------------------------------------------------------------
# Matrix concentration for sums over random subsets


@dataclass(frozen=True)
class ConcentrationRow:
    x: float
    empirical_prob: float
    bound: float
    std_error: float
    ok: bool


def matrix_concentration_check(matrices, a: int, x_grid, reps: int, seed: int) -> list[ConcentrationRow]:
    """Empirical tails of ||W - E W||_op for W a subset sum of matrices.

    Each row compares the empirical exceedance probability at x with the
    exchangeable-pair tail bound 2 d exp(-n x^2 / (2 a (n - a))); the check
    allows three binomial standard errors of slack.
    """
    mats = np.asarray(matrices, dtype=np.float64)
    if mats.ndim == 1:
        mats = mats.reshape(-1, 1, 1)
    n, d = mats.shape[0], mats.shape[1]
    if mats.shape[1] != mats.shape[2]:
        raise DataError("matrices must be square")
    if not np.allclose(mats, np.swapaxes(mats, 1, 2), atol=1e-12):
        raise DataError("matrices must be symmetric")
    op_norms = np.max(np.abs(np.linalg.eigvalsh(mats)), axis=1)
    if np.any(op_norms > 1.0 + 1e-9):
        raise DataError(f"operator norms must be at most 1, max is {op_norms.max():.6f}")
    if not (1 <= a <= n):
        raise ParameterError(f"subset size a={a} must lie in [1, {n}]")

    mean = (a / n) * mats.sum(axis=0)
    rng = replication_stream(seed)
    perms = rng.permuted(np.tile(np.arange(n), (reps, 1)), axis=1)[:, :a]
    onehot = np.zeros((reps, n))
    onehot[np.arange(reps)[:, None], perms] = 1.0
    W = (onehot @ mats.reshape(n, d * d)).reshape(reps, d, d)
    dev = np.max(np.abs(np.linalg.eigvalsh(W - mean)), axis=1)

    rows = []
    for x in np.asarray(x_grid, dtype=np.float64):
        emp = float(np.mean(dev >= x))
        if a == n:
            bound = 2.0 * d if x <= 0.0 else 0.0
        else:
            bound = 2.0 * d * math.exp(-n * x * x / (2.0 * a * (n - a)))
        se = math.sqrt(emp * (1.0 - emp) / reps)
        rows.append(ConcentrationRow(x=float(x), empirical_prob=emp, bound=bound,
                                     std_error=se, ok=emp <= bound + 3.0 * se))
    return rows


# ---------------------------------------------------------------------------
# Exact enumeration of the walk's output law (brute-force oracle)


@dataclass(frozen=True)
class EnumerationResult:
    atoms: dict
    expected_z: np.ndarray
    marginal_plus: np.ndarray
    tau: float | None
    expected_tau_hat: float | None
    var_tau_hat: float | None


def exact_enumeration(setup: CovariateSetup, outcomes=None, freeze_tol: float = FREEZE_TOL) -> EnumerationResult:
    """Walk the full decision tree with exact branch probabilities.

    Every pivot choice contributes probability 1/|active| (unless the
    previous pivot persists) and every step size delta+ / -delta- carries
    its two-point probability; the resulting atom probabilities of the sign
    law sum to one up to float roundoff.
    """
    n = setup.n
    if n > ENUMERATION_MAX_N:
        raise LogicError(f"exact enumeration is limited to n <= {ENUMERATION_MAX_N}")
    atoms: dict[tuple, float] = {}

    def recurse(z, active, prev_pivot, prob):
        if active.size == 0:
            key = tuple(1 if x > 0 else -1 for x in z)
            atoms[key] = atoms.get(key, 0.0) + prob
            return
        cache = init_inverse(setup.Y[active])
        if prev_pivot is not None and prev_pivot in active:
            branches = [(prev_pivot, 1.0)]
        else:
            branches = [(int(p), 1.0 / active.size) for p in active]
        for p, p_prob in branches:
            direction = step_direction(setup, active, p, cache)
            d_plus, d_minus = feasible_interval(z, direction)
            for delta, d_prob in ((d_plus, d_minus / (d_plus + d_minus)),
                                  (-d_minus, d_plus / (d_plus + d_minus))):
                z2 = z + delta * direction.u
                mask = np.abs(z2[active]) >= 1.0 - freeze_tol
                frozen = active[mask]
                z2[frozen] = np.where(z2[frozen] > 0.0, 1.0, -1.0)
                nxt_active = active[~mask]
                nxt_pivot = p if p in nxt_active else None
                recurse(z2, nxt_active, nxt_pivot, prob * p_prob * d_prob)

    recurse(np.zeros(n), np.arange(n, dtype=np.int64), None, 1.0)

    expected_z = np.zeros(n)
    marginal = np.zeros(n)
    for key, prob in atoms.items():
        zk = np.array(key, dtype=np.float64)
        expected_z += prob * zk
        marginal += prob * (zk > 0)
    tau = e_tau = var_tau = None
    if outcomes is not None:
        a, b = np.asarray(outcomes[0], float), np.asarray(outcomes[1], float)
        tau = float(np.mean(a - b))
        e_tau = 0.0
        e_tau_sq = 0.0
        for key, prob in atoms.items():
            th = ht_estimate(np.array(key, dtype=np.float64), a, b)
            e_tau += prob * th
            e_tau_sq += prob * th * th
        var_tau = e_tau_sq - e_tau * e_tau
    return EnumerationResult(
        atoms=dict(sorted(atoms.items())),
        expected_z=expected_z,
        marginal_plus=marginal,
        tau=tau,
        expected_tau_hat=e_tau,
        var_tau_hat=var_tau,
    )


# ---------------------------------------------------------------------------
# Replication engine


@dataclass
class SimConfig:
    """One simulation: data source, design mode, and replication budget.

    ``mode`` is one of gsw, skeletal, coupled, iid. Covariates come from an
    explicit matrix ``X`` or the named generator ``x_kind`` (gaussian,
    gaussian_unit with unit-norm rows, ones, none). Outcomes may be given as
    (a, b), as mu alone, or omitted when a contrast vector ``v`` is supplied.
    """

    n: int
    d: int
    phi: float
    replications: int
    seed: int
    mode: str = "gsw"
    x_kind: str = "gaussian"
    X: np.ndarray | None = None
    a: np.ndarray | None = None
    b: np.ndarray | None = None
    mu: np.ndarray | None = None
    v: np.ndarray | None = None
    target: str = "auto"  # tau_hat | zv | auto
    workers: int = 1
    freeze_tol: float = FREEZE_TOL
    epsilon_override: float | None = None

    def __post_init__(self):
        if self.replications < 1:
            raise ParameterError("replications must be at least 1")
        if self.mode not in ("gsw", "skeletal", "coupled", "iid"):
            raise ParameterError(f"unknown mode {self.mode!r}")


def generate_covariates(kind: str, n: int, d: int, seed: int) -> np.ndarray:
    """Named covariate generators on the reserved data stream."""
    if kind == "none" or d == 0:
        return np.zeros((n, 0))
    if kind == "ones":
        return np.ones((n, max(d, 1)))
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_X_STREAM_KEY,))
    rng = np.random.Generator(np.random.Philox(ss))
    X = rng.standard_normal((n, d))
    if kind == "gaussian":
        return X
    if kind == "gaussian_unit":
        return X / np.linalg.norm(X, axis=1, keepdims=True)
    raise ParameterError(f"unknown covariate generator {kind!r}")


def make_dense_contrast(X: np.ndarray, seed: int) -> np.ndarray:
    """Standard normal vector projected off ColSp(X): a dense residual target."""
    n = X.shape[0]
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_OUTCOME_STREAM_KEY,))
    rng = np.random.Generator(np.random.Philox(ss))
    g = rng.standard_normal(n)
    if X.shape[1] == 0:
        return g
    return residual_projection(g, X).v


@dataclass
class SimulationDiagnostics:
    """Summary of one replication batch."""

    samples: np.ndarray
    mean: float
    variance: float | None
    variance_ratio: float | None
    ks_distance: float | None
    mc_standard_error: float
    variance_se: float | None
    degenerate: bool
    target: str
    mode: str
    extras: dict = field(default_factory=dict)


def _resolve_inputs(config: SimConfig):
    X = config.X if config.X is not None else generate_covariates(config.x_kind, config.n, config.d, config.seed)
    setup = build_setup(X, config.phi)
    a = b = mu = None
    if config.a is not None and config.b is not None:
        a = np.asarray(config.a, float)
        b = np.asarray(config.b, float)
        mu = a + b
    elif config.mu is not None:
        mu = np.asarray(config.mu, float)
    v = np.asarray(config.v, float) if config.v is not None else None
    target = config.target
    if target == "auto":
        target = "tau_hat" if a is not None else "zv"
    if target == "tau_hat" and a is None:
        raise DataError("tau_hat target needs both outcome vectors a and b")
    if target == "zv" and v is None:
        if mu is None:
            raise DataError("zv target needs a contrast vector v or outcomes to derive one")
        v = residual_projection(mu, setup.X).v
    if config.mode in ("skeletal", "coupled") and v is None:
        if mu is None:
            raise DataError(f"mode {config.mode} needs a contrast vector")
        v = residual_projection(mu, setup.X).v
    return setup, a, b, mu, v, target


def _one_replication(config: SimConfig, setup, a, b, v, target, k: int) -> float:
    if config.mode == "iid":
        u = replication_stream(config.seed, k).random(setup.n)
        z = np.where(u <= 0.5, 1.0, -1.0)
    elif config.mode == "gsw":
        z = run_gsw(setup, config.seed, rep=k, freeze_tol=config.freeze_tol)
    elif config.mode == "skeletal":
        return run_skeletal(setup, config.seed, rep=k, v=v).M
    else:  # coupled
        traj = run_coupled(setup, v, config.seed, rep=k, eps_n=config.epsilon_override,
                           freeze_tol=config.freeze_tol)
        return traj.M_gs
    if target == "tau_hat":
        return ht_estimate(z, a, b)
    return float(z @ v)


def run_replications(config: SimConfig) -> SimulationDiagnostics:
    """Run the configured batch; replication k draws from stream (seed, k)."""
    setup, a, b, mu, v, target = _resolve_inputs(config)
    if config.mode in ("skeletal", "coupled"):
        target = "m" if config.mode == "skeletal" else "zv"
    m = config.replications
    samples = np.empty(m)

    def fill(k: int):
        samples[k] = _one_replication(config, setup, a, b, v, target, k)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            list(pool.map(fill, range(m)))
    else:
        for k in range(m):
            fill(k)

    mean = float(samples.mean())
    degenerate = m < 2
    variance = None if degenerate else float(samples.var(ddof=1))
    mc_se = 0.0 if degenerate else math.sqrt(variance / m)
    variance_se = None
    if not degenerate:
        centered = samples - mean
        m4 = float(np.mean(centered**4))
        var_of_var = (m4 - (m - 3) / (m - 1) * variance**2) / m
        variance_se = math.sqrt(max(var_of_var, 0.0))
    ratio = None
    ks = None
    if target in ("zv", "m") and v is not None:
        v_norm_sq = float(v @ v)
        if v_norm_sq > 0 and variance is not None:
            ratio = variance / v_norm_sq
            ks = ks_distance(samples / math.sqrt(v_norm_sq))
    return SimulationDiagnostics(
        samples=samples,
        mean=mean,
        variance=variance,
        variance_ratio=ratio,
        ks_distance=ks,
        mc_standard_error=mc_se,
        variance_se=variance_se,
        degenerate=degenerate,
        target=target,
        mode=config.mode,
        extras={"n": setup.n, "d": setup.d, "phi": setup.phi},
    )


def variance_ratio_experiment(config: SimConfig, v) -> SimulationDiagnostics:
    """Estimate Var<z, v> / ||v||^2 under the walk design.

    The limit of the ratio is 1; the worst-case bound implies only the
    ceiling 1/phi, which is reported alongside for contrast.
    """
    v = np.asarray(v, dtype=np.float64)
    if float(v @ v) == 0.0:
        raise DataError("contrast vector is zero; the ratio is undefined")
    X = config.X if config.X is not None else generate_covariates(config.x_kind, config.n, config.d, config.seed)
    setup = build_setup(X, config.phi)
    col_norms = np.linalg.norm(setup.X, axis=0) if setup.X.shape[1] else np.zeros(0)
    if col_norms.size:
        gap = float(np.max(np.abs(v @ setup.X) / (np.linalg.norm(v) * np.where(col_norms > 0, col_norms, 1.0))))
        if gap > 1e-6:
            raise DataError(f"contrast vector is not orthogonal to the covariates (gap {gap:.2e})")
    cfg = SimConfig(
        n=config.n, d=config.d, phi=config.phi, replications=config.replications,
        seed=config.seed, mode="gsw", x_kind=config.x_kind, X=setup.X, v=v,
        target="zv", workers=config.workers, freeze_tol=config.freeze_tol,
    )
    diag = run_replications(cfg)
    v_norm_sq = float(v @ v)
    diag.extras["ceiling_one_over_phi"] = 1.0 / config.phi
    if diag.variance_se is not None:
        diag.extras["ratio_ci_3se"] = [
            diag.variance_ratio - 3.0 * diag.variance_se / v_norm_sq,
            diag.variance_ratio + 3.0 * diag.variance_se / v_norm_sq,
        ]
    return diag
