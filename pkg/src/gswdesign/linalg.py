"""Dense kernels for the augmented design matrix B = [I_n; Y^T].

Everything here works with the scaled covariate matrix Y whose rows have
norm at most zeta = sqrt((1 - phi) / phi). With D = (I_d + Y_A^T Y_A)^{-1}
for the active row set A, the walk's step direction and step geometry have
closed forms:

    u          = (e_p - I[:, A] Y_A D y_p) / (1 - y_p^T D y_p)
    ||B u||^2  = 1 / (1 - y_p^T D y_p),  with 1 <= ||B u||^2 <= C1(zeta)
    <u, v>     = ||B u||^2 * v[A]^T (I_a - Y_A D Y_A^T) e_p[A]

where C1(zeta) = 1 + zeta^2 (1 + zeta^2). Removing a row y from the active
set maps D to D + (D y)(D y)^T / (1 - y^T D y) (rank-one downdate).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, LogicError, NumericError, ParameterError

# Rank-one downdates are refreshed from scratch when the denominator gets
# this small or after this many consecutive updates; repeated updates in
# floating point accumulate error even though each is exact algebraically.
DOWNDATE_DENOM_MIN = 1e-10
RECOMPUTE_INTERVAL = 64


def c1_bound(zeta: float) -> float:
    """Upper bound C1(zeta) = 1 + zeta^2 (1 + zeta^2) on ||B u||^2."""
    return 1.0 + zeta * zeta * (1.0 + zeta * zeta)


@dataclass(frozen=True)
class CovariateSetup:
    """Covariates prepared for the walk.

    ``Y`` is X scaled by zeta/xi so its largest row norm equals zeta
    exactly; it is the n x 0 empty matrix when there are no informative
    covariates (d = 0 or X = 0), in which case the design degenerates to
    independent fair signs.
    """

    X: np.ndarray
    phi: float
    xi: float
    Y: np.ndarray
    zeta: float
    n: int
    d: int


def build_setup(X, phi: float) -> CovariateSetup:
    """Validate covariates and derive the scaled matrix Y.

    Raises ParameterError when phi is outside (0, 1) and DataError on
    non-finite entries.
    """
    if not (0.0 < phi < 1.0):
        raise ParameterError(f"phi must lie strictly inside (0, 1), got {phi}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.ndim != 2:
        raise DataError(f"covariate matrix must be 2-D, got shape {X.shape}")
    n = X.shape[0]
    if n < 1:
        raise DataError("need at least one unit")
    if not np.all(np.isfinite(X)):
        raise DataError("covariate matrix contains non-finite entries")
    zeta = float(np.sqrt((1.0 - phi) / phi))
    row_norms = np.linalg.norm(X, axis=1) if X.shape[1] else np.zeros(n)
    xi = float(row_norms.max()) if n else 0.0
    if X.shape[1] == 0 or xi == 0.0:
        Y = np.zeros((n, 0))
    else:
        Y = (zeta / xi) * X
    return CovariateSetup(X=X, phi=float(phi), xi=xi, Y=Y, zeta=zeta, n=n, d=Y.shape[1])


@dataclass
class InverseCache:
    """Maintained inverse D = (I_d + Y_A^T Y_A)^{-1} for the active rows.

    ``rows`` holds the active rows themselves so that a full recomputation
    is always possible; the cache is confined to a single trajectory.
    """

    D: np.ndarray
    rows: np.ndarray
    dirty_counter: int = 0

    @property
    def active_count(self) -> int:
        return self.rows.shape[0]


def _fresh_inverse(rows: np.ndarray) -> np.ndarray:
    d = rows.shape[1]
    if d == 0:
        return np.zeros((0, 0))
    M = np.eye(d) + rows.T @ rows
    try:
        D = np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:  # I + G is PD, so only bad input gets here
        raise NumericError(f"failed to invert gram system: {exc}") from exc
    if not np.all(np.isfinite(D)):
        raise NumericError("inverse cache is non-finite")
    return 0.5 * (D + D.T)


def init_inverse(Y_A) -> InverseCache:
    """Build the cache for the active rows ``Y_A`` (a x d, a or d may be 0)."""
    rows = np.asarray(Y_A, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows.reshape(-1, 1)
    if rows.size and not np.all(np.isfinite(rows)):
        raise NumericError("active rows contain non-finite entries")
    return InverseCache(D=_fresh_inverse(rows), rows=rows.copy())


def downdate_inverse(cache: InverseCache, y_p) -> InverseCache:
    """Remove row ``y_p`` from the cached active set.

    Applies the rank-one update D + (D y)(D y)^T / (1 - y^T D y); falls back
    to full recomputation when the denominator is below the stability
    threshold or the update budget is exhausted.
    """
    y_p = np.asarray(y_p, dtype=np.float64).reshape(-1)
    d = cache.rows.shape[1]
    if y_p.shape[0] != d:
        raise LogicError(f"row has length {y_p.shape[0]}, cache expects {d}")
    if d == 0:
        if cache.active_count == 0:
            raise LogicError("cannot downdate an empty cache")
        return InverseCache(D=cache.D, rows=cache.rows[1:], dirty_counter=0)
    matches = np.flatnonzero(np.all(cache.rows == y_p, axis=1))
    if matches.size == 0:
        raise LogicError("row to remove is not in the cache's active set")
    keep = np.ones(cache.active_count, dtype=bool)
    keep[matches[0]] = False
    new_rows = cache.rows[keep]

    w = cache.D @ y_p
    denom = 1.0 - float(y_p @ w)
    dirty = cache.dirty_counter + 1
    if denom < DOWNDATE_DENOM_MIN or dirty >= RECOMPUTE_INTERVAL:
        return InverseCache(D=_fresh_inverse(new_rows), rows=new_rows, dirty_counter=0)
    D_new = cache.D + np.outer(w, w) / denom
    return InverseCache(D=0.5 * (D_new + D_new.T), rows=new_rows, dirty_counter=dirty)


@dataclass
class StepDirection:
    """Minimizer of ||B u||^2 subject to u[p] = 1 and support in the active set."""

    u: np.ndarray
    p: int
    bu_norm_sq: float


def _pivot_weights(setup: CovariateSetup, p: int, cache: InverseCache):
    """Shared core of the direction formulas: (w, denom) = (D y_p, 1 - y_p^T D y_p)."""
    y_p = setup.Y[p]
    w = cache.D @ y_p
    denom = 1.0 - float(y_p @ w)
    if denom < DOWNDATE_DENOM_MIN:
        raise NumericError(f"direction denominator {denom:.3e} below stability threshold")
    return w, denom


def step_direction(setup: CovariateSetup, active, p: int, cache: InverseCache) -> StepDirection:
    """Closed-form step direction for pivot ``p`` over the active set."""
    active = np.asarray(active, dtype=np.int64)
    if p not in active:
        raise LogicError(f"pivot {p} is not in the active set")
    u = np.zeros(setup.n)
    if setup.d == 0:
        u[p] = 1.0
        return StepDirection(u=u, p=int(p), bu_norm_sq=1.0)
    w, denom = _pivot_weights(setup, p, cache)
    u[active] = -(setup.Y[active] @ w) / denom
    u[p] = 1.0
    return StepDirection(u=u, p=int(p), bu_norm_sq=max(1.0 / denom, 1.0))


def direction_inner_product(setup: CovariateSetup, active, p: int, cache: InverseCache, v) -> float:
    """<u, v> evaluated without forming u explicitly."""
    active = np.asarray(active, dtype=np.int64)
    if p not in active:
        raise LogicError(f"pivot {p} is not in the active set")
    v = np.asarray(v, dtype=np.float64)
    if setup.d == 0:
        return float(v[p])
    w, denom = _pivot_weights(setup, p, cache)
    s = float(v[active] @ (setup.Y[active] @ w))
    return (float(v[p]) - s) / denom


def bu_vector(setup: CovariateSetup, direction: StepDirection) -> np.ndarray:
    """Embed B u in R^{n+d}: the walk moves along these balanced columns."""
    u = direction.u
    if setup.d == 0:
        return u.copy()
    return np.concatenate([u, setup.Y.T @ u])
