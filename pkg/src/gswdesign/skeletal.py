"""Coupled construction: the walk and its skeletal companion on shared draws.

Both processes read the same per-step uniform U_t. While every good event so
far has held and t is below a conditioning threshold (Case 1), the two share
pivot, direction, and step; the skeletal active set drops exactly the pivot
while the walk freezes it. Once an event fails or the threshold passes
(Case 2), the walk continues on its own randomness, and the skeletal process
takes unit steps delta_t = eta_t (+1 iff U_t <= 1/2) along directions drawn
from a parallel pivot stream, so the walk's marginal law is untouched by the
branch.

Good events, evaluated from the state before each step with A the skeletal
active set of size n - t + 1:

    G1: ||z_{t-1}[A]||_inf < eps_n
    G2: ||Y_A^T Y_A - ((n-t+1)/n) Y^T Y||_op <= ((n-t+1)/(2n)) lambda_min(Y^T Y)

Three martingales are tracked against a contrast vector v orthogonal to the
covariates: M_gs = <z_gs, v>, M_tilde = <z_sk, v>, and the skeletal
M = sum_t eta_t <u_t, v> / ||B u_t||. The normalized directions of a full
skeletal run are an orthonormal basis of ColSp(B), which forces the exact
per-trajectory identity sum_t <u_t, v>^2 / ||B u_t||^2 = ||v||^2.

While in Case 1 the implementation asserts what is guaranteed there: only
the pivot freezes, the two active sets coincide, the interval endpoints are
within eps_n of 1, and the cached inverse obeys its conditioning bounds.
A failure raises ConsistencyError since it can only come from a bug.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import pivot_from_draw, trajectory_draws
from .errors import ConsistencyError, DataError, LogicError
from .linalg import (
    CovariateSetup,
    InverseCache,
    bu_vector,
    c1_bound,
    downdate_inverse,
    init_inverse,
    step_direction,
)
from .sampler import FREEZE_TOL, feasible_interval, sample_step

# Absolute slack on assertions of exact-arithmetic facts.
_ASSERT_TOL = 1e-9


def epsilon_schedule(n: int) -> float:
    """Coupling tolerance eps_n = min(1 / sqrt(log(e n)), 1/3)."""
    if n < 1:
        raise LogicError("n must be at least 1")
    return min(1.0 / math.sqrt(1.0 + math.log(n)), 1.0 / 3.0)


def check_g1(z_prev: np.ndarray, active: np.ndarray, eps_n: float) -> bool:
    """Strict sup-norm condition on the fractional assignment over the active set."""
    if len(active) == 0:
        raise LogicError("good events are undefined for an empty active set")
    return float(np.max(np.abs(z_prev[active]))) < eps_n


def _g2_condition(G_act: np.ndarray, G_full: np.ndarray, lam_min: float, n: int, t: int) -> bool:
    frac = (n - t + 1) / n
    dev = float(np.max(np.abs(np.linalg.eigvalsh(G_act - frac * G_full))))
    return bool(dev <= 0.5 * frac * lam_min)


def check_g2(setup: CovariateSetup, active: np.ndarray, t: int) -> bool:
    """Spectral concentration of the active gram matrix at round t (1-based)."""
    if setup.d == 0:
        return True
    active = np.asarray(active, dtype=np.int64)
    G_full = setup.Y.T @ setup.Y
    G_act = setup.Y[active].T @ setup.Y[active]
    lam_min = float(np.linalg.eigvalsh(G_full)[0])
    return _g2_condition(G_act, G_full, lam_min, setup.n, t)


def eta_draw(u_t: float) -> int:
    """Fair sign from a uniform: +1 iff u_t <= 1/2."""
    return 1 if u_t <= 0.5 else -1


def conditioning_kappa(setup: CovariateSetup) -> float:
    """n / lambda_min(Y^T Y); 0 when there are no covariates, inf when singular."""
    if setup.d == 0:
        return 0.0
    lams = np.linalg.eigvalsh(setup.Y.T @ setup.Y)
    lam_min, lam_max = float(lams[0]), float(lams[-1])
    if lam_min <= 1e-12 * max(lam_max, 1e-300):
        return math.inf
    return setup.n / lam_min


def case1_threshold(setup: CovariateSetup) -> int:
    """Last round eligible for the shared regime: floor(n - 6 C1 zeta^2 kappa).

    Zero or negative means the coupling is vacuous (every round is Case 2);
    that happens when Y^T Y is near singular.
    """
    kappa = conditioning_kappa(setup)
    if not math.isfinite(kappa):
        return 0
    raw = setup.n - 6.0 * c1_bound(setup.zeta) * setup.zeta**2 * kappa
    return max(int(math.floor(raw)), 0)


@dataclass
class GoodEventFlags:
    g1: bool = True
    g2: bool = True
    first_violation_t: int | None = None


@dataclass
class _ProcState:
    """One side of the coupling (arrays aliased while the sides agree)."""

    z: np.ndarray
    active: np.ndarray
    cache: InverseCache


@dataclass
class CoupledState:
    setup: CovariateSetup
    gs: _ProcState
    sk: _ProcState
    shared: bool
    in_case1: bool
    eps_n: float
    threshold_t: int
    t: int
    prev_pivot_gs: int | None
    draws: object
    flags: GoodEventFlags
    M_gs: float = 0.0
    M_tilde: float = 0.0
    M: float = 0.0
    qv_sum: float = 0.0
    freeze_tol: float = FREEZE_TOL
    gram_full: np.ndarray | None = None
    lam_min_full: float = 0.0
    kappa: float = 0.0
    eta_history: list = field(default_factory=list)
    delta_history: list = field(default_factory=list)
    records: list = field(default_factory=list)
    directions: list | None = None


def new_coupled_state(
    setup: CovariateSetup,
    seed: int,
    rep: int = 0,
    eps_n: float | None = None,
    freeze_tol: float = FREEZE_TOL,
    collect_directions: bool = False,
) -> CoupledState:
    shared = _ProcState(
        z=np.zeros(setup.n),
        active=np.arange(setup.n, dtype=np.int64),
        cache=init_inverse(setup.Y),
    )
    gram_full = setup.Y.T @ setup.Y if setup.d else None
    lam_min = float(np.linalg.eigvalsh(gram_full)[0]) if setup.d else 0.0
    return CoupledState(
        setup=setup,
        gs=shared,
        sk=shared,
        shared=True,
        in_case1=True,
        eps_n=epsilon_schedule(setup.n) if eps_n is None else float(eps_n),
        threshold_t=case1_threshold(setup),
        t=0,
        prev_pivot_gs=None,
        draws=trajectory_draws(seed, rep, setup.n, aux=True),
        flags=GoodEventFlags(),
        freeze_tol=freeze_tol,
        gram_full=gram_full,
        lam_min_full=lam_min,
        kappa=conditioning_kappa(setup),
        directions=[] if collect_directions else None,
    )


def _fork(state: CoupledState) -> None:
    """First Case-2 round: give the skeletal side its own copies."""
    state.sk = _ProcState(
        z=state.gs.z.copy(),
        active=state.gs.active.copy(),
        cache=InverseCache(
            D=state.gs.cache.D.copy(),
            rows=state.gs.cache.rows.copy(),
            dirty_counter=state.gs.cache.dirty_counter,
        ),
    )
    state.shared = False


def _freeze_walk_side(state: CoupledState, proc: _ProcState) -> np.ndarray:
    z_act = proc.z[proc.active]
    mask = np.abs(z_act) >= 1.0 - state.freeze_tol
    frozen = proc.active[mask]
    if frozen.size:
        proc.z[frozen] = np.where(proc.z[frozen] > 0.0, 1.0, -1.0)
        for i in frozen:
            proc.cache = downdate_inverse(proc.cache, state.setup.Y[i])
        proc.active = proc.active[~mask]
    return frozen


def _check_cache_bounds(state: CoupledState, round_t: int) -> None:
    """On G2 the cached inverse is well conditioned; verify the two bounds."""
    setup = state.setup
    if setup.d == 0 or not math.isfinite(state.kappa):
        return
    a = setup.n - round_t + 1
    d_op = float(np.linalg.eigvalsh(state.sk.cache.D)[-1])
    if d_op > 2.0 * state.kappa / a + _ASSERT_TOL:
        raise ConsistencyError(f"cache operator norm {d_op:.6e} exceeds 2 kappa / (n - t + 1) at round {round_t}")
    frob_sq = float(np.sum(state.sk.cache.rows**2))
    limit = 1.5 * (a / setup.n) * float(np.sum(setup.Y**2))
    if frob_sq > limit * (1.0 + _ASSERT_TOL) + _ASSERT_TOL:
        raise ConsistencyError(f"active Frobenius mass {frob_sq:.6e} exceeds its bound at round {round_t}")


def coupled_step(state: CoupledState, setup: CovariateSetup, v: np.ndarray) -> CoupledState:
    """Advance both processes by one round, updating the three martingales."""
    n = setup.n
    if state.t >= n:
        raise LogicError("coupled process already ran its n rounds")
    round_t = state.t + 1  # 1-based round index
    sk = state.sk
    if sk.active.size != n - round_t + 1:
        raise ConsistencyError(
            f"skeletal active set has size {sk.active.size}, expected {n - round_t + 1}"
        )

    g1 = check_g1(sk.z, sk.active, state.eps_n)
    if setup.d == 0:
        g2 = True
    else:
        G_act = sk.cache.rows.T @ sk.cache.rows
        g2 = _g2_condition(G_act, state.gram_full, state.lam_min_full, n, round_t)
    if state.in_case1 and not (g1 and g2):
        state.in_case1 = False
        state.flags.first_violation_t = round_t
    state.flags.g1, state.flags.g2 = g1, g2
    case1 = state.in_case1 and round_t <= state.threshold_t
    if g2:
        _check_cache_bounds(state, round_t)

    u_t = float(state.draws.step[state.t])
    eta = eta_draw(u_t)

    if case1:
        if not state.shared:
            raise ConsistencyError("processes diverged while every good event held")
        p = pivot_from_draw(sk.active, state.draws.pivot[state.t])
        direction = step_direction(setup, sk.active, p, sk.cache)
        d_plus, d_minus = feasible_interval(sk.z, direction)
        if max(abs(d_plus - 1.0), abs(d_minus - 1.0)) > state.eps_n + _ASSERT_TOL:
            raise ConsistencyError(
                f"interval endpoints ({d_plus:.12f}, {d_minus:.12f}) stray from 1 "
                f"beyond eps_n={state.eps_n:.6f} at round {round_t}"
            )
        delta = sample_step(d_plus, d_minus, u_t)
        iuv = float(direction.u @ v)
        bu2 = direction.bu_norm_sq
        sk.z += delta * direction.u  # shared array: updates both sides
        frozen = _freeze_walk_side(state, sk)
        if frozen.size != 1 or int(frozen[0]) != p:
            raise ConsistencyError(
                f"round {round_t} in the shared regime froze {frozen.tolist()}, expected only pivot {p}"
            )
        state.prev_pivot_gs = None  # the pivot always freezes here
        state.M_gs += delta * iuv
        state.M_tilde += delta * iuv
        state.M += eta * iuv / math.sqrt(bu2)
        state.qv_sum += iuv * iuv / bu2
        if state.directions is not None:
            state.directions.append(bu_vector(setup, direction) / math.sqrt(bu2))
        rec = (round_t, 1, p, p, g1, g2, delta, eta, state.M_gs, state.M_tilde, state.M)
        state.delta_history.append(delta)
    else:
        if state.shared:
            _fork(state)
        gs = state.gs
        delta_gs = 0.0
        p_gs = -1
        if gs.active.size:
            if state.prev_pivot_gs is not None and state.prev_pivot_gs in gs.active:
                p_gs = state.prev_pivot_gs
            else:
                p_gs = pivot_from_draw(gs.active, state.draws.pivot[state.t])
            dir_gs = step_direction(setup, gs.active, p_gs, gs.cache)
            d_plus, d_minus = feasible_interval(gs.z, dir_gs)
            delta_gs = sample_step(d_plus, d_minus, u_t)
            state.M_gs += delta_gs * float(dir_gs.u @ v)
            gs.z += delta_gs * dir_gs.u
            _freeze_walk_side(state, gs)
            state.prev_pivot_gs = p_gs if p_gs in gs.active else None

        sk = state.sk
        p_sk = pivot_from_draw(sk.active, state.draws.sk_pivot[state.t])
        dir_sk = step_direction(setup, sk.active, p_sk, sk.cache)
        iuv = float(dir_sk.u @ v)
        bu2 = dir_sk.bu_norm_sq
        sk.z += float(eta) * dir_sk.u
        sk.cache = downdate_inverse(sk.cache, setup.Y[p_sk])
        sk.active = sk.active[sk.active != p_sk]
        state.M_tilde += eta * iuv
        state.M += eta * iuv / math.sqrt(bu2)
        state.qv_sum += iuv * iuv / bu2
        if state.directions is not None:
            state.directions.append(bu_vector(setup, dir_sk) / math.sqrt(bu2))
        rec = (round_t, 2, p_gs, p_sk, g1, g2, delta_gs, eta, state.M_gs, state.M_tilde, state.M)
        state.delta_history.append(delta_gs)

    state.eta_history.append(eta)
    state.records.append(rec)
    state.t += 1
    return state


TRAJECTORY_COLUMNS = ("t", "case", "pivot_gs", "pivot_sk", "g1", "g2", "delta", "eta", "M_gs", "M_tilde", "M")


@dataclass
class CoupledTrajectory:
    """Full record of one coupled run."""

    n: int
    eps_n: float
    threshold_t: int
    kappa: float
    vacuous: bool
    case1_steps: int
    z_gs: np.ndarray
    z_sk: np.ndarray
    M_gs: float
    M_tilde: float
    M: float
    qv_sum: float
    records: list
    flags: GoodEventFlags
    orthogonality_gap: float
    directions: np.ndarray | None = None


def run_coupled(
    setup: CovariateSetup,
    v,
    seed: int,
    rep: int = 0,
    eps_n: float | None = None,
    freeze_tol: float = FREEZE_TOL,
    collect_directions: bool = False,
) -> CoupledTrajectory:
    """Run the coupled processes for all n rounds on shared randomness."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (setup.n,):
        raise DataError(f"contrast vector must have length {setup.n}")
    if not np.all(np.isfinite(v)):
        raise DataError("contrast vector contains non-finite entries")
    gap = 0.0
    if setup.X.shape[1]:
        col_norms = np.linalg.norm(setup.X, axis=0)
        resid = np.abs(v @ setup.X)
        scale = np.linalg.norm(v) * np.where(col_norms > 0, col_norms, 1.0)
        gap = float(np.max(np.where(scale > 0, resid / np.where(scale > 0, scale, 1.0), 0.0)))
    state = new_coupled_state(setup, seed, rep, eps_n=eps_n, freeze_tol=freeze_tol,
                              collect_directions=collect_directions)
    for _ in range(setup.n):
        coupled_step(state, setup, v)
    case1_steps = sum(1 for r in state.records if r[1] == 1)
    return CoupledTrajectory(
        n=setup.n,
        eps_n=state.eps_n,
        threshold_t=state.threshold_t,
        kappa=state.kappa,
        vacuous=state.threshold_t <= 0,
        case1_steps=case1_steps,
        z_gs=state.gs.z,
        z_sk=state.sk.z,
        M_gs=state.M_gs,
        M_tilde=state.M_tilde,
        M=state.M,
        qv_sum=state.qv_sum,
        records=state.records,
        flags=state.flags,
        orthogonality_gap=gap,
        directions=np.column_stack(state.directions) if state.directions else None,
    )


@dataclass
class SkeletalRun:
    """Standalone skeletal sample: pivots form a uniform permutation."""

    M: float
    qv_sum: float
    pivots: np.ndarray
    directions: np.ndarray | None = None


def run_skeletal(
    setup: CovariateSetup,
    seed: int,
    rep: int = 0,
    v=None,
    collect_directions: bool = False,
) -> SkeletalRun:
    """Sample the skeletal martingale alone.

    Uses the main-stream pivot slots for the permutation and the step slots
    for the signs, so it agrees with the coupled run wherever that run never
    leaves the shared regime. The law (uniform permutation, independent fair
    signs) is the same either way.
    """
    n = setup.n
    v = np.zeros(n) if v is None else np.asarray(v, dtype=np.float64)
    draws = trajectory_draws(seed, rep, n)
    active = np.arange(n, dtype=np.int64)
    cache = init_inverse(setup.Y)
    pivots = np.empty(n, dtype=np.int64)
    directions = [] if collect_directions else None
    M = 0.0
    qv = 0.0
    for t in range(n):
        p = pivot_from_draw(active, draws.pivot[t])
        pivots[t] = p
        direction = step_direction(setup, active, p, cache)
        iuv = float(direction.u @ v)
        bu2 = direction.bu_norm_sq
        M += eta_draw(float(draws.step[t])) * iuv / math.sqrt(bu2)
        qv += iuv * iuv / bu2
        if directions is not None:
            directions.append(bu_vector(setup, direction) / math.sqrt(bu2))
        cache = downdate_inverse(cache, setup.Y[p])
        active = active[active != p]
    return SkeletalRun(
        M=M,
        qv_sum=qv,
        pivots=pivots,
        directions=np.column_stack(directions) if directions else None,
    )
