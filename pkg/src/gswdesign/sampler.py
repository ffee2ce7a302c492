"""The Gram-Schmidt Walk design with randomized pivot ordering.

Starting from the fractional assignment z = 0, each round picks a pivot
(kept from the previous round while it is still active, freshly uniform
otherwise), moves z along the balanced direction u with u[pivot] = 1 until
a face of [-1, 1]^n is hit, and freezes every coordinate that lands on a
face. The walk ends with z in {-1, +1}^n after at most n rounds, each
coordinate equally likely to be +1 or -1.

``run_gsw`` executes whole trajectories through the fused backend kernel;
the step-level operations below expose the identical state machine for
tests, exact enumeration, and the coupled process.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from ._rng import TrajectoryDraws, pivot_from_draw, trajectory_draws
from .errors import LogicError
from .linalg import CovariateSetup, InverseCache, StepDirection, downdate_inverse, init_inverse, step_direction

FREEZE_TOL = 1e-9


@dataclass
class DesignState:
    """Mutable per-trajectory state of the walk."""

    setup: CovariateSetup
    z: np.ndarray
    active: np.ndarray  # ascending indices of coordinates still interior
    pivot: int | None
    t: int
    cache: InverseCache
    draws: TrajectoryDraws
    freeze_tol: float = FREEZE_TOL


def new_state(setup: CovariateSetup, seed: int, rep: int = 0, freeze_tol: float = FREEZE_TOL) -> DesignState:
    return DesignState(
        setup=setup,
        z=np.zeros(setup.n),
        active=np.arange(setup.n, dtype=np.int64),
        pivot=None,
        t=0,
        cache=init_inverse(setup.Y),
        draws=trajectory_draws(seed, rep, setup.n),
        freeze_tol=freeze_tol,
    )


def select_pivot(state: DesignState) -> int:
    """Keep the previous pivot while it is active, else draw uniformly.

    A fresh draw reads exactly the pivot slot of the current step.
    """
    if state.active.size == 0:
        raise LogicError("cannot select a pivot from an empty active set")
    if state.pivot is not None and state.pivot in state.active:
        return state.pivot
    return pivot_from_draw(state.active, state.draws.pivot[state.t])


def feasible_interval(z: np.ndarray, direction: StepDirection) -> tuple[float, float]:
    """Largest steps along +-u keeping z + delta * u inside [-1, 1]^n.

    Returns (delta_plus, delta_minus), both strictly positive; z + delta_plus * u
    and z - delta_minus * u each touch at least one face.
    """
    u = direction.u
    if abs(z[direction.p]) >= 1.0:
        raise LogicError("pivot coordinate is already frozen at a face")
    nz = np.flatnonzero(u)
    ui = u[nz]
    zi = z[nz]
    up = np.where(ui > 0.0, (1.0 - zi) / ui, (-1.0 - zi) / ui)
    dn = np.where(ui > 0.0, (zi + 1.0) / ui, (zi - 1.0) / ui)
    return float(up.min()), float(dn.min())


def sample_step(delta_plus: float, delta_minus: float, u_draw: float) -> float:
    """Mean-zero step size: +delta_plus iff u_draw <= delta_minus / (delta_plus + delta_minus)."""
    if delta_plus <= 0.0 or delta_minus <= 0.0:
        raise LogicError("feasible interval must have positive extent on both sides")
    if u_draw <= delta_minus / (delta_plus + delta_minus):
        return delta_plus
    return -delta_minus


@dataclass
class StepSample:
    """One step-size draw: the interval endpoints, the uniform, the outcome."""

    delta_plus: float
    delta_minus: float
    delta: float
    u_draw: float

    @classmethod
    def draw(cls, delta_plus: float, delta_minus: float, u_draw: float) -> "StepSample":
        return cls(delta_plus=delta_plus, delta_minus=delta_minus,
                   delta=sample_step(delta_plus, delta_minus, u_draw), u_draw=u_draw)


def freeze_and_downdate(state: DesignState) -> np.ndarray:
    """Snap coordinates within freeze_tol of a face and retire them.

    Returns the indices removed from the active set; the inverse cache is
    downdated once per removed row.
    """
    z_act = state.z[state.active]
    frozen_mask = np.abs(z_act) >= 1.0 - state.freeze_tol
    frozen = state.active[frozen_mask]
    if frozen.size:
        state.z[frozen] = np.where(state.z[frozen] > 0.0, 1.0, -1.0)
        for i in frozen:
            state.cache = downdate_inverse(state.cache, state.setup.Y[i])
        state.active = state.active[~frozen_mask]
    return frozen


def gsw_step(state: DesignState) -> DesignState:
    """Advance the walk by one round, freezing at least one coordinate."""
    p = select_pivot(state)
    direction = step_direction(state.setup, state.active, p, state.cache)
    d_plus, d_minus = feasible_interval(state.z, direction)
    sample = StepSample.draw(d_plus, d_minus, float(state.draws.step[state.t]))
    state.z = state.z + sample.delta * direction.u
    freeze_and_downdate(state)
    state.pivot = p if p in state.active else None
    state.t += 1
    return state


def run_gsw(
    setup: CovariateSetup,
    seed: int,
    rep: int = 0,
    freeze_tol: float = FREEZE_TOL,
    backend_name: str | None = None,
    return_info: bool = False,
):
    """Draw one assignment vector z in {-1, +1}^n, deterministic in (seed, rep)."""
    draws = trajectory_draws(seed, rep, setup.n)
    z, steps, pivots = backend.gsw_walk(setup.Y, draws.pivot, draws.step, freeze_tol, backend=backend_name)
    if return_info:
        return z, steps, pivots
    return z


def run_gsw_stepwise(setup: CovariateSetup, seed: int, rep: int = 0, freeze_tol: float = FREEZE_TOL) -> np.ndarray:
    """Reference trajectory built from the step-level operations.

    Consumes the same draw slots as the fused kernel; used to cross-check
    the backends against the documented state machine.
    """
    state = new_state(setup, seed, rep, freeze_tol)
    while state.active.size:
        gsw_step(state)
    return state.z
