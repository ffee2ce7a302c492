"""Deterministic stream derivation for replicated trajectories.

Every random quantity in the package is drawn from a counter-based Philox
generator keyed through ``numpy.random.SeedSequence``:

* replication ``k`` of a run with master seed ``s`` uses
  ``SeedSequence(entropy=s, spawn_key=(k,))``;
* the auxiliary sub-stream of the same replication (used by the coupled
  process for skeletal pivots after the processes diverge) uses
  ``SeedSequence(entropy=s, spawn_key=(k, 1))``.

Within a trajectory, step ``t`` (0-based) owns two consecutive slots of the
main stream: slot ``2t`` is the pivot draw and slot ``2t + 1`` is the step
uniform ``U_t``. A step that keeps its previous pivot simply leaves its pivot
slot unread. This slot layout makes draw consumption independent of the path
taken, so exhaustive enumeration, the step-level API, and the fused kernels
all see identical randomness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def replication_stream(seed: int, rep: int = 0) -> np.random.Generator:
    """Generator for replication ``rep`` of master seed ``seed``."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(rep,))
    return np.random.Generator(np.random.Philox(ss))


def auxiliary_stream(seed: int, rep: int = 0) -> np.random.Generator:
    """Parallel sub-stream, independent of :func:`replication_stream`."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(rep, 1))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class TrajectoryDraws:
    """Pre-drawn uniforms for one trajectory of at most ``n`` steps.

    ``pivot[t]`` and ``step[t]`` come interleaved from the main stream
    (pivot first, then U_t); ``sk_pivot[t]`` comes from the auxiliary
    sub-stream and is only read by the coupled process once it has left
    the shared-randomness regime.
    """

    pivot: np.ndarray
    step: np.ndarray
    sk_pivot: np.ndarray | None = None


def trajectory_draws(seed: int, rep: int, n: int, aux: bool = False) -> TrajectoryDraws:
    block = replication_stream(seed, rep).random(2 * n)
    sk = auxiliary_stream(seed, rep).random(n) if aux else None
    return TrajectoryDraws(pivot=block[0::2].copy(), step=block[1::2].copy(), sk_pivot=sk)


def pivot_from_draw(active_sorted: np.ndarray, draw: float) -> int:
    """Map a uniform draw to an element of the ascending active set.

    Fixed as ``active_sorted[floor(draw * len(active_sorted))]`` so that
    Monte Carlo runs and exact enumeration agree on branch probabilities.
    """
    m = len(active_sorted)
    j = int(draw * m)
    if j >= m:  # draw == 1.0 cannot occur from random(), guard anyway
        j = m - 1
    return int(active_sorted[j])
