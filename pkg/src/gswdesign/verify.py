"""Desk-scale verification suites behind the `verify` CLI command.

Each suite returns (check, ok, detail) rows; the CLI prints them and exits
nonzero if anything failed. The pytest acceptance module runs the same
checks at full scale.
"""

from __future__ import annotations

import math

import numpy as np

from .linalg import build_setup, c1_bound, downdate_inverse, init_inverse, step_direction
from .montecarlo import (
    exact_enumeration,
    make_srswor_case,
    matrix_concentration_check,
    srswor_bruteforce,
    srswor_moments,
)
from .sampler import feasible_interval
from .skeletal import run_skeletal


def _random_setup(rng, n_max=30, d_max=4):
    n = int(rng.integers(2, n_max + 1))
    d = int(rng.integers(0, min(d_max, n) + 1))
    phi = float(rng.uniform(0.15, 0.85))
    X = rng.standard_normal((n, d)) if d else np.zeros((n, 0))
    return build_setup(X, phi)


def _direct_direction(setup, active, p):
    """Constrained least squares oracle for the closed-form direction."""
    B = np.vstack([np.eye(setup.n), setup.Y.T])
    others = np.array([i for i in active if i != p], dtype=np.int64)
    u = np.zeros(setup.n)
    u[p] = 1.0
    if others.size:
        w, *_ = np.linalg.lstsq(B[:, others], -B[:, p], rcond=None)
        u[others] = w
    return u, float(u @ (B.T @ (B @ u)))


def suite_identities(seed: int):
    rng = np.random.default_rng(seed)
    worst_dir = worst_norm = worst_consist = worst_orth = 0.0
    bounds_ok = True
    trials = 80
    for _ in range(trials):
        setup = _random_setup(rng)
        m = int(rng.integers(1, setup.n + 1))
        active = np.sort(rng.choice(setup.n, size=m, replace=False)).astype(np.int64)
        p = int(active[rng.integers(0, m)])
        cache = init_inverse(setup.Y[active])
        direction = step_direction(setup, active, p, cache)
        u_direct, bu_direct = _direct_direction(setup, active, p)
        scale = max(np.max(np.abs(u_direct)), 1.0)
        worst_dir = max(worst_dir, float(np.max(np.abs(direction.u - u_direct))) / scale)
        worst_norm = max(worst_norm, abs(direction.bu_norm_sq - bu_direct) / bu_direct)
        if not (1.0 - 1e-10 <= direction.bu_norm_sq <= c1_bound(setup.zeta) + 1e-10):
            bounds_ok = False
        v = rng.standard_normal(setup.n)
        iuv = float(direction.u @ v)
        pos = np.searchsorted(active, p)
        q_expr = float(v[active] @ (np.eye(m) - setup.Y[active] @ cache.D @ setup.Y[active].T)[:, pos]) ** 2
        bu2 = direction.bu_norm_sq
        worst_consist = max(worst_consist, abs(iuv**2 / bu2 - (q_expr + (bu2 - 1.0) * q_expr)) / max(iuv**2, 1e-12))
        B = np.vstack([np.eye(setup.n), setup.Y.T])
        Bu = B @ direction.u
        for j in active:
            if j == p:
                continue
            dot = abs(float(Bu @ B[:, j]))
            worst_orth = max(worst_orth, dot / (np.linalg.norm(Bu) * np.linalg.norm(B[:, j])))
    return [
        ("direction_vs_least_squares", worst_dir <= 1e-8, f"max rel err {worst_dir:.3e} over {trials} instances"),
        ("norm_formula", worst_norm <= 1e-10, f"max rel err {worst_norm:.3e}"),
        ("norm_within_bounds", bounds_ok, f"1 <= ||Bu||^2 <= C1(zeta) on all {trials} instances"),
        ("inner_product_consistency", worst_consist <= 1e-10, f"max rel err {worst_consist:.3e}"),
        ("direction_orthogonality", worst_orth <= 1e-8, f"max normalized dot {worst_orth:.3e}"),
    ]


def suite_downdate(seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(40):
        setup = _random_setup(rng, n_max=30, d_max=4)
        if setup.d == 0:
            continue
        cache = init_inverse(setup.Y)
        order = rng.permutation(setup.n)
        removed = 0
        for i in order[: max(setup.n - 1, 1)]:
            cache = downdate_inverse(cache, setup.Y[i])
            removed += 1
            if removed % 7 == 0:
                fresh = init_inverse(cache.rows)
                err = float(np.linalg.norm(cache.D - fresh.D)) / math.sqrt(setup.d)
                worst = max(worst, err)
    return [("downdate_vs_recompute", worst <= 1e-8, f"max Frobenius err {worst:.3e} (scaled by sqrt(d))")]


def suite_quadvar(seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(10):
        X = rng.standard_normal((60, 3))
        setup = build_setup(X, float(rng.uniform(0.2, 0.8)))
        g = rng.standard_normal(60)
        v = g - X @ np.linalg.lstsq(X, g, rcond=None)[0]
        run = run_skeletal(setup, seed=seed + k, v=v)
        worst = max(worst, abs(run.qv_sum - float(v @ v)) / float(v @ v))
    return [("quadratic_variation_identity", worst <= 1e-8, f"max rel gap {worst:.3e} over 10 runs")]


def suite_srswor(seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    table = []
    for n in range(2, 9):
        for a in range(1, n + 1):
            for _ in range(10):
                x = rng.standard_normal(n)
                case = make_srswor_case(x, a)
                f2, f4 = srswor_moments(case)
                b2, b4 = srswor_bruteforce(case)
                scale2 = max(abs(b2), 1e-12)
                err = abs(f2 - b2) / scale2
                if f4 is not None:
                    err = max(err, abs(f4 - b4) / max(abs(b4), 1e-12))
                worst = max(worst, err)
        table.append(f"n={n} max rel delta {worst:.2e}")
    case = make_srswor_case(np.array([1.0, 1.0, -1.0, -1.0]), 2)
    _, m4 = srswor_moments(case)
    rows = [("formula_vs_bruteforce", worst <= 1e-10, "; ".join(table)),
            ("worked_case_fourth_moment", abs(m4 - 16.0 / 3.0) <= 1e-12, f"m4 = {m4!r}")]
    return rows


def suite_enumeration(seed: int):
    rows = []
    cases = [(1, 0), (2, 0), (2, 1), (3, 1)]
    rng = np.random.default_rng(seed)
    for n, d in cases:
        X = np.ones((n, d)) if d else np.zeros((n, 0))
        setup = build_setup(X, 0.5)
        a = rng.standard_normal(n)
        b = rng.standard_normal(n)
        res = exact_enumeration(setup, outcomes=(a, b))
        mass_gap = abs(sum(res.atoms.values()) - 1.0)
        mean_gap = float(np.max(np.abs(res.expected_z)))
        marg_gap = float(np.max(np.abs(res.marginal_plus - 0.5)))
        tau_gap = abs(res.expected_tau_hat - res.tau)
        ok = mass_gap <= 1e-12 and mean_gap <= 1e-12 and marg_gap <= 1e-12 and tau_gap <= 1e-10
        rows.append((f"enumeration_n{n}_d{d}", ok,
                     f"mass gap {mass_gap:.1e}, E[z] gap {mean_gap:.1e}, "
                     f"marginal gap {marg_gap:.1e}, unbiasedness gap {tau_gap:.1e}"))
    return rows


def suite_concentration(seed: int):
    mats = np.array([[[1.0]]] * 5 + [[[-1.0]]] * 5)
    rows = matrix_concentration_check(mats, a=5, x_grid=[0.0, 1.0, 2.0, 3.0], reps=20000, seed=seed)
    ok = all(r.ok for r in rows)
    detail = "; ".join(f"x={r.x:g}: emp {r.empirical_prob:.4f} vs bound {r.bound:.4f}" for r in rows)
    return [("scalar_tail_bound", ok, detail)]


SUITES = {
    "identities": suite_identities,
    "downdate": suite_downdate,
    "quadvar": suite_quadvar,
    "srswor": suite_srswor,
    "enumeration": suite_enumeration,
    "concentration": suite_concentration,
}
