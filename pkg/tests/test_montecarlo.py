import math

import numpy as np
import pytest

from gswdesign import (
    SimConfig,
    build_setup,
    exact_enumeration,
    ks_distance,
    make_srswor_case,
    matrix_concentration_check,
    run_gsw,
    run_replications,
    srswor_bruteforce,
    srswor_moments,
    variance_ratio_experiment,
)
from gswdesign.errors import DataError, LogicError, ParameterError
from gswdesign.montecarlo import generate_covariates, make_dense_contrast, normal_cdf


def normal_quantile(p: float) -> float:
    lo, hi = -10.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if normal_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestSrswor:
    def test_pair(self):
        case = make_srswor_case([1.0, -1.0], 1)
        m2, m4 = srswor_moments(case)
        assert m2 == pytest.approx(1.0)
        assert m4 is None  # fourth moment needs n >= 4

    def test_worked_fourth_moment(self):
        case = make_srswor_case([1.0, 1.0, -1.0, -1.0], 2)
        m2, m4 = srswor_moments(case)
        assert m4 == pytest.approx(16.0 / 3.0, rel=1e-12)
        b2, b4 = srswor_bruteforce(case)
        assert (m2, m4) == (pytest.approx(b2), pytest.approx(b4))

    def test_full_population_sample(self):
        case = make_srswor_case([2.0, -1.0, 0.5, -1.5], 4)
        m2, m4 = srswor_moments(case)
        assert m2 == pytest.approx(0.0, abs=1e-14)
        assert m4 == pytest.approx(0.0, abs=1e-14)

    def test_all_zeros(self):
        case = make_srswor_case(np.zeros(5), 2)
        assert srswor_bruteforce(case) == (0.0, 0.0)

    def test_singleton_draw(self):
        x = np.array([3.0, -1.0, -2.0])
        case = make_srswor_case(x, 1)
        m2, _ = srswor_moments(case)
        assert m2 == pytest.approx(float(np.sum(x**2)) / 3)

    def test_centering_reported(self):
        case = make_srswor_case([1.0, 2.0, 3.0], 2)
        assert case.centered and case.original_mean == pytest.approx(2.0)
        assert case.x.sum() == pytest.approx(0.0, abs=1e-14)

    def test_formula_equals_bruteforce_everywhere(self):
        rng = np.random.default_rng(0)
        for n in range(2, 9):
            for a in range(1, n + 1):
                for _ in range(8):
                    case = make_srswor_case(rng.standard_normal(n), a)
                    f2, f4 = srswor_moments(case)
                    b2, b4 = srswor_bruteforce(case)
                    assert abs(f2 - b2) <= 1e-10 * max(abs(b2), 1e-12)
                    if f4 is not None:
                        assert abs(f4 - b4) <= 1e-10 * max(abs(b4), 1e-12)

    def test_size_limits(self):
        with pytest.raises(LogicError):
            srswor_bruteforce(make_srswor_case(np.arange(13.0), 2))
        with pytest.raises(ParameterError):
            make_srswor_case([1.0, -1.0], 3)


class TestExactEnumeration:
    def test_single_unit(self):
        setup = build_setup(np.zeros((1, 0)), 0.5)
        res = exact_enumeration(setup)
        assert res.atoms == {(-1,): pytest.approx(0.5), (1,): pytest.approx(0.5)}

    def test_no_covariates_law_is_uniform(self):
        for n in (2, 3):
            setup = build_setup(np.zeros((n, 0)), 0.5)
            res = exact_enumeration(setup)
            assert len(res.atoms) == 2**n
            for prob in res.atoms.values():
                assert prob == pytest.approx(0.5**n, abs=1e-14)

    def test_two_units_one_covariate_exact_law(self):
        # balanced pairs carry 3/8 each, aligned pairs 1/8 each
        setup = build_setup([[1.0], [1.0]], 0.5)
        res = exact_enumeration(setup)
        assert res.atoms[(1, -1)] == pytest.approx(3.0 / 8.0, abs=1e-14)
        assert res.atoms[(-1, 1)] == pytest.approx(3.0 / 8.0, abs=1e-14)
        assert res.atoms[(1, 1)] == pytest.approx(1.0 / 8.0, abs=1e-14)
        assert res.atoms[(-1, -1)] == pytest.approx(1.0 / 8.0, abs=1e-14)

    def test_mass_mean_and_marginals(self):
        rng = np.random.default_rng(1)
        for n, d in [(1, 0), (2, 0), (2, 1), (3, 1), (4, 2)]:
            X = rng.standard_normal((n, d)) if d else np.zeros((n, 0))
            setup = build_setup(X, float(rng.uniform(0.2, 0.8)))
            res = exact_enumeration(setup)
            assert abs(sum(res.atoms.values()) - 1.0) <= 1e-12
            assert np.max(np.abs(res.expected_z)) <= 1e-12
            np.testing.assert_allclose(res.marginal_plus, 0.5, atol=1e-12)

    def test_unbiasedness_and_variance(self):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal(2), rng.standard_normal(2)
        setup = build_setup([[1.0], [1.0]], 0.5)
        res = exact_enumeration(setup, outcomes=(a, b))
        assert res.expected_tau_hat == pytest.approx(res.tau, abs=1e-12)
        assert res.var_tau_hat >= 0

    def test_refuses_large_n(self):
        setup = build_setup(np.zeros((5, 0)), 0.5)
        with pytest.raises(LogicError):
            exact_enumeration(setup)

    def test_monte_carlo_reproduces_atoms(self):
        setup = build_setup([[1.0], [1.0]], 0.5)
        res = exact_enumeration(setup)
        reps = 4000
        counts: dict = {}
        for k in range(reps):
            key = tuple(int(x) for x in run_gsw(setup, seed=77, rep=k))
            counts[key] = counts.get(key, 0) + 1
        for key, prob in res.atoms.items():
            emp = counts.get(key, 0) / reps
            se = math.sqrt(prob * (1 - prob) / reps)
            assert abs(emp - prob) <= 4 * se, f"atom {key}: {emp} vs {prob}"


class TestMatrixConcentration:
    def test_full_sample_is_deterministic(self):
        mats = np.array([np.eye(2) * s for s in (0.5, -0.5, 0.25, -0.25)])
        rows = matrix_concentration_check(mats, a=4, x_grid=[0.5, 1.0], reps=2000, seed=0)
        for row in rows:
            assert row.empirical_prob == 0.0
            assert row.ok

    def test_zero_threshold_vacuous(self):
        mats = np.array([[[1.0]], [[-1.0]]])
        rows = matrix_concentration_check(mats, a=1, x_grid=[0.0], reps=500, seed=1)
        assert rows[0].bound == 2.0  # 2d with d = 1
        assert rows[0].ok

    def test_scalar_case_against_exact_hypergeometric(self):
        # five +1 and five -1 entries, a = 5: P[|W| >= 2] = 52/252 exactly
        mats = np.array([1.0] * 5 + [-1.0] * 5)
        rows = matrix_concentration_check(mats, a=5, x_grid=[2.0], reps=40000, seed=2)
        exact = 52.0 / 252.0
        se = math.sqrt(exact * (1 - exact) / 40000)
        assert abs(rows[0].empirical_prob - exact) <= 4 * se
        assert rows[0].ok

    def test_norm_validation(self):
        with pytest.raises(DataError):
            matrix_concentration_check(np.array([[[2.0]]]), a=1, x_grid=[1.0], reps=10, seed=0)
        asym = np.array([[[0.0, 1.0], [0.0, 0.0]]])
        with pytest.raises(DataError):
            matrix_concentration_check(asym, a=1, x_grid=[1.0], reps=10, seed=0)

    def test_deterministic(self):
        mats = np.array([1.0, -1.0, 0.5, -0.5])
        r1 = matrix_concentration_check(mats, a=2, x_grid=[0.5], reps=3000, seed=5)
        r2 = matrix_concentration_check(mats, a=2, x_grid=[0.5], reps=3000, seed=5)
        assert r1[0].empirical_prob == r2[0].empirical_prob


class TestKsDistance:
    def test_single_zero(self):
        assert ks_distance([0.0]) == pytest.approx(0.5)

    def test_exact_quantile_grid(self):
        m = 101
        samples = [normal_quantile((i - 0.5) / m) for i in range(1, m + 1)]
        assert ks_distance(samples) == pytest.approx(0.5 / m, abs=1e-9)

    def test_far_from_normal(self):
        assert ks_distance(np.full(50, 10.0)) > 0.999

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            ks_distance([])


class TestRunReplications:
    def test_deterministic_and_slot_ordered(self):
        cfg = dict(n=12, d=1, phi=0.5, replications=40, seed=3, mode="gsw", x_kind="gaussian")
        d1 = run_replications(SimConfig(**cfg, target="zv", mu=np.arange(12.0)))
        d2 = run_replications(SimConfig(**cfg, target="zv", mu=np.arange(12.0)))
        np.testing.assert_array_equal(d1.samples, d2.samples)

    def test_workers_do_not_change_samples(self):
        base = dict(n=10, d=0, phi=0.5, replications=30, seed=4, mode="iid",
                    a=np.ones(10), b=np.zeros(10))
        seq = run_replications(SimConfig(**base))
        par = run_replications(SimConfig(**base, workers=4))
        np.testing.assert_array_equal(seq.samples, par.samples)

    def test_single_replication_degenerate(self):
        diag = run_replications(SimConfig(n=5, d=0, phi=0.5, replications=1, seed=5,
                                          mode="iid", a=np.ones(5), b=np.zeros(5)))
        assert diag.degenerate and diag.variance is None

    def test_iid_variance_matches_formula(self):
        rng = np.random.default_rng(6)
        a, b = rng.standard_normal(50), rng.standard_normal(50)
        mu = a + b
        diag = run_replications(SimConfig(n=50, d=0, phi=0.5, replications=20000, seed=6,
                                          mode="iid", a=a, b=b))
        target = float(mu @ mu) / 50**2
        assert abs(diag.variance - target) <= 4 * diag.variance_se

    def test_skeletal_mode_mean_square(self):
        X = generate_covariates("gaussian_unit", 25, 2, seed=7)
        v = make_dense_contrast(X, seed=7)
        diag = run_replications(SimConfig(n=25, d=2, phi=0.5, replications=3000, seed=7,
                                          mode="skeletal", X=X, v=v))
        msq = diag.samples**2
        se = msq.std(ddof=1) / math.sqrt(len(msq))
        assert abs(msq.mean() - float(v @ v)) <= 4 * se

    def test_coupled_mode_matches_gsw_samples(self):
        X = generate_covariates("gaussian_unit", 15, 1, seed=8)
        v = make_dense_contrast(X, seed=8)
        coupled = run_replications(SimConfig(n=15, d=1, phi=0.5, replications=25, seed=8,
                                             mode="coupled", X=X, v=v))
        gsw = run_replications(SimConfig(n=15, d=1, phi=0.5, replications=25, seed=8,
                                         mode="gsw", X=X, v=v, target="zv"))
        np.testing.assert_allclose(coupled.samples, gsw.samples, rtol=1e-10)

    def test_missing_outcomes_rejected(self):
        with pytest.raises(DataError):
            run_replications(SimConfig(n=5, d=0, phi=0.5, replications=2, seed=9,
                                       mode="iid", target="tau_hat"))

    def test_gsw_concentrates_when_outcomes_in_span(self):
        # predictable outcomes: tau_hat variance collapses under the bound
        from gswdesign import build_setup, mse_bound, residual_projection

        n = 30
        X = generate_covariates("gaussian_unit", n, 2, seed=15)
        mu = X @ np.array([2.0, -1.0])
        a, b = mu.copy(), np.zeros(n)
        diag = run_replications(SimConfig(n=n, d=2, phi=0.5, replications=4000, seed=15,
                                          mode="gsw", X=X, a=a, b=b))
        setup = build_setup(X, 0.5)
        bound = mse_bound(residual_projection(mu, X), setup, n)
        assert diag.variance <= bound / n + 4 * diag.variance_se
        iid = run_replications(SimConfig(n=n, d=2, phi=0.5, replications=4000, seed=15,
                                         mode="iid", X=X, a=a, b=b))
        assert diag.variance < 0.25 * iid.variance  # balance beats coin flips here


class TestVarianceRatio:
    def test_no_covariates_ratio_one(self):
        cfg = SimConfig(n=40, d=0, phi=0.5, replications=8000, seed=10, mode="gsw", x_kind="none")
        v = np.arange(1.0, 41.0)
        diag = variance_ratio_experiment(cfg, v)
        assert diag.extras["ceiling_one_over_phi"] == pytest.approx(2.0)
        lo, hi = diag.extras["ratio_ci_3se"]
        assert lo <= 1.0 <= hi

    def test_zero_contrast_rejected(self):
        cfg = SimConfig(n=4, d=0, phi=0.5, replications=2, seed=11, mode="gsw", x_kind="none")
        with pytest.raises(DataError):
            variance_ratio_experiment(cfg, np.zeros(4))

    def test_non_orthogonal_rejected(self):
        X = np.ones((6, 1))
        cfg = SimConfig(n=6, d=1, phi=0.5, replications=2, seed=12, mode="gsw", X=X)
        with pytest.raises(DataError):
            variance_ratio_experiment(cfg, np.ones(6))


def test_generators():
    X = generate_covariates("gaussian_unit", 30, 3, seed=13)
    np.testing.assert_allclose(np.linalg.norm(X, axis=1), 1.0, rtol=1e-12)
    assert generate_covariates("ones", 5, 1, seed=0).tolist() == [[1.0]] * 5
    assert generate_covariates("none", 5, 0, seed=0).shape == (5, 0)
    with pytest.raises(ParameterError):
        generate_covariates("bogus", 5, 1, seed=0)
    v = make_dense_contrast(X, seed=13)
    assert np.max(np.abs(v @ X)) <= 1e-8 * np.linalg.norm(v)
