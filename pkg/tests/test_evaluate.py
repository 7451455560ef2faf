import numpy as np
import pytest

from mixar.evaluate import (
    ValidationSet,
    chain_diagnostics,
    kl_divergence_mc,
    lag_inclusion_report,
    mse_transition_mean,
)
from mixar.model import (
    ComponentParams,
    SeriesData,
    transition_log_density,
)
from mixar.sampler import Chain
from mixar.simulate import (
    SimSpec,
    conditional_sampler,
    generate_series,
    true_transition_log_density,
    true_transition_mean,
)


def ar2_matching_chain(n_draws=3, jitter=0.0, mu=2.5, phi1=1.2, phi2=-0.7,
                       sigma2=1.0):
    """A chain whose every draw reproduces the linear AR(2) conditional."""
    H, L = 2, 2
    rng = np.random.default_rng(0)
    comps = dict(
        mu_y=np.full((n_draws, H), mu),
        beta_y=np.tile(np.array([-phi1, -phi2]), (n_draws, H, 1)),
        sigma2=np.full((n_draws, H), sigma2),
        mu_x=np.full((n_draws, H, L), mu),
        delta_x=np.full((n_draws, H, L), 1.0),
    )
    if jitter:
        comps["mu_y"] = comps["mu_y"] + rng.normal(0, jitter, (n_draws, H))
    return Chain(
        L=L, H=H, n=1, selection_mode="none", diagonal=True,
        beta_x=None,
        sticks=np.full((n_draws, H - 1), 0.5),
        weights=np.tile([0.5, 0.5], (n_draws, 1)),
        alloc=np.zeros((n_draws, 1), dtype=np.int64),
        alpha=np.ones(n_draws),
        loglik=np.zeros(n_draws),
        n_occupied=np.ones(n_draws, dtype=np.int64),
        omega_last=np.full(n_draws, 0.5),
        **comps,
    )


def ar2_validation(val_size=60, replicates=400, seed=1):
    rng = np.random.default_rng(seed)
    X = rng.normal(2.5, 1.2, size=(val_size, 2))
    y = rng.normal(2.5, 1.0, size=val_size)
    return ValidationSet(
        y=y, X=X,
        true_log_density=true_transition_log_density("ar2"),
        conditional_sampler=conditional_sampler("ar2"),
        replicate_count=replicates,
    )


class TestKLDivergence:
    def test_perfect_model_scores_zero(self):
        chain = ar2_matching_chain()
        val = ar2_validation()
        rng = np.random.default_rng(2)
        res = kl_divergence_mc(val, chain, rng)
        se = res.per_point.std() / np.sqrt(res.per_point.size)
        assert abs(res.kl) < 3 * se + 1e-9
        assert res.clamp_count == 0

    def test_known_gaussians_give_half(self):
        # truth N(0,1) versus model N(1,1): divergence is exactly 0.5
        chain = ar2_matching_chain(mu=1.0, phi1=0.0, phi2=0.0, sigma2=1.0)
        rng = np.random.default_rng(3)
        m = 50
        X = rng.normal(size=(m, 2))
        val = ValidationSet(
            y=rng.normal(size=m), X=X,
            true_log_density=lambda ys, x: -0.5 * (np.log(2 * np.pi)
                                                   + np.asarray(ys) ** 2),
            conditional_sampler=lambda x, size, r: r.normal(size=size),
            replicate_count=2000,
        )
        res = kl_divergence_mc(val, chain, rng)
        se = res.per_point.std() / np.sqrt(m)
        assert abs(res.kl - 0.5) < 3 * se

    def test_model_against_itself_scores_zero(self):
        chain = ar2_matching_chain(n_draws=1)
        state = chain.state_at(0)
        rng = np.random.default_rng(4)
        m = 40
        X = rng.normal(2.5, 1.0, size=(m, 2))

        def own_logpdf(ys, x):
            return np.array([transition_log_density(float(v), x, state)
                             for v in np.atleast_1d(ys)])

        def own_sampler(x, size, r):
            from mixar.simulate import draw_path
            out = np.empty(size)
            for i in range(size):
                out[i] = draw_path(state, x, 1, r)[0][0]
            return out

        val = ValidationSet(y=rng.normal(size=m), X=X,
                            true_log_density=own_logpdf,
                            conditional_sampler=own_sampler,
                            replicate_count=400)
        res = kl_divergence_mc(val, chain, rng)
        se = res.per_point.std() / np.sqrt(m)
        assert abs(res.kl) < 3 * se + 1e-9

    def test_impossible_replicates_are_clamped_and_counted(self):
        chain = ar2_matching_chain(mu=500.0, phi1=0.0, phi2=0.0,
                                   sigma2=1e-4)
        val = ar2_validation(val_size=10, replicates=200)
        rng = np.random.default_rng(5)
        res = kl_divergence_mc(val, chain, rng)
        assert res.clamp_count > 0
        assert np.isfinite(res.kl)

    def test_invariant_to_replicate_order_and_linear(self):
        chain = ar2_matching_chain()
        val = ar2_validation(val_size=30, replicates=300)
        res = kl_divergence_mc(val, chain, np.random.default_rng(6))
        assert res.kl == pytest.approx(res.per_point.mean())

    def test_draw_subsetting_is_deterministic(self):
        chain = ar2_matching_chain(n_draws=7, jitter=0.3)
        val = ar2_validation(val_size=20, replicates=200)
        a = kl_divergence_mc(val, chain, np.random.default_rng(7), max_draws=3)
        b = kl_divergence_mc(val, chain, np.random.default_rng(7), max_draws=3)
        assert a.kl == b.kl
        assert a.n_draws_used == 3


class TestMSE:
    def test_exact_model_zero_error(self):
        chain = ar2_matching_chain()
        series = generate_series(SimSpec("ar2", 60, seed=8))
        got = mse_transition_mean(series, chain, true_transition_mean("ar2"))
        assert got == pytest.approx(0.0, abs=1e-20)

    def test_constant_bias_squares(self):
        b = 0.37
        chain = ar2_matching_chain(mu=2.5 + b, phi1=0.0, phi2=0.0)
        series = generate_series(SimSpec("ar2", 60, seed=9))
        truth = lambda x: 2.5
        got = mse_transition_mean(series, chain, truth)
        assert got == pytest.approx(b * b, rel=1e-10)

    def test_region_filter_applies(self):
        chain = ar2_matching_chain()
        series = generate_series(SimSpec("ar2", 200, seed=10))
        full = mse_transition_mean(series, chain, true_transition_mean("ar2"))
        region = mse_transition_mean(series, chain,
                                     true_transition_mean("ar2"),
                                     region=lambda x: x[1] < 2.5)
        assert full == pytest.approx(0.0, abs=1e-18)
        assert region == pytest.approx(0.0, abs=1e-18)
        with pytest.raises(ValueError):
            mse_transition_mean(series, chain, true_transition_mean("ar2"),
                                region=lambda x: False)


class TestInclusionReport:
    def test_constant_gamma_is_zero_or_one(self):
        chain = ar2_matching_chain(n_draws=4)
        chain.selection_mode = "global"
        chain.gamma = np.tile([1, 0], (4, 1))
        chain.gamma_switches = np.zeros(2, dtype=np.int64)
        rep = lag_inclusion_report(chain)
        np.testing.assert_allclose(rep["inclusion"], [1.0, 0.0])

    def test_alternating_gamma_is_half(self):
        chain = ar2_matching_chain(n_draws=4)
        chain.selection_mode = "global"
        chain.gamma = np.array([[1, 0], [0, 1], [1, 0], [0, 1]])
        chain.gamma_switches = np.zeros(2, dtype=np.int64)
        rep = lag_inclusion_report(chain)
        np.testing.assert_allclose(rep["inclusion"], [0.5, 0.5])

    def test_local_mode_emits_four_summaries(self):
        chain = ar2_matching_chain(n_draws=2)
        chain.selection_mode = "local"
        chain.gamma_local = np.ones((2, 2, 2), dtype=np.int64)
        chain.pi_gamma = np.full((2, 2), 0.7)
        chain.gamma_switches = np.zeros(2, dtype=np.int64)
        chain.coefficient_threshold = 0.01
        rep = lag_inclusion_report(chain)
        for key in ("obs_proportion", "obs_proportion_slope", "weight_share",
                    "pi_gamma"):
            assert key in rep

    def test_rejects_no_selection_chain(self):
        chain = ar2_matching_chain()
        with pytest.raises(ValueError):
            lag_inclusion_report(chain)


class TestDiagnostics:
    def test_dummy_chain_exact_summary(self):
        chain = ar2_matching_chain(n_draws=4)
        chain.loglik = np.array([1.0, 2.0, 3.0, 4.0])
        chain.n_occupied = np.array([1, 2, 2, 1])
        chain.omega_last = np.array([0.1, 0.2, 0.3, 0.4])
        chain.accept = {"eta_x": 0.15}
        chain.phase_timings = {"sample": 2.0, "seconds_per_1000": 20.0}
        d = chain_diagnostics(chain)
        assert d["loglik"]["mean"] == pytest.approx(2.5)
        assert d["loglik"]["min"] == 1.0 and d["loglik"]["max"] == 4.0
        assert d["n_occupied"]["max"] == 2
        assert d["omega_last"]["mean"] == pytest.approx(0.25)
        assert d["seconds_per_1000"] == 20.0
        assert d["acceptance"]["eta_x"] == 0.15

    def test_identical_chains_identical_diagnostics(self):
        a = ar2_matching_chain(n_draws=3)
        b = ar2_matching_chain(n_draws=3)
        for ch in (a, b):
            ch.accept = {"eta_x": 0.1}
            ch.phase_timings = {"seconds_per_1000": 1.0}
        da, db = chain_diagnostics(a), chain_diagnostics(b)
        assert da["loglik"] == db["loglik"]
        assert da["omega_last"] == db["omega_last"]

    def test_empty_chain_rejected(self):
        chain = ar2_matching_chain(n_draws=1)
        chain.alpha = np.empty(0)
        with pytest.raises(ValueError):
            chain_diagnostics(chain)
