import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_grid
from twrn_sync.crlb import FimInputs, alpha_only_crlb
from twrn_sync.errors import ConfigError, RankDeficiencyError
from twrn_sync.estimators import (
    ConcentratedCost,
    DeConfig,
    GridSpec,
    OmegaBuilder,
    build_omega,
    count_complexity,
    de_estimate,
    ls_channel_estimate,
    ml_cost,
    ml_grid_search,
    ml_two_stage_search,
    reflect_into_box,
)
from twrn_sync.signal_model import (
    CombinedParams,
    NoiseModel,
    build_cfo_matrix,
    build_shaping_matrix,
    generate_training,
)

TINY_GRID = GridSpec(tau_step=0.05, nu_step=0.01)


@pytest.fixture(scope="module")
def training80():
    return generate_training(80, 1)


@pytest.fixture(scope="module")
def training8():
    return generate_training(8, 2)


def noiseless(builder, tau_1, tau_2, nu_2, alpha=(0.6 - 0.3j, -0.2 + 0.7j)):
    return build_omega(builder, tau_1, tau_2, nu_2) @ np.asarray(alpha)


def with_noise(y, sigma2, seed):
    rng = np.random.default_rng(seed)
    return y + np.sqrt(sigma2 / 2) * (rng.standard_normal(y.size) + 1j * rng.standard_normal(y.size))


# ---------------------------------------------------------------- Omega / LS


def test_omega_zero_offsets(training80):
    t1, t2 = training80
    omega = build_omega(OmegaBuilder(t1, t2), 0.0, 0.0, 0.0)
    g0 = build_shaping_matrix(0.0, 80).entries
    np.testing.assert_allclose(omega[:, 0], g0 @ t1, atol=1e-13)
    np.testing.assert_allclose(omega[:, 1], g0 @ t2, atol=1e-13)


def test_omega_matches_dense_definition(training80):
    t1, t2 = training80
    omega = build_omega(OmegaBuilder(t1, t2), 0.21, -0.37, 0.13)
    c2 = build_cfo_matrix(0.13, 80) @ build_shaping_matrix(-0.37, 80).entries @ t2
    np.testing.assert_allclose(omega[:, 1], c2, atol=1e-12)


def test_omega_gram_is_hermitian(training80):
    omega = build_omega(OmegaBuilder(*training80), -0.3, 0.4, -0.2)
    gram = omega.conj().T @ omega
    np.testing.assert_allclose(gram, gram.conj().T, atol=1e-12)
    assert np.all(np.diag(gram).real > 0)


def test_noiseless_block_in_column_space(training80):
    builder = OmegaBuilder(*training80)
    y = noiseless(builder, 0.12, -0.33, 0.27)
    omega = builder(0.12, -0.33, 0.27)
    proj = omega @ np.linalg.pinv(omega) @ y
    assert np.linalg.norm(y - proj) < 1e-9 * np.linalg.norm(y)


def test_ls_exact_recovery(training80):
    builder = OmegaBuilder(*training80)
    alpha = np.array([0.3 + 0.4j, -1.1 + 0.05j])
    y = builder(0.1, 0.2, -0.3) @ alpha
    np.testing.assert_allclose(ls_channel_estimate(y, builder(0.1, 0.2, -0.3)), alpha, atol=1e-10)


def test_ls_orthogonal_input_gives_zero(training80):
    omega = OmegaBuilder(*training80)(0.1, 0.2, -0.3)
    q, _ = np.linalg.qr(np.column_stack([omega, np.random.default_rng(0).standard_normal(160)]))
    y = q[:, 2]
    np.testing.assert_allclose(ls_channel_estimate(y, omega), 0.0, atol=1e-12)


def test_ls_rank_deficiency_signaled():
    t = generate_training(16, 3)[0]
    omega = OmegaBuilder(t, t)(0.1, 0.1, 0.0)
    with pytest.raises(RankDeficiencyError):
        ls_channel_estimate(omega[:, 0], omega)
    with pytest.raises(RankDeficiencyError):
        ml_cost(0.1, 0.1, 0.0, omega[:, 0], OmegaBuilder(t, t))


def test_ls_mse_matches_known_offset_bound(training80):
    """Monte Carlo LS error with true offsets against the inverse gain-block FIM."""
    t1, t2 = training80
    noise = NoiseModel.from_snr_db(30)
    truth = CombinedParams(0.5 - 0.2j, 0.3 + 0.4j, 0.17, -0.29, 0.11)
    omega = OmegaBuilder(t1, t2)(truth.tau_1, truth.tau_2, truth.nu_2)
    rng = np.random.default_rng(9)
    n = 10_000
    u = np.sqrt(noise.sigma_u2 / 2) * (rng.standard_normal((160, n)) + 1j * rng.standard_normal((160, n)))
    est = np.linalg.pinv(omega) @ (omega @ truth.alpha[:, None] + u)
    mse = np.mean(np.abs(est - truth.alpha[:, None]) ** 2, axis=1)
    bound = alpha_only_crlb(FimInputs(truth, t1, t2, noise.sigma_u2))
    np.testing.assert_allclose(mse, bound, rtol=0.10)


# ---------------------------------------------------------------- cost


def test_cost_at_truth_noiseless(training80):
    builder = OmegaBuilder(*training80)
    y = noiseless(builder, -0.2, 0.35, -0.41)
    assert ml_cost(-0.2, 0.35, -0.41, y, builder) == pytest.approx(-np.vdot(y, y).real, rel=1e-12)


def test_cost_lower_at_truth_than_nearby(training80):
    builder = OmegaBuilder(*training80)
    y = noiseless(builder, -0.2, 0.3, -0.4)
    assert ml_cost(-0.2, 0.3, -0.4, y, builder) < ml_cost(-0.1, 0.4, -0.35, y, builder)


@settings(max_examples=40, deadline=None)
@given(
    st.floats(-0.49, 0.49), st.floats(-0.49, 0.49), st.floats(-0.49, 0.49),
    st.floats(-np.pi, np.pi), st.integers(0, 2**31),
)
def test_cost_identities(tau_1, tau_2, nu_2, phase, seed):
    t1, t2 = generate_training(16, 5)
    builder = OmegaBuilder(t1, t2)
    y = with_noise(noiseless(builder, 0.1, -0.2, 0.3), 0.05, seed)
    energy = np.vdot(y, y).real
    chi = ml_cost(tau_1, tau_2, nu_2, y, builder)
    # projection is a contraction
    assert chi >= -energy * (1 + 1e-12)
    # global phase rotation of y leaves the cost unchanged
    assert ml_cost(tau_1, tau_2, nu_2, np.exp(1j * phase) * y, builder) == pytest.approx(chi, abs=1e-10)
    # plugging the LS gains into the full ML cost gives ||y||^2 + chi
    omega = builder(tau_1, tau_2, nu_2)
    alpha = ls_channel_estimate(y, omega)
    full = np.linalg.norm(y - omega @ alpha) ** 2
    assert full == pytest.approx(energy + chi, rel=1e-9, abs=1e-9 * energy)


def test_evaluation_tally(training80):
    cost = ConcentratedCost(noiseless(OmegaBuilder(*training80), 0, 0, 0), OmegaBuilder(*training80))
    cost.chi(0.1, 0.1, 0.1)
    cost.chi(np.zeros(5), np.zeros(5), np.zeros(5))
    cost.residual(np.zeros((7, 3)))
    assert cost.evals == 13


# ---------------------------------------------------------------- grid search


def test_grid_matches_brute_force_oracle(training8):
    t1, t2 = training8
    builder = OmegaBuilder(t1, t2)
    y = with_noise(noiseless(builder, 0.137, -0.262, 0.0731), 0.01, 3)
    res = ml_grid_search(y, builder, TINY_GRID)
    best, arg = brute_force_grid(y, t1, t2, TINY_GRID)
    assert (res.tau_1, res.tau_2, res.nu_2) == arg
    assert res.cost == pytest.approx(best, abs=1e-12)
    assert res.evals == TINY_GRID.size == 20 * 20 * 100


def test_grid_recovers_on_grid_truth(training80):
    builder = OmegaBuilder(*training80)
    grid = GridSpec(tau_step=0.05, nu_step=0.01)
    tau1s, tau2s, nus = grid.axes()
    truth = (tau1s[13], tau2s[4], nus[71])
    res = ml_grid_search(noiseless(builder, *truth), builder, grid)
    assert (res.tau_1, res.tau_2, res.nu_2) == truth
    np.testing.assert_allclose(res.alpha_hat, [0.6 - 0.3j, -0.2 + 0.7j], atol=1e-10)


def test_grid_single_point(training8):
    builder = OmegaBuilder(*training8)
    grid = GridSpec(0.1, 0.1, (0.0, 0.1), (-0.2, -0.1), (0.3, 0.4))
    res = ml_grid_search(noiseless(builder, 0.0, 0.0, 0.0), builder, grid)
    assert (res.tau_1, res.tau_2, res.nu_2) == pytest.approx((0.05, -0.15, 0.35))
    assert res.evals == 1


def test_grid_tie_break_is_lexicographic(training8):
    builder = OmegaBuilder(*training8)
    res = ml_grid_search(np.zeros(16, dtype=complex), builder, TINY_GRID)
    tau1s, tau2s, nus = TINY_GRID.axes()
    assert (res.tau_1, res.tau_2, res.nu_2) == (tau1s[0], tau2s[0], nus[0])


def test_grid_result_cost_recomputes(training8):
    builder = OmegaBuilder(*training8)
    y = with_noise(noiseless(builder, 0.3, 0.1, -0.2), 0.02, 8)
    res = ml_grid_search(y, builder, TINY_GRID)
    assert res.cost == pytest.approx(ml_cost(res.tau_1, res.tau_2, res.nu_2, y, builder), abs=1e-10)


def test_two_stage_search_refines(training80):
    builder = OmegaBuilder(*training80)
    y = noiseless(builder, 0.1234, -0.3012, 0.23456)
    res = ml_two_stage_search(y, builder)
    assert abs(res.tau_1 - 0.1234) <= 0.005 + 1e-12
    assert abs(res.tau_2 - (-0.3012)) <= 0.005 + 1e-12
    assert abs(res.nu_2 - 0.23456) <= 5e-5 + 1e-12


def test_grid_spec_validation():
    with pytest.raises(ConfigError):
        GridSpec(tau_step=0.0)
    with pytest.raises(ConfigError):
        GridSpec(nu_bounds=(0.2, 0.1))
    assert GridSpec().size == 100 * 100 * 10_000


# ---------------------------------------------------------------- DE


def test_de_noiseless_recovery(training80):
    builder = OmegaBuilder(*training80)
    truth = (0.2113, -0.4071, 0.3319)
    res = de_estimate(noiseless(builder, *truth), builder, DeConfig(tol=1e-12, seed=3))
    assert res.tau_1 == pytest.approx(truth[0], abs=1e-3)
    assert res.tau_2 == pytest.approx(truth[1], abs=1e-3)
    assert res.nu_2 == pytest.approx(truth[2], abs=1e-3)
    assert res.converged


def test_de_beats_grid_on_tiny_instance(training8):
    t1, t2 = training8
    builder = OmegaBuilder(t1, t2)
    y = with_noise(noiseless(builder, 0.137, -0.262, 0.0731), 0.01, 3)
    grid = ml_grid_search(y, builder, TINY_GRID)
    de = de_estimate(y, builder, DeConfig(seed=1))
    assert de.cost <= grid.cost


def test_de_bookkeeping_and_box(training80):
    builder = OmegaBuilder(*training80)
    y = with_noise(noiseless(builder, 0.1, 0.2, -0.3), 0.01, 4)
    cfg = DeConfig(population=12, max_generations=30, tol=0.0, seed=5)
    res = de_estimate(y, builder, cfg)
    assert res.evals == cfg.population * (cfg.max_generations + 1)
    assert not res.converged
    assert np.all(np.abs(res.tau_hat) <= 0.5) and abs(res.nu_hat) <= 0.5
    assert res.cost == pytest.approx(ml_cost(res.tau_1, res.tau_2, res.nu_2, y, builder), abs=1e-10)


def test_de_respects_custom_box(training80):
    builder = OmegaBuilder(*training80)
    y = noiseless(builder, 0.1, 0.2, -0.3)
    box = ((0.0, 0.05), (0.3, 0.4), (0.1, 0.2))
    res = de_estimate(y, builder, DeConfig(max_generations=20, seed=0), box=box)
    for value, (lo, hi) in zip((res.tau_1, res.tau_2, res.nu_2), box):
        assert lo <= value <= hi


def test_de_is_deterministic(training80):
    builder = OmegaBuilder(*training80)
    y = with_noise(noiseless(builder, -0.1, 0.25, 0.4), 0.05, 6)
    a = de_estimate(y, builder, DeConfig(seed=17))
    b = de_estimate(y, builder, DeConfig(seed=17))
    for f in dataclasses.fields(a):
        np.testing.assert_array_equal(getattr(a, f.name), getattr(b, f.name))


def test_de_config_validation():
    with pytest.raises(ConfigError):
        DeConfig(population=3)
    with pytest.raises(ConfigError):
        DeConfig(weight=0.0)
    with pytest.raises(ConfigError):
        DeConfig(crossover=1.5)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=3, max_size=3))
def test_reflection_lands_in_box(point):
    lo, hi = np.array([-0.5, -0.5, -0.2]), np.array([0.5, 0.5, 0.3])
    out = reflect_into_box(np.array([point]), lo, hi)[0]
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)
    inside = np.clip(point, lo, hi)
    np.testing.assert_allclose(reflect_into_box(inside[None], lo, hi)[0], inside, atol=1e-12)


@pytest.mark.slow
def test_de_error_non_increasing_in_snr():
    """Per-parameter DE error over 200 frames shrinks as SNR grows (common channel draws)."""
    t1, t2 = generate_training(32, 7)
    builder = OmegaBuilder(t1, t2)
    snrs = (10, 20, 30, 40)
    rng = np.random.default_rng(21)
    frames = []
    for _ in range(200):
        h = (rng.standard_normal(2) + 1j * rng.standard_normal(2)) / np.sqrt(2)
        frames.append((h, rng.uniform(-0.5, 0.5, 3), rng.standard_normal((2, 64)) + 1j * rng.standard_normal((2, 64))))
    mse = []
    for snr in snrs:
        sigma = np.sqrt(10 ** (-snr / 10) / 2)
        errs = []
        for k, (h, off, w) in enumerate(frames):
            y = builder(*off) @ h + sigma * w[0]
            res = de_estimate(y, builder, DeConfig(seed=k))
            errs.append([(res.tau_1 - off[0]) ** 2, (res.tau_2 - off[1]) ** 2, (res.nu_2 - off[2]) ** 2])
        mse.append(np.mean(errs, axis=0))
    mse = np.array(mse)
    assert np.all(np.diff(mse, axis=0) <= 0), mse


# ---------------------------------------------------------------- complexity


def test_complexity_counts():
    rep = count_complexity(GridSpec(), DeConfig(), 80, 2)
    assert rep.ml_evaluations == 10**8
    assert rep.de_evaluations == 40 * 501 == 20_040
    assert rep.ratio >= 1e3
    assert rep.ml_operations == pytest.approx(rep.ml_evaluations * rep.flops_per_evaluation)
    assert "flops/eval" in rep.flop_model
