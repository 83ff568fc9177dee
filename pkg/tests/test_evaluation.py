import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_panel
from frcimpact.calibration import calibrate, rolling_estimates
from frcimpact.errors import DomainError, NumericalError, UndefinedScoreError
from frcimpact.evaluation import (
    delta_r2_bbdl,
    delta_r2_kyle_numeric,
    delta_r2_ml_matrix,
    delta_r2_ml_theory,
    evaluate_periods,
    generalized_r2,
    impact_stack,
    kyle_liquidity_grid,
    kyle_two_asset,
    pairwise_delta_r2_empirical,
    pairwise_delta_r2_matrix,
    score,
)
from frcimpact.field import FieldParams, TenorGrid, build_field_model
from frcimpact.simulation import SimConfig, gen_synthetic_panel


def gaussian_pair_panel(rng, days, rho_f1q1, rho_f1q2, rho_q1q2=0.0):
    """Two-tenor panel with unit variances and the given correlations of (df1, dq1, dq2)."""
    cov = np.array([
        [1.0, rho_f1q1, rho_f1q2],
        [rho_f1q1, 1.0, rho_q1q2],
        [rho_f1q2, rho_q1q2, 1.0],
    ])
    x = rng.multivariate_normal(np.zeros(3), cov, size=days)
    df = np.column_stack([x[:, 0], rng.standard_normal(days)])
    return make_panel(df, x[:, 1:])


# --- generalized R2 ----------------------------------------------------------


def test_r2_trivial_predictors(rng):
    actual = rng.standard_normal((100, 3))
    sig = np.abs(rng.standard_normal((100, 3))) + 0.1
    assert generalized_r2(actual, actual, sig) == 1.0
    assert generalized_r2(np.zeros_like(actual), actual, sig) == 0.0
    assert generalized_r2(-actual, actual, sig) == pytest.approx(-3.0)


def test_r2_hand_example():
    actual = np.array([[1.0, 2.0], [3.0, -1.0]])
    pred = np.array([[0.5, 2.0], [3.0, 0.0]])
    sig = np.array([[1.0, 2.0], [1.0, 2.0]])
    # weights 1 and 1/4: residual 0.25 + 0.25, total 1 + 1 + 9 + 0.25
    assert generalized_r2(pred, actual, sig) == pytest.approx(1 - 0.5 / 11.25, rel=1e-15)
    assert generalized_r2(pred, actual, sig, 2) == pytest.approx(1 - 0.25 / 1.25, rel=1e-15)


def test_r2_recovers_signal_share(rng):
    s = 0.6
    days = 2500
    signal = rng.standard_normal((days, 4))
    actual = s * signal + np.sqrt(1 - s * s) * rng.standard_normal((days, 4))
    assert generalized_r2(s * signal, actual, np.ones((days, 4))) == pytest.approx(s * s, abs=0.02)


@given(st.floats(1e-3, 1e3))
def test_r2_scale_invariant(c):
    rng = np.random.default_rng(3)
    df = rng.standard_normal((200, 3))
    dq = df + rng.standard_normal((200, 3))
    panel = make_panel(df, dq)
    est = rolling_estimates(panel)
    pred = 0.5 * dq
    base = generalized_r2(pred, df, est)
    scaled_est = rolling_estimates(panel.scaled(f_scale=c))
    assert generalized_r2(c * pred, c * df, scaled_est) == pytest.approx(base, rel=1e-9)


def test_r2_errors(rng):
    with pytest.raises(UndefinedScoreError):
        generalized_r2(np.ones((5, 2)), np.zeros((5, 2)), np.ones((5, 2)))
    with pytest.raises(DomainError):
        generalized_r2(np.ones((5, 2)), np.ones((4, 2)), np.ones((5, 2)))
    with pytest.raises(DomainError):
        generalized_r2(np.ones((5, 2)), np.ones((5, 2)), np.ones((5, 2)), 3)
    with pytest.raises(DomainError):
        generalized_r2(np.ones((5, 2)), np.ones((5, 2)), np.ones((6, 2)))


def test_r2_accepts_full_panel_rows(rng):
    df = rng.standard_normal((100, 2))
    panel = make_panel(df, df)
    est = rolling_estimates(panel)
    v = est.valid
    assert generalized_r2(0.5 * df, df, est) == generalized_r2(0.5 * df[v], df[v], est)


# --- ML theory ------------------------------------------------------------------


def test_ml_theory_examples():
    assert delta_r2_ml_theory(0.7, 0.0, 0.0) == 0.0
    assert delta_r2_ml_theory(0.5, 0.3, 0.0) == pytest.approx(0.09, abs=1e-15)
    assert delta_r2_ml_theory(0.4, 0.3, 0.5) == pytest.approx(0.01 / 0.75, rel=1e-14)


def test_ml_theory_errors():
    with pytest.raises(NumericalError):
        delta_r2_ml_theory(0.1, 0.1, 1.0)
    with pytest.raises(DomainError):
        delta_r2_ml_theory(1.0, 0.1, 0.0)


def _population_gain(r11, r12, rq):
    """Two-regressor minus one-regressor R2 from the exact correlation matrix."""
    q = np.array([[1.0, rq], [rq, 1.0]])
    c = np.array([r11, r12])
    beta = np.linalg.lstsq(q, c, rcond=None)[0]
    return float(c @ beta) - r11**2


@given(st.floats(-0.95, 0.95), st.floats(-0.95, 0.95), st.floats(-0.95, 0.95))
def test_ml_theory_matches_population_regression(r11, r12, rq):
    joint = np.array([[1.0, r11, r12], [r11, 1.0, rq], [r12, rq, 1.0]])
    if np.linalg.eigvalsh(joint).min() < 1e-6:
        return
    got = delta_r2_ml_theory(r11, r12, rq)
    assert got >= 0.0
    assert abs(got - _population_gain(r11, r12, rq)) <= 1e-10


def test_ml_theory_zero_iff_partial_correlation_vanishes():
    assert delta_r2_ml_theory(0.4, 0.5 * 0.4, 0.5) == pytest.approx(0.0, abs=1e-16)
    assert delta_r2_ml_theory(0.4, 0.21, 0.5) > 0


def test_empirical_pair_example(rng):
    panel = gaussian_pair_panel(rng, 5000, 0.5, 0.3)
    est = rolling_estimates(panel)
    assert pairwise_delta_r2_empirical(panel, est, 1, 2, "ml") == pytest.approx(0.09, abs=0.02)


def test_empirical_ml_agrees_with_theory_over_seeds():
    theory = delta_r2_ml_theory(0.4, 0.3, 0.5)
    gains = []
    for seed in range(10):
        panel = gaussian_pair_panel(np.random.default_rng(seed), 2500, 0.4, 0.3, 0.5)
        gains.append(pairwise_delta_r2_empirical(panel, rolling_estimates(panel), 1, 2, "ml"))
    se = np.std(gains, ddof=1) / np.sqrt(len(gains))
    # the rolling volatility ratio adds a small downward bias of order rho^2/window
    assert abs(np.mean(gains) - theory) <= 3 * se + 0.2 * 0.3**2 / 20


def test_rolling_window_bias_of_empirical_gain():
    # 20-day volatilities put noise of variance ~1/(2*window) on each flow regressor, which costs the
    # two-asset model about beta_2^2 / (2*window) of R2 whatever the sample size
    gains = []
    for seed in range(20):
        panel = gaussian_pair_panel(np.random.default_rng(700 + seed), 10_000, 0.5, 0.3)
        gains.append(pairwise_delta_r2_empirical(panel, rolling_estimates(panel), 1, 2, "ml"))
    bias = np.mean(gains) - 0.09
    se = np.std(gains, ddof=1) / np.sqrt(len(gains))
    assert bias < -2 * se
    assert -4 * 0.09 / (2 * 20) <= bias <= -0.5 * 0.09 / (2 * 20)


def test_independent_flow_adds_nothing(rng):
    panel = gaussian_pair_panel(rng, 3000, 0.5, 0.0)
    gain = pairwise_delta_r2_empirical(panel, rolling_estimates(panel), 1, 2, "ml")
    assert abs(gain) <= 3 / 3000 ** 0.5


def test_empirical_degenerate_pair_is_nan(rng):
    df = rng.standard_normal((200, 3))
    dq = rng.standard_normal((200, 3))
    dq[:, 2] = dq[:, 1]
    panel = make_panel(df, dq)
    est = rolling_estimates(panel)
    with pytest.warns(UserWarning, match="degenerate"):
        assert np.isnan(pairwise_delta_r2_empirical(panel, est, 2, 3))
    with pytest.raises(DomainError):
        pairwise_delta_r2_empirical(panel, est, 2, 2)
    with pytest.raises(DomainError):
        pairwise_delta_r2_empirical(panel, est, 1, 2, "bbdlw")


def test_ml_matrix_shapes_and_diagonal(rng):
    panel = gaussian_pair_panel(rng, 300, 0.5, 0.3)
    est = rolling_estimates(panel)
    m = delta_r2_ml_matrix(est).matrix
    assert m.shape == (2, 2) and np.all(np.diag(m) == 0) and np.all(m >= 0)
    emp = pairwise_delta_r2_matrix(panel, est).matrix
    assert np.all(np.diag(emp) == 0)


# --- Kyle -------------------------------------------------------------------


@pytest.mark.parametrize("l1,l2", [(1.0, 1.0), (0.1, 10.0), (3.0, 0.2)])
def test_kyle_decoupled_is_exactly_zero(l1, l2):
    assert delta_r2_kyle_numeric(l1, l2, 0.0, 0.0, 0.4) == 0.0


def test_kyle_construction_properties():
    k = kyle_two_asset(2.0, 0.5, 0.5, 0.75, 0.3)
    np.testing.assert_allclose(k.kyle, k.kyle.T, atol=1e-14)
    assert np.linalg.eigvalsh(k.kyle).min() > 0
    np.testing.assert_allclose(k.kyle @ k.omega_cov @ k.kyle, k.sigma_cov, rtol=1e-12)
    rho_11 = k.cross_cov[0, 0] / np.sqrt(k.sigma_cov[0, 0] * k.omega_cov[0, 0])
    assert rho_11 == pytest.approx(0.3, rel=1e-12)
    assert k.r2_diag == pytest.approx(0.09, rel=1e-12)


def test_kyle_population_matches_monte_carlo():
    k = kyle_two_asset(1.0, 4.0, 0.5, 0.75, 0.3)
    joint = np.block([[k.sigma_cov, k.cross_cov], [k.cross_cov.T, k.omega_cov]])
    x = np.random.default_rng(5).multivariate_normal(np.zeros(4), joint, size=400_000)
    df, dq = x[:, :2], x[:, 2:]
    pred = dq @ (0.3 * k.kyle).T
    r2 = 1 - np.mean((df[:, 0] - pred[:, 0]) ** 2) / np.mean(df[:, 0] ** 2)
    assert r2 == pytest.approx(k.r2_kyle, abs=0.005)


def test_kyle_grid_is_flat_at_reference_setting():
    liq, grid = kyle_liquidity_grid()
    assert grid.shape == (10, 10) and liq[0] == pytest.approx(0.1) and liq[-1] == pytest.approx(10.0)
    assert np.max(np.abs(grid)) <= 0.01


def test_kyle_domain_errors():
    with pytest.raises(DomainError):
        kyle_two_asset(1.0, 1.0, 0.5, 0.75, 0.999)
    with pytest.raises(DomainError):
        kyle_two_asset(-1.0, 1.0, 0.5, 0.75, 0.3)
    with pytest.raises(DomainError):
        kyle_two_asset(1.0, 1.0, 1.0, 0.75, 0.3)
    with pytest.raises(DomainError):
        kyle_two_asset(1.0, 1.0, 0.5, 0.75, 0.0)


# --- field theory ----------------------------------------------------------------


def test_bbdl_zero_y_gives_zero_matrix():
    fm = build_field_model(FieldParams.small_psi(1.3), TenorGrid(6))
    for mode in ("eta-response", "flow-response"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert np.all(delta_r2_bbdl(fm, np.zeros(6), mode).matrix == 0)


def test_bbdl_stiff_limit_is_identity():
    fm = build_field_model(FieldParams.small_psi(1e9), TenorGrid(5))
    np.testing.assert_allclose(delta_r2_bbdl(fm, np.ones(5)).matrix, np.eye(5), atol=1e-12)
    np.testing.assert_allclose(delta_r2_bbdl(fm, np.ones(5), "flow-response").matrix, 0.0, atol=1e-12)


@pytest.mark.parametrize("kappa", [0.1, 0.84, 1.3, 5.0])
def test_bbdl_eta_rows_bounded(kappa):
    fm = build_field_model(FieldParams.small_psi(kappa), TenorGrid(20))
    m = delta_r2_bbdl(fm, np.ones(20)).matrix
    assert np.all(m >= 0)
    assert np.all(m.sum(axis=1) <= 1 + 1e-12)


def test_bbdl_eta_vertical_stripes_follow_y():
    fm = build_field_model(FieldParams.small_psi(1.3), TenorGrid(8))
    y = np.linspace(0.9, 0.1, 8)
    m = delta_r2_bbdl(fm, y).matrix
    p = np.asarray(fm.normalized_response)
    np.testing.assert_allclose(m, p**2 * y**2, rtol=1e-15)


def test_bbdl_flow_mode_matches_two_tenor_oracle():
    fm = build_field_model(FieldParams.small_psi(1.3), TenorGrid(5))
    y = np.linspace(0.8, 0.2, 5)
    w = np.array([1.0, 2.0, 0.5, 1.5, 1.0])
    rho = 0.3 * np.ones((5, 5)) + 0.7 * np.eye(5)
    out = delta_r2_bbdl(fm, y, "flow-response", omega=w, omega_corr=rho).matrix
    assert np.all(np.diag(out) == 0)
    p = np.asarray(fm.normalized_response)
    a, b = 1, 3
    idx = [a, b]
    m = p[np.ix_(idx, idx)] * y[idx]
    om = np.outer(w[idx], w[idx]) * rho[np.ix_(idx, idx)]
    # the symmetric solution of L Om L = M M^T, via the congruence root
    h = np.linalg.cholesky(om)
    evals, v = np.linalg.eigh(h.T @ m @ m.T @ h)
    lam = np.linalg.inv(h.T) @ (v * np.sqrt(evals)) @ v.T @ np.linalg.inv(h)
    expect = lam[0, 1] ** 2 * w[b] ** 2 + 2 * 0.3 * lam[0, 0] * lam[0, 1] * w[a] * w[b]
    assert out[a, b] == pytest.approx(expect, rel=1e-10)


def test_bbdl_mode_errors():
    fm = build_field_model(FieldParams.small_psi(1.3), TenorGrid(4))
    with pytest.raises(DomainError):
        delta_r2_bbdl(fm, np.ones(3))
    with pytest.raises(DomainError):
        delta_r2_bbdl(fm, np.ones(4), "flows")


# --- scoring periods ---------------------------------------------------------------


def test_evaluate_periods_report_layout():
    cfg = SimConfig(FieldParams.small_psi(1.3), n=4, y_vector=np.linspace(0.8, 0.2, 4), days=261 * 6, seed=1)
    panel = gen_synthetic_panel(cfg).panel
    reports = evaluate_periods(panel, kinds=("diag", "ml", "bbdlw"))
    periods = {r.period for r in reports}
    assert len(periods) >= 2
    for r in reports:
        assert r.r2_w_sigma <= 1 and r.r2_per_tenor.shape == (4,)
        assert r.sample in ("in", "out")
    ins = [r for r in reports if r.sample == "in"]
    outs = [r for r in reports if r.sample == "out"]
    assert len(ins) == len(outs)


def test_score_field_model_beats_zero_on_generator():
    cfg = SimConfig(FieldParams.small_psi(1.3), n=5, y_vector=np.full(5, 0.7), days=1500, seed=2)
    panel = gen_synthetic_panel(cfg).panel
    res, fm = calibrate(panel, "bbdlw")
    rep = score("bbdlw", panel, res.rho, res, fm)
    # the generator's explained share is Y^2 = 0.49
    assert rep.r2_w_sigma == pytest.approx(0.49, abs=0.05)
    with pytest.raises(DomainError):
        impact_stack("bbdlw", res.rho, res, None)
