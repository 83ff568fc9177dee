"""Goodness-of-fit scores and pairwise added-accuracy matrices.

The score is the weighted generalized R-squared

    R2(W) = 1 - sum_k e_k^T W_k e_k / sum_k df_k^T W_k df_k,   e_k = df_k - df_hat_k

with ``W_k = diag(sigma_hat_k^2)^-1`` (all tenors) or the single-tenor
restriction.  Pairwise matrices hold, in entry ``(theta, theta')``, the
gain on tenor ``theta`` from adding the flow of ``theta'`` to a two-asset
model.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .calibration import (
    CalibrationResult,
    RollingEstimates,
    calibrate,
    rolling_estimates,
    segment_periods,
    unit_lambda,
)
from .errors import DomainError, NumericalError, UndefinedScoreError
from .field import FieldModel, FieldParams, TenorGrid, build_field_model
from .impact import _o_sym, inv_psd_sqrt, lambda_stack, o_sym, psd_sqrt, ridge_regularize
from .panel import MarketPanel

MODES = ("empirical", "ml-theory", "kyle-numeric", "bbdl-eta", "bbdls-flow")


@dataclass(frozen=True)
class EvalReport:
    model_kind: str
    r2_w_sigma: float
    r2_per_tenor: np.ndarray
    sample: str
    period: tuple
    n_days: int
    fit_period: Optional[tuple] = None


@dataclass(frozen=True)
class PairwiseDeltaR2:
    """``matrix[theta, theta']`` is the gain on ``theta`` from the flow of ``theta'``."""

    matrix: np.ndarray
    mode: str
    model_kind: Optional[str] = None


def _weight_matrix(sigma: np.ndarray, weight) -> np.ndarray:
    with np.errstate(divide="ignore"):
        w = np.where(sigma > 0, 1.0 / np.where(sigma > 0, sigma, 1.0) ** 2, 0.0)
    if weight == "w_sigma":
        return w
    if isinstance(weight, (int, np.integer)) and not isinstance(weight, bool):
        j = int(weight) - 1
        if not 0 <= j < sigma.shape[1]:
            raise DomainError(f"tenor {weight} outside 1..{sigma.shape[1]}")
        out = np.zeros_like(w)
        out[:, j] = w[:, j]
        return out
    raise DomainError(f"weight must be 'w_sigma' or a 1-based tenor index, got {weight!r}")


def generalized_r2(pred: np.ndarray, actual: np.ndarray, est: Union[RollingEstimates, np.ndarray], weight="w_sigma") -> float:
    """Weighted generalized R-squared.

    ``est`` supplies ``sigma_hat``; ``pred`` and ``actual`` may cover every
    panel day (the valid mask is applied) or only the valid days.  A bare
    ``(N, n)`` volatility array is also accepted.

    Raises
    ------
    UndefinedScoreError
        If the weighted sum of squares of ``actual`` is zero.
    """
    pred = np.asarray(pred, float)
    actual = np.asarray(actual, float)
    if pred.shape != actual.shape or pred.ndim != 2:
        raise DomainError(f"pred {pred.shape} and actual {actual.shape} must be equal-shaped (N, n) arrays")
    if isinstance(est, RollingEstimates):
        sigma = est.sigma_hat
        if pred.shape[0] == est.n_days:
            v = est.valid
            pred, actual, sigma = pred[v], actual[v], sigma[v]
        else:
            sigma = sigma[est.valid]
    else:
        sigma = np.asarray(est, float)
    if sigma.shape != pred.shape:
        raise DomainError(f"volatilities {sigma.shape} do not cover the scored days {pred.shape}")
    w = _weight_matrix(sigma, weight)
    den = float(np.sum(w * actual**2))
    if not den > 0:
        raise UndefinedScoreError("generalized R2 undefined: weighted sum of squared increments is zero")
    return 1.0 - float(np.sum(w * (actual - pred) ** 2)) / den


def impact_stack(
    kind: str,
    est: RollingEstimates,
    calib: CalibrationResult,
    field_model: Optional[FieldModel] = None,
) -> np.ndarray:
    """``Lambda_hat(t_k)`` on the valid days of ``est`` for fitted parameters."""
    if kind in ("diag", "ml", "kyle"):
        lam, _ = unit_lambda(kind, est)
        return (1.0 if calib.y_ratio is None else calib.y_ratio) * lam
    if field_model is None or calib.y_hat is None:
        raise DomainError(f"{kind} predictions need a FieldModel and a fitted Y")
    lam, _, _ = lambda_stack(
        kind,
        sigma=est.sigma_hat[est.valid],
        omega_cov=est.omega_cov(),
        normalized_response=field_model.normalized_response,
        y_vector=calib.y_hat,
    )
    return lam


def predict(kind: str, panel: MarketPanel, est: RollingEstimates, calib: CalibrationResult,
            field_model: Optional[FieldModel] = None) -> np.ndarray:
    """Predicted increments ``Lambda_hat(t_k) dq(t_k)`` on the valid days."""
    lam = impact_stack(kind, est, calib, field_model)
    return np.einsum("kij,kj->ki", lam, panel.delta_q[est.valid])


def score(kind: str, panel: MarketPanel, est: RollingEstimates, calib: CalibrationResult,
          field_model: Optional[FieldModel] = None, sample: str = "in",
          fit_period: Optional[tuple] = None) -> EvalReport:
    pred = predict(kind, panel, est, calib, field_model)
    actual = panel.delta_f[est.valid]
    sig = est.sigma_hat[est.valid]
    per = []
    for j in range(panel.n_tenors):
        try:
            per.append(generalized_r2(pred, actual, sig, j + 1))
        except UndefinedScoreError:
            per.append(float("nan"))
    return EvalReport(
        model_kind=kind,
        r2_w_sigma=generalized_r2(pred, actual, sig),
        r2_per_tenor=np.array(per),
        sample=sample,
        period=(panel.dates[0], panel.dates[-1]),
        n_days=int(est.valid.sum()),
        fit_period=fit_period,
    )


def evaluate_periods(
    panel: MarketPanel,
    kinds: Sequence[str] = ("diag", "ml", "kyle", "bbdlw", "bbdls"),
    years_per_period: int = 3,
    weighting: str = "w_sigma",
    relaxed: bool = False,
) -> list[EvalReport]:
    """In- and out-of-sample scores for every period and model kind.

    Out of sample, a period is scored with the source period's ``kappa``,
    ``Y``, ``y`` and correlation matrices, combined with its own rolling
    volatilities.
    """
    splits = segment_periods(panel, years_per_period)
    ests = [rolling_estimates(s.panel) for s in splits]
    fits = {}
    for s, est in zip(splits, ests):
        for kind in kinds:
            fits[s.index, kind] = calibrate(s.panel, kind, est, weighting=weighting, relaxed=relaxed)
    reports = []
    for s, est in zip(splits, ests):
        for kind in kinds:
            calib, fm = fits[s.index, kind]
            reports.append(score(kind, s.panel, est, calib, fm, "in", (s.start, s.end)))
            if s.out_of_sample_from is None:
                continue
            src = splits[s.out_of_sample_from]
            calib_src, fm_src = fits[src.index, kind]
            mixed = est.with_correlations(ests[src.index])
            reports.append(score(kind, s.panel, mixed, calib_src, fm_src, "out", (src.start, src.end)))
    return reports


# --- pairwise, empirical -----------------------------------------------


def pairwise_delta_r2_empirical(
    panel: MarketPanel,
    est: RollingEstimates,
    theta: int,
    theta_p: int,
    model_kind: str = "ml",
    y_ratio: float = 1.0,
    field_model: Optional[FieldModel] = None,
    y_vector: Optional[np.ndarray] = None,
) -> float:
    """Gain on tenor ``theta`` (1-based) from adding the flow of ``theta_p``.

    The two-asset model of ``model_kind`` is built on the pair from the same
    rolling estimators as the full panel and compared with the one-asset diag
    model on ``theta``, both scored with ``W_sigma_theta``.  Field kinds use
    the full-grid response restricted to the pair.  Degenerate flows give NaN.
    """
    n = panel.n_tenors
    if not (1 <= theta <= n and 1 <= theta_p <= n) or theta == theta_p:
        raise DomainError(f"need two distinct tenors in 1..{n}, got {theta}, {theta_p}")
    i, j = theta - 1, theta_p - 1
    if est.zero_flow[i] or est.zero_flow[j] or abs(est.rho_q[i, j]) >= 1 - 1e-12:
        warnings.warn(f"degenerate flows on pair ({theta}, {theta_p}); entry set to NaN", stacklevel=2)
        return float("nan")
    pair = est.select([i, j])
    own = est.select([i])
    v = est.valid
    dq = panel.delta_q[v][:, [i, j]]
    df = panel.delta_f[v][:, [i]]
    sig = est.sigma_hat[v][:, [i]]
    if model_kind in ("diag", "ml", "kyle"):
        lam = y_ratio * unit_lambda(model_kind, pair)[0]
    elif model_kind in ("bbdlw", "bbdls"):
        if field_model is None or y_vector is None:
            raise DomainError("field kinds need a FieldModel and Y")
        idx = np.ix_([i, j], [i, j])
        lam, _, _ = lambda_stack(
            model_kind,
            sigma=pair.sigma_hat[v],
            omega_cov=pair.omega_cov(),
            normalized_response=np.asarray(field_model.normalized_response)[idx],
            y_vector=np.asarray(y_vector, float)[[i, j]],
        )
    else:
        raise DomainError(f"unknown model kind {model_kind!r}")
    pred_pair = np.einsum("kj,kj->k", lam[:, 0, :], dq)[:, None]
    lam_d = unit_lambda("diag", own)[0]
    pred_own = lam_d[:, 0, 0][:, None] * dq[:, [0]]
    return generalized_r2(pred_pair, df, sig) - generalized_r2(pred_own, df, sig)


def pairwise_delta_r2_matrix(panel: MarketPanel, est: Optional[RollingEstimates] = None, model_kind: str = "ml",
                             **kwargs) -> PairwiseDeltaR2:
    est = rolling_estimates(panel) if est is None else est
    n = panel.n_tenors
    out = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            if a != b:
                out[a, b] = pairwise_delta_r2_empirical(panel, est, a + 1, b + 1, model_kind, **kwargs)
    return PairwiseDeltaR2(matrix=out, mode="empirical", model_kind=model_kind)


# --- pairwise, theory --------------------------------------------------


def delta_r2_ml_theory(rho_f1q1: float, rho_f1q2: float, rho_q1q2: float) -> float:
    """Added accuracy of the two-asset regression over the own-flow regression.

    ``(rho_f1q2 - rho_q1q2 rho_f1q1)^2 / (1 - rho_q1q2^2)``.
    """
    if abs(rho_q1q2) >= 1:
        raise NumericalError("flows of the two assets are perfectly correlated; the two-asset regression is singular")
    for v in (rho_f1q1, rho_f1q2):
        if not -1 < v < 1:
            raise DomainError(f"correlations must lie in (-1, 1), got {v}")
    return (rho_f1q2 - rho_q1q2 * rho_f1q1) ** 2 / (1 - rho_q1q2**2)


def delta_r2_ml_matrix(est: RollingEstimates) -> PairwiseDeltaR2:
    """Closed-form ML gains from the stationary correlations of a panel."""
    n = est.n_tenors
    out = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            if a != b:
                out[a, b] = delta_r2_ml_theory(est.rho_fq[a, a], est.rho_fq[a, b], est.rho_q[a, b])
    return PairwiseDeltaR2(matrix=out, mode="ml-theory", model_kind="ml")


@dataclass(frozen=True)
class KyleTwoAsset:
    """Population two-asset Kyle set-up behind :func:`delta_r2_kyle_numeric`."""

    sigma_cov: np.ndarray
    omega_cov: np.ndarray
    kyle: np.ndarray  # Lambda at y = 1
    cross_cov: np.ndarray  # E[df dq^T]
    r2_kyle: float
    r2_diag: float

    @property
    def delta_r2(self) -> float:
        return self.r2_kyle - self.r2_diag


def kyle_two_asset(liquidity_1: float, liquidity_2: float, rho_q: float, rho_f: float, y: float) -> KyleTwoAsset:
    """Exact-covariance two-asset market in which the Kyle model holds up to ``y``.

    ``sigma_i = omega_i = sqrt(liquidity_i)``.  The price-flow covariance is
    ``(y / c) K Omega`` with ``K`` the unit Kyle matrix and
    ``c = (K Omega)_11 / (sigma_1 omega_1)``, which makes
    ``rho(df_1, dq_1) = y`` exactly.  The prediction is ``y K dq``; the
    benchmark is the own-flow regression, whose R-squared is ``y^2``.

    Raises
    ------
    DomainError
        If the implied joint covariance of ``(df, dq)`` is not PSD.
    """
    if not (liquidity_1 > 0 and liquidity_2 > 0):
        raise DomainError("liquidities must be positive")
    if not (-1 < rho_q < 1 and -1 < rho_f < 1):
        raise DomainError("correlations must lie in (-1, 1)")
    if not 0 < y < 1:
        raise DomainError("y must lie in (0, 1)")
    s = np.sqrt([liquidity_1, liquidity_2])
    sig = np.outer(s, s) * np.array([[1.0, rho_f], [rho_f, 1.0]])
    om = np.outer(s, s) * np.array([[1.0, rho_q], [rho_q, 1.0]])
    s_half = psd_sqrt(sig)
    f = psd_sqrt(om)
    k = s_half @ o_sym(s_half, f) @ inv_psd_sqrt(om)
    k_om = k @ om
    c = k_om[0, 0] / (s[0] * s[0])
    cross = (y / c) * k_om
    joint = np.block([[sig, cross], [cross.T, om]])
    if np.linalg.eigvalsh(joint).min() < -1e-12 * np.abs(joint).max():
        raise DomainError(f"implied price-flow covariance is not PSD (y={y} exceeds c={c:.4f})")
    lam = y * k
    var1 = sig[0, 0]
    cov_pred = (cross @ lam.T)[0, 0]
    var_pred = (lam @ om @ lam.T)[0, 0]
    r2_kyle = (2 * cov_pred - var_pred) / var1
    r2_diag = cross[0, 0] ** 2 / (var1 * om[0, 0])
    return KyleTwoAsset(sig, om, k, cross, float(r2_kyle), float(r2_diag))


def delta_r2_kyle_numeric(liquidity_1: float, liquidity_2: float, rho_q: float, rho_f: float, y: float) -> float:
    """Population ``R2_kyle(W_sigma_1) - R2_diag(W_sigma_1)`` of :func:`kyle_two_asset`."""
    return kyle_two_asset(liquidity_1, liquidity_2, rho_q, rho_f, y).delta_r2


def kyle_liquidity_grid(rho_q: float = 0.5, rho_f: float = 0.75, y: float = 0.3,
                        liquidity: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """``Delta R2`` over a liquidity grid (default 10 log-spaced points on [0.1, 10])."""
    liquidity = np.logspace(-1, 1, 10) if liquidity is None else np.asarray(liquidity, float)
    out = np.array([[delta_r2_kyle_numeric(a, b, rho_q, rho_f, y) for b in liquidity] for a in liquidity])
    return liquidity, out


def delta_r2_bbdl(
    field_model: FieldModel,
    y: np.ndarray,
    mode: str = "eta-response",
    omega: Optional[np.ndarray] = None,
    omega_corr: Optional[np.ndarray] = None,
) -> PairwiseDeltaR2:
    """Theoretical pairwise gains of the field models.

    ``eta-response``: ``(diag(sigma_a)^-1 R)^2_{t t'} Y_{t'}^2`` (the
    diagonal holds the own-noise share).  ``flow-response``:
    ``lambda_{t t'}^2 w_{t'}^2 + 2 rho_{t t'} lambda_{t t} lambda_{t t'} w_t w_{t'}``
    with ``lambda`` the normalized BBDLS matrix of the ``{t, t'}`` sub-grid;
    the diagonal is zero.  ``omega`` are flow volatilities (default ones) and
    ``omega_corr`` their correlation (default identity).
    """
    n = field_model.n
    y = np.asarray(y, float)
    if y.shape != (n,):
        raise DomainError(f"Y must have length {n}")
    p = np.asarray(field_model.normalized_response)
    if mode == "eta-response":
        return PairwiseDeltaR2(matrix=p**2 * (y**2)[None, :], mode="bbdl-eta", model_kind="bbdlw")
    if mode != "flow-response":
        raise DomainError(f"unknown mode {mode!r}; expected 'eta-response' or 'flow-response'")
    w = np.ones(n) if omega is None else np.asarray(omega, float)
    rho = np.eye(n) if omega_corr is None else np.asarray(omega_corr, float)
    pairs = [(a, b) for a in range(n) for b in range(n) if a != b]
    idx = np.array(pairs)
    sub_p = np.stack([p[np.ix_(pr, pr)] for pr in pairs])
    sub_y = y[idx]
    sub_w = w[idx]
    sub_rho = np.stack([rho[np.ix_(pr, pr)] for pr in pairs])
    sub_om = sub_w[:, :, None] * sub_rho * sub_w[:, None, :]
    m = sub_p * sub_y[:, None, :]
    om_reg, ridge = ridge_regularize(sub_om)
    if np.any(ridge > 0):
        warnings.warn(f"{int(np.sum(ridge > 0))} singular 2x2 flow covariances were ridge-regularized", stacklevel=2)
    f = psd_sqrt(om_reg)
    o, _ = _o_sym(m, f, True)
    lam = m @ o @ inv_psd_sqrt(om_reg)
    l_self, l_cross = lam[:, 0, 0], lam[:, 0, 1]
    gain = l_cross**2 * sub_w[:, 1] ** 2 + 2 * sub_rho[:, 0, 1] * l_self * l_cross * sub_w[:, 0] * sub_w[:, 1]
    out = np.zeros((n, n))
    out[idx[:, 0], idx[:, 1]] = gain
    return PairwiseDeltaR2(matrix=out, mode="bbdls-flow", model_kind="bbdls")
