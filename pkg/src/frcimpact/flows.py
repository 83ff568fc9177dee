"""Temporal structure of daily flows and their martingale surprise.

Flows are assumed to have a factorized lagged covariance
``Omega(l) = diag(phi(l)) Omega``.  In discrete time the surprise is obtained
by filtering each tenor with the causal inverse ``Phi`` of its one-sided
autocorrelation ``phi`` (``(phi * Phi)(l) = delta_l0`` up to ``max_lag``) and
then mixing the filtered flows with ``Omega^-1/2``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular, toeplitz
from scipy.signal import lfilter

from .errors import DomainError, EstimationError
from .impact import inv_psd_sqrt, ridge_regularize
from .panel import MarketPanel

DEFAULT_MAX_LAG = 20


@dataclass(frozen=True)
class FlowAutocorr:
    """Per-lag and accumulated autocorrelations of one tenor's flow.

    ``conf_band`` is the single-lag band ``1.96/sqrt(N)``.  A sum of ``l``
    white-noise autocorrelations has standard deviation ``sqrt(l/N)``, so the
    accumulated values are compared with ``accumulated_band = 1.96 sqrt(l/N)``.
    """

    tenor: int
    lags: np.ndarray
    rho: np.ndarray
    accumulated: np.ndarray
    conf_band: float
    accumulated_band: np.ndarray

    @property
    def outside_band(self) -> bool:
        """Whether the accumulated autocorrelation exits its band at the last lag."""
        return bool(abs(self.accumulated[-1]) > self.accumulated_band[-1])


@dataclass(frozen=True)
class WhiteningKernel:
    phi: np.ndarray  # (L+1, n)
    phi_inv: np.ndarray  # (L+1, n)
    omega_root_inv: np.ndarray  # (n, n)
    ridge: float = 0.0

    @property
    def max_lag(self) -> int:
        return self.phi.shape[0] - 1


def sample_autocorr(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Pearson autocorrelations of each column at lags ``0..max_lag``.

    Uses the standard biased estimator (full-sample mean and variance), so the
    lag-0 value is exactly 1.  Zero-variance columns return NaN.
    """
    x = np.asarray(x, float)
    if x.ndim == 1:
        x = x[:, None]
    xc = x - x.mean(axis=0)
    var = np.einsum("ij,ij->j", xc, xc)
    out = np.empty((max_lag + 1, x.shape[1]))
    for lag in range(max_lag + 1):
        out[lag] = np.einsum("ij,ij->j", xc[lag:], xc[: len(xc) - lag])
    with np.errstate(invalid="ignore", divide="ignore"):
        out = out / var
    out[:, var == 0] = np.nan
    return out


def accumulated_autocorr(panel: MarketPanel, max_lag: int = DEFAULT_MAX_LAG) -> list[FlowAutocorr]:
    """Accumulated autocorrelation of each tenor's daily flow.

    Zero-variance tenors are excluded from the result (a warning names them).
    Bands: ``1.96/sqrt(N)`` per lag and ``1.96 sqrt(l/N)`` for the running sum.
    """
    n_days = panel.n_days
    if n_days < 10 * max_lag:
        raise DomainError(f"need at least {10 * max_lag} days for max_lag={max_lag}, got {n_days}")
    rho = sample_autocorr(panel.delta_q, max_lag)
    band = 1.96 / np.sqrt(n_days)
    lags = np.arange(1, max_lag + 1)
    acc_band = band * np.sqrt(lags)
    out = []
    skipped = []
    for j in range(panel.n_tenors):
        if np.isnan(rho[0, j]):
            skipped.append(j + 1)
            continue
        r = rho[1:, j]
        out.append(FlowAutocorr(tenor=j + 1, lags=lags, rho=r, accumulated=np.cumsum(r), conf_band=band,
                                accumulated_band=acc_band))
    if skipped:
        warnings.warn(f"zero-variance flow tenors excluded: {skipped}", stacklevel=2)
    return out


def deconvolve_autocorr(phi: np.ndarray) -> np.ndarray:
    """Causal convolutional inverse of a one-sided autocorrelation sequence.

    Solves the lower-triangular Toeplitz system ``T Phi = e_0`` with
    ``T[i, j] = phi[i - j]``.  Works column-wise on a ``(L+1, n)`` array.
    """
    phi = np.asarray(phi, float)
    squeeze = phi.ndim == 1
    if squeeze:
        phi = phi[:, None]
    if np.any(~(phi[0] > 0)):
        raise EstimationError("Toeplitz deconvolution needs phi(0) > 0")
    e0 = np.zeros(phi.shape[0])
    e0[0] = 1.0
    cols = []
    for j in range(phi.shape[1]):
        t = toeplitz(phi[:, j], np.zeros(phi.shape[0]))
        cols.append(solve_triangular(t, e0, lower=True))
    out = np.stack(cols, axis=1)
    return out[:, 0] if squeeze else out


def _filter(delta_q: np.ndarray, phi_inv: np.ndarray) -> np.ndarray:
    return np.stack([lfilter(phi_inv[:, j], [1.0], delta_q[:, j]) for j in range(delta_q.shape[1])], axis=1)


def fit_whitening(panel: MarketPanel, max_lag: int = DEFAULT_MAX_LAG) -> WhiteningKernel:
    """Estimate per-tenor ``phi``, its causal inverse and ``Omega^-1/2``.

    ``Omega`` is the equal-time covariance of the filtered flows, so that the
    surprise has unit variance.
    """
    if panel.n_days < 20 * max_lag:
        raise DomainError(f"need at least {20 * max_lag} days for max_lag={max_lag}, got {panel.n_days}")
    phi = sample_autocorr(panel.delta_q, max_lag)
    if np.any(np.isnan(phi[0])):
        raise EstimationError("a flow tenor has zero variance; cannot estimate its autocorrelation")
    phi_inv = deconvolve_autocorr(phi)
    filtered = _filter(panel.delta_q, phi_inv)[max_lag:]
    cov = np.cov(filtered, rowvar=False)
    cov, ridge = ridge_regularize(cov)
    return WhiteningKernel(phi=phi, phi_inv=phi_inv, omega_root_inv=inv_psd_sqrt(cov), ridge=float(ridge))


def surprise_flows(panel: MarketPanel, kernel: WhiteningKernel, drop_warmup: bool = True) -> np.ndarray:
    """Whitened flow surprises ``Omega^-1/2 (Phi * dq)``.

    The first ``max_lag`` rows depend on pre-sample flows and are dropped
    unless ``drop_warmup`` is False.
    """
    if kernel.phi_inv.shape[1] != panel.n_tenors or kernel.omega_root_inv.shape != (panel.n_tenors,) * 2:
        raise DomainError("whitening kernel was fitted on a different tenor grid")
    filtered = _filter(panel.delta_q, kernel.phi_inv)
    if drop_warmup:
        filtered = filtered[kernel.max_lag:]
    return filtered @ kernel.omega_root_inv.T


def whiten_panel(panel: MarketPanel, kernel: WhiteningKernel) -> MarketPanel:
    """Panel whose flows are replaced by ``Phi * dq`` (the martingale flow), warm-up dropped.

    Flow units are preserved, so the result can be fed to the calibration in
    place of the raw panel.
    """
    filtered = _filter(panel.delta_q, kernel.phi_inv)[kernel.max_lag:]
    return MarketPanel(panel.dates[kernel.max_lag:], panel.delta_f[kernel.max_lag:], filtered)
