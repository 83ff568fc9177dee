"""Euler simulation of the noise field and the synthetic panel generator.

The field obeys ``tau dA = -M A dt + J dB`` with ``B`` a vector of
independent unit Brownian motions built as ``dB = Y dB^q + Y_perp dB^perp``.
Daily outputs are the window integrals ``dA = int A dt`` and ``d_eta = int dB``.

Every tenor has its own pair of Philox streams spawned from the config seed,
so the draws do not depend on how the work is chunked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np
from scipy.signal import lfilter

from .errors import DomainError, NumericalError, ParameterError
from .field import SMALL_PSI, FieldModel, FieldParams, TenorGrid, build_field_model
from .flows import sample_autocorr
from .impact import o_sym, psd_sqrt, spectral_radius
from .panel import MarketPanel

BURN_IN_TAU = 10.0
DEFAULT_DT_FRACTION = 1.0 / 50.0
MAX_DT_FRACTION = 1.0 / 20.0
CHUNK_DRAWS = 1 << 22
Z_PASS = 4.0


@dataclass(frozen=True)
class SimConfig:
    """Inputs of a simulated market.

    ``omega`` is the equal-time flow covariance (default identity), ``sigma``
    the price volatility per tenor (default ``sigma_a``, i.e. ``df = dA``).
    ``method`` is ``"large-bin"`` (daily ``dA = R d_eta``) or ``"euler"``.
    ``rotation`` picks ``O = I`` or ``O = O_sym`` between flows and surprises.
    """

    field_params: FieldParams
    n: int = 5
    y_vector: Optional[np.ndarray] = None
    omega: Optional[np.ndarray] = None
    sigma: Optional[np.ndarray] = None
    euler_dt: Optional[float] = None
    days: int = 750
    seed: int = 0
    method: str = "large-bin"
    flow_ar: float = 0.0
    rotation: str = "identity"
    start_date: str = "2015-01-01"

    def __post_init__(self):
        p = self.field_params
        if p.regime != SMALL_PSI:
            raise ParameterError("simulation supports the small-psi regime only")
        if self.days < 40:
            raise ParameterError(f"days must be at least 40, got {self.days}")
        if self.euler_dt is not None and not 0 < self.euler_dt <= p.tau * MAX_DT_FRACTION:
            raise ParameterError(f"euler_dt={self.euler_dt} must lie in (0, tau/20={p.tau / 20}]")
        if self.method not in ("large-bin", "euler"):
            raise ParameterError(f"unknown method {self.method!r}")
        if self.rotation not in ("identity", "sym"):
            raise ParameterError(f"unknown rotation {self.rotation!r}")
        if not -1 < self.flow_ar < 1:
            raise ParameterError("flow_ar must lie in (-1, 1)")
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError("seed must be a 64-bit unsigned integer")
        TenorGrid(self.n)
        y = self.y
        if y.shape != (self.n,) or np.any(y < 0) or np.any(y > 1):
            raise DomainError("Y must have length n with entries in [0, 1]")
        om = self.omega_matrix
        if om.shape != (self.n, self.n):
            raise DomainError("omega must be n x n")
        psd_sqrt(om)
        if self.sigma is not None:
            s = np.asarray(self.sigma, float)
            if s.shape != (self.n,) or np.any(s <= 0):
                raise DomainError("sigma must be a positive length-n vector")

    @property
    def y(self) -> np.ndarray:
        return np.ones(self.n) if self.y_vector is None else np.asarray(self.y_vector, float)

    @property
    def omega_matrix(self) -> np.ndarray:
        return np.eye(self.n) if self.omega is None else np.asarray(self.omega, float)

    @property
    def dt(self) -> float:
        """Sub-step actually used: the requested ``euler_dt`` rounded down to divide a day."""
        return self.field_params.delta_t / self.steps_per_day

    @property
    def steps_per_day(self) -> int:
        p = self.field_params
        target = p.tau * DEFAULT_DT_FRACTION if self.euler_dt is None else self.euler_dt
        return int(math.ceil(p.delta_t / target - 1e-9))


@dataclass(frozen=True)
class SimOutput:
    delta_a: np.ndarray
    delta_eta: np.ndarray
    delta_eta_q: np.ndarray
    panel: Optional[MarketPanel]
    truth: dict = field(default_factory=dict)
    bridge: Optional[np.ndarray] = None


@numba.njit(cache=True)
def _euler_block(lower, diag, upper, jdiag, y, yperp, dt_over_tau, sqrt_dt, inv_tau, dt, a, wq, wp, half,
                 out_a, out_eta, out_q, out_bridge):
    n_win, steps, n = wq.shape
    new = np.empty(n)
    db = np.empty(n)
    acc_a = np.empty(n)
    acc_b = np.empty(n)
    acc_q = np.empty(n)
    mid = np.zeros(n)
    for d in range(n_win):
        acc_a[:] = 0.0
        acc_b[:] = 0.0
        acc_q[:] = 0.0
        for s in range(steps):
            for i in range(n):
                dq = wq[d, s, i] * sqrt_dt
                db[i] = y[i] * dq + yperp[i] * wp[d, s, i] * sqrt_dt
                acc_q[i] += dq
            for i in range(n):
                ma = diag[i] * a[i]
                if i > 0:
                    ma += lower[i] * a[i - 1]
                if i < n - 1:
                    ma += upper[i] * a[i + 1]
                new[i] = a[i] - dt_over_tau * ma + inv_tau * jdiag[i] * db[i]
            for i in range(n):
                a[i] = new[i]
                acc_a[i] += a[i] * dt
                acc_b[i] += db[i]
            if s == half - 1:
                for i in range(n):
                    mid[i] = acc_b[i]
        for i in range(n):
            if not np.isfinite(a[i]):
                return False
            out_a[d, i] = acc_a[i]
            out_eta[d, i] = acc_b[i]
            out_q[d, i] = acc_q[i]
            out_bridge[d, i] = mid[i] - 0.5 * acc_b[i]
    return True


def _streams(seed: int, n: int) -> tuple[list, list]:
    children = np.random.SeedSequence(int(seed)).spawn(2 * n)
    gens = [np.random.Generator(np.random.Philox(c)) for c in children]
    return gens[:n], gens[n:]


def _draw(gens: list, windows: int, steps: int) -> np.ndarray:
    return np.stack([g.standard_normal(windows * steps).reshape(windows, steps) for g in gens], axis=2)


def _tridiagonal(m: np.ndarray):
    n = m.shape[0]
    lower = np.zeros(n)
    upper = np.zeros(n)
    lower[1:] = np.diag(m, -1)
    upper[:-1] = np.diag(m, 1)
    return lower, np.diag(m).copy(), upper


def euler_windows(model: FieldModel, y: np.ndarray, dt: float, steps_per_window: int, windows: int, seed: int,
                  burn_in: bool = True):
    """Integrate the field and return per-window ``(dA, d_eta, d_eta^q, bridge)``.

    ``bridge`` is ``B(mid-window) - B(window)/2`` for the total noise.

    Raises
    ------
    NumericalError
        If ``I - (dt/tau) M`` has spectral radius ``>= 1`` or the state blows up.
    """
    tau = model.params.tau
    m = np.asarray(model.m_matrix)
    radius = spectral_radius(np.eye(model.n) - (dt / tau) * m)
    if radius >= 1.0:
        raise NumericalError(f"Euler step unstable: spectral radius of I - (dt/tau) M is {radius:.6f} >= 1")
    n = model.n
    lower, diag, upper = _tridiagonal(m)
    jdiag = np.diag(model.j_matrix).copy()
    y = np.asarray(y, float)
    yperp = np.sqrt(np.clip(1.0 - y * y, 0.0, None))
    gq, gp = _streams(seed, n)
    a = np.zeros(n)
    args = (lower, diag, upper, jdiag, y, yperp, dt / tau, math.sqrt(dt), 1.0 / tau, dt)
    half = max(steps_per_window // 2, 1)
    if burn_in:
        burn = int(math.ceil(BURN_IN_TAU * tau / dt))
        scratch = [np.empty((1, n)) for _ in range(4)]
        ok = _euler_block(*args, a, _draw(gq, 1, burn), _draw(gp, 1, burn), 1, *scratch)
        if not ok:
            raise NumericalError("field state diverged during burn-in")
    outs = [np.empty((windows, n)) for _ in range(4)]
    chunk = max(1, CHUNK_DRAWS // (steps_per_window * n))
    for start in range(0, windows, chunk):
        stop = min(start + chunk, windows)
        w = stop - start
        ok = _euler_block(*args, a, _draw(gq, w, steps_per_window), _draw(gp, w, steps_per_window), half,
                          *(o[start:stop] for o in outs))
        if not ok:
            raise NumericalError(f"field state diverged (spectral radius {radius:.6f})")
    return tuple(outs)


def _model(cfg: SimConfig) -> FieldModel:
    return build_field_model(cfg.field_params, TenorGrid(cfg.n))


def simulate_field(cfg: SimConfig) -> SimOutput:
    """Explicit Euler run returning daily ``dA`` and ``d_eta`` (no panel)."""
    model = _model(cfg)
    da, deta, deta_q, bridge = euler_windows(model, cfg.y, cfg.dt, cfg.steps_per_day, cfg.days, cfg.seed)
    truth = {"kappa": cfg.field_params.kappa, "tau": cfg.field_params.tau, "dt": cfg.dt, "seed": int(cfg.seed)}
    return SimOutput(delta_a=da, delta_eta=deta, delta_eta_q=deta_q, panel=None, truth=truth, bridge=bridge)


def _ar_filter(x: np.ndarray, a: float) -> np.ndarray:
    """Stationary AR(1) with unit equal-time scale: ``y_t = a y_{t-1} + sqrt(1-a^2) x_t``, ``y_0 = x_0``."""
    if a == 0:
        return x
    b = math.sqrt(1.0 - a * a)
    zi = (1.0 - b) * x[0]
    return np.stack([lfilter([b], [1.0, -a], x[:, j], zi=[zi[j]])[0] for j in range(x.shape[1])], axis=1)


def business_days(start: str, count: int) -> np.ndarray:
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    return np.busday_offset(first, np.arange(count), roll="forward")


def true_rotation(cfg: SimConfig, model: FieldModel) -> np.ndarray:
    """Rotation ``O`` linking surprises to whitened flows in the generator."""
    if cfg.rotation == "identity":
        return np.eye(cfg.n)
    sigma = model.sigma_a if cfg.sigma is None else np.asarray(cfg.sigma, float)
    m = sigma[:, None] * model.normalized_response * cfg.y[None, :]
    return o_sym(m, psd_sqrt(cfg.omega_matrix), allow_pinv=True)


def gen_synthetic_panel(cfg: SimConfig) -> SimOutput:
    """Synthetic daily panel with known ``kappa``, ``Y``, ``sigma`` and ``Omega``.

    Flows are ``dq = Omega^1/2 O^T d_eta^q`` (AR(1)-filtered when
    ``flow_ar != 0``), the total noise is ``Y d_eta^q + Y_perp d_eta^perp`` and
    ``df = diag(sigma) diag(sigma_a)^-1 dA``.
    """
    model = _model(cfg)
    n, days = cfg.n, cfg.days
    dtd = cfg.field_params.delta_t
    y = cfg.y
    if cfg.method == "euler":
        da, deta, deta_q, bridge = euler_windows(model, y, cfg.dt, cfg.steps_per_day, days, cfg.seed)
    else:
        gq, gp = _streams(cfg.seed, n)
        deta_q = math.sqrt(dtd) * _draw(gq, days, 1)[:, 0, :]
        deta_p = math.sqrt(dtd) * _draw(gp, days, 1)[:, 0, :]
        deta = y * deta_q + np.sqrt(np.clip(1 - y * y, 0, None)) * deta_p
        da = deta @ np.asarray(model.response).T
        bridge = None
    rot = true_rotation(cfg, model)
    innov = deta_q @ rot  # rows are (O^T d_eta^q)^T
    dq = _ar_filter(innov, cfg.flow_ar) @ psd_sqrt(cfg.omega_matrix).T
    sigma = model.sigma_a if cfg.sigma is None else np.asarray(cfg.sigma, float)
    df = da * (sigma / model.sigma_a)
    panel = MarketPanel(business_days(cfg.start_date, days), df, dq)
    truth = {
        "kappa": float(cfg.field_params.kappa),
        "tau": cfg.field_params.tau,
        "y": y.tolist(),
        "sigma": np.asarray(sigma).tolist(),
        "omega": cfg.omega_matrix.tolist(),
        "rotation": cfg.rotation,
        "flow_ar": cfg.flow_ar,
        "method": cfg.method,
        "seed": int(cfg.seed),
    }
    return SimOutput(delta_a=da, delta_eta=deta, delta_eta_q=deta_q, panel=panel, truth=truth, bridge=bridge)


@dataclass(frozen=True)
class McReport:
    """z-scores of simulated statistics against closed-form predictions."""

    z_correlator: np.ndarray
    z_response: np.ndarray
    z_price_corr: np.ndarray
    z_lag1: np.ndarray
    z_bridge: np.ndarray
    n_days: int

    @property
    def max_z(self) -> dict:
        return {
            "correlator": float(np.max(np.abs(self.z_correlator))),
            "response": float(np.max(np.abs(self.z_response))),
            "price_corr": float(np.nanmax(np.abs(self.z_price_corr))),
            "lag1": float(np.max(np.abs(self.z_lag1))),
            "bridge": float(np.max(np.abs(self.z_bridge))),
        }

    @property
    def passed(self) -> bool:
        return max(self.max_z.values()) <= Z_PASS


def mc_verify(cfg: SimConfig, model: Optional[FieldModel] = None, out: Optional[SimOutput] = None) -> McReport:
    """Compare an Euler run with ``C``, ``R`` and the price correlation.

    Standard errors use Gaussian fourth moments evaluated at the theory:
    ``sqrt((C_ii C_jj + C_ij^2)/N)`` for ``C``, ``sqrt((C_ii + R_ij^2)/N)``
    for ``R`` and ``(1 - rho^2)/sqrt(N)`` for correlations.  ``z_lag1`` is the
    day-to-day autocorrelation of ``dA`` and ``z_bridge`` the correlation of
    each day's noise with its mid-day bridge residual, both times ``sqrt(N)``.
    """
    model = _model(cfg) if model is None else model
    if model.n != cfg.n or model.params.kappa != cfg.field_params.kappa:
        raise DomainError("field model and simulation config disagree")
    out = simulate_field(cfg) if out is None else out
    da, deta = out.delta_a, out.delta_eta
    n_days = da.shape[0]
    dtd = cfg.field_params.delta_t
    c = np.asarray(model.correlator)
    r = np.asarray(model.response)
    c_hat = da.T @ da / (n_days * dtd)
    r_hat = da.T @ deta / (n_days * dtd)
    cd = np.diag(c)
    z_c = (c_hat - c) / np.sqrt((np.outer(cd, cd) + c**2) / n_days)
    z_r = (r_hat - r) / np.sqrt((cd[:, None] + r**2) / n_days)
    rho = np.asarray(model.price_corr)
    rho_hat = np.corrcoef(da, rowvar=False)
    with np.errstate(invalid="ignore", divide="ignore"):
        z_rho = (rho_hat - rho) / ((1 - rho**2) / np.sqrt(n_days))
    np.fill_diagonal(z_rho, 0.0)
    lag1 = sample_autocorr(da, 1)[1]
    bridge = out.bridge if out.bridge is not None else np.zeros_like(da)
    rb = np.array([np.corrcoef(deta[:, i], bridge[:, i])[0, 1] for i in range(cfg.n)])
    return McReport(
        z_correlator=z_c,
        z_response=z_r,
        z_price_corr=z_rho,
        z_lag1=lag1 * np.sqrt(n_days),
        z_bridge=np.nan_to_num(rb) * np.sqrt(n_days),
        n_days=n_days,
    )


@dataclass(frozen=True)
class SubdailyAutocorr:
    lags_tau: np.ndarray
    rho: np.ndarray  # (max_lag, n)
    band: float


def subdaily_autocorr(cfg: SimConfig, bin_width: float, bins: int, max_lag: int) -> SubdailyAutocorr:
    """Autocorrelation of field increments integrated over short bins.

    ``bin_width`` is in days and must be a whole number of Euler sub-steps.
    """
    model = _model(cfg)
    dt = cfg.field_params.tau * DEFAULT_DT_FRACTION if cfg.euler_dt is None else cfg.euler_dt
    steps = int(round(bin_width / dt))
    if steps < 1 or abs(steps * dt - bin_width) > 1e-9 * bin_width:
        raise DomainError(f"bin_width={bin_width} is not a multiple of dt={dt}")
    da, _, _, _ = euler_windows(model, cfg.y, dt, steps, bins, cfg.seed)
    rho = sample_autocorr(da, max_lag)[1:]
    return SubdailyAutocorr(
        lags_tau=np.arange(1, max_lag + 1) * bin_width / cfg.field_params.tau,
        rho=rho,
        band=1.96 / np.sqrt(bins),
    )
