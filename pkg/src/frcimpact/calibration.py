"""Rolling estimators, ``kappa`` and ``Y`` fits, and period segmentation.

Daily volatilities are 20-day trailing means of squared increments taken
strictly before the day they are used on.  Correlations are stationary
full-period Pearson estimates, so that every day-level covariance is a
``diag(vol) rho diag(vol)`` product.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .errors import DomainError, EstimationError
from .field import (
    LARGE_PSI,
    SMALL_PSI,
    FieldModel,
    FieldParams,
    QuadratureSpec,
    TenorGrid,
    build_field_model,
    quad_dk,
    correlation_from_covariance,
)
from .impact import (
    EIG_TOL,
    _o_sym,
    field_factor,
    inv_psd_sqrt,
    lambda_stack,
    psd_sqrt,
    ridge_regularize,
)
from .panel import MarketPanel

WINDOW = 20
KAPPA_BOUNDS = (0.01, 100.0)
KAPPA_XTOL = 1e-4
SYM_CHECK = 1e-8


def _pearson_cross(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``corr(x_i, y_j)``; zero-variance columns give zero correlation."""
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    sx = np.sqrt(np.einsum("ij,ij->j", xc, xc))
    sy = np.sqrt(np.einsum("ij,ij->j", yc, yc))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (xc.T @ yc) / np.outer(sx, sy)
    out[~np.isfinite(out)] = 0.0
    return np.clip(out, -1.0, 1.0)


def _pearson(x: np.ndarray) -> np.ndarray:
    rho = _pearson_cross(x, x)
    rho = 0.5 * (rho + rho.T)
    np.fill_diagonal(rho, 1.0)
    return rho


@dataclass(frozen=True)
class RollingEstimates:
    """Day-level volatilities and stationary correlations of a panel.

    ``sigma_hat`` and ``omega_hat`` are ``(N, n)`` with NaN rows before the
    first full window; ``valid`` marks the usable days.
    """

    dates: np.ndarray
    sigma_hat: np.ndarray
    omega_hat: np.ndarray
    rho_f: np.ndarray
    rho_q: np.ndarray
    rho_fq: np.ndarray
    window: int = WINDOW
    zero_flow: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))

    @property
    def valid(self) -> np.ndarray:
        return np.all(np.isfinite(self.sigma_hat), axis=1) & np.all(np.isfinite(self.omega_hat), axis=1)

    @property
    def n_days(self) -> int:
        return self.sigma_hat.shape[0]

    @property
    def n_tenors(self) -> int:
        return self.sigma_hat.shape[1]

    def sigma_cov(self) -> np.ndarray:
        """``Sigma_hat(t_k)`` on valid days, ``(N_valid, n, n)``."""
        s = self.sigma_hat[self.valid]
        return s[:, :, None] * self.rho_f * s[:, None, :]

    def omega_cov(self) -> np.ndarray:
        w = self.omega_hat[self.valid]
        return w[:, :, None] * self.rho_q * w[:, None, :]

    def response(self) -> np.ndarray:
        """``R_hat(t_k) = diag(sigma_hat) rho_fq diag(omega_hat)`` on valid days."""
        s = self.sigma_hat[self.valid]
        w = self.omega_hat[self.valid]
        return s[:, :, None] * self.rho_fq * w[:, None, :]

    def with_correlations(self, other: "RollingEstimates") -> "RollingEstimates":
        """These volatilities combined with another period's correlations."""
        if other.n_tenors != self.n_tenors:
            raise DomainError("estimates cover different tenor grids")
        return replace(self, rho_f=other.rho_f, rho_q=other.rho_q, rho_fq=other.rho_fq)

    def select(self, tenors: Sequence[int]) -> "RollingEstimates":
        """Restriction to 0-based tenor columns."""
        idx = list(tenors)
        ix = np.ix_(idx, idx)
        return RollingEstimates(
            dates=self.dates,
            sigma_hat=self.sigma_hat[:, idx],
            omega_hat=self.omega_hat[:, idx],
            rho_f=self.rho_f[ix],
            rho_q=self.rho_q[ix],
            rho_fq=self.rho_fq[ix],
            window=self.window,
            zero_flow=self.zero_flow[idx],
        )


def trailing_rms(x: np.ndarray, window: int = WINDOW) -> np.ndarray:
    """Root of the mean of ``x**2`` over the ``window`` rows before each row.

    Rows ``0..window-1`` are NaN.
    """
    x = np.asarray(x, float)
    csum = np.concatenate([np.zeros((1, x.shape[1])), np.cumsum(x * x, axis=0)])
    out = np.full(x.shape, np.nan)
    if x.shape[0] > window:
        out[window:] = (csum[window:-1] - csum[:-window - 1]) / window
    return np.sqrt(np.clip(out, 0.0, None))


def rolling_estimates(panel: MarketPanel, window: int = WINDOW) -> RollingEstimates:
    """20-day trailing volatilities and full-period correlations.

    Raises
    ------
    DomainError
        If the panel has fewer than ``2 * window`` days.
    """
    if panel.n_days < 2 * window:
        raise DomainError(f"rolling estimates need at least {2 * window} days, got {panel.n_days}")
    df, dq = panel.delta_f, panel.delta_q
    zero_flow = np.all(dq == 0, axis=0)
    if np.any(zero_flow):
        warnings.warn(f"zero-flow tenors {list(np.flatnonzero(zero_flow) + 1)}; Omega_hat will be ridge-regularized", stacklevel=2)
    return RollingEstimates(
        dates=panel.dates,
        sigma_hat=trailing_rms(df, window),
        omega_hat=trailing_rms(dq, window),
        rho_f=_pearson(df),
        rho_q=_pearson(dq),
        rho_fq=_pearson_cross(df, dq),
        window=window,
        zero_flow=zero_flow,
    )


# --- kappa ---------------------------------------------------------------


def _model_corr(x: float, regime: str, grid: TenorGrid, spec: QuadratureSpec) -> np.ndarray:
    if regime == SMALL_PSI:
        return build_field_model(FieldParams.small_psi(x), grid).price_corr
    return correlation_from_covariance(quad_dk(2, x, grid, spec))


def explained_correlation_share(model: np.ndarray, empirical: np.ndarray) -> float:
    """Share of the off-diagonal correlation variance explained by ``model``."""
    off = ~np.eye(empirical.shape[0], dtype=bool)
    e = empirical[off]
    num = np.sum((model[off] - e) ** 2)
    den = np.sum((e - e.mean()) ** 2)
    if den == 0:
        return 1.0 if num < 1e-12 else 0.0
    return float(np.clip(1.0 - num / den, 0.0, 1.0))


@dataclass(frozen=True)
class KappaFit:
    kappa_hat: float
    kappa_r2: float
    boundary: bool
    loss: float
    regime: str = SMALL_PSI


def fit_kappa(
    empirical_corr: np.ndarray,
    grid: Optional[TenorGrid] = None,
    spec: QuadratureSpec = QuadratureSpec(),
    regime: str = SMALL_PSI,
    bounds: tuple = KAPPA_BOUNDS,
) -> KappaFit:
    """Fit the single stiffness parameter to an empirical price correlation.

    Minimizes the Frobenius distance between the model correlation and
    ``empirical_corr`` over ``log kappa`` (or ``log mu`` for large-psi).  A
    coarse log-grid scan locates the basin, then a bounded Brent search
    refines it to ``1e-4`` in ``log kappa``.

    Raises
    ------
    DomainError
        If ``empirical_corr`` is not a correlation matrix.
    """
    e = np.asarray(empirical_corr, float)
    if e.ndim != 2 or e.shape[0] != e.shape[1]:
        raise DomainError("empirical correlation must be square")
    if not np.allclose(np.diag(e), 1.0, atol=1e-10) or np.any(np.abs(e) > 1 + 1e-12):
        raise DomainError("empirical correlation must have a unit diagonal and entries in [-1, 1]")
    if not np.allclose(e, e.T, atol=1e-10):
        raise DomainError("empirical correlation must be symmetric")
    grid = TenorGrid(e.shape[0]) if grid is None else grid
    if grid.n != e.shape[0]:
        raise DomainError(f"grid has {grid.n} tenors, correlation is {e.shape[0]}x{e.shape[0]}")

    def loss(logk: float) -> float:
        return float(np.sum((_model_corr(np.exp(logk), regime, grid, spec) - e) ** 2))

    lo, hi = np.log(bounds[0]), np.log(bounds[1])
    scan = np.linspace(lo, hi, 41)
    values = np.array([loss(x) for x in scan])
    i = int(np.argmin(values))
    a, b = scan[max(i - 1, 0)], scan[min(i + 1, len(scan) - 1)]
    res = minimize_scalar(loss, bounds=(a, b), method="bounded", options={"xatol": KAPPA_XTOL})
    x, fx = (float(res.x), float(res.fun)) if res.fun <= values[i] else (float(scan[i]), float(values[i]))
    kappa = float(np.exp(x))
    boundary = bool(x - lo < 10 * KAPPA_XTOL or hi - x < 10 * KAPPA_XTOL)
    r2 = explained_correlation_share(_model_corr(kappa, regime, grid, spec), e)
    return KappaFit(kappa_hat=kappa, kappa_r2=r2, boundary=boundary, loss=fx, regime=regime)


# --- Y vector ------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationResult:
    """Fitted model parameters for one period.

    ``y_hat`` is the per-tenor vector for the field models and ``y_ratio``
    the scalar for diag/ml/kyle; ``y_zeroed`` lists 1-based tenors forced to
    zero by the BBDLS stabilization pass.
    """

    kind: str
    kappa_hat: float
    kappa_r2: float
    y_hat: Optional[np.ndarray] = None
    y_ratio: Optional[float] = None
    y_zeroed: tuple = ()
    period: tuple = (None, None)
    objective: float = float("nan")
    sweeps: int = 0
    converged: bool = True
    boundary: bool = False
    rho: Optional[RollingEstimates] = None
    flags: tuple = ()


def _valid_arrays(panel: MarketPanel, est: RollingEstimates):
    if est.n_days != panel.n_days or est.n_tenors != panel.n_tenors:
        raise DomainError("rolling estimates were computed on a different panel")
    v = est.valid
    return panel.delta_f[v], panel.delta_q[v], est.sigma_hat[v], est.omega_cov()


def _weights(sigma: np.ndarray, weighting: str) -> np.ndarray:
    if weighting == "w_sigma":
        with np.errstate(divide="ignore"):
            d = np.where(sigma > 0, 1.0 / np.where(sigma > 0, sigma, 1.0), 0.0)
        return d
    if weighting == "raw":
        return np.ones_like(sigma)
    raise DomainError(f"unknown weighting {weighting!r}; expected 'w_sigma' or 'raw'")


class _YProblem:
    """Weighted least squares in ``Y`` for fixed flow rotations.

    Day ``k`` contributes ``|| d_k * df_k - (d_k * sigma_k) * P (Y * z_k) ||^2``
    where ``z_k = O_k Omega_k^-1/2 dq_k``.
    """

    def __init__(self, df, dq, sigma, omega_cov, p, weighting):
        self.d = _weights(sigma, weighting)
        self.b = self.d * df
        self.a = self.d * sigma
        self.p = p
        self.sigma = sigma
        self.dq = dq
        omega_cov, self.ridge = ridge_regularize(omega_cov)
        self.f = psd_sqrt(omega_cov)
        self.f_inv = inv_psd_sqrt(omega_cov)
        self.z_white = np.einsum("kij,kj->ki", self.f_inv, dq)
        self.bb = float(np.sum(self.b**2))

    def quadratic(self, z):
        g_mat = self.a[:, :, None] * self.p[None]  # (N, n, n): rows scaled by a_k
        a_full = g_mat * z[:, None, :]
        h = np.einsum("kti,ktj->ij", a_full, a_full)
        g = np.einsum("kti,kt->i", a_full, self.b)
        return 0.5 * (h + h.T), g

    def rotated(self, y):
        """``O_sym`` flows for the current ``Y`` (pseudo-inverse where singular)."""
        m = field_factor(self.sigma, self.p, y)
        o, _ = _o_sym(m, self.f, True)
        return np.einsum("kij,kj->ki", o, self.z_white)

    def objective(self, y, z):
        pred = self.a * np.einsum("ij,kj->ki", self.p, y * z)
        return float(np.sum((self.b - pred) ** 2))

    def symmetric_value_grad(self, y):
        """Objective and gradient of the symmetric model.

        Uses ``Lambda_k = F^-1 sqrt(F M M^T F) F^-1`` with ``F = Omega^1/2``;
        the derivative of the root is taken in its eigenbasis,
        ``dS = V [(V^T dX V) / (s_i + s_j)] V^T``.
        """
        w_mat = self.f @ (self.sigma[:, :, None] * self.p[None])  # columns c_i = F diag(sigma) p_i
        c = w_mat * y[None, None, :]
        x = c @ np.swapaxes(c, 1, 2)
        evals, v = np.linalg.eigh(0.5 * (x + np.swapaxes(x, 1, 2)))
        s = np.sqrt(np.clip(evals, 0.0, None))
        sz = np.einsum("kij,kj->ki", v, s * np.einsum("kji,kj->ki", v, self.z_white))
        # sigma is already inside M, so only the weights scale the prediction
        pred = self.d * np.einsum("kij,kj->ki", self.f_inv, sz)
        r = self.b - pred
        value = float(np.sum(r * r))
        u = np.einsum("kij,kj->ki", self.f_inv, self.d * r)
        ut = np.einsum("kji,kj->ki", v, u)
        zt = np.einsum("kji,kj->ki", v, self.z_white)
        g_t = 0.5 * (ut[:, :, None] * zt[:, None, :] + zt[:, :, None] * ut[:, None, :])
        denom = s[:, :, None] + s[:, None, :]
        h_t = np.where(denom > 1e-300, g_t / np.where(denom > 1e-300, denom, 1.0), 0.0)
        wt = np.swapaxes(v, 1, 2) @ w_mat  # W in the eigenbasis
        quad = np.einsum("kai,kab,kbi->i", wt, h_t, wt)
        return value, -4.0 * y * quad


def _cd_sweep(h, g, y, lo, hi, free):
    for i in np.flatnonzero(free):
        if h[i, i] <= 1e-14 * max(1.0, np.max(np.abs(np.diag(h)))):
            y[i] = 0.0 if lo <= 0 <= hi else lo
            continue
        step = (h[i] @ y - g[i]) / h[i, i]
        y[i] = min(max(y[i] - step, lo), hi)
    return y


def _qp_value(h, g, bb, y):
    return float(y @ h @ y - 2 * g @ y + bb)


def _solve_box_qp(h, g, bb, y, lo, hi, free, tol, max_sweeps):
    obj = _qp_value(h, g, bb, y)
    for sweep in range(1, max_sweeps + 1):
        y = _cd_sweep(h, g, y, lo, hi, free)
        new = _qp_value(h, g, bb, y)
        if abs(obj - new) <= tol * max(abs(obj), 1e-300):
            return y, new, sweep, True
        obj = new
    return y, obj, max_sweeps, False


def _refine_symmetric(prob, y, lo, hi, free, tol, max_sweeps):
    """L-BFGS-B on the exact symmetric-model objective, tenors outside ``free`` held at 0."""
    y = np.where(free, y, 0.0)
    bounds = [(lo, hi) if f else (0.0, 0.0) for f in free]
    history = []

    def fun(x):
        val, grad = prob.symmetric_value_grad(x)
        history.append(val)
        return val, grad

    start = fun(y)[0]
    res = minimize(fun, y, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": max_sweeps, "ftol": tol, "gtol": 1e-10 * max(start, 1.0)})
    if res.fun > start:
        return y, start, 0, False
    return np.clip(res.x, lo, hi), float(res.fun), int(res.nit), bool(res.success)


def _lambda_is_stable(lam: np.ndarray) -> np.ndarray:
    """Per-day symmetric (Frobenius-relative 1e-8) and PSD (relative 1e-10) test."""
    norm = np.linalg.norm(lam, axis=(1, 2))
    asym = np.linalg.norm(lam - np.swapaxes(lam, 1, 2), axis=(1, 2))
    sym_ok = asym <= SYM_CHECK * np.where(norm > 0, norm, 1.0)
    w = np.linalg.eigvalsh(0.5 * (lam + np.swapaxes(lam, 1, 2)))
    scale = np.maximum(np.max(np.abs(w), axis=1), np.finfo(float).tiny)
    return sym_ok & (w.min(axis=1) >= -EIG_TOL * scale)


def explicit_bbdls_stack(problem: "_YProblem", y: np.ndarray) -> np.ndarray:
    """``diag(sigma) P diag(Y) O_sym Omega^-1/2`` evaluated as the literal product."""
    m = field_factor(problem.sigma, problem.p, y)
    o, _ = _o_sym(m, problem.f, True)
    return m @ o @ problem.f_inv


def fit_y(
    panel: MarketPanel,
    est: RollingEstimates,
    field_model: FieldModel,
    kind: str = "bbdlw",
    weighting: str = "w_sigma",
    relaxed: bool = False,
    tol: float = 1e-6,
    max_sweeps: int = 500,
) -> CalibrationResult:
    """Least-squares fit of the per-tenor flow share ``Y``.

    ``bbdlw`` is a box-constrained quadratic in ``Y`` solved by projected
    coordinate descent.  ``bbdls`` starts from the ``bbdlw`` solution and
    refines it with L-BFGS-B on the exact symmetric-model objective, then
    runs the stabilization pass: while some day's explicit ``Lambda`` product is not symmetric PSD
    within tolerance, the active tenor with the lowest ``sigma_hat*omega_hat``
    is fixed at zero and the fit is repeated.

    ``relaxed`` widens the box from ``[0, 1]`` to ``[-1, 1]``.
    """
    if kind not in ("bbdlw", "bbdls"):
        raise DomainError(f"fit_y handles the field kinds 'bbdlw' and 'bbdls', got {kind!r}")
    if field_model.n != panel.n_tenors:
        raise DomainError("field grid size differs from the panel")
    df, dq, sigma, omega_cov = _valid_arrays(panel, est)
    prob = _YProblem(df, dq, sigma, omega_cov, np.asarray(field_model.normalized_response), weighting)
    lo, hi = (-1.0, 1.0) if relaxed else (0.0, 1.0)
    n = panel.n_tenors
    flags = ("ridge",) if np.any(prob.ridge > 0) else ()
    zeroed: list[int] = []
    liquidity = np.nanmean(est.sigma_hat[est.valid] * est.omega_hat[est.valid], axis=0)

    while True:
        free = np.ones(n, bool)
        free[zeroed] = False
        y = np.zeros(n)
        h, g = prob.quadratic(prob.z_white)
        y, obj, sweeps, converged = _solve_box_qp(h, g, prob.bb, y, lo, hi, free, tol, max_sweeps)
        if kind == "bbdlw":
            break
        y, obj, sweeps, converged = _refine_symmetric(prob, y, lo, hi, free, tol, max_sweeps)
        stable = _lambda_is_stable(explicit_bbdls_stack(prob, y))
        if np.all(stable):
            break
        active = [i for i in range(n) if i not in zeroed]
        if len(active) <= 1:
            warnings.warn("BBDLS stabilization zeroed every tenor", stacklevel=2)
            zeroed = list(range(n))
            y = np.zeros(n)
            break
        worst = min(active, key=lambda i: liquidity[i])
        zeroed.append(worst)

    if not converged:
        warnings.warn(f"fit_y ({kind}) did not converge in {max_sweeps} sweeps; returning best iterate", stacklevel=2)
    y = np.clip(y, lo, hi)
    y[zeroed] = 0.0
    return CalibrationResult(
        kind=kind,
        kappa_hat=float(field_model.params.kappa) if field_model.params.kappa is not None else float("nan"),
        kappa_r2=float("nan"),
        y_hat=y,
        y_zeroed=tuple(sorted(i + 1 for i in zeroed)),
        period=(est.dates[0], est.dates[-1]) if len(est.dates) else (None, None),
        objective=obj,
        sweeps=sweeps,
        converged=converged,
        rho=est,
        flags=flags + (("pinv",) if np.any(y == 0) and kind == "bbdls" else ()),
    )


def unit_lambda(kind: str, est: RollingEstimates) -> tuple[np.ndarray, np.ndarray]:
    """Empirical ``Lambda`` at ``y = 1`` on the valid days, with the ridge applied."""
    kw = dict(omega_cov=est.omega_cov())
    if kind in ("diag", "ml"):
        kw["response"] = est.response()
    elif kind == "kyle":
        kw["sigma_cov"] = est.sigma_cov()
    else:
        raise DomainError(f"scalar y-ratio applies to diag, ml and kyle, got {kind!r}")
    lam, ridge, _ = lambda_stack(kind, **kw)
    return lam, ridge


def fit_y_ratio(
    panel: MarketPanel, est: RollingEstimates, kind: str, weighting: str = "w_sigma"
) -> CalibrationResult:
    """Closed-form weighted least-squares scalar ``y`` in ``[0, 1]``."""
    df, dq, sigma, _ = _valid_arrays(panel, est)
    lam, ridge = unit_lambda(kind, est)
    d = _weights(sigma, weighting)
    pred = np.einsum("kij,kj->ki", lam, dq) * d
    obs = df * d
    den = float(np.sum(pred * pred))
    y = float(np.clip(np.sum(pred * obs) / den, 0.0, 1.0)) if den > 0 else 0.0
    return CalibrationResult(
        kind=kind,
        kappa_hat=float("nan"),
        kappa_r2=float("nan"),
        y_ratio=y,
        period=(est.dates[0], est.dates[-1]),
        objective=float(np.sum((obs - y * pred) ** 2)),
        rho=est,
        flags=("ridge",) if np.any(ridge > 0) else (),
    )


def calibrate(
    panel: MarketPanel,
    kind: str,
    est: Optional[RollingEstimates] = None,
    weighting: str = "w_sigma",
    relaxed: bool = False,
    kappa: Optional[float] = None,
) -> tuple[CalibrationResult, Optional[FieldModel]]:
    """Full in-sample calibration of one model kind on a panel.

    Field kinds fit ``kappa`` to the panel's price correlation (unless given)
    and then ``Y``; the empirical kinds fit the scalar ``y``.
    """
    est = rolling_estimates(panel) if est is None else est
    if kind in ("diag", "ml", "kyle"):
        return fit_y_ratio(panel, est, kind, weighting), None
    grid = TenorGrid(panel.n_tenors)
    if kappa is None:
        kfit = fit_kappa(est.rho_f, grid)
        kappa, r2, boundary = kfit.kappa_hat, kfit.kappa_r2, kfit.boundary
    else:
        r2 = explained_correlation_share(build_field_model(FieldParams.small_psi(kappa), grid).price_corr, est.rho_f)
        boundary = False
    fm = build_field_model(FieldParams.small_psi(kappa), grid)
    res = fit_y(panel, est, fm, kind, weighting=weighting, relaxed=relaxed)
    return replace(res, kappa_hat=kappa, kappa_r2=r2, boundary=boundary), fm


# --- periods -------------------------------------------------------------


@dataclass(frozen=True)
class PeriodSplit:
    """A calendar block and the block whose parameters it is scored with out of sample."""

    index: int
    start: np.datetime64
    end: np.datetime64
    panel: MarketPanel
    out_of_sample_from: Optional[int]

    @property
    def in_sample_only(self) -> bool:
        return self.out_of_sample_from is None


def segment_periods(panel: MarketPanel, years_per_period: int = 3, min_days: int = 2 * WINDOW) -> list[PeriodSplit]:
    """Split a panel into consecutive blocks of ``years_per_period`` calendar years.

    Block ``p`` is scored out of sample with the parameters of block ``p-1``;
    the first block uses the last one.  A single block is in-sample only.
    Blocks with fewer than ``min_days`` rows are skipped with a warning.
    """
    if years_per_period < 1:
        raise DomainError("years_per_period must be a positive integer")
    years = panel.dates.astype("datetime64[Y]").astype(int)
    block = (years - years[0]) // years_per_period
    pieces = []
    for b in np.unique(block):
        rows = block == b
        if rows.sum() < min_days:
            warnings.warn(f"period {int(b) + 1} has {int(rows.sum())} days (< {min_days}); skipped", stacklevel=2)
            continue
        pieces.append(panel.select(rows))
    if not pieces:
        raise EstimationError("no period has enough days")
    k = len(pieces)
    out = []
    for i, sub in enumerate(pieces):
        src = None if k == 1 else (i - 1) % k
        out.append(PeriodSplit(index=i, start=sub.dates[0], end=sub.dates[-1], panel=sub, out_of_sample_from=src))
    return out
