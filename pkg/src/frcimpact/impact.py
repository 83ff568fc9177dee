"""Cross-impact matrices and the sub-daily impulse response.

Five estimators map daily signed flows ``dq`` to expected rate moves
``df_hat = Lambda dq``:

========  =============================================================
diag      ``y * diag(R_hat) * diag(Omega_hat)^-1``
ml        ``y * R_hat * Omega_hat^-1``
kyle      ``y * S^1/2 O_sym(S^1/2, Omega^1/2) Omega^-1/2`` (``S = Sigma_hat``)
bbdlw     ``diag(sigma) diag(sigma_a)^-1 R diag(Y) Omega^-1/2``
bbdls     bbdlw with ``O_sym(M, Omega^1/2)`` inserted before ``Omega^-1/2``
========  =============================================================

Every matrix factor ``X^1/2`` is the symmetric PSD root.  The ``*_stack``
helpers work on day-stacked ``(N, n, n)`` arrays and back both the single-day
:func:`build_lambda` and the rolling calibration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError, NumericalError
from .field import FieldModel

KINDS = ("diag", "ml", "kyle", "bbdlw", "bbdls")
SYM_TOL = 1e-10
EIG_TOL = 1e-10
RIDGE_SCALE = 1e-10
MAX_CONDITION = 1e12


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def _scale(a: np.ndarray) -> np.ndarray:
    return np.maximum(1.0, np.max(np.abs(a), axis=(-1, -2)))


def psd_sqrt(s: np.ndarray, tol: float = EIG_TOL, rank_cutoff: bool = False) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Accepts a single matrix or a stack ``(..., n, n)``.  Eigenvalues down to
    ``-tol`` (relative to ``max(1, max|s|)``) are clipped to zero.  With
    ``rank_cutoff`` eigenvalues below ``n * eps * max(w)`` are also zeroed, so
    an exactly singular input keeps its null space instead of gaining
    ``sqrt(eps)``-sized noise components.

    Raises
    ------
    DomainError
        If ``s`` is not symmetric within ``tol`` or has a more negative
        eigenvalue.
    """
    s = np.asarray(s, dtype=float)
    scale = _scale(s)
    if np.any(np.max(np.abs(s - _swap(s)), axis=(-1, -2)) > tol * scale):
        raise DomainError("matrix square root requires a symmetric input")
    w, v = np.linalg.eigh(0.5 * (s + _swap(s)))
    if np.any(w.min(axis=-1) < -tol * scale):
        raise DomainError(f"matrix square root requires a PSD input (min eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    if rank_cutoff:
        floor = s.shape[-1] * np.finfo(float).eps * w.max(axis=-1, keepdims=True)
        w = np.where(w > floor, w, 0.0)
    root = (v * np.sqrt(w)[..., None, :]) @ _swap(v)
    return 0.5 * (root + _swap(root))


def inv_psd_sqrt(s: np.ndarray) -> np.ndarray:
    """Inverse symmetric root ``s^-1/2`` of a positive definite (stack of) matrix."""
    s = np.asarray(s, dtype=float)
    w, v = np.linalg.eigh(0.5 * (s + _swap(s)))
    if np.any(w <= 0):
        raise NumericalError("inverse square root of a singular matrix")
    root = (v / np.sqrt(w)[..., None, :]) @ _swap(v)
    return 0.5 * (root + _swap(root))


def ridge_regularize(cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Add ``1e-10 * trace/n`` to the diagonal of near-singular covariances.

    Returns the (possibly) regularized stack and the ridge applied per matrix
    (zero where none was needed).
    """
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[-1]
    ridge = RIDGE_SCALE * np.trace(cov, axis1=-2, axis2=-1) / n
    w = np.linalg.eigvalsh(0.5 * (cov + _swap(cov)))
    need = w.min(axis=-1) <= ridge
    ridge = np.where(need, np.where(ridge > 0, ridge, RIDGE_SCALE), 0.0)
    return cov + ridge[..., None, None] * np.eye(n), ridge


def is_symmetric(a: np.ndarray, tol: float = 1e-8) -> bool:
    """Frobenius-relative symmetry test."""
    a = np.asarray(a, dtype=float)
    norm = np.linalg.norm(a)
    return bool(norm == 0 or np.linalg.norm(a - a.T) <= tol * norm)


def is_psd(a: np.ndarray, tol: float = EIG_TOL) -> bool:
    """Eigenvalues of the symmetric part are ``>= -tol * max|eig|``."""
    w = np.linalg.eigvalsh(0.5 * (a + a.T))
    return bool(w.min() >= -tol * max(np.max(np.abs(w)), np.finfo(float).tiny))


def _solve_or_pinv(m: np.ndarray, rhs: np.ndarray, allow_pinv: bool) -> tuple[np.ndarray, bool]:
    cond = np.linalg.cond(m)
    bad = ~np.isfinite(cond) | (cond > MAX_CONDITION)
    if np.any(bad) and not allow_pinv:
        raise NumericalError(f"O_sym needs an invertible M (condition estimate {np.max(cond):.3e})")
    if not np.any(bad):
        return np.linalg.solve(m, rhs), False
    return np.linalg.pinv(m) @ rhs, True


def o_sym(m: np.ndarray, omega_half: np.ndarray, allow_pinv: bool = False) -> np.ndarray:
    """Rotation making ``M O Omega^-1/2`` symmetric positive semi-definite.

    ``O = M^-1 (Omega^-1/2)^T sqrt((Omega^1/2)^T M M^T Omega^1/2)``.  Works on
    stacks.  With ``allow_pinv`` a singular ``M`` is pseudo-inverted; the
    resulting ``M O Omega^-1/2`` is still the unique PSD solution of
    ``L Omega L = M M^T``.
    """
    return _o_sym(np.asarray(m, float), np.asarray(omega_half, float), allow_pinv)[0]


def _o_sym(m, omega_half, allow_pinv):
    f_inv_t = _swap(np.linalg.inv(omega_half))
    inner = _swap(omega_half) @ m @ _swap(m) @ omega_half
    root = psd_sqrt(0.5 * (inner + _swap(inner)), tol=1e-8, rank_cutoff=True)
    o, used_pinv = _solve_or_pinv(m, f_inv_t @ root, allow_pinv)
    return o, used_pinv


@dataclass(frozen=True)
class DayEstimates:
    """Day-level covariance estimates used by the empirical estimators."""

    sigma_cov: Optional[np.ndarray] = None
    response: Optional[np.ndarray] = None
    omega_cov: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ImpactInputs:
    """Model inputs for one day.

    ``sigma`` is in rate units/day, ``omega`` in notional units/day and
    ``omega_corr`` is the flow correlation matrix.  ``y_vector`` feeds the
    field models, ``y_ratio`` the diag/ml/kyle estimators.
    """

    sigma: np.ndarray
    omega: np.ndarray
    omega_corr: np.ndarray
    field: Optional[FieldModel] = None
    y_vector: Optional[np.ndarray] = None
    y_ratio: float = 1.0

    def __post_init__(self):
        sigma = np.asarray(self.sigma, float)
        omega = np.asarray(self.omega, float)
        corr = np.asarray(self.omega_corr, float)
        n = sigma.shape[0]
        if omega.shape != (n,) or corr.shape != (n, n):
            raise DomainError("sigma, omega and omega_corr dimensions disagree")
        if np.any(sigma < 0) or np.any(omega < 0):
            raise DomainError("volatilities must be non-negative")
        if not np.allclose(corr, corr.T, atol=1e-12) or not np.allclose(np.diag(corr), 1.0):
            raise DomainError("omega_corr must be a symmetric matrix with unit diagonal")
        if np.linalg.eigvalsh(corr).min() < -1e-10:
            raise DomainError("omega_corr must be positive semi-definite")
        if self.y_vector is not None:
            y = np.asarray(self.y_vector, float)
            if y.shape != (n,) or np.any(np.abs(y) > 1):
                raise DomainError("y_vector must have length n and entries in [-1, 1]")
        if not 0 <= self.y_ratio <= 1:
            raise DomainError("y_ratio must lie in [0, 1]")
        if self.field is not None and self.field.n != n:
            raise DomainError("field grid size differs from the inputs")

    @property
    def n(self) -> int:
        return len(self.sigma)

    @property
    def omega_cov(self) -> np.ndarray:
        w = np.asarray(self.omega, float)
        return np.outer(w, w) * np.asarray(self.omega_corr, float)


@dataclass(frozen=True)
class ImpactModel:
    kind: str
    lam: np.ndarray
    inputs: Optional[ImpactInputs] = None
    date: Optional[np.datetime64] = None
    ridge: float = 0.0
    flags: tuple = field(default_factory=tuple)

    def predict(self, dq: np.ndarray) -> np.ndarray:
        return np.asarray(dq, float) @ self.lam.T


def lambda_stack(
    kind: str,
    *,
    sigma: Optional[np.ndarray] = None,
    omega_cov: np.ndarray,
    normalized_response: Optional[np.ndarray] = None,
    y_vector: Optional[np.ndarray] = None,
    y_ratio: float = 1.0,
    sigma_cov: Optional[np.ndarray] = None,
    response: Optional[np.ndarray] = None,
    allow_pinv: bool = True,
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Cross-impact matrices for a stack of days.

    Parameters
    ----------
    kind : str
        One of :data:`KINDS`.
    sigma : (N, n) array
        Daily price volatilities (field models).
    omega_cov : (N, n, n) array
        Daily flow covariances ``Omega_hat``.
    normalized_response : (n, n) array
        ``diag(sigma_a)^-1 R`` of the field model (field models).
    sigma_cov, response : (N, n, n) arrays
        ``Sigma_hat`` and ``R_hat`` (empirical models).

    Returns
    -------
    lam : (N, n, n) array
    ridge : (N,) array
        Ridge added to each ``Omega_hat``.
    used_pinv : bool
        Whether a singular ``M`` forced the pseudo-inverse path.
    """
    if kind not in KINDS:
        raise DomainError(f"unknown impact kind {kind!r}; expected one of {KINDS}")
    omega_cov, ridge = ridge_regularize(np.asarray(omega_cov, float))
    used_pinv = False
    if kind in ("diag", "ml"):
        if response is None:
            raise DomainError(f"{kind} model needs R_hat")
        response = np.asarray(response, float)
        if kind == "diag":
            d = np.diagonal(response, axis1=-2, axis2=-1) / np.diagonal(omega_cov, axis1=-2, axis2=-1)
            lam = y_ratio * d[..., :, None] * np.eye(omega_cov.shape[-1])
        else:
            lam = y_ratio * _swap(np.linalg.solve(omega_cov, _swap(response)))
        return lam, ridge, used_pinv
    f = psd_sqrt(omega_cov)
    f_inv = inv_psd_sqrt(omega_cov)
    if kind == "kyle":
        if sigma_cov is None:
            raise DomainError("kyle model needs Sigma_hat")
        s_half = psd_sqrt(np.asarray(sigma_cov, float))
        o, used_pinv = _o_sym(s_half, f, allow_pinv)
        lam = y_ratio * s_half @ o @ f_inv
        return lam, ridge, used_pinv
    if sigma is None or normalized_response is None or y_vector is None:
        raise DomainError(f"{kind} model needs sigma, the field response and Y")
    m = field_factor(np.asarray(sigma, float), normalized_response, np.asarray(y_vector, float))
    if kind == "bbdlw":
        return m @ f_inv, ridge, used_pinv
    o, used_pinv = _o_sym(m, f, allow_pinv)
    return m @ o @ f_inv, ridge, used_pinv


def field_factor(sigma: np.ndarray, normalized_response: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``M = diag(sigma) diag(sigma_a)^-1 R diag(Y)`` for each row of ``sigma``."""
    return sigma[..., :, None] * (np.asarray(normalized_response) * y[None, :])


def build_lambda(
    kind: str,
    inputs: ImpactInputs,
    estimates: Optional[DayEstimates] = None,
    date: Optional[np.datetime64] = None,
) -> ImpactModel:
    """Cross-impact matrix of one estimator kind for a single day.

    The field kinds read ``sigma``, ``omega``/``omega_corr``, ``field`` and
    ``y_vector`` from ``inputs`` (``estimates.omega_cov`` overrides the flow
    covariance).  ``diag``/``ml`` need ``estimates.response``; ``kyle`` needs
    ``estimates.sigma_cov``.
    """
    estimates = estimates or DayEstimates()
    omega_cov = inputs.omega_cov if estimates.omega_cov is None else estimates.omega_cov
    kw = dict(omega_cov=np.asarray(omega_cov, float)[None], y_ratio=inputs.y_ratio)
    if kind in ("bbdlw", "bbdls"):
        if inputs.field is None or inputs.y_vector is None:
            raise DomainError(f"{kind} model needs a FieldModel and a Y vector")
        kw.update(
            sigma=np.asarray(inputs.sigma, float)[None],
            normalized_response=inputs.field.normalized_response,
            y_vector=inputs.y_vector,
        )
    elif kind in ("diag", "ml"):
        if estimates.response is None:
            raise DomainError(f"{kind} model needs the day-level response estimate R_hat")
        kw["response"] = np.asarray(estimates.response, float)[None]
    elif kind == "kyle":
        if estimates.sigma_cov is None:
            raise DomainError("kyle model needs the day-level price covariance Sigma_hat")
        kw["sigma_cov"] = np.asarray(estimates.sigma_cov, float)[None]
    lam, ridge, used_pinv = lambda_stack(kind, **kw)
    flags = ("pinv",) if used_pinv else ()
    if ridge[0] > 0:
        flags += ("ridge",)
    return ImpactModel(kind=kind, lam=lam[0], inputs=inputs, date=date, ridge=float(ridge[0]), flags=flags)


@dataclass(frozen=True)
class TradeImpulse:
    """A single trade of ``volume`` in tenor ``theta0`` (1-based)."""

    theta0: int
    volume: float
    dt: float
    steps: int


@dataclass(frozen=True)
class ImpulseResponse:
    steps: np.ndarray
    total: np.ndarray
    times: np.ndarray
    spectral_radius: float


def spectral_radius(a: np.ndarray, iters: int = 2000, seed: int = 0) -> float:
    """Power-iteration estimate of the spectral radius.

    Uses two-step norm ratios so that a pair of dominant eigenvalues of equal
    modulus and opposite sign still converges.
    """
    a = np.asarray(a, float)
    x = np.random.default_rng(seed).standard_normal(a.shape[0])
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iters):
        y = a @ (a @ x)
        norm = np.linalg.norm(y)
        if norm == 0:
            return 0.0
        new = np.sqrt(norm)
        x = y / norm
        if abs(new - est) <= 1e-12 * new:
            return float(new)
        est = new
    return float(est)


def stable_dt(field: FieldModel, fraction: float = 1.0 / 50.0) -> float:
    """Largest step ``<= fraction * tau`` with ``(dt/tau) * lambda_max(M) <= 1``.

    Every mode of ``I - (dt/tau) M`` then decays without changing sign.
    """
    if field.m_matrix is None:
        raise DomainError("impulse response needs the small-psi operator M")
    lam_max = float(np.max(np.abs(np.linalg.eigvals(np.asarray(field.m_matrix)))))
    return field.params.tau / max(1.0 / fraction, float(np.ceil(lam_max)))


def impulse_response(field: FieldModel, inputs: ImpactInputs, trade: TradeImpulse) -> ImpulseResponse:
    """Curve moves ``df_hat(k dt)`` after a single trade at ``t = 0``.

    Step ``k`` is ``(1/tau) diag(sigma) diag(sigma_a)^-1 (I - dt/tau M)^k
    diag(Y) Omega^-1/2 V``.

    Raises
    ------
    DomainError
        If ``dt > tau/10`` or the traded tenor is off the grid.
    NumericalError
        If the explicit scheme is unstable (spectral radius >= 1).
    """
    tau = field.params.tau
    n = field.n
    if field.m_matrix is None:
        raise DomainError("impulse response needs the small-psi operator M")
    if not 1 <= trade.theta0 <= n:
        raise DomainError(f"theta0={trade.theta0} outside 1..{n}")
    if trade.dt > tau / 10:
        raise DomainError(f"dt={trade.dt} exceeds tau/10={tau / 10}")
    if trade.steps < 1:
        raise DomainError("steps must be positive")
    prop = np.eye(n) - (trade.dt / tau) * field.m_matrix
    radius = spectral_radius(prop)
    if radius >= 1.0:
        raise NumericalError(f"explicit scheme unstable: spectral radius {radius:.6f} >= 1; reduce dt")
    y = np.ones(n) if inputs.y_vector is None else np.asarray(inputs.y_vector, float)
    v = np.zeros(n)
    v[trade.theta0 - 1] = trade.volume
    omega_cov, _ = ridge_regularize(inputs.omega_cov)
    state = y * (inv_psd_sqrt(omega_cov) @ v)
    scale = np.asarray(inputs.sigma, float) / field.sigma_a / tau
    out = np.empty((trade.steps, n))
    for k in range(trade.steps):
        out[k] = scale * state
        state = prop @ state
    times = np.arange(trade.steps) * trade.dt / tau
    return ImpulseResponse(steps=out, total=out.sum(axis=0), times=times, spectral_radius=radius)
