"""Discrete string operator and the closed-form matrices of the field model.

The forward-rate curve is driven by a correlated noise field ``A`` living on
the tenor grid ``theta = 1..n`` (units of 3 months).  In the small
psychological-time limit the field relaxes through the tridiagonal operator
``M(kappa)``; in the large limit its statistics are Fourier integrals of the
discrete Laplacian symbol ``L_d``.  This module builds both and derives

* ``C`` -- equal-time covariance of the daily-integrated field ``dA``,
* ``R`` -- covariance of ``dA`` with the integrated white noise ``d_eta``,
* ``sigma_a = sqrt(diag C)`` and the model price-correlation matrix.

All functions are pure; results are frozen dataclasses holding read-only
arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from .errors import DomainError, GridError, NumericalError, ParameterError

SMALL_PSI = "small-psi"
LARGE_PSI = "large-psi"
Regime = Literal["small-psi", "large-psi"]

MAX_CONDITION = 1e12
QUAD_TOL = 1e-8
QUAD_MAX_POINTS = 1 << 15


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TenorGrid:
    """Contiguous tenor grid ``1..n`` with a fixed 3-month step."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise GridError(f"tenor grid needs an integer n >= 2, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def tenors(self) -> np.ndarray:
        return np.arange(1, self.n + 1)

    @property
    def months(self) -> np.ndarray:
        return 3 * self.tenors

    def labels(self) -> list[str]:
        """Column labels ``t03, t06, ...`` used by the CSV schema."""
        return [f"t{m:02d}" for m in self.months]


@dataclass(frozen=True)
class FieldParams:
    """Regime parameters of the string model.

    ``kappa = mu * psi`` is the only parameter of the small-psi limit; the
    large-psi limit uses the line tension ``mu``.  ``tau`` and ``delta_t`` are
    in days and must satisfy ``tau < delta_t``.
    """

    regime: Regime = SMALL_PSI
    kappa: Optional[float] = None
    mu: Optional[float] = None
    psi: Optional[float] = None
    tau: float = 0.02
    delta_t: float = 1.0

    def __post_init__(self):
        if self.regime not in (SMALL_PSI, LARGE_PSI):
            raise ParameterError(f"unknown regime {self.regime!r}")
        for name in ("kappa", "mu", "psi"):
            v = getattr(self, name)
            if v is not None and not (np.isfinite(v) and v > 0):
                raise ParameterError(f"{name} must be positive, got {v!r}")
        if not (self.tau > 0 and self.delta_t > 0):
            raise ParameterError("tau and delta_t must be positive")
        if not self.tau < self.delta_t:
            raise ParameterError(f"tau={self.tau} must be smaller than delta_t={self.delta_t}")
        if self.mu is not None and self.psi is not None:
            implied = self.mu * self.psi
            if self.kappa is None:
                object.__setattr__(self, "kappa", float(implied))
            elif abs(self.kappa - implied) > 1e-12 * implied:
                raise ParameterError(f"kappa={self.kappa} inconsistent with mu*psi={implied}")
        if self.regime == SMALL_PSI and self.kappa is None:
            raise ParameterError("small-psi regime requires kappa (or mu and psi)")
        if self.regime == LARGE_PSI and self.mu is None:
            raise ParameterError("large-psi regime requires mu")

    @classmethod
    def small_psi(cls, kappa: float, tau: float = 0.02, delta_t: float = 1.0) -> "FieldParams":
        return cls(regime=SMALL_PSI, kappa=kappa, tau=tau, delta_t=delta_t)

    @classmethod
    def large_psi(cls, mu: float, tau: float = 0.02, delta_t: float = 1.0) -> "FieldParams":
        return cls(regime=LARGE_PSI, mu=mu, tau=tau, delta_t=delta_t)


@dataclass(frozen=True)
class QuadratureSpec:
    """Gauss-Legendre rule on ``[0, pi]``; ``points`` is the starting order."""

    points: int = 64

    def __post_init__(self):
        if int(self.points) != self.points or self.points < 64:
            raise ParameterError(f"quadrature needs at least 64 points, got {self.points!r}")


@dataclass(frozen=True)
class FieldModel:
    """Derived matrices of the field model on a tenor grid."""

    grid: TenorGrid
    params: FieldParams
    m_matrix: Optional[np.ndarray]
    j_matrix: np.ndarray
    correlator: np.ndarray
    response: np.ndarray
    sigma_a: np.ndarray
    price_corr: np.ndarray
    condition: float = field(default=float("nan"))

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def normalized_response(self) -> np.ndarray:
        """``diag(sigma_a)^-1 R``, the correlation of ``dA`` with ``d_eta``."""
        return self.response / self.sigma_a[:, None]


def build_j(grid: TenorGrid) -> np.ndarray:
    """Boundary matrix: diagonal, first entry 2 and the rest 1."""
    j = np.ones(grid.n)
    j[0] = 2.0
    return np.diag(j)


def build_m(params: FieldParams, grid: TenorGrid) -> np.ndarray:
    """Tridiagonal small-psi operator ``M(kappa)``.

    Rows follow ``I - theta/k^2 (I_1 - I_-1) - theta^2/k^2 (I_1 - 2I + I_-1)``
    restricted to tenors ``1..n``; the coupling of row 1 to the off-grid
    tenor 0 is dropped and the boundary is carried by ``J`` instead.
    """
    if not isinstance(grid, TenorGrid):
        grid = TenorGrid(grid)
    if params.regime != SMALL_PSI:
        raise ParameterError("build_m is defined only in the small-psi regime")
    k2 = float(params.kappa) ** 2
    t = grid.tenors.astype(float)
    m = np.diag(1.0 + 2.0 * t**2 / k2)
    up = t[:-1]
    lo = t[1:]
    m[np.arange(grid.n - 1), np.arange(1, grid.n)] = -up / k2 - up**2 / k2
    m[np.arange(1, grid.n), np.arange(grid.n - 1)] = lo / k2 - lo**2 / k2
    return m


def _dk_matrix(k: int, mu: float, grid: TenorGrid, points: int) -> np.ndarray:
    x, w = np.polynomial.legendre.leggauss(points)
    xi = 0.5 * np.pi * (x + 1.0)
    w = 0.5 * np.pi * w
    if np.isinf(mu):
        ld = np.ones_like(xi)
    else:
        ld = 1.0 + 2.0 * (1.0 - np.cos(xi)) / mu**2
    cos = np.cos(np.outer(grid.tenors, xi))
    weighted = cos * (w / ld**k)
    d = (2.0 / np.pi) * weighted @ cos.T
    return 0.5 * (d + d.T)


def quad_dk(k: int, mu: float, grid: TenorGrid, spec: QuadratureSpec = QuadratureSpec()) -> np.ndarray:
    """``(D_k)[t, t'] = (1/pi) int_0^pi 2 cos(xi t) cos(xi t') / L_d(xi)^k dxi``.

    The rule order is doubled until no entry moves by more than 1e-8.

    Raises
    ------
    NumericalError
        If the entries have not settled by ``QUAD_MAX_POINTS`` nodes.
    """
    if k not in (1, 2):
        raise DomainError(f"D_k is defined for k in {{1, 2}}, got {k!r}")
    if not mu > 0:
        raise ParameterError(f"mu must be positive, got {mu!r}")
    if not isinstance(grid, TenorGrid):
        grid = TenorGrid(grid)
    points = spec.points
    prev = _dk_matrix(k, mu, grid, points)
    while points < QUAD_MAX_POINTS:
        points *= 2
        cur = _dk_matrix(k, mu, grid, points)
        if np.max(np.abs(cur - prev)) <= QUAD_TOL:
            return cur
        prev = cur
    raise NumericalError(f"D_{k} quadrature did not converge to {QUAD_TOL} with {points} points (mu={mu})")


def _condition_checked_solve(m: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, float]:
    cond = float(np.linalg.cond(m))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise NumericalError(f"operator M is singular to working precision (condition estimate {cond:.3e})")
    return np.linalg.solve(m, rhs), cond


def correlation_from_covariance(c: np.ndarray) -> np.ndarray:
    s = np.sqrt(np.diag(c))
    rho = c / np.outer(s, s)
    rho = np.clip(0.5 * (rho + rho.T), -1.0, 1.0)
    np.fill_diagonal(rho, 1.0)
    return rho


def build_field_model(
    params: FieldParams, grid: TenorGrid, spec: QuadratureSpec = QuadratureSpec()
) -> FieldModel:
    """Build ``C``, ``R``, ``sigma_a`` and the model price correlation.

    small-psi: ``R = M^-1 J`` and ``C = M^-1 J^2 M^-T = R R^T``.
    large-psi: ``R = D_1`` and ``C = D_2``.
    """
    if not isinstance(grid, TenorGrid):
        grid = TenorGrid(grid)
    j = build_j(grid)
    if params.regime == SMALL_PSI:
        m = build_m(params, grid)
        response, cond = _condition_checked_solve(m, j)
        correlator = response @ response.T
    else:
        m, cond = None, float("nan")
        response = quad_dk(1, params.mu, grid, spec)
        correlator = quad_dk(2, params.mu, grid, spec)
    correlator = 0.5 * (correlator + correlator.T)
    diag = np.diag(correlator)
    if np.any(diag <= 0):
        raise NumericalError("correlator has a non-positive diagonal")
    sigma_a = np.sqrt(diag)
    return FieldModel(
        grid=grid,
        params=params,
        m_matrix=None if m is None else _frozen(m),
        j_matrix=_frozen(j),
        correlator=_frozen(correlator),
        response=_frozen(response),
        sigma_a=_frozen(sigma_a),
        price_corr=_frozen(correlation_from_covariance(correlator)),
        condition=cond,
    )


def noise_response_correlation(model: FieldModel) -> np.ndarray:
    """Correlation matrix ``rho(dA, d_eta) = diag(sigma_a)^-1 R``."""
    return np.array(model.normalized_response)


def price_flow_correlation(
    model: FieldModel,
    omega: np.ndarray,
    y: Optional[np.ndarray] = None,
    rotation: Optional[np.ndarray] = None,
    omega_half: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Correlation between ``df_theta`` and the flow surprise ``dq~_theta'``.

    Entry ``(t, t')`` is ``sum_s R[t,s]/sigma_a[t] * Y[s] * (Omega^1/2 O^T)[t',s]
    / sqrt(Omega[t',t'])``.  ``omega_half`` defaults to the symmetric root.
    """
    n = model.n
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (n, n):
        raise DomainError(f"omega must be {n}x{n}, got {omega.shape}")
    y = np.ones(n) if y is None else np.asarray(y, dtype=float)
    rotation = np.eye(n) if rotation is None else np.asarray(rotation, dtype=float)
    if omega_half is None:
        from .impact import psd_sqrt

        omega_half = psd_sqrt(omega)
    mixed = omega_half @ rotation.T  # (Omega^1/2 O^T)[t', s]
    out = (model.normalized_response * y[None, :]) @ mixed.T
    return out / np.sqrt(np.diag(omega))[None, :]
