"""Daily price/flow panel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class MarketPanel:
    """Dated per-tenor daily forward-rate increments and signed flows.

    ``delta_f`` is in rate units, ``delta_q`` in signed notional; both are
    ``(N, n)`` with one row per business day.
    """

    dates: np.ndarray
    delta_f: np.ndarray
    delta_q: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        df = np.array(self.delta_f, dtype=float)
        dq = np.array(self.delta_q, dtype=float)
        if df.ndim != 2 or df.shape != dq.shape:
            raise DomainError(f"delta_f {df.shape} and delta_q {dq.shape} must be equal-shaped 2-D arrays")
        if dates.shape != (df.shape[0],):
            raise DomainError(f"{dates.shape[0]} dates for {df.shape[0]} rows")
        if dates.size > 1 and np.any(np.diff(dates) <= np.timedelta64(0, "D")):
            raise DomainError("dates must be strictly increasing")
        if not (np.all(np.isfinite(df)) and np.all(np.isfinite(dq))):
            raise DomainError("panel contains missing or non-finite values")
        for a in (dates, df, dq):
            a.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "delta_f", df)
        object.__setattr__(self, "delta_q", dq)

    @property
    def n_days(self) -> int:
        return self.delta_f.shape[0]

    @property
    def n_tenors(self) -> int:
        return self.delta_f.shape[1]

    def select(self, rows=None, tenors=None) -> "MarketPanel":
        """Sub-panel on a row mask/slice and a list of 0-based tenor columns."""
        rows = slice(None) if rows is None else rows
        cols = slice(None) if tenors is None else list(tenors)
        return MarketPanel(self.dates[rows], self.delta_f[rows][:, cols], self.delta_q[rows][:, cols])

    def scaled(self, f_scale: float = 1.0, q_scale: float = 1.0) -> "MarketPanel":
        return MarketPanel(self.dates, self.delta_f * f_scale, self.delta_q * q_scale)
