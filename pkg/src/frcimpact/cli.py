"""Command-line interface.

Every subcommand reads a :class:`RunConfig` (defaults, then a JSON config
file, then command-line flags), writes CSV/JSON artifacts into ``out`` and a
``run-manifest.json`` with the resolved config, input and artifact hashes,
package versions and timings.  Failures print a JSON error object on stderr
and exit with 2 (validation), 3 (numerical) or 4 (I/O).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import platform
import sys
import time
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import io as fio
from .calibration import calibrate, fit_kappa, rolling_estimates
from .errors import DomainError, FrcError, FrcIOError, ValidationError
from .evaluation import (
    delta_r2_bbdl,
    delta_r2_ml_matrix,
    evaluate_periods,
    impact_stack,
    kyle_liquidity_grid,
    pairwise_delta_r2_matrix,
)
from .field import FieldParams, QuadratureSpec, TenorGrid, build_field_model
from .flows import accumulated_autocorr, fit_whitening, whiten_panel
from .impact import KINDS, ImpactInputs, TradeImpulse, impulse_response, stable_dt
from .plotdata import emit_plotdata
from .simulation import SimConfig, gen_synthetic_panel, mc_verify

CONFIG_ENV = "FRCIMPACT_CONFIG"
COMMANDS = (
    "fit-kappa",
    "fit-y",
    "build-impact",
    "evaluate",
    "pairwise-dr2",
    "impulse",
    "simulate",
    "mc-verify",
    "autocorr",
)
PAIRWISE_MODES = ("empirical", "ml-theory", "kyle-numeric", "bbdl-eta", "bbdls-flow")


@dataclass
class RunConfig:
    """All parameters any subcommand reads; unused keys are ignored by a command."""

    command: Optional[str] = None
    out: str = "out"
    # inputs
    rates: Optional[str] = None
    flows: Optional[str] = None
    corr: Optional[str] = None
    flow_scale: float = 1.0
    # model
    kind: str = "bbdlw"
    kinds: list = field(default_factory=lambda: list(KINDS))
    regime: str = "small-psi"
    kappa: Optional[float] = None
    mu: Optional[float] = None
    y: Optional[list] = None
    y_ratio: Optional[float] = None
    tau: float = 0.02
    quad_points: int = 64
    # calibration and evaluation
    weighting: str = "w_sigma"
    y_relaxed: bool = False
    whiten: bool = False
    max_lag: int = 20
    years_per_period: int = 3
    date: Optional[str] = None
    mode: str = "empirical"
    rho_q: float = 0.5
    rho_f: float = 0.75
    kyle_y: float = 0.3
    # simulation
    n: int = 20
    days: int = 750
    seed: int = 0
    method: str = "large-bin"
    euler_dt: Optional[float] = None
    flow_ar: float = 0.0
    rotation: str = "identity"
    sigma: Optional[list] = None
    omega: Optional[list] = None
    start_date: str = "2015-01-01"
    # impulse
    theta0: int = 1
    volume: float = 1000.0
    dt: Optional[float] = None
    steps: Optional[int] = None
    plot: bool = True

    @classmethod
    def from_mapping(cls, data: dict, source: str = "config") -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"{source}: unknown key(s) {unknown}")
        return cls(**data)

    def merged(self, overrides: dict) -> "RunConfig":
        return RunConfig.from_mapping({**dataclasses.asdict(self), **overrides}, "command line")

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise ValidationError(f"unknown command {self.command!r}; expected one of {COMMANDS}")
        if self.kind not in KINDS:
            raise ValidationError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        bad = [k for k in self.kinds if k not in KINDS]
        if bad or not self.kinds:
            raise ValidationError(f"kinds must be a non-empty subset of {KINDS}, got {self.kinds}")
        if self.mode not in PAIRWISE_MODES:
            raise ValidationError(f"unknown pairwise mode {self.mode!r}; expected one of {PAIRWISE_MODES}")
        if self.weighting not in ("w_sigma", "raw"):
            raise ValidationError(f"weighting must be 'w_sigma' or 'raw', got {self.weighting!r}")
        if not self.flow_scale > 0:
            raise ValidationError("flow_scale must be positive")
        for name in ("quad_points", "max_lag", "years_per_period", "n", "days", "seed", "theta0"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int):
                raise ValidationError(f"{name} must be an integer, got {v!r}")
        for name in ("whiten", "y_relaxed", "plot"):
            if not isinstance(getattr(self, name), bool):
                raise ValidationError(f"{name} must be a boolean")
        return self


def load_config(path: Optional[str]) -> RunConfig:
    """Read a JSON config; ``None`` falls back to ``$FRCIMPACT_CONFIG`` or defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise FrcIOError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    data.pop("schema", None)
    return RunConfig.from_mapping(data, str(path))


# --- helpers ---------------------------------------------------------------


def _panel(cfg: RunConfig):
    if not cfg.rates or not cfg.flows:
        raise ValidationError(f"{cfg.command} needs 'rates' and 'flows' input paths")
    panel = fio.ingest_panel(cfg.rates, cfg.flows, cfg.flow_scale)
    if cfg.whiten:
        panel = whiten_panel(panel, fit_whitening(panel, cfg.max_lag))
    return panel


def _params(cfg: RunConfig, kappa: Optional[float] = None) -> FieldParams:
    k = cfg.kappa if kappa is None else kappa
    if k is None:
        raise ValidationError(f"{cfg.command} needs 'kappa'")
    return FieldParams.small_psi(k, tau=cfg.tau)


def _vector(values, n: int, name: str) -> Optional[np.ndarray]:
    if values is None:
        return None
    v = np.asarray(values, float)
    if v.shape != (n,):
        raise ValidationError(f"{name} must have {n} entries, got shape {v.shape}")
    return v


def _sim_config(cfg: RunConfig, method: Optional[str] = None) -> SimConfig:
    return SimConfig(
        field_params=_params(cfg),
        n=cfg.n,
        y_vector=_vector(cfg.y, cfg.n, "y"),
        omega=None if cfg.omega is None else np.asarray(cfg.omega, float),
        sigma=_vector(cfg.sigma, cfg.n, "sigma"),
        euler_dt=cfg.euler_dt,
        days=cfg.days,
        seed=cfg.seed,
        method=method or cfg.method,
        flow_ar=cfg.flow_ar,
        rotation=cfg.rotation,
        start_date=cfg.start_date,
    )


def _calibration_payload(res) -> dict:
    return {
        "model_kind": res.kind,
        "kappa_hat": res.kappa_hat,
        "kappa_r2": res.kappa_r2,
        "y_hat": res.y_hat,
        "y_ratio": res.y_ratio,
        "y_zeroed": list(res.y_zeroed),
        "period": [str(d) for d in res.period],
        "objective": res.objective,
        "sweeps": res.sweeps,
        "converged": res.converged,
        "boundary": res.boundary,
        "flags": list(res.flags),
    }


def _fit(cfg: RunConfig, panel, kind: str):
    """Calibrate ``kind``; config overrides of ``y``/``y_ratio`` replace the fitted values."""
    est = rolling_estimates(panel)
    res, fm = calibrate(panel, kind, est, weighting=cfg.weighting, relaxed=cfg.y_relaxed, kappa=cfg.kappa)
    if kind in ("bbdlw", "bbdls") and cfg.y is not None:
        res = dataclasses.replace(res, y_hat=_vector(cfg.y, panel.n_tenors, "y"), flags=res.flags + ("y-override",))
    if kind in ("diag", "ml", "kyle") and cfg.y_ratio is not None:
        res = dataclasses.replace(res, y_ratio=float(cfg.y_ratio), flags=res.flags + ("y-override",))
    return est, res, fm


# --- commands --------------------------------------------------------------


def cmd_fit_kappa(cfg: RunConfig, out: Path) -> list[Path]:
    if cfg.corr:
        emp, _, _, _ = fio.read_matrix(cfg.corr)
    else:
        emp = rolling_estimates(_panel(cfg)).rho_f
    fit = fit_kappa(emp, spec=QuadratureSpec(cfg.quad_points), regime=cfg.regime)
    paths = [fio.write_json(out / "kappa.json", dataclasses.asdict(fit), "kappa-fit")]
    if cfg.plot:
        grid = TenorGrid(emp.shape[0])
        if cfg.regime == "small-psi":
            params = FieldParams.small_psi(fit.kappa_hat, tau=cfg.tau)
        else:
            params = FieldParams.large_psi(fit.kappa_hat, tau=cfg.tau)
        model = build_field_model(params, grid, QuadratureSpec(cfg.quad_points))
        paths += emit_plotdata((emp, model.price_corr), "kappa-fit", out)
    return paths


def cmd_fit_y(cfg: RunConfig, out: Path) -> list[Path]:
    panel = _panel(cfg)
    _, res, fm = _fit(cfg, panel, cfg.kind)
    paths = [fio.write_json(out / "calibration.json", _calibration_payload(res), "calibration")]
    if cfg.plot and res.y_hat is not None:
        paths += emit_plotdata((res.y_hat, TenorGrid(panel.n_tenors)), "y-vector", out)
    return paths


def cmd_build_impact(cfg: RunConfig, out: Path) -> list[Path]:
    panel = _panel(cfg)
    est, res, fm = _fit(cfg, panel, cfg.kind)
    lam = impact_stack(cfg.kind, est, res, fm)
    dates = est.dates[est.valid]
    if cfg.date is None:
        k = len(dates) - 1
    else:
        hits = np.flatnonzero(dates == np.datetime64(cfg.date, "D"))
        if not len(hits):
            raise DomainError(f"date {cfg.date} is not a valid estimation day of the panel")
        k = int(hits[0])
    labels = TenorGrid(panel.n_tenors).labels()
    return [
        fio.write_matrix(out / "lambda.csv", lam[k], labels, labels, f"lambda-{cfg.kind}-{dates[k]}"),
        fio.write_json(out / "calibration.json", {**_calibration_payload(res), "date": str(dates[k])}, "calibration"),
    ]


def cmd_evaluate(cfg: RunConfig, out: Path) -> list[Path]:
    panel = _panel(cfg)
    reports = evaluate_periods(panel, cfg.kinds, cfg.years_per_period, cfg.weighting, cfg.y_relaxed)
    rows = [
        {
            "model_kind": r.model_kind,
            "sample": r.sample,
            "period": [str(d) for d in r.period],
            "fit_period": None if r.fit_period is None else [str(d) for d in r.fit_period],
            "n_days": r.n_days,
            "r2_w_sigma": r.r2_w_sigma,
            "r2_per_tenor": r.r2_per_tenor,
        }
        for r in reports
    ]
    paths = [fio.write_json(out / "evaluation.json", {"reports": rows}, "evaluation")]
    if cfg.plot:
        paths += emit_plotdata(reports, "r2", out)
    return paths


def cmd_pairwise(cfg: RunConfig, out: Path) -> list[Path]:
    if cfg.mode == "kyle-numeric":
        liq, mat = kyle_liquidity_grid(cfg.rho_q, cfg.rho_f, cfg.kyle_y)
        payload = {"liquidity": liq, "delta_r2": mat, "max_abs": float(np.max(np.abs(mat)))}
        paths = [fio.write_json(out / "pairwise.json", payload, "pairwise-kyle")]
        return paths + emit_plotdata((liq, mat), "kyle-grid", out)
    if cfg.mode in ("bbdl-eta", "bbdls-flow") and cfg.kappa is not None and cfg.y is not None:
        fm = build_field_model(_params(cfg), TenorGrid(cfg.n))
        y = _vector(cfg.y, cfg.n, "y")
        omega = _vector(cfg.sigma, cfg.n, "sigma")
        result = delta_r2_bbdl(fm, y, "eta-response" if cfg.mode == "bbdl-eta" else "flow-response", omega=omega)
    else:
        panel = _panel(cfg)
        if cfg.mode == "ml-theory":
            result = delta_r2_ml_matrix(rolling_estimates(panel))
        elif cfg.mode == "empirical":
            est, res, fm = _fit(cfg, panel, cfg.kind)
            kw = {"y_ratio": res.y_ratio} if res.y_ratio is not None else {"field_model": fm, "y_vector": res.y_hat}
            result = pairwise_delta_r2_matrix(panel, est, cfg.kind, **kw)
        else:
            kind = "bbdlw" if cfg.mode == "bbdl-eta" else "bbdls"
            est, res, fm = _fit(cfg, panel, kind)
            mode = "eta-response" if cfg.mode == "bbdl-eta" else "flow-response"
            result = delta_r2_bbdl(fm, res.y_hat, mode, omega=np.ones(panel.n_tenors), omega_corr=est.rho_q)
    labels = TenorGrid(result.matrix.shape[0]).labels()
    # the matrix file is already in heatmap layout, so no separate plot table
    return [fio.write_matrix(out / "pairwise.csv", result.matrix, labels, labels, f"pairwise-{result.mode}")]


def cmd_impulse(cfg: RunConfig, out: Path) -> list[Path]:
    grid = TenorGrid(cfg.n)
    fm = build_field_model(_params(cfg), grid)
    n = cfg.n
    sigma = _vector(cfg.sigma, n, "sigma")
    omega = np.ones(n) if cfg.omega is None else np.asarray(cfg.omega, float)
    if omega.ndim == 2:
        vol = np.sqrt(np.diag(omega))
        corr = omega / np.outer(vol, vol)
    else:
        vol, corr = omega, np.eye(n)
    inputs = ImpactInputs(
        sigma=fm.sigma_a if sigma is None else sigma,
        omega=vol,
        omega_corr=corr,
        field=fm,
        y_vector=_vector(cfg.y, n, "y"),
    )
    dt = stable_dt(fm) if cfg.dt is None else cfg.dt
    steps = int(round(5 * cfg.tau / dt)) + 1 if cfg.steps is None else cfg.steps
    resp = impulse_response(fm, inputs, TradeImpulse(theta0=cfg.theta0, volume=cfg.volume, dt=dt, steps=steps))
    payload = {"times_tau": resp.times, "total": resp.total, "spectral_radius": resp.spectral_radius, "dt": dt}
    paths = [
        fio.write_json(out / "impulse.json", payload, "impulse"),
        fio.write_long(
            out / "impulse.csv",
            ((m, resp.steps[k, j], format(float(t), ".10g")) for k, t in enumerate(resp.times) for j, m in enumerate(grid.months)),
            "impulse",
        ),
    ]
    return paths


def cmd_simulate(cfg: RunConfig, out: Path) -> list[Path]:
    sim = gen_synthetic_panel(_sim_config(cfg))
    rates, flows = fio.write_panel_files(sim.panel, out / "rates.csv", out / "flows.csv")
    return [rates, flows, fio.write_json(out / "truth.json", sim.truth, "simulation-truth")]


def cmd_mc_verify(cfg: RunConfig, out: Path) -> list[Path]:
    rep = mc_verify(_sim_config(cfg, method="euler"))
    payload = {
        "n_days": rep.n_days,
        "max_z": rep.max_z,
        "passed": rep.passed,
        "z_correlator": rep.z_correlator,
        "z_response": rep.z_response,
        "z_price_corr": np.nan_to_num(rep.z_price_corr),
        "z_lag1": rep.z_lag1,
        "z_bridge": rep.z_bridge,
    }
    return [fio.write_json(out / "mc-report.json", payload, "mc-verify")]


def cmd_autocorr(cfg: RunConfig, out: Path) -> list[Path]:
    panel = _panel(cfg)
    acs = accumulated_autocorr(panel, cfg.max_lag)
    payload = {
        "conf_band": acs[0].conf_band if acs else None,
        "accumulated_band": acs[0].accumulated_band if acs else None,
        "tenors": {
            f"t{3 * a.tenor:02d}": {"rho": a.rho, "accumulated": a.accumulated, "outside_band": a.outside_band}
            for a in acs
        },
    }
    paths = [fio.write_json(out / "autocorr.json", payload, "autocorr")]
    if cfg.plot:
        paths += emit_plotdata(acs, "autocorr", out)
    return paths


HANDLERS = {
    "fit-kappa": cmd_fit_kappa,
    "fit-y": cmd_fit_y,
    "build-impact": cmd_build_impact,
    "evaluate": cmd_evaluate,
    "pairwise-dr2": cmd_pairwise,
    "impulse": cmd_impulse,
    "simulate": cmd_simulate,
    "mc-verify": cmd_mc_verify,
    "autocorr": cmd_autocorr,
}


def _versions() -> dict:
    import numba
    import scipy

    return {
        "frcimpact": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def run_command(cfg: RunConfig) -> dict:
    """Execute one command and write its manifest; returns the manifest."""
    cfg.validate()
    out = Path(cfg.out)
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        artifacts = HANDLERS[cfg.command](cfg, out)
    elapsed = time.perf_counter() - t0
    inputs = {}
    for key in ("rates", "flows", "corr"):
        p = getattr(cfg, key)
        if p and cfg.command != "simulate":
            inputs[key] = {"path": str(p), "sha256": fio.sha256(p)}
    manifest = {
        "command": cfg.command,
        "config": dataclasses.asdict(cfg),
        "seed": cfg.seed,
        "inputs": inputs,
        "artifacts": {str(Path(p).relative_to(out)): fio.sha256(p) for p in artifacts},
        "warnings": sorted({str(w.message) for w in caught}),
        "versions": _versions(),
        "timings": {"total_seconds": round(elapsed, 6)},
    }
    fio.write_json(out / "run-manifest.json", manifest, "run-manifest")
    return manifest


# --- argument parsing ----------------------------------------------------


def _list_arg(text: str):
    """A JSON array, or a comma-separated list of numbers or names."""
    text = text.strip()
    if text.startswith("["):
        try:
            return json.loads(text)
        except json.JSONDecodeError:
            raise argparse.ArgumentTypeError(f"invalid JSON list {text!r}") from None
    parts = [p.strip() for p in text.split(",") if p.strip()]
    try:
        return [float(p) for p in parts]
    except ValueError:
        return parts


COMMAND_HELP = {
    "fit-kappa": "fit the field stiffness to a price correlation matrix or panel",
    "fit-y": "calibrate kappa and the Y vector (or Y ratio) on a panel",
    "build-impact": "write the cross-impact matrix for one day of a panel",
    "evaluate": "in- and out-of-sample generalized R2 per period and model",
    "pairwise-dr2": "pairwise cross-asset R2 gains (empirical, theory or Kyle grid)",
    "impulse": "sub-daily curve response to a single trade",
    "simulate": "generate a synthetic rates and flows panel",
    "mc-verify": "Monte-Carlo check of the closed-form correlator and response",
    "autocorr": "accumulated order-flow autocorrelation per tenor",
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help=f"JSON config (default ${CONFIG_ENV})")
    for f in fields(RunConfig):
        if f.name == "command":
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            common.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS)
        elif f.type in ("list", "Optional[list]"):
            common.add_argument(flag, dest=f.name, type=_list_arg, default=argparse.SUPPRESS)
        else:
            kind = {"int": int, "float": float, "Optional[float]": float, "Optional[int]": int}.get(f.type, str)
            common.add_argument(flag, dest=f.name, type=kind, default=argparse.SUPPRESS)
    parser = _Parser(prog="frcimpact", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"frcimpact {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=COMMAND_HELP[name])
    return parser


class _Parser(argparse.ArgumentParser):
    """Argument errors become validation errors so they are reported as JSON."""

    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _error(exc: BaseException, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = vars(parser.parse_args(argv))
        base = load_config(args.pop("config", None))
        cfg = base.merged(args)
        manifest = run_command(cfg)
    except FrcError as exc:
        return _error(exc, exc.exit_code)
    except OSError as exc:
        return _error(exc, FrcIOError.exit_code)
    except (ValueError, TypeError) as exc:
        return _error(exc, ValidationError.exit_code)
    except ArithmeticError as exc:
        return _error(exc, 3)
    print(json.dumps({"command": cfg.command, "artifacts": manifest["artifacts"]}))
    return 0
