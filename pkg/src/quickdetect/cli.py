"""Command-line front end.

Subcommands
-----------
calibrate   thresholds and head starts for a list of strategies and ARL targets
add-curve   conditional average detection delay at a list of change points
frontier    worst-case delay of each strategy and the lower bound, per target
qsd         quasi-stationary density, its mean and eigenvalue
lfa         local false-alarm probabilities over (k, m)
validate    Monte Carlo and grid-refinement checks of the numerical solution
mc          Monte Carlo estimates

Settings come from built-in defaults, then an optional ``--config`` file
(INI syntax, keys in a ``[quickdetect]`` section or before any section), then
command-line flags, which win.  Exit codes: 0 success, 1 computation
failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .calibration import (
    CalibrationError,
    CalibrationTolerances,
    ResolvedStrategy,
    calibrate,
    delay_at,
    resolve_strategy,
    worst_delay,
)
from .metrics import local_false_alarm_prob, lower_bound, rho_sequence
from .models import LikelihoodRatioModel
from .montecarlo import QsdSampler, Quantity, SimulationError, estimate
from .procedures import Chart, ChartCharacteristics, InitKind, InitStrategy, ProcedureSpec, operating_characteristics
from .solvers import ConvergenceError, SingularSystemError

log = logging.getLogger("quickdetect")

COMMANDS = ("calibrate", "add-curve", "frontier", "qsd", "lfa", "validate", "mc")
ALL_STRATEGIES = ("classical", "r-nu", "r-star", "qsd-mean", "srp")
TABLE_TAUS = (0, 50, 100, 200, 400, 600, 800, 1000)

DEFAULTS = {
    "model": "gaussian",
    "theta": 0.1,
    "chart": "sr",
    "strategy": None,           # command-specific
    "gamma": None,              # command-specific
    "grid_n": 10_000,
    "coarse_n": 1000,
    "arl_rtol": 1e-3,
    "alpha": 0.9,
    "nu": None,
    "nu1": None,
    "nu2": None,
    "tau_list": None,           # command-specific
    "k_list": "0,10,100",
    "m_list": "1,10,50,100",
    "quantity": "arl,add",
    "replications": 1_000_000,
    "seed": 12345,
    "format": "csv",
    "out": None,
    "workers": 1,
    "tau_max": None,
    "richardson_rtol": 1e-3,
}

COMMAND_DEFAULTS = {
    "calibrate": {"strategy": ",".join(ALL_STRATEGIES), "gamma": "1000"},
    "add-curve": {"strategy": ",".join(ALL_STRATEGIES), "gamma": "1000",
                  "tau_list": ",".join(map(str, TABLE_TAUS))},
    "frontier": {"strategy": "r-nu,qsd-mean,srp,r-star", "gamma": "250,500,1000,2000"},
    "qsd": {"strategy": "srp", "gamma": "1000"},
    "lfa": {"strategy": "classical", "gamma": "1000"},
    "validate": {"strategy": "classical", "gamma": "1000", "tau_list": "0,50,200"},
    "mc": {"strategy": "classical", "gamma": "1000", "tau_list": "0"},
}

ERRORS = (CalibrationError, ConvergenceError, SingularSystemError, SimulationError,
          ArithmeticError, MemoryError)


class UsageError(ValueError):
    """Invalid or inconsistent settings."""


# -- configuration ----------------------------------------------------------------------


def _floats(text, what) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in str(text).replace(";", ",").split(",") if t.strip())
    except ValueError as exc:
        raise UsageError(f"bad {what} list {text!r}") from exc


def _ints(text, what) -> tuple[int, ...]:
    vals = _floats(text, what)
    if any(v != int(v) or v < 0 for v in vals):
        raise UsageError(f"{what} must be nonnegative integers")
    return tuple(int(v) for v in vals)


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully validated settings of one command invocation."""

    command: str
    family: str
    theta: float
    chart: str
    strategies: tuple[str, ...]
    gammas: tuple[float, ...]
    grid_n: int
    coarse_n: int | None
    arl_rtol: float
    alpha: float
    nu: float | None
    nu1: float | None
    nu2: float | None
    taus: tuple[int, ...]
    k_list: tuple[int, ...]
    m_list: tuple[int, ...]
    quantities: tuple[str, ...]
    replications: int
    seed: int
    format: str
    out: str | None
    workers: int
    tau_max: int | None
    richardson_rtol: float
    model: LikelihoodRatioModel = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        try:
            model = LikelihoodRatioModel(self.family, self.theta)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        object.__setattr__(self, "model", model)
        if not self.strategies:
            raise UsageError("empty strategy list")
        for s in self.strategies:
            try:
                InitStrategy.parse(s)
            except ValueError as exc:
                raise UsageError(f"unknown strategy {s!r}") from exc
        if self.command != "qsd" and self.nu is None and self.chart != "ewma" and not self.gammas:
            raise UsageError("give --gamma or --nu")
        if any(g <= 1 for g in self.gammas):
            raise UsageError("gamma values must exceed 1")
        if self.grid_n < 2 or (self.coarse_n is not None and self.coarse_n < 2):
            raise UsageError("grid sizes must be >= 2")
        if self.nu is not None and self.nu <= 0:
            raise UsageError("--nu must be positive")
        if self.chart == "ewma":
            if self.nu1 is None or self.nu2 is None:
                raise UsageError("the EWMA chart needs explicit --nu1 and --nu2")
            if not 0 < self.nu1 < 1 < self.nu2:
                raise UsageError("EWMA needs 0 < nu1 < 1 < nu2")
            if not 0 < self.alpha < 1:
                raise UsageError("alpha must lie in (0, 1)")
            if self.command in ("calibrate", "frontier"):
                raise UsageError(f"{self.command} does not apply to EWMA (thresholds are user-supplied)")
        if self.chart == "srp" and any(InitStrategy.parse(s).kind is not InitKind.SRP
                                       for s in self.strategies):
            raise UsageError("the srp chart only takes the srp strategy")
        if self.chart in ("cusum", "ewma") and any(InitStrategy.parse(s).randomized
                                                   for s in self.strategies):
            raise UsageError("the randomized start is only available for the SR chart")
        if self.replications < 100:
            raise UsageError("--replications must be >= 100")
        if self.workers < 1:
            raise UsageError("--workers must be >= 1")
        if not self.arl_rtol > 0 or not self.richardson_rtol > 0:
            raise UsageError("tolerances must be positive")
        if any(m < 1 for m in self.m_list):
            raise UsageError("window lengths m must be >= 1")
        for q in self.quantities:
            if q not in ("arl", "add", "survival"):
                raise UsageError(f"unknown quantity {q!r}")

    def digest(self) -> str:
        payload = {k: v for k, v in asdict(self).items() if k not in ("out", "format", "workers")}
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def chart_enum(self) -> Chart:
        return Chart(self.chart)


def _read_config_file(path: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    if not text.lstrip().startswith("["):
        text = "[quickdetect]\n" + text
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        raise UsageError(f"bad config file {path}: {exc}") from exc
    out = {}
    for section in parser.sections():
        for key, value in parser[section].items():
            key = key.strip().replace("-", "_")
            if key not in DEFAULTS:
                raise UsageError(f"unknown key {key!r} in {path}")
            out[key] = value.strip().strip('"').strip("'")
    return out


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Merge defaults, config file and flags (flags win) and validate."""
    merged = dict(DEFAULTS)
    merged.update(COMMAND_DEFAULTS[args.command])
    from_file = _read_config_file(args.config) if args.config else {}
    merged.update(from_file)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value

    def opt_float(key):
        v = merged[key]
        return None if v in (None, "") else float(v)

    def opt_int(key):
        v = merged[key]
        return None if v in (None, "", "none", 0, "0") else int(v)

    try:
        strategies = tuple(s.strip() for s in str(merged["strategy"]).split(",") if s.strip())
        chart = str(merged["chart"]).lower()
        if chart not in ("sr", "srp", "cusum", "ewma"):
            raise UsageError(f"unknown chart {chart!r}")
        explicit = args.strategy is not None or "strategy" in from_file
        if chart == "srp" and not explicit:
            strategies = ("srp",)
        if chart in ("cusum", "ewma") and not explicit:
            strategies = ("classical",)
        return ExperimentConfig(
            command=args.command,
            family=str(merged["model"]).lower(),
            theta=float(merged["theta"]),
            chart=chart,
            strategies=strategies,
            gammas=_floats(merged["gamma"] or "", "gamma"),
            grid_n=int(merged["grid_n"]),
            coarse_n=opt_int("coarse_n"),
            arl_rtol=float(merged["arl_rtol"]),
            alpha=float(merged["alpha"]),
            nu=opt_float("nu"),
            nu1=opt_float("nu1"),
            nu2=opt_float("nu2"),
            taus=_ints(merged["tau_list"] or "", "tau"),
            k_list=_ints(merged["k_list"], "k"),
            m_list=_ints(merged["m_list"], "m"),
            quantities=tuple(q.strip().lower() for q in str(merged["quantity"]).split(",") if q.strip()),
            replications=int(float(merged["replications"])),
            seed=int(merged["seed"]),
            format=str(merged["format"]).lower(),
            out=merged["out"],
            workers=int(merged["workers"]),
            tau_max=opt_int("tau_max"),
            richardson_rtol=float(merged["richardson_rtol"]),
        )
    except UsageError:
        raise
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


# -- output ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".10g")
    return str(value)


def _json_value(value):
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(format(float(value), ".10g"))
        return v if math.isfinite(v) else None
    return value


@dataclass
class Table:
    columns: list[str]
    rows: list[dict] = field(default_factory=list)

    def render(self, cfg: ExperimentConfig) -> str:
        if cfg.format == "json":
            doc = {
                "command": cfg.command,
                "columns": self.columns,
                "rows": [{c: _json_value(r.get(c)) for c in self.columns} for r in self.rows],
                "config_hash": cfg.digest(),
                "version": __version__,
            }
            return json.dumps(doc, indent=2) + "\n"
        import csv

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for r in self.rows:
            writer.writerow([_fmt(r.get(c)) for c in self.columns])
        buf.write(f"# config_hash={cfg.digest()} version={__version__}\n")
        return buf.getvalue()


# -- shared helpers ---------------------------------------------------------------------


def _tolerances(cfg: ExperimentConfig) -> CalibrationTolerances:
    coarse = cfg.coarse_n if cfg.coarse_n is not None and cfg.coarse_n < cfg.grid_n else None
    return CalibrationTolerances(arl_rtol=cfg.arl_rtol, coarse_n=coarse, tau_max=cfg.tau_max)


def _ewma(cfg: ExperimentConfig, strategy: str) -> ResolvedStrategy:
    st = InitStrategy.parse(strategy)
    r = 1.0 if st.kind is InitKind.CLASSICAL else st.resolve(cfg.nu2)
    if r is None:
        raise UsageError(f"strategy {strategy!r} is not available for EWMA")
    spec = ProcedureSpec.ewma(cfg.nu1, cfg.nu2, cfg.alpha, r)
    chars = operating_characteristics(spec, cfg.model, cfg.grid_n)
    return ResolvedStrategy(cfg.nu2, r, chars.arl, st, Chart.EWMA, chars)


def _instance(cfg: ExperimentConfig, strategy: str, gamma: float | None, snapshot_taus=()):
    """Calibrate (when ``gamma`` is given and ``--nu`` is not) or resolve at ``--nu``."""
    if cfg.chart == "ewma":
        return _ewma(cfg, strategy)
    chart = Chart.SR if cfg.chart == "srp" else cfg.chart_enum
    if cfg.nu is not None:
        return resolve_strategy(cfg.model, strategy, cfg.nu, cfg.grid_n, chart,
                                tolerances=_tolerances(cfg), snapshot_taus=snapshot_taus)
    return calibrate(cfg.model, strategy, gamma, cfg.grid_n, _tolerances(cfg), chart,
                     snapshot_taus=snapshot_taus)


def _targets(cfg: ExperimentConfig) -> tuple:
    if cfg.nu is not None or cfg.chart == "ewma":
        return (None,)
    return cfg.gammas


def _r_label(r) -> object:
    return "randomized" if r is None else r


def _run_jobs(cfg: ExperimentConfig, fn, jobs: list) -> list:
    """Run ``fn(cfg, *job)`` for every job, in order, optionally in a process pool."""
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(fn, [cfg] * len(jobs), *zip(*jobs)))
    return [fn(cfg, *job) for job in jobs]


# -- commands -----------------------------------------------------------------------------

CAL_COLUMNS = ["strategy", "gamma", "nu", "r", "achieved_arl", "grid_n", "pilot_w", "status", "message"]


def _calibrate_job(cfg, strategy, gamma):
    try:
        res = _instance(cfg, strategy, gamma)
    except ERRORS as exc:
        return [{"strategy": strategy, "gamma": gamma, "grid_n": cfg.grid_n,
                 "status": "error", "message": str(exc)}]
    return [{
        "strategy": strategy, "gamma": gamma, "nu": res.nu, "r": _r_label(res.r),
        "achieved_arl": res.achieved_arl, "grid_n": cfg.grid_n,
        "pilot_w": getattr(res, "pilot_w", None),
        "status": "ok" if getattr(res, "within_tolerance", True) else "tolerance-not-met",
        "message": "",
    }]


def cmd_calibrate(cfg: ExperimentConfig) -> tuple[Table, int]:
    jobs = [(s, g) for s in cfg.strategies for g in _targets(cfg)]
    table = Table(CAL_COLUMNS)
    for rows in _run_jobs(cfg, _calibrate_job, jobs):
        table.rows.extend(rows)
    failed = any(r["status"] == "error" for r in table.rows)
    return table, 1 if failed else 0


CURVE_COLUMNS = ["strategy", "gamma", "nu", "r", "tau", "add", "steady_state"]


def _curve_job(cfg, strategy, gamma):
    res = _instance(cfg, strategy, gamma, snapshot_taus=cfg.taus)
    curve = delay_at(res, cfg.taus)
    rows = []
    for tau, add in zip(cfg.taus, curve.add):
        steady = abs(add - curve.steady_state) <= 1e-6 * abs(curve.steady_state)
        rows.append({"strategy": strategy, "gamma": gamma, "nu": res.nu, "r": _r_label(res.r),
                     "tau": tau, "add": add, "steady_state": steady})
    return rows


def cmd_add_curve(cfg: ExperimentConfig) -> tuple[Table, int]:
    if not cfg.taus:
        raise UsageError("empty --tau-list")
    jobs = [(s, g) for s in cfg.strategies for g in _targets(cfg)]
    table = Table(CURVE_COLUMNS)
    for rows in _run_jobs(cfg, _curve_job, jobs):
        table.rows.extend(rows)
    return table, 0


FRONTIER_COLUMNS = ["gamma", "strategy", "metric", "value"]


def _frontier_job(cfg, strategy, gamma):
    res = _instance(cfg, strategy, gamma)
    rows = [{"gamma": gamma, "strategy": strategy, "metric": "nu", "value": res.nu},
            {"gamma": gamma, "strategy": strategy, "metric": "r", "value": _r_label(res.r)},
            {"gamma": gamma, "strategy": strategy, "metric": "j_p", "value": worst_delay(res)}]
    if res.r is not None and InitStrategy.parse(strategy).kind is InitKind.R_NU:
        rows.append({"gamma": gamma, "strategy": strategy, "metric": "lower_bound",
                     "value": lower_bound(res.characteristics.vectors, res.r)})
    return rows


def cmd_frontier(cfg: ExperimentConfig) -> tuple[Table, int]:
    jobs = [(s, g) for g in _targets(cfg) for s in cfg.strategies]
    table = Table(FRONTIER_COLUMNS)
    for rows in _run_jobs(cfg, _frontier_job, jobs):
        table.rows.extend(rows)
    kinds = {s: InitStrategy.parse(s).kind for s in cfg.strategies}
    for g in _targets(cfg):
        jp = {kinds[r["strategy"]]: r["value"] for r in table.rows
              if r["gamma"] == g and r["metric"] == "j_p"}
        lb = [r["value"] for r in table.rows if r["gamma"] == g and r["metric"] == "lower_bound"]
        flags = []
        if InitKind.R_NU in jp and lb:
            flags.append(("lower_bound<=j_p(r-nu)", lb[0] <= jp[InitKind.R_NU]))
            table.rows.append({"gamma": g, "strategy": "r-nu", "metric": "gap",
                               "value": jp[InitKind.R_NU] - lb[0]})
        for a, b in ((InitKind.R_NU, InitKind.SRP), (InitKind.R_NU, InitKind.QSD_MEAN),
                     (InitKind.SRP, InitKind.R_STAR), (InitKind.QSD_MEAN, InitKind.R_STAR)):
            if a in jp and b in jp:
                flags.append((f"j_p({a.value})<=j_p({b.value})", jp[a] <= jp[b]))
        for name, ok in flags:
            table.rows.append({"gamma": g, "strategy": "", "metric": f"check:{name}", "value": bool(ok)})
    return table, 0


def cmd_qsd(cfg: ExperimentConfig) -> tuple[Table, int]:
    table = Table(["quantity", "x", "value"])
    if cfg.chart in ("sr", "srp"):
        res = _instance(cfg, "srp", None if cfg.nu is not None else cfg.gammas[0])
        chars = res.characteristics
    else:
        # quasi-stationary law of CUSUM / EWMA at the given thresholds
        if cfg.chart == "ewma":
            spec = ProcedureSpec.ewma(cfg.nu1, cfg.nu2, cfg.alpha)
        else:
            if cfg.nu is None:
                raise UsageError("qsd for CUSUM needs --nu")
            spec = ProcedureSpec.cusum(cfg.nu)
        chars = operating_characteristics(spec, cfg.model, cfg.grid_n, quasi_stationary=True)
    srp = chars.srp
    for name, value in (("lambda_max", srp.lambda_max), ("arl_from_eigenvalue", srp.arl_from_eigenvalue),
                        ("mu", srp.mu), ("arl", srp.arl), ("add", srp.add),
                        ("nu", chars.grid.hi), ("eigen_residual", srp.eigen.residual)):
        table.rows.append({"quantity": name, "x": None, "value": value})
    for x, q in zip(chars.grid.nodes, srp.q):
        table.rows.append({"quantity": "q", "x": x, "value": q})
    return table, 0


def cmd_lfa(cfg: ExperimentConfig) -> tuple[Table, int]:
    if not cfg.k_list:
        raise UsageError("empty --k-list")
    table = Table(["strategy", "nu", "r", "k", "m", "probability"])
    horizon = max(cfg.k_list) + max(cfg.m_list)
    for strategy in cfg.strategies:
        if InitStrategy.parse(strategy).randomized:
            raise UsageError("local false-alarm probabilities need a deterministic head start")
        for gamma in _targets(cfg):
            res = _instance(cfg, strategy, gamma)
            rho = rho_sequence(res.characteristics.pre_change_operator(), horizon)
            for k in cfg.k_list:
                for m in cfg.m_list:
                    table.rows.append({"strategy": strategy, "nu": res.nu, "r": res.r, "k": k, "m": m,
                                       "probability": local_false_alarm_prob(rho, res.r, k, m)})
    return table, 0


MC_COLUMNS = ["strategy", "quantity", "tau", "mean", "std_error", "ci_low", "ci_high",
              "replications", "seed", "rejection_rate"]


def _quantities(cfg: ExperimentConfig) -> list[Quantity]:
    out = []
    for q in cfg.quantities:
        if q == "arl":
            out.append(Quantity.arl())
        elif q == "add":
            out.extend(Quantity.add_at(t) for t in cfg.taus)
        else:
            out.extend(Quantity.survival(t) for t in cfg.taus)
    if not out:
        raise UsageError("nothing to estimate")
    return out


def _mc_setup(cfg, res):
    chars: ChartCharacteristics = res.characteristics
    initial = QsdSampler(chars.grid, res.srp.q) if res.r is None else res.r
    return chars.spec, initial


def cmd_mc(cfg: ExperimentConfig) -> tuple[Table, int]:
    table = Table(MC_COLUMNS)
    quantities = _quantities(cfg)
    for strategy in cfg.strategies:
        for gamma in _targets(cfg):
            res = _instance(cfg, strategy, gamma)
            spec, initial = _mc_setup(cfg, res)
            for q in quantities:
                est = estimate(spec, cfg.model, q, cfg.replications, cfg.seed, initial=initial,
                               gamma=max(res.achieved_arl, 10.0), workers=cfg.workers)
                lo, hi = est.ci95
                table.rows.append({"strategy": strategy, "quantity": q.kind.value, "tau": q.tau,
                                   "mean": est.mean, "std_error": est.std_error, "ci_low": lo,
                                   "ci_high": hi, "replications": est.replications, "seed": est.seed,
                                   "rejection_rate": est.rejection_rate})
    return table, 0


VALIDATE_COLUMNS = ["check", "strategy", "reference", "observed", "discrepancy", "tolerance", "passed"]


def _richardson(cfg, res) -> list[dict]:
    """Compare the solution on N and 2N intervals at the same threshold."""
    chars = res.characteristics
    spec = chars.spec
    fine = operating_characteristics(spec, cfg.model, 2 * cfg.grid_n, quasi_stationary=res.r is None)
    rows = []
    pairs = [("richardson:arl", chars.arl, fine.arl), ("richardson:add0", chars.add0, fine.add0)]
    for name, coarse, refined in pairs:
        err = abs(refined - coarse) / 3.0 / abs(refined)
        rows.append({"check": name, "reference": refined, "observed": coarse, "discrepancy": err,
                     "tolerance": cfg.richardson_rtol, "passed": err <= cfg.richardson_rtol})
    return rows


def cmd_validate(cfg: ExperimentConfig) -> tuple[Table, int]:
    table = Table(VALIDATE_COLUMNS)
    for strategy in cfg.strategies:
        for gamma in _targets(cfg):
            res = _instance(cfg, strategy, gamma)
            chars = res.characteristics
            spec, initial = _mc_setup(cfg, res)
            cap = max(res.achieved_arl, 10.0)
            checks = [("mc:arl", Quantity.arl(), res.achieved_arl, 0.005)]
            curve = delay_at(res, cfg.taus) if cfg.taus else None
            for tau, add in zip(cfg.taus, curve.add if curve else ()):
                checks.append((f"mc:add({tau})", Quantity.add_at(tau), float(add), 0.005))
            if res.r is not None:
                rho = rho_sequence(chars.pre_change_operator(), 100).at(res.r)
                for tau in (10, 100):
                    checks.append((f"mc:survival({tau})", Quantity.survival(tau), float(rho[tau]), 0.0))
            for name, q, ref, rtol in checks:
                est = estimate(spec, cfg.model, q, cfg.replications, cfg.seed, initial=initial,
                               gamma=cap, workers=cfg.workers)
                tol = max(rtol * abs(ref), 3.0 * est.std_error)
                table.rows.append({"check": name, "strategy": strategy, "reference": ref,
                                   "observed": est.mean, "discrepancy": abs(est.mean - ref),
                                   "tolerance": tol, "passed": abs(est.mean - ref) <= tol})
            for row in _richardson(cfg, res):
                row["strategy"] = strategy
                table.rows.append(row)
    failed = not all(r["passed"] for r in table.rows)
    return table, 1 if failed else 0


HANDLERS = {
    "calibrate": cmd_calibrate,
    "add-curve": cmd_add_curve,
    "frontier": cmd_frontier,
    "qsd": cmd_qsd,
    "lfa": cmd_lfa,
    "validate": cmd_validate,
    "mc": cmd_mc,
}


# -- argument parsing -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("model and chart")
    g.add_argument("--model", choices=["gaussian", "exponential"], help="observation model (default gaussian)")
    g.add_argument("--theta", type=float, help="post-change parameter (default 0.1)")
    g.add_argument("--chart", choices=["sr", "srp", "cusum", "ewma"], help="chart family (default sr)")
    g.add_argument("--strategy", help="comma list of fixed:R, classical, r-nu, r-star, qsd-mean, srp")
    g.add_argument("--alpha", type=float, help="EWMA forgetting factor (default 0.9)")
    g.add_argument("--nu", type=float, help="use this threshold instead of calibrating")
    g.add_argument("--nu1", type=float, help="EWMA lower threshold")
    g.add_argument("--nu2", type=float, help="EWMA upper threshold")
    g = common.add_argument_group("numerics")
    g.add_argument("--gamma", help="comma list of ARL targets")
    g.add_argument("--grid-n", dest="grid_n", type=int, help="grid intervals (default 10000)")
    g.add_argument("--coarse-n", dest="coarse_n", type=int,
                   help="pre-calibration grid (default 1000; 0 or >= grid-n disables)")
    g.add_argument("--arl-rtol", dest="arl_rtol", type=float, help="calibration tolerance (default 1e-3)")
    g.add_argument("--tau-max", dest="tau_max", type=int, help="horizon of the delay recursions")
    g.add_argument("--tau-list", dest="tau_list", help="comma list of change points")
    g.add_argument("--k-list", dest="k_list", help="lfa: comma list of k")
    g.add_argument("--m-list", dest="m_list", help="lfa: comma list of window lengths m")
    g.add_argument("--richardson-rtol", dest="richardson_rtol", type=float,
                   help="validate: tolerance of the N vs 2N error estimate (default 1e-3)")
    g = common.add_argument_group("simulation")
    g.add_argument("--quantity", help="mc: comma list of arl, add, survival (default arl,add)")
    g.add_argument("--replications", type=int, help="Monte Carlo replications (default 1000000)")
    g.add_argument("--seed", type=int, help="random seed (default 12345)")
    g.add_argument("--workers", type=int, help="worker processes (default 1)")
    g = common.add_argument_group("output")
    g.add_argument("--out", help="output file (default stdout)")
    g.add_argument("--format", choices=["csv", "json"], help="output format (default csv)")
    g.add_argument("--config", help="INI-style settings file; flags override it")
    g.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(
        prog="quickdetect",
        description="Operating characteristics of Shiryaev-Roberts, CUSUM and EWMA charts "
                    "from integral equations, with Monte Carlo checks.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "calibrate": "thresholds and head starts matching ARL targets",
        "add-curve": "conditional detection delay versus change point",
        "frontier": "worst-case delay per strategy and the lower bound",
        "qsd": "quasi-stationary density, mean and eigenvalue",
        "lfa": "local false-alarm probabilities",
        "validate": "Monte Carlo and grid-refinement checks",
        "mc": "Monte Carlo estimates",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        table, code = HANDLERS[cfg.command](cfg)
    except UsageError as exc:
        parser.error(str(exc))  # exits with status 2
    except ERRORS as exc:
        print(f"quickdetect: computation failed: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"quickdetect: invalid input: {exc}", file=sys.stderr)
        return 2
    text = table.render(cfg)
    if cfg.out:
        try:
            with open(cfg.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            print(f"quickdetect: cannot write {cfg.out}: {exc}", file=sys.stderr)
            return 1
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
