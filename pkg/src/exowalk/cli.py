"""Command-line entry points.

Subcommands ``simulate``, ``sweep``, ``optimize`` and ``analyze`` write a
report bundle (``metrics.json``, ``trajectory.csv``, ``trials.jsonl``,
``manifest.json``); ``replay`` re-runs a command from its manifest.  Nothing
time-dependent is written, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import platform
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import metrics as M
from .controller import ExoConfig
from .dynamics import SimulationDiverged, WalkerParams
from .human import HumanModel
from .runs import SETTLE_S, analyze_trajectory, run_fixed, run_scenario, terrain_means
from .scenario import Scenario, ScenarioError, bundled, parse_scenario
from .simulation import HybridTrajectory, SchemaError

log = logging.getLogger("exowalk")

ENV_OUT = "EXOWALK_OUT"
DEFAULT_OUT = "exowalk-out"
EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_SCHEMA = 4
EXIT_DIVERGED = 5
SWEEP_RANGE = (0.0, 4.0)
DEFAULT_GRID = (0.0, 1.0, 1.5, 2.0, 2.3, 2.5)


class ConfigError(ValueError):
    pass


def dumps(obj) -> str:
    """Canonical JSON used for every artifact and for hashing."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


@dataclass
class RunConfig:
    walker: WalkerParams = field(default_factory=WalkerParams)
    human: HumanModel = field(default_factory=HumanModel)
    exo: ExoConfig = field(default_factory=ExoConfig)
    scenario: Scenario | None = None
    seed: int = 0
    dt: float = 1e-3
    duration: float = 40.0
    sensor_noise: float = 0.0
    settle: float = SETTLE_S

    def to_dict(self) -> dict:
        return {
            "walker": {k: float(v) for k, v in vars(self.walker).items()},
            "human": self.human.to_dict(),
            "exo": self.exo.to_dict(),
            "scenario": None if self.scenario is None else self.scenario.to_list(),
            "seed": self.seed,
            "dt": self.dt,
            "duration_s": self.duration,
            "sensor_noise_rad": self.sensor_noise,
            "settle_s": self.settle,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "RunConfig":
        known = {"walker", "human", "exo", "scenario", "seed", "dt", "duration_s", "sensor_noise_rad", "settle_s"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config key(s) {sorted(extra)}")
        try:
            cfg = cls(
                walker=WalkerParams(**{k: float(v) for k, v in d.get("walker", {}).items()}),
                human=HumanModel.from_dict(d.get("human", {})),
                exo=ExoConfig.from_dict(d.get("exo", {})),
                seed=_as_seed(d.get("seed", 0)),
                dt=float(d.get("dt", 1e-3)),
                duration=float(d.get("duration_s", 40.0)),
                sensor_noise=float(d.get("sensor_noise_rad", 0.0)),
                settle=float(d.get("settle_s", SETTLE_S)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        sc = d.get("scenario")
        if isinstance(sc, str):
            cfg.scenario = load_scenario_arg(sc, base_dir)
        elif sc is not None:
            try:
                cfg.scenario = parse_scenario(json.dumps(sc), name="inline")
            except ScenarioError as exc:
                raise ConfigError(f"scenario: {exc}") from None
        if not cfg.duration > 0 or not cfg.sensor_noise >= 0:
            raise ConfigError("duration_s must be positive and sensor_noise_rad non-negative")
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        """A config file layered over the bundled defaults."""
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        return cls.from_dict(merge_config(default_config_dict(), _parse_object(text, str(path))), path.parent)

    @classmethod
    def default(cls) -> "RunConfig":
        return cls.from_dict(default_config_dict())


def _parse_object(text: str, where: str) -> dict:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{where}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a JSON object")
    return d


def default_config_dict() -> dict:
    """The bundled default run configuration (walker, human gains, exo)."""
    text = resources.files("exowalk.data").joinpath("default-config.json").read_text(encoding="utf-8")
    return _parse_object(text, "default-config.json")


def merge_config(base: dict, override: dict) -> dict:
    """Section-wise merge: the walker, human and exo tables are updated key
    by key, every other entry is replaced."""
    out = dict(base)
    for k, v in override.items():
        if k in ("walker", "human", "exo") and isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = v
    return out


def _as_seed(v) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or v < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {v!r}")
    return v


def load_scenario_arg(spec: str, base_dir: Path | None = None) -> Scenario:
    """A scenario file path, or ``bundled:NAME`` for a packaged asset."""
    try:
        if spec.startswith("bundled:"):
            return bundled(spec.split(":", 1)[1])
        path = Path(spec)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        text = path.read_text(encoding="utf-8")
        return parse_scenario(text, name=path.name)
    except FileNotFoundError:
        raise ConfigError(f"scenario {spec!r} not found") from None
    except OSError as exc:
        raise ConfigError(f"scenario {spec!r}: {exc}") from None
    except ScenarioError as exc:
        raise ConfigError(f"scenario {spec!r}: {exc}") from None


def parse_grid(text: str) -> list:
    try:
        grid = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad --grid {text!r}; expected comma-separated numbers") from None
    if not grid:
        raise ConfigError("--grid is empty")
    lo, hi = SWEEP_RANGE
    bad = [b for b in grid if not lo <= b <= hi]
    if bad:
        raise ConfigError(f"grid values {bad} outside the safety range [{lo}, {hi}]")
    return grid


# -- report bundle ---------------------------------------------------------

@dataclass
class ReportBundle:
    manifest: dict
    metrics: dict
    trajectory_csv: str | None = None
    trials_jsonl: str | None = None
    extra: dict = field(default_factory=dict)

    def files(self) -> dict:
        out = {"manifest.json": dumps(self.manifest), "metrics.json": dumps(self.metrics)}
        if self.trajectory_csv is not None:
            out["trajectory.csv"] = self.trajectory_csv
        if self.trials_jsonl is not None:
            out["trials.jsonl"] = self.trials_jsonl
        out.update(self.extra)
        return out

    def write(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, text in self.files().items():
            with open(out_dir / name, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return out_dir


def versions() -> dict:
    return {"exowalk": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def make_manifest(command: str, args: dict, config: RunConfig) -> dict:
    payload = {"command": command, "args": args, "config": config.to_dict()}
    return {**payload, "config_hash": config_hash(payload), "seed": config.seed, "versions": versions()}


def config_hash(payload: dict) -> str:
    return hashlib.sha256(dumps(payload).encode("utf-8")).hexdigest()


def _stamp(manifest: dict) -> dict:
    return {"config_hash": manifest["config_hash"], "seed": manifest["seed"]}


# -- commands --------------------------------------------------------------

def cmd_simulate(config: RunConfig, beta: float) -> ReportBundle:
    """Constant-gain run on flat ground with the full metric report."""
    manifest = make_manifest("simulate", {"beta": beta}, config)
    run = run_fixed(beta, config.walker, config.human, config.exo, duration=config.duration, dt=config.dt,
                    seed=config.seed, sensor_noise=config.sensor_noise, settle=config.settle)
    metrics = {**_stamp(manifest), "command": "simulate", "beta": beta,
               "condition": run.trajectory.meta["condition"], "metrics": run.metrics}
    return ReportBundle(manifest, metrics, run.trajectory.to_csv())


SWEEP_FIELDS = ("beta", "status", "human_sq_torque_N2m2s", "human_positive_work_J", "negative_power_pct",
                "hip_rom_rad", "error")


def cmd_sweep(config: RunConfig, grid) -> ReportBundle:
    """One fixed-gain run per grid value; failed runs stay in the table."""
    grid = sorted(float(b) for b in grid)
    manifest = make_manifest("sweep", {"grid": grid}, config)
    rows = []
    for b in grid:
        row = dict.fromkeys(SWEEP_FIELDS)
        row["beta"] = b
        try:
            m = run_fixed(b, config.walker, config.human, config.exo, duration=config.duration, dt=config.dt,
                          seed=config.seed, sensor_noise=config.sensor_noise, settle=config.settle).metrics
        except (SimulationDiverged, M.InsufficientEvents) as exc:
            row["status"] = "failed"
            row["error"] = str(exc)
            log.warning("beta=%s failed: %s", b, exc)
        else:
            row["status"] = "ok"
            for k in SWEEP_FIELDS[2:-1]:
                row[k] = m[k]
        rows.append(row)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_FIELDS)
    for r in rows:
        w.writerow(["" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k])
                    for k in SWEEP_FIELDS])
    metrics = {**_stamp(manifest), "command": "sweep", "rows": rows}
    return ReportBundle(manifest, metrics, extra={"sweep.csv": buf.getvalue()})


def cmd_optimize(config: RunConfig) -> ReportBundle:
    """Adaptive run over a terrain scenario (the bundled path by default)."""
    if config.scenario is None:
        config.scenario = bundled()
    manifest = make_manifest("optimize", {}, config)
    run = run_scenario(config.scenario, config.walker, config.human, config.exo, dt=config.dt,
                       seed=config.seed, sensor_noise=config.sensor_noise)
    stamp = _stamp(manifest)
    trials = "".join(dumps_line({**json.loads(w.trial().to_json()), **stamp}) for w in run.windows)
    metrics = {**stamp, "command": "optimize", "n_windows": len(run.windows),
               "segments": run.segments, "terrain_means": terrain_means(run.segments)}
    return ReportBundle(manifest, metrics, run.trajectory.to_csv(), trials)


def dumps_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False) + "\n"


def _read_gas(path) -> M.GasSeries:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return M.GasSeries.from_csv(text)


def cmd_analyze(trajectory_path, config: RunConfig, gas_exo=None, gas_noexo=None, gas_rest=None) -> dict:
    """Metric set of an exported trajectory, plus energetics when gas logs
    are given (one log: its net rate; exo and no-exo logs: the reduction)."""
    try:
        text = Path(trajectory_path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{trajectory_path}: {exc.strerror}") from None
    traj = HybridTrajectory.from_csv(text)
    out = {"command": "analyze", "metrics": analyze_trajectory(traj, config.walker, config.settle)}
    if gas_exo is not None or gas_noexo is not None:
        rest = _read_gas(gas_rest) if gas_rest is not None else None
        if gas_exo is not None and gas_noexo is not None:
            out["energetics"] = M.metabolic_report(_read_gas(gas_exo), _read_gas(gas_noexo), rest).to_dict()
        else:
            rate, rest_rate = M.net_metabolic_rate(_read_gas(gas_exo or gas_noexo), rest)
            out["energetics"] = {"net_rate_kcal_min": rate, "resting_kcal_min": rest_rate}
    return out


def replay(manifest_path) -> ReportBundle:
    """Re-run the command recorded in a manifest."""
    try:
        manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{manifest_path}: {exc}") from None
    payload = {k: manifest.get(k) for k in ("command", "args", "config")}
    if config_hash(payload) != manifest.get("config_hash"):
        raise ConfigError(f"{manifest_path}: config hash does not match the recorded config")
    config = RunConfig.from_dict(payload["config"])
    cmd, args = payload["command"], payload["args"]
    if cmd == "simulate":
        return cmd_simulate(config, float(args["beta"]))
    if cmd == "sweep":
        return cmd_sweep(config, args["grid"])
    if cmd == "optimize":
        return cmd_optimize(config)
    raise ConfigError(f"{manifest_path}: cannot replay command {cmd!r}")


# -- argument handling -----------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exowalk", description="Simulate, tune and analyse a negative-damping hip exoskeleton on a compass-gait walker.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=False):
        p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--dt", type=float, help="integration step in s (overrides the config)")
        p.add_argument("--out", help=f"output directory (default: ${ENV_OUT} or ./{DEFAULT_OUT})")
        if scenario:
            p.add_argument("--scenario", help="scenario file, or bundled:NAME")

    p = sub.add_parser("simulate", help="fixed-gain run on flat ground")
    common(p)
    p.add_argument("--beta", type=float, help="assistance gain (default: exo config beta)")

    p = sub.add_parser("sweep", help="fixed-gain runs over a grid of gains")
    common(p)
    p.add_argument("--grid", default=",".join(str(b) for b in DEFAULT_GRID),
                   help="comma-separated gains within [0, 4]")

    p = sub.add_parser("optimize", help="adaptive run over a terrain scenario")
    common(p, scenario=True)

    p = sub.add_parser("analyze", help="metrics of an exported trajectory")
    p.add_argument("trajectory", help="trajectory CSV")
    p.add_argument("--config", help="run configuration JSON (walker parameters, settle time)")
    p.add_argument("--gas", help="gas-exchange CSV of the assisted condition")
    p.add_argument("--gas-noexo", help="gas-exchange CSV of the unassisted condition")
    p.add_argument("--gas-rest", help="gas-exchange CSV at rest")
    p.add_argument("--out", help="write metrics.json here instead of printing it")

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest", help="manifest.json of a previous run")
    p.add_argument("--out", help=f"output directory (default: ${ENV_OUT} or ./{DEFAULT_OUT})")
    return parser


def resolve_config(args) -> RunConfig:
    config = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig.default()
    if getattr(args, "seed", None) is not None:
        config.seed = _as_seed(args.seed)
    if getattr(args, "dt", None) is not None:
        config.dt = args.dt
    if getattr(args, "scenario", None):
        config.scenario = load_scenario_arg(args.scenario)
    return config


def output_dir(args) -> Path:
    """``--out`` wins, then the environment variable, then the default."""
    return Path(args.out or os.environ.get(ENV_OUT) or DEFAULT_OUT)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "analyze":
            config = resolve_config(args)
            report = cmd_analyze(args.trajectory, config, args.gas, args.gas_noexo, args.gas_rest)
            if args.out:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                (Path(args.out) / "metrics.json").write_text(dumps(report), encoding="utf-8")
            else:
                sys.stdout.write(dumps(report))
            return EXIT_OK
        if args.command == "replay":
            bundle = replay(args.manifest)
        else:
            config = resolve_config(args)
            if args.command == "simulate":
                beta = config.exo.beta if args.beta is None else args.beta
                if not SWEEP_RANGE[0] <= beta <= SWEEP_RANGE[1]:
                    raise ConfigError(f"--beta {beta} outside the safety range {list(SWEEP_RANGE)}")
                bundle = cmd_simulate(config, beta)
            elif args.command == "sweep":
                bundle = cmd_sweep(config, parse_grid(args.grid))
            else:
                bundle = cmd_optimize(config)
        out = bundle.write(output_dir(args))
        log.info("wrote %s", out)
        return EXIT_OK
    except ConfigError as exc:
        print(f"exowalk: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SchemaError, M.GasSeriesError) as exc:
        print(f"exowalk: schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except M.InsufficientEvents as exc:
        print(f"exowalk: not enough gait events for metrics: {exc}", file=sys.stderr)
        return EXIT_SCHEMA if args.command == "analyze" else EXIT_CONFIG
    except SimulationDiverged as exc:
        print(f"exowalk: simulation diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
