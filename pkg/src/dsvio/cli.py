"""Command-line front end.

Commands: ``simulate``, ``bench4``, ``health`` and ``gen-data``. Settings come
from an optional config file (``--config``) and from flags, flags winning.
A config file is either text with one ``dotted.key = value`` per line (values
are JSON when they parse as JSON, bare strings otherwise; ``#`` starts a
comment) or a JSON run manifest written by an earlier run.

Every run writes ``manifest.json`` into the output directory; passing it back
through ``--config`` repeats the run.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import importlib
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from . import __version__

log = logging.getLogger("dsvio")

COMMANDS = ("simulate", "bench4", "health", "gen-data")


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class RunConfig:
    command: str
    T: float = 1.0
    N: int = 100
    J: int = 100
    seed: int = 0
    problem: str = "remark"
    mode: str = "saa"
    x0: Optional[Tuple[float, ...]] = None
    sigma: float = 0.5
    sigmas: Tuple[float, ...] = (0.1, 0.5, 1.0, 1.5)
    Js: Tuple[int, ...] = (30, 100, 200, 500)
    reps: int = 10
    bench_N: int = 2000
    reference_J: int = 1000
    persons: int = 2
    days: int = 2
    downsample: int = 12
    steps: Optional[int] = None
    input_dir: Optional[str] = None
    out: str = "out"
    paper_scale: bool = False

    def params(self):
        """Flat dotted-key view, the format of config files and manifests."""
        return {key: _jsonable(getattr(self, attr)) for key, attr in KEYS.items()}


# dotted key -> RunConfig attribute
KEYS = {
    "problem.T": "T", "problem.N": "N", "problem.J": "J", "problem.spec": "problem",
    "problem.mode": "mode", "problem.x0": "x0", "problem.sigma": "sigma",
    "run.seed": "seed", "run.paper_scale": "paper_scale",
    "bench4.sigmas": "sigmas", "bench4.Js": "Js", "bench4.reps": "reps",
    "bench4.N": "bench_N", "bench4.reference_J": "reference_J",
    "health.persons": "persons", "health.days": "days", "health.downsample": "downsample",
    "health.steps": "steps", "health.input": "input_dir",
    "output.dir": "out",
}
ATTR_KEY = {v: k for k, v in KEYS.items()}
_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


def _coerce(key, value):
    attr = KEYS[key]
    t = _TYPES[attr]
    try:
        if value is None:
            if "Optional" in t:
                return None
            raise ConfigError(key, "a value is required")
        if "Tuple[float" in t:
            items = value if isinstance(value, (list, tuple)) else [value]
            return tuple(float(v) for v in items)
        if "Tuple[int" in t:
            items = value if isinstance(value, (list, tuple)) else [value]
            return tuple(_as_int(v) for v in items)
        if t == "bool":
            if isinstance(value, bool):
                return value
            if str(value).lower() in ("true", "1", "yes"):
                return True
            if str(value).lower() in ("false", "0", "no"):
                return False
            raise ValueError(value)
        if "int" in t:
            return _as_int(value)
        if "float" in t:
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(key, f"invalid value {value!r}") from None


def _as_int(v):
    if isinstance(v, bool):
        raise ValueError(v)
    if isinstance(v, float):
        if not v.is_integer():
            raise ValueError(v)
        return int(v)
    return int(v)


def read_config_file(path) -> Tuple[Optional[str], dict]:
    """``(command or None, {dotted key: raw value})`` from a text config or a manifest."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    if text.lstrip().startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"invalid JSON: {exc}") from None
        return doc.get("command"), dict(doc.get("params", {}))
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        try:
            values[key] = json.loads(raw)
        except json.JSONDecodeError:
            values[key] = raw
    return None, values


def validate(cfg: RunConfig):
    if cfg.command not in COMMANDS:
        raise ConfigError("command", f"unknown command {cfg.command!r}")
    if not cfg.T > 0:
        raise ConfigError("problem.T", "must be > 0")
    if cfg.N < 1:
        raise ConfigError("problem.N", "must be >= 1")
    if cfg.J < 1:
        raise ConfigError("problem.J", "must be >= 1")
    if cfg.T / cfg.N > 1:
        raise ConfigError("problem.N", f"step T/N = {cfg.T / cfg.N} exceeds 1")
    if cfg.mode not in ("saa", "exact"):
        raise ConfigError("problem.mode", "must be 'saa' or 'exact'")
    if not cfg.sigma > 0 or not cfg.sigmas or min(cfg.sigmas) <= 0:
        raise ConfigError("bench4.sigmas" if cfg.sigma > 0 else "problem.sigma", "sigmas must be > 0")
    if not cfg.Js or min(cfg.Js) < 1:
        raise ConfigError("bench4.Js", "sample sizes must be >= 1")
    for attr in ("reps", "bench_N", "reference_J", "persons"):
        if getattr(cfg, attr) < 1:
            raise ConfigError(ATTR_KEY[attr], "must be >= 1")
    if not 1 <= cfg.days <= 10:
        raise ConfigError("health.days", "must be between 1 and 10")
    if cfg.downsample < 1 or 17280 % cfg.downsample:
        raise ConfigError("health.downsample", "must be a positive divisor of 17280")
    if cfg.steps is not None and cfg.steps < 1:
        raise ConfigError("health.steps", "must be >= 1")
    return cfg


def parse_config(command: str, config_path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Merge defaults, the config file and flag overrides (dotted keys) into a RunConfig."""
    values = {}
    if config_path is not None:
        file_command, values = read_config_file(config_path)
        if file_command is not None and file_command != command:
            raise ConfigError("command", f"config was written by {file_command!r}, not {command!r}")
    values.update(overrides or {})
    kwargs = {}
    for key, raw in values.items():
        if key not in KEYS:
            raise ConfigError(key, "unknown key")
        kwargs[KEYS[key]] = _coerce(key, raw)
    if kwargs.get("paper_scale"):
        # full-size settings unless set explicitly
        for attr, v in (("bench_N", 10_000), ("reps", 50), ("days", 10), ("downsample", 1)):
            if ATTR_KEY[attr] not in values:
                kwargs[attr] = v
    return validate(RunConfig(command=command, **kwargs))


# -- commands -------------------------------------------------------------------

def _load_problem(cfg: RunConfig):
    from . import benchmark, scheme
    spec = cfg.problem
    if spec == "remark":
        return scheme.remark_instance(cfg.T / cfg.N)
    if spec == "example4":
        return benchmark.build_instance(benchmark.ExampleInstance(cfg.sigma))
    if ":" not in spec:
        raise ConfigError("problem.spec", "expected 'remark', 'example4' or 'module:function'")
    mod, _, name = spec.partition(":")
    try:
        factory = getattr(importlib.import_module(mod), name)
    except (ImportError, AttributeError) as exc:
        raise ConfigError("problem.spec", f"cannot load {spec}: {exc}") from None
    problem = factory()
    if not isinstance(problem, scheme.DsvioProblem):
        raise ConfigError("problem.spec", f"{spec} did not return a DsvioProblem")
    return problem


def _run_simulate(cfg: RunConfig, out: Path):
    from . import benchmark, scheme
    from .sampling import RngStream, stream_id
    problem = _load_problem(cfg)
    if cfg.x0 is not None:
        x0 = np.array(cfg.x0, dtype=float)
    elif cfg.problem == "example4":
        x0 = np.array(benchmark.DEFAULT_X0)
    else:
        x0 = np.ones(problem.n)
    if x0.size != problem.n:
        raise ConfigError("problem.x0", f"needs {problem.n} coordinates")
    sc = scheme.SchemeConfig(T=cfg.T, N=cfg.N, J=cfg.J, stream=RngStream(cfg.seed, stream_id("simulate")))
    solver = benchmark.BENCH_SOLVER if cfg.problem == "example4" else scheme.inner.SolverConfig()
    traj, _ = scheme.run_scheme(problem, x0, sc, solver, scheme.Mode(cfg.mode), keep_records=False)
    path = out / "trajectory.csv"
    scheme.write_trajectory_csv(traj, path)
    return [path]


def _write_dicts(rows, path, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])


def _run_bench4(cfg: RunConfig, out: Path):
    from . import benchmark
    x0 = benchmark.DEFAULT_X0 if cfg.x0 is None else cfg.x0
    if len(x0) != 2:
        raise ConfigError("problem.x0", "needs 2 coordinates")
    runs, summary = benchmark.experiment_grid(cfg.sigmas, cfg.Js, cfg.reps, cfg.bench_N, cfg.seed,
                                              cfg.reference_J, x0)
    p1, p2 = out / "bench4_runs.csv", out / "bench4_summary.csv"
    _write_dicts(runs, p1, ("sigma", "J", "rep", "R1", "R2"))
    _write_dicts(summary, p2, ("sigma", "J", "R1_mean", "R2_mean"))
    return [p1, p2]


def _population(cfg: RunConfig):
    from .health import data
    if cfg.input_dir is not None:
        try:
            return data.read_population_csv(cfg.input_dir, cfg.downsample)
        except FileNotFoundError as exc:
            raise ConfigError("health.input", f"missing file {exc.filename}") from None
    return data.generate_population(cfg.persons, cfg.days, cfg.seed, cfg.downsample)


def _run_health(cfg: RunConfig, out: Path):
    from .health import pipeline
    people = _population(cfg)
    available = min(p.data.days for p in people) - 90
    if cfg.days > available:
        raise ConfigError("health.days", f"the data hold only {available} test days")
    report = pipeline.run_health(people, range(cfg.days), cfg.seed, steps=cfg.steps)
    paths = pipeline.write_report(report, out)
    log.info("pooled accuracy %s", report.accuracy)
    return paths


def _run_gen_data(cfg: RunConfig, out: Path):
    from .health import data
    people = data.generate_population(cfg.persons, cfg.days, cfg.seed, cfg.downsample)
    return list(data.write_population_csv(people, out).values())


RUNNERS = {"simulate": _run_simulate, "bench4": _run_bench4, "health": _run_health,
           "gen-data": _run_gen_data}


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = RUNNERS[cfg.command](cfg, out)
    manifest = {
        "command": cfg.command,
        "params": cfg.params(),
        "seed": cfg.seed,
        "version": __version__,
        "outputs": {Path(p).name: _sha256(p) for p in paths},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return 0


# -- argument parsing -------------------------------------------------------------

FLAGS = [
    ("--T", "problem.T", float, "time horizon"),
    ("--N", "problem.N", int, "number of time steps"),
    ("--J", "problem.J", int, "samples per node"),
    ("--problem", "problem.spec", str, "remark, example4 or module:function returning a DsvioProblem"),
    ("--mode", "problem.mode", str, "saa or exact"),
    ("--x0", "problem.x0", str, "initial state, comma separated"),
    ("--sigma", "problem.sigma", float, "sigma of the example4 problem"),
    ("--seed", "run.seed", int, "master seed"),
    ("--sigmas", "bench4.sigmas", str, "comma separated sigma list"),
    ("--Js", "bench4.Js", str, "comma separated sample sizes"),
    ("--reps", "bench4.reps", int, "repetitions per grid cell"),
    ("--bench-N", "bench4.N", int, "time steps of the accuracy study"),
    ("--reference-J", "bench4.reference_J", int, "sample size of the reference run"),
    ("--persons", "health.persons", int, "number of synthetic persons"),
    ("--days", "health.days", int, "test days per person"),
    ("--downsample", "health.downsample", int, "keep one of every k 5-second steps"),
    ("--steps", "health.steps", int, "limit on tracked steps per day"),
    ("--input", "health.input", str, "directory of the five population CSVs"),
    ("--out", "output.dir", str, "output directory"),
]
_LISTS = {"problem.x0", "bench4.sigmas", "bench4.Js"}


def build_parser():
    parser = argparse.ArgumentParser(prog="dsvio", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"dsvio {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--config", help="config file or manifest.json")
        p.add_argument("--paper-scale", action="store_true", default=None, help="full-size settings")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any dotted config key")
        for flag, key, typ, help_ in FLAGS:
            p.add_argument(flag, dest=key, type=typ, default=None, help=help_)
    return parser


def _flag_overrides(ns):
    values = {}
    for _, key, _, _ in FLAGS:
        v = getattr(ns, key)
        if v is None:
            continue
        values[key] = [s for s in v.split(",") if s] if key in _LISTS else v
    if ns.paper_scale:
        values["run.paper_scale"] = True
    for item in ns.set:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(item, "expected KEY=VALUE")
        try:
            values[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            values[key.strip()] = raw
    return values


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(ns.command, ns.config, _flag_overrides(ns))
    except ConfigError as exc:
        parser.exit(2, f"dsvio {ns.command}: error: {exc}\n")
    try:
        return run(cfg)
    except ConfigError as exc:
        print(f"dsvio {ns.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"dsvio {ns.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
