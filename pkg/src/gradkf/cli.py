"""Command-line front end: ``gradkf {simulate,compare,learn,selftest}``.

Settings resolve as built-in defaults < ``--config`` file < flags.  A
config file holds ``key = value`` lines whose keys are the long flag names
with ``-`` replaced by ``_``; ``#`` starts a comment.  Every run writes
``manifest.txt`` into ``--out`` in that same format, so
``--config out/manifest.txt`` repeats the run exactly.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .experiment import ExperimentConfig, ExperimentDivergence, run_experiment, simulate_trajectory, write_outputs
from .model import read_trajectory_csv, write_trajectory_csv
from .selftest import run_checks

SIM_KEYS = ("horizon", "dt", "q_std", "r_std", "c_mode", "u0", "decay", "seed")
SCENARIO_FLAGS = {"a": "learn_A", "b": "learn_B", "ab": "learn_AB", "c": "learn_C"}


class UsageError(Exception):
    pass


# --- settings -------------------------------------------------------------

def _defaults(command: str) -> Dict[str, object]:
    base = ExperimentConfig()
    d = {k: getattr(base, k) for k in SIM_KEYS}
    if command in ("compare", "learn"):
        d.update(n_steps=[base.n_steps], eta_mu=base.eta_mu, precision=base.precision,
                 init=base.init, jobs=1, traj=None)
    if command == "compare":
        d["precision"] = "auto"
    if command == "learn":
        d.update(scenario="a", lr=base.lr, interleave=False)
    return d


def _parse_value(key: str, text: str):
    text = text.strip()
    if key == "n_steps":
        return [int(v) for v in text.split(",") if v.strip()]
    if key in ("horizon", "seed", "jobs"):
        return int(text)
    if key in ("dt", "q_std", "r_std", "u0", "decay", "lr"):
        return float(text)
    if key == "eta_mu":
        return text if text == "auto" else float(text)
    if key == "interleave":
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise UsageError(f"interleave must be true or false, got {text!r}")
    if key == "traj":
        return text or None
    return text


def _format_value(key: str, value) -> str:
    if key == "n_steps":
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


def read_config(path, command: str) -> Dict[str, object]:
    """Parse a ``key = value`` file, keeping only keys ``command`` understands."""
    known = _defaults(command)
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in known:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r} for {command}")
        try:
            out[key] = _parse_value(key, value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return out


def resolve_settings(args: argparse.Namespace) -> Dict[str, object]:
    settings = _defaults(args.command)
    if getattr(args, "config", None):
        settings.update(read_config(args.config, args.command))
    for key in settings:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def write_manifest(path: Path, command: str, settings: Dict[str, object], outputs: List[Path],
                   duration: float) -> None:
    lines = [f"# gradkf {__version__}",
             f"# command: {command}",
             f"# duration_seconds: {duration:.3f}"]
    lines += [f"# output: {p.name}" for p in outputs]
    lines += [f"{k} = {_format_value(k, v)}" for k, v in settings.items()]
    path.write_text("\n".join(lines) + "\n", newline="\n")


def _experiment_config(settings: Dict[str, object], n_steps: int, scenario: str) -> ExperimentConfig:
    fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    kw = {k: v for k, v in settings.items() if k in fields and k not in ("n_steps", "scenario")}
    return ExperimentConfig(n_steps=n_steps, scenario=scenario, **kw)


# --- commands -------------------------------------------------------------

def _load_traj(settings):
    if not settings.get("traj"):
        return None
    traj = read_trajectory_csv(settings["traj"])
    settings["horizon"] = traj.horizon
    return traj


def _run_one(cfg: ExperimentConfig, traj, out: Path):
    return write_outputs(run_experiment(cfg, traj), out)


def _run_configs(configs, traj, out: Path, jobs: int) -> List[Path]:
    if jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            batches = list(pool.map(_run_one, configs, [traj] * len(configs), [out] * len(configs)))
    else:
        batches = [_run_one(c, traj, out) for c in configs]
    return [p for b in batches for p in b]


def cmd_simulate(settings, out: Path) -> List[Path]:
    cfg = _experiment_config(settings, 1, "none")
    path = out / f"trajectory_seed{cfg.seed}.csv"
    write_trajectory_csv(simulate_trajectory(cfg), path)
    return [path]


def cmd_compare(settings, out: Path) -> List[Path]:
    traj = _load_traj(settings)
    configs = [_experiment_config(settings, n, "none") for n in settings["n_steps"]]
    return _run_configs(configs, traj, out, settings["jobs"])


def cmd_learn(settings, out: Path) -> List[Path]:
    scenario = settings["scenario"]
    if scenario not in SCENARIO_FLAGS:
        raise UsageError(f"--scenario must be one of {sorted(SCENARIO_FLAGS)}")
    traj = _load_traj(settings)
    configs = [_experiment_config(settings, n, SCENARIO_FLAGS[scenario]) for n in settings["n_steps"]]
    return _run_configs(configs, traj, out, settings["jobs"])


COMMANDS = {"simulate": cmd_simulate, "compare": cmd_compare, "learn": cmd_learn}


def cmd_selftest(args) -> int:
    def report(r):
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    results = run_checks(inject_fault=args.inject_fault, report=report)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    print(f"all {len(results)} checks passed")
    return 0


# --- argument parsing -----------------------------------------------------

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _eta(text):
    return text if text == "auto" else float(text)


def _add_common(p):
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--out", default="out", help="output directory (default: out)")


def _add_sim(p):
    p.add_argument("--horizon", type=_positive_int)
    p.add_argument("--dt", type=float)
    p.add_argument("--q-std", dest="q_std", type=float)
    p.add_argument("--r-std", dest="r_std", type=float)
    p.add_argument("--c-mode", dest="c_mode", choices=("random", "identity"))
    p.add_argument("--u0", type=float)
    p.add_argument("--decay", type=float)
    p.add_argument("--seed", type=int)


def _add_filter(p):
    p.add_argument("--n-steps", dest="n_steps", type=_positive_int, action="append",
                   help="gradient steps per timestep; repeat for several runs")
    p.add_argument("--eta-mu", dest="eta_mu", type=_eta, help="descent step size or 'auto'")
    p.add_argument("--precision", choices=("auto", "fixed", "projected"))
    p.add_argument("--init", choices=("prediction", "previous"))
    p.add_argument("--traj", help="trajectory CSV written by 'simulate' instead of simulating")
    p.add_argument("--jobs", type=_positive_int, help="parallel runs (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradkf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gradkf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="write a simulated trajectory CSV")
    _add_common(p)
    _add_sim(p)
    p = sub.add_parser("compare", help="exact vs gradient filter tracking")
    _add_common(p)
    _add_sim(p)
    _add_filter(p)
    p = sub.add_parser("learn", help="online learning of model matrices")
    _add_common(p)
    _add_sim(p)
    _add_filter(p)
    p.add_argument("--scenario", choices=sorted(SCENARIO_FLAGS))
    p.add_argument("--lr", type=float, help="learning rate for the learned matrices")
    p.add_argument("--interleave", action="store_const", const=True,
                   help="update weights after every descent iteration")
    p = sub.add_parser("selftest", help="run the built-in oracle checks")
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    return parser


def _check_compare_source(args):
    if args.command != "compare" or args.traj or args.config:
        return
    if all(getattr(args, k) is None for k in SIM_KEYS):
        raise UsageError("compare needs --traj, a --config file or simulation flags (e.g. --seed)")


def _cleanup(paths: List[Path], out: Path, created: bool):
    for p in paths:
        p.unlink(missing_ok=True)
    if created and out.exists() and not any(out.iterdir()):
        out.rmdir()


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "selftest":
        return cmd_selftest(args)
    out = Path(args.out)
    try:
        _check_compare_source(args)
        settings = resolve_settings(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gradkf: error: {exc}", file=sys.stderr)
        return 2
    created = not out.exists()
    before = set(out.iterdir()) if out.exists() else set()
    start = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = COMMANDS[args.command](settings, out)
        manifest = out / "manifest.txt"
        write_manifest(manifest, args.command, settings, paths, time.perf_counter() - start)
    except UsageError as exc:
        _cleanup(sorted(set(out.iterdir()) - before) if out.exists() else [], out, created)
        print(f"gradkf: error: {exc}", file=sys.stderr)
        return 2
    except ExperimentDivergence as exc:
        _cleanup(sorted(set(out.iterdir()) - before) if out.exists() else [], out, created)
        print(f"gradkf: error: {exc}", file=sys.stderr)
        print("offending config: " + ", ".join(f"{k}={v}" for k, v in exc.config.to_dict().items()),
              file=sys.stderr)
        if exc.config.scenario != "none":
            print("hint: reduce --lr", file=sys.stderr)
        return 1
    except (OSError, ValueError, np.linalg.LinAlgError) as exc:
        _cleanup(sorted(set(out.iterdir()) - before) if out.exists() else [], out, created)
        print(f"gradkf: error: {exc}", file=sys.stderr)
        return 1
    for p in paths + [manifest]:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
