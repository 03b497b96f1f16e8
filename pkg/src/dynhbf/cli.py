"""Batch experiment runner: designs, sweeps, beampatterns and ROC curves.

Every random quantity is drawn from a stream derived from the master seed
by a fixed counter, ``SeedSequence(seed, spawn_key=(draw, stream))``:
stream 0 draws the user channels of channel draw ``draw``, stream 1 the
random analog start of the solver, and stream ``2 + a`` the Monte Carlo
trials of architecture ``a`` (its index in ``ARCHITECTURES``). Adding
draws or architectures therefore never changes earlier results, and the
output does not depend on ``--jobs``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import ao_driver, radar_detect
from .metrics import (ARCHITECTURES, HybridBeamformer, beampattern, peak_to_sidelobe,
                      power_consumption)
from .scenario import (CHANNEL_MODELS, ConfigError, ScenarioConfig, bits_to_nats,
                       default_config, dump_config, generate_comm_channels, load_config)

__all__ = ["main", "build_parser", "stream", "load_design", "config_hash"]

log = logging.getLogger(__name__)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
SOLVE_ERRORS = (ao_driver.InfeasibleQoS, ao_driver.SolverFailure)


class UsageError(Exception):
    pass


def stream(seed: int, draw: int, index: int) -> np.random.Generator:
    """Generator for substream ``index`` of channel draw ``draw``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(draw, index)))


def config_hash(cfg: ScenarioConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()


def _footer(cfg, seed, extra="") -> str:
    text = f"# config_sha256={config_hash(cfg)} seed={seed} version=dynhbf-{__version__}"
    return text + (f" {extra}" if extra else "") + "\n"


def _num(x) -> str:
    """Shortest round-tripping text for a float."""
    return repr(float(x))


def _write_csv(path, header, rows, footer):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        fh.write(footer)


# -- tasks (top level so they pickle for the worker pool) ----------------

@dataclass(frozen=True)
class SolveTask:
    cfg: ScenarioConfig
    architecture: str
    seed: int
    draw: int
    channel_model: str
    opts: ao_driver.SolverOptions


def _channels(cfg, seed, draw, model):
    return generate_comm_channels(cfg, model=model, rng=stream(seed, draw, 0))


def run_task(task: SolveTask):
    """Solve one (scenario, architecture, draw); failures come back as strings."""
    channels = _channels(task.cfg, task.seed, task.draw, task.channel_model)
    try:
        result = ao_driver.solve(task.cfg, channels, task.architecture, task.opts,
                                 rng=stream(task.seed, task.draw, 1))
    except SOLVE_ERRORS as exc:
        return type(exc).__name__, str(exc)
    return result, channels


def _pmap(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


# -- serialisation --------------------------------------------------------

def _complex_json(a):
    a = np.asarray(a)
    return {"real": a.real.tolist(), "imag": a.imag.tolist()}


def _complex_from(d):
    return np.asarray(d["real"], dtype=float) + 1j * np.asarray(d["imag"], dtype=float)


def _rate_scale(unit):
    return 1.0 if unit == "nats" else 1.0 / np.log(2)


def design_record(result: ao_driver.DesignResult, cfg, seed, unit) -> dict:
    scale = _rate_scale(unit)
    metrics = result.metrics.to_dict()
    metrics["rate_per_user"] = [r * scale for r in metrics["rate_per_user"]]
    metrics["cee"] = metrics["cee"] * scale
    dps = None
    if result.dps is not None:
        dps = {"phi1": result.dps.phi1.tolist(), "phi2": result.dps.phi2.tolist()}
    return {
        "architecture": result.bf.architecture,
        "status": result.status,
        "iterations": result.iterations,
        "seed": seed,
        "config_sha256": config_hash(cfg),
        "version": f"dynhbf-{__version__}",
        "rate_unit": unit,
        "qos_thresholds": [g * scale for g in cfg.qos_thresholds],
        "f_a": _complex_json(result.bf.f_a),
        "f_d": _complex_json(result.bf.f_d),
        "t_eff": _complex_json(result.t_eff),
        "dps_phases": dps,
        "metrics": metrics,
    }


def load_design(path) -> tuple:
    """Read a design JSON back; returns ``(HybridBeamformer, record)``."""
    record = json.loads(Path(path).read_text())
    bf = HybridBeamformer(_complex_from(record["f_a"]), _complex_from(record["f_d"]),
                          record["architecture"])
    return bf, record


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# -- subcommands ----------------------------------------------------------

def _tasks(cfg, archs, args, draws=(0,)):
    opts = ao_driver.SolverOptions(rho=args.rho, max_outer=args.max_outer)
    return [SolveTask(cfg, arch, args.seed, d, args.channel_model, opts)
            for arch in archs for d in draws]


def cmd_solve(cfg, args) -> int:
    out = Path(args.out)
    tasks = _tasks(cfg, args.arch, args)
    failed = []
    for task, res in zip(tasks, _pmap(run_task, tasks, args.jobs)):
        arch = task.architecture
        if isinstance(res[0], str):
            failed.append({"architecture": arch, "error": res[0], "message": res[1]})
            continue
        result, _ = res
        _dump_json(out / f"design_{arch}.json", design_record(result, cfg, args.seed, args.rate_unit))
        scale = _rate_scale(args.rate_unit)
        rows = [[r.iteration, _num(r.al_objective), _num(r.rmi),
                 _num(r.min_rate_margin * scale), _num(r.residual)] for r in result.traces]
        _write_csv(out / f"trace_{arch}.csv",
                   ["iteration", "al_objective", "rmi", f"min_rate_margin_{args.rate_unit}",
                    "residual"], rows, _footer(cfg, args.seed, f"status={result.status}"))
        print(json.dumps({"architecture": arch, "status": result.status,
                          "iterations": result.iterations, "rmi": result.metrics.rmi}))
    if failed:
        for f in failed:
            print(json.dumps(f), file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _parse_values(text, integer=False):
    try:
        vals = [int(v) if integer else float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse value list {text!r}") from exc
    if not vals or any(b <= a for a, b in zip(vals, vals[1:])):
        raise UsageError("sweep values must be nonempty and strictly increasing")
    return vals


def _summarise(cfg, arch, outcomes, unit):
    ok = [o[0] for o in outcomes if not isinstance(o[0], str)]
    statuses = [o[0] if isinstance(o[0], str) else o[0].status for o in outcomes]
    counts = {s: statuses.count(s) for s in sorted(set(statuses))}
    status = ";".join(f"{k}={v}" for k, v in counts.items())
    p_tol = power_consumption(arch, cfg)
    scale = _rate_scale(unit)
    if ok:
        mean_rmi = float(np.mean([r.metrics.rmi for r in ok]))
        mean_rate = float(np.mean([np.sum(r.metrics.rate_per_user) for r in ok])) * scale
    else:
        mean_rmi = mean_rate = float("nan")
    return [_num(mean_rmi), _num(mean_rate), _num(mean_rmi / p_tol), _num(mean_rate / p_tol),
            len(ok), status]


def cmd_sweep(cfg, args) -> int:
    if args.sweep == "qos":
        values = _parse_values(args.values)
        points = [cfg.replace(qos_thresholds=_to_nats(v, args.rate_unit)) for v in values]
    else:
        values = _parse_values(args.values, integer=True)
        points = [cfg.replace(n_tx=v) for v in values]
    for p in points:
        p.validate()
    draws = range(args.draws)
    tasks = [t for p in points for t in _tasks(p, args.arch, args, draws)]
    outcomes = _pmap(run_task, tasks, args.jobs)
    rows = []
    k = 0
    for v, p in zip(values, points):
        for arch in args.arch:
            chunk = outcomes[k:k + args.draws]
            k += args.draws
            rows.append([v, arch] + _summarise(p, arch, chunk, args.rate_unit))
    name = f"qos_{args.rate_unit}" if args.sweep == "qos" else "n_tx"
    header = [name, "architecture", "mean_rmi", f"mean_sum_rate_{args.rate_unit}", "ree",
              "cee", "draws", "status"]
    _write_csv(Path(args.out) / "sweep.csv", header, rows,
               _footer(cfg, args.seed, f"sweep={args.sweep} draws_requested={args.draws}"))
    return EXIT_OK


def _grid(text):
    try:
        start, stop, step = (float(x) for x in text.split(":"))
    except ValueError as exc:
        raise UsageError("grid must be start:stop:step in degrees") from exc
    if step <= 0 or stop < start:
        raise UsageError("grid needs step > 0 and stop >= start")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)


def cmd_beampattern(cfg, args) -> int:
    grid = _grid(args.grid)
    tasks = _tasks(cfg, args.arch, args)
    code = EXIT_OK
    for task, res in zip(tasks, _pmap(run_task, tasks, args.jobs)):
        arch = task.architecture
        if isinstance(res[0], str):
            print(json.dumps({"architecture": arch, "error": res[0], "message": res[1]}),
                  file=sys.stderr)
            code = EXIT_RUNTIME
            continue
        gain = beampattern(res[0].bf, np.deg2rad(grid), cfg)[:, 1]
        rows = [[_num(a), _num(g)] for a, g in zip(grid, gain)]
        _write_csv(Path(args.out) / f"beampattern_{arch}.csv", ["angle_deg", "gain_db"], rows,
                   _footer(cfg, args.seed))
        pslr = peak_to_sidelobe(np.deg2rad(grid), gain, cfg.target_angle, cfg.n_tx,
                                cfg.spacing_factor)
        print(json.dumps({"architecture": arch, "peak_to_sidelobe_db": pslr}))
    return code


def cmd_roc(cfg, args) -> int:
    grid = np.asarray(_parse_values(args.pfa)) if args.pfa else radar_detect.DEFAULT_PFA_GRID
    draws = range(args.draws)
    tasks = _tasks(cfg, args.arch, args, draws)
    outcomes = _pmap(run_task, tasks, args.jobs)
    rows, code = [], EXIT_OK
    for a, arch in enumerate(args.arch):
        curves = []
        for d in draws:
            res = outcomes[a * args.draws + d]
            if isinstance(res[0], str):
                print(json.dumps({"architecture": arch, "draw": d, "error": res[0],
                                  "message": res[1]}), file=sys.stderr)
                code = EXIT_RUNTIME
                continue
            idx = 2 + ARCHITECTURES.index(arch)
            curves.append(radar_detect.roc_curve(res[0].bf, cfg, args.trials, grid,
                                                 rng=stream(args.seed, d, idx)))
        if not curves:
            continue
        p_d = np.mean([c.p_d for c in curves], axis=0)
        analytic = np.mean([c.analytic for c in curves], axis=0)
        for pf, pd, an in zip(curves[0].p_fa, p_d, analytic):
            rows.append([_num(pf), _num(pd), args.trials, arch, args.seed, len(curves), _num(an)])
    _write_csv(Path(args.out) / "roc.csv",
               ["p_fa", "p_d", "trials", "architecture", "seed", "draws", "p_d_analytic"],
               rows, _footer(cfg, args.seed))
    return code


def cmd_validate(cfg, args) -> int:
    print(json.dumps({"valid": True, "config_sha256": config_hash(cfg)}))
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "beampattern": cmd_beampattern,
            "roc": cmd_roc, "validate": cmd_validate}


# -- argument handling ----------------------------------------------------

def _arch_list(text):
    archs = [a.strip() for a in text.split(",") if a.strip()]
    bad = [a for a in archs if a not in ARCHITECTURES]
    if bad or not archs:
        raise argparse.ArgumentTypeError(
            f"unknown architecture(s) {bad}; choose from {', '.join(ARCHITECTURES)}")
    return archs


def _seed(text):
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario file (defaults to the built-in setting)")
    common.add_argument("--arch", type=_arch_list, default=list(ARCHITECTURES),
                        help="comma-separated architectures")
    common.add_argument("--seed", type=_seed, default=None,
                        help="master seed (defaults to the config's rng_seed)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--jobs", type=_positive, default=1, help="worker processes")
    common.add_argument("--qos", type=float, default=None,
                        help="rate threshold for every user, in --rate-unit")
    common.add_argument("--rate-unit", choices=("bits", "nats"), default="bits",
                        help="unit of --qos, qos sweep values and reported rates")
    common.add_argument("--channel-model", choices=CHANNEL_MODELS, default="iid-rayleigh")
    common.add_argument("--rho", type=float, default=ao_driver.SolverOptions.rho)
    common.add_argument("--max-outer", type=_positive, default=ao_driver.SolverOptions.max_outer)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dynhbf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="design one beamformer per architecture")
    sw = sub.add_parser("sweep", parents=[common], help="average metrics over a parameter sweep")
    sw.add_argument("--sweep", choices=("qos", "n_tx"), required=True)
    sw.add_argument("--values", required=True, help="comma-separated, strictly increasing")
    sw.add_argument("--draws", type=_positive, default=5)
    bp = sub.add_parser("beampattern", parents=[common], help="transmit beampattern per design")
    bp.add_argument("--grid", default="-90:90:0.25", help="start:stop:step in degrees")
    roc = sub.add_parser("roc", parents=[common], help="Monte Carlo detection ROC")
    roc.add_argument("--trials", type=_positive, default=10_000)
    roc.add_argument("--pfa", default=None, help="comma-separated false-alarm grid")
    roc.add_argument("--draws", type=_positive, default=1)
    sub.add_parser("validate", parents=[common], help="check a scenario file")
    return parser


def _to_nats(value, unit):
    return bits_to_nats(value) if unit == "bits" else float(value)


def _scenario(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if args.qos is not None:
        cfg = cfg.replace(qos_thresholds=_to_nats(args.qos, args.rate_unit))
    if args.seed is None:
        args.seed = cfg.rng_seed
    else:
        cfg = cfg.replace(rng_seed=args.seed)
    return cfg.validate()


def _error(kind, message, details=None) -> None:
    body = {"error": kind, "message": message}
    if details:
        body["details"] = details
    print(json.dumps(body), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _scenario(args)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        _error("ConfigError", "invalid scenario", [{"field": f, "problem": m} for f, m in exc.errors])
        return EXIT_USAGE
    except UsageError as exc:
        _error("UsageError", str(exc))
        return EXIT_USAGE
    except OSError as exc:
        _error("IOError", str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
