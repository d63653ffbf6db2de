"""Command line entry point: ``pcfa <command> [--config PATH] [--seed N] [--out DIR]``.

Exit status is 0 on success, 1 for configuration or usage errors and 2 when
a run aborts.  Every CSV starts with ``#`` comment lines holding the
effective configuration and seeds; JSON reports carry the same text under
``"config"``.
"""
from __future__ import annotations

import argparse
import io
import json
import os
import sys

import numpy as np

from pcfa import optimizer as opt
from pcfa.config import ConfigError, ExperimentConfig, load_config, reference_text
from pcfa.forecast import ForecastGenerator
from pcfa.policy import Identity
from pcfa.simulator import Simulator, improvement_stderr, policy_improvement, scan_objective


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _header(cfg: ExperimentConfig, extra: dict) -> str:
    lines = [f"# {k} = {v}" for k, v in extra.items()]
    lines += ["# " + line for line in cfg.source.rstrip("\n").splitlines()]
    return "\n".join(lines) + "\n"


def _write(out: str, name: str, body: str, header: str = "") -> str:
    path = os.path.join(out, name)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + body)
    return path


def _csv(fn) -> str:
    buf = io.StringIO()
    fn(buf)
    return buf.getvalue()


def _report(out: str, name: str, cfg: ExperimentConfig, payload: dict) -> str:
    payload = dict(payload, config=cfg.source)
    return _write(out, name, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _stepsize(cfg: ExperimentConfig):
    if cfg.stepsize == "rmsprop":
        return opt.RMSProp(cfg.eta, cfg.rms_beta)
    if cfg.stepsize == "adagrad":
        return opt.AdaGrad(cfg.eta, cfg.adagrad_eps)
    return opt.Polynomial()


def _evaluation(sim, cfg, theta, n, base, bench=None):
    bench = bench or sim.evaluate(Identity(), n, base)
    rep = sim.evaluate(theta, n, base)
    return rep, bench, {
        "n_paths": n,
        "first_seed": base,
        "mean_profit": rep.mean_profit,
        "stderr": rep.stderr,
        "benchmark_mean_profit": bench.mean_profit,
        "delta_f": policy_improvement(rep, bench),
        "delta_f_stderr": improvement_stderr(rep, bench),
    }


def cmd_forecast_gen(cfg: ExperimentConfig, out: str, seed: int) -> dict:
    fs = ForecastGenerator(cfg.sim.forecast).sample(seed)
    path = _write(out, "forecast_sample.csv", _csv(fs.write_csv), _header(cfg, {"path_seed": seed}))
    return {"files": [path]}


def cmd_simulate(cfg: ExperimentConfig, out: str, seed: int) -> dict:
    sim = Simulator(cfg.sim, cache_paths=0)
    theta = cfg.parameterization()
    base = cfg.test_seed
    rep, bench, summary = _evaluation(sim, cfg, theta, cfg.n_paths, base)

    def rows(fh):
        fh.write("seed,profit,benchmark_profit\n")
        for i, (a, b) in enumerate(zip(rep.per_path, bench.per_path)):
            fh.write(f"{base + i},{float(a)!r},{float(b)!r}\n")

    hdr = _header(cfg, {"theta": list(map(float, theta.vector())), "first_seed": base})
    files = [_write(out, "simulate_paths.csv", _csv(rows), hdr)]
    traj = sim.rollout(theta, base)
    files.append(_write(out, "trajectory.csv", _csv(traj.write_csv), _header(cfg, {"path_seed": base})))
    summary["theta"] = list(map(float, theta.vector()))
    files.append(_report(out, "simulate_report.json", cfg, summary))
    return {"files": files, "summary": summary}


def cmd_benchmark(cfg: ExperimentConfig, out: str, seed: int) -> dict:
    sim = Simulator(cfg.sim, cache_paths=0)
    rep = sim.evaluate(Identity(), cfg.n_test, cfg.test_seed)

    def rows(fh):
        fh.write("seed,profit\n")
        for i, v in enumerate(rep.per_path):
            fh.write(f"{cfg.test_seed + i},{float(v)!r}\n")

    files = [_write(out, "benchmark_paths.csv", _csv(rows), _header(cfg, {"first_seed": cfg.test_seed}))]
    summary = {"n_paths": rep.n, "first_seed": cfg.test_seed, "mean_profit": rep.mean_profit, "stderr": rep.stderr}
    files.append(_report(out, "benchmark_report.json", cfg, summary))
    return {"files": files, "summary": summary}


def cmd_grid_search(cfg: ExperimentConfig, out: str, seed: int) -> dict:
    if cfg.policy == "identity":
        raise ConfigError("grid search needs a parameterized policy")
    if not cfg.axes:
        raise ConfigError("grid search needs [grid] axis1")
    theta = cfg.parameterization()
    seeds = range(cfg.test_seed, cfg.test_seed + cfg.n_paths)
    res = scan_objective(theta, [(a.coord, a.values) for a in cfg.axes], cfg.sim, seeds,
                         sim=Simulator(cfg.sim, cache_paths=0), lockstep=cfg.lockstep)
    hdr = _header(cfg, {"first_seed": cfg.test_seed, "n_paths": cfg.n_paths})
    files = [_write(out, "grid.csv", _csv(res.write_csv), hdr)]
    best = int(np.argmax(res.mean))
    summary = {"points": int(res.mean.size), "best_point": list(map(float, res.points[best])),
               "best_mean_profit": float(res.mean[best]), "best_delta_f": float(res.delta[best])}
    return {"files": files, "summary": summary}


def cmd_optimize(cfg: ExperimentConfig, out: str, seed: int) -> dict:
    sim = Simulator(cfg.sim, cache_paths=0)
    template = cfg.parameterization()
    box = cfg.box if cfg.project else None
    starts = cfg.starting_points() if cfg.method != "none" else np.array([cfg.benchmark_vector()])
    files, runs = [], []
    per_start = cfg.iterations * (cfg.batch if cfg.method == "sgf" else 1)
    failed = None
    bench = sim.evaluate(Identity(), cfg.n_test, cfg.test_seed)
    for i, th0 in enumerate(starts):
        train = cfg.train_seed + i * per_start
        if cfg.method == "none":
            output, run = th0, None
        elif cfg.method == "sng":
            run = opt.run_sng_cfa(opt.PolicyObjective(sim, template), th0, cfg.iterations, _stepsize(cfg),
                                  cfg.h, train_seed=train, box=box)
        elif cfg.method == "sgf":
            sched = opt.SmoothingSchedule(cfg.L0, template.dim, cfg.smoothing_beta)
            rule = None if cfg.stepsize == "schedule" else _stepsize(cfg)
            run = opt.run_sgf_cfa(opt.PolicyObjective(sim, template), th0, cfg.iterations, sched, cfg.batch,
                                  rule=rule, train_seed=train, index_seed=cfg.seed * 1000 + i, box=box)
        else:
            lo = np.full(template.dim, cfg.box[0])
            hi = np.full(template.dim, cfg.box[1])
            run = opt.run_static_cfa(opt.StaticObjective(cfg.sim), th0, cfg.iterations, _stepsize(cfg),
                                     box=(lo, hi), train_seed=train, theta_template=template)
        entry = {"start": i, "theta_0": list(map(float, th0))}
        if run is not None:
            output = run.output
            hdr = _header(cfg, {"start": i, "train_seed": train, "index_seed": cfg.seed * 1000 + i})
            files.append(_write(out, f"trace_{i}.csv", _csv(run.write_trace), hdr))
            entry.update(run.report())
            if run.error:
                failed = run.error
                runs.append(entry)
                break
        _, _, ev = _evaluation(sim, cfg, cfg.parameterization(output), cfg.n_test, cfg.test_seed, bench)
        entry["theta_out"] = list(map(float, output))
        entry["evaluation"] = ev
        runs.append(entry)
    files.append(_report(out, "optimize_report.json", cfg, {"method": cfg.method, "runs": runs, "error": failed}))
    if failed:
        raise RuntimeError(f"optimizer aborted: {failed} (trace kept in {out})")
    return {"files": files, "summary": {"runs": [r.get("evaluation") for r in runs]}}


COMMANDS = {
    "forecast-gen": cmd_forecast_gen,
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "grid-search": cmd_grid_search,
    "benchmark": cmd_benchmark,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pcfa", description="Parametric lookahead policies for energy storage.")
    p.add_argument("--defaults", action="store_true", help="print every configuration key with its default")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", metavar="PATH")
        s.add_argument("--seed", type=int, metavar="U64", help="master seed (overrides [seeds] seed)")
        s.add_argument("--out", metavar="DIR", default=".")
        s.add_argument("--threads", type=int, metavar="N", default=1,
                       help="worker threads; runs are sequential and results never depend on it")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.defaults:
            sys.stdout.write(reference_text())
            return 0
        if args.command is None:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        overrides = {} if args.seed is None else {("seeds", "seed"): args.seed}
        cfg = load_config(args.config, overrides)
    except (UsageError, ConfigError) as exc:
        print(f"pcfa: error: {exc}", file=sys.stderr)
        return 1
    try:
        os.makedirs(args.out, exist_ok=True)
        result = COMMANDS[args.command](cfg, args.out, cfg.seed)
    except ConfigError as exc:
        print(f"pcfa: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime abort
        print(f"pcfa: aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    for f in result["files"]:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
