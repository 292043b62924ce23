"""``ditpipe`` command line: verify, simulate, partition, calibrate.

Exit codes: 0 success, 1 a check failed, 2 bad usage or config.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import yaml

from .config import ConfigError, load_config
from .partition import brute_force_partition, closed_form_partition, stage_time_scenario
from .sim.calibration import CalibrationError, calibrate_linear, fit_cost_model
from .sim.engine import SimulationError, simulate
from .sim.model import ScheduleMode, Variant
from .sim.trace import TraceError, write_chrome_trace
from .verify import SUITES, run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def write_report(path, data: dict) -> None:
    """JSON by default, YAML when the suffix asks for it."""
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix in (".yaml", ".yml"):
        path.write_text(yaml.safe_dump(data, sort_keys=False))
    else:
        path.write_text(json.dumps(data, indent=2) + "\n")


def _load(path):
    if path is None:
        raise UsageError("--config is required")
    return load_config(path)


# verify

def cmd_verify(args) -> int:
    name = args.suite or args.suite_pos
    if name is None:
        raise UsageError(f"name a suite: {', '.join(SUITES)}")
    if name not in SUITES:
        raise UsageError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    seed = args.seed
    if seed is None and args.config:
        seed = _load(args.config).seed
    res = run_suite(name, seed or 0)
    print(res.summary())
    for line in res.failures:
        print(f"  miss: {line}")
    if args.report:
        write_report(args.report, {"suite": res.name, "seed": seed or 0, "run": res.run,
                                   "passed": res.passed, "ok": res.ok,
                                   "failures": res.failures})
    return EXIT_OK if res.ok else EXIT_FAIL


# simulate

def _run_config(cfg, timesteps: Optional[int] = None):
    w = cfg.workload if timesteps is None else replace(cfg.workload, timesteps=timesteps)
    return simulate(w, cfg.cost, cfg.memory, cfg.mode, cfg.resolved_partition())


def _latency_summary(report) -> str:
    lat = report.latencies
    if not lat:
        return "no prompts"
    mean = sum(lat) / len(lat)
    return f"latency mean {mean:.2f} s, min {min(lat):.2f} s, max {max(lat):.2f} s"


def cmd_simulate(args) -> int:
    cfg = _load(args.config)
    base_cfg = load_config(args.baseline) if args.baseline else None
    sweep = args.timesteps or [cfg.workload.timesteps]
    runs = []
    trace = None
    if base_cfg is not None:
        print(f"{'timesteps':>9}  {'base':>10}  {'opt':>10}  {'spd':>7}")
    for t in sweep:
        report, tr = _run_config(cfg, t)
        trace = trace or tr
        entry = {"timesteps": t, "opt" if base_cfg else "run": report.to_dict()}
        if base_cfg is not None:
            base, _ = _run_config(base_cfg, t)
            spd = base.makespan / report.makespan if report.makespan > 0 else float("nan")
            entry["base"] = base.to_dict()
            entry["spd"] = spd
            print(f"{t:>9}  {base.makespan:>10.1f}  {report.makespan:>10.1f}  {spd:>6.2f}x")
        else:
            oom = "  OOM" if report.oom else ""
            print(f"{cfg.name or args.config} [{report.mode}, {report.partition[0]}+"
                  f"{report.partition[1]} GPUs, {t} steps]: makespan {report.makespan:.2f} s; "
                  f"{_latency_summary(report)}; aco steps {report.aco_steps}{oom}")
        runs.append(entry)

    report_path = args.report or cfg.outputs.report
    trace_path = args.trace or cfg.outputs.trace
    if report_path:
        write_report(report_path, {"config": cfg.name, "runs": runs})
    if trace_path:
        write_chrome_trace(trace, trace_path)
    return EXIT_OK


# partition

def cmd_partition(args) -> int:
    if args.config:
        cfg = _load(args.config)
        if not cfg.mode.decoupled:
            raise UsageError("partition search needs a DeDiVAE config")
        c, w = cfg.cost, cfg.workload
        n = args.gpus or cfg.n_gpus
        t_den = w.timesteps * (c.t_linear + c.t_attention) * c.n_ref
        t_dec = c.t_decode
        if w.prompts < 2 * n:
            w = replace(w, prompts=2 * n)
            print(f"note: raising prompts to {w.prompts} for a steady-state sweep")
        mode, mem = cfg.mode, cfg.memory
    else:
        if args.t_denoise is None or args.t_decode is None:
            raise UsageError("give --config or both --t-denoise and --t-decode")
        n = args.gpus or 8
        t_den, t_dec = args.t_denoise, args.t_decode
        w, c = stage_time_scenario(t_den, t_dec, n, max(args.prompts, 2 * n))
        mode, mem = ScheduleMode(Variant.DEDIVAE), None

    closed = closed_form_partition(t_den, t_dec, n)
    best, table = brute_force_partition(w, c, mem, mode, n)
    print(f"T_denoise {t_den:.4g} s, T_decode {t_dec:.4g} s, N = {n}")
    print(f"closed form: {closed.n_denoise} denoise + {closed.n_decode} decode")
    for k in sorted(table):
        mark = "  <- best" if k == best.n_decode else ""
        print(f"  n_decode {k}: makespan {table[k]:.3f} s{mark}")
    gap = abs(closed.n_decode - best.n_decode)
    print(f"brute force: {best.n_denoise} denoise + {best.n_decode} decode (gap {gap})")
    if args.report:
        write_report(args.report, {
            "t_denoise_s": t_den, "t_decode_s": t_dec, "n_gpus": n,
            "closed_form": {"n_denoise": closed.n_denoise, "n_decode": closed.n_decode},
            "brute_force": {"n_denoise": best.n_denoise, "n_decode": best.n_decode},
            "makespan_by_n_decode": {str(k): v for k, v in sorted(table.items())},
            "gap": gap,
        })
    return EXIT_OK if gap <= 1 else EXIT_FAIL


# calibrate

def cmd_calibrate(args) -> int:
    if not args.point or len(args.point) != 2:
        raise UsageError("give exactly two --point TIMESTEPS LATENCY observations")
    if any(t != int(t) for t, _ in args.point):
        raise UsageError("timestep counts must be whole numbers")
    (ta, la), (tb, lb) = [(int(t), float(lat)) for t, lat in args.point]
    fit = calibrate_linear((ta, la), (tb, lb))
    print(f"per_step {fit.per_step:.6g} s, fixed {fit.fixed:.6g} s")
    out = {"per_step": fit.per_step, "fixed": fit.fixed}
    if args.config:
        cfg = _load(args.config)
        cf = fit_cost_model(cfg.cost, cfg.workload, cfg.mode, cfg.resolved_partition(),
                            (ta, la), (tb, lb))
        print(f"cost model scaled by {cf.step_scale:.6g} (per step) and "
              f"{cf.fixed_scale:.6g} (per prompt); max anchor miss {cf.residual:.2e}")
        out["cost"] = {k: getattr(cf.cost, k) for k in cf.cost.__dataclass_fields__}
        out["residual"] = cf.residual
    if args.report:
        write_report(args.report, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="scenario YAML file")
    common.add_argument("--seed", type=int, default=None, help="seed for randomized suites")
    common.add_argument("--report", metavar="PATH", help="write a JSON (or .yaml) report")

    p = argparse.ArgumentParser(prog="ditpipe", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", parents=[common], help="run a property suite")
    v.add_argument("suite_pos", nargs="?", metavar="SUITE", help="suite name (same as --suite)")
    v.add_argument("--suite", metavar="NAME", help=f"one of {', '.join(SUITES)}")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("simulate", parents=[common], help="simulate a scenario")
    s.add_argument("--trace", metavar="PATH", help="write a Chrome trace-event file")
    s.add_argument("--baseline", metavar="PATH", help="second scenario to compare against")
    s.add_argument("--timesteps", type=int, nargs="+", metavar="T",
                   help="sweep these timestep counts")
    s.set_defaults(func=cmd_simulate)

    q = sub.add_parser("partition", parents=[common], help="choose the GPU split")
    q.add_argument("--t-denoise", type=float, help="single-GPU denoise time per prompt (s)")
    q.add_argument("--t-decode", type=float, help="single-GPU decode time per latent (s)")
    q.add_argument("--gpus", type=int, help="total GPU count")
    q.add_argument("--prompts", type=int, default=16)
    q.set_defaults(func=cmd_partition)

    c = sub.add_parser("calibrate", parents=[common], help="fit costs to two latencies")
    c.add_argument("--point", nargs=2, action="append", metavar=("TIMESTEPS", "LATENCY"),
                   type=float)
    c.set_defaults(func=cmd_calibrate)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, CalibrationError, SimulationError) as exc:
        print(f"ditpipe {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"ditpipe {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TraceError as exc:
        print(f"ditpipe {args.command}: trace check failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
