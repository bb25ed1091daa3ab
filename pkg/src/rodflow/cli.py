"""Batch command line: run scenarios, sweep parameter families, inspect dumps.

    rodflow run <scenario> [--steps K] [--tau T] [--eps E] [--rho R] [--q Q]
                [--seed S] [--out DIR] [--log-every K] [--dump-every K]
                [--resume CKPT]
    rodflow sweep <michell|f8> [run options]
    rodflow diag <frame.tsv>

Scenario names take an optional parenthesized parameter, e.g. michell(4.2)
or f8(0.7).  A run directory receives records.csv (one row per logged
step), frames/<k>.tsv geometry dumps, and checkpoint.bin for bit-exact
resumption; --steps counts total steps, so resuming an interrupted run with
the same --steps reproduces the uninterrupted diagnostics exactly.

Exit status: 0 on success, 1 on solver failure, 2 on bad arguments.
"""

from __future__ import annotations

import argparse
import os
import re
import sys

from . import recordio as rio
from . import scenarios as scn
from .flow import FlowEngine, NonFiniteEnergyError, SingularSystemError, run_flow
from .model import FlowConfig

__all__ = ["main", "cli_main"]


def _parse_scenario(text: str):
    m = re.fullmatch(r"([a-zA-Z0-9_]+)(?:\(([-+0-9.eE]+)\))?", text.strip())
    if not m:
        raise ValueError(f"cannot parse scenario {text!r}")
    name = m.group(1)
    param = float(m.group(2)) if m.group(2) is not None else None
    return name, param


def _apply_overrides(cfg: FlowConfig, args, total_steps) -> FlowConfig:
    kw = {}
    if args.tau is not None:
        kw["tau"] = args.tau
    if args.eps is not None:
        kw["epsilon"] = args.eps
    if args.rho is not None:
        kw["rho"] = args.rho
    if args.q is not None:
        kw["q"] = args.q
    if total_steps is not None:
        kw["max_steps"] = total_steps
    if not kw:
        return cfg
    from dataclasses import replace

    return replace(cfg, **kw)


def _run_one(name, param, args, out_dir) -> int:
    os.makedirs(out_dir, exist_ok=True)
    frames_dir = os.path.join(out_dir, "frames")
    os.makedirs(frames_dir, exist_ok=True)
    start_step = 0
    if args.resume:
        state, cfg, bc, start_step, ckpt_name = rio.load_checkpoint(args.resume)
        scenario_name = ckpt_name or name
        cfg = _apply_overrides(cfg, args, None)
        total = args.steps if args.steps is not None else cfg.max_steps
        budget = max(0, total - start_step)
    else:
        sc = scn.build_scenario(name, param)
        state, bc = sc.state, sc.bc
        scenario_name = sc.name if param is None else f"{sc.name}({param})"
        cfg = _apply_overrides(sc.config, args, None)
        total = args.steps if args.steps is not None else cfg.max_steps
        budget = total
    from dataclasses import replace

    cfg = replace(cfg, max_steps=budget)
    log_every = max(1, args.log_every)
    dump_every = max(1, args.dump_every)
    logged = []
    final_step = start_step

    def observer(k, rec, st):
        nonlocal final_step
        step = start_step + k
        rec.step = step
        final_step = step
        if k == 0 and start_step > 0:
            return  # the resumed state was already logged by the previous run
        if step % log_every == 0 or k == 0:
            logged.append(rec)
        if step % dump_every == 0:
            rio.write_frame(os.path.join(frames_dir, f"{step}.tsv"), step, st)

    try:
        final, records = run_flow(state, cfg, bc, observer=observer)
    except (NonFiniteEnergyError, SingularSystemError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, NonFiniteEnergyError) and exc.last_state is not None:
            rio.save_checkpoint(os.path.join(out_dir, "checkpoint.bin"), exc.last_state,
                                cfg, bc, start_step + (exc.step or 0) - 1, scenario_name)
        return 1
    if records and (not logged or logged[-1].step != final_step):
        logged.append(records[-1])
    rio.write_records(logged, os.path.join(out_dir, "records.csv"), append=start_step > 0)
    rio.write_frame(os.path.join(frames_dir, f"{final_step}.tsv"), final_step, final)
    rio.save_checkpoint(os.path.join(out_dir, "checkpoint.bin"), final, cfg, bc,
                        final_step, scenario_name)
    print(f"{scenario_name}: stopped at step {final_step}, "
          f"total energy {records[-1].energy.total:.6g}, twist {records[-1].total_twist:.6g}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="rodflow", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_opts(p):
        p.add_argument("--steps", type=int, default=None, help="total step budget")
        p.add_argument("--tau", type=float, default=None)
        p.add_argument("--eps", type=float, default=None)
        p.add_argument("--rho", type=float, default=None)
        p.add_argument("--q", type=float, default=None)
        p.add_argument("--seed", type=int, default=None, help="recorded only; runs are deterministic")
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--log-every", type=int, default=10, dest="log_every")
        p.add_argument("--dump-every", type=int, default=500, dest="dump_every")

    p_run = sub.add_parser("run", help="run one scenario")
    p_run.add_argument("scenario")
    add_run_opts(p_run)
    p_run.add_argument("--resume", type=str, default=None, help="checkpoint to continue from")

    p_sweep = sub.add_parser("sweep", help="run a preset parameter family")
    p_sweep.add_argument("family", choices=["michell", "f8"])
    add_run_opts(p_sweep)

    p_diag = sub.add_parser("diag", help="topology report of a frame dump")
    p_diag.add_argument("frame")
    p_diag.add_argument("--offset", type=float, default=None)

    args = parser.parse_args(argv)

    if args.command == "run":
        try:
            name, param = _parse_scenario(args.scenario)
            if name not in scn.SCENARIO_NAMES:
                raise ValueError(f"unknown scenario {name!r}; known: {', '.join(scn.SCENARIO_NAMES)}")
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        out_dir = args.out or os.path.join("out", args.scenario.replace("(", "_").rstrip(")"))
        return _run_one(name, param, args, out_dir)

    if args.command == "sweep":
        values = scn.michell_sweep_values() if args.family == "michell" else scn.f8_sweep_values()
        base = args.out or os.path.join("out", f"sweep_{args.family}")
        status = 0
        for v in values:
            sub_out = os.path.join(base, f"{args.family}_{v:.4g}")
            args.resume = None
            code = _run_one(args.family, v, args, sub_out)
            status = max(status, code)
        return status

    # diag
    try:
        step, state = rio.read_frame(args.frame)
    except (OSError, IOError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    from .topology import topology_report

    rep = topology_report(state, offset=args.offset)
    print(f"frame step {step}")
    print(f"total_twist {rep.total_twist:.12g}")
    if rep.writhe is not None:
        print(f"writhe {rep.writhe:.12g}")
        print(f"linking_number {rep.linking_number:.12g} (rounded {round(rep.linking_number)})")
        print(f"calugareanu_residual {rep.calugareanu_residual:.12g}")
    uq = rep.uniformity_quotient
    print(f"uniformity_quotient {'nan' if uq is None else format(uq, '.12g')}")
    return 0


def cli_main(argv=None) -> int:
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
