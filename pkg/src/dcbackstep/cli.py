"""Command line entry point: ``dcbackstep {run,sweep,validate,preset-list}``.

Output directories default to ``$DCBACKSTEP_OUT/<name>`` (``./runs`` when
the variable is unset).  Existing non-empty directories are only reused with
``--force``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import analysis, config, engine, traces

OUT_ENV = "DCBACKSTEP_OUT"
REFINE_TOL = 1e-4

AGGREGATE_COLUMNS = [
    "index", "label", "status", "reason", "violations", "worst_excursion_V",
    "V_min_V", "V_max_V", "final_V_V", "clamp_events", "lyapunov_max_increase",
    "max_window_dev_V", "max_sharing_error",
]


def _err(msg: str) -> None:
    print(f"dcbackstep: {msg}", file=sys.stderr)


def _out_dir(arg, name: str, force: bool) -> Path:
    root = Path(os.environ.get(OUT_ENV, "runs"))
    out = Path(arg) if arg else root / name
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"{out} exists and is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _refine(sc: engine.Scenario, result: engine.RunResult) -> dict:
    fine = dataclasses.replace(sc, dt_plant=sc.dt_plant / 2)
    res2 = engine.simulate(fine)
    doc = {"dt_plant": fine.dt_plant, "status": res2.status}
    if result.ok and res2.ok:
        delta = abs(res2.trace[-1].V_o - result.trace[-1].V_o)
        doc.update(final_V=res2.trace[-1].V_o, delta_final_V=delta,
                   tolerance=REFINE_TOL, passed=bool(delta < REFINE_TOL))
    else:
        doc["passed"] = False
    return doc


def _describe_failure(summary) -> str:
    if summary.reason == "initial_voltage_outside_band":
        return f"run rejected: {summary.detail}"
    if summary.status != "ok":
        at = f" at t = {summary.fail_time:.6g} s" if summary.fail_time is not None else ""
        return f"run failed ({summary.reason}){at}: {summary.detail}"
    return (f"{summary.violations} band violation(s), worst excursion "
            f"{summary.worst_excursion} V")


def execute(sc: engine.Scenario, out: Path, plot=False, refine=False):
    """Run one scenario and write its outputs; returns the summary."""
    result = engine.run(sc)
    traces.write_trace_csv(result.trace, out / "trace.csv", sc.n)
    extra = {"scenario": sc.name, "controller_mode": sc.controller_mode}
    if refine and result.ok:
        extra["refinement"] = _refine(sc, result)
    traces.write_summary(result.summary, out / "summary.yaml", extra)
    if plot and result.trace:
        analysis.plot_run(result, out)
    return result.summary


def cmd_run(args) -> int:
    try:
        sc = config.load_scenario(args.config)
        out = _out_dir(args.out, sc.name, args.force)
    except config.ConfigError as exc:
        _err(f"invalid config: {exc}")
        return 2
    except FileExistsError as exc:
        _err(str(exc))
        return 2
    summary = execute(sc, out, args.plot, args.refine)
    print(f"wrote {out / 'trace.csv'} and {out / 'summary.yaml'}")
    if summary.clean:
        print(f"ok: {summary.n_samples} samples, V_o in [{summary.V_min:.6f}, "
              f"{summary.V_max:.6f}] V, final {summary.final_V:.6f} V")
        return 0
    _err(_describe_failure(summary))
    return 1


def cmd_validate(args) -> int:
    try:
        sc = config.load_scenario(args.config)
    except config.ConfigError as exc:
        _err(f"invalid config: {exc}")
        return 2
    print(f"ok: {sc.name} ({sc.n} DGUs, {len(sc.events)} events, "
          f"{sc.n_samples} controller samples, {sc.controller_mode} controller)")
    return 0


def cmd_preset_list(args) -> int:
    for name in config.preset_names():
        print(name)
    return 0


def _sweep_job(job):
    index, label, cfg, error, out, plot = job
    if error is not None:
        return analysis.RunSummary.config_error(error)
    sc = config.scenario_from_dict(cfg)
    sub = Path(out) / f"{index:03d}-{label}"
    sub.mkdir(parents=True, exist_ok=True)
    return execute(sc, sub, plot)


def _row(index, label, s) -> list:
    segs = [g for g in s.segments if g.window_max_dev is not None]
    dev = max((g.window_max_dev for g in segs), default=None)
    share = max((max(g.sharing_error) for g in segs if g.sharing_error), default=None)
    lyap = s.lyapunov.max_increase if s.lyapunov else None
    return [index, label, s.status, s.reason, s.violations, s.worst_excursion,
            s.V_min, s.V_max, s.final_V, s.clamp_events, lyap, dev, share]


def cmd_sweep(args) -> int:
    try:
        base, runs, _ = config.load_sweep(args.config)
        out = _out_dir(args.out, Path(args.config).stem, args.force)
    except config.ConfigError as exc:
        _err(f"invalid sweep: {exc}")
        return 2
    except FileExistsError as exc:
        _err(str(exc))
        return 2
    jobs = []
    for i, r in enumerate(runs):
        label = str(r.get("label", f"run{i}"))
        cfg, error = base, None
        try:
            for path, value in (r.get("set") or {}).items():
                cfg = config.set_path(cfg, path, value)
            config.scenario_from_dict(cfg)
        except config.ConfigError as exc:
            error = str(exc)
            _err(f"run {i} ({label}): invalid config: {exc}")
        jobs.append((i, label, cfg, error, str(out), args.plot))
    if args.parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            summaries = list(pool.map(_sweep_job, jobs))
    else:
        summaries = [_sweep_job(j) for j in jobs]
    with open(out / "aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for (i, label, *_), s in zip(jobs, summaries):
            w.writerow(_row(i, label, s))
    bad = [(j[1], s) for j, s in zip(jobs, summaries) if not s.clean]
    for label, s in bad:
        _err(f"{label}: {_describe_failure(s)}")
    print(f"wrote {out / 'aggregate.csv'} ({len(jobs)} runs, {len(bad)} failed)")
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dcbackstep", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("--config", required=True, help="YAML file or preset name")
    r.add_argument("--out", help="output directory")
    r.add_argument("--plot", action="store_true", help="write SVG plots")
    r.add_argument("--refine", action="store_true",
                   help="rerun with half the plant step and report the final-voltage change")
    r.add_argument("--force", action="store_true", help="reuse a non-empty output directory")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a list of patched scenarios")
    s.add_argument("--config", required=True, help="sweep YAML file")
    s.add_argument("--out", help="output directory")
    s.add_argument("--parallel", type=int, default=1, metavar="N")
    s.add_argument("--plot", action="store_true")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("--config", required=True)
    v.set_defaults(func=cmd_validate)

    pl = sub.add_parser("preset-list", help="list bundled presets")
    pl.set_defaults(func=cmd_preset_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
