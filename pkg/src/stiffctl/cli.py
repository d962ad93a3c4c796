"""``stiffctl`` command line: demo, segment, optimize, report, benchmark.

Exit codes: 0 success, 2 configuration or file-format error, 3 simulation
failure, 4 infeasible model (segment count or degenerate fit).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import formats, pipeline, sim
from .core import InfeasibleSegmentCount, RandomStream, StiffctlError
from .segment import KAPPA_SIM, DegenerateComponent

EXIT_OK, EXIT_CONFIG, EXIT_SIM, EXIT_MODEL = 0, 2, 3, 4


class ConfigError(StiffctlError):
    pass


# Keys accepted in a --config JSON file: experiment fields plus paths.
_EXPERIMENT_KEYS = {f.name for f in fields(pipeline.ExperimentConfig)}
CONFIG_KEYS = _EXPERIMENT_KEYS | {"seed", "out", "demo", "segmentation", "noise", "verbose"}


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected a flat JSON object")
    for key in obj:
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}: unknown config key {key!r}")
    return obj


def _pick(args, conf, name, default=None, attr=None):
    """Flag value, else config value, else default."""
    v = getattr(args, attr or name, None)
    if v is not None:
        return v
    return conf.get(name, default)


def _seed(args, conf) -> int:
    s = _pick(args, conf, "seed")
    if s is None:
        env = os.environ.get("STIFFCTL_SEED")
        if env is not None:
            try:
                s = int(env)
            except ValueError as exc:
                raise ConfigError(f"STIFFCTL_SEED must be an integer, got {env!r}") from exc
    return int(s or 0)


def _task_kind(kind) -> str:
    if kind not in sim.KINDS:
        raise ConfigError(f"unknown task {kind!r}; valid kinds: {', '.join(sorted(sim.KINDS))}")
    return kind


def _say(args, *parts):
    print(*parts, flush=True)


# -- subcommands --------------------------------------------------------------------


def cmd_demo(args) -> int:
    conf = load_config(args.config)
    kind = _task_kind(_pick(args, conf, "task", "door1d"))
    seed = _seed(args, conf)
    out = _pick(args, conf, "out")
    if out is None:
        raise ConfigError("demo needs --out")
    noise = float(_pick(args, conf, "noise", 1e-4))
    task = pipeline.make_task(kind, Lambda=float(conf.get("Lambda", 3.0)))
    demo = pipeline.make_demo(task, seed, noise)
    formats.write_trajectory(out, demo)
    _say(args, f"T={demo.T} dt={demo.dt} peak_force={np.abs(demo.F).max():.6g} N -> {out}")
    return EXIT_OK


def cmd_segment(args) -> int:
    conf = load_config(args.config)
    demo_path = _pick(args, conf, "demo")
    if demo_path is None:
        raise ConfigError("segment needs a demo file")
    demo = formats.read_trajectory(demo_path)
    method = _pick(args, conf, "method", "icsld")
    if method not in pipeline.METHODS:
        raise ConfigError(f"unknown method {method!r}; valid: {', '.join(pipeline.METHODS)}")
    M = int(_pick(args, conf, "M", 3, attr="m"))
    kappa = float(_pick(args, conf, "kappa", KAPPA_SIM))
    bounds = (float(conf.get("k_min", 10.0)), float(conf.get("k_max", 1000.0)))
    Lambda = float(_pick(args, conf, "Lambda", 3.0, attr="inertia"))
    seed = _seed(args, conf)
    out = _pick(args, conf, "out") or str(Path(demo_path).with_suffix("")) + f".{method}.seg.json"
    segd = pipeline.segment_demo(demo, method, M, kappa, bounds, Lambda,
                                 RandomStream(seed, "run").fork(f"segment/{method}"))
    formats.write_segmentation(out, segd.segmentation, segd.K_prior, segd.objective, method)
    _say(args, f"method={method} M={M} boundaries={segd.segmentation.boundaries} -> {out}")
    for j, k in enumerate(segd.K_prior):
        _say(args, f"  phase {j + 1}: K_prior = {np.array2string(k, precision=2)} N/m")
    return EXIT_OK


def _experiment(args, conf, **extra) -> pipeline.ExperimentConfig:
    values = {k: v for k, v in conf.items() if k in _EXPERIMENT_KEYS}
    flag_map = {"task": "task", "M": "m", "kappa": "kappa", "beta": "beta", "N": "n", "n_init": "n_init",
                "method": "method", "Lambda": "inertia"}
    for key, attr in flag_map.items():
        v = getattr(args, attr, None)
        if v is not None:
            values[key] = v
    if getattr(args, "no_prior", False):
        values["use_prior"] = False
    for key in ("reference", "ideal", "seeds"):
        if key in values and values[key] is not None:
            values[key] = tuple(values[key])
    values.update(extra)
    try:
        return pipeline.ExperimentConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_optimize(args) -> int:
    conf = load_config(args.config)
    seed = _seed(args, conf)
    demo_path, seg_path = _pick(args, conf, "demo"), _pick(args, conf, "segmentation")
    if demo_path is None or seg_path is None:
        raise ConfigError("optimize needs --demo and --segmentation files")
    demo = formats.read_trajectory(demo_path)
    segfile = formats.read_segmentation(seg_path)
    if segfile.segmentation.T != demo.T:
        raise ConfigError(f"{seg_path}: {segfile.segmentation.T} labels for a {demo.T}-step demo")
    cfg = _experiment(args, conf, M=segfile.M, method=segfile.method, seeds=(seed,))
    task = cfg.make_task()
    if task.n_axes != demo.n_axes:
        raise ConfigError(f"task {cfg.task} has {task.n_axes} axes, demo has {demo.n_axes}")
    if segfile.K_prior.shape[1] != demo.n_axes:
        raise ConfigError(f"{seg_path}: field 'K_prior' has {segfile.K_prior.shape[1]} columns for "
                          f"{demo.n_axes} axes")
    segd = pipeline.Segmented(segfile.method, segfile.segmentation,
                              np.clip(segfile.K_prior, cfg.k_min, cfg.k_max), np.zeros_like(segfile.K_prior, bool),
                              segfile.objective)
    out = Path(_pick(args, conf, "out", "."))
    out.mkdir(parents=True, exist_ok=True)
    run_path = out / "run.csv"
    d = cfg.M * demo.n_axes
    # rows are flushed as they arrive so an interrupted run leaves a valid prefix
    with open(run_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(formats.run_header(d))

        def on_row(n, theta, y_T, y_C, hv, ms):
            w.writerow(formats.run_row(n, theta, y_T, y_C, hv, ms))
            fh.flush()
            if args.verbose:
                print(f"n={n} y_T={y_T:.6g} y_C={y_C:.6g} hv={hv:.6f}", flush=True)

        rec = pipeline.run_optimization(cfg, demo, seed, segmented=segd, task=task, on_row=on_row)
    idx = rec.pareto
    formats.write_pareto_csv(out / "pareto.csv", rec.Y[idx], rec.theta[idx])
    formats.write_summary_csv(out / "summary.csv", [(cfg.method, cfg.prior_active, seed, rec.final_hv)])
    n_div = int(np.sum(rec.diverged))
    _say(args, f"final hypervolume {rec.final_hv:.6f} after {len(rec.Y)} evaluations"
               + (f" ({n_div} diverged)" if n_div else "") + f" -> {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tables = [formats.read_run_csv(p) for p in args.runs]
    if tables:
        lengths = {len(t.n) for t in tables}
        if len(lengths) > 1:
            raise formats.SchemaError(f"run files differ in length: {sorted(lengths)}")
        widths = {t.theta.shape[1] for t in tables}
        if len(widths) > 1:
            raise formats.SchemaError(f"run files differ in theta columns: {sorted(widths)}")
        formats.write_curve_csv(out / "curve.csv", [t.hv for t in tables])
        Y = np.vstack([t.Y for t in tables])
        TH = np.vstack([t.theta for t in tables])
        idx = pipeline.pareto_indices(Y)
        formats.write_pareto_csv(out / "pareto_union.csv", Y[idx], TH[idx])
        _say(args, f"curve over {len(tables)} run(s), union front of {len(idx)} point(s)")
    summary = [row for p in args.summary for row in formats.read_summary_csv(p)]
    if summary:
        rows = formats.grid_rows(summary)
        formats.write_grid_csv(out / "grid.csv", rows)
        for m, p, mean, std, med, k in rows:
            _say(args, f"{m:6s} prior={'on ' if p else 'off'} hv(x1e3) = {1e3 * mean:.2f} +/- {1e3 * std:.2f} "
                       f"(median {1e3 * med:.2f}, {k} runs)")
    if not tables and not summary:
        raise ConfigError("report needs at least one run or summary file")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    conf = load_config(args.config)
    cfg = _experiment(args, conf)
    seeds = tuple(range(args.seeds)) if args.seeds is not None else cfg.seeds
    out = Path(_pick(args, conf, "out", "."))
    out.mkdir(parents=True, exist_ok=True)

    def progress(m, p, seed, rec):
        if args.verbose:
            print(f"{m} prior={p} seed={seed} hv={rec.final_hv:.6f}", flush=True)

    res = pipeline.run_benchmark(cfg.task, seeds, base=cfg, progress=progress)
    formats.write_summary_csv(out / "summary.csv", res.summary_rows())
    formats.write_grid_csv(out / "grid.csv", formats.grid_rows(res.summary_rows()))
    for c in res.cells:
        tag = f"{c.method}_{'prior' if c.prior else 'noprior'}"
        if c.records:
            formats.write_curve_csv(out / f"curve_{tag}.csv", [r.hv for r in c.records])
            Y, TH = c.union_front()
            formats.write_pareto_csv(out / f"pareto_{tag}.csv", Y, TH)
        for seed, msg in c.failures:
            print(f"warning: {tag} seed {seed} failed: {msg}", file=sys.stderr)
    for m, p, mean, std, med, k, nf in res.table():
        _say(args, f"{m:6s} prior={'on ' if p else 'off'} hv = {mean:.4f} +/- {std:.4f} (median {med:.4f})")
    if args.sensitivity:
        rows, _ = pipeline.run_sensitivity(cfg.task, seeds, base=cfg)
        formats.write_sensitivity_csv(out / "sensitivity.csv", rows)
        for name, v, M, b, med, mean, std in rows:
            _say(args, f"{name}={v:g} (M={M}, beta={b:g}): median hv {med:.4f}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stiffctl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat JSON config; flags override its values")
        sp.add_argument("--seed", type=int, help="random seed (fallback: $STIFFCTL_SEED, then 0)")
        sp.add_argument("-v", "--verbose", action="store_true")

    d = sub.add_parser("demo", help="generate a scripted demonstration")
    common(d)
    d.add_argument("--task", help="door1d, wipe2d or track")
    d.add_argument("--noise", type=float, help="position noise std (m), default 1e-4")
    d.add_argument("--out", help="trajectory JSON to write")
    d.set_defaults(func=cmd_demo)

    s = sub.add_parser("segment", help="segment a demonstration and estimate prior stiffness")
    common(s)
    s.add_argument("demo", nargs="?", help="trajectory JSON")
    s.add_argument("--method", help="icsld (default), gmm or sld")
    s.add_argument("--m", type=int, help="number of phases")
    s.add_argument("--kappa", type=float)
    s.add_argument("--inertia", type=float, help="end-effector inertia (kg), default 3")
    s.add_argument("--out", help="segmentation JSON to write")
    s.set_defaults(func=cmd_segment)

    o = sub.add_parser("optimize", help="search per-phase stiffness for a segmented demo")
    common(o)
    o.add_argument("--demo")
    o.add_argument("--segmentation")
    o.add_argument("--task")
    o.add_argument("--n", type=int, help="total evaluations N")
    o.add_argument("--n-init", type=int, dest="n_init")
    o.add_argument("--beta", type=float)
    o.add_argument("--no-prior", action="store_true", dest="no_prior")
    o.add_argument("--inertia", type=float)
    o.add_argument("--out", help="output directory")
    o.set_defaults(func=cmd_optimize)

    r = sub.add_parser("report", help="aggregate run and summary CSVs")
    r.add_argument("runs", nargs="*", help="run CSV files")
    r.add_argument("--summary", action="append", default=[], help="summary CSV (repeatable)")
    r.add_argument("--out", default=".", help="output directory")
    r.set_defaults(func=cmd_report)

    b = sub.add_parser("benchmark", help="method x prior grid over seeds (and optional sensitivity sweep)")
    common(b)
    b.add_argument("--task")
    b.add_argument("--seeds", type=int, help="number of seeds 0..n-1")
    b.add_argument("--n", type=int)
    b.add_argument("--n-init", type=int, dest="n_init")
    b.add_argument("--beta", type=float)
    b.add_argument("--m", type=int)
    b.add_argument("--sensitivity", action="store_true", help="also sweep M and beta")
    b.add_argument("--out")
    b.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, formats.SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleSegmentCount, DegenerateComponent) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except sim.IntegrationDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIM
    except pipeline.RunFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.cause, (InfeasibleSegmentCount, DegenerateComponent)):
            return EXIT_MODEL
        return EXIT_SIM if isinstance(exc.cause, sim.IntegrationDiverged) else EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("interrupted; partial results were flushed", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
