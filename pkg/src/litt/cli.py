"""``litt`` command line: generate | train | discover | eval | gradcheck | diagnose.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .attention import (DiscoveryConfig, association_heatmap, best_route, discover, merge_tree, merged_sets,
                        tree_to_dot, tree_to_text)
from .cells import load_checkpoint, save_checkpoint
from .cohort import (CohortFormatError, Schema, Standardizer, event_defs, gen_event_cohort, gen_warp_cohort,
                     load_cohort_csv, load_survival_table, read_kv, write_cohort_csv)
from .diagnostics import decay_profile, write_profile_csv
from .evaluation import (ConvergenceError, KNOWN_METHODS, SURVIVAL_TRAIN, format_table, run_cohort_protocol,
                         run_survival_protocol, stratified_folds, write_report_csv, write_trace_csv)
from .grad import DivergenceError, Model, TrainConfig, batch_from_cohort, forward, gradcheck_sweep, train
from .metrics import UndefinedMetricError
from .numkit import DegenerateDistributionError, InsufficientSampleError
from .plots import bar_chart_svg, line_chart_svg
from .timeline import GammaProfile, OscillatorSpec, accumulate_timeline, dedamp, model_timelines, rk4_oscillator, \
    write_trajectory_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command, config, seed, inputs, outputs, started):
    """Atomically write ``manifest.json`` next to the outputs."""
    out_dir = Path(out_dir)
    man = {
        "command": command,
        "config": {k: (v if isinstance(v, (int, float, str, bool, type(None))) else str(v)) for k, v in config.items()},
        "seed": seed,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": sorted(str(p) for p in outputs),
        "wall_clock_s": round(time.time() - started, 3),
        "version": __version__,
    }
    fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".manifest", suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        json.dump(man, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, out_dir / "manifest.json")
    return out_dir / "manifest.json"


def _config(path) -> dict:
    if path is None:
        return {}
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    return read_kv(path)


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _need_file(path, what):
    if not Path(path).is_file():
        raise DataError(f"{what} not found: {path}")


# --- generate ----------------------------------------------------------------------------

def _kv_bool(v):
    return str(v).strip().lower() in ("1", "true", "yes", "on")


def cmd_generate(args) -> int:
    try:
        return _generate(args)
    except ValueError as e:
        # generators and specs reject bad parameter values with ValueError
        raise UsageError(str(e)) from None


def _generate(args) -> int:
    started = time.time()
    cfg = _config(args.config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    seed = int(cfg.pop("seed", args.seed))
    if args.kind == "warp":
        conv = {"n": int, "T": int, "warp_strength": float, "base_day": float, "feature_noise": float,
                "visit_jitter": float, "censor_fraction": float}
        kw = _convert(cfg, conv)
        cohort = gen_warp_cohort(seed=seed, **kw)
        write_cohort_csv(out, cohort)
    elif args.kind == "events":
        conv = {"n": int, "T": int, "follow_prob": float, "core_jitter": float, "noise": _kv_bool,
                "order_dependent_tail": _kv_bool, "candidates": _csv_list, "planted_path": _csv_list,
                "order_free_set": _csv_list}
        kw = _convert(cfg, conv)
        cohort = gen_event_cohort(seed=seed, **kw)
        write_cohort_csv(out, cohort)
    else:
        conv = {"beta": float, "gamma": float, "A": float, "B": float, "duration": float, "dt": float,
                "gamma_values": _float_list, "gamma_breaks": _float_list, "gamma_slope": float}
        kw = _convert(cfg, conv)
        for k in ("beta", "gamma", "A", "B", "duration", "dt"):
            v = getattr(args, k)
            if v is not None:
                kw[k] = v
        if "gamma_values" in kw:
            prof = GammaProfile.piecewise(kw.pop("gamma_values"), kw.pop("gamma_breaks", []))
            kw.pop("gamma", None)
        elif "gamma_slope" in kw:
            prof = GammaProfile.linear(kw.pop("gamma", 0.0), kw.pop("gamma_slope"))
        else:
            prof = GammaProfile.constant(kw.pop("gamma", 0.2))
        spec = OscillatorSpec(beta=kw.pop("beta", 1.0), gamma_fn=prof, **kw)
        traj = rk4_oscillator(spec)
        write_trajectory_csv(out, traj, dedamp(traj))
        cfg = {**cfg, **{k: getattr(args, k) for k in ("beta", "gamma", "A", "B") if getattr(args, k) is not None}}
    inputs = [args.config] if args.config else []
    write_manifest(out.parent, f"generate {args.kind}", {**cfg, "out": str(out)}, seed, inputs, [out], started)
    print(f"wrote {out}")
    return EXIT_OK


def _csv_list(v):
    return tuple(s.strip() for s in str(v).split(",") if s.strip())


def _float_list(v):
    return [float(s) for s in _csv_list(v)]


def _convert(cfg: dict, conv: dict) -> dict:
    unknown = set(cfg) - set(conv)
    if unknown:
        raise UsageError(f"unknown option(s): {', '.join(sorted(unknown))}")
    try:
        return {k: conv[k](v) for k, v in cfg.items()}
    except ValueError as e:
        raise UsageError(f"bad config value: {e}") from None


# --- train -------------------------------------------------------------------------------

def _load_cohort(path, schema_path=None):
    _need_file(path, "cohort")
    schema = Schema.from_file(schema_path) if schema_path else None
    return load_cohort_csv(path, schema, standardize=False)


def cmd_train(args) -> int:
    started = time.time()
    kv = _config(args.config)
    folds = int(kv.get("folds", args.folds))
    try:
        cfg = TrainConfig.from_mapping(kv)
    except (KeyError, ValueError) as e:
        raise UsageError(str(e)) from None
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    cohort = _load_cohort(args.cohort, args.schema)
    out = _out_dir(args.out)
    outputs = []
    if folds >= 2:
        fold = stratified_folds(cohort.censored.astype(int), folds, cfg.seed)
        for k in range(folds):
            tr = cohort.take(np.flatnonzero(fold != k))
            st = Standardizer.fit(tr.x, tr.mask)
            _, trace = train(batch_from_cohort(tr.standardized(st)), replace(cfg, seed=cfg.seed + k))
            p = out / f"trace_fold{k + 1}.csv"
            write_trace_csv(p, trace)
            outputs.append(p)
    st = Standardizer.fit(cohort.x, cohort.mask)
    std = cohort.standardized(st)
    model, trace = train(std, cfg)
    arrays, meta = model.to_checkpoint()
    arrays["feature_mean"], arrays["feature_std"] = st.mean, st.std
    meta.update({"features": ",".join(cohort.feature_names), "mode": cfg.mode})
    ck = out / "model.npz"
    save_checkpoint(ck, arrays, meta)
    tp = out / "trace.csv"
    write_trace_csv(tp, trace)
    outputs += [ck, tp]
    write_manifest(out, "train", {**asdict(cfg), "folds": folds}, cfg.seed, [args.cohort] + ([args.config] if args.config else []),
                   outputs, started)
    print(f"final training RMSE {trace[-1]:.3f} days; wrote {ck}")
    return EXIT_OK


# --- discover ------------------------------------------------------------------------------

def _timelines_for(cohort, checkpoint):
    if checkpoint is None:
        if cohort.gamma_true is None or cohort.gamma_true.ndim != 2:
            raise DataError("no checkpoint given and the cohort has no per-step gamma_true column")
        out = []
        for j in range(len(cohort)):
            g = cohort.gamma_true[j].copy()
            g[~cohort.mask[j]] = 0.0
            out.append(accumulate_timeline(g))
        return out
    _need_file(checkpoint, "checkpoint")
    arrays, meta = load_checkpoint(checkpoint)
    model = Model.from_checkpoint(arrays, meta)
    if model.cell_kind != "litt":
        raise DataError("discovery needs a LITT checkpoint")
    feats = meta.get("features", "")
    if feats and feats.split(",") != list(cohort.feature_names):
        raise DataError("checkpoint features do not match the cohort columns")
    st = Standardizer(arrays["feature_mean"], arrays["feature_std"]) if "feature_mean" in arrays else None
    batch = batch_from_cohort(cohort.standardized(st) if st is not None else cohort)
    gamma = model.gamma
    if len(gamma) not in (1, len(cohort)):
        if model.ids:
            pos = {i: k for k, i in enumerate(model.ids)}
            miss = [i for i in cohort.ids if i not in pos]
            if miss:
                raise DataError(f"{len(miss)} cohort ids have no gate parameters in the checkpoint")
            gamma = gamma.take(np.array([pos[i] for i in cohort.ids]))
        else:
            raise DataError("checkpoint gate parameters do not match the cohort size")
    _, _, traces = forward(model, batch, gamma)
    return model_timelines(traces, cohort.mask)


def cmd_discover(args) -> int:
    started = time.time()
    kv = _config(args.config)
    try:
        dcfg = DiscoveryConfig.from_mapping(kv)
    except (KeyError, ValueError) as e:
        raise UsageError(str(e)) from None
    if args.merge_tolerance is not None:
        dcfg = replace(dcfg, merge_tolerance=args.merge_tolerance)
    cohort = _load_cohort(args.cohort, args.schema)
    out = _out_dir(args.out)
    evs = event_defs(cohort)
    if args.candidates is not None:
        wanted = set(_csv_list(args.candidates))
        unknown = wanted - {e.id for e in evs}
        if unknown:
            raise UsageError(f"unknown candidate event(s): {', '.join(sorted(unknown))}")
        evs = [e for e in evs if e.id in wanted]
    outputs = []
    tree = None
    if evs:
        timelines = _timelines_for(cohort, args.checkpoint)
        root = None
        if args.root:
            match = [e for e in evs if e.id == args.root]
            if not match:
                raise UsageError(f"root event {args.root!r} is not a candidate")
            root = match[0]
        tree = discover(cohort, timelines, evs, dcfg, root)
        if tree is None:
            raise DataError("insufficient support at the root event")
        tree = merge_tree(tree, dcfg.merge_tolerance)
        for e in evs:
            try:
                hm = association_heatmap(cohort, e, evs)
            except (InsufficientSampleError, ValueError):
                continue
            p = out / f"heatmap_{e.id}.csv"
            hm.to_csv(p)
            if hm.constant:
                print(f"heatmap_{e.id}: constant occurrence in {','.join(hm.constant)} (n={hm.n}); "
                      "those scores are set to 0", file=sys.stderr)
            outputs.append(p)
    (out / "tree.txt").write_text(tree_to_text(tree), encoding="utf-8")
    (out / "tree.dot").write_text(tree_to_dot(tree), encoding="utf-8")
    merged = merged_sets(tree)
    (out / "merged_events.txt").write_text("".join(",".join(m) + "\n" for m in merged), encoding="utf-8")
    outputs += [out / "tree.txt", out / "tree.dot", out / "merged_events.txt"]
    inputs = [args.cohort] + [p for p in (args.checkpoint, args.config) if p]
    write_manifest(out, "discover", asdict(dcfg), None, inputs, outputs, started)
    print(tree_to_text(tree), end="")
    if tree is not None:
        print("best route: " + " -> ".join(best_route(tree)))
    for m in merged:
        print("merged: " + ",".join(m))
    return EXIT_OK


# --- eval ----------------------------------------------------------------------------------

def _is_survival_csv(path):
    with open(path, encoding="utf-8") as fh:
        head = [h.strip() for h in fh.readline().split(",")]
    return "duration" in head and "event" in head and "step" not in head


def cmd_eval(args) -> int:
    started = time.time()
    methods = list(_csv_list(args.methods))
    bad = [m for m in methods if m not in KNOWN_METHODS]
    if bad or not methods:
        raise UsageError(f"unknown method(s) {bad}; known: {', '.join(KNOWN_METHODS)}")
    kv = _config(args.config)
    _need_file(args.data, "dataset")
    out = _out_dir(args.out)
    survival = _is_survival_csv(args.data)
    try:
        base = SURVIVAL_TRAIN if survival and not kv else TrainConfig.from_mapping(kv)
    except (KeyError, ValueError) as e:
        raise UsageError(str(e)) from None
    if survival:
        table = load_survival_table(args.data)
        reports = run_survival_protocol(table, methods, folds=args.folds, seed=args.seed, cfg=base)
    else:
        cohort = _load_cohort(args.data, args.schema)
        reports = run_cohort_protocol(cohort, methods, folds=args.folds, seed=args.seed, cfg=base)
    rp = out / "report.csv"
    write_report_csv(rp, reports)
    outputs = [rp]
    print(format_table(reports))
    metric = "c_index" if survival else "rmse_days"
    shown = [r for r in reports if metric in r.values]
    if shown:
        p = out / "report.svg"
        bar_chart_svg(p, [r.method for r in shown], [r.mean(metric) for r in shown],
                      [r.std(metric) for r in shown], title=f"{metric} ({args.folds}-fold)", ylabel=metric)
        outputs.append(p)
    traces = {r.method: r.mean_trace() for r in reports if r.traces}
    if traces:
        for name, tr in traces.items():
            p = out / f"trace_{name}.csv"
            write_trace_csv(p, tr)
            outputs.append(p)
        p = out / "traces.svg"
        line_chart_svg(p, traces, title="training error", ylabel="RMSE (target units)" if survival else "RMSE (days)")
        outputs.append(p)
    write_manifest(out, "eval", {"methods": ",".join(methods), "folds": args.folds, **kv}, args.seed, [args.data],
                   outputs, started)
    return EXIT_OK


# --- gradcheck -----------------------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    t0 = time.time()
    if args.configs < 1 or args.max_T < 1 or args.max_hidden < 1:
        raise UsageError("--configs, --max-T and --max-hidden must be positive")
    res = gradcheck_sweep(n_configs=args.configs, seed=args.seed, max_T=args.max_T, max_hidden=args.max_hidden,
                          _sign_flip=args.inject_sign_flip)
    ok = True
    print(f"{'cell':<6}{'configs':>8}{'worst rel err':>16}  status")
    for cell, rs in res.items():
        worst = max(r.max_rel_error for r in rs)
        passed = all(r.passed(args.tol) for r in rs)
        ok &= passed
        print(f"{cell:<6}{len(rs):>8}{worst:>16.3e}  {'pass' if passed else 'FAIL'}")
    print(f"tolerance {args.tol:g}; {time.time() - t0:.1f} s")
    return EXIT_OK if ok else EXIT_NUMERIC


# --- diagnose ------------------------------------------------------------------------------

def cmd_diagnose(args) -> int:
    started = time.time()
    out = _out_dir(args.out)
    profs = [decay_profile(c, T=args.T, trials=args.trials, seed=args.seed, forget_bias=args.forget_bias,
                           norm=args.norm) for c in ("lstm", "gru")]
    p = out / "decay.csv"
    write_profile_csv(p, profs)
    outputs = [p]
    series = {pr.cell: [float(np.log10(max(np.median(pr.cumulative[:, k]), 1e-300)))
                        for k in range(pr.cumulative.shape[1])] for pr in profs}
    sp = out / "decay.svg"
    line_chart_svg(sp, series, title="cumulative Jacobian norm (median)", ylabel="log10 norm", xlabel="step")
    outputs.append(sp)
    for pr in profs:
        for h, med, q25, q75 in pr.rows:
            print(f"{pr.cell:<5} T={h:<4d} median {med:.3e}  IQR [{q25:.3e}, {q75:.3e}]")
    write_manifest(out, "diagnose", vars(args) | {"func": None}, args.seed, [], outputs, started)
    return EXIT_OK


# --- entry point ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="litt", description="Time-transformation-gated recurrent models and tools.")
    ap.add_argument("--version", action="version", version=f"litt {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthetic cohorts and oscillator trajectories")
    g.add_argument("kind", choices=("warp", "events", "oscillator"))
    g.add_argument("--config", help="key=value file of generator options")
    g.add_argument("--out", required=True, help="output CSV path")
    g.add_argument("--seed", type=int, default=0)
    for k in ("beta", "gamma", "A", "B", "duration", "dt"):
        g.add_argument(f"--{k}", type=float, default=None, help=f"oscillator {k}")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fit a model on a cohort CSV")
    t.add_argument("--cohort", required=True)
    t.add_argument("--config", help="training key=value file (epochs, lr, hidden_dim, mode, ...)")
    t.add_argument("--schema", help="column-role key=value file")
    t.add_argument("--folds", type=int, default=1, help="also write per-fold traces when >= 2")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("discover", help="greedy timing-attention trajectory tree")
    d.add_argument("--cohort", required=True)
    d.add_argument("--checkpoint", help="LITT checkpoint; without it the cohort's gamma_true column is used")
    d.add_argument("--config", help="discovery key=value file")
    d.add_argument("--schema")
    d.add_argument("--candidates", help="comma-separated event ids (default: all event columns)")
    d.add_argument("--root", help="initial event id")
    d.add_argument("--merge-tolerance", type=float, default=None)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_discover)

    e = sub.add_parser("eval", help="cross-validated comparison of methods")
    e.add_argument("--data", required=True, help="cohort CSV or survival CSV (duration,event,...)")
    e.add_argument("--methods", required=True, help=f"comma list from: {', '.join(KNOWN_METHODS)}")
    e.add_argument("--folds", type=int, default=5)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--config", help="training key=value file for recurrent methods")
    e.add_argument("--schema")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--configs", type=int, default=25)
    c.add_argument("--max-T", dest="max_T", type=int, default=20)
    c.add_argument("--max-hidden", dest="max_hidden", type=int, default=8)
    c.add_argument("--tol", type=float, default=1e-5)
    c.add_argument("--inject-sign-flip", action="store_true", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_gradcheck)

    q = sub.add_parser("diagnose", help="LSTM vs GRU Jacobian decay profile")
    q.add_argument("--T", type=int, default=200)
    q.add_argument("--trials", type=int, default=100)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--forget-bias", dest="forget_bias", type=float, default=1.0)
    q.add_argument("--norm", choices=("inf", "2"), default="inf")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_diagnose)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as e:
        print(f"litt: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CohortFormatError, InsufficientSampleError, UndefinedMetricError) as e:
        print(f"litt: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, ConvergenceError, DegenerateDistributionError, FloatingPointError) as e:
        print(f"litt: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
