"""Command line entry point: ``backbone-ensemble <subcommand> ...``.

Exit codes: 0 on success, 1 on data or validation errors, 2 on usage errors.
"""
from __future__ import annotations

import argparse
import csv
import io as _io
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import calibration, cascade, fewshot, learned, metrics, nlc, static, synth
from .errors import EnsembleError, SchemaViolation
from .io import load_manifest, save_npy, validate_bundle

ENSEMBLE_METHODS = ("logavg", "vote1", "vote3", "conf", "c-logavg", "c-conf")


class UsageError(Exception):
    pass


def _dump(doc, path=None):
    text = json.dumps(doc, indent=2, sort_keys=False) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _csv_floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _names(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _singles(z, y, names):
    return {n: metrics.accuracy(zb, y) for n, zb in zip(names, z)}


def _report_row(bundle, method, split, preds, z, y, extra=None):
    acc = metrics.prediction_accuracy(preds, y)
    singles = _singles(z, y, bundle.names)
    best = max(singles.values())
    masks = [metrics.correctness(zb, y) for zb in z]
    row = {
        "dataset": bundle.name,
        "method": method,
        "split": split,
        "accuracy": acc,
        "best_single": best,
        "delta_vs_best_single": acc - best,
    }
    if len(masks) >= 2 and any(m.any() for m in masks):
        row["diversity"] = metrics.diversity(masks)
    row.update(extra or {})
    return row


def _load_temps(path):
    return calibration.TemperatureVector.from_dict(json.loads(Path(path).read_text()))


def _temps_for(bundle, temps, seed):
    if temps is not None:
        tv = _load_temps(temps)
        lookup = dict(zip(tv.names, tv.temps))
        return calibration.TemperatureVector(np.array([lookup[n] for n in bundle.names]),
                                             bundle.names, tv.split)
    if "val" not in bundle.splits and seed is None:
        raise UsageError("calibrating on a train holdout requires --seed (or pass --temps)")
    return calibration.calibrate_bundle(bundle, seed or 0)


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args):
    try:
        bundle = load_manifest(args.manifest)
    except EnsembleError as exc:
        print(f"{type(exc).__name__}: {exc}")
        return 1
    report = validate_bundle(bundle)
    for line in report:
        print(line)
    if not report:
        print(f"ok: {bundle.name} ({len(bundle.backbones)} backbones, splits {bundle.splits})")
    return 1 if report else 0


def cmd_analyze(args):
    bundle = load_manifest(args.manifest)
    z = bundle.load_logits(args.split)
    y = bundle.load_labels(args.split)
    masks = [metrics.correctness(zb, y) for zb in z]
    singles = _singles(z, y, bundle.names)
    if args.what == "oracle":
        doc = {"dataset": bundle.name, "split": args.split,
               "oracle": metrics.oracle_accuracy(masks), "single": singles,
               "best_single": max(singles.values())}
    elif args.what == "diversity":
        doc = {"dataset": bundle.name, "split": args.split, "diversity": metrics.diversity(masks)}
    elif args.what == "overlap":
        table = metrics.overlap_table(masks, bundle.names)
        if args.format == "csv":
            text = table.to_csv()
            if args.out:
                Path(args.out).write_text(text)
            else:
                sys.stdout.write(text)
            return 0
        doc = {"dataset": bundle.name, "split": args.split, **table.to_dict()}
    else:
        if args.preds is None:
            raise UsageError("analyze improvement needs --preds")
        preds = np.load(args.preds)
        acc = metrics.prediction_accuracy(preds.reshape(-1), y)
        best = max(singles.values())
        doc = {"dataset": bundle.name, "split": args.split, "accuracy": acc, "best_single": best,
               "relative_improvement": metrics.relative_improvement(acc, best),
               "diversity": metrics.diversity(masks)}
    _dump(doc, args.out)
    return 0


def cmd_ensemble(args):
    bundle = load_manifest(args.manifest)
    z = bundle.load_logits(args.split)
    y = bundle.load_labels(args.split)
    zc = static.zscore(z) if args.zscore else z
    m = args.method
    if m == "logavg":
        preds = metrics.top1(static.log_avg(zc))
    elif m == "vote1":
        preds = static.vote_top1(zc)
    elif m == "vote3":
        preds = static.vote_top3(zc)
    elif m == "conf":
        preds = static.confidence_select(zc)
    else:
        if args.zscore:
            raise UsageError("--zscore cannot be combined with calibrated methods")
        temps = _temps_for(bundle, args.temps, args.seed)
        if m == "c-logavg":
            preds = metrics.top1(calibration.calibrated_log_avg(z, temps))
        else:
            preds = calibration.calibrated_confidence(z, temps)
    acc = metrics.prediction_accuracy(preds, y)
    if args.out:
        save_npy(preds.astype(np.int64), args.out)
    if args.report:
        _dump(_report_row(bundle, m, args.split, preds, z, y), args.report)
    print(f"accuracy={acc:.6f}")
    return 0


def cmd_calibrate(args):
    bundle = load_manifest(args.manifest)
    if args.split:
        tv = calibration.fit_temperatures(bundle.load_logits(args.split), bundle.load_labels(args.split),
                                          bundle.names, args.split)
    else:
        tv = _temps_for(bundle, None, args.seed)
    _dump(tv.to_dict(), args.out)
    return 0


def _train_indices(bundle, split, shots, seed):
    if shots is None:
        return None
    return fewshot.sample_shots(bundle.load_labels(split), shots, seed).indices


def cmd_train(args):
    bundle = load_manifest(args.manifest)
    method = args.method
    if method in ("gac", "sl"):
        split = args.split or ("val" if "val" in bundle.splits else "train")
        z, y = bundle.load_logits(split), bundle.load_labels(split)
        idx = _train_indices(bundle, split, args.shots, args.seed)
        if idx is not None:
            z, y = z[:, idx], y[idx]
        if method == "gac":
            cfg = learned.GacConfig(seed=args.seed, **({"generations": args.epochs} if args.epochs else {}))
            tv = learned.gac_fit(z, y, cfg, bundle.names)
        else:
            cfg = learned.SlConfig(seed=args.seed, **({"steps": args.epochs} if args.epochs else {}))
            tv = learned.sl_fit(z, y, cfg, bundle.names)
        doc = learned.fixed_model_dict(tv, cfg)
        doc["split"] = split
        _dump(doc, args.out)
    elif method == "nlc":
        split = args.split or "train"
        idx = _train_indices(bundle, split, args.shots, args.seed)
        overrides = {"epochs": args.epochs} if args.epochs else {}
        cfg = nlc.NlcTrainConfig(seed=args.seed, **overrides)
        if args.backbones:
            sel = [bundle.index(n) for n in _names(args.backbones)]
            z = bundle.load_logits(split, sel)
            feats = bundle.load_features(split, sel)
            y = bundle.load_labels(split)
            if idx is not None:
                z, feats, y = z[:, idx], [f[idx] for f in feats], y[idx]
            model, history = nlc.train_nlc(z, feats, y, cfg, names=[bundle.names[i] for i in sel])
        else:
            model, history = nlc.nlc_train(bundle, split, cfg, idx)
        doc = nlc.nlc_to_dict(model, cfg)
        doc["history"] = history.to_dict()
        _dump(doc, args.out)
    else:
        if not args.backbone:
            raise UsageError("train --method probe needs --backbone")
        split = args.split or "train"
        b = bundle.index(args.backbone)
        entry = bundle.backbones[b]
        feats = bundle.load_features(split, [b])[0]
        y = bundle.load_labels(split)
        idx = _train_indices(bundle, split, args.shots, args.seed)
        if idx is not None:
            feats, y = feats[idx], y[idx]
        init = None
        if entry.probe_init is not None:
            from .io import load_npy
            init = load_npy(entry.probe_init).astype(np.float64)
        cfg = fewshot.ProbeConfig(**({"epochs": args.epochs} if args.epochs else {}))
        probe = fewshot.probe_fit(feats, y, bundle.num_classes, init, cfg)
        probe.meta = {"backbone": args.backbone, "split": split, "shots": args.shots,
                      "seed": args.seed, "config": asdict(cfg)}
        _dump(probe.to_dict(), args.out)
    return 0


def _model_logits(doc, bundle, split):
    kind = doc.get("type")
    if kind == "nlc":
        model = nlc.nlc_from_dict(doc)
        sel = [bundle.index(n) for n in model.names]
        return nlc.nlc_logits(model, bundle.load_logits(split, sel), bundle.load_features(split, sel))
    if kind == "fixed-temps":
        sel = [bundle.index(n) for n in doc["backbones"]]
        return learned.combine_fixed(bundle.load_logits(split, sel), np.array(doc["temps"]))
    if kind == "probe":
        probe = fewshot.LinearProbe.from_dict(doc)
        b = bundle.index(probe.meta["backbone"])
        return fewshot.probe_logits(probe, bundle.load_features(split, [b])[0])
    raise SchemaViolation(f"unknown model type {kind!r}")


def cmd_predict(args):
    bundle = load_manifest(args.manifest)
    try:
        doc = json.loads(Path(args.model).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{args.model}: invalid JSON ({exc})") from exc
    logits = _model_logits(doc, bundle, args.split)
    preds = metrics.top1(logits)
    if args.out:
        save_npy(preds.astype(np.int64), args.out)
    if args.logits_out:
        save_npy(logits, args.logits_out)
    y = bundle.load_labels(args.split)
    if args.report:
        z = bundle.load_logits(args.split)
        _dump(_report_row(bundle, args.method_name or doc.get("method", doc["type"]), args.split, preds, z, y), args.report)
    print(f"accuracy={metrics.prediction_accuracy(preds, y):.6f}")
    return 0


def cmd_cascade(args):
    bundle = load_manifest(args.manifest)
    order = "gflops" if args.order == "gflops" else _names(args.order)
    temps = None
    if args.combiner == "c-logavg":
        temps = _temps_for(bundle, args.temps, args.seed)
    models = None
    if args.combiner == "nlc-per-prefix":
        if not args.prefix_models:
            raise UsageError("nlc-per-prefix needs --prefix-models")
        models = [nlc.nlc_load(p) for p in _names(args.prefix_models)]
    thresholds = _csv_floats(args.thresholds) if args.thresholds else [args.threshold]
    y = bundle.load_labels(args.split)
    lines = ["threshold,accuracy,avg_gflops"]
    traces = []
    for thr in thresholds:
        cfg = cascade.CascadeConfig(order, thr, args.combiner, temps, models)
        preds, trace = cascade.cascade_run(bundle, args.split, cfg)
        acc = metrics.prediction_accuracy(preds, y)
        lines.append(f"{thr:g},{acc:.6f},{cascade.cascade_cost(trace):.6f}")
        traces.append((thr, preds, trace, acc))
    if args.out:
        doc = traces[-1][2].to_dict() if len(traces) == 1 else {
            "sweep": [{"threshold": t, "accuracy": a, "avg_gflops": cascade.cascade_cost(tr)}
                      for t, _, tr, a in traces]}
        _dump(doc, args.out)
    if args.report:
        thr, preds, trace, _ = traces[-1]
        z = bundle.load_logits(args.split)
        _dump(_report_row(bundle, f"cascade-{args.combiner}", args.split, preds, z, y,
                          {"avg_gflops": cascade.cascade_cost(trace), "threshold": thr}), args.report)
    print("\n".join(lines))
    return 0


def cmd_fewshot_split(args):
    bundle = load_manifest(args.manifest)
    sample = fewshot.sample_shots(bundle.load_labels(args.split), args.shots, args.seed)
    save_npy(sample.indices.astype(np.int64), args.out)
    print(f"{len(sample.indices)} indices")
    return 0


def cmd_synth(args):
    cfg = synth.SynthConfig(
        classes=args.classes, n_train=args.n, n_test=args.n_test or args.n, n_val=args.n_val,
        backbones=args.backbones, acc=_csv_floats(args.acc), rho=args.rho,
        reliable_acc=args.reliable_acc, margin=args.margin, feature_dim=args.feature_dim,
        cue=args.cue, seed=args.seed, name=args.name,
    )
    bundle = synth.synth_generate(cfg, args.out)
    print(f"wrote {Path(args.out) / 'manifest.json'} ({len(bundle.backbones)} backbones)")
    return 0


REPORT_FIELDS = ("dataset", "method", "split", "accuracy", "delta_vs_best_single", "avg_gflops")


def load_runs(run_dir):
    rows = []
    for p in sorted(Path(run_dir).glob("*.json")):
        doc = json.loads(p.read_text())
        if isinstance(doc, dict) and {"dataset", "method", "accuracy", "delta_vs_best_single"} <= doc.keys():
            rows.append(doc)
    rows.sort(key=lambda r: (r["dataset"], r["method"], r.get("split", "")))
    return rows


def summarize(rows):
    """Mean / Min / Max of the delta over datasets, per method."""
    out = {}
    for method in sorted({r["method"] for r in rows}):
        deltas = [r["delta_vs_best_single"] for r in rows if r["method"] == method]
        out[method] = {"mean_delta": float(np.mean(deltas)), "min_delta": float(min(deltas)),
                       "max_delta": float(max(deltas)), "datasets": len(deltas)}
    return out


def cmd_report(args):
    rows = load_runs(args.input)
    summary = summarize(rows)
    if args.format == "json":
        text = json.dumps({"rows": rows, "summary": summary}, indent=2) + "\n"
    elif args.format == "csv":
        buf = _io.StringIO()
        if args.summary:
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["method", "mean_delta", "min_delta", "max_delta", "datasets"])
            for m, s in summary.items():
                w.writerow([m, f"{s['mean_delta']:.6f}", f"{s['min_delta']:.6f}",
                            f"{s['max_delta']:.6f}", s["datasets"]])
        else:
            w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, extrasaction="ignore", lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
        text = buf.getvalue()
    else:
        lines = ["| dataset | method | split | accuracy | delta |", "|---|---|---|---|---|"]
        for r in rows:
            lines.append(f"| {r['dataset']} | {r['method']} | {r.get('split', '')} | "
                         f"{100 * r['accuracy']:.1f} | {100 * r['delta_vs_best_single']:+.1f} |")
        lines += ["", "| method | mean delta | min delta | max delta |", "|---|---|---|---|"]
        for m, s in summary.items():
            lines.append(f"| {m} | {100 * s['mean_delta']:+.1f} | {100 * s['min_delta']:+.1f} | "
                         f"{100 * s['max_delta']:+.1f} |")
        text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="backbone-ensemble", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check a manifest and its files")
    s.add_argument("manifest")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("analyze", help="oracle, diversity, overlap or improvement statistics")
    s.add_argument("what", choices=("oracle", "diversity", "overlap", "improvement"))
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--format", choices=("json", "csv"), default="json")
    s.add_argument("--preds", help="prediction NPY (improvement only)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("ensemble", help="non-parametric and calibrated combiners")
    s.add_argument("--method", choices=ENSEMBLE_METHODS, required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--temps", help="temperatures JSON from `calibrate` (c-* methods)")
    s.add_argument("--zscore", action="store_true", help="standardize each backbone's logits first")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="predictions NPY")
    s.add_argument("--report", help="write a report row JSON")
    s.set_defaults(func=cmd_ensemble)

    s = sub.add_parser("calibrate", help="fit per-backbone temperatures")
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", help="default: val, else a seeded 10%% train holdout")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("train", help="fit gac, sl, nlc or a linear probe")
    s.add_argument("--method", choices=("gac", "sl", "nlc", "probe"), required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--split")
    s.add_argument("--shots", type=int)
    s.add_argument("--epochs", type=int, help="epochs / generations / steps override")
    s.add_argument("--backbone", help="probe: backbone name")
    s.add_argument("--backbones", help="nlc: comma-separated subset, in order")
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="apply a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--out", help="predictions NPY")
    s.add_argument("--logits-out", help="combined logits NPY")
    s.add_argument("--method-name", help="method label for --report")
    s.add_argument("--report")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("cascade", help="confidence-thresholded cascade")
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--threshold", type=float, default=0.9)
    s.add_argument("--thresholds", help="comma-separated sweep, overrides --threshold")
    s.add_argument("--order", default="gflops", help="'gflops' or comma-separated names")
    s.add_argument("--combiner", choices=cascade.COMBINERS, default="logavg")
    s.add_argument("--temps")
    s.add_argument("--prefix-models", help="comma-separated NLC model JSONs, one per prefix")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="trace JSON")
    s.add_argument("--report")
    s.set_defaults(func=cmd_cascade)

    s = sub.add_parser("fewshot-split", help="sample n examples per class")
    s.add_argument("--manifest", required=True)
    s.add_argument("--shots", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--split", default="train")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fewshot_split)

    s = sub.add_parser("synth", help="generate a synthetic bundle")
    s.add_argument("--classes", type=int, default=10)
    s.add_argument("--n", type=int, default=5000, help="train examples")
    s.add_argument("--n-test", type=int, default=None, help="test examples (default: --n)")
    s.add_argument("--n-val", type=int, default=0)
    s.add_argument("--backbones", type=int, default=3)
    s.add_argument("--acc", default="0.7")
    s.add_argument("--rho", type=float, default=0.8)
    s.add_argument("--reliable-acc", type=float, default=1.0)
    s.add_argument("--margin", type=float, default=2.0)
    s.add_argument("--feature-dim", type=int, default=16)
    s.add_argument("--cue", type=float, default=2.0)
    s.add_argument("--name", default="synthetic")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("report", help="aggregate report-row JSONs")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--format", choices=("csv", "json", "md"), default="csv")
    s.add_argument("--summary", action="store_true", help="csv: per-method delta summary")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def execute(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (EnsembleError, OSError, KeyError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(execute())


if __name__ == "__main__":
    main()
