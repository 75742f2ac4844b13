"""Command-line entry point: gen, prepare, segment, extract, run, report."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import cache, crossval, dataset, external_features, synthcorpus
from .config import Config, load_config
from .imgproc import load_gray, save_mask
from .segmentation import segment_lesion

log = logging.getLogger("lesionscreen")

SUBSET_ORDER = ("LM", "LMplus", "LMH")


class CliError(Exception):
    pass


def _config(args) -> Config:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg = cfg.override(seed=args.seed)
    seg = {}
    if getattr(args, "mu", None) is not None:
        seg["mu"] = args.mu
    if getattr(args, "iters", None) is not None:
        seg["iterations"] = args.iters
    if seg:
        cfg = cfg.override(segmentation=seg)
    return cfg


def _plan_sidecar(plan_path) -> dict:
    p = Path(str(plan_path) + ".json")
    return json.loads(p.read_text()) if p.exists() else {}


# ---------------------------------------------------------------- commands

def cmd_gen(args):
    man = synthcorpus.gen_corpus(args.cases, args.pos_frac, args.seed, args.out, size=args.size)
    log.info("wrote %d images (%d positive) to %s", len(man), man.n_positive(), args.out)


def cmd_prepare(args):
    man = dataset.load_manifest(args.manifest)
    spec = dataset.subset_by_name(args.subset)
    sub = dataset.select_subset(man, spec)
    plan = dataset.split_folds(sub, args.folds, args.seed)
    dataset.write_fold_plan(plan, args.out)
    Path(str(args.out) + ".json").write_text(json.dumps(
        {"subset": spec.name, "n_folds": args.folds, "seed": args.seed,
         "n_images": len(sub), "n_positive": sub.n_positive()}, indent=1, sort_keys=True) + "\n")
    log.info("%s: %d images (%d positive) in %d cases -> %s",
             spec.name, len(sub), sub.n_positive(), len(plan.assignment), args.out)


def _segment_job(job):
    image_path, manifest_path, out_dir, params = job
    img = load_gray(dataset.resolve_path(manifest_path, image_path))
    mask = segment_lesion(img, params)
    name = cache.mask_filename(image_path)
    save_mask(mask, Path(out_dir) / name)
    return image_path, name, int(mask.sum())


def cmd_segment(args):
    cfg = _config(args)
    man = dataset.load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = cfg.segmentation.params()
    jobs = [(r.image_path, args.manifest, out, params) for r in man.records]
    rows = _map(_segment_job, jobs, args.threads)
    with open(out / "masks.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_path", "mask_path", "area", "iterations_run"])
        for image_path, name, area in rows:
            w.writerow([image_path, name, area, params.iterations])
    log.info("segmented %d images into %s", len(rows), out)


def _map(fn, jobs, threads):
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def cmd_extract(args):
    cfg = _config(args)
    man = dataset.load_manifest(args.manifest)
    feats = cache.extract_all(args.pipeline, man.records, args.manifest, cfg, args.cache,
                              args.masks, args.threads)
    n = sum(len(f) for f in feats.values())
    log.info("%s: %d images, %d local descriptors cached in %s", args.pipeline, len(feats), n, args.cache)


def _run_records(args):
    man = dataset.load_manifest(args.manifest)
    plan = dataset.read_fold_plan(args.plan)
    side = _plan_sidecar(args.plan)
    subset = side.get("subset")
    if subset:
        man = dataset.select_subset(man, dataset.SUBSETS[subset])
    man = dataset.Manifest(tuple(r for r in man.records if r.case_id in plan.assignment))
    if not len(man):
        raise CliError("no manifest images belong to the cases in the plan")
    return man, plan, subset


def cmd_run(args):
    cfg = _config(args)
    man, plan, subset = _run_records(args)
    if args.pipeline == "external":
        if not args.features:
            raise CliError("--features is required for the external pipeline")
        fmf = external_features.read_features(args.features)
        X, _, _ = external_features.join_with_manifest(fmf, man)
        feats = {r.image_path: X[i] for i, r in enumerate(man.records)}
    else:
        if not args.cache:
            raise CliError("--cache is required for image pipelines")
        feats = cache.extract_all(args.pipeline, man.records, args.manifest, cfg, args.cache,
                                  args.masks, args.threads)
    result = crossval.cross_validate(args.pipeline, man, plan, feats, cfg, threads=args.threads,
                                     keep_artifacts=True)
    summary = crossval.write_results(result, args.out, cfg, {
        "subset": subset, "n_folds": plan.n_folds})
    log.info("%s on %s: mean AUC %.4f over %d folds -> %s", args.pipeline, subset or "plan",
             summary["mean_auc"], plan.n_folds, args.out)


def cmd_report(args):
    dirs = [d for d in args.results.split(",") if d]
    if not dirs:
        raise CliError("--results needs at least one directory")
    summaries = []
    for d in dirs:
        p = Path(d) / "summary.json"
        if not p.exists():
            raise CliError(f"{d}: no summary.json")
        summaries.append(json.loads(p.read_text()))
    pipelines = list(dict.fromkeys(s["pipeline"] for s in summaries))
    subsets = sorted({s.get("subset") or "-" for s in summaries},
                     key=lambda x: SUBSET_ORDER.index(x) if x in SUBSET_ORDER else len(SUBSET_ORDER))
    cell = {(s.get("subset") or "-", s["pipeline"]): s for s in summaries}

    def pct(v):
        return "" if v is None else f"{100 * v:.1f}"

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subset"] + pipelines)
        for sub in subsets:
            w.writerow([sub] + [pct(cell[(sub, p)]["mean_auc"]) if (sub, p) in cell else ""
                                for p in pipelines])
    strata_path = Path(args.out).with_name(Path(args.out).stem + "_strata.csv")
    with open(strata_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subset"] + [f"{p}_{lvl}" for p in pipelines for lvl in "LMH"])
        for sub in subsets:
            row = [sub]
            for p in pipelines:
                strata = cell[(sub, p)]["strata"] if (sub, p) in cell else {}
                row += [pct(strata.get(k)) if strata.get(k) is not None else "--"
                        for k in ("low", "medium", "high")]
            w.writerow(row)
    log.info("wrote %s and %s", args.out, strata_path)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lesionscreen", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--cases", type=int, default=200)
    p.add_argument("--pos-frac", type=float, default=0.27)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=128)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("prepare", help="select a subset and write a case-level fold plan")
    p.add_argument("--manifest", required=True)
    p.add_argument("--subset", required=True, choices=["lm", "lm+", "lmh"])
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("segment", help="Chan-Vese lesion masks for the baseline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mu", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--config")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("extract", help="cache per-image local features")
    p.add_argument("--pipeline", required=True, choices=["baseline", "bossanova"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--masks")
    p.add_argument("--cache", required=True)
    p.add_argument("--config")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("run", help="full cross-validation of one pipeline")
    p.add_argument("--pipeline", required=True, choices=["baseline", "bossanova", "external"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--cache")
    p.add_argument("--masks")
    p.add_argument("--features")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="mean-AUC table over result directories")
    p.add_argument("--results", required=True, help="comma-separated result directories")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "threads", 1) < 1:
        args.threads = 1
    try:
        args.func(args)
    except Exception as exc:  # single-line, machine-parsable failure report
        print(json.dumps({"error": type(exc).__name__, "command": args.command,
                          "message": str(exc).replace("\n", " ")}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
