"""Case-level cross-validation harness with a train/test contamination guard."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import matrixio
from .config import Config
from .dataset import FoldPlan, Manifest, derive_label
from .evaluation import FoldResult, average_roc, auc, mean_auc, roc_curve, stratify
from .pipelines import Pipeline, make_pipeline


class ContaminationError(RuntimeError):
    """A fitting stage was handed data from the held-out fold."""


class FoldError(RuntimeError):
    def __init__(self, fold: int, cause: BaseException):
        super().__init__(f"fold {fold}: {type(cause).__name__}: {cause}")
        self.fold = fold


class FitGuard:
    def __init__(self, test_ids, fold: int | None = None):
        self.test_ids = frozenset(test_ids)
        self.fold = fold
        self.calls: list[tuple[str, int]] = []

    def check(self, stage: str, ids) -> None:
        leaked = self.test_ids.intersection(ids)
        if leaked:
            where = f"fold {self.fold}, " if self.fold is not None else ""
            raise ContaminationError(
                f"{where}stage {stage!r} received {len(leaked)} test image(s): {sorted(leaked)[:5]}")
        self.calls.append((stage, len(ids)))


@dataclass
class CVResult:
    pipeline: str
    folds: list[FoldResult]
    mean_auc: float
    roc: object
    strata: dict
    artifacts: dict = field(default_factory=dict)  # fold -> {name: (matrix, sidecar)}


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def split_records(manifest: Manifest, plan: FoldPlan, fold: int):
    train = [r for r in manifest.records if plan.assignment[r.case_id] != fold]
    test = [r for r in manifest.records if plan.assignment[r.case_id] == fold]
    overlap = {r.case_id for r in train} & {r.case_id for r in test}
    if overlap:
        raise ContaminationError(f"fold {fold}: cases in both train and test: {sorted(overlap)[:5]}")
    return train, test


def run_fold(pipeline: Pipeline | str, manifest: Manifest, plan: FoldPlan, fold: int,
             features: dict, config: Config, keep_artifacts: bool = False):
    pipe = make_pipeline(pipeline, config) if isinstance(pipeline, str) else pipeline
    train, test = split_records(manifest, plan, fold)
    guard = FitGuard([r.image_path for r in test], fold)
    try:
        ids = [r.image_path for r in train]
        y = np.array([derive_label(r) for r in train])
        pipe.fit(ids, [features[i] for i in ids], y, guard, fold_seed(config.seed, fold))
        scores = np.asarray(pipe.decision([features[r.image_path] for r in test]), dtype=np.float64)
    except ContaminationError:
        raise
    except Exception as exc:
        raise FoldError(fold, exc) from exc
    labels = np.array([derive_label(r) for r in test])
    result = FoldResult(
        fold=fold,
        auc=auc(scores, labels),
        roc=roc_curve(scores, labels),
        image_paths=[r.image_path for r in test],
        labels=labels,
        scores=scores,
        difficulties=[r.difficulty for r in test],
        info=dict(getattr(pipe, "selection", {})),
    )
    return result, (pipe.artifacts() if keep_artifacts else None)


def _run_fold_job(args):
    return run_fold(*args)


def cross_validate(pipeline: str | Pipeline, manifest: Manifest, plan: FoldPlan, features: dict,
                   config: Config = Config(), threads: int = 1,
                   keep_artifacts: bool = False) -> CVResult:
    """Fit on the training cases of each fold and score its test images.

    ``pipeline`` is a registered name or a Pipeline instance (instances are
    re-used across folds and always run serially).
    """
    present = {r.case_id for r in manifest.records}
    missing = present - set(plan.assignment)
    if missing:
        raise ValueError(f"{len(missing)} manifest case(s) have no fold: {sorted(missing)[:5]}")
    folds = sorted({plan.assignment[c] for c in present})
    jobs = [(pipeline, manifest, plan, f, features, config, keep_artifacts) for f in folds]
    if threads > 1 and isinstance(pipeline, str):
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(_run_fold_job, jobs))
    else:
        outputs = [_run_fold_job(j) for j in jobs]
    results = [o[0] for o in outputs]
    name = pipeline if isinstance(pipeline, str) else pipeline.name
    return CVResult(
        pipeline=name,
        folds=results,
        mean_auc=mean_auc(results),
        roc=average_roc([r.roc for r in results], config.roc_grid),
        strata=stratify(results),
        artifacts={r.fold: o[1] for r, o in zip(results, outputs) if o[1] is not None},
    )


# ---------------------------------------------------------------- outputs

def _fmt(x: float) -> str:
    return f"{x:.10g}"


def roc_svg(curve, title: str = "", size: int = 400) -> str:
    pad = 40
    span = size - 2 * pad
    pts = " ".join(f"{pad + x * span:.2f},{size - pad - y * span:.2f}"
                   for x, y in zip(curve.fpr, curve.tpr))
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<line x1="{pad}" y1="{size - pad}" x2="{size - pad}" y2="{size - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{size - pad}" x2="{pad}" y2="{pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{size - pad}" x2="{size - pad}" y2="{pad}" stroke="#bbbbbb" stroke-dasharray="4 4"/>',
        f'<text x="{size / 2}" y="{size - 8}" font-size="12" text-anchor="middle">false positive rate</text>',
        f'<text x="12" y="{size / 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 12 {size / 2})">true positive rate</text>',
        f'<text x="{size / 2}" y="20" font-size="13" text-anchor="middle">{title}</text>',
        f'<polyline fill="none" stroke="#1f5fbf" stroke-width="2" points="{pts}"/>',
        "</svg>",
        "",
    ])


def write_results(result: CVResult, out_dir, config: Config, extra: dict | None = None) -> dict:
    """Write folds.csv, scores.csv, roc_mean.csv, roc_mean.svg and summary.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "folds.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "auc"])
        for r in result.folds:
            w.writerow([r.fold, _fmt(r.auc)])
    with open(out / "scores.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image", "label", "score", "difficulty", "fold"])
        for r in result.folds:
            for path, lab, s, d in zip(r.image_paths, r.labels, r.scores, r.difficulties):
                w.writerow([path, int(lab), _fmt(float(s)), d, r.fold])
    with open(out / "roc_mean.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fpr", "tpr"])
        for x, y in zip(result.roc.fpr, result.roc.tpr):
            w.writerow([_fmt(x), _fmt(y)])
    (out / "roc_mean.svg").write_text(
        roc_svg(result.roc, f"{result.pipeline}: mean AUC {result.mean_auc:.3f}"))
    summary = {
        "pipeline": result.pipeline,
        "mean_auc": round(result.mean_auc, 12),
        "fold_auc": [round(r.auc, 12) for r in result.folds],
        "strata": {k: (None if v is None else round(v, 12)) for k, v in result.strata.items()},
        "selected": [{k: v for k, v in r.info.items()} for r in result.folds],
        "n_images": sum(len(r.image_paths) for r in result.folds),
        "n_positive": int(sum(int((r.labels > 0).sum()) for r in result.folds)),
        "seed": config.seed,
        "config_hash": config.hash(),
        "config": config.to_dict(),
    }
    summary.update(extra or {})
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    for fold, arts in sorted(result.artifacts.items()):
        fdir = out / "models" / f"fold_{fold:02d}"
        fdir.mkdir(parents=True, exist_ok=True)
        for name, (matrix, side) in arts.items():
            side = dict(side, seed=config.seed, config_hash=config.hash(), fold=fold,
                        pipeline=result.pipeline)
            matrixio.write_matrix(fdir / f"{name}.bin", np.atleast_2d(matrix), side)
    return summary
