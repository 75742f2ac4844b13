"""Case metadata, label rule, subset filters and case-level fold planning."""
from __future__ import annotations

import csv
import random
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

MANIFEST_COLUMNS = (
    "case_id",
    "image_path",
    "modality",
    "diagnosis",
    "difficulty",
    "hair",
    "ruler_occlusion",
    "far_body_shot",
)
MODALITIES = ("clinical", "dermoscopic")
DIFFICULTIES = ("low", "medium", "high")
_BOOLS = {"true": True, "1": True, "false": False, "0": False}
_TOKEN = re.compile(r"[a-z0-9]+")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    image_path: str
    modality: str
    diagnosis: str
    difficulty: str
    hair: bool = False
    ruler_occlusion: bool = False
    far_body_shot: bool = False

    def __post_init__(self):
        if not self.case_id:
            raise ManifestError("case_id must be non-empty")
        if self.modality not in MODALITIES:
            raise ManifestError(f"unknown modality {self.modality!r}")
        if self.difficulty not in DIFFICULTIES:
            raise ManifestError(f"unknown difficulty {self.difficulty!r}")

    @property
    def label(self) -> int:
        return derive_label(self)


@dataclass(frozen=True)
class Manifest:
    records: tuple[CaseRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for r in self.records:
            key = (r.case_id, r.image_path)
            if key in seen:
                raise ManifestError(f"duplicate (case_id, image_path) {key}")
            seen.add(key)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def case_ids(self) -> list[str]:
        """Distinct case ids in first-appearance order."""
        return list(dict.fromkeys(r.case_id for r in self.records))

    def n_positive(self) -> int:
        return sum(derive_label(r) == 1 for r in self.records)


@dataclass(frozen=True)
class SubsetSpec:
    name: str
    allowed_difficulties: frozenset
    allow_hair: bool


SUBSETS = {
    "LM": SubsetSpec("LM", frozenset({"low", "medium"}), False),
    "LMplus": SubsetSpec("LMplus", frozenset({"low", "medium"}), True),
    "LMH": SubsetSpec("LMH", frozenset({"low", "medium", "high"}), False),
}
_SUBSET_ALIASES = {"lm": "LM", "lm+": "LMplus", "lmplus": "LMplus", "lmh": "LMH"}


def subset_by_name(name: str) -> SubsetSpec:
    key = _SUBSET_ALIASES.get(name.lower())
    if key is None:
        raise ValueError(f"unknown subset {name!r}; expected one of lm, lm+, lmh")
    return SUBSETS[key]


@dataclass(frozen=True)
class FoldPlan:
    n_folds: int
    assignment: dict  # case_id -> fold index

    def fold_of(self, case_id: str) -> int:
        return self.assignment[case_id]

    def test_cases(self, fold: int) -> set[str]:
        return {c for c, f in self.assignment.items() if f == fold}

    def train_cases(self, fold: int) -> set[str]:
        return {c for c, f in self.assignment.items() if f != fold}


def _parse_bool(value: str, column: str, row: int) -> bool:
    v = value.strip().lower()
    if v not in _BOOLS:
        raise ManifestError(f"row {row}: column {column!r} has non-boolean value {value!r}")
    return _BOOLS[v]


def load_manifest(path) -> Manifest:
    """Read a manifest CSV; row numbers in errors count the header as row 1."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in MANIFEST_COLUMNS if c not in header]
        if missing:
            raise ManifestError(f"{path}: missing column(s) {', '.join(missing)}")
        records = []
        seen = set()
        for row_no, row in enumerate(reader, start=2):
            try:
                rec = CaseRecord(
                    case_id=row["case_id"].strip(),
                    image_path=row["image_path"].strip(),
                    modality=row["modality"].strip().lower(),
                    diagnosis=row["diagnosis"].strip(),
                    difficulty=row["difficulty"].strip().lower(),
                    hair=_parse_bool(row["hair"], "hair", row_no),
                    ruler_occlusion=_parse_bool(row["ruler_occlusion"], "ruler_occlusion", row_no),
                    far_body_shot=_parse_bool(row["far_body_shot"], "far_body_shot", row_no),
                )
            except ManifestError as exc:
                msg = str(exc)
                if not msg.startswith("row "):
                    msg = f"row {row_no}: {msg}"
                raise ManifestError(f"{path}: {msg}") from None
            key = (rec.case_id, rec.image_path)
            if key in seen:
                raise ManifestError(f"{path}: row {row_no}: duplicate (case_id, image_path) {key}")
            seen.add(key)
            records.append(rec)
    return Manifest(tuple(records))


def write_manifest(manifest: Manifest | Iterable[CaseRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for r in manifest:
            w.writerow([
                r.case_id, r.image_path, r.modality, r.diagnosis, r.difficulty,
                str(r.hair).lower(), str(r.ruler_occlusion).lower(), str(r.far_body_shot).lower(),
            ])


def derive_label(record: CaseRecord) -> int:
    """+1 when the diagnosis names any melanoma subtype, -1 otherwise."""
    return 1 if "melanoma" in _TOKEN.findall(record.diagnosis.lower()) else -1


def select_subset(manifest: Manifest, spec: SubsetSpec) -> Manifest:
    kept = [
        r for r in manifest.records
        if not r.ruler_occlusion
        and not r.far_body_shot
        and r.difficulty in spec.allowed_difficulties
        and (spec.allow_hair or not r.hair)
    ]
    return Manifest(tuple(kept))


def _case_table(manifest: Manifest):
    """Per-case (label, difficulty, diagnosis, n_images) from its image rows."""
    cases = {}
    for r in manifest.records:
        lab = derive_label(r)
        if r.case_id not in cases:
            cases[r.case_id] = [lab, r.difficulty, r.diagnosis.strip().lower(), 0]
        c = cases[r.case_id]
        c[0] = max(c[0], lab)
        c[3] += 1
    return cases


def split_folds(manifest: Manifest, n_folds: int, seed: int) -> FoldPlan:
    """Greedy balanced case-level split.

    Cases are shuffled with ``seed`` and processed largest (label, difficulty,
    diagnosis) group first. Each case joins the fold with the fewest cases of
    its label, then of its difficulty, then the fewest images overall; remaining
    ties go to the lowest fold index.
    """
    if n_folds < 2:
        raise ValueError("n_folds must be >= 2")
    cases = _case_table(manifest)
    ids = sorted(cases)
    if len(ids) < n_folds:
        raise ValueError(f"{len(ids)} distinct cases cannot fill {n_folds} folds")
    random.Random(seed).shuffle(ids)
    group_of = {c: tuple(cases[c][:3]) for c in ids}
    group_size = Counter(group_of.values())
    position = {c: i for i, c in enumerate(ids)}
    ids.sort(key=lambda c: (-group_size[group_of[c]], group_of[c], position[c]))

    by_label = [defaultdict(int) for _ in range(n_folds)]
    by_difficulty = [defaultdict(int) for _ in range(n_folds)]
    n_images = [0] * n_folds
    assignment = {}
    for c in ids:
        label, difficulty, _, n_img = cases[c]
        f = min(
            range(n_folds),
            key=lambda k: (by_label[k][label], by_difficulty[k][difficulty], n_images[k], k),
        )
        assignment[c] = f
        by_label[f][label] += 1
        by_difficulty[f][difficulty] += 1
        n_images[f] += n_img
    return FoldPlan(n_folds, dict(sorted(assignment.items())))


def write_fold_plan(plan: FoldPlan, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "fold"])
        for case_id, fold in sorted(plan.assignment.items()):
            w.writerow([case_id, fold])


def read_fold_plan(path) -> FoldPlan:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["case_id", "fold"]:
            raise ManifestError(f"{path}: expected header case_id,fold")
        assignment = {}
        for row_no, row in enumerate(reader, start=2):
            if row["case_id"] in assignment:
                raise ManifestError(f"{path}: row {row_no}: case {row['case_id']!r} listed twice")
            assignment[row["case_id"]] = int(row["fold"])
    n = max(assignment.values()) + 1 if assignment else 0
    return FoldPlan(n, assignment)


def resolve_path(manifest_path, image_path: str) -> Path:
    p = Path(image_path)
    return p if p.is_absolute() else Path(manifest_path).parent / p
