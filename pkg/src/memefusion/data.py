"""Meme dataset handling: label schema, manifest IO, splitting, balancing, synthesis.

A dataset is a plain list of MemeSample. Every operation here is a pure
function of (inputs, seed), so datasets can be rebuilt reproducibly.
"""

from __future__ import annotations

import csv
import json
import os
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError

# Raw label columns and how many values each takes.
LABEL_COLUMNS = {
    "sentiment": 3,   # 0 negative, 1 neutral, 2 positive
    "humor": 4,       # 0 not .. 3 very
    "sarcasm": 4,
    "offence": 4,
    "motivation": 2,  # 0 no, 1 yes
}

MANIFEST_COLUMNS = ["id", "text", "image_path"] + list(LABEL_COLUMNS)


@dataclass(frozen=True)
class Subtask:
    """One of the 8 classification subtasks scored by the shared-task protocol."""

    name: str
    column: str
    num_classes: int
    binarize: bool  # label = int(raw > 0) instead of the raw scale value
    group: str      # "A", "B" or "C"


SUBTASKS: dict[str, Subtask] = {
    "sentiment": Subtask("sentiment", "sentiment", 3, False, "A"),
    "humor": Subtask("humor", "humor", 2, True, "B"),
    "sarcasm": Subtask("sarcasm", "sarcasm", 2, True, "B"),
    "offence": Subtask("offence", "offence", 2, True, "B"),
    "motivation": Subtask("motivation", "motivation", 2, False, "B"),
    "humor_scale": Subtask("humor_scale", "humor", 4, False, "C"),
    "sarcasm_scale": Subtask("sarcasm_scale", "sarcasm", 4, False, "C"),
    "offence_scale": Subtask("offence_scale", "offence", 4, False, "C"),
}

TASK_GROUPS = {
    "A": ["sentiment"],
    "B": ["humor", "sarcasm", "offence", "motivation"],
    "C": ["humor_scale", "sarcasm_scale", "offence_scale"],
}


def get_subtask(name: str) -> Subtask:
    try:
        return SUBTASKS[name]
    except KeyError:
        raise ValueError(
            f"unknown task {name!r}; known tasks: {', '.join(SUBTASKS)}"
        ) from None


@dataclass(frozen=True)
class LabelValues:
    sentiment: int
    humor: int
    sarcasm: int
    offence: int
    motivation: int

    def validate(self):
        for column, n in LABEL_COLUMNS.items():
            v = getattr(self, column)
            if not isinstance(v, int) or not 0 <= v < n:
                raise ValueError(f"{column}={v!r} outside range 0..{n - 1}")

    def as_dict(self) -> dict[str, int]:
        return {c: getattr(self, c) for c in LABEL_COLUMNS}


@dataclass
class MemeSample:
    """One meme: extracted text plus an image reference and the full label set.

    image_ref is a file path, an in-memory HxWx3 uint8 array (synthetic data),
    or None when no image is attached. text may be empty (OCR failure) but is
    never None.
    """

    id: str
    text: str
    image_ref: "str | np.ndarray | None"
    labels: LabelValues


def task_label(sample: MemeSample, task: str) -> int:
    """Label of `sample` under one of the 8 subtask views."""
    sub = get_subtask(task)
    raw = getattr(sample.labels, sub.column)
    return int(raw > 0) if sub.binarize else raw


@dataclass(frozen=True)
class ClassDistribution:
    task: str
    counts: dict[int, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass
class DatasetSplit:
    train: list[MemeSample]
    validation: list[MemeSample]
    val_fraction: float = 0.0
    seed: int = 0
    stratified: bool = False


# ---------------------------------------------------------------------------
# Manifest IO
# ---------------------------------------------------------------------------

def _parse_row(row: Mapping[str, object], where: str, seen_ids: set) -> MemeSample:
    missing = [c for c in MANIFEST_COLUMNS if c not in row or row[c] is None]
    # text/image_path may legitimately be empty strings but must exist as fields
    if missing:
        raise DataError(f"{where}: missing fields {missing}")
    labels = {}
    for column in LABEL_COLUMNS:
        v = row[column]
        try:
            iv = int(v)
        except (TypeError, ValueError):
            raise DataError(f"{where}: label {column}={v!r} is not an integer") from None
        if not 0 <= iv < LABEL_COLUMNS[column]:
            raise DataError(
                f"{where}: label {column}={iv} outside range 0..{LABEL_COLUMNS[column] - 1}"
            )
        labels[column] = iv
    sample_id = str(row["id"])
    if sample_id in seen_ids:
        raise DataError(f"{where}: duplicate id {sample_id!r}")
    seen_ids.add(sample_id)
    image_path = str(row["image_path"]) if row["image_path"] else ""
    return MemeSample(
        id=sample_id,
        text=str(row["text"]),
        image_ref=image_path or None,
        labels=LabelValues(**labels),
    )


def load_manifest(path: "str | os.PathLike") -> list[MemeSample]:
    """Read a dataset manifest (CSV with header, or JSON-lines for .jsonl)."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise DataError(f"manifest not found: {path}")
    samples: list[MemeSample] = []
    seen: set = set()
    if path.endswith((".jsonl", ".ndjson")):
        with open(path, encoding="utf-8") as f:
            for i, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as e:
                    raise DataError(f"{path} row {i}: invalid JSON ({e})") from None
                samples.append(_parse_row(row, f"{path} row {i}", seen))
    else:
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None:
                raise DataError(f"{path}: empty manifest (no header)")
            header_missing = [c for c in MANIFEST_COLUMNS if c not in reader.fieldnames]
            if header_missing:
                raise DataError(f"{path}: header missing columns {header_missing}")
            for i, row in enumerate(reader, start=1):
                if None in row.values() or None in row:
                    raise DataError(f"{path} row {i}: wrong number of fields")
                samples.append(_parse_row(row, f"{path} row {i}", seen))
    return samples


def write_manifest(dataset: Sequence[MemeSample], path: "str | os.PathLike",
                   images_dir: "str | os.PathLike | None" = None) -> None:
    """Write a CSV manifest (or JSON-lines for .jsonl paths).

    In-memory images are materialized as PNGs under images_dir; passing
    samples with array images and no images_dir is an error.
    """
    path = os.fspath(path)
    manifest_dir = os.path.dirname(os.path.abspath(path))
    rows = []
    for s in dataset:
        s.labels.validate()
        image_path = ""
        if isinstance(s.image_ref, np.ndarray):
            if images_dir is None:
                raise DataError(
                    f"sample {s.id!r} carries an in-memory image; pass images_dir to materialize it"
                )
            os.makedirs(images_dir, exist_ok=True)
            target = os.path.join(os.fspath(images_dir), f"{s.id}.png")
            _save_png(s.image_ref, target)
            # store relative to the manifest so the prepared directory is relocatable
            image_path = os.path.relpath(target, start=manifest_dir)
        elif s.image_ref:
            image_path = str(s.image_ref)
        rows.append({"id": s.id, "text": s.text, "image_path": image_path,
                     **s.labels.as_dict()})
    if path.endswith((".jsonl", ".ndjson")):
        with open(path, "w", encoding="utf-8") as f:
            for row in rows:
                f.write(json.dumps(row, ensure_ascii=False) + "\n")
    else:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=MANIFEST_COLUMNS,
                                    quoting=csv.QUOTE_NONNUMERIC, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)


def _save_png(array: np.ndarray, path: str) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path, format="PNG")


def resolve_image_paths(samples: Sequence[MemeSample],
                        base_dir: "str | os.PathLike") -> list[MemeSample]:
    """Resolve relative image paths against the directory the manifest came from."""
    base = os.fspath(base_dir)
    for s in samples:
        if isinstance(s.image_ref, str) and not os.path.isabs(s.image_ref):
            s.image_ref = os.path.join(base, s.image_ref)
    return list(samples)


# ---------------------------------------------------------------------------
# Splitting and distributions
# ---------------------------------------------------------------------------

def split_train_val(dataset: Sequence[MemeSample], val_fraction: float, seed: int,
                    stratify: bool = True) -> DatasetSplit:
    """Deterministic train/validation split; |validation| = round(val_fraction * N).

    By default stratified on the sentiment label so the validation marginals
    track the full dataset.
    """
    if not 0 < val_fraction < 1:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    n = len(dataset)
    if n < 2:
        raise ValueError("dataset must contain at least 2 samples to split")
    n_val = round(val_fraction * n)
    rng = np.random.default_rng(seed)
    if stratify:
        strata: dict[int, list[int]] = {}
        for i, s in enumerate(dataset):
            strata.setdefault(task_label(s, "sentiment"), []).append(i)
        # largest-remainder allocation so per-stratum picks sum to exactly n_val
        labels = sorted(strata)
        quotas = {c: val_fraction * len(strata[c]) for c in labels}
        alloc = {c: int(quotas[c]) for c in labels}
        leftover = n_val - sum(alloc.values())
        by_remainder = sorted(labels, key=lambda c: (-(quotas[c] - alloc[c]), c))
        for c in by_remainder[:leftover]:
            alloc[c] += 1
        val_idx: list[int] = []
        for c in labels:
            picked = rng.permutation(len(strata[c]))[: alloc[c]]
            val_idx.extend(strata[c][j] for j in picked)
    else:
        val_idx = list(rng.permutation(n)[:n_val])
    val_set = set(val_idx)
    train = [dataset[i] for i in range(n) if i not in val_set]
    validation = [dataset[i] for i in sorted(val_set)]
    return DatasetSplit(train=train, validation=validation, val_fraction=val_fraction,
                        seed=seed, stratified=stratify)


def class_distribution(dataset: Sequence[MemeSample], task: str) -> ClassDistribution:
    """Exact class counts for one subtask; absent classes report 0."""
    sub = get_subtask(task)
    counts = {c: 0 for c in range(sub.num_classes)}
    for s in dataset:
        counts[task_label(s, task)] += 1
    return ClassDistribution(task=task, counts=counts)


def compute_class_weights(dist: "ClassDistribution | Mapping[int, int]") -> dict[int, float]:
    """Balanced inverse-frequency weights w_c = N / (K * n_c).

    Satisfies sum_c n_c * w_c = N when every class is populated. Classes with
    zero count get weight 0 and raise a RuntimeWarning.
    """
    counts = dist.counts if isinstance(dist, ClassDistribution) else dict(dist)
    total = sum(counts.values())
    if total == 0:
        raise ValueError("cannot compute class weights: all counts are zero")
    k = len(counts)
    weights = {}
    empty = [c for c, n_c in counts.items() if n_c == 0]
    if empty:
        warnings.warn(
            f"classes {empty} have zero samples; their weight is set to 0",
            RuntimeWarning, stacklevel=2,
        )
    for c, n_c in counts.items():
        weights[c] = total / (k * n_c) if n_c else 0.0
    return weights


def oversample_to_balance(dataset: Sequence[MemeSample], task: str, seed: int) -> list[MemeSample]:
    """Duplicate minority-class samples until every class matches the majority count.

    Duplicates are drawn uniformly with replacement; all original samples are
    kept (in order) with the duplicates appended class by class.
    """
    sub = get_subtask(task)
    by_class: dict[int, list[int]] = {c: [] for c in range(sub.num_classes)}
    for i, s in enumerate(dataset):
        by_class[task_label(s, task)].append(i)
    empty = [c for c, idx in by_class.items() if not idx]
    if empty:
        raise DataError(
            f"cannot oversample task {task!r}: classes {empty} have no samples"
        )
    majority = max(len(idx) for idx in by_class.values())
    rng = np.random.default_rng(seed)
    out = list(dataset)
    for c in sorted(by_class):
        deficit = majority - len(by_class[c])
        if deficit:
            picks = rng.choice(by_class[c], size=deficit, replace=True)
            out.extend(dataset[int(i)] for i in picks)
    return out


# ---------------------------------------------------------------------------
# Synthetic data with controllable modality signal
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SignalSpec:
    """How one subtask's label is encoded into a synthetic sample.

    mode "text": a class token is injected into the text. mode "image": a
    class-colored patch is painted into the image. mode "both": the label is
    the modular sum of a text component and an image component, so neither
    modality alone carries any information. mode "none": pure noise.
    """

    mode: str = "none"
    prior: "tuple[float, ...] | None" = None


@dataclass(frozen=True)
class SyntheticSpec:
    signals: Mapping[str, SignalSpec] = field(default_factory=dict)
    image_size: int = 24
    filler_tokens: int = 4
    background: str = "noise"  # "noise" | "flat": flat removes pixel-level nuisance variation


_FILLERS = [
    "when", "you", "see", "it", "that", "face", "me", "monday", "cat", "boss",
    "after", "coffee", "again", "nobody", "literally", "same",
]

# distinct saturated colors for up to 4 classes; chosen to survive resizing
_PALETTE = [(230, 40, 40), (40, 230, 40), (40, 40, 230), (230, 230, 40)]

_MODES = ("text", "image", "both", "none")


def _normalized_prior(spec: SignalSpec, k: int, task: str) -> np.ndarray:
    if spec.prior is None:
        return np.full(k, 1.0 / k)
    p = np.asarray(spec.prior, dtype=float)
    if p.shape != (k,) or np.any(p < 0) or not np.isfinite(p).all() or p.sum() <= 0:
        raise ValueError(f"invalid class prior for task {task!r}: {spec.prior}")
    return p / p.sum()


def signal_token(task: str, component: int) -> str:
    """Token carrying a class signal; alphanumeric so preprocessing keeps it whole."""
    return f"{task.replace('_', '')}sig{component}"


def generate_synthetic(n: int, spec: SyntheticSpec, seed: int) -> list[MemeSample]:
    """Generate n labeled samples whose text/images carry the declared signals."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    signaled_columns: dict[str, str] = {}
    image_tasks: list[str] = []
    for task, sig in spec.signals.items():
        sub = get_subtask(task)
        if sig.mode not in _MODES:
            raise ValueError(f"unknown signal mode {sig.mode!r} for task {task!r}")
        if sub.column in signaled_columns:
            raise ValueError(
                f"tasks {signaled_columns[sub.column]!r} and {task!r} both control "
                f"column {sub.column!r}"
            )
        signaled_columns[sub.column] = task
        if sig.mode in ("image", "both"):
            image_tasks.append(task)
    if len(image_tasks) > len(_PALETTE):
        raise ValueError("at most 4 tasks can carry an image signal")
    if spec.background not in ("noise", "flat"):
        raise ValueError(f"unknown background style {spec.background!r}")

    rng = np.random.default_rng(seed)
    size = spec.image_size
    half = max(1, size // 2)
    quadrants = [(0, 0), (0, half), (half, 0), (half, half)]

    samples = []
    for i in range(n):
        raw: dict[str, int] = {}
        tokens = list(rng.choice(_FILLERS, size=spec.filler_tokens))
        if spec.background == "noise":
            image = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
        else:
            image = np.full((size, size, 3), 128, dtype=np.uint8)
        for column, k_raw in LABEL_COLUMNS.items():
            task = signaled_columns.get(column)
            if task is None:
                raw[column] = int(rng.integers(0, k_raw))
                continue
            sub = SUBTASKS[task]
            sig = spec.signals[task]
            prior = _normalized_prior(sig, sub.num_classes, task)
            y = int(rng.choice(sub.num_classes, p=prior))
            if sub.binarize:
                raw[column] = 0 if y == 0 else int(rng.integers(1, k_raw))
            else:
                raw[column] = y
            if sig.mode == "none":
                continue
            k = sub.num_classes
            if sig.mode == "both":
                t_comp = int(rng.integers(0, k))
                v_comp = (y - t_comp) % k
            else:
                t_comp = v_comp = y
            if sig.mode in ("text", "both"):
                pos = int(rng.integers(0, len(tokens) + 1))
                tokens.insert(pos, signal_token(task, t_comp))
            if sig.mode in ("image", "both"):
                r, c = quadrants[image_tasks.index(task)]
                image[r:r + half, c:c + half] = _PALETTE[v_comp]
        labels = LabelValues(**raw)
        labels.validate()
        samples.append(MemeSample(id=f"syn{i:05d}", text=" ".join(tokens),
                                  image_ref=image, labels=labels))
    return samples


def relabel(sample: MemeSample, **columns: int) -> MemeSample:
    """Copy of `sample` with some raw label columns replaced (test/synthesis helper)."""
    labels = replace(sample.labels, **columns)
    labels.validate()
    return MemeSample(id=sample.id, text=sample.text, image_ref=sample.image_ref,
                      labels=labels)
