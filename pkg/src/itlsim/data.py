"""Virtual-center datasets: synthetic generation, heterogeneity, file I/O.

A task is one fixed classification problem shared by every center. Each
center owns disjoint train/val/test splits drawn from the same
class-conditional Gaussian clusters (IID) unless noise is applied to
selected centers (non-IID).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Union

import numpy as np

from .errors import ConfigurationError, DataError

DEFAULT_FRACTIONS = (0.64, 0.16, 0.20)
# per-class (train, val, test) counts per center
DEFAULT_CLASS_COUNTS = (80, 20, 10)


@dataclass(frozen=True)
class Clean:
    pass


@dataclass(frozen=True)
class GaussianNoise:
    sigma: float  # on the 8-bit [0, 255] scale


Heterogeneity = Union[Clean, GaussianNoise]


@dataclass(frozen=True)
class Split:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"{self.inputs.shape[0]} instances vs {self.labels.shape[0]} labels"
            )

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class CenterDataset:
    center: int  # 1-based position in the training sequence
    source_center: int  # provenance: where the data originally came from
    train: Split
    val: Split
    test: Split
    heterogeneity: Heterogeneity
    fractions: tuple[float, float, float]
    value_range: tuple[float, float]
    num_classes: int

    def splits(self) -> dict[str, Split]:
        return {"train": self.train, "val": self.val, "test": self.test}


def _draw_splits(rng, means, cluster_std, class_counts):
    num_classes, dim = means.shape
    out = []
    for count in class_counts:
        xs, ys = [], []
        for c in range(num_classes):
            xs.append(rng.normal(means[c], cluster_std, size=(count, dim)))
            ys.append(np.full(count, c, dtype=np.int64))
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        order = rng.permutation(len(y))
        out.append(Split(x[order], y[order]))
    return out


def _partition_counts(total: int, fractions, num_classes: int) -> tuple[int, int, int]:
    train = int(total * fractions[0])
    val = int(total * fractions[1])
    test = total - train - val
    if min(train, val, test) < num_classes:
        raise ConfigurationError(
            f"center total {total} infeasible: every split needs >= {num_classes} samples"
        )
    return train, val, test


def make_synthetic_task(
    num_classes: int = 10,
    dim: int = 32,
    per_center_counts: int | tuple[int, int, int] = DEFAULT_CLASS_COUNTS,
    n_centers: int = 5,
    seed: int = 0,
    cluster_std: float = 0.07,
    mean_range: tuple[float, float] = (0.35, 0.65),
) -> list[CenterDataset]:
    """Class-conditional Gaussian clusters partitioned IID across centers.

    per_center_counts is either a (train, val, test) triple of PER-CLASS
    counts, giving every center identical class histograms, or a single
    total per center that is split 64/16/20 with classes drawn uniformly.
    Feature values live in [0, 1] nominally (clusters stay inside for the
    default geometry).
    """
    if n_centers < 1:
        raise ConfigurationError("need at least one center")
    if num_classes < 2:
        raise ConfigurationError("need at least two classes")
    root = np.random.SeedSequence([seed, 0xDA7A])
    mean_rng = np.random.default_rng(root.spawn(1)[0])
    means = mean_rng.uniform(mean_range[0], mean_range[1], size=(num_classes, dim))
    datasets = []
    for center in range(1, n_centers + 1):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A, center]))
        if isinstance(per_center_counts, int):
            if per_center_counts < num_classes:
                raise ConfigurationError("per-center total below the class count")
            n_train, n_val, n_test = _partition_counts(
                per_center_counts, DEFAULT_FRACTIONS, num_classes)
            splits = []
            for n in (n_train, n_val, n_test):
                y = rng.integers(0, num_classes, size=n)
                x = rng.normal(means[y], cluster_std)
                splits.append(Split(x, y.astype(np.int64)))
            fractions = DEFAULT_FRACTIONS
        else:
            counts = tuple(int(c) for c in per_center_counts)
            if len(counts) != 3 or min(counts) < 1:
                raise ConfigurationError(
                    "per_center_counts must be a positive (train, val, test) triple")
            splits = _draw_splits(rng, means, cluster_std, counts)
            total = sum(counts)
            fractions = tuple(c / total for c in counts)
        datasets.append(CenterDataset(
            center=center, source_center=center,
            train=splits[0], val=splits[1], test=splits[2],
            heterogeneity=Clean(), fractions=fractions,
            value_range=(0.0, 1.0), num_classes=num_classes,
        ))
    return datasets


def apply_noise(dataset: CenterDataset, sigma: float, seed: int = 0) -> CenterDataset:
    """Add zero-mean Gaussian noise scaled to the dataset's value range.

    sigma is declared on the 8-bit [0, 255] scale: sigma=25 on a unit-range
    dataset perturbs by std 25/255. Values are not clipped; labels untouched.
    """
    if sigma < 0:
        raise ConfigurationError("sigma must be >= 0")
    if sigma == 0:
        return dataset
    lo, hi = dataset.value_range
    scale = sigma / 255.0 * (hi - lo)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x401E, dataset.source_center]))
    noised = {}
    for name, split in dataset.splits().items():
        noise = rng.normal(0.0, scale, size=split.inputs.shape)
        noised[name] = Split(split.inputs + noise, split.labels)
    return replace(dataset, heterogeneity=GaussianNoise(sigma), **noised)


def reorder_centers(datasets: list[CenterDataset], permutation: list[int]) -> list[CenterDataset]:
    """Rearrange the training sequence; permutation holds 1-based center ids.

    Sequence positions are re-numbered 1..N; source_center keeps naming the
    original data.
    """
    n = len(datasets)
    if sorted(permutation) != list(range(1, n + 1)):
        raise ConfigurationError(f"invalid permutation of 1..{n}: {permutation}")
    by_position = {ds.center: ds for ds in datasets}
    out = []
    for position, original in enumerate(permutation, start=1):
        out.append(replace(by_position[original], center=position))
    return out


def balanced_batches(
    split: Split, batch_size: int, rng: np.random.Generator, num_batches: int
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Batches sampled with replacement, class probability equalized.

    Every class must be present; each sample's draw probability is
    proportional to 1/count(its class), so expected class frequency per
    batch is uniform.
    """
    labels = split.labels
    present, counts = np.unique(labels, return_counts=True)
    weights = np.zeros(split.size)
    for cls, count in zip(present, counts):
        weights[labels == cls] = 1.0 / count
    weights /= weights.sum()
    for _ in range(num_batches):
        idx = rng.choice(split.size, size=batch_size, replace=True, p=weights)
        yield split.inputs[idx], split.labels[idx]


def check_classes_present(split: Split, num_classes: int, what: str) -> None:
    present = np.unique(split.labels)
    missing = sorted(set(range(num_classes)) - set(present.tolist()))
    if missing:
        raise DataError(f"{what} is missing classes {missing}")


def pool_train(datasets: list[CenterDataset]) -> Split:
    """All centers' training data mixed together (joint-training input)."""
    return Split(
        np.concatenate([ds.train.inputs for ds in datasets]),
        np.concatenate([ds.train.labels for ds in datasets]),
    )


# ---------------------------------------------------------------------------
# external formats
# ---------------------------------------------------------------------------

def _het_to_json(h: Heterogeneity) -> dict:
    if isinstance(h, GaussianNoise):
        return {"kind": "gaussian-noise", "sigma": h.sigma}
    return {"kind": "clean"}


def _het_from_json(obj: dict) -> Heterogeneity:
    if obj.get("kind") == "gaussian-noise":
        return GaussianNoise(float(obj["sigma"]))
    if obj.get("kind") == "clean":
        return Clean()
    raise DataError(f"unknown heterogeneity {obj!r}")


def _write_csv_split(path: Path, split: Split) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        dim = split.inputs.shape[1]
        writer.writerow(["label"] + [f"f{i}" for i in range(dim)])
        for label, row in zip(split.labels, split.inputs):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def _read_csv_split(path: Path, num_classes: int) -> Split:
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if not header or header[0] != "label":
            raise DataError(f"{path}: header must start with 'label'")
        dim = len(header) - 1
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise DataError(
                    f"{path}:{lineno}: expected {dim + 1} fields, got {len(row)}")
            try:
                label = int(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if not 0 <= label < num_classes:
                raise DataError(
                    f"{path}:{lineno}: label {label} outside [0, {num_classes})")
            labels.append(label)
            rows.append(values)
    return Split(np.array(rows, dtype=np.float64).reshape(len(rows), dim),
                 np.array(labels, dtype=np.int64))


def _write_raw_split(directory: Path, stem: str, split: Split) -> dict:
    fpath = directory / f"{stem}.f64"
    lpath = directory / f"{stem}.labels.i64"
    split.inputs.astype("<f8").tofile(fpath)
    split.labels.astype("<i8").tofile(lpath)
    return {"features": fpath.name, "labels": lpath.name,
            "shape": list(split.inputs.shape)}


def _read_raw_split(directory: Path, entry: dict, num_classes: int) -> Split:
    shape = tuple(int(s) for s in entry["shape"])
    features = np.fromfile(directory / entry["features"], dtype="<f8")
    if features.size != int(np.prod(shape)):
        raise DataError(
            f"{entry['features']}: {features.size} values do not fill shape {shape}")
    labels = np.fromfile(directory / entry["labels"], dtype="<i8")
    if labels.size != shape[0]:
        raise DataError(f"{entry['labels']}: {labels.size} labels for {shape[0]} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(f"{entry['labels']}: label outside [0, {num_classes})")
    return Split(features.reshape(shape), labels)


def export_datasets(datasets: list[CenterDataset], directory: str | Path,
                    file_format: str = "csv-labels") -> Path:
    """Write a center manifest plus one file set per center split."""
    if file_format not in ("csv-labels", "raw-tensor-dir"):
        raise ConfigurationError(f"unknown format {file_format!r}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    centers = []
    for ds in datasets:
        files = {}
        for split_name, split in ds.splits().items():
            stem = f"center{ds.center:02d}_{split_name}"
            if file_format == "csv-labels":
                _write_csv_split(directory / f"{stem}.csv", split)
                files[split_name] = f"{stem}.csv"
            else:
                files[split_name] = _write_raw_split(directory, stem, split)
        centers.append({
            "name": f"center-{ds.center}",
            "center": ds.center,
            "source_center": ds.source_center,
            "heterogeneity": _het_to_json(ds.heterogeneity),
            "fractions": list(ds.fractions),
            "files": files,
        })
    manifest = {
        "format": file_format,
        "num_classes": datasets[0].num_classes,
        "value_range": list(datasets[0].value_range),
        "centers": centers,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_external(manifest_path: str | Path) -> list[CenterDataset]:
    """Load center datasets as described by a manifest file."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: invalid JSON ({exc})") from None
    file_format = manifest.get("format")
    if file_format not in ("csv-labels", "raw-tensor-dir"):
        raise DataError(f"{manifest_path}: unknown format {file_format!r}")
    num_classes = int(manifest["num_classes"])
    value_range = tuple(float(v) for v in manifest["value_range"])
    directory = manifest_path.parent
    datasets = []
    dim = None
    for entry in manifest["centers"]:
        splits = {}
        for split_name in ("train", "val", "test"):
            ref = entry["files"][split_name]
            if file_format == "csv-labels":
                split = _read_csv_split(directory / ref, num_classes)
            else:
                split = _read_raw_split(directory, ref, num_classes)
            if dim is None:
                dim = split.inputs.shape[1:]
            elif split.inputs.shape[1:] != dim:
                raise DataError(
                    f"{entry['name']} {split_name}: shape {split.inputs.shape[1:]} "
                    f"disagrees with {dim}")
            splits[split_name] = split
        datasets.append(CenterDataset(
            center=int(entry["center"]),
            source_center=int(entry.get("source_center", entry["center"])),
            train=splits["train"], val=splits["val"], test=splits["test"],
            heterogeneity=_het_from_json(entry["heterogeneity"]),
            fractions=tuple(float(f) for f in entry["fractions"]),
            value_range=value_range, num_classes=num_classes,
        ))
    return datasets
