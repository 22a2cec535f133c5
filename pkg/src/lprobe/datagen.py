"""Seeded synthetic multi-domain classification suites.

One anchor domain is split into train/val/test; every shifted domain is a
rotated (and optionally translated) copy of the anchor distribution used for
evaluation only.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import defaults as D

PROTOTYPE_RADIUS = 3.0


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray  # int64 labels

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.int64))
        if self.x.ndim != 2 or self.y.shape != (len(self.x),):
            raise ValueError(f"inconsistent dataset shapes {self.x.shape}, {self.y.shape}")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def num_classes(self) -> int:
        return int(self.y.max()) + 1

    def batch(self, size: int, seed: int) -> "Dataset":
        """Seeded subsample without replacement (whole set if smaller)."""
        size = min(size, len(self))
        idx = np.sort(np.random.default_rng(seed).choice(len(self), size=size, replace=False))
        return Dataset(self.x[idx], self.y[idx])


@dataclass(frozen=True)
class DomainSpec:
    name: str
    shift_angle: float = 0.0
    shift_bias: tuple[float, ...] | float = 0.0
    noise_sigma: float = D.NOISE_SIGMA

    def __post_init__(self):
        if not self.shift_angle >= 0:
            raise ValueError(f"domain {self.name!r}: shift angle must be >= 0, got {self.shift_angle}")
        if not self.noise_sigma > 0:
            raise ValueError(f"domain {self.name!r}: noise_sigma must be > 0")
        if not isinstance(self.shift_bias, (int, float)):
            object.__setattr__(self, "shift_bias", tuple(float(b) for b in self.shift_bias))

    def bias_vector(self, d: int) -> np.ndarray:
        if isinstance(self.shift_bias, (int, float)):
            return np.full(d, float(self.shift_bias))
        b = np.asarray(self.shift_bias, dtype=np.float64)
        if b.shape != (d,):
            raise ValueError(f"domain {self.name!r}: bias has length {len(b)}, expected {d}")
        return b

    def to_dict(self) -> dict:
        bias = self.shift_bias if isinstance(self.shift_bias, (int, float)) else list(self.shift_bias)
        return {"name": self.name, "shift_angle": self.shift_angle, "shift_bias": bias, "noise_sigma": self.noise_sigma}


@dataclass(frozen=True)
class DomainSuite:
    num_classes: int
    input_dim: int
    prototypes: np.ndarray
    train: Dataset
    val: Dataset
    test: Dataset
    shifted: tuple[tuple[DomainSpec, Dataset], ...]
    manifest: dict = field(compare=False)

    @property
    def domain_names(self) -> list[str]:
        return [spec.name for spec, _ in self.shifted]


def rotation_matrix(d: int, theta: float, seed) -> np.ndarray:
    """Orthogonal map rotating disjoint coordinate pairs by ``theta``.

    Coordinates are paired by a seeded permutation and each pair gets a seeded
    rotation direction, so every vector in the span of the pairs is turned by
    exactly ``theta`` (x . Rx = |x|^2 cos(theta)). With odd ``d`` one
    coordinate is left fixed.
    """
    rng = np.random.default_rng(seed)
    perm = rng.permutation(d)
    signs = rng.choice([-1.0, 1.0], size=d // 2)
    r = np.eye(d)
    c, s = np.cos(theta), np.sin(theta)
    for k in range(d // 2):
        i, j = perm[2 * k], perm[2 * k + 1]
        sk = signs[k] * s
        r[i, i], r[i, j], r[j, i], r[j, j] = c, -sk, sk, c
    return r


def sample_domain(prototypes, spec: DomainSpec, n: int, seed, rotation=None) -> Dataset:
    """Draw ``n`` class-balanced samples from one domain."""
    k, d = prototypes.shape
    rng = np.random.default_rng(seed)
    y = rng.permutation(np.arange(n) % k)
    x = prototypes[y] + spec.noise_sigma * rng.standard_normal((n, d))
    if rotation is not None and spec.shift_angle != 0:
        x = x @ rotation.T
    bias = spec.bias_vector(d)
    if np.any(bias != 0):
        x = x + bias
    return Dataset(x, y.astype(np.int64))


def make_prototypes(k: int, d: int, seed) -> np.ndarray:
    g = np.random.default_rng(seed).standard_normal((k, d))
    return PROTOTYPE_RADIUS * g / np.linalg.norm(g, axis=1, keepdims=True)


def make_domain_suite(
    num_classes: int,
    input_dim: int,
    prototypes_seed: int,
    per_split_counts,
    domain_specs,
    gen_seed: int,
    anchor_noise_sigma: float = D.NOISE_SIGMA,
) -> DomainSuite:
    """Build a suite; ``per_split_counts`` is (train, val, test).

    Shifted domains get ``test``-sized eval sets. Every random stream is
    derived from ``gen_seed`` by position, so the same arguments always
    reproduce the same arrays.
    """
    if num_classes < 2 or input_dim < 2:
        raise ValueError("need at least 2 classes and 2 input dimensions")
    counts = tuple(int(c) for c in per_split_counts)
    if len(counts) != 3 or min(counts) <= 0:
        raise ValueError(f"per_split_counts must be three positive ints, got {per_split_counts}")
    specs = tuple(domain_specs)
    if not specs:
        raise ValueError("at least one shifted domain is required")
    names = [s.name for s in specs]
    if len(set(names)) != len(names) or "anchor" in names:
        raise ValueError(f"duplicate or reserved domain names in {names}")

    prototypes = make_prototypes(num_classes, input_dim, prototypes_seed)
    anchor = DomainSpec("anchor", 0.0, 0.0, anchor_noise_sigma)
    streams = np.random.SeedSequence(gen_seed).spawn(3 + 2 * len(specs))
    train, val, test = (sample_domain(prototypes, anchor, n, s) for n, s in zip(counts, streams[:3]))
    shifted = []
    for m, spec in enumerate(specs):
        rot = rotation_matrix(input_dim, spec.shift_angle, streams[3 + 2 * m])
        shifted.append((spec, sample_domain(prototypes, spec, counts[2], streams[4 + 2 * m], rot)))
    manifest = {
        "num_classes": num_classes,
        "input_dim": input_dim,
        "prototypes_seed": prototypes_seed,
        "per_split_counts": list(counts),
        "anchor_noise_sigma": anchor_noise_sigma,
        "gen_seed": gen_seed,
        "domains": [s.to_dict() for s in specs],
    }
    return DomainSuite(num_classes, input_dim, prototypes, train, val, test, tuple(shifted), manifest)


def default_domain_specs(n: int = D.NUM_SHIFTED_DOMAINS, max_angle: float = D.MAX_SHIFT_ANGLE, noise_sigma: float = D.NOISE_SIGMA) -> list[DomainSpec]:
    return [DomainSpec(f"shift{m + 1:02d}", max_angle * (m + 1) / n, 0.0, noise_sigma) for m in range(n)]


def default_suite(gen_seed: int = 0) -> DomainSuite:
    """1 anchor + 14 shifted domains, 3 classes, 16 features, 2000/500/500."""
    return make_domain_suite(D.NUM_CLASSES, D.INPUT_DIM, gen_seed, D.SPLIT_COUNTS, default_domain_specs(), gen_seed)


def suite_from_manifest(manifest: dict) -> DomainSuite:
    specs = [DomainSpec(**d) for d in manifest["domains"]]
    return make_domain_suite(
        manifest["num_classes"],
        manifest["input_dim"],
        manifest["prototypes_seed"],
        manifest["per_split_counts"],
        specs,
        manifest["gen_seed"],
        manifest.get("anchor_noise_sigma", D.NOISE_SIGMA),
    )


# CSV ---------------------------------------------------------------------------

class DataFormatError(ValueError):
    pass


def write_csv(dataset: Dataset, path, header: bool = False) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        if header:
            w.writerow([f"x{i}" for i in range(dataset.x.shape[1])] + ["label"])
        for row, label in zip(dataset.x, dataset.y):
            w.writerow([f"{v:.17g}" for v in row] + [int(label)])


def load_csv(path, has_header: bool = False) -> Dataset:
    rows, labels = [], []
    width = None
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if has_header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise DataFormatError(f"{path}:{lineno}: need at least one feature and a label")
            elif len(row) != width:
                raise DataFormatError(f"{path}:{lineno}: expected {width} cells, found {len(row)}")
            try:
                feats = [float(c) for c in row[:-1]]
                label = int(row[-1])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric cell") from None
            if not all(np.isfinite(feats)):
                raise DataFormatError(f"{path}:{lineno}: non-finite feature")
            if label < 0:
                raise DataFormatError(f"{path}:{lineno}: negative label {label}")
            rows.append(feats)
            labels.append(label)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return Dataset(np.array(rows, dtype=np.float64), np.array(labels, dtype=np.int64))


def save_suite(suite: DomainSuite, directory) -> list[Path]:
    """Write manifest.json plus one CSV per split / shifted domain."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = [directory / "manifest.json"]
    written[0].write_text(json.dumps(suite.manifest, indent=2, sort_keys=True) + "\n")
    for split in ("train", "val", "test"):
        p = directory / f"anchor_{split}.csv"
        write_csv(getattr(suite, split), p)
        written.append(p)
    for spec, data in suite.shifted:
        p = directory / f"{spec.name}_eval.csv"
        write_csv(data, p)
        written.append(p)
    return written


def load_suite(directory) -> DomainSuite:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    k, d = manifest["num_classes"], manifest["input_dim"]
    splits = {s: load_csv(directory / f"anchor_{s}.csv") for s in ("train", "val", "test")}
    shifted = []
    for entry in manifest["domains"]:
        spec = DomainSpec(**entry)
        shifted.append((spec, load_csv(directory / f"{spec.name}_eval.csv")))
    for data in [*splits.values(), *(ds for _, ds in shifted)]:
        if data.x.shape[1] != d or data.num_classes > k:
            raise DataFormatError(f"{directory}: data does not match manifest (d={d}, K={k})")
    prototypes = make_prototypes(k, d, manifest["prototypes_seed"])
    return DomainSuite(k, d, prototypes, splits["train"], splits["val"], splits["test"], tuple(shifted), manifest)
