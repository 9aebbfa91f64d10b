"""Benchmark folds, episode sampling and the synthetic desk-scale dataset."""

from __future__ import annotations

import zlib
from collections import defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import io as fio
from .coattention import ConfigurationError

# scheme -> (class count, fold count)
SCHEMES = {"pascal": (20, 4), "vos": (65, 5)}


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class FoldSpec:
    fold_id: int
    test_classes: tuple[str, ...]
    train_classes: tuple[str, ...]

    def classes(self, split: str) -> tuple[str, ...]:
        if split == "test":
            return self.test_classes
        if split == "train":
            return self.train_classes
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")

    def to_dict(self) -> dict:
        return {
            "fold_id": self.fold_id,
            "test_classes": list(self.test_classes),
            "train_classes": list(self.train_classes),
        }


@dataclass(frozen=True)
class Episode:
    support: tuple[tuple[str, str], ...]  # (image or feature path, class label)
    query: str
    gt_mask: str
    class_label: str
    fold_id: int
    sequence: str | None = None
    frames: tuple[int, int] | None = None  # (support frame, query frame), 1-based

    def to_dict(self) -> dict:
        return {
            "support": [list(s) for s in self.support],
            "query": self.query,
            "gt_mask": self.gt_mask,
            "class_label": self.class_label,
            "fold_id": self.fold_id,
            "sequence": self.sequence,
            "frames": list(self.frames) if self.frames else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Episode":
        return cls(
            support=tuple((p, l) for p, l in d["support"]),
            query=d["query"],
            gt_mask=d["gt_mask"],
            class_label=d["class_label"],
            fold_id=int(d.get("fold_id", 0)),
            sequence=d.get("sequence"),
            frames=tuple(d["frames"]) if d.get("frames") else None,
        )


def default_class_order(scheme: str) -> list[str]:
    """Checked-in class ordering shipped with the package."""
    name = {"pascal": "pascal_classes.txt", "vos": "vos_classes.txt"}[scheme]
    text = resources.files("coattseg.data").joinpath(name).read_text(encoding="utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]


def make_folds(classes: Sequence[str], scheme: str, n_folds: int | None = None) -> list[FoldSpec]:
    """Contiguous partition: fold ``i`` tests classes ``[i*k, (i+1)*k)``.

    ``scheme='custom'`` takes any class count divisible by ``n_folds``.
    """
    classes = list(classes)
    if len(set(classes)) != len(classes):
        raise ConfigurationError("class list contains duplicates")
    if scheme in SCHEMES:
        expected, folds = SCHEMES[scheme]
        if len(classes) != expected:
            raise ConfigurationError(
                f"scheme {scheme!r} expects exactly {expected} classes, got {len(classes)}"
            )
    elif scheme == "custom":
        if not n_folds or n_folds < 2 or len(classes) % n_folds:
            raise ConfigurationError(
                f"custom scheme needs a fold count >= 2 dividing {len(classes)}, got {n_folds}"
            )
        folds = n_folds
    else:
        raise ConfigurationError(f"unknown fold scheme {scheme!r}")
    k = len(classes) // folds
    out = []
    for i in range(folds):
        test = tuple(classes[i * k : (i + 1) * k])
        train = tuple(c for c in classes if c not in test)
        out.append(FoldSpec(i, test, train))
    return out


def folds_document(classes: Sequence[str], scheme: str, folds: list[FoldSpec]) -> dict:
    return {"scheme": scheme, "class_order": list(classes), "folds": [f.to_dict() for f in folds]}


# -- dataset index ------------------------------------------------------------


@dataclass
class DatasetIndex:
    """Manifest records grouped for sampling.

    Static items are grouped by class. Video records (with ``sequence``) are
    grouped into ordered frames; frame numbers are renumbered 1..N by order.
    """

    records: list[dict]
    static: dict[str, list[dict]] = field(init=False)
    sequences: dict[str, list[dict[str, dict]]] = field(init=False)
    sequences_by_class: dict[str, list[str]] = field(init=False)

    def __post_init__(self):
        self.static = defaultdict(list)
        frames: dict[str, dict[int, dict[str, dict]]] = defaultdict(lambda: defaultdict(dict))
        for rec in self.records:
            if rec.get("sequence") is None:
                self.static[rec["class"]].append(rec)
            else:
                frames[str(rec["sequence"])][int(rec.get("frame", 0))][rec["class"]] = rec
        self.sequences = {
            seq: [by_frame[f] for f in sorted(by_frame)] for seq, by_frame in sorted(frames.items())
        }
        self.sequences_by_class = defaultdict(list)
        for seq, ordered in self.sequences.items():
            if len(ordered) < 2:
                continue
            for label in ordered[0]:
                self.sequences_by_class[label].append(seq)

    @classmethod
    def load(cls, manifest_path) -> "DatasetIndex":
        return cls(fio.load_manifest(manifest_path))

    @property
    def is_video(self) -> bool:
        return bool(self.sequences)

    def classes(self) -> list[str]:
        return sorted(set(self.static) | set(self.sequences_by_class))


def _usable(index: DatasetIndex, label: str, shots: int) -> bool:
    if index.is_video:
        return any(
            any(label in frame for frame in index.sequences[seq][1:])
            for seq in index.sequences_by_class.get(label, ())
        )
    return len(index.static.get(label, ())) >= shots + 1


def sample_episode(
    fold: FoldSpec, split: str, index: DatasetIndex, seed: int, shots: int = 1
) -> Episode:
    """Draw one 1-way episode of ``split`` classes; deterministic in ``seed``.

    Static data: ``shots`` supports and a query, all distinct items of the
    class. Video data: support is frame 1 of a sequence holding the class,
    query a uniformly drawn later frame where the class is present.
    """
    classes = fold.classes(split)
    if not classes:
        raise SamplingError(f"fold {fold.fold_id} has no {split} classes")
    for label in classes:
        if not _usable(index, label, shots):
            raise SamplingError(f"class {label!r} has fewer than {shots + 1} usable items")
    rng = np.random.default_rng(seed)
    label = classes[rng.integers(len(classes))]
    if index.is_video:
        if shots != 1:
            raise SamplingError("video episodes support exactly one shot (the first frame)")
        candidates = [
            seq for seq in index.sequences_by_class[label]
            if any(label in frame for frame in index.sequences[seq][1:])
        ]
        seq = candidates[rng.integers(len(candidates))]
        ordered = index.sequences[seq]
        later = [i for i in range(1, len(ordered)) if label in ordered[i]]
        qi = later[rng.integers(len(later))]
        first, query = ordered[0][label], ordered[qi][label]
        return Episode(
            support=((first["image_or_feature_path"], label),),
            query=query["image_or_feature_path"],
            gt_mask=query["mask_path"],
            class_label=label,
            fold_id=fold.fold_id,
            sequence=seq,
            frames=(1, qi + 1),
        )
    items = index.static[label]
    picks = rng.choice(len(items), size=shots + 1, replace=False)
    supports = tuple((items[i]["image_or_feature_path"], label) for i in picks[:shots])
    query = items[picks[shots]]
    return Episode(supports, query["image_or_feature_path"], query["mask_path"], label, fold.fold_id)


def substream(seed: int, name: str) -> int:
    """Derive a named, stable child seed from a run seed."""
    seq = np.random.SeedSequence([seed, zlib.crc32(name.encode("utf-8"))])
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def episode_stream(
    fold: FoldSpec, split: str, index: DatasetIndex, seed: int, shots: int = 1
) -> Iterator[Episode]:
    """Endless episode sequence; the n-th episode depends only on ``seed`` and n."""
    rng = np.random.default_rng(seed)
    while True:
        yield sample_episode(fold, split, index, int(rng.integers(2**63 - 1)), shots)


# -- synthetic data -------------------------------------------------------------


@dataclass
class SyntheticSpec:
    n_classes: int = 8
    items_per_class: int = 20
    size: int = 16
    two_object: bool = False
    seed: int = 0
    image_channels: int = 3
    embedding_dim: int = 300
    frames: int | None = None
    radius: tuple[float, float] | None = None  # pixels; default scales with size
    noise: float = 0.05
    jitter: float = 0.25
    background: float = 0.0


def class_names(n: int) -> list[str]:
    return [f"class{k:02d}" for k in range(n)]


def _signatures(n: int, dim: int, rng: np.random.Generator, max_cos: float = 0.6) -> np.ndarray:
    best, best_cos = None, np.inf
    for _ in range(2000):
        s = rng.normal(size=(n, dim))
        s /= np.linalg.norm(s, axis=1, keepdims=True)
        cos = (s @ s.T - np.eye(n)).max()
        if cos < best_cos:
            best, best_cos = s, cos
        if cos <= max_cos:
            break
    return best


def _disk(size: int, center: np.ndarray, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    return (yy - center[0]) ** 2 + (xx - center[1]) ** 2 <= radius**2


def _place(size: int, radii: Sequence[float], rng: np.random.Generator) -> list[np.ndarray]:
    for _ in range(1000):
        centers = [rng.uniform(r, size - r, size=2) for r in radii]
        if all(
            np.linalg.norm(centers[a] - centers[b]) > radii[a] + radii[b] + 1.0
            for a in range(len(radii))
            for b in range(a)
        ):
            return centers
    raise SamplingError("could not place non-overlapping blobs; shrink radius or grow image")


def generate_synthetic_dataset(out_dir, spec: SyntheticSpec | None = None, **overrides) -> DatasetIndex:
    """Write a blob-world dataset to ``out_dir`` and return its index.

    Class ``k`` paints its blobs with a colour signature ``s_k``; its word
    vector is a fixed random linear image of ``s_k`` plus noise, so the
    embedding carries the appearance of the class. Backgrounds are flat at
    ``spec.background``. With ``two_object`` every image also holds a blob of the partner
    class ``k ^ 1`` (same fold under contiguous splits); only the labelled
    class is foreground in the mask.
    """
    spec = spec or SyntheticSpec()
    if overrides:
        spec = SyntheticSpec(**{**spec.__dict__, **overrides})
    if spec.n_classes < 2:
        raise ConfigurationError("synthetic data needs at least 2 classes")
    if spec.two_object and spec.n_classes % 2:
        raise ConfigurationError("two-object mode pairs classes and needs an even class count")
    out = Path(out_dir)
    rng = np.random.default_rng(spec.seed)
    radius = spec.radius or tuple(f * spec.size for f in ((0.15, 0.2) if spec.two_object else (0.22, 0.31)))
    names = class_names(spec.n_classes)
    sigs = _signatures(spec.n_classes, spec.image_channels, rng)
    mixing = rng.normal(0.0, 0.15, size=(spec.embedding_dim, spec.image_channels))
    table = {
        name: mixing @ sigs[k] + rng.normal(0.0, 0.02, size=spec.embedding_dim)
        for k, name in enumerate(names)
    }
    background = np.full(spec.image_channels, spec.background)

    def paint(blobs: list[tuple[np.ndarray, int]]) -> np.ndarray:
        img = np.broadcast_to(background[:, None, None], (spec.image_channels, spec.size, spec.size)).copy()
        for mask, k in blobs:
            colour = sigs[k] + rng.normal(0.0, spec.jitter, size=spec.image_channels)
            img[:, mask] = colour[:, None]
        return img + rng.normal(0.0, spec.noise, size=img.shape)

    records = []
    for k, name in enumerate(names):
        partner = k ^ 1
        for item in range(spec.items_per_class):
            n_frames = spec.frames or 1
            radii = list(rng.uniform(*radius, size=2 if spec.two_object else 1))
            start = _place(spec.size, radii, rng)
            drift = [rng.uniform(-0.5, 0.5, size=2) for _ in radii]
            for f in range(n_frames):
                centers = [np.clip(c + f * d, r, spec.size - r) for c, d, r in zip(start, drift, radii)]
                masks = [_disk(spec.size, c, r) for c, r in zip(centers, radii)]
                if spec.two_object:
                    masks[1] &= ~masks[0]
                classes = [k, partner][: len(masks)]
                stem = f"{name}_{item:03d}" + (f"_f{f + 1:03d}" if spec.frames else "")
                img_rel = f"images/{stem}.ften"
                fio.write_ften(out / img_rel, paint(list(zip(masks, classes))))
                labelled = [(0, name)]
                if spec.frames and spec.two_object:
                    labelled.append((1, names[partner]))
                for slot, label in labelled:
                    mask_rel = f"masks/{stem}_{label}.pgm"
                    fio.save_mask(out / mask_rel, masks[slot])
                    rec = {"class": label, "image_or_feature_path": img_rel, "mask_path": mask_rel}
                    if spec.two_object and not spec.frames:
                        rec["distractor"] = names[partner]
                    if spec.frames:
                        rec["sequence"] = f"{name}_{item:03d}"
                        rec["frame"] = f + 1
                    records.append(rec)
    fio.write_manifest(out / "manifest.jsonl", records)
    fio.save_embedding_table(out / "embeddings.txt", table)
    with fio.atomic_output(out / "classes.txt", "w") as fh:
        fh.write("\n".join(names) + "\n")
    meta = {k: v for k, v in spec.__dict__.items()}
    meta["radius"] = list(radius)
    fio.write_json(out / "synthetic.json", meta)
    return DatasetIndex.load(out / "manifest.jsonl")
