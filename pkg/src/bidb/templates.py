"""Media items, frame sampling and template construction.

A media item is either a still image (one feature) or a video (features in
temporal order). Test-time videos are reduced to every sixth frame, embedded,
and averaged into one template; gallery identities average their media
templates.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .binfmt import Reader, Writer
from .domain import mean_vector
from .errors import DegenerateTemplateError, DimensionError, EmptyAggregateError, IngestionError

TEST_STRIDE = 6
TRAIN_FRAMES = 5

MANIFEST_HEADER = ["media_id", "identity_id", "kind", "condition", "feature_file"]
BIDF_MAGIC = b"BIDF"
BIDF_VERSION = 1


@dataclass
class MediaItem:
    media_id: str
    identity_id: str
    kind: str  # "image" | "video"
    features: np.ndarray  # (frames, dim), temporal order
    condition: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features[None, :]
        if self.kind not in ("image", "video"):
            raise IngestionError(f"{self.media_id}: unknown media kind {self.kind!r}")
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise EmptyAggregateError(f"{self.media_id}: media has no frames")
        if self.kind == "image" and self.features.shape[0] != 1:
            raise IngestionError(f"{self.media_id}: an image holds exactly one feature")

    @property
    def frame_count(self) -> int:
        return self.features.shape[0]


@dataclass
class Template:
    owner_id: str
    vector: np.ndarray
    source_count: int


Gallery = dict  # identity_id -> Template, keys in sorted order


def sample_test_frames(frame_count: int, stride: int = TEST_STRIDE) -> list[int]:
    """Indices ``0, 6, 12, ...`` below ``frame_count``."""
    if frame_count < 1:
        raise EmptyAggregateError("media has no frames")
    return list(range(0, frame_count, stride))


def sample_train_frames(frame_count: int, k: int = TRAIN_FRAMES, seed=0) -> list[int]:
    """One uniformly drawn index from each of ``k`` contiguous near-equal partitions.

    With fewer than ``k`` frames every frame is returned.
    """
    if frame_count < 1:
        raise EmptyAggregateError("media has no frames")
    if k < 1:
        raise ValueError("k must be >= 1")
    if frame_count <= k:
        return list(range(frame_count))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    parts = np.array_split(np.arange(frame_count), k)
    return [int(rng.integers(p[0], p[-1] + 1)) for p in parts]


def embed_media(m: MediaItem, head, sampler: Callable[[int], Sequence[int]] = sample_test_frames
                ) -> Template:
    idx = list(sampler(m.frame_count))
    emb = head.embed(m.features[idx])
    vec = mean_vector(emb)
    if not np.any(vec):
        raise DegenerateTemplateError(f"template for {m.media_id} is the zero vector")
    return Template(m.media_id, vec, len(idx))


def _check_unique(media: Iterable[MediaItem]) -> list[MediaItem]:
    media = list(media)
    seen = set()
    for m in media:
        if m.media_id in seen:
            raise IngestionError(f"duplicate media_id {m.media_id!r}")
        seen.add(m.media_id)
    return sorted(media, key=lambda m: m.media_id)


def embed_all(media: Iterable[MediaItem], head, sampler=sample_test_frames) -> list[Template]:
    """Per-media templates, sorted by media id."""
    return [embed_media(m, head, sampler) for m in _check_unique(media)]


def build_gallery(media: Iterable[MediaItem], head, sampler=sample_test_frames) -> Gallery:
    """One template per identity: the flat mean of its media templates."""
    groups: dict[str, list[Template]] = defaultdict(list)
    for m in _check_unique(media):
        groups[m.identity_id].append(embed_media(m, head, sampler))
    if not groups:
        raise EmptyAggregateError("gallery has no media")
    return {ident: Template(ident, mean_vector([t.vector for t in groups[ident]]),
                            len(groups[ident]))
            for ident in sorted(groups)}


# -- files -------------------------------------------------------------------

def features_to_bytes(frames: np.ndarray) -> bytes:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise DimensionError("feature container holds a (frames, dim) array")
    w = Writer(BIDF_MAGIC, BIDF_VERSION)
    w.u32(frames.shape[0])
    w.u32(frames.shape[1])
    w.f64(frames)
    return w.getvalue()


def features_from_bytes(data: bytes) -> np.ndarray:
    r = Reader(data, BIDF_MAGIC, (BIDF_VERSION,))
    n, dim = r.u32(), r.u32()
    out = r.f64(n * dim).reshape(n, dim)
    r.finish()
    return out


def write_features(path, frames) -> None:
    Path(path).write_bytes(features_to_bytes(frames))


def read_features(path) -> np.ndarray:
    return features_from_bytes(Path(path).read_bytes())


def write_manifest(path, media: Sequence[MediaItem], feature_dir: str = "features") -> None:
    """Write ``media`` and one ``BIDF`` file per item next to the manifest."""
    path = Path(path)
    fdir = path.parent / feature_dir
    fdir.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(MANIFEST_HEADER)
        for m in media:
            rel = f"{feature_dir}/{m.media_id}.bidf"
            write_features(path.parent / rel, m.features)
            out.writerow([m.media_id, m.identity_id, m.kind, m.condition, rel])


def read_manifest(path) -> list[MediaItem]:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"manifest not found: {path}")
    items = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_HEADER:
            raise IngestionError(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
        for row in reader:
            fpath = path.parent / row["feature_file"]
            if not fpath.is_file():
                raise IngestionError(f"feature file not found: {fpath}")
            items.append(MediaItem(row["media_id"], row["identity_id"], row["kind"],
                                   read_features(fpath), row["condition"]))
    _check_unique(items)
    return items
