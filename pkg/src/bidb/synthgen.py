"""Seeded linear-Gaussian stand-in for real body-feature datasets.

Each identity carries latent body attributes ``a`` (one per descriptor) and
an idiosyncratic shape code ``z``. Frame ``t`` of media ``m`` of identity
``i`` has backbone feature::

    f = A a_i + Z z_i + s(condition) * (N n_m + C c_m) + frame_noise * e_t

``A``, ``Z`` and ``C`` have mutually orthonormal columns and ``c_m`` is one
of the identity's two clothing offsets (gallery media wear set 0, probe
media set 1). The nuisance map ``N = [nuisance_scale * U | isotropic_noise * I]``
pairs a few strong structured directions ``U`` (view/pose-like, learnable to
ignore) with weak isotropic per-media noise that no projection removes.

Randomness comes from numpy's ``Generator`` over the PCG64 bit generator,
one independent stream per (seed, purpose, index) triple, so every part of
the world is reproducible on its own.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .templates import MediaItem, write_manifest

CONDITIONS = ("close", "100-300m", "370-600m", "uav")

_S_MAPS, _S_IDENTITY, _S_MEDIA, _S_ANNOTATE = 0, 1, 2, 3


@dataclass
class WorldConfig:
    n_train: int = 100
    n_gallery: int = 60
    n_probe: int = 100
    n_mated: int = 60
    train_videos_per_id: int = 4
    gallery_images_per_id: int = 1
    gallery_videos_per_id: int = 1
    probe_videos_per_condition: int = 1
    frames_per_video: int = 12
    feature_dim: int = 2048
    attr_dim: int = 30
    idio_dim: int = 32
    nuisance_dim: int = 16
    clothing_dim: int = 8
    attr_scale: float = 1.0
    idio_scale: float = 1.0
    nuisance_scale: float = 3.0
    isotropic_noise: float = 0.1
    clothing_scale: float = 2.0
    frame_noise: float = 0.1
    conditions: tuple[str, ...] = CONDITIONS
    strengths: tuple[float, ...] = (0.4, 0.8, 1.2, 1.6)
    gallery_condition: str = "close"
    annotators: int = 20
    annotator_noise: float = 0.5
    seed: int = 0

    def validate(self) -> "WorldConfig":
        self.conditions = tuple(self.conditions)
        self.strengths = tuple(float(s) for s in self.strengths)
        positive = ["n_train", "n_gallery", "n_probe", "n_mated", "train_videos_per_id",
                    "frames_per_video", "feature_dim", "attr_dim", "annotators",
                    "probe_videos_per_condition"]
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, "must be >= 1")
        for name in ["idio_dim", "nuisance_dim", "clothing_dim",
                     "gallery_images_per_id", "gallery_videos_per_id"]:
            if int(getattr(self, name)) < 0:
                raise ConfigError(name, "must be >= 0")
        if self.gallery_images_per_id + self.gallery_videos_per_id < 1:
            raise ConfigError("gallery_images_per_id", "each gallery identity needs media")
        if self.n_train < 2:
            raise ConfigError("n_train", "training needs at least two identities")
        if self.n_mated > self.n_gallery:
            raise ConfigError("n_mated", "mated probes must be gallery identities")
        if self.n_mated > self.n_probe:
            raise ConfigError("n_mated", "cannot exceed n_probe")
        for name in ["attr_scale", "idio_scale", "nuisance_scale", "isotropic_noise",
                     "clothing_scale", "frame_noise", "annotator_noise"]:
            if not float(getattr(self, name)) >= 0:
                raise ConfigError(name, "must be >= 0")
        if len(self.conditions) == 0 or len(set(self.conditions)) != len(self.conditions):
            raise ConfigError("conditions", "need distinct condition names")
        if len(self.strengths) != len(self.conditions):
            raise ConfigError("strengths", "one nuisance strength per condition")
        if any(not s >= 0 for s in self.strengths):
            raise ConfigError("strengths", "must be >= 0")
        if self.gallery_condition not in self.conditions:
            raise ConfigError("gallery_condition", "must be one of the conditions")
        if self.attr_dim + self.idio_dim + self.clothing_dim > self.feature_dim:
            raise ConfigError("feature_dim", "too small for the identity and clothing subspaces")
        return self

    def strength(self, condition: str) -> float:
        return self.strengths[self.conditions.index(condition)]

    @classmethod
    def from_mapping(cls, values: dict) -> "WorldConfig":
        """Build from plain config values, type-checked against the defaults."""
        defaults = cls()
        kwargs = {}
        for key, v in values.items():
            if key not in {f.name for f in fields(cls)}:
                raise ConfigError(key, "unknown world setting")
            d = getattr(defaults, key)
            if isinstance(d, int):
                if isinstance(v, bool) or not isinstance(v, int):
                    raise ConfigError(key, f"expected an integer, got {v!r}")
            elif isinstance(d, float):
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(key, f"expected a number, got {v!r}")
                v = float(v)
            elif isinstance(d, tuple):
                if not isinstance(v, (list, tuple)):
                    raise ConfigError(key, f"expected a list, got {v!r}")
                v = tuple(v)
            elif isinstance(d, str) and not isinstance(v, str):
                raise ConfigError(key, f"expected a string, got {v!r}")
            kwargs[key] = v
        return cls(**kwargs).validate()

    def to_mapping(self) -> dict:
        d = asdict(self)
        d["conditions"] = list(self.conditions)
        d["strengths"] = list(self.strengths)
        return d


@dataclass
class SyntheticIdentity:
    identity_id: str
    attributes: np.ndarray
    idiosyncrasy: np.ndarray
    clothing: np.ndarray  # (2, clothing_dim): set 0 gallery/train-even, set 1 probe/train-odd


@dataclass
class MixingMaps:
    attr: np.ndarray  # (D, A), orthonormal columns
    idio: np.ndarray  # (D, Z)
    clothing: np.ndarray  # (D, K)
    nuisance: np.ndarray  # (D, Nn) structured directions, unit-norm columns


@dataclass
class World:
    config: WorldConfig
    maps: MixingMaps
    identities: dict[str, SyntheticIdentity]
    train_media: list[MediaItem]
    gallery_media: list[MediaItem]
    probe_media: list[MediaItem]
    annotations: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def gallery_ids(self) -> list[str]:
        return sorted({m.identity_id for m in self.gallery_media})

    def mated_map(self) -> dict[str, str]:
        """Probe media id -> gallery identity for probes whose identity is enrolled."""
        gallery = set(self.gallery_ids)
        return {m.media_id: m.identity_id for m in self.probe_media if m.identity_id in gallery}

    def probe_conditions(self) -> dict[str, str]:
        return {m.media_id: m.condition for m in self.probe_media}


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *stream])


def make_maps(cfg: WorldConfig) -> MixingMaps:
    rng = _rng(cfg.seed, _S_MAPS)
    k = cfg.attr_dim + cfg.idio_dim + cfg.clothing_dim
    q, _ = np.linalg.qr(rng.standard_normal((cfg.feature_dim, k)))
    a, z = cfg.attr_dim, cfg.idio_dim
    nuisance = rng.standard_normal((cfg.feature_dim, cfg.nuisance_dim))
    nuisance /= np.maximum(np.linalg.norm(nuisance, axis=0), 1e-300)
    return MixingMaps(q[:, :a], q[:, a:a + z], q[:, a + z:], nuisance)


def make_identity(cfg: WorldConfig, identity_id: str, index: int) -> SyntheticIdentity:
    rng = _rng(cfg.seed, _S_IDENTITY, index)
    return SyntheticIdentity(identity_id, rng.standard_normal(cfg.attr_dim),
                             rng.standard_normal(cfg.idio_dim),
                             rng.standard_normal((2, cfg.clothing_dim)))


def render_frames(cfg: WorldConfig, maps: MixingMaps, ident: SyntheticIdentity, condition: str,
                  clothing_set: int, n_frames: int, media_index: int) -> np.ndarray:
    """Feature rows for one media item, frames in temporal order."""
    rng = _rng(cfg.seed, _S_MEDIA, media_index)
    base = cfg.attr_scale * (maps.attr @ ident.attributes) \
        + cfg.idio_scale * (maps.idio @ ident.idiosyncrasy)
    structured = maps.nuisance @ rng.standard_normal(cfg.nuisance_dim)
    isotropic = rng.standard_normal(cfg.feature_dim)
    nuisance = cfg.nuisance_scale * structured + cfg.isotropic_noise * isotropic \
        + cfg.clothing_scale * (maps.clothing @ ident.clothing[clothing_set])
    media = base + cfg.strength(condition) * nuisance
    noise = rng.standard_normal((n_frames, cfg.feature_dim))
    return media[None, :] + cfg.frame_noise * noise


def annotate(identity: SyntheticIdentity, k: int, noise: float, seed) -> np.ndarray:
    """Average of ``k`` noisy annotator ratings of the identity's attributes."""
    if k < 1:
        raise ConfigError("annotators", "must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ratings = identity.attributes[None, :] + noise * rng.standard_normal(
        (k, identity.attributes.shape[0]))
    return ratings.mean(axis=0)


def generate_world(cfg: WorldConfig) -> World:
    cfg.validate()
    maps = make_maps(cfg)
    identities: dict[str, SyntheticIdentity] = {}
    index = 0

    def new_identity(ident: str) -> SyntheticIdentity:
        nonlocal index
        identities[ident] = make_identity(cfg, ident, index)
        index += 1
        return identities[ident]

    train_ids = [f"T{i:04d}" for i in range(cfg.n_train)]
    gallery_ids = [f"S{i:04d}" for i in range(cfg.n_gallery)]
    unmated = [f"S{i:04d}" for i in range(cfg.n_gallery, cfg.n_gallery + cfg.n_probe - cfg.n_mated)]
    probe_ids = gallery_ids[:cfg.n_mated] + unmated
    for ident in train_ids + gallery_ids + unmated:
        new_identity(ident)

    media_counter = 0

    def media(media_id, ident, kind, cond, clothing_set, n_frames) -> MediaItem:
        nonlocal media_counter
        frames = render_frames(cfg, maps, identities[ident], cond, clothing_set, n_frames,
                               media_counter)
        media_counter += 1
        return MediaItem(media_id, ident, kind, frames, cond)

    train = []
    for ident in train_ids:
        for v in range(cfg.train_videos_per_id):
            cond = cfg.conditions[v % len(cfg.conditions)]
            train.append(media(f"{ident}_v{v:02d}", ident, "video", cond, v % 2,
                               cfg.frames_per_video))
    gallery = []
    for ident in gallery_ids:
        for k in range(cfg.gallery_images_per_id):
            gallery.append(media(f"{ident}_gi{k:02d}", ident, "image", cfg.gallery_condition, 0, 1))
        for k in range(cfg.gallery_videos_per_id):
            gallery.append(media(f"{ident}_gv{k:02d}", ident, "video", cfg.gallery_condition, 0,
                                 cfg.frames_per_video))
    probes = []
    for ident in probe_ids:
        for c, cond in enumerate(cfg.conditions):
            for k in range(cfg.probe_videos_per_condition):
                probes.append(media(f"{ident}_p{c}{k:02d}", ident, "video", cond, 1,
                                    cfg.frames_per_video))

    annotations = {
        ident: annotate(identities[ident], cfg.annotators, cfg.annotator_noise,
                        _rng(cfg.seed, _S_ANNOTATE, i))
        for i, ident in enumerate(train_ids)
    }
    return World(cfg, maps, identities, train, gallery, probes, annotations)


def write_annotations(path, annotations: dict[str, np.ndarray]) -> None:
    dim = len(next(iter(annotations.values())))
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["identity_id"] + [f"attr_{i}" for i in range(dim)])
        for ident in sorted(annotations):
            out.writerow([ident] + [format(v, ".17g") for v in annotations[ident]])


def read_annotations(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "identity_id":
            raise ConfigError("annotations", f"{path}: first column must be identity_id")
        return {row[0]: np.array([float(v) for v in row[1:]]) for row in reader}


def write_world(world: World, out_dir) -> None:
    """``manifest.csv`` (training media), ``gallery.csv``, ``probe.csv``,
    ``features/`` and ``annotations.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.csv", world.train_media)
    write_manifest(out / "gallery.csv", world.gallery_media)
    write_manifest(out / "probe.csv", world.probe_media)
    write_annotations(out / "annotations.csv", world.annotations)
