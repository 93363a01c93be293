"""End-to-end runs on synthetic worlds: train both heads, score, fuse, rank.

``nlcrim`` is the identity head trained from a fresh initialization;
``lcrim`` is the same head whose embedding layer starts from the trained
attribute encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .metrics import RankTable, mated_ranks, rank_table, split_by_condition
from .nn import AttributeHead, IdentityHead, TrainConfig, TrainHistory, train_attribute_head, \
    train_identity_head
from .scoring import ScoreMatrix, fuse, score_all
from .synthgen import World, WorldConfig, generate_world
from .templates import TRAIN_FRAMES, build_gallery, embed_all, sample_train_frames


def training_set(media, annotations=None, k: int = TRAIN_FRAMES, seed: int = 0):
    """Stack ``k`` sampled frames per training video.

    Returns ``(features, labels, targets, media_ids)``; ``targets`` is
    ``None`` unless ``annotations`` (identity -> attribute vector) is given.
    """
    rows, labels, groups = [], [], []
    for i, m in enumerate(sorted(media, key=lambda m: m.media_id)):
        idx = sample_train_frames(m.frame_count, k, np.random.default_rng([seed, 7, i]))
        rows.append(m.features[idx])
        labels.extend([m.identity_id] * len(idx))
        groups.extend([m.media_id] * len(idx))
    x = np.concatenate(rows)
    targets = None
    if annotations is not None:
        targets = np.stack([annotations[ident] for ident in labels])
    return x, np.array(labels), targets, np.array(groups)


@dataclass
class TrainedModels:
    attribute: AttributeHead | None
    heads: dict[str, IdentityHead]
    histories: dict[str, TrainHistory] = field(default_factory=dict)


def train_models(world: World, attr_cfg: TrainConfig, id_cfg: TrainConfig,
                 which=("nlcrim", "lcrim"), grouped: bool = False) -> TrainedModels:
    """Train the requested heads on the world's training media.

    ``grouped`` holds out whole videos for validation instead of frames.
    """
    x, labels, targets, media_ids = training_set(world.train_media, world.annotations,
                                                 seed=id_cfg.seed)
    groups = media_ids if grouped else None
    out = TrainedModels(None, {})
    if "lcrim" in which:
        attr, hist = train_attribute_head(x, targets, attr_cfg, labels=labels, groups=groups)
        out.attribute = attr
        out.histories["attribute"] = hist
    for name in which:
        init = out.attribute if name == "lcrim" else None
        head, hist = train_identity_head(x, labels, id_cfg, init=init, groups=groups)
        out.heads[name] = head
        out.histories[name] = hist
    return out


def score_world(world: World, head, threads: int = 1) -> ScoreMatrix:
    gallery = build_gallery(world.gallery_media, head)
    probes = embed_all(world.probe_media, head)
    return score_all(probes, gallery, world.mated_map(), threads=threads)


def score_models(world: World, heads: dict, threads: int = 1) -> dict[str, ScoreMatrix]:
    """Score every head; adds ``fused`` when both analogs are present."""
    out = {name: score_world(world, head, threads) for name, head in heads.items()}
    if "nlcrim" in out and "lcrim" in out:
        out["fused"] = fuse(out["lcrim"], out["nlcrim"])
    return out


def tables(world: World, matrices: dict[str, ScoreMatrix]) -> dict[str, RankTable]:
    conds = world.probe_conditions()
    return {name: rank_table(split_by_condition(m, conds)) for name, m in matrices.items()}


def rank1_by_condition(world: World, m: ScoreMatrix) -> dict[str, float]:
    t = rank_table(split_by_condition(m, world.probe_conditions()))
    return {c: v[0] for c, v in t.rows.items()}


# -- benchmark presets ---------------------------------------------------------

IDENTIFICATION_TRAIN = TrainConfig(learning_rate=5e-5, batch_size=32, epochs=30)
ATTRIBUTE_TRAIN = TrainConfig(learning_rate=5e-5, batch_size=32, epochs=30)


def identification_run(seed: int = 0, world_cfg: WorldConfig | None = None,
                       id_cfg: TrainConfig = IDENTIFICATION_TRAIN):
    """Default world, fresh identity head; per-condition rank-1 on held-out identities."""
    cfg = replace(world_cfg or WorldConfig(), seed=seed)
    world = generate_world(cfg)
    models = train_models(world, ATTRIBUTE_TRAIN, replace(id_cfg, seed=seed), which=("nlcrim",))
    m = score_world(world, models.heads["nlcrim"])
    return world, models, m, rank1_by_condition(world, m)


# Benchmark worlds: narrower features and more training videos per identity so
# ten seeds fit a desk budget and heads see enough nuisance variation to learn
# invariance rather than memorize individual videos.
BENCHMARK_WORLD = WorldConfig(feature_dim=512, n_train=60, train_videos_per_id=16)
ATTRIBUTE_DOMINATED = replace(BENCHMARK_WORLD, attr_scale=1.0, idio_scale=0.1)
IDIOSYNCRASY_DOMINATED = replace(BENCHMARK_WORLD, attr_scale=0.1, idio_scale=1.0)
BENCHMARK_ATTRIBUTE_TRAIN = TrainConfig(learning_rate=5e-4, epochs=10)
BENCHMARK_IDENTITY_TRAIN = TrainConfig(learning_rate=5e-5, epochs=15)
TRANSFER_TARGET = 0.9


@dataclass
class FusionOutcome:
    seed: int
    rank1: dict[str, float]  # model -> rank-1 over the mated probes of both worlds

    @property
    def margin(self) -> float:
        """Fused rank-1 minus the better single model."""
        return self.rank1["fused"] - max(self.rank1["lcrim"], self.rank1["nlcrim"])


def fusion_benchmark(seed: int, worlds=(ATTRIBUTE_DOMINATED, IDIOSYNCRASY_DOMINATED),
                     attr_cfg: TrainConfig = BENCHMARK_ATTRIBUTE_TRAIN,
                     id_cfg: TrainConfig = BENCHMARK_IDENTITY_TRAIN) -> FusionOutcome:
    """Train both analogs per world, pool mated probes across worlds, compare rank-1."""
    pooled: dict[str, list[np.ndarray]] = {}
    for cfg in worlds:
        world = generate_world(replace(cfg, seed=seed))
        models = train_models(world, replace(attr_cfg, seed=seed), replace(id_cfg, seed=seed),
                              grouped=True)
        for name, m in score_models(world, models.heads).items():
            pooled.setdefault(name, []).append(mated_ranks(m))
    rank1 = {name: float(np.mean(np.concatenate(r) == 1)) for name, r in pooled.items()}
    return FusionOutcome(seed, rank1)


def transfer_benchmark(seed: int, world_cfg: WorldConfig = ATTRIBUTE_DOMINATED,
                       attr_cfg: TrainConfig = BENCHMARK_ATTRIBUTE_TRAIN,
                       id_cfg: TrainConfig = BENCHMARK_IDENTITY_TRAIN,
                       target: float = TRANSFER_TARGET) -> dict[str, int | None]:
    """Epochs each analog needs to reach ``target`` held-out-video accuracy."""
    world = generate_world(replace(world_cfg, seed=seed))
    models = train_models(world, replace(attr_cfg, seed=seed), replace(id_cfg, seed=seed),
                          grouped=True)
    return {name: models.histories[name].epochs_to_accuracy(target)
            for name in ("nlcrim", "lcrim")}
