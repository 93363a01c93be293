"""Open-set identification metrics: probe ranks, CMC, ROC and rank tables.

Ties are pessimistic: any non-mate gallery entry scoring at least the mate's
score ranks above it. CMC is computed over mated probe items only; unmated
probes contribute impostor scores to the ROC.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import NotMatedError, UndefinedMetricError
from .scoring import ScoreMatrix

ALL_CONDITIONS = "All Distances"
REPORT_RANKS = (1, 10, 20)


def probe_rank(row, mate: int) -> int:
    """1 + number of non-mate entries scoring >= the mate."""
    row = np.asarray(row, dtype=np.float64)
    if mate is None or mate < 0:
        raise NotMatedError("probe has no gallery mate")
    if mate >= row.shape[0]:
        raise IndexError(f"mate index {mate} outside a gallery of {row.shape[0]}")
    # The mate itself satisfies row >= row[mate], contributing the leading 1.
    return int(np.count_nonzero(row >= row[mate]))


def mated_ranks(m: ScoreMatrix) -> np.ndarray:
    mates = m.mate_index()
    return np.array([probe_rank(m.scores[i], j) for i, j in enumerate(mates) if j >= 0],
                    dtype=np.int64)


@dataclass
class CmcCurve:
    hit_rates: np.ndarray  # index r-1 holds the hit rate at rank r
    mated_count: int

    def at(self, rank: int) -> float:
        """Hit rate at ``rank``; ranks past the gallery size saturate."""
        if rank < 1:
            raise ValueError("ranks start at 1")
        return float(self.hit_rates[min(rank, len(self.hit_rates)) - 1])

    @property
    def ranks(self) -> np.ndarray:
        return np.arange(1, len(self.hit_rates) + 1)


def cmc_from_ranks(ranks: Sequence[int], gallery_size: int) -> CmcCurve:
    ranks = np.asarray(ranks, dtype=np.int64)
    if ranks.size == 0:
        raise UndefinedMetricError("CMC needs at least one mated probe")
    counts = np.bincount(ranks, minlength=gallery_size + 1)[1:gallery_size + 1]
    return CmcCurve(np.cumsum(counts) / ranks.size, int(ranks.size))


def cmc(m: ScoreMatrix) -> CmcCurve:
    return cmc_from_ranks(mated_ranks(m), len(m.gallery_ids))


def split_scores(m: ScoreMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Genuine (probe vs. its mate) and impostor (every other cell) scores."""
    mates = m.mate_index()
    genuine_mask = np.zeros(m.scores.shape, dtype=bool)
    rows = np.nonzero(mates >= 0)[0]
    genuine_mask[rows, mates[rows]] = True
    return m.scores[genuine_mask], m.scores[~genuine_mask]


@dataclass
class RocCurve:
    thresholds: np.ndarray  # ascending, with -inf and +inf sentinels
    far: np.ndarray
    tar: np.ndarray
    genuine_count: int
    impostor_count: int

    def points(self):
        return list(zip(self.thresholds.tolist(), self.far.tolist(), self.tar.tolist()))

    def tar_at_far(self, far: float) -> float:
        """Best TAR among operating points whose FAR does not exceed ``far``."""
        ok = self.far <= far
        return float(self.tar[ok].max()) if np.any(ok) else 0.0


def _fraction_at_or_above(sorted_scores: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    n = sorted_scores.size
    return (n - np.searchsorted(sorted_scores, thresholds, side="left")) / n


def roc(m: ScoreMatrix, thresholds=None) -> RocCurve:
    """TAR/FAR at each threshold (``score >= threshold`` accepts).

    By default the sweep covers every distinct observed score plus the
    sentinels ``-inf`` and ``+inf``.
    """
    if not m.mated:
        raise UndefinedMetricError("ROC needs a mated map")
    genuine, impostor = split_scores(m)
    if genuine.size == 0 or impostor.size == 0:
        raise UndefinedMetricError("ROC needs at least one genuine and one impostor score")
    if thresholds is None:
        thresholds = np.concatenate(([-np.inf], np.unique(m.scores), [np.inf]))
    else:
        thresholds = np.sort(np.asarray(thresholds, dtype=np.float64))
    tar = _fraction_at_or_above(np.sort(genuine), thresholds)
    far = _fraction_at_or_above(np.sort(impostor), thresholds)
    return RocCurve(thresholds, far, tar, int(genuine.size), int(impostor.size))


@dataclass
class RankTable:
    """Hit rates at fixed ranks per condition, plus the pooled row."""

    ranks: tuple[int, ...] = REPORT_RANKS
    rows: dict[str, tuple[float, ...]] = field(default_factory=dict)

    def __getitem__(self, condition: str) -> tuple[float, ...]:
        return self.rows[condition]


def rank_table(matrices: Mapping[str, ScoreMatrix], ranks: Sequence[int] = REPORT_RANKS
               ) -> RankTable:
    """Per-condition hit rates at ``ranks`` and the pooled ``All Distances`` row.

    Pooling concatenates the mated probe items of every condition; each
    probe keeps its rank within its own matrix.
    """
    if not matrices:
        raise UndefinedMetricError("no score matrices given")
    table = RankTable(tuple(ranks))
    pooled_hits = np.zeros(len(ranks))
    pooled_n = 0
    per_condition = {}
    for cond, m in matrices.items():
        curve = cmc(m)
        per_condition[cond] = tuple(curve.at(r) for r in ranks)
        r = mated_ranks(m)
        pooled_hits += [np.count_nonzero(r <= k) for k in ranks]
        pooled_n += r.size
    table.rows[ALL_CONDITIONS] = tuple((pooled_hits / pooled_n).tolist())
    table.rows.update(per_condition)
    return table


def split_by_condition(m: ScoreMatrix, conditions: Mapping[str, str]) -> dict[str, ScoreMatrix]:
    """Row subsets of ``m`` keyed by each probe's condition tag, in first-seen order."""
    groups: dict[str, list[str]] = {}
    for p in m.probe_ids:
        groups.setdefault(conditions.get(p, ""), []).append(p)
    return {c: m.subset(ids) for c, ids in groups.items()}


def matrix_with_ranks(ranks: Sequence[int | None], gallery_size: int, prefix: str = "p"
                      ) -> ScoreMatrix:
    """A score matrix whose mated probes sit at exactly the given ranks.

    ``None`` entries produce unmated probes. Scores are evenly spaced so no
    ties occur; the mate of probe ``i`` is gallery column ``i % gallery_size``.
    """
    gids = [f"g{j:04d}" for j in range(gallery_size)]
    pids, rows, mated = [], [], {}
    levels = np.linspace(0.9, -0.9, gallery_size)
    for i, r in enumerate(ranks):
        pid = f"{prefix}{i:05d}"
        pids.append(pid)
        mate = i % gallery_size
        others = [j for j in range(gallery_size) if j != mate]
        row = np.empty(gallery_size)
        if r is None:
            row[mate] = levels[0]
            row[others] = levels[1:]
        else:
            if not 1 <= r <= gallery_size:
                raise ValueError(f"rank {r} impossible in a gallery of {gallery_size}")
            order = others[:r - 1] + [mate] + others[r - 1:]
            row[order] = levels
            mated[pid] = gids[mate]
        rows.append(row)
    return ScoreMatrix(pids, gids, np.array(rows), mated)


# -- exports -----------------------------------------------------------------

def write_cmc_csv(path, curve: CmcCurve) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["rank", "hit_rate"])
        for r, h in zip(curve.ranks.tolist(), curve.hit_rates.tolist()):
            out.writerow([r, format(h, ".17g")])


def write_roc_csv(path, curve: RocCurve) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["threshold", "far", "tar"])
        for t, f, a in curve.points():
            out.writerow([format(t, ".17g"), format(f, ".17g"), format(a, ".17g")])


def read_cmc_csv(path) -> CmcCurve:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return CmcCurve(np.array([float(r["hit_rate"]) for r in rows]), 0)


def read_roc_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return tuple(np.array([float(r[k]) for r in rows]) for k in ("threshold", "far", "tar"))


def write_rank_table_csv(path, tables: Mapping[str, RankTable], decimals: int = 2) -> None:
    """One row per model; columns are condition x rank, pooled condition first."""
    models = list(tables)
    first = tables[models[0]]
    conditions = list(first.rows)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["model"] + [f"{c} rank-{r}" for c in conditions for r in first.ranks])
        for model in models:
            t = tables[model]
            out.writerow([model] + [f"{v:.{decimals}f}" for c in conditions for v in t.rows[c]])


def read_rank_table_csv(path) -> dict[str, dict[str, str]]:
    with open(path, newline="") as fh:
        return {row["model"]: row for row in csv.DictReader(fh)}
