"""Probe x gallery cosine score matrices and score-level fusion."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .binfmt import Reader, Writer
from .domain import cosine_prepared, rescale_pow2
from .errors import AlignmentError, DegenerateVectorError, DimensionError, FormatError
from .templates import Template

CSV_HEADER = ["probe_id", "gallery_id", "score", "is_mated"]
BIDS_MAGIC = b"BIDS"
BIDS_VERSION = 1


@dataclass
class ScoreMatrix:
    """Dense cosine scores. ``mated`` maps a probe id to its gallery identity;
    probes absent from it are unmated."""

    probe_ids: tuple[str, ...]
    gallery_ids: tuple[str, ...]
    scores: np.ndarray
    mated: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.probe_ids = tuple(self.probe_ids)
        self.gallery_ids = tuple(self.gallery_ids)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.mated = dict(self.mated)
        if len(set(self.probe_ids)) != len(self.probe_ids):
            raise AlignmentError("duplicate probe ids")
        if len(set(self.gallery_ids)) != len(self.gallery_ids):
            raise AlignmentError("duplicate gallery ids")
        if self.scores.shape != (len(self.probe_ids), len(self.gallery_ids)):
            raise DimensionError(f"score shape {self.scores.shape} does not match "
                                 f"{len(self.probe_ids)} probes x {len(self.gallery_ids)} gallery")
        if not np.all(np.isfinite(self.scores)) or np.any(np.abs(self.scores) > 1.0):
            raise DimensionError("scores must be finite and within [-1, 1]")
        probes, gallery = set(self.probe_ids), set(self.gallery_ids)
        for p, g in self.mated.items():
            if p not in probes:
                raise AlignmentError(f"mated probe {p!r} is not in the matrix")
            if g not in gallery:
                raise AlignmentError(f"mate {g!r} of probe {p!r} is not a gallery id")

    def mate_index(self) -> np.ndarray:
        """Gallery column of each probe's mate, ``-1`` for unmated probes."""
        col = {g: j for j, g in enumerate(self.gallery_ids)}
        return np.array([col[self.mated[p]] if p in self.mated else -1
                         for p in self.probe_ids], dtype=np.int64)

    def subset(self, probe_ids: Sequence[str]) -> "ScoreMatrix":
        row = {p: i for i, p in enumerate(self.probe_ids)}
        keep = [p for p in self.probe_ids if p in set(probe_ids)]
        return ScoreMatrix(keep, self.gallery_ids, self.scores[[row[p] for p in keep]],
                           {p: self.mated[p] for p in keep if p in self.mated})

    def equals(self, other: "ScoreMatrix") -> bool:
        return (self.probe_ids == other.probe_ids and self.gallery_ids == other.gallery_ids
                and self.mated == other.mated
                and self.scores.tobytes() == other.scores.tobytes())


def _score_row(p: np.ndarray, pp: float, gallery: list[np.ndarray], gg: list[float]) -> list[float]:
    return [cosine_prepared(p, pp, g, q) for g, q in zip(gallery, gg)]


def score_all(probes: Sequence[Template], gallery: Mapping[str, Template],
              mated: Mapping[str, str] | None = None, threads: int = 1) -> ScoreMatrix:
    """Cosine of every probe template against every gallery template.

    Probes and gallery identities are put in sorted id order. Rows are
    independent, so ``threads > 1`` fills them concurrently with identical
    results.
    """
    probes = sorted(probes, key=lambda t: t.owner_id)
    gids = sorted(gallery)
    gvecs = [rescale_pow2(np.asarray(gallery[g].vector, dtype=np.float64)) for g in gids]
    pvecs = [rescale_pow2(np.asarray(t.vector, dtype=np.float64)) for t in probes]
    if gvecs and len({v.shape for v in gvecs + pvecs}) != 1:
        raise DimensionError("templates have differing lengths")
    gg = [float(np.dot(v, v)) for v in gvecs]
    pp = [float(np.dot(v, v)) for v in pvecs]
    for g, q in zip(gids, gg):
        if q == 0.0:
            raise DegenerateVectorError(f"gallery template {g!r} has zero norm")
    for t, q in zip(probes, pp):
        if q == 0.0:
            raise DegenerateVectorError(f"probe template {t.owner_id!r} has zero norm")

    def fill(i: int) -> list[float]:
        return _score_row(pvecs[i], pp[i], gvecs, gg)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(fill, range(len(probes))))
    else:
        rows = [fill(i) for i in range(len(probes))]
    scores = np.array(rows, dtype=np.float64).reshape(len(probes), len(gids))
    ids = [t.owner_id for t in probes]
    mated = {p: g for p, g in (mated or {}).items() if p in set(ids)}
    return ScoreMatrix(ids, gids, scores, mated)


def fuse(a: ScoreMatrix, b: ScoreMatrix) -> ScoreMatrix:
    """Average two aligned score matrices cell by cell."""
    if a.probe_ids != b.probe_ids:
        raise AlignmentError("probe ids or their order differ between matrices")
    if a.gallery_ids != b.gallery_ids:
        raise AlignmentError("gallery ids or their order differ between matrices")
    if a.mated != b.mated:
        raise AlignmentError("mated maps differ between matrices")
    fused = np.clip((a.scores + b.scores) / 2.0, -1.0, 1.0)
    return ScoreMatrix(a.probe_ids, a.gallery_ids, fused, a.mated)


# -- files -------------------------------------------------------------------

def write_scores_csv(path, m: ScoreMatrix) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(CSV_HEADER)
        for i, p in enumerate(m.probe_ids):
            mate = m.mated.get(p)
            for j, g in enumerate(m.gallery_ids):
                out.writerow([p, g, format(m.scores[i, j], ".17g"), int(g == mate)])


def read_scores_csv(path) -> ScoreMatrix:
    probes: dict[str, int] = {}
    gallery: dict[str, int] = {}
    cells: dict[tuple[int, int], float] = {}
    mated: dict[str, str] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise FormatError(f"{path}: expected header {','.join(CSV_HEADER)}")
        for row in reader:
            i = probes.setdefault(row["probe_id"], len(probes))
            j = gallery.setdefault(row["gallery_id"], len(gallery))
            if (i, j) in cells:
                raise FormatError(f"{path}: duplicate cell {row['probe_id']}/{row['gallery_id']}")
            cells[i, j] = float(row["score"])
            if row["is_mated"] not in ("0", "1"):
                raise FormatError(f"{path}: is_mated must be 0 or 1")
            if row["is_mated"] == "1":
                if row["probe_id"] in mated:
                    raise FormatError(f"{path}: probe {row['probe_id']} has two mates")
                mated[row["probe_id"]] = row["gallery_id"]
    if len(cells) != len(probes) * len(gallery):
        raise FormatError(f"{path}: score grid is incomplete")
    scores = np.empty((len(probes), len(gallery)))
    for (i, j), s in cells.items():
        scores[i, j] = s
    return ScoreMatrix(list(probes), list(gallery), scores, mated)


def scores_to_bytes(m: ScoreMatrix) -> bytes:
    """``BIDS`` layout: magic, u32 version, u32 P, u32 G, P probe ids and G
    gallery ids (u32 byte length + UTF-8 each), P*G f64 scores row major,
    then one i32 mate column per probe (-1 when unmated)."""
    w = Writer(BIDS_MAGIC, BIDS_VERSION)
    w.u32(len(m.probe_ids))
    w.u32(len(m.gallery_ids))
    for p in m.probe_ids:
        w.text(p)
    for g in m.gallery_ids:
        w.text(g)
    w.f64(m.scores)
    for j in m.mate_index():
        w.i32(j)
    return w.getvalue()


def scores_from_bytes(data: bytes) -> ScoreMatrix:
    r = Reader(data, BIDS_MAGIC, (BIDS_VERSION,))
    n_p, n_g = r.u32(), r.u32()
    pids = [r.text() for _ in range(n_p)]
    gids = [r.text() for _ in range(n_g)]
    scores = r.f64(n_p * n_g).reshape(n_p, n_g)
    mated = {}
    for p in pids:
        j = r.i32()
        if j >= n_g or j < -1:
            raise FormatError(f"mate index {j} out of range")
        if j >= 0:
            mated[p] = gids[j]
    r.finish()
    return ScoreMatrix(pids, gids, scores, mated)


def save_scores(path, m: ScoreMatrix) -> None:
    """Write by extension: ``.csv`` or the ``BIDS`` binary container."""
    path = Path(path)
    if path.suffix == ".csv":
        write_scores_csv(path, m)
    else:
        path.write_bytes(scores_to_bytes(m))


def load_scores(path) -> ScoreMatrix:
    path = Path(path)
    if path.suffix == ".csv":
        return read_scores_csv(path)
    return scores_from_bytes(path.read_bytes())
