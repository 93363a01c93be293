"""Randomized invariants, each checked on at least 1000 generated cases."""

from collections import Counter

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bidb.domain import cosine
from bidb.errors import DegenerateVectorError
from bidb.metrics import cmc, roc
from bidb.nn import IdentityHead
from bidb.scoring import ScoreMatrix, fuse
from bidb.templates import MediaItem, build_gallery

CASES = settings(max_examples=1000, deadline=None)

# examples that reached the assertions, per property; read by the acceptance suite
EXECUTED = Counter()

# scaling subnormals drops bits before cosine ever sees them
coord = st.floats(min_value=-1e3, max_value=1e3, allow_subnormal=False).filter(
    lambda x: x == 0 or abs(x) > 1e-200)


@st.composite
def vector_pairs(draw):
    n = draw(st.integers(1, 16))
    a = draw(arrays(np.float64, n, elements=coord))
    b = draw(arrays(np.float64, n, elements=coord))
    assume(np.any(a) and np.any(b))
    return a, b


@st.composite
def score_matrices(draw, grid=None):
    p = draw(st.integers(1, 12))
    g = draw(st.integers(1, 10))
    if grid is None:
        cell = st.floats(-1.0, 1.0, allow_nan=False)
    else:
        # dyadic values keep sums and halvings exact
        cell = st.integers(-grid, grid).map(lambda k: k / grid)
    scores = draw(arrays(np.float64, (p, g), elements=cell))
    mates = draw(st.lists(st.integers(-1, g - 1), min_size=p, max_size=p))
    pids = [f"p{i}" for i in range(p)]
    gids = [f"g{j}" for j in range(g)]
    mated = {pid: gids[j] for pid, j in zip(pids, mates) if j >= 0}
    return ScoreMatrix(pids, gids, scores, mated)


@CASES
@given(vector_pairs())
def test_cosine_symmetric(ab):
    EXECUTED["test_cosine_symmetric"] += 1
    a, b = ab
    assert cosine(a, b) == cosine(b, a)


@CASES
@given(vector_pairs())
def test_cosine_in_range(ab):
    EXECUTED["test_cosine_in_range"] += 1
    a, b = ab
    assert -1.0 <= cosine(a, b) <= 1.0
    assert cosine(a, a) == 1.0


@CASES
@given(vector_pairs(), st.integers(-40, 40), st.booleans())
def test_cosine_power_of_two_scale_is_exact(ab, k, flip):
    EXECUTED["test_cosine_power_of_two_scale_is_exact"] += 1
    a, b = ab
    c = (-1.0 if flip else 1.0) * 2.0 ** k
    assert cosine(c * a, b) == (-cosine(a, b) if flip else cosine(a, b))


@CASES
@given(vector_pairs(), st.floats(1e-3, 1e3))
def test_cosine_positive_scale(ab, c):
    EXECUTED["test_cosine_positive_scale"] += 1
    a, b = ab
    assert abs(cosine(c * a, b) - cosine(a, b)) <= 1e-12


@CASES
@given(score_matrices())
def test_cmc_monotone_and_complete(m):
    assume(m.mated)
    EXECUTED["test_cmc_monotone_and_complete"] += 1
    h = cmc(m).hit_rates
    assert len(h) == len(m.gallery_ids)
    assert np.all(np.diff(h) >= 0)
    assert np.all((h >= 0) & (h <= 1))
    assert h[-1] == 1.0


@CASES
@given(score_matrices(grid=8))
def test_roc_monotone_with_endpoints(m):
    assume(m.mated and m.scores.size > len(m.mated))
    EXECUTED["test_roc_monotone_with_endpoints"] += 1
    r = roc(m)
    assert np.all(np.diff(r.thresholds) > 0)
    assert np.all(np.diff(r.far) <= 0) and np.all(np.diff(r.tar) <= 0)
    assert (r.far[0], r.tar[0]) == (1.0, 1.0)
    assert (r.far[-1], r.tar[-1]) == (0.0, 0.0)


@CASES
@given(score_matrices(grid=64), st.data())
def test_fusion_order_preserving(a, data):
    EXECUTED["test_fusion_order_preserving"] += 1
    other = data.draw(arrays(np.float64, a.scores.shape,
                             elements=st.integers(-64, 64).map(lambda k: k / 64)))
    b = ScoreMatrix(a.probe_ids, a.gallery_ids, other, a.mated)
    f = fuse(a, b).scores.ravel()
    x, y = a.scores.ravel(), b.scores.ravel()
    i = data.draw(st.integers(0, x.size - 1))
    j = data.draw(st.integers(0, x.size - 1))
    if x[i] >= x[j] and y[i] >= y[j]:
        assert f[i] >= f[j]
        if x[i] > x[j] or y[i] > y[j]:
            assert f[i] > f[j]


@CASES
@given(score_matrices())
def test_fusion_idempotent(m):
    EXECUTED["test_fusion_idempotent"] += 1
    assert fuse(m, m).equals(m)


HEAD = IdentityHead.init(3, 4, in_dim=5, embed_dim=3)


@st.composite
def media_sets(draw):
    n = draw(st.integers(1, 8))
    items = []
    for i in range(n):
        frames = draw(st.integers(1, 14))
        x = draw(arrays(np.float64, (frames, 5), elements=st.floats(-10, 10)))
        kind = "image" if frames == 1 and draw(st.booleans()) else "video"
        ident = f"id{draw(st.integers(0, 2))}"
        items.append(MediaItem(f"m{i}", ident, kind, x))
    order = draw(st.permutations(range(n)))
    return items, [items[k] for k in order]


@CASES
@given(media_sets())
def test_template_permutation_invariant(pair):
    EXECUTED["test_template_permutation_invariant"] += 1
    items, shuffled = pair
    try:
        base = build_gallery(items, HEAD)
    except DegenerateVectorError:
        with pytest.raises(DegenerateVectorError):
            build_gallery(shuffled, HEAD)
        return
    other = build_gallery(shuffled, HEAD)
    assert list(base) == list(other)
    for k in base:
        assert base[k].vector.tobytes() == other[k].vector.tobytes()
        assert base[k].source_count == other[k].source_count
