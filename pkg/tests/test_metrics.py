import numpy as np
import pytest

from bidb.errors import NotMatedError, UndefinedMetricError
from bidb.metrics import (
    ALL_CONDITIONS,
    cmc,
    cmc_from_ranks,
    mated_ranks,
    matrix_with_ranks,
    probe_rank,
    rank_table,
    read_cmc_csv,
    read_rank_table_csv,
    read_roc_csv,
    roc,
    split_by_condition,
    split_scores,
    write_cmc_csv,
    write_rank_table_csv,
    write_roc_csv,
)
from bidb.scoring import ScoreMatrix

from factories import random_score_matrix
from oracles import cmc_by_sort, rank_by_sort, roc_by_counting


class TestProbeRank:
    @pytest.mark.parametrize("row,mate,want", [
        ([0.9, 0.5, 0.1], 0, 1),
        ([0.9, 0.5, 0.1], 2, 3),
        ([0.5, 0.5, 0.1], 1, 2),
        ([0.5, 0.5, 0.5], 0, 3),
        ([0.2], 0, 1),
    ])
    def test_examples(self, row, mate, want):
        assert probe_rank(row, mate) == want

    def test_unmated(self):
        with pytest.raises(NotMatedError):
            probe_rank([0.1, 0.2], -1)

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            row = np.round(rng.uniform(-1, 1, size=int(rng.integers(1, 12))) * 3) / 3
            mate = int(rng.integers(row.size))
            assert probe_rank(row, mate) == rank_by_sort(list(row), mate)


class TestCmc:
    def test_hand_example(self):
        # two mated probes at ranks 3 and 3 in a gallery of five
        assert cmc_from_ranks([3, 3], 5).hit_rates.tolist() == [0, 0, 1, 1, 1]

    def test_mixed(self):
        assert cmc_from_ranks([1, 2, 4, 1], 4).hit_rates.tolist() == [0.5, 0.75, 0.75, 1.0]

    def test_unmated_probes_ignored(self):
        m = ScoreMatrix(["a", "b"], ["x", "y"], [[0.9, 0.1], [0.9, 0.1]], {"a": "y"})
        assert cmc(m).hit_rates.tolist() == [0.0, 1.0]
        assert cmc(m).mated_count == 1

    def test_no_mated(self):
        with pytest.raises(UndefinedMetricError):
            cmc(ScoreMatrix(["a"], ["x"], [[0.1]]))

    def test_at_saturates(self):
        c = cmc_from_ranks([1, 2], 2)
        assert c.at(1) == 0.5 and c.at(50) == 1.0

    def test_oracle_on_random_matrices(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            m = random_score_matrix(rng)
            want = cmc_by_sort(m.scores, m.mate_index().tolist(), len(m.gallery_ids))
            assert np.max(np.abs(cmc(m).hit_rates - want)) <= 1e-12


class TestRoc:
    def test_hand_example(self):
        m = ScoreMatrix(["a", "b"], ["x", "y"], [[0.8, 0.3], [0.6, 0.1]], {"a": "x", "b": "y"})
        r = roc(m)
        assert r.thresholds.tolist() == [-np.inf, 0.1, 0.3, 0.6, 0.8, np.inf]
        assert r.tar.tolist() == [1, 1, 0.5, 0.5, 0.5, 0]
        assert r.far.tolist() == [1, 1, 1, 0.5, 0, 0]

    def test_split(self):
        m = ScoreMatrix(["a", "b"], ["x", "y"], [[0.8, 0.3], [0.6, 0.1]], {"a": "x"})
        genuine, impostor = split_scores(m)
        assert genuine.tolist() == [0.8]
        assert sorted(impostor.tolist()) == [0.1, 0.3, 0.6]

    def test_needs_impostors(self):
        with pytest.raises(UndefinedMetricError):
            roc(ScoreMatrix(["a"], ["x"], [[0.5]], {"a": "x"}))

    def test_needs_mates(self):
        with pytest.raises(UndefinedMetricError):
            roc(ScoreMatrix(["a"], ["x", "y"], [[0.5, 0.1]]))

    def test_tar_at_far(self):
        m = ScoreMatrix(["a", "b"], ["x", "y"], [[0.8, 0.3], [0.6, 0.1]], {"a": "x", "b": "y"})
        assert roc(m).tar_at_far(0.0) == 0.5
        assert roc(m).tar_at_far(1.0) == 1.0

    def test_oracle_on_random_matrices(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            m = random_score_matrix(rng)
            if len(m.gallery_ids) == 1 and len(m.probe_ids) == len(m.mated):
                continue
            r = roc(m)
            want = np.array(roc_by_counting(m.scores, m.mate_index().tolist()))
            got = np.column_stack([r.thresholds, r.far, r.tar])
            assert got.shape == want.shape
            assert np.array_equal(got[[0, -1], 0], want[[0, -1], 0])
            assert np.max(np.abs(got[1:-1] - want[1:-1])) <= 1e-12
            assert np.max(np.abs(got[:, 1:] - want[:, 1:])) <= 1e-12


class TestRankTable:
    def test_fixture_values(self):
        # 36 at rank 1, 52 within ranks 2-10, 7 within 11-20, 5 beyond
        ranks = [1] * 36 + [2 + i % 9 for i in range(52)] + [11 + i % 10 for i in range(7)] \
            + [21 + i % 4 for i in range(5)]
        m = matrix_with_ranks(ranks, 30)
        assert sorted(mated_ranks(m).tolist()) == sorted(ranks)
        t = rank_table({"close": m})
        assert t[ALL_CONDITIONS] == pytest.approx((0.36, 0.88, 0.95), abs=1e-12)

    def test_pooled_row_first_and_pooled(self):
        a = matrix_with_ranks([1, 1, 5, 30], 30, prefix="a")
        b = matrix_with_ranks([1, 12, 25, 25, 2, None], 30, prefix="b")
        t = rank_table({"near": a, "far": b})
        assert list(t.rows) == [ALL_CONDITIONS, "near", "far"]
        assert t["near"] == (0.5, 0.75, 0.75)
        assert t["far"] == (0.2, 0.4, 0.6)
        # oracle: pool the rank lists directly
        pooled = [1, 1, 5, 30, 1, 12, 25, 25, 2]
        assert t[ALL_CONDITIONS] == tuple(sum(r <= k for r in pooled) / 9 for k in (1, 10, 20))

    def test_pooled_is_not_mean_of_rows(self):
        a = matrix_with_ranks([1], 5, prefix="a")
        b = matrix_with_ranks([2, 2, 2], 5, prefix="b")
        t = rank_table({"x": a, "y": b})
        assert t[ALL_CONDITIONS][0] == 0.25

    def test_matrix_with_ranks_rejects_impossible(self):
        with pytest.raises(ValueError):
            matrix_with_ranks([4], 3)

    def test_split_by_condition(self):
        m = matrix_with_ranks([1, 2, 3, None], 4)
        cond = dict(zip(m.probe_ids, ["far", "near", "far", "near"]))
        parts = split_by_condition(m, cond)
        assert list(parts) == ["far", "near"]
        assert parts["far"].probe_ids == (m.probe_ids[0], m.probe_ids[2])


class TestCsv:
    def test_cmc_round_trip(self, tmp_path):
        c = cmc_from_ranks([1, 3, 3, 7, 2, 2], 9)
        write_cmc_csv(tmp_path / "c.csv", c)
        assert read_cmc_csv(tmp_path / "c.csv").hit_rates.tobytes() == c.hit_rates.tobytes()

    def test_roc_round_trip(self, tmp_path):
        m = random_score_matrix(np.random.default_rng(4), coarse=False)
        r = roc(m)
        write_roc_csv(tmp_path / "r.csv", r)
        t, f, a = read_roc_csv(tmp_path / "r.csv")
        assert t.tobytes() == r.thresholds.tobytes()
        assert f.tobytes() == r.far.tobytes() and a.tobytes() == r.tar.tobytes()

    def test_rank_table_layout(self, tmp_path):
        t = rank_table({"close": matrix_with_ranks([1, 2, 15, 25], 30)})
        write_rank_table_csv(tmp_path / "t.csv", {"Fused": t})
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == ("model,All Distances rank-1,All Distances rank-10,"
                            "All Distances rank-20,close rank-1,close rank-10,close rank-20")
        assert lines[1] == "Fused,0.25,0.50,0.75,0.25,0.50,0.75"
        assert read_rank_table_csv(tmp_path / "t.csv")["Fused"]["close rank-20"] == "0.75"
