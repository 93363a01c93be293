from dataclasses import replace

import numpy as np
import pytest

from bidb.domain import cosine
from bidb.errors import ConfigError
from bidb.synthgen import (
    CONDITIONS,
    SyntheticIdentity,
    WorldConfig,
    annotate,
    generate_world,
    make_maps,
    read_annotations,
    write_annotations,
    write_world,
)
from bidb.templates import read_manifest

SMALL = WorldConfig(n_train=6, n_gallery=5, n_probe=7, n_mated=4, feature_dim=96,
                    frames_per_video=7)


def quiet(cfg):
    return replace(cfg, nuisance_scale=0.0, isotropic_noise=0.0, clothing_scale=0.0,
                   frame_noise=0.0)


class TestConfig:
    @pytest.mark.parametrize("field,value", [
        ("n_train", 1), ("n_gallery", 0), ("frame_noise", -0.1), ("feature_dim", 10),
        ("strengths", (1.0,)), ("gallery_condition", "moon"), ("n_mated", 99),
    ])
    def test_invalid_names_field(self, field, value):
        with pytest.raises(ConfigError) as err:
            replace(SMALL, **{field: value}).validate()
        assert err.value.field in (field, "n_mated")

    def test_from_mapping_types(self):
        with pytest.raises(ConfigError, match="n_train"):
            WorldConfig.from_mapping({"n_train": "ten"})
        with pytest.raises(ConfigError, match="bogus"):
            WorldConfig.from_mapping({"bogus": 1})
        cfg = WorldConfig.from_mapping({"frame_noise": 1, "strengths": [0, 1, 2, 3]})
        assert cfg.frame_noise == 1.0 and cfg.strengths == (0.0, 1.0, 2.0, 3.0)

    def test_mapping_round_trip(self):
        assert WorldConfig.from_mapping(SMALL.to_mapping()) == SMALL.validate()


class TestMaps:
    def test_orthonormal_subspaces(self):
        maps = make_maps(SMALL)
        q = np.hstack([maps.attr, maps.idio, maps.clothing])
        np.testing.assert_allclose(q.T @ q, np.eye(q.shape[1]), atol=1e-12)

    def test_nuisance_unit_columns(self):
        np.testing.assert_allclose(np.linalg.norm(make_maps(SMALL).nuisance, axis=0), 1.0)


class TestWorld:
    def test_counts(self):
        w = generate_world(SMALL)
        assert len(w.train_media) == 6 * 4
        assert len(w.gallery_media) == 5 * 2
        assert len(w.probe_media) == 7 * len(CONDITIONS)
        assert len(w.mated_map()) == 4 * len(CONDITIONS)
        assert set(w.mated_map().values()) <= set(w.gallery_ids)
        assert w.train_media[0].frame_count == 7

    def test_deterministic(self):
        a, b = generate_world(SMALL), generate_world(SMALL)
        for x, y in zip(a.train_media + a.probe_media, b.train_media + b.probe_media):
            assert x.media_id == y.media_id and x.features.tobytes() == y.features.tobytes()

    def test_seed_changes_world(self):
        a = generate_world(SMALL)
        b = generate_world(replace(SMALL, seed=1))
        assert not np.array_equal(a.probe_media[0].features, b.probe_media[0].features)

    def test_noise_free_collapses(self):
        w = generate_world(quiet(SMALL))
        by_id = {}
        for m in w.train_media + w.gallery_media + w.probe_media:
            for row in m.features:
                by_id.setdefault(m.identity_id, []).append(row)
        for rows in by_id.values():
            assert np.max(np.abs(np.array(rows) - rows[0])) == 0.0

    def test_attributes_recoverable_by_least_squares(self):
        cfg = quiet(replace(SMALL, idio_scale=0.0))
        w = generate_world(cfg)
        m = w.train_media[0]
        a, *_ = np.linalg.lstsq(w.maps.attr, m.features[0], rcond=None)
        assert np.max(np.abs(a - w.identities[m.identity_id].attributes)) < 1e-6

    def test_genuine_similarity_falls_with_condition(self):
        cfg = replace(SMALL, n_gallery=40, n_probe=40, n_mated=40, feature_dim=256)
        w = generate_world(cfg)
        gallery = {m.identity_id: m.features.mean(axis=0) for m in w.gallery_media
                   if m.kind == "image"}
        means = []
        for cond in CONDITIONS:
            sims = [cosine(p.features.mean(axis=0), gallery[p.identity_id])
                    for p in w.probe_media if p.condition == cond]
            means.append(np.mean(sims))
        assert all(a > b for a, b in zip(means, means[1:]))


class TestAnnotate:
    ident = SyntheticIdentity("x", np.linspace(-1, 1, 30), np.zeros(4), np.zeros((2, 2)))

    def test_noise_free(self):
        np.testing.assert_allclose(annotate(self.ident, 20, 0.0, 0), self.ident.attributes,
                                   rtol=0, atol=1e-15)

    def test_error_within_four_standard_errors(self):
        sigma, k = 0.5, 25
        bound = 4 * sigma / np.sqrt(k)
        errs = np.array([annotate(self.ident, k, sigma, s) - self.ident.attributes
                         for s in range(200)])
        assert np.mean(np.abs(errs) <= bound) >= 0.99

    def test_empirical_spread(self):
        sigma, k = 0.5, 16
        errs = np.array([annotate(self.ident, k, sigma, s) - self.ident.attributes
                         for s in range(400)])
        assert np.std(errs) == pytest.approx(sigma / np.sqrt(k), rel=0.05)

    def test_needs_annotators(self):
        with pytest.raises(ConfigError):
            annotate(self.ident, 0, 0.1, 0)


class TestFiles:
    def test_annotations_round_trip(self, tmp_path):
        ann = generate_world(SMALL).annotations
        write_annotations(tmp_path / "a.csv", ann)
        back = read_annotations(tmp_path / "a.csv")
        assert list(back) == sorted(ann)
        for k in ann:
            assert back[k].tobytes() == ann[k].tobytes()

    def test_write_world(self, tmp_path):
        w = generate_world(SMALL)
        write_world(w, tmp_path)
        probes = read_manifest(tmp_path / "probe.csv")
        assert [m.media_id for m in probes] == [m.media_id for m in w.probe_media]
        assert all(a.features.tobytes() == b.features.tobytes()
                   for a, b in zip(probes, w.probe_media))
