import json

import numpy as np
import pytest

from gm_data import (
    OUTLIER_LABEL,
    Dataset,
    SyntheticConfig,
    accuracy,
    admissible_pairs,
    admissible_triples,
    common_labels,
    f1,
    filter_common,
    generate,
    load_dataset,
    save_dataset,
)
from gm_instances import Matching
from utils.errors import ConfigError, DatasetFormatError, GenerationError, InstanceError


def m(pairs, n1, n2):
    return Matching(frozenset(pairs), n1, n2)


@pytest.fixture
def trio(make_set, rng):
    def build(set_id, labels):
        n = len(labels)
        return make_set(set_id, rng.uniform(size=(n, 2)), rng.normal(size=(n, 2)), labels=labels)

    return build


class TestSyntheticConfig:
    def test_rejects_bad_rates(self):
        with pytest.raises(ConfigError):
            SyntheticConfig(occlusion_rate=1.5)
        with pytest.raises(ConfigError):
            SyntheticConfig(outlier_rate=-0.1)

    def test_rejects_visible_points_above_universe(self):
        with pytest.raises(ConfigError):
            SyntheticConfig(universe_size=5, visible_points=6)

    def test_visible_points_excludes_occlusion(self):
        with pytest.raises(ConfigError, match="occlusion_rate"):
            SyntheticConfig(visible_points=8, occlusion_rate=0.2)
        assert SyntheticConfig(visible_points=8).occlusion_rate == 0.0

    def test_total_feature_dim(self):
        assert SyntheticConfig(feature_dim=16, clutter_dim=8).total_feature_dim == 24


class TestGenerate:
    def test_full_visibility_gives_label_permutations(self, small_dataset):
        assert len(small_dataset) == 5
        for ks in small_dataset.sets:
            assert ks.n == 6
            assert sorted(ks.universe_labels) == list(range(6))
            assert ks.edges

    def test_labels_are_shuffled(self, small_dataset):
        orders = {ks.universe_labels for ks in small_dataset.sets}
        assert len(orders) > 1

    def test_deterministic(self, tmp_path):
        cfg = SyntheticConfig(universe_size=7, num_sets=4, feature_dim=3, occlusion_rate=0.2, rng_seed=5)
        save_dataset(tmp_path / "a.json", generate(cfg), cfg)
        save_dataset(tmp_path / "b.json", generate(cfg), cfg)
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_seed_changes_data(self):
        a = generate(SyntheticConfig(universe_size=5, num_sets=3, feature_dim=2, rng_seed=1))
        b = generate(SyntheticConfig(universe_size=5, num_sets=3, feature_dim=2, rng_seed=2))
        assert not np.array_equal(a.sets[0].points, b.sets[0].points)

    def test_noise_free_features_agree_per_label(self, clean_dataset):
        by_label = {}
        for ks in clean_dataset.sets:
            for row, label in enumerate(ks.universe_labels):
                by_label.setdefault(label, []).append(ks.features[row])
        for rows in by_label.values():
            assert all(np.array_equal(rows[0], row) for row in rows[1:])

    def test_visible_points(self):
        ds = generate(SyntheticConfig(universe_size=8, num_sets=6, feature_dim=2, visible_points=5, rng_seed=4))
        assert all(ks.n == 5 for ks in ds.sets)

    def test_outliers_are_labelled(self):
        ds = generate(SyntheticConfig(universe_size=6, num_sets=6, feature_dim=2, outlier_rate=0.5, rng_seed=8))
        labels = [v for ks in ds.sets for v in ks.universe_labels]
        assert OUTLIER_LABEL in labels
        for ks in ds.sets:
            real = [v for v in ks.universe_labels if v != OUTLIER_LABEL]
            assert sorted(real) == list(range(6))

    def test_clutter_widens_features(self):
        ds = generate(SyntheticConfig(universe_size=5, num_sets=3, feature_dim=4, clutter_dim=3, rng_seed=2))
        assert all(ks.dim == 7 for ks in ds.sets)

    def test_full_occlusion_fails(self):
        with pytest.raises(GenerationError):
            generate(SyntheticConfig(universe_size=5, num_sets=3, occlusion_rate=1.0, max_retries=5))

    def test_too_few_visible_landmarks_fails(self):
        with pytest.raises(GenerationError):
            generate(SyntheticConfig(universe_size=5, num_sets=3, visible_points=2, min_common=3, max_retries=3))

    def test_overlap_guarantee_is_per_set_and_per_triple(self):
        ds = generate(SyntheticConfig(universe_size=10, num_sets=12, occlusion_rate=0.5, feature_dim=2, rng_seed=5))
        assert all(len(common_labels(ks)) >= 3 for ks in ds.sets)
        assert any(True for _ in admissible_triples(ds, 3))
        pairs = list(admissible_pairs(ds, 3))
        assert 0 < len(pairs) < len(ds) * (len(ds) - 1) // 2


class TestDataset:
    def test_duplicate_ids(self, trio):
        a = trio("a", (0, 1, 2))
        with pytest.raises(InstanceError):
            Dataset((a, a), 3)

    def test_label_out_of_universe(self, trio):
        with pytest.raises(InstanceError):
            Dataset((trio("a", (0, 1, 5)),), 3)

    def test_by_id(self, small_dataset):
        first = small_dataset.sets[0]
        assert small_dataset.by_id(first.set_id) is first
        with pytest.raises(KeyError):
            small_dataset.by_id("missing")


class TestSelection:
    def test_common_labels_ignore_outliers(self, trio):
        a = trio("a", (0, 1, OUTLIER_LABEL))
        b = trio("b", (OUTLIER_LABEL, 1, 0))
        assert common_labels(a, b) == [0, 1]

    def test_admissible_counts(self, small_dataset):
        assert len(list(admissible_triples(small_dataset))) == 10
        assert len(list(admissible_pairs(small_dataset))) == 10

    def test_minimum_overlap(self, trio):
        ds = Dataset((trio("a", (0, 1, 2)), trio("b", (0, 1, 3)), trio("c", (0, 1, 2))), 4)
        assert list(admissible_triples(ds, min_common=2)) == [(0, 1, 2)]
        assert list(admissible_triples(ds, min_common=3)) == []
        assert list(admissible_pairs(ds, min_common=3)) == [(0, 2)]

    def test_filter_common(self, trio):
        kept = filter_common([trio("a", (0, 1, 2, 3)), trio("b", (4, 3, 2, 1))])
        assert [sorted(ks.universe_labels) for ks in kept] == [[1, 2, 3], [1, 2, 3]]
        assert all(ks.n == 3 and len(ks.edges) == 3 for ks in kept)


class TestMetrics:
    def test_perfect_prediction(self, trio):
        a, b = trio("a", (0, 1, 2)), trio("b", (2, 0, 1))
        pred = m({(0, 1), (1, 2), (2, 0)}, 3, 3)
        assert accuracy(pred, a, b) == 1.0
        assert f1(pred, a, b) == 1.0

    def test_empty_prediction(self, trio):
        a, b = trio("a", (0, 1, 2)), trio("b", (0, 1, 2))
        assert accuracy(m(set(), 3, 3), a, b) == 0.0
        assert f1(m(set(), 3, 3), a, b) == 0.0

    def test_half_right(self, trio):
        a, b = trio("a", (0, 1, 2)), trio("b", (0, 1, 3))
        pred = m({(0, 0), (2, 2)}, 3, 3)
        assert accuracy(pred, a, b) == 0.5
        assert f1(pred, a, b) == pytest.approx(0.5)

    def test_vacuous_case(self, trio):
        a, b = trio("a", (0, 1, 2)), trio("b", (3, 4, 5))
        assert accuracy(m(set(), 3, 3), a, b) == 1.0
        assert f1(m(set(), 3, 3), a, b) == 1.0

    def test_outlier_pairs_are_never_correct(self, trio):
        a, b = trio("a", (0, OUTLIER_LABEL, 2)), trio("b", (0, OUTLIER_LABEL, 2))
        assert accuracy(m({(1, 1)}, 3, 3), a, b) == 0.0

    def test_missing_labels(self, make_set, rng):
        a = make_set("a", rng.uniform(size=(3, 2)), rng.normal(size=(3, 2)))
        with pytest.raises(InstanceError):
            accuracy(m(set(), 3, 3), a, a)

    def test_bounded(self, small_dataset, rng):
        a, b = small_dataset.sets[:2]
        for _ in range(20):
            cols = rng.permutation(b.n)
            pred = m({(i, int(cols[i])) for i in range(a.n) if rng.random() < 0.5}, a.n, b.n)
            assert 0.0 <= accuracy(pred, a, b) <= 1.0
            assert 0.0 <= f1(pred, a, b) <= 1.0


class TestFiles:
    def test_round_trip(self, tmp_path, small_dataset):
        path = tmp_path / "ds.json"
        save_dataset(path, small_dataset)
        loaded = load_dataset(path)
        assert loaded.universe_size == small_dataset.universe_size
        for a, b in zip(loaded.sets, small_dataset.sets):
            assert a.set_id == b.set_id
            assert a.points.tobytes() == b.points.tobytes()
            assert a.features.tobytes() == b.features.tobytes()
            assert a.edges == b.edges
            assert a.universe_labels == b.universe_labels

    def test_truncated(self, tmp_path, small_dataset):
        path = tmp_path / "ds.json"
        save_dataset(path, small_dataset)
        path.write_text(path.read_text()[:200])
        with pytest.raises(DatasetFormatError, match="line"):
            load_dataset(path)

    def test_unknown_schema_version(self, tmp_path, small_dataset):
        path = tmp_path / "ds.json"
        save_dataset(path, small_dataset)
        content = json.loads(path.read_text())
        content["schema_version"] = 7
        path.write_text(json.dumps(content))
        with pytest.raises(DatasetFormatError, match="schema_version"):
            load_dataset(path)

    def test_missing_field_is_located(self, tmp_path, small_dataset):
        path = tmp_path / "ds.json"
        save_dataset(path, small_dataset)
        content = json.loads(path.read_text())
        del content["sets"][1]["features"]
        path.write_text(json.dumps(content))
        with pytest.raises(DatasetFormatError, match=r"sets\[1\]"):
            load_dataset(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetFormatError):
            load_dataset(tmp_path / "nope.json")

    @pytest.mark.parametrize(
        "field, value, located",
        [
            ("labels", "x", r"sets\[0\]\.labels"),
            ("labels", 1.5, r"sets\[0\]\.labels"),
            ("edges", ["a", "b"], r"sets\[0\]\.edges"),
            ("edges", [0], r"sets\[0\]\.edges"),
        ],
    )
    def test_non_integer_entries_are_located(self, tmp_path, small_dataset, field, value, located):
        path = tmp_path / "ds.json"
        save_dataset(path, small_dataset)
        content = json.loads(path.read_text())
        content["sets"][0][field][0] = value
        path.write_text(json.dumps(content))
        with pytest.raises(DatasetFormatError, match=located):
            load_dataset(path)
