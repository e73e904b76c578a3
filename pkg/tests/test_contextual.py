"""Tests for the contextual scorers and the fused GeoSoCa / LORE recommenders."""

import numpy as np
import pytest
import scipy.sparse as sp

from fairpoi.contextual import (
    EARTH_RADIUS_KM,
    build_geosoca,
    build_kde,
    build_lore,
    build_transitions,
    categorical_scores,
    empirical_cdf,
    fuse,
    haversine,
    recency_weights,
    scott_bandwidth,
    sequential_score,
    social_scores,
    transition_model,
)
from fairpoi.errors import DataError, MissingCategoriesError
from fairpoi.models import recommend, train_mostpop


class TestGeographic:
    def test_one_degree_of_longitude_on_the_equator(self):
        assert haversine(0.0, 0.0, 0.0, 1.0) == pytest.approx(111.195, abs=1e-3)

    def test_single_center_peak(self):
        kde = build_kde(np.array([[40.0, -74.0]]), bandwidth=2.0)
        assert kde.density(40.0, -74.0)[0] == pytest.approx(1.0 / (2.0 * np.pi * 4.0))

    def test_far_field_vanishes(self):
        kde = build_kde(np.array([[40.0, -74.0], [40.01, -74.02]]), bandwidth=2.0)
        assert kde.density(50.0, -74.0)[0] < 1e-12

    def test_scott_rule_uses_distinct_centers(self):
        a, b, c = [40.0, -74.0], [40.05, -74.02], [39.98, -73.95]
        assert scott_bandwidth(np.array([a, a, b, c, c])) == pytest.approx(scott_bandwidth(np.array([a, b, c])))
        assert scott_bandwidth(np.array([a, a])) == 0.1

    def test_adaptive_bandwidths_respect_the_floor(self):
        centers = np.array([[40.0, -74.0]] * 5 + [[40.5, -74.5]])
        kde = build_kde(centers, bandwidth=0.2, adaptivity=1.0, min_bandwidth=0.15)
        assert np.all(kde.center_bandwidths >= 0.15)
        assert kde.center_bandwidths[-1] > kde.center_bandwidths[0]

    def test_density_integrates_to_one(self):
        centers = np.array([[40.0, -74.0], [40.01, -74.01], [39.99, -73.99]])
        kde = build_kde(centers, bandwidth=1.0, adaptivity=0.5)
        step = 0.002
        lats = np.arange(39.9, 40.1 + step / 2, step)
        lons = np.arange(-74.13, -73.87 + step / 2, step)
        grid_lat, grid_lon = np.meshgrid(lats, lons, indexing="ij")
        density = kde.density(grid_lat.ravel(), grid_lon.ravel()).reshape(grid_lat.shape)
        cell = (EARTH_RADIUS_KM * np.radians(step)) ** 2 * np.cos(np.radians(grid_lat))
        assert float(np.sum(density * cell)) == pytest.approx(1.0, rel=0.05)

    def test_rejects_empty_centers(self):
        with pytest.raises(ValueError):
            build_kde(np.empty((0, 2)))


class TestCalibration:
    def test_empirical_cdf(self):
        calibrated = empirical_cdf(sp.csr_matrix([[1.0, 0.0, 2.0], [4.0, 0.0, 0.0]]))
        assert calibrated.toarray() == pytest.approx(np.array([[1 / 3, 0.0, 2 / 3], [1.0, 0.0, 0.0]]))

    def test_ties_share_the_upper_value(self):
        assert empirical_cdf(sp.csr_matrix([[2.0, 2.0, 1.0]])).toarray()[0] == pytest.approx([1.0, 1.0, 1 / 3])

    def test_social_sums_friend_visits(self, make_store):
        store = make_store([[1, 0, 0], [0, 2, 3], [0, 0, 1]], social=[(0, 1)])
        assert social_scores(store).toarray() == pytest.approx(
            np.array([[0.0, 2 / 3, 1.0], [1 / 3, 0.0, 0.0], [0.0, 0.0, 0.0]])
        )

    def test_no_friends(self, make_store):
        assert social_scores(make_store([[1, 2], [3, 0]])).nnz == 0


class TestCategorical:
    def test_missing_categories(self, make_store):
        store = make_store([[1, 2]])
        with pytest.raises(MissingCategoriesError):
            categorical_scores(store)
        assert issubclass(MissingCategoriesError, DataError)
        with pytest.raises(MissingCategoriesError):
            build_geosoca(store)

    def test_single_category_follows_popularity(self, make_store):
        store = make_store([[1, 0], [0, 3]], categories={0: ["A"], 1: ["A"]})
        assert categorical_scores(store).toarray() == pytest.approx(np.array([[0.5, 1.0], [0.5, 1.0]]))

    def test_uncategorized_poi_scores_zero(self, make_store):
        store = make_store([[1, 2, 1]], categories={0: ["A"], 1: ["A", "B"]})
        scores = categorical_scores(store).toarray()
        assert scores[0, 2] == 0.0
        assert scores[0, 1] > scores[0, 0] > 0.0


class TestSequential:
    def test_transition_probabilities(self):
        counts = sp.csr_matrix(np.array([[0, 3, 1], [0, 0, 0], [0, 0, 0]]))
        model = transition_model(counts)
        assert model.probabilities.toarray()[0] == pytest.approx([0.0, 0.75, 0.25])
        scaled = transition_model(counts * 5)
        assert np.allclose(scaled.probabilities.toarray(), model.probabilities.toarray())

    def test_recency_weights(self):
        assert recency_weights(2) == pytest.approx([1 / 3, 2 / 3])
        assert recency_weights(3, base=1.0) == pytest.approx([1 / 3] * 3)

    def test_sink_state_contributes_nothing(self):
        counts = sp.csr_matrix(np.array([[0, 3, 1, 0], [0] * 4, [0] * 4, [0] * 4]))
        scores = sequential_score(transition_model(counts), [0, 3])
        assert scores == pytest.approx([0.0, 0.25, 1 / 12, 0.0])

    def test_empty_history(self):
        model = transition_model(sp.csr_matrix((2, 2)))
        assert sequential_score(model, []) is None

    def test_build_skips_repeats_and_user_boundaries(self, make_store):
        store = make_store([[2, 1, 0], [0, 0, 1]])
        model = build_transitions(store)
        assert model.counts.toarray().tolist() == [[0, 1, 0], [0, 0, 0], [0, 0, 0]]

    def test_max_gap(self, make_store):
        store = make_store([[1, 1, 0]])
        assert build_transitions(store, max_gap=5).counts.nnz == 0
        assert build_transitions(store, max_gap=10).counts.nnz == 1


class TestFuse:
    def test_weighted_product(self):
        geo = (np.array([[0.5, 1.0]]), np.array([False]))
        social = (np.array([[1.0, 0.5]]), np.array([False]))
        fused, all_neutral, neutralized = fuse([geo, social], [1.0, 2.0])
        assert fused == pytest.approx(np.array([[0.5, 0.25]]))
        assert all_neutral.tolist() == [False]
        assert neutralized == [0, 0]

    def test_zero_annihilates(self):
        a = (np.array([[0.0, 0.3, 0.9]]), np.array([False]))
        b = (np.array([[5.0, 0.2, 0.1]]), np.array([False]))
        fused, _, _ = fuse([a, b], [1.0, 1.0])
        assert fused[0, 0] == 0.0

    def test_rescaling_a_component_keeps_the_order(self):
        rng = np.random.default_rng(0)
        a = rng.random((3, 6))
        b = rng.random((3, 6))
        keep = np.zeros(3, dtype=bool)
        base, _, _ = fuse([(a, keep), (b, keep)], [1.0, 1.0])
        scaled, _, _ = fuse([(a * 7.0, keep), (b, keep)], [1.0, 1.0])
        assert np.array_equal(np.argsort(base, axis=1), np.argsort(scaled, axis=1))

    def test_neutral_and_empty_rows_become_one(self):
        a = (np.array([[0.2, 0.4], [0.0, 0.0]]), np.array([True, False]))
        b = (np.array([[0.0, 0.0], [0.3, 0.6]]), np.array([False, False]))
        fused, all_neutral, neutralized = fuse([a, b], [1.0, 1.0])
        assert fused == pytest.approx(np.array([[1.0, 1.0], [0.3, 0.6]]))
        assert all_neutral.tolist() == [True, False]
        assert neutralized == [2, 1]

    def test_weight_count_must_match(self):
        with pytest.raises(ValueError):
            fuse([(np.ones((1, 2)), np.array([False]))], [1.0, 1.0])


class TestFusedModels:
    def test_slates_exclude_seen_items(self, random_store):
        categories = {i: ["A" if i % 2 else "B"] for i in range(20)}
        store = random_store(social=[(0, 1), (1, 2), (3, 4)], categories=categories)
        seen = store.seen("test")
        for model in (build_geosoca(store), build_lore(store)):
            for user, slate in recommend(model, store, k=5).items():
                assert not set(slate.items.tolist()) & set(seen[user].indices.tolist())

    def test_cold_user_falls_back_to_popularity(self, make_store):
        store = make_store([[1, 2, 0, 0], [0, 0, 0, 0]], categories={i: ["A"] for i in range(4)})
        model = build_geosoca(store)
        scores = model.score(np.array([1]))
        assert scores[0].tolist() == train_mostpop(store).item_scores.tolist()
        assert model.flagged["fallback"] == {1}
        assert model.flagged["geo"] == {1}

    def test_transition_lifts_successor(self, make_store):
        store = make_store([[1, 1, 0, 0], [1, 0, 0, 0]])
        model = build_lore(store)
        slates = recommend(model, store, k=3)
        assert slates[1].items[0] == 1
        assert model.flagged["social"] == {0, 1}

    def test_friendless_user_keeps_other_evidence(self, make_store):
        store = make_store([[1, 1, 0, 0], [0, 1, 1, 0], [1, 0, 0, 0]], social=[(0, 1)])
        assert social_scores(store)[2].nnz == 0
        model = build_lore(store)
        scores = model.score(np.array([2]))
        assert scores[0, 1] > 0.0
        assert 2 in model.flagged["social"]
        assert 2 not in model.flagged.get("fallback", set())

    def test_component_frame(self, random_store):
        categories = {i: ["A"] for i in range(20)}
        store = random_store(social=[(0, 1), (0, 2)], categories=categories)
        model = build_geosoca(store)
        frame = model.component_frame(np.array([0, 0, 1]), np.array([3, 5, 7]))
        assert list(frame.columns) == ["user", "poi", "geo", "social", "categorical", "fused"]
        assert len(frame) == 3
        assert frame["poi"].tolist() == [3, 5, 7]
