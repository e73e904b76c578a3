"""Tests for ingestion, preprocessing, splitting and sampling."""

import numpy as np
import pytest

from fairpoi.dataset import (
    DROPPED,
    TEST,
    TRAIN,
    VALIDATION,
    CheckIn,
    RawEvents,
    build_store,
    ingest,
    preprocess,
    sample_users,
    stats,
    temporal_split,
)
from fairpoi.errors import DataError


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n")
    return path


def checkin_lines(n, delimiter="\t"):
    return [delimiter.join([f"u{i % 7}", f"p{i % 11}", "40.5", "-73.9", str(1000 + i)]) for i in range(n)]


class TestIngest:
    def test_tab_separated(self, tmp_path):
        path = write_lines(tmp_path / "c.tsv", checkin_lines(20))
        events = ingest(path)
        assert len(events.checkins) == 20
        assert list(events.checkins.columns) == ["user", "poi", "lat", "lon", "ts"]
        assert events.checkins["ts"].dtype == np.int64
        assert events.categories is None

    def test_comma_separated_with_header(self, tmp_path):
        lines = ["user_id,poi_id,lat,lon,ts"] + checkin_lines(10, ",")
        events = ingest(write_lines(tmp_path / "c.csv", lines))
        assert len(events.checkins) == 10
        assert events.checkins.iloc[0]["user"] == "u0"

    def test_few_malformed_lines_are_skipped(self, tmp_path):
        lines = checkin_lines(150)
        lines.insert(9, "u1\tp1\t95.0\t-73.9\t1000")  # latitude out of range, line 10
        events = ingest(write_lines(tmp_path / "c.tsv", lines))
        assert len(events.checkins) == 150
        assert events.malformed_lines["checkins"] == [10]

    def test_too_many_malformed_lines_are_fatal(self, tmp_path):
        lines = checkin_lines(3) + ["u1\tp1\tnot-a-number\t-73.9\t1000"]
        with pytest.raises(DataError, match="lines 4"):
            ingest(write_lines(tmp_path / "c.tsv", lines))

    def test_wrong_field_count_is_malformed(self, tmp_path):
        lines = checkin_lines(3) + ["u1\tp1\t40.0"]
        with pytest.raises(DataError, match="malformed"):
            ingest(write_lines(tmp_path / "c.tsv", lines))

    def test_social_edges_are_undirected_and_deduplicated(self, tmp_path):
        checkins = write_lines(tmp_path / "c.tsv", checkin_lines(10))
        social = write_lines(tmp_path / "s.tsv", ["u1\tu2", "u2\tu1", "u3\tu1", "u3\tu3"])
        events = ingest(checkins, social)
        assert sorted(map(tuple, events.social.to_numpy().tolist())) == [("u1", "u2"), ("u1", "u3")]

    def test_category_names_keep_delimiters(self, tmp_path):
        checkins = write_lines(tmp_path / "c.csv", checkin_lines(10, ","))
        categories = write_lines(tmp_path / "k.csv", ["p1,Food, Drink", "p1,Cafe", "p2,Cafe"])
        events = ingest(checkins, category_file=categories)
        assert events.categories is not None
        assert sorted(events.categories["category"].unique()) == ["Cafe", "Food, Drink"]

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="cannot read"):
            ingest(tmp_path / "absent.tsv")


class TestCheckIn:
    def test_rejects_bad_coordinates(self):
        with pytest.raises(ValueError):
            CheckIn(user="u", poi="p", when=1, lat=91.0, lon=0.0)

    def test_records_round_trip(self, make_events):
        events = make_events([("u1", "p1", 10), ("u1", "p2", 20)])
        assert [c.poi for c in events.records()] == ["p1", "p2"]


class TestPreprocess:
    def test_removes_rare_pois_then_inactive_users(self, make_events):
        rows = [(f"u{u}", "popular", 100 * u + t) for u in range(3) for t in range(3)]
        rows += [("u0", "rare", 999)]
        rows += [("u9", "popular", 5000)]
        store = preprocess(make_events(rows), min_user_checkins=3, min_poi_visits=2)
        assert list(store.poi_ids) == ["popular"]
        assert list(store.user_ids) == ["u0", "u1", "u2"]
        assert store.counts.toarray().ravel().tolist() == [3, 3, 3]

    def test_empty_result_is_diagnosed(self, make_events):
        with pytest.raises(DataError, match="no check-ins survive"):
            preprocess(make_events([("u1", "p1", 1)]), min_user_checkins=5, min_poi_visits=1)

    def test_iterated_filter_is_a_fixed_point(self, make_events):
        rng = np.random.default_rng(1)
        rows = [(f"u{rng.integers(30)}", f"p{rng.integers(40)}", t + 1) for t in range(600)]
        events = make_events(rows)
        store = preprocess(events, min_user_checkins=12, min_poi_visits=8, iterate=True)
        visits = np.asarray(store.counts.sum(axis=0)).ravel()
        activity = np.asarray(store.counts.sum(axis=1)).ravel()
        assert visits.min() >= 8
        assert activity.min() >= 12

    def test_iterated_filter_is_idempotent(self, make_events):
        rng = np.random.default_rng(1)
        rows = [(f"u{rng.integers(30)}", f"p{rng.integers(40)}", t + 1) for t in range(600)]
        events = make_events(rows, social=[("u1", "u2"), ("u3", "u4")])
        once = preprocess(events, min_user_checkins=12, min_poi_visits=8, iterate=True)
        kept = once.checkins.assign(
            user=once.user_ids[once.checkins["user"].to_numpy()],
            poi=once.poi_ids[once.checkins["poi"].to_numpy()],
        )[["user", "poi", "lat", "lon", "ts"]]
        twice = preprocess(RawEvents(kept, events.social), min_user_checkins=12, min_poi_visits=8, iterate=True)
        assert list(twice.user_ids) == list(once.user_ids)
        assert list(twice.poi_ids) == list(once.poi_ids)
        assert (twice.counts != once.counts).nnz == 0
        assert np.array_equal(twice.social, once.social)

    def test_ids_are_densified_in_sorted_order(self, make_events):
        store = preprocess(make_events([("b", "y", 1), ("a", "x", 2), ("b", "x", 3)]), 1, 1)
        assert list(store.user_ids) == ["a", "b"]
        assert list(store.poi_ids) == ["x", "y"]
        assert store.user_index["b"] == 1


class TestTemporalSplit:
    def test_seventy_ten_twenty(self, make_events):
        rows = [("u1", f"p{t:02d}", t) for t in range(1, 11)]
        store = temporal_split(build_store(make_events(rows).checkins))
        poi = {pid: i for i, pid in enumerate(store.poi_ids)}
        split = store.require_split()
        assert sorted(split.train.indices.tolist()) == [poi[f"p{t:02d}"] for t in range(1, 8)]
        assert split.validation.indices.tolist() == [poi["p08"]]
        assert sorted(split.test.indices.tolist()) == [poi["p09"], poi["p10"]]
        assert split.boundaries[0].tolist() == [7, 8, 9]

    def test_revisited_poi_stays_in_first_partition(self, make_events):
        rows = [("u1", f"p{t}", t) for t in range(1, 9)] + [("u1", "p1", 9), ("u1", "p9", 10)]
        store = temporal_split(build_store(make_events(rows).checkins))
        split = store.require_split()
        p1 = store.poi_index["p1"]
        assert split.train[0, p1] == 1
        assert split.test[0, p1] == 0
        assert (store.checkins["part"] == DROPPED).sum() == 1

    def test_users_with_few_pois_are_flagged(self, make_events):
        rows = [("u1", "p1", 1), ("u1", "p2", 2), ("u1", "p1", 3)]
        rows += [("u2", f"p{t}", t) for t in range(1, 11)]
        store = temporal_split(build_store(make_events(rows).checkins))
        split = store.require_split()
        assert split.flagged_users.tolist() == [0]
        assert split.train[0].sum() == 3
        assert split.validation[0].nnz == 0 and split.test[0].nnz == 0

    def test_partitions_cover_distinct_pois_without_overlap(self, make_events):
        rng = np.random.default_rng(4)
        rows = [(f"u{rng.integers(8)}", f"p{rng.integers(25)}", int(t)) for t in range(1, 400)]
        store = temporal_split(build_store(make_events(rows).checkins))
        split = store.require_split()
        for u in range(store.n_users):
            parts = [set(m[u].indices.tolist()) for m in (split.train, split.validation, split.test)]
            assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
            assert set().union(*parts) == set(store.counts[u].indices.tolist())

    def test_seen_and_relevant(self, make_store):
        store = make_store([[1, 0, 0]], [[0, 1, 0]], [[0, 0, 1]])
        assert sorted(store.seen("test").indices.tolist()) == [0, 1]
        assert store.seen("validation").indices.tolist() == [0]
        assert store.relevant("validation").indices.tolist() == [1]
        with pytest.raises(ValueError):
            store.seen("train")

    def test_train_history_is_time_ordered(self, make_events):
        rows = [("u1", "p3", 1), ("u1", "p1", 2), ("u1", "p2", 3), ("u1", "p4", 4), ("u1", "p5", 5)]
        rows += [("u1", "p6", 6), ("u1", "p7", 7), ("u1", "p8", 8), ("u1", "p9", 9), ("u1", "p0", 10)]
        store = temporal_split(build_store(make_events(rows).checkins))
        names = [store.poi_ids[i] for i in store.train_history[0]]
        assert names == ["p3", "p1", "p2", "p4", "p5", "p6", "p7"]

    def test_parts_are_labelled(self, make_events):
        rows = [("u1", f"p{t}", t) for t in range(1, 11)]
        store = temporal_split(build_store(make_events(rows).checkins))
        assert store.checkins["part"].tolist() == [TRAIN] * 7 + [VALIDATION] + [TEST] * 2


class TestSampling:
    def test_keeps_floor_of_fraction(self, random_store):
        store = random_store(n_users=10)
        sampled = sample_users(store, 0.35, seed=1)
        assert sampled.n_users == 3
        assert sampled.n_pois == store.n_pois

    def test_same_seed_same_users(self, random_store):
        store = random_store(n_users=20)
        a = sample_users(store, 0.5, seed=9)
        b = sample_users(store, 0.5, seed=9)
        assert a.user_ids.tolist() == b.user_ids.tolist()
        assert (a.train != b.train).nnz == 0

    def test_rows_follow_kept_users(self, random_store):
        store = random_store(n_users=20)
        sampled = sample_users(store, 0.5, seed=2)
        for new, uid in enumerate(sampled.user_ids):
            old = store.user_index[uid]
            assert sampled.train[new].indices.tolist() == store.train[old].indices.tolist()

    def test_full_fraction_is_identity(self, random_store):
        store = random_store()
        assert sample_users(store, 1.0, seed=0) is store

    def test_rejects_empty_sample(self, random_store):
        with pytest.raises(DataError):
            sample_users(random_store(n_users=3), 0.1, seed=0)


def test_stats(make_store):
    store = make_store([[2, 1, 0], [0, 1, 0]], social=[(0, 1)])
    summary = stats(store)
    assert (summary.n_users, summary.n_pois, summary.n_checkins, summary.n_social_links) == (2, 3, 4, 1)
    assert summary.density == pytest.approx(4 / 6)
    assert summary.as_dict()["n_categories"] is None
