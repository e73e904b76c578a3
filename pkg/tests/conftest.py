"""Pytest configuration and fixtures for fairpoi tests."""

import numpy as np
import pandas as pd
import pytest
import scipy.sparse as sp

from fairpoi.config import config_from_mapping
from fairpoi.dataset import TEST, TRAIN, VALIDATION, CheckIn, InteractionStore, RawEvents, Split
from fairpoi.synthetic import generate_lbsn, write_lbsn


@pytest.fixture
def make_events():
    """Return a factory for RawEvents from (user, poi, ts) rows."""

    def _events(rows, social=(), categories=None, coords=None):
        pois = sorted({poi for _, poi, _ in rows})
        coords = coords or {poi: (40.0 + 0.01 * i, -74.0 + 0.01 * i) for i, poi in enumerate(pois)}
        checkins = [CheckIn(user=u, poi=p, when=t, lat=coords[p][0], lon=coords[p][1]) for u, p, t in rows]
        return RawEvents.from_records(checkins, social, categories)

    return _events


@pytest.fixture
def make_store():
    """Return a factory for a split InteractionStore from dense count matrices.

    Check-ins are laid out per user in time as train, then validation, then
    test, each block in POI order. ``coords`` defaults to a small diagonal
    grid; ``categories`` maps POI index to category names.
    """

    def _store(train, validation=None, test=None, coords=None, social=(), categories=None) -> InteractionStore:
        train = np.asarray(train, dtype=np.int64)
        n_users, n_pois = train.shape
        validation = np.zeros_like(train) if validation is None else np.asarray(validation, dtype=np.int64)
        test = np.zeros_like(train) if test is None else np.asarray(test, dtype=np.int64)
        if coords is None:
            coords = np.column_stack([40.0 + 0.01 * np.arange(n_pois), -74.0 + 0.01 * np.arange(n_pois)])
        coords = np.asarray(coords, dtype=float)

        rows = []
        for u in range(n_users):
            ts = 1_000
            for part, matrix in ((TRAIN, train), (VALIDATION, validation), (TEST, test)):
                for i in range(n_pois):
                    for _ in range(matrix[u, i]):
                        ts += 10
                        rows.append((u, i, ts, coords[i, 0], coords[i, 1], part))
        frame = pd.DataFrame(rows, columns=["user", "poi", "ts", "lat", "lon", "part"])
        frame = frame.astype({"user": np.int64, "poi": np.int64, "ts": np.int64, "part": np.int8})

        poi_categories = category_names = None
        if categories is not None:
            category_names = np.array(sorted({c for names in categories.values() for c in names}), dtype=object)
            lookup = {name: j for j, name in enumerate(category_names)}
            pairs = [(i, lookup[c]) for i, names in categories.items() for c in names]
            poi_categories = sp.csr_matrix(
                (np.ones(len(pairs)), ([p[0] for p in pairs], [p[1] for p in pairs])),
                shape=(n_pois, len(category_names)),
            )

        edges = np.array(sorted({tuple(sorted(e)) for e in social}), dtype=np.int64).reshape(-1, 2)
        split = Split(
            train=sp.csr_matrix(train),
            validation=sp.csr_matrix(validation),
            test=sp.csr_matrix(test),
            boundaries=np.full((n_users, 3), -1, dtype=np.int64),
            flagged_users=np.empty(0, dtype=np.int64),
        )
        return InteractionStore(
            user_ids=np.array([f"u{u:02d}" for u in range(n_users)], dtype=object),
            poi_ids=np.array([f"p{i:02d}" for i in range(n_pois)], dtype=object),
            checkins=frame,
            counts=sp.csr_matrix(train + validation + test),
            social=edges,
            poi_coords=coords,
            poi_categories=poi_categories,
            category_names=category_names,
            split=split,
        )

    return _store


@pytest.fixture
def random_store(make_store):
    """Return a factory for seeded random stores with disjoint partitions."""

    def _random(n_users=12, n_pois=20, density=0.3, seed=0, **kwargs):
        rng = np.random.default_rng(seed)
        visited = rng.random((n_users, n_pois)) < density
        part = rng.integers(0, 3, size=(n_users, n_pois))
        counts = rng.integers(1, 4, size=(n_users, n_pois))
        matrices = [np.where(visited & (part == p), counts, 0) for p in (TRAIN, VALIDATION, TEST)]
        return make_store(*matrices, **kwargs)

    return _random


@pytest.fixture
def synthetic_dir(tmp_path):
    """Write a small synthetic LBSN and return its file paths."""
    return write_lbsn(generate_lbsn(n_users=60, n_pois=120, seed=3), tmp_path / "data")


@pytest.fixture
def fast_config(synthetic_dir, tmp_path):
    """Return a factory for quick-to-run experiment configs over the synthetic data."""

    def _config(**sections):
        data = {
            "dataset": {
                "checkins": str(synthetic_dir["checkins"]),
                "social": str(synthetic_dir["social"]),
                "categories": str(synthetic_dir["categories"]),
                "min_user_checkins": 10,
                "min_poi_visits": 3,
            },
            "groups": {"user_thresholds": [25, 45, 80]},
            "models": ["mostpop", "bpr", "wmf", "pf"],
            "bpr": {"factors": 4, "steps_per_interaction": 2},
            "wmf": {"factors": 4, "sweeps": 2},
            "pf": {"factors": 4, "max_iter": 5},
            "output": {"dir": str(tmp_path / "out")},
        }
        data.update(sections)
        return config_from_mapping(data)

    return _config
