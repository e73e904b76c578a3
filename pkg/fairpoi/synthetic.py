"""Seeded synthetic LBSN data for tutorials, smoke runs and optimizer checks."""

import logging
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from fairpoi.artifacts import atomic_write_text
from fairpoi.dataset import RawEvents

_logger = logging.getLogger(__name__)

CITY_CENTERS = ((40.7128, -74.0060), (34.0522, -118.2437), (41.8781, -87.6298), (29.7604, -95.3698))
CATEGORIES = (
    "Bar",
    "Bookstore",
    "Cafe",
    "Gym",
    "Museum",
    "Park",
    "Pizza Place",
    "Restaurant",
    "Shopping Mall",
    "Stadium",
    "Theater",
    "Train Station",
)
START_TS = 1_500_000_000
DAY = 86_400


def _ids(prefix: str, n: int) -> np.ndarray:
    width = len(str(n))
    return np.array([f"{prefix}{i:0{width}d}" for i in range(n)], dtype=object)


def _checkin_frame(users: list[str], pois: list[str], coords: np.ndarray, ts: list[int]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "user": pd.Series(users, dtype=str),
            "poi": pd.Series(pois, dtype=str),
            "lat": coords[:, 0],
            "lon": coords[:, 1],
            "ts": np.asarray(ts, dtype=np.int64),
        }
    )


def generate_lbsn(n_users: int = 200, n_pois: int = 500, seed: int = 7) -> RawEvents:
    """City-clustered check-ins with Zipf-like POI popularity, categories and friendships."""
    rng = np.random.default_rng(seed)
    n_cities = len(CITY_CENTERS)
    poi_ids = _ids("p", n_pois)
    user_ids = _ids("u", n_users)

    poi_city = rng.integers(n_cities, size=n_pois)
    centers = np.asarray(CITY_CENTERS)[poi_city]
    poi_coords = centers + rng.normal(scale=0.03, size=(n_pois, 2))
    popularity = 1.0 / np.arange(1, n_pois + 1) ** 0.9
    popularity = popularity[rng.permutation(n_pois)]
    successor = np.empty(n_pois, dtype=np.int64)
    for city in range(n_cities):
        members = np.flatnonzero(poi_city == city)
        successor[members] = members[rng.permutation(len(members))]

    home = rng.integers(n_cities, size=n_users)
    sizes = np.clip(rng.lognormal(mean=np.log(45), sigma=0.7, size=n_users), 15, 400).astype(int)
    users, pois, times = [], [], []
    for u in range(n_users):
        local = poi_city == home[u]
        weights = np.where(local, popularity * 6.0, popularity)
        weights /= weights.sum()
        t = START_TS + int(rng.integers(0, 30 * DAY))
        previous = -1
        for _ in range(sizes[u]):
            if previous >= 0 and rng.random() < 0.3:
                poi = int(successor[previous])
            else:
                poi = int(rng.choice(n_pois, p=weights))
            t += int(rng.exponential(DAY)) + 60
            users.append(user_ids[u])
            pois.append(poi)
            times.append(t)
            previous = poi
    index = np.asarray(pois, dtype=np.int64)
    checkins = _checkin_frame(users, poi_ids[index].tolist(), np.round(poi_coords[index], 6), times)

    edges = set()
    for u in range(n_users):
        for _ in range(rng.poisson(3)):
            same_city = np.flatnonzero(home == home[u]) if rng.random() < 0.8 else np.arange(n_users)
            v = int(rng.choice(same_city))
            if v != u:
                edges.add((min(u, v), max(u, v)))
    social = pd.DataFrame(
        [(user_ids[a], user_ids[b]) for a, b in sorted(edges)], columns=["a", "b"], dtype=str
    )

    assignments = []
    for p in range(n_pois):
        for c in rng.choice(len(CATEGORIES), size=int(rng.integers(1, 3)), replace=False):
            assignments.append((poi_ids[p], CATEGORIES[c]))
    categories = pd.DataFrame(assignments, columns=["poi", "category"], dtype=str)

    _logger.info("Generated %d check-ins, %d social edges, %d POIs", len(checkins), len(social), n_pois)
    return RawEvents(checkins=checkins, social=social, categories=categories)


def two_block_events(seed: int = 0, block_size: int = 15, visited: int = 12) -> RawEvents:
    """Two user clusters, each visiting only its own disjoint POI block.

    Block A has 10 users who revisit every POI six times, so A's POIs dominate
    global popularity; block B has 30 single-visit users.
    """
    rng = np.random.default_rng(seed)
    plan = (("a", 10, 6, 0), ("b", 30, 1, block_size))
    poi_ids = _ids("p", 2 * block_size)
    coords = np.vstack(
        [
            np.tile(CITY_CENTERS[0], (block_size, 1)) + rng.normal(scale=0.01, size=(block_size, 2)),
            np.tile(CITY_CENTERS[1], (block_size, 1)) + rng.normal(scale=0.01, size=(block_size, 2)),
        ]
    )
    users, pois, times, rows = [], [], [], []
    edges = []
    for block, n_users, repeats, offset in plan:
        members = [f"{block}{u:02d}" for u in range(n_users)]
        edges.extend((members[u], members[u + 1]) for u in range(n_users - 1))
        for user in members:
            t = START_TS
            for poi in offset + rng.choice(block_size, size=visited, replace=False):
                for _ in range(repeats):
                    t += 3600
                    users.append(user)
                    pois.append(poi_ids[poi])
                    times.append(t)
                    rows.append(poi)
    checkins = _checkin_frame(users, pois, coords[np.asarray(rows)], times)
    social = pd.DataFrame(edges, columns=["a", "b"], dtype=str)
    categories = pd.DataFrame(
        [(poi_ids[p], "Block A" if p < block_size else "Block B") for p in range(2 * block_size)],
        columns=["poi", "category"],
        dtype=str,
    )
    return RawEvents(checkins=checkins, social=social, categories=categories)


def suggested_thresholds(events: RawEvents) -> list[int]:
    """User-group thresholds at the activity quartiles, kept strictly increasing."""
    activity = events.checkins.groupby("user").size().to_numpy()
    quartiles = np.quantile(activity, [0.25, 0.5, 0.75]).round().astype(int).tolist()
    for i in range(1, 3):
        quartiles[i] = max(quartiles[i], quartiles[i - 1] + 1)
    return quartiles


def write_lbsn(events: RawEvents, outdir: str | Path) -> dict[str, Path]:
    """Write checkins.tsv, social.tsv, categories.tsv and a ready-to-run config.yaml."""
    outdir = Path(outdir)
    paths = {name: outdir / f"{name}.tsv" for name in ("checkins", "social", "categories")}
    checkins = events.checkins[["user", "poi", "lat", "lon", "ts"]]
    atomic_write_text(paths["checkins"], checkins.to_csv(sep="\t", index=False, header=False, lineterminator="\n"))
    atomic_write_text(paths["social"], events.social.to_csv(sep="\t", index=False, header=False, lineterminator="\n"))
    categories = events.categories if events.categories is not None else pd.DataFrame(columns=["poi", "category"])
    atomic_write_text(paths["categories"], categories.to_csv(sep="\t", index=False, header=False, lineterminator="\n"))

    config = {
        "dataset": {
            "checkins": paths["checkins"].name,
            "social": paths["social"].name,
            "categories": paths["categories"].name,
            "min_user_checkins": 10,
            "min_poi_visits": 3,
        },
        "groups": {"user_thresholds": suggested_thresholds(events)},
        "models": ["mostpop", "bpr", "wmf", "pf", "geosoca", "lore"],
        "bpr": {"factors": 16, "steps_per_interaction": 10},
        "wmf": {"factors": 16, "sweeps": 8},
        "pf": {"factors": 16, "max_iter": 50},
        "output": {"dir": "out"},
    }
    paths["config"] = outdir / "config.yaml"
    atomic_write_text(paths["config"], yaml.safe_dump(config, sort_keys=False))
    _logger.info("Wrote synthetic LBSN to %s", outdir)
    return paths
