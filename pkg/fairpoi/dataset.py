"""Check-in ingestion, cold-start filtering and the per-user temporal split.

File grammar (one record per line, tab or comma separated, detected from the
first data line):

    checkins:   user_id, poi_id, latitude, longitude, unix_timestamp
    social:     user_id, user_id            (undirected)
    categories: poi_id, category_name       (a POI may repeat with several names)

Identifiers are opaque strings. Inside an ``InteractionStore`` they are
densified to contiguous indices in sorted identifier order, so index order is
also identifier order for every tie-break.
"""

import logging
import math
from collections.abc import Iterable
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp

from fairpoi.errors import DataError

_logger = logging.getLogger(__name__)

MAX_MALFORMED_FRACTION = 0.01
_HEADER_TOKENS = {"user", "user_id", "userid", "poi", "poi_id", "venue_id"}
_REPORTED_LINES = 20

TRAIN, VALIDATION, TEST, DROPPED = 0, 1, 2, -1


@dataclass(frozen=True)
class CheckIn:
    """A single timestamped visit of a user to a POI."""

    user: str
    poi: str
    when: int
    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not -90.0 <= self.lat <= 90.0 or not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"coordinates out of range: ({self.lat}, {self.lon})")
        if self.when <= 0:
            raise ValueError(f"timestamp must be positive, got {self.when}")


@dataclass(eq=False)
class RawEvents:
    """Parsed but unfiltered input files."""

    checkins: pd.DataFrame  # user, poi, lat, lon, ts
    social: pd.DataFrame  # a, b with a < b
    categories: pd.DataFrame | None = None  # poi, category
    malformed_lines: dict[str, list[int]] = field(default_factory=dict)

    @classmethod
    def from_records(
        cls,
        checkins: Iterable[CheckIn],
        social: Iterable[tuple[str, str]] = (),
        categories: Iterable[tuple[str, str]] | None = None,
    ) -> "RawEvents":
        rows = [(c.user, c.poi, c.lat, c.lon, c.when) for c in checkins]
        frame = pd.DataFrame(rows, columns=["user", "poi", "lat", "lon", "ts"])
        frame = frame.astype({"user": str, "poi": str, "lat": float, "lon": float, "ts": np.int64})
        edges = _normalize_edges(pd.DataFrame(list(social), columns=["a", "b"], dtype=str))
        cats = None
        if categories is not None:
            cats = pd.DataFrame(list(categories), columns=["poi", "category"], dtype=str).drop_duplicates()
        return cls(frame, edges, cats)

    def records(self) -> list[CheckIn]:
        return [
            CheckIn(user=u, poi=p, when=int(t), lat=float(la), lon=float(lo))
            for u, p, la, lo, t in self.checkins[["user", "poi", "lat", "lon", "ts"]].itertuples(index=False)
        ]


@dataclass(frozen=True, eq=False)
class Split:
    """Per-user train/validation/test partition of distinct visited POIs.

    Each matrix holds visit counts inside its time window, restricted to the
    POIs assigned to that partition.
    """

    train: sp.csr_matrix
    validation: sp.csr_matrix
    test: sp.csr_matrix
    boundaries: np.ndarray  # (n_users, 3): last train ts, first validation ts, first test ts; -1 if empty
    flagged_users: np.ndarray

    def matrix(self, part: int) -> sp.csr_matrix:
        return (self.train, self.validation, self.test)[part]


@dataclass(frozen=True)
class DatasetStats:
    n_users: int
    n_pois: int
    n_checkins: int
    n_social_links: int
    n_categories: int | None = None

    @property
    def density(self) -> float:
        return self.n_checkins / (self.n_users * self.n_pois)

    def as_dict(self) -> dict[str, float | int | None]:
        return {
            "n_users": self.n_users,
            "n_pois": self.n_pois,
            "n_checkins": self.n_checkins,
            "n_social_links": self.n_social_links,
            "n_categories": self.n_categories,
            "density": self.density,
        }


@dataclass(frozen=True, eq=False)
class InteractionStore:
    """Deduplicated check-ins with visit counts, social graph, POI metadata and split."""

    user_ids: np.ndarray
    poi_ids: np.ndarray
    checkins: pd.DataFrame  # user, poi, ts, lat, lon [, part]; sorted by user, ts, poi
    counts: sp.csr_matrix
    social: np.ndarray  # (n_edges, 2), first < second
    poi_coords: np.ndarray  # (n_pois, 2) lat/lon
    poi_categories: sp.csr_matrix | None = None  # (n_pois, n_categories) binary
    category_names: np.ndarray | None = None
    split: Split | None = None

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_pois(self) -> int:
        return len(self.poi_ids)

    @property
    def has_categories(self) -> bool:
        return self.poi_categories is not None and self.poi_categories.shape[1] > 0

    def require_split(self) -> Split:
        if self.split is None:
            raise DataError("the interaction store has not been split yet")
        return self.split

    @property
    def train(self) -> sp.csr_matrix:
        return self.require_split().train

    def seen(self, mode: str = "test") -> sp.csr_matrix:
        """POIs excluded from candidate sets: train (+ validation in test mode)."""
        split = self.require_split()
        if mode == "test":
            return (split.train + split.validation).tocsr()
        if mode == "validation":
            return split.train
        raise ValueError(f"unknown evaluation mode: {mode}")

    def relevant(self, mode: str = "test") -> sp.csr_matrix:
        split = self.require_split()
        return split.test if mode == "test" else split.validation

    @cached_property
    def user_index(self) -> dict[str, int]:
        return {uid: i for i, uid in enumerate(self.user_ids)}

    @cached_property
    def poi_index(self) -> dict[str, int]:
        return {pid: i for i, pid in enumerate(self.poi_ids)}

    @cached_property
    def friends(self) -> sp.csr_matrix:
        n = self.n_users
        if len(self.social) == 0:
            return sp.csr_matrix((n, n), dtype=np.float64)
        a, b = self.social[:, 0], self.social[:, 1]
        data = np.ones(2 * len(a))
        adjacency = sp.coo_matrix((data, (np.r_[a, b], np.r_[b, a])), shape=(n, n))
        return adjacency.tocsr()

    @cached_property
    def train_history(self) -> list[np.ndarray]:
        """Time-ordered POI sequence of every user's train check-ins."""
        self.require_split()
        train_rows = self.checkins[self.checkins["part"] == TRAIN]
        grouped = train_rows.groupby("user")["poi"].apply(np.asarray)
        empty = np.empty(0, dtype=np.int64)
        return [np.asarray(grouped.get(u, empty), dtype=np.int64) for u in range(self.n_users)]


def _read_lines(path: str | Path, kind: str) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {kind} file {path}: {exc}") from exc


def _detect_delimiter(lines: list[str]) -> str:
    for line in lines:
        if line.strip():
            return "\t" if "\t" in line else ","
    return "\t"


def _split_fields(lines: list[str], n_fields: int, kind: str, path: str | Path) -> tuple[pd.DataFrame, list[int]]:
    """Split lines into string columns; return rows with line numbers and bad line numbers."""
    delimiter = _detect_delimiter(lines)
    series = pd.Series(lines, index=pd.RangeIndex(1, len(lines) + 1), dtype=object)
    series = series[series.str.strip() != ""]
    if len(series) and series.iloc[0].split(delimiter)[0].strip().lower() in _HEADER_TOKENS:
        series = series.iloc[1:]
    if n_fields == 2 and kind == "category":
        parts = series.str.split(delimiter, n=1, expand=True)
    else:
        parts = series.str.split(delimiter, expand=True)
    parts = parts.reindex(columns=range(max(n_fields, parts.shape[1] if len(parts) else 0)))
    field_counts = series.str.count(delimiter) + 1
    parts = parts.apply(lambda col: col.map(lambda v: v.strip() if isinstance(v, str) else v))
    ok = (field_counts == n_fields) if not (n_fields == 2 and kind == "category") else field_counts >= 2
    ok &= parts[list(range(n_fields))].notna().all(axis=1) & (parts[list(range(n_fields))] != "").all(axis=1)
    return parts.loc[:, list(range(n_fields))], _check_malformed(~ok, len(series), kind, path)


def _check_malformed(bad: pd.Series, n_data_lines: int, kind: str, path: str | Path) -> list[int]:
    lines = [int(i) for i in bad[bad].index]
    if lines and len(lines) > MAX_MALFORMED_FRACTION * n_data_lines:
        shown = ", ".join(map(str, lines[:_REPORTED_LINES]))
        more = "" if len(lines) <= _REPORTED_LINES else f" (+{len(lines) - _REPORTED_LINES} more)"
        raise DataError(
            f"{kind} file {path}: {len(lines)} of {n_data_lines} lines malformed, "
            f"above the {MAX_MALFORMED_FRACTION:.0%} limit; lines {shown}{more}"
        )
    return lines


def _normalize_edges(edges: pd.DataFrame) -> pd.DataFrame:
    """Order each undirected pair and drop self-loops and duplicates."""
    if edges.empty:
        return pd.DataFrame({"a": pd.Series(dtype=str), "b": pd.Series(dtype=str)})
    swap = edges["a"] > edges["b"]
    lo = edges["a"].where(~swap, edges["b"])
    hi = edges["b"].where(~swap, edges["a"])
    ordered = pd.DataFrame({"a": lo, "b": hi})
    ordered = ordered[ordered["a"] != ordered["b"]]
    duplicates = int(ordered.duplicated().sum())
    if duplicates:
        _logger.warning("Dropped %d duplicate social edges", duplicates)
    return ordered.drop_duplicates().reset_index(drop=True)


def _parse_checkins(path: str | Path) -> tuple[pd.DataFrame, list[int]]:
    lines = _read_lines(path, "check-in")
    parts, bad_shape = _split_fields(lines, 5, "check-in", path)
    lat = pd.to_numeric(parts[2], errors="coerce")
    lon = pd.to_numeric(parts[3], errors="coerce")
    ts = pd.to_numeric(parts[4], errors="coerce")
    valid = lat.between(-90.0, 90.0) & lon.between(-180.0, 180.0) & (ts > 0) & np.isfinite(ts)
    valid &= ~parts.index.isin(bad_shape)
    bad = _check_malformed(~valid, len(parts), "check-in", path)
    frame = pd.DataFrame(
        {
            "user": parts.loc[valid, 0].astype(str),
            "poi": parts.loc[valid, 1].astype(str),
            "lat": lat[valid].astype(float),
            "lon": lon[valid].astype(float),
            "ts": np.floor(ts[valid]).astype(np.int64),
        }
    ).reset_index(drop=True)
    return frame, bad


def ingest(
    checkin_file: str | Path,
    social_file: str | Path | None = None,
    category_file: str | Path | None = None,
) -> RawEvents:
    """Parse the raw input files.

    Malformed lines are counted and logged with their line numbers; more than
    1% malformed lines in any file is fatal.
    """
    checkins, bad_checkins = _parse_checkins(checkin_file)
    malformed = {"checkins": bad_checkins}
    if bad_checkins:
        _logger.warning("Skipped %d malformed check-in lines: %s", len(bad_checkins), bad_checkins[:_REPORTED_LINES])

    social = _normalize_edges(pd.DataFrame({"a": pd.Series(dtype=str), "b": pd.Series(dtype=str)}))
    if social_file is not None:
        parts, bad_social = _split_fields(_read_lines(social_file, "social"), 2, "social", social_file)
        good = parts.drop(index=bad_social)
        social = _normalize_edges(pd.DataFrame({"a": good[0].astype(str), "b": good[1].astype(str)}))
        malformed["social"] = bad_social
        if bad_social:
            _logger.warning("Skipped %d malformed social lines", len(bad_social))

    categories = None
    if category_file is not None:
        parts, bad_cats = _split_fields(_read_lines(category_file, "category"), 2, "category", category_file)
        good = parts.drop(index=bad_cats)
        categories = pd.DataFrame({"poi": good[0].astype(str), "category": good[1].astype(str)})
        categories = categories.drop_duplicates().reset_index(drop=True)
        malformed["categories"] = bad_cats
        if bad_cats:
            _logger.warning("Skipped %d malformed category lines", len(bad_cats))

    _logger.info(
        "Ingested %d check-ins, %d social edges, %s category assignments",
        len(checkins),
        len(social),
        "no" if categories is None else len(categories),
    )
    return RawEvents(checkins, social, categories, malformed)


def _filter_checkins(checkins: pd.DataFrame, min_user_checkins: int, min_poi_visits: int) -> pd.DataFrame:
    """One pass: drop rare POIs, then users left with too few check-ins."""
    poi_counts = checkins["poi"].map(checkins["poi"].value_counts())
    kept = checkins[poi_counts >= min_poi_visits]
    user_counts = kept["user"].map(kept["user"].value_counts())
    return kept[user_counts >= min_user_checkins]


def preprocess(
    events: RawEvents,
    min_user_checkins: int,
    min_poi_visits: int,
    iterate: bool = False,
) -> InteractionStore:
    """Remove cold POIs then cold users, and aggregate visit counts.

    With ``iterate`` the two filters repeat until nothing changes.
    """
    if min_user_checkins < 1 or min_poi_visits < 1:
        raise ValueError("preprocessing thresholds must be >= 1")
    checkins = events.checkins
    filtered = _filter_checkins(checkins, min_user_checkins, min_poi_visits)
    while iterate and 0 < len(filtered) < len(checkins):
        checkins = filtered
        filtered = _filter_checkins(checkins, min_user_checkins, min_poi_visits)
    if filtered.empty:
        raise DataError(
            f"no check-ins survive preprocessing with min_user_checkins={min_user_checkins}, "
            f"min_poi_visits={min_poi_visits} ({len(events.checkins)} check-ins, "
            f"{events.checkins['user'].nunique()} users, {events.checkins['poi'].nunique()} POIs before)"
        )
    store = build_store(filtered, events.social, events.categories)
    _logger.info(
        "Preprocessing kept %d users, %d POIs, %d check-ins", store.n_users, store.n_pois, len(store.checkins)
    )
    return store


def build_store(
    checkins: pd.DataFrame,
    social: pd.DataFrame | None = None,
    categories: pd.DataFrame | None = None,
) -> InteractionStore:
    """Densify identifiers and assemble an unsplit store."""
    user_ids = np.sort(checkins["user"].unique()).astype(object)
    poi_ids = np.sort(checkins["poi"].unique()).astype(object)
    users = pd.Categorical(checkins["user"], categories=user_ids).codes.astype(np.int64)
    pois = pd.Categorical(checkins["poi"], categories=poi_ids).codes.astype(np.int64)
    frame = pd.DataFrame(
        {
            "user": users,
            "poi": pois,
            "ts": checkins["ts"].to_numpy(dtype=np.int64),
            "lat": checkins["lat"].to_numpy(dtype=float),
            "lon": checkins["lon"].to_numpy(dtype=float),
        }
    )
    frame = frame.sort_values(["user", "ts", "poi"], kind="mergesort").reset_index(drop=True)

    n_users, n_pois = len(user_ids), len(poi_ids)
    counts = sp.coo_matrix(
        (np.ones(len(frame), dtype=np.int64), (frame["user"], frame["poi"])), shape=(n_users, n_pois)
    ).tocsr()
    counts.sum_duplicates()

    first_seen = frame.sort_values(["poi", "ts"], kind="mergesort").groupby("poi")[["lat", "lon"]].first()
    poi_coords = first_seen.to_numpy(dtype=float)

    edges = np.empty((0, 2), dtype=np.int64)
    if social is not None and not social.empty:
        a = pd.Categorical(social["a"], categories=user_ids).codes
        b = pd.Categorical(social["b"], categories=user_ids).codes
        keep = (a >= 0) & (b >= 0)
        pairs = np.sort(np.column_stack([a[keep], b[keep]]).astype(np.int64), axis=1)
        edges = np.unique(pairs, axis=0) if len(pairs) else edges

    poi_categories = None
    category_names = None
    if categories is not None:
        cats = categories[categories["poi"].isin(set(poi_ids))]
        category_names = np.sort(cats["category"].unique()).astype(object)
        rows = pd.Categorical(cats["poi"], categories=poi_ids).codes
        cols = pd.Categorical(cats["category"], categories=category_names).codes
        poi_categories = sp.csr_matrix(
            (np.ones(len(cats)), (rows, cols)), shape=(n_pois, len(category_names))
        )
        poi_categories.data[:] = 1.0

    return InteractionStore(
        user_ids=user_ids,
        poi_ids=poi_ids,
        checkins=frame,
        counts=counts,
        social=edges,
        poi_coords=poi_coords,
        poi_categories=poi_categories,
        category_names=category_names,
    )


def _partition_matrix(frame: pd.DataFrame, part: int, shape: tuple[int, int]) -> sp.csr_matrix:
    rows = frame[frame["part"] == part]
    matrix = sp.coo_matrix(
        (np.ones(len(rows), dtype=np.int64), (rows["user"], rows["poi"])), shape=shape
    ).tocsr()
    matrix.sum_duplicates()
    return matrix


def temporal_split(store: InteractionStore, train_frac: float = 0.7, valid_frac: float = 0.1) -> InteractionStore:
    """Split each user's check-ins by time: earliest 70% train, latest 20% test.

    A POI visited in several windows stays only in the window of its first
    visit. Users with fewer than three distinct POIs are flagged and kept in
    train only.
    """
    if train_frac <= 0 or valid_frac <= 0 or train_frac + valid_frac >= 1:
        raise ValueError("fractions must be positive with train_frac + valid_frac < 1")
    test_frac = 1.0 - train_frac - valid_frac
    frame = store.checkins.drop(columns=["part"], errors="ignore").copy()

    position = frame.groupby("user").cumcount().to_numpy()
    size = frame.groupby("user")["poi"].transform("size").to_numpy()
    n_train = np.ceil(train_frac * size - 1e-9)
    n_test = np.floor(test_frac * size + 1e-9)
    part = np.where(position < n_train, TRAIN, np.where(position >= size - n_test, TEST, VALIDATION))

    distinct = frame.groupby("user")["poi"].transform("nunique").to_numpy()
    part[distinct < 3] = TRAIN
    frame["part"] = part.astype(np.int8)

    first_part = frame.groupby(["user", "poi"])["part"].transform("first").to_numpy()
    frame.loc[frame["part"].to_numpy() != first_part, "part"] = DROPPED

    flagged = np.unique(frame.loc[distinct < 3, "user"].to_numpy())
    if len(flagged):
        _logger.warning("%d users have fewer than 3 distinct POIs and stay in train only", len(flagged))

    shape = (store.n_users, store.n_pois)
    boundaries = np.full((store.n_users, 3), -1, dtype=np.int64)
    kept = frame[frame["part"] != DROPPED]
    last_train = kept[kept["part"] == TRAIN].groupby("user")["ts"].max()
    boundaries[last_train.index.to_numpy(), 0] = last_train.to_numpy()
    for column, which in ((1, VALIDATION), (2, TEST)):
        first = kept[kept["part"] == which].groupby("user")["ts"].min()
        boundaries[first.index.to_numpy(), column] = first.to_numpy()

    split = Split(
        train=_partition_matrix(frame, TRAIN, shape),
        validation=_partition_matrix(frame, VALIDATION, shape),
        test=_partition_matrix(frame, TEST, shape),
        boundaries=boundaries,
        flagged_users=flagged,
    )
    return replace(store, checkins=frame, split=split)


def sample_users(store: InteractionStore, fraction: float, seed: int) -> InteractionStore:
    """Keep a seeded uniform subset of users; the POI catalog is unchanged."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    if fraction == 1:
        return store
    n_keep = math.floor(fraction * store.n_users + 1e-9)
    if n_keep == 0:
        raise DataError(f"sampling fraction {fraction} keeps no users out of {store.n_users}")
    rng = np.random.default_rng(seed)
    kept = np.sort(rng.choice(store.n_users, size=n_keep, replace=False))
    remap = np.full(store.n_users, -1, dtype=np.int64)
    remap[kept] = np.arange(n_keep)

    frame = store.checkins[store.checkins["user"].isin(kept)].copy()
    frame["user"] = remap[frame["user"].to_numpy()]
    frame = frame.reset_index(drop=True)

    edges = store.social
    if len(edges):
        mapped = remap[edges]
        edges = mapped[(mapped >= 0).all(axis=1)]

    split = None
    if store.split is not None:
        old = store.split
        flagged = remap[old.flagged_users]
        split = Split(
            train=old.train[kept],
            validation=old.validation[kept],
            test=old.test[kept],
            boundaries=old.boundaries[kept],
            flagged_users=flagged[flagged >= 0],
        )
    _logger.info("Sampled %d of %d users (fraction %.3f, seed %d)", n_keep, store.n_users, fraction, seed)
    return replace(
        store,
        user_ids=store.user_ids[kept],
        checkins=frame,
        counts=store.counts[kept],
        social=edges,
        split=split,
    )


def stats(store: InteractionStore) -> DatasetStats:
    """Summary counts of users, POIs, check-ins, social links and categories."""
    return DatasetStats(
        n_users=store.n_users,
        n_pois=store.n_pois,
        n_checkins=len(store.checkins),
        n_social_links=len(store.social),
        n_categories=None if store.category_names is None else len(store.category_names),
    )
