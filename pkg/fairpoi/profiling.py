"""Popularity and activity groups plus the data-bias analyses.

Item tiers follow the check-in mass: items sorted by descending popularity
fill the short-head until it holds 50% of all check-ins, then the mid-tail up
to 80%, and the rest is long-tail. The item that crosses a boundary belongs
to the tier being filled. Users are grouped by fixed check-in count
thresholds.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from fairpoi.config import ITEM_GROUP_LABELS, USER_GROUP_LABELS
from fairpoi.dataset import InteractionStore
from fairpoi.errors import DataError

_logger = logging.getLogger(__name__)

SHARE_TOLERANCE = 1e-12
SHORT_HEAD = 0


@dataclass(frozen=True, eq=False)
class GroupScheme:
    """Activity group of every user and popularity tier of every item."""

    user_group: np.ndarray  # int codes into user_labels
    item_group: np.ndarray  # int codes into item_labels
    user_thresholds: tuple[int, int, int]
    item_shares: tuple[float, float, float]
    user_labels: tuple[str, ...] = USER_GROUP_LABELS
    item_labels: tuple[str, ...] = ITEM_GROUP_LABELS

    def user_sizes(self) -> np.ndarray:
        return np.bincount(self.user_group, minlength=len(self.user_labels))

    def item_sizes(self) -> np.ndarray:
        return np.bincount(self.item_group, minlength=len(self.item_labels))


@dataclass(frozen=True, eq=False)
class ProfileStats:
    """Per-user profile popularity and the corpus-level correlations."""

    profile_size: np.ndarray  # distinct POIs per user over train, validation and test
    popular_count: np.ndarray  # distinct short-head POIs per user
    mean_popularity: np.ndarray  # mean total check-in count of the user's POIs
    r_size_popular: float | None  # None when a variable has zero variance
    r_size_mean_popularity: float | None
    users_with_unpopular_share: int  # users with >= unpopular_share non-short-head POIs
    unpopular_share: float = 0.2


def item_popularity(store: InteractionStore) -> np.ndarray:
    """Total check-in count of every POI over the full store."""
    return np.asarray(store.counts.sum(axis=0)).ravel()


def user_activity(store: InteractionStore) -> np.ndarray:
    """Total check-in count of every user over the full store."""
    return np.asarray(store.counts.sum(axis=1)).ravel()


def segment_items(store: InteractionStore, shares: tuple[float, float, float] = (0.5, 0.3, 0.2)) -> np.ndarray:
    """Greedy short-head / mid-tail / long-tail segmentation by check-in mass.

    Example (counts 10, 5, 3, 1, 1 with 0.5/0.3/0.2):
        short-head = {item 0}; mid-tail = {items 1, 2}; long-tail = {items 3, 4}
    """
    if len(shares) != 3 or any(s <= 0 for s in shares) or abs(sum(shares) - 1.0) > 1e-9:
        raise ValueError(f"shares must be three positive fractions summing to 1, got {shares}")
    return _segment_counts(item_popularity(store), shares)


def _segment_counts(popularity: np.ndarray, shares: tuple[float, float, float]) -> np.ndarray:
    if len(popularity) == 0:
        raise DataError("cannot segment an empty catalog")
    total = popularity.sum()
    if total <= 0:
        raise DataError("cannot segment a catalog without check-ins")
    order = np.lexsort((np.arange(len(popularity)), -popularity))
    cumulative = np.cumsum(popularity[order]) / total
    head_end = int(np.searchsorted(cumulative, shares[0] - SHARE_TOLERANCE, side="left")) + 1
    mid_end = int(np.searchsorted(cumulative, shares[0] + shares[1] - SHARE_TOLERANCE, side="left")) + 1
    mid_end = max(mid_end, head_end)
    groups = np.full(len(popularity), 2, dtype=np.int64)
    groups[order[:head_end]] = 0
    groups[order[head_end:mid_end]] = 1
    return groups


def segment_users(store: InteractionStore, thresholds: tuple[int, int, int] = (19, 47, 94)) -> np.ndarray:
    """Map each user to an activity group: n < t1, t1 <= n < t2, t2 <= n < t3, n >= t3."""
    if len(thresholds) != 3 or not thresholds[0] < thresholds[1] < thresholds[2]:
        raise ValueError(f"thresholds must be three strictly increasing counts, got {thresholds}")
    return np.searchsorted(np.asarray(thresholds), user_activity(store), side="right").astype(np.int64)


def build_scheme(
    store: InteractionStore,
    user_thresholds: tuple[int, int, int] = (19, 47, 94),
    item_shares: tuple[float, float, float] = (0.5, 0.3, 0.2),
) -> GroupScheme:
    scheme = GroupScheme(
        user_group=segment_users(store, user_thresholds),
        item_group=segment_items(store, item_shares),
        user_thresholds=tuple(user_thresholds),  # type: ignore[arg-type]
        item_shares=tuple(item_shares),  # type: ignore[arg-type]
    )
    _logger.info(
        "User groups %s, item groups %s", scheme.user_sizes().tolist(), scheme.item_sizes().tolist()
    )
    return scheme


def pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    """Pearson correlation; None when either variable is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ValueError("pearson needs equally long inputs")
    if len(x) < 2:
        return None
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        return None
    r = float(np.dot(dx, dy)) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def profile_popularity(store: InteractionStore, scheme: GroupScheme, unpopular_share: float = 0.2) -> ProfileStats:
    """Popular-item presence in user profiles over the full (unsplit) data."""
    visited = store.counts.copy()
    visited.data = np.ones_like(visited.data, dtype=float)
    popularity = item_popularity(store).astype(float)
    short_head = (scheme.item_group == SHORT_HEAD).astype(float)

    size = np.asarray(visited.sum(axis=1)).ravel()
    popular = visited @ short_head
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_pop = np.where(size > 0, (visited @ popularity) / np.maximum(size, 1), 0.0)
        unpopular_fraction = np.where(size > 0, (size - popular) / np.maximum(size, 1), 0.0)

    stats = ProfileStats(
        profile_size=size.astype(np.int64),
        popular_count=np.rint(popular).astype(np.int64),
        mean_popularity=mean_pop,
        r_size_popular=pearson(size, popular),
        r_size_mean_popularity=pearson(size, mean_pop),
        users_with_unpopular_share=int(np.sum(unpopular_fraction >= unpopular_share - SHARE_TOLERANCE)),
        unpopular_share=unpopular_share,
    )
    if stats.r_size_popular is None or stats.r_size_mean_popularity is None:
        _logger.warning("Pearson correlation undefined: a profile variable has zero variance")
    return stats


def longtail_curve(store: InteractionStore) -> list[tuple[int, int]]:
    """(rank, check-in count) pairs in descending count order, rank starting at 1."""
    popularity = item_popularity(store)
    if len(popularity) == 0:
        raise DataError("cannot draw the long-tail of an empty store")
    order = np.lexsort((np.arange(len(popularity)), -popularity))
    return [(rank, int(popularity[i])) for rank, i in enumerate(order, start=1)]


def group_summary(store: InteractionStore, scheme: GroupScheme) -> pd.DataFrame:
    """Members, check-in mass and mass share of every user and item group."""
    rows = []
    activity = user_activity(store)
    popularity = item_popularity(store)
    total = float(popularity.sum())
    for side, labels, groups, mass in (
        ("user", scheme.user_labels, scheme.user_group, activity),
        ("item", scheme.item_labels, scheme.item_group, popularity),
    ):
        for code, label in enumerate(labels):
            members = groups == code
            group_mass = int(mass[members].sum())
            rows.append(
                {
                    "side": side,
                    "group": label,
                    "members": int(members.sum()),
                    "checkins": group_mass,
                    "share": group_mass / total if total else 0.0,
                }
            )
    return pd.DataFrame(rows, columns=["side", "group", "members", "checkins", "share"])
