"""Contextual POI scorers: geographic, social, categorical and sequential influence.

Two fused recommenders are assembled from them:

    GeoSoCa = geo * social * categorical
    LORE    = sequential * geo * social

Each component is a per-user score vector over the catalog. A component that
carries no information for a user (no coordinates, no history, or an
all-zero vector) is replaced by a constant 1 and the user is flagged. Users
for whom every component is neutral get the MostPop ranking instead.

Social and categorical raw scores are calibrated by the empirical CDF of all
strictly positive raw values in the corpus; geographic densities are scaled
by the user's maximum.
"""

import logging
from abc import abstractmethod
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
import pandas as pd
import scipy.sparse as sp

from fairpoi.dataset import TRAIN, InteractionStore
from fairpoi.errors import MissingCategoriesError
from fairpoi.models.base import Recommender
from fairpoi.models.mostpop import PopularityModel, train_mostpop

_logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
DEFAULT_MIN_BANDWIDTH_KM = 0.1

# (B, n_pois) scores and a (B,) mask of users for whom the component is neutral
ComponentScores = tuple[np.ndarray, np.ndarray]


def haversine(lat1: np.ndarray, lon1: np.ndarray, lat2: np.ndarray, lon2: np.ndarray) -> np.ndarray:
    """Great-circle distance in km; inputs in degrees, broadcast against each other."""
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dphi = phi2 - phi1
    dlambda = np.radians(lon2) - np.radians(lon1)
    h = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlambda / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def _kernel_sum(centers: np.ndarray, bandwidths: np.ndarray, lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    d = haversine(centers[:, 0][:, None], centers[:, 1][:, None], lat[None, :], lon[None, :])
    h2 = (bandwidths**2)[:, None]
    return np.mean(np.exp(-(d**2) / (2.0 * h2)) / (2.0 * np.pi * h2), axis=0)


@dataclass(frozen=True, eq=False)
class KdeModel:
    """Adaptive-bandwidth Gaussian kernel density over one user's check-in locations."""

    centers: np.ndarray  # (n, 2) lat/lon
    bandwidth: float  # pilot h, km
    center_bandwidths: np.ndarray  # h_i, km
    adaptivity: float = 0.5

    def density(self, lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
        lat = np.atleast_1d(np.asarray(lat, dtype=float))
        lon = np.atleast_1d(np.asarray(lon, dtype=float))
        return _kernel_sum(self.centers, self.center_bandwidths, lat, lon)


def scott_bandwidth(centers: np.ndarray, min_bandwidth: float = DEFAULT_MIN_BANDWIDTH_KM) -> float:
    """Scott's rule on the distinct centers, in km on a local tangent plane."""
    distinct = np.unique(np.asarray(centers, dtype=float), axis=0)
    n = len(distinct)
    if n < 2:
        return min_bandwidth
    mean_lat = np.radians(distinct[:, 0].mean())
    y = EARTH_RADIUS_KM * np.radians(distinct[:, 0])
    x = EARTH_RADIUS_KM * np.radians(distinct[:, 1]) * np.cos(mean_lat)
    sigma = np.sqrt((x.var(ddof=1) + y.var(ddof=1)) / 2.0)
    return max(float(sigma * n ** (-1.0 / 6.0)), min_bandwidth)


def build_kde(
    centers: np.ndarray,
    bandwidth: float | None = None,
    adaptivity: float = 0.5,
    min_bandwidth: float = DEFAULT_MIN_BANDWIDTH_KM,
) -> KdeModel:
    """Fixed-bandwidth pilot, then per-center bandwidths h_i = h * (pilot_i / g)^-adaptivity."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    if len(centers) == 0:
        raise ValueError("a density needs at least one center")
    h = scott_bandwidth(centers, min_bandwidth) if bandwidth is None else float(bandwidth)
    if h <= 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    pilot = _kernel_sum(centers, np.full(len(centers), h), centers[:, 0], centers[:, 1])
    log_pilot = np.log(pilot)
    geometric_mean = np.exp(log_pilot.mean())
    adaptive = h * np.exp(-adaptivity * (log_pilot - np.log(geometric_mean)))
    return KdeModel(
        centers=centers,
        bandwidth=h,
        center_bandwidths=np.maximum(adaptive, min_bandwidth),
        adaptivity=adaptivity,
    )


def geo_score(model: KdeModel, lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    return model.density(lat, lon)


def user_kdes(
    store: InteractionStore,
    bandwidth: float | None = None,
    adaptivity: float = 0.5,
    min_bandwidth: float = DEFAULT_MIN_BANDWIDTH_KM,
) -> list[KdeModel | None]:
    """One density per user over the coordinates of its train check-ins."""
    store.require_split()
    train_rows = store.checkins[store.checkins["part"] == TRAIN]
    by_user = dict(tuple(train_rows.groupby("user")[["lat", "lon"]]))
    models: list[KdeModel | None] = []
    for user in range(store.n_users):
        coords = by_user.get(user)
        if coords is None or coords.empty:
            models.append(None)
        else:
            models.append(build_kde(coords.to_numpy(dtype=float), bandwidth, adaptivity, min_bandwidth))
    missing = sum(m is None for m in models)
    if missing:
        _logger.warning("%d users have no train coordinates; geographic score is neutral for them", missing)
    return models


def empirical_cdf(raw: sp.spmatrix) -> sp.csr_matrix:
    """Replace every positive entry by the fraction of positive entries <= it.

    Example (positive values 1, 2, 4): 2 -> 2/3 and 4 -> 1.0.
    """
    calibrated = sp.csr_matrix(raw, dtype=float, copy=True)
    calibrated.eliminate_zeros()
    if calibrated.nnz == 0:
        return calibrated
    reference = np.sort(calibrated.data)
    calibrated.data = np.searchsorted(reference, calibrated.data, side="right") / len(reference)
    return calibrated


def social_scores(store: InteractionStore) -> sp.csr_matrix:
    """Calibrated sum of friends' train visit counts for every (user, POI)."""
    raw = store.friends @ store.train.astype(float)
    return empirical_cdf(raw)


def require_categories(store: InteractionStore) -> None:
    if not store.has_categories:
        raise MissingCategoriesError(
            "GeoSoCa needs POI categories but the dataset has none; "
            "provide dataset.categories or drop GeoSoCa from the model list"
        )


def categorical_scores(store: InteractionStore) -> sp.csr_matrix:
    """Calibrated match between a user's category habits and a POI's standing in its categories.

    raw(u, p) = sum over categories g of p: freq_u(g) * pop(p within g),
    both factors scaled to [0, 1] by their maximum.
    """
    require_categories(store)
    membership = sp.csr_matrix(store.poi_categories, dtype=float)
    uncategorized = int(np.sum(np.diff(membership.indptr) == 0))
    if uncategorized:
        _logger.warning("%d POIs have no category and score 0 on the categorical component", uncategorized)

    train = store.train.astype(float)
    frequency = sp.csr_matrix(train @ membership)
    user_max = frequency.max(axis=1).toarray().ravel()
    frequency = sp.diags(np.divide(1.0, user_max, out=np.zeros_like(user_max), where=user_max > 0)) @ frequency

    popularity = np.asarray(train.sum(axis=0)).ravel()
    standing = sp.csr_matrix(sp.diags(popularity) @ membership)
    category_max = standing.max(axis=0).toarray().ravel()
    scale = np.divide(1.0, category_max, out=np.zeros_like(category_max), where=category_max > 0)
    standing = standing @ sp.diags(scale)
    return empirical_cdf(frequency @ standing.T)


@dataclass(frozen=True, eq=False)
class TransitionModel:
    """First-order transitions between POIs with an exponential recency weighting."""

    counts: sp.csr_matrix  # (n_pois, n_pois) from -> to
    probabilities: sp.csr_matrix  # row-normalized counts
    recency_base: float = 2.0


def transition_model(counts: sp.spmatrix, recency_base: float = 2.0) -> TransitionModel:
    counts = sp.csr_matrix(counts, dtype=float)
    counts.eliminate_zeros()
    totals = np.asarray(counts.sum(axis=1)).ravel()
    inverse = np.divide(1.0, totals, out=np.zeros_like(totals), where=totals > 0)
    return TransitionModel(counts=counts, probabilities=sp.csr_matrix(sp.diags(inverse) @ counts), recency_base=recency_base)


def build_transitions(store: InteractionStore, recency_base: float = 2.0, max_gap: float | None = None) -> TransitionModel:
    """Count consecutive train check-in pairs of the same user; repeated visits are not transitions."""
    store.require_split()
    train_rows = store.checkins[store.checkins["part"] == TRAIN]
    users = train_rows["user"].to_numpy()
    pois = train_rows["poi"].to_numpy()
    ts = train_rows["ts"].to_numpy()
    consecutive = (users[1:] == users[:-1]) & (pois[1:] != pois[:-1])
    if max_gap is not None:
        consecutive &= (ts[1:] - ts[:-1]) <= max_gap
    sources, targets = pois[:-1][consecutive], pois[1:][consecutive]
    n = store.n_pois
    counts = sp.coo_matrix((np.ones(len(sources)), (sources, targets)), shape=(n, n)).tocsr()
    model = transition_model(counts, recency_base)
    _logger.info("Built %d transitions over %d POI pairs", len(sources), model.counts.nnz)
    return model


def recency_weights(length: int, base: float = 2.0) -> np.ndarray:
    """w_t proportional to base^(t - n) for t = 1..n, summing to 1."""
    raw = base ** (np.arange(1, length + 1) - float(length))
    return raw / raw.sum()


def sequential_score(model: TransitionModel, history: Sequence[int] | np.ndarray) -> np.ndarray | None:
    """Additive Markov chain score of every POI; None for an empty history."""
    history = np.asarray(history, dtype=np.int64)
    if len(history) == 0:
        return None
    n = model.probabilities.shape[0]
    step_weights = np.bincount(history, weights=recency_weights(len(history), model.recency_base), minlength=n)
    return np.asarray(model.probabilities.T @ step_weights).ravel()


def fuse(
    components: Sequence[ComponentScores], weights: Sequence[float]
) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Weighted product of component scores.

    Returns the fused (B, n) scores, a (B,) mask of users for whom every
    component was neutral, and the number of neutralized users per component.
    """
    if len(components) != len(weights) or not components:
        raise ValueError("fuse needs one weight per component")
    shape = components[0][0].shape
    fused = np.ones(shape)
    all_neutral = np.ones(shape[0], dtype=bool)
    neutralized = []
    for (scores, neutral), weight in zip(components, weights, strict=True):
        neutral = neutral | ~np.any(scores > 0, axis=1)
        neutralized.append(int(neutral.sum()))
        all_neutral &= neutral
        contribution = np.where(neutral[:, None], 1.0, scores) ** weight
        fused *= contribution
    return fused, all_neutral, neutralized


def _rows(matrix: sp.csr_matrix, users: np.ndarray) -> np.ndarray:
    return matrix[users].toarray()


@dataclass(eq=False)
class ContextualModel(Recommender):
    """Product-fused contextual recommender with a MostPop fallback."""

    kind: ClassVar[str] = "contextual"
    components: ClassVar[tuple[str, ...]] = ()

    poi_coords: np.ndarray
    kdes: list[KdeModel | None]
    social: sp.csr_matrix
    fallback: PopularityModel
    weights: dict[str, float] = field(default_factory=dict)
    flagged: dict[str, set[int]] = field(default_factory=dict)

    def _geo(self, users: np.ndarray) -> ComponentScores:
        scores = np.ones((len(users), len(self.poi_coords)))
        neutral = np.zeros(len(users), dtype=bool)
        for row, user in enumerate(users):
            kde = self.kdes[user]
            if kde is None:
                neutral[row] = True
                continue
            density = geo_score(kde, self.poi_coords[:, 0], self.poi_coords[:, 1])
            peak = density.max()
            if peak > 0 and np.isfinite(peak):
                scores[row] = density / peak
            else:
                neutral[row] = True
        return scores, neutral

    def _social(self, users: np.ndarray) -> ComponentScores:
        return _rows(self.social, users), np.zeros(len(users), dtype=bool)

    @abstractmethod
    def component_scores(self, users: np.ndarray) -> dict[str, ComponentScores]:
        """Score matrices of every component for a batch of users."""

    def score(self, users: np.ndarray) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        parts = self.component_scores(users)
        fused, all_neutral, _ = fuse(
            [parts[name] for name in self.components], [self.weights.get(name, 1.0) for name in self.components]
        )
        for name in self.components:
            scores, neutral = parts[name]
            empty = neutral | ~np.any(scores > 0, axis=1)
            self.flagged.setdefault(name, set()).update(users[empty].tolist())
        if all_neutral.any():
            self.flagged.setdefault("fallback", set()).update(users[all_neutral].tolist())
            fused[all_neutral] = self.fallback.score(users[all_neutral])
        return fused

    def component_frame(self, users: np.ndarray, items: np.ndarray) -> pd.DataFrame:
        """Component and fused scores at (users[j], items[j]) pairs."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        unique_users, row_of = np.unique(users, return_inverse=True)
        parts = self.component_scores(unique_users)
        frame = {"user": users, "poi": items}
        for name in self.components:
            scores, neutral = parts[name]
            values = scores[row_of, items]
            frame[name] = np.where(neutral[row_of], 1.0, values)
        frame["fused"] = self.score(unique_users)[row_of, items]
        return pd.DataFrame(frame)

    def log_flags(self) -> None:
        for name, users in sorted(self.flagged.items()):
            if users:
                _logger.warning("%s: %d users with a neutralized %s component", self.kind, len(users), name)


@dataclass(eq=False)
class GeoSoCaModel(ContextualModel):
    kind: ClassVar[str] = "geosoca"
    components: ClassVar[tuple[str, ...]] = ("geo", "social", "categorical")

    categorical: sp.csr_matrix = field(default_factory=lambda: sp.csr_matrix((0, 0)))

    def component_scores(self, users: np.ndarray) -> dict[str, ComponentScores]:
        return {
            "geo": self._geo(users),
            "social": self._social(users),
            "categorical": (_rows(self.categorical, users), np.zeros(len(users), dtype=bool)),
        }


@dataclass(eq=False)
class LoreModel(ContextualModel):
    kind: ClassVar[str] = "lore"
    components: ClassVar[tuple[str, ...]] = ("sequential", "geo", "social")

    transitions: TransitionModel | None = None
    histories: list[np.ndarray] = field(default_factory=list)

    def _sequential(self, users: np.ndarray) -> ComponentScores:
        scores = np.ones((len(users), len(self.poi_coords)))
        neutral = np.zeros(len(users), dtype=bool)
        if self.transitions is None:
            neutral[:] = True
            return scores, neutral
        for row, user in enumerate(users):
            values = sequential_score(self.transitions, self.histories[user])
            if values is None:
                neutral[row] = True
            else:
                scores[row] = values
        return scores, neutral

    def component_scores(self, users: np.ndarray) -> dict[str, ComponentScores]:
        return {"sequential": self._sequential(users), "geo": self._geo(users), "social": self._social(users)}


def build_geosoca(
    store: InteractionStore,
    bandwidth: float | None = None,
    adaptivity: float = 0.5,
    min_bandwidth: float = DEFAULT_MIN_BANDWIDTH_KM,
    geo_weight: float = 1.0,
    social_weight: float = 1.0,
    categorical_weight: float = 1.0,
) -> GeoSoCaModel:
    categorical = categorical_scores(store)
    return GeoSoCaModel(
        poi_coords=store.poi_coords,
        kdes=user_kdes(store, bandwidth, adaptivity, min_bandwidth),
        social=social_scores(store),
        fallback=train_mostpop(store),
        weights={"geo": geo_weight, "social": social_weight, "categorical": categorical_weight},
        categorical=categorical,
    )


def build_lore(
    store: InteractionStore,
    bandwidth: float | None = None,
    adaptivity: float = 0.5,
    min_bandwidth: float = DEFAULT_MIN_BANDWIDTH_KM,
    recency_base: float = 2.0,
    max_gap: float | None = None,
    sequential_weight: float = 1.0,
    geo_weight: float = 1.0,
    social_weight: float = 1.0,
) -> LoreModel:
    return LoreModel(
        poi_coords=store.poi_coords,
        kdes=user_kdes(store, bandwidth, adaptivity, min_bandwidth),
        social=social_scores(store),
        fallback=train_mostpop(store),
        weights={"sequential": sequential_weight, "geo": geo_weight, "social": social_weight},
        transitions=build_transitions(store, recency_base, max_gap),
        histories=store.train_history,
    )
