"""Scoring contract shared by every recommender, top-k slates and checkpoints."""

import io
import json
import logging
import zipfile
from abc import ABC, abstractmethod
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, ClassVar

import numpy as np
import scipy.sparse as sp

from fairpoi.artifacts import atomic_write_bytes
from fairpoi.dataset import InteractionStore
from fairpoi.errors import DataError, NumericError

_logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)
SCORE_BATCH = 256


@dataclass(frozen=True, eq=False)
class RankedSlate:
    """Top-k POIs for one user, best first."""

    user: int
    items: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.items)

    def entries(self) -> list[tuple[int, float]]:
        return list(zip(self.items.tolist(), self.scores.tolist(), strict=True))

    def same_as(self, other: "RankedSlate") -> bool:
        return (
            self.user == other.user
            and np.array_equal(self.items, other.items)
            and np.array_equal(self.scores, other.scores)
        )


Slates = dict[int, RankedSlate]


class Recommender(ABC):
    """A trained model that scores every POI for a batch of users."""

    kind: ClassVar[str] = "base"

    @abstractmethod
    def score(self, users: np.ndarray) -> np.ndarray:
        """Return a (len(users), n_pois) score matrix."""


@dataclass(eq=False)
class FactorModel(Recommender):
    """Latent factor model: score(u, i) = <user_factors[u], item_factors[i]> + item_bias[i]."""

    kind_name: str
    user_factors: np.ndarray
    item_factors: np.ndarray
    item_bias: np.ndarray | None = None
    hyperparams: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    history: list[float] = field(default_factory=list)  # objective or ELBO trace

    @property
    def kind(self) -> str:  # type: ignore[override]
        return self.kind_name

    def score(self, users: np.ndarray) -> np.ndarray:
        scores = self.user_factors[users] @ self.item_factors.T
        if self.item_bias is not None:
            scores = scores + self.item_bias[np.newaxis, :]
        return scores

    def check_finite(self, where: str) -> None:
        arrays = [self.user_factors, self.item_factors]
        if self.item_bias is not None:
            arrays.append(self.item_bias)
        if not all(np.isfinite(a).all() for a in arrays):
            raise NumericError(f"{self.kind_name}: non-finite parameters {where}")

    def save(self, path: str | Path) -> None:
        """Write an .npz checkpoint with an embedded JSON header; equal models give equal bytes."""
        header = {
            "format_version": CHECKPOINT_VERSION,
            "kind": self.kind_name,
            "hyperparams": self.hyperparams,
            "seed": self.seed,
            "history": self.history,
        }
        arrays = {
            "header": np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8),
            "user_factors": self.user_factors,
            "item_factors": self.item_factors,
        }
        if self.item_bias is not None:
            arrays["item_bias"] = self.item_bias
        buffer = io.BytesIO()
        with zipfile.ZipFile(buffer, "w", compression=zipfile.ZIP_STORED) as archive:
            for name, array in arrays.items():
                member = io.BytesIO()
                np.lib.format.write_array(member, np.ascontiguousarray(array), allow_pickle=False)
                archive.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_EPOCH), member.getvalue())
        atomic_write_bytes(path, buffer.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "FactorModel":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(data["header"].tobytes().decode("utf-8"))
            if header.get("format_version") != CHECKPOINT_VERSION:
                raise DataError(f"unsupported checkpoint version in {path}: {header.get('format_version')}")
            return cls(
                kind_name=header["kind"],
                user_factors=data["user_factors"],
                item_factors=data["item_factors"],
                item_bias=data["item_bias"] if "item_bias" in data.files else None,
                hyperparams=header["hyperparams"],
                seed=header["seed"],
                history=header["history"],
            )


def top_k(scores: np.ndarray, excluded: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Best ``k`` non-excluded items, ties broken by ascending item index."""
    candidates = np.flatnonzero(~excluded)
    values = scores[candidates]
    if np.isnan(values).any():
        raise NumericError("model produced NaN scores")
    if k < len(candidates):
        kth = np.partition(values, len(values) - k)[len(values) - k]
        keep = values >= kth
        candidates, values = candidates[keep], values[keep]
    order = np.lexsort((candidates, -values))[:k]
    return candidates[order], values[order]


def _excluded_rows(seen: sp.csr_matrix, users: np.ndarray, n_pois: int) -> np.ndarray:
    mask = np.zeros((len(users), n_pois), dtype=bool)
    for row, user in enumerate(users):
        mask[row, seen.indices[seen.indptr[user] : seen.indptr[user + 1]]] = True
    return mask


def recommend(
    model: Recommender,
    store: InteractionStore,
    k: int,
    mode: str = "test",
    users: Iterable[int] | None = None,
) -> Slates:
    """Top-k slates over unvisited POIs.

    In test mode train and validation POIs are excluded; in validation mode
    only train POIs are.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    seen = store.seen(mode)
    user_list = np.arange(store.n_users) if users is None else np.asarray(list(users), dtype=np.int64)
    slates: Slates = {}
    empty = []
    for start in range(0, len(user_list), SCORE_BATCH):
        batch = user_list[start : start + SCORE_BATCH]
        scores = model.score(batch)
        excluded = _excluded_rows(seen, batch, store.n_pois)
        for row, user in enumerate(batch):
            items, values = top_k(scores[row], excluded[row], k)
            if len(items) == 0:
                empty.append(int(user))
            slates[int(user)] = RankedSlate(user=int(user), items=items, scores=values)
    if empty:
        _logger.warning("%d users have no candidate POIs and get empty slates", len(empty))
    return slates
