"""Ranking exchange files: ``user_id,poi_id,rank,score`` with 1-based contiguous ranks."""

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from fairpoi.artifacts import atomic_write_text
from fairpoi.dataset import InteractionStore
from fairpoi.errors import DataError
from fairpoi.models.base import RankedSlate, Slates

_logger = logging.getLogger(__name__)

RANKING_COLUMNS = ["user_id", "poi_id", "rank", "score"]
_REPORTED = 20


def rankings_frame(slates: Slates, store: InteractionStore) -> pd.DataFrame:
    rows = []
    for user, slate in slates.items():
        uid = store.user_ids[user]
        for rank, (item, score) in enumerate(slate.entries(), start=1):
            rows.append((uid, store.poi_ids[item], rank, score))
    return pd.DataFrame(rows, columns=RANKING_COLUMNS)


def export_rankings(slates: Slates, store: InteractionStore, path: str | Path) -> None:
    atomic_write_text(path, rankings_frame(slates, store).to_csv(index=False, lineterminator="\n"))


def import_external_rankings(path: str | Path, store: InteractionStore) -> Slates:
    """Rebuild slates produced elsewhere (e.g. by neural models) against the store."""
    try:
        frame = pd.read_csv(
            path,
            dtype={"user_id": str, "poi_id": str},
            float_precision="round_trip",
            encoding="utf-8",
        )
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read rankings file {path}: {exc}") from exc
    missing = [c for c in RANKING_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"rankings file {path} lacks columns {missing}; header must be {','.join(RANKING_COLUMNS)}")

    users = frame["user_id"].map(store.user_index)
    pois = frame["poi_id"].map(store.poi_index)
    for label, mapped, column in (("users", users, "user_id"), ("POIs", pois, "poi_id")):
        unknown = sorted(frame.loc[mapped.isna(), column].unique())
        if unknown:
            raise DataError(f"rankings file {path} references {len(unknown)} unknown {label}: {unknown[:_REPORTED]}")

    frame = frame.assign(user=users.astype(np.int64), poi=pois.astype(np.int64))
    frame = frame.sort_values(["user", "rank"], kind="mergesort")
    slates: Slates = {}
    for user, group in frame.groupby("user", sort=True):
        ranks = group["rank"].to_numpy()
        if not np.array_equal(ranks, np.arange(1, len(ranks) + 1)):
            raise DataError(f"rankings for user {store.user_ids[user]} are not contiguous from 1: {ranks.tolist()[:_REPORTED]}")
        items = group["poi"].to_numpy(dtype=np.int64)
        if len(np.unique(items)) != len(items):
            raise DataError(f"rankings for user {store.user_ids[user]} repeat a POI")
        slates[int(user)] = RankedSlate(user=int(user), items=items, scores=group["score"].to_numpy(dtype=float))
    _logger.info("Imported %d slates from %s", len(slates), path)
    return slates
