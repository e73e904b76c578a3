"""Non-personalized popularity baseline."""

from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from fairpoi.dataset import InteractionStore
from fairpoi.errors import DataError
from fairpoi.models.base import Recommender


@dataclass(eq=False)
class PopularityModel(Recommender):
    """Same score vector for every user: global train check-in counts."""

    kind: ClassVar[str] = "mostpop"
    item_scores: np.ndarray

    def score(self, users: np.ndarray) -> np.ndarray:
        return np.tile(self.item_scores, (len(users), 1))


def train_mostpop(store: InteractionStore) -> PopularityModel:
    train = store.train
    if train.nnz == 0:
        raise DataError("MostPop needs a non-empty train partition")
    return PopularityModel(item_scores=np.asarray(train.sum(axis=0), dtype=float).ravel())
