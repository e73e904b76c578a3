"""Bayesian personalized ranking with matrix factorization, trained by SGD.

Each step samples a user with at least one train POI, a positive POI from
that user's train set and a negative POI uniformly from the rest of the
catalog, then ascends

    ln sigmoid(x_ui - x_uj) - lambda * (|u|^2 + |v_i|^2 + |v_j|^2 + b_i^2 + b_j^2)

with x_ui = <u, v_i> + b_i.
"""

import logging

import numpy as np
from scipy.special import expit
from tqdm import tqdm

from fairpoi.dataset import InteractionStore
from fairpoi.errors import DataError, NumericError
from fairpoi.models.base import FactorModel

_logger = logging.getLogger(__name__)

INIT_SCALE = 0.01


def triple_objective(
    u: np.ndarray, vi: np.ndarray, vj: np.ndarray, bi: float, bj: float, regularization: float
) -> float:
    """Regularized log-likelihood of one (user, positive, negative) triple."""
    x = float(u @ (vi - vj)) + bi - bj
    penalty = float(u @ u + vi @ vi + vj @ vj) + bi * bi + bj * bj
    return -float(np.logaddexp(0.0, -x)) - regularization * penalty


def triple_gradient(
    u: np.ndarray, vi: np.ndarray, vj: np.ndarray, bi: float, bj: float, regularization: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float, float]:
    """Gradient of ``triple_objective`` w.r.t. (u, v_i, v_j, b_i, b_j)."""
    x = float(u @ (vi - vj)) + bi - bj
    g = float(expit(-x))
    two_lambda = 2.0 * regularization
    return (
        g * (vi - vj) - two_lambda * u,
        g * u - two_lambda * vi,
        -g * u - two_lambda * vj,
        g - two_lambda * bi,
        -g - two_lambda * bj,
    )


def train_bpr(
    store: InteractionStore,
    factors: int = 32,
    learning_rate: float = 0.05,
    regularization: float = 0.01,
    steps_per_interaction: int = 30,
    use_bias: bool = True,
    seed: int = 42,
    progress: bool = False,
) -> FactorModel:
    if factors < 1 or learning_rate < 0 or regularization <= 0:
        raise ValueError("BPR needs factors >= 1, learning_rate >= 0 and regularization > 0")
    train = store.train.tocsr()
    n_users, n_items = train.shape
    row_lengths = np.diff(train.indptr)
    active = np.flatnonzero((row_lengths > 0) & (row_lengths < n_items))
    if len(active) == 0:
        raise DataError("BPR needs at least one user with train POIs and unvisited POIs")

    rng = np.random.default_rng(seed)
    user_factors = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(n_users, factors))
    item_factors = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(n_items, factors))
    item_bias = np.zeros(n_items)
    positives = [set(train.indices[train.indptr[u] : train.indptr[u + 1]].tolist()) for u in range(n_users)]

    epoch_steps = int(train.nnz)
    n_steps = steps_per_interaction * epoch_steps
    step = 0
    epochs = tqdm(range(steps_per_interaction), desc="BPR", disable=not progress, leave=False)
    for _ in epochs:
        users = active[rng.integers(len(active), size=epoch_steps)]
        offsets = (rng.random(epoch_steps) * row_lengths[users]).astype(np.int64)
        pos_items = train.indices[train.indptr[users] + offsets]
        neg_items = rng.integers(n_items, size=epoch_steps)
        for u, i, j in zip(users.tolist(), pos_items.tolist(), neg_items.tolist(), strict=True):
            step += 1
            while j in positives[u]:
                j = int(rng.integers(n_items))
            bi, bj = (item_bias[i], item_bias[j]) if use_bias else (0.0, 0.0)
            gu, gvi, gvj, gbi, gbj = triple_gradient(
                user_factors[u], item_factors[i], item_factors[j], bi, bj, regularization
            )
            user_factors[u] += learning_rate * gu
            item_factors[i] += learning_rate * gvi
            item_factors[j] += learning_rate * gvj
            if use_bias:
                item_bias[i] += learning_rate * gbi
                item_bias[j] += learning_rate * gbj
            if not (np.isfinite(user_factors[u]).all() and np.isfinite(item_factors[[i, j]]).all()):
                raise NumericError(f"BPR diverged at step {step} of {n_steps}")
            if use_bias and not np.isfinite(item_bias[[i, j]]).all():
                raise NumericError(f"BPR item bias diverged at step {step} of {n_steps}")

    model = FactorModel(
        kind_name="bpr",
        user_factors=user_factors,
        item_factors=item_factors,
        item_bias=item_bias if use_bias else None,
        hyperparams={
            "factors": factors,
            "learning_rate": learning_rate,
            "regularization": regularization,
            "steps_per_interaction": steps_per_interaction,
            "use_bias": use_bias,
        },
        seed=seed,
    )
    model.check_finite(f"after {n_steps} BPR steps")
    _logger.info("Trained BPR: %d steps, %d factors", n_steps, factors)
    return model
