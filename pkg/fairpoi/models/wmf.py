"""Weighted matrix factorization for implicit feedback, fitted by alternating least squares.

Preference p_ui is 1 for train POIs and 0 elsewhere; confidence is
c_ui = 1 + alpha * visits(u, i). Each half-sweep solves every row exactly,

    x_u = (Y^T Y + Y^T (C_u - I) Y + lambda I)^-1  Y^T C_u p_u

so the objective never increases between half-sweeps.
"""

import logging

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from tqdm import tqdm

from fairpoi.dataset import InteractionStore
from fairpoi.errors import NumericError
from fairpoi.models.base import FactorModel

_logger = logging.getLogger(__name__)

INIT_SCALE = 0.01


def confidence(train: sp.csr_matrix, alpha: float) -> sp.csr_matrix:
    """Confidence of every observed (user, POI) pair."""
    weights = train.astype(float).tocsr(copy=True)
    weights.data = 1.0 + alpha * weights.data
    return weights


def objective(train: sp.csr_matrix, X: np.ndarray, Y: np.ndarray, alpha: float, regularization: float) -> float:
    """Confidence-weighted squared loss over all pairs plus the ridge penalty."""
    coo = train.tocoo()
    predicted = np.einsum("ij,ij->i", X[coo.row], Y[coo.col])
    weights = 1.0 + alpha * coo.data
    all_pairs = float(np.sum((X.T @ X) * (Y.T @ Y)))
    observed = float(np.sum(weights * (1.0 - predicted) ** 2 - predicted**2))
    return all_pairs + observed + regularization * float(np.sum(X * X) + np.sum(Y * Y))


def _solve_rows(weights: sp.csr_matrix, other: np.ndarray, regularization: float) -> np.ndarray:
    n_rows, factors = weights.shape[0], other.shape[1]
    gram = other.T @ other
    ridge = regularization * np.eye(factors)
    solved = np.zeros((n_rows, factors))
    for row in range(n_rows):
        start, end = weights.indptr[row], weights.indptr[row + 1]
        if start == end:
            continue
        cols = weights.indices[start:end]
        conf = weights.data[start:end]
        block = other[cols]
        A = gram + (block.T * (conf - 1.0)) @ block + ridge
        b = block.T @ conf
        try:
            solved[row] = cho_solve(cho_factor(A), b)
        except LinAlgError as exc:
            raise NumericError(f"WMF: singular system for row {row} despite ridge {regularization}") from exc
    return solved


def train_wmf(
    store: InteractionStore,
    factors: int = 32,
    alpha: float = 40.0,
    regularization: float = 0.1,
    sweeps: int = 15,
    seed: int = 42,
    progress: bool = False,
) -> FactorModel:
    if factors < 1 or alpha < 0 or regularization <= 0:
        raise ValueError("WMF needs factors >= 1, alpha >= 0 and regularization > 0")
    train = store.train.tocsr()
    n_users, n_items = train.shape
    rng = np.random.default_rng(seed)
    X = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(n_users, factors))
    Y = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(n_items, factors))

    user_weights = confidence(train, alpha)
    item_weights = user_weights.T.tocsr()
    history = [objective(train, X, Y, alpha, regularization)]
    for _ in tqdm(range(sweeps), desc="WMF", disable=not progress, leave=False):
        X = _solve_rows(user_weights, Y, regularization)
        history.append(objective(train, X, Y, alpha, regularization))
        Y = _solve_rows(item_weights, X, regularization)
        history.append(objective(train, X, Y, alpha, regularization))

    model = FactorModel(
        kind_name="wmf",
        user_factors=X,
        item_factors=Y,
        hyperparams={"factors": factors, "alpha": alpha, "regularization": regularization, "sweeps": sweeps},
        seed=seed,
        history=history,
    )
    model.check_finite(f"after {sweeps} ALS sweeps")
    _logger.info("Trained WMF: %d sweeps, objective %.6g -> %.6g", sweeps, history[0], history[-1])
    return model
