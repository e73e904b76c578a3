"""Poisson factorization with Gamma priors, fitted by batch variational inference.

    theta_uk ~ Gamma(a, b)      beta_ik ~ Gamma(c, e)      y_ui ~ Poisson(<theta_u, beta_i>)

Each observed count is split over components by multinomial auxiliaries
phi_ui ∝ exp(E[ln theta_u] + E[ln beta_i]). Updates run over the full
catalog: a POI without train check-ins keeps shape c but shares the rate
e + sum_u E[theta_u] of every other POI, so it scores below any POI with
evidence. Users without train check-ins behave the same way.
"""

import logging

import numpy as np
import scipy.sparse as sp
from scipy.special import digamma, gammaln, logsumexp, softmax
from tqdm import tqdm

from fairpoi.dataset import InteractionStore
from fairpoi.errors import NumericError
from fairpoi.models.base import FactorModel

_logger = logging.getLogger(__name__)

ELBO_DECREASE_TOLERANCE = 1e-8
INIT_JITTER = 0.1


def expectations(shape: np.ndarray, rate: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """E[x] and E[ln x] under Gamma(shape, rate)."""
    return shape / rate, digamma(shape) - np.log(rate)


def responsibilities(
    log_theta: np.ndarray, log_beta: np.ndarray, rows: np.ndarray, cols: np.ndarray
) -> np.ndarray:
    """Multinomial auxiliary phi for every observed (row, col); each row sums to 1."""
    return softmax(log_theta[rows] + log_beta[cols], axis=1)


def _gamma_terms(
    prior_shape: float, prior_rate: float, shape: np.ndarray, rate: np.ndarray, mean: np.ndarray, log_mean: np.ndarray
) -> float:
    """E[ln p(x)] - E[ln q(x)] for Gamma-distributed factors."""
    prior = prior_shape * np.log(prior_rate) - gammaln(prior_shape) + (prior_shape - 1.0) * log_mean - prior_rate * mean
    entropy = shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * log_mean - rate * mean
    return float(np.sum(prior) - np.sum(entropy))


def elbo(
    rows: np.ndarray,
    cols: np.ndarray,
    values: np.ndarray,
    priors: tuple[float, float, float, float],
    user_shape: np.ndarray,
    user_rate: np.ndarray,
    item_shape: np.ndarray,
    item_rate: np.ndarray,
) -> float:
    """Evidence lower bound with the auxiliaries at their optimum."""
    a, b, c, e = priors
    theta, log_theta = expectations(user_shape, user_rate)
    beta, log_beta = expectations(item_shape, item_rate)
    likelihood = float(np.sum(values * logsumexp(log_theta[rows] + log_beta[cols], axis=1)))
    likelihood -= float(np.sum(theta.sum(axis=0) * beta.sum(axis=0)))
    likelihood -= float(np.sum(gammaln(values + 1.0)))
    return (
        likelihood
        + _gamma_terms(a, b, user_shape, user_rate, theta, log_theta)
        + _gamma_terms(c, e, item_shape, item_rate, beta, log_beta)
    )


def _aggregator(index: np.ndarray, n: int) -> sp.csr_matrix:
    return sp.csr_matrix((np.ones(len(index)), (index, np.arange(len(index)))), shape=(n, len(index)))


def train_pf(
    store: InteractionStore,
    factors: int = 32,
    a: float = 0.3,
    b: float = 0.3,
    c: float = 0.3,
    e: float = 0.3,
    max_iter: int = 100,
    tol: float = 1e-5,
    seed: int = 42,
    progress: bool = False,
) -> FactorModel:
    if factors < 1 or min(a, b, c, e) <= 0:
        raise ValueError("PF needs factors >= 1 and positive Gamma priors")
    train = store.train.tocsr().astype(float)
    n_users, n_items = train.shape
    rng = np.random.default_rng(seed)

    observed = train.tocoo()
    rows, cols, values = observed.row, observed.col, observed.data
    priors = (a, b, c, e)

    history: list[float] = []
    if len(values):
        user_shape = a * rng.uniform(1 - INIT_JITTER, 1 + INIT_JITTER, size=(n_users, factors))
        user_rate = b * rng.uniform(1 - INIT_JITTER, 1 + INIT_JITTER, size=(n_users, factors))
        item_shape = c * rng.uniform(1 - INIT_JITTER, 1 + INIT_JITTER, size=(n_items, factors))
        item_rate = e * rng.uniform(1 - INIT_JITTER, 1 + INIT_JITTER, size=(n_items, factors))
        by_user = _aggregator(rows, n_users)
        by_item = _aggregator(cols, n_items)
        history.append(elbo(rows, cols, values, priors, user_shape, user_rate, item_shape, item_rate))
        for iteration in tqdm(range(1, max_iter + 1), desc="PF", disable=not progress, leave=False):
            _, log_theta = expectations(user_shape, user_rate)
            beta, log_beta = expectations(item_shape, item_rate)
            weighted = values[:, None] * responsibilities(log_theta, log_beta, rows, cols)
            user_shape = a + by_user @ weighted
            user_rate = np.broadcast_to(b + beta.sum(axis=0), (n_users, factors)).copy()

            theta, log_theta = expectations(user_shape, user_rate)
            weighted = values[:, None] * responsibilities(log_theta, log_beta, rows, cols)
            item_shape = c + by_item @ weighted
            item_rate = np.broadcast_to(e + theta.sum(axis=0), (n_items, factors)).copy()

            current = elbo(rows, cols, values, priors, user_shape, user_rate, item_shape, item_rate)
            previous = history[-1]
            if not np.isfinite(current):
                raise NumericError(f"PF: non-finite ELBO at iteration {iteration}")
            if current < previous - ELBO_DECREASE_TOLERANCE * max(1.0, abs(previous)):
                raise NumericError(f"PF: ELBO decreased at iteration {iteration} ({previous:.10g} -> {current:.10g})")
            history.append(current)
            if abs(current - previous) / max(abs(previous), 1e-300) < tol:
                break
        theta_full = user_shape / user_rate
        beta_full = item_shape / item_rate
    else:
        theta_full = np.full((n_users, factors), a / b)
        beta_full = np.full((n_items, factors), c / e)

    model = FactorModel(
        kind_name="pf",
        user_factors=theta_full,
        item_factors=beta_full,
        hyperparams={"factors": factors, "a": a, "b": b, "c": c, "e": e, "max_iter": max_iter, "tol": tol},
        seed=seed,
        history=history,
    )
    model.check_finite("after PF inference")
    _logger.info("Trained PF: %d iterations, ELBO %s", max(len(history) - 1, 0), history[-1] if history else "n/a")
    return model
