"""Accuracy, two-sided fairness and trade-off summaries.

GCE compares the distribution a model induces over groups (pm) with a target
fair distribution (pf):

    GCE(pf, pm) = (sum_j pf_j^beta * pm_j^(1 - beta) - 1) / (beta * (1 - beta))

It is <= 0 and equals 0 exactly when pm == pf. At beta -> 0 and beta -> 1 the
closed-form limits -KL(pm || pf) and -KL(pf || pm) are used.

MADr is the mean absolute difference of a per-group performance value over
all unordered group pairs; 1 / (MADr + epsilon) is reported as fairness.
"""

import itertools
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.special import rel_entr

from fairpoi.errors import DivergentMeasureError
from fairpoi.models.base import Slates
from fairpoi.profiling import GroupScheme

_logger = logging.getLogger(__name__)

PROBABILITY_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class GroupDistribution:
    labels: tuple[str, ...]
    probs: np.ndarray
    degenerate: bool = False  # estimated from zero mass and replaced by uniform

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or len(probs) != len(self.labels):
            raise ValueError(f"expected {len(self.labels)} probabilities, got shape {probs.shape}")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > PROBABILITY_TOLERANCE:
            raise ValueError(f"not a probability vector: {probs.tolist()}")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, labels: Sequence[str], degenerate: bool = False) -> "GroupDistribution":
        return cls(tuple(labels), np.full(len(labels), 1.0 / len(labels)), degenerate)


@dataclass(frozen=True)
class GceParams:
    beta: float = 0.5
    limit_tolerance: float = 1e-9
    smoothing: float = 1.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.beta):
            raise ValueError("beta must be finite")
        if self.smoothing < 0:
            raise ValueError("smoothing must be >= 0")


@dataclass(frozen=True, eq=False)
class GroupPerformance:
    """Per-group value of an accuracy or exposure metric; NaN marks an empty group."""

    labels: tuple[str, ...]
    values: np.ndarray
    metric: str
    side: str


@dataclass(frozen=True)
class MadrResult:
    madr: float | None  # None when fewer than two groups have members
    fairness: float | None
    groups_used: int


@dataclass(frozen=True, eq=False)
class UserAccuracy:
    """Per-user NDCG, precision and recall; NaN for users with an empty test set."""

    ndcg: np.ndarray
    precision: np.ndarray
    recall: np.ndarray

    @property
    def evaluated(self) -> np.ndarray:
        return ~np.isnan(self.ndcg)


def ndcg_at_k(slate: Sequence[int] | np.ndarray, test_items: Sequence[int] | np.ndarray, k: int) -> float | None:
    """Binary-relevance NDCG@k; None when the test set is empty.

    Example: one test item at slate position 2 with k=10 -> 1 / log2(3) ≈ 0.63093.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    test = np.unique(np.asarray(test_items, dtype=np.int64))
    if len(test) == 0:
        return None
    top = np.asarray(slate, dtype=np.int64)[:k]
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    dcg = float(np.sum(discounts[: len(top)][np.isin(top, test)]))
    idcg = float(np.sum(discounts[: min(k, len(test))]))
    return dcg / idcg


def precision_at_k(slate: Sequence[int] | np.ndarray, test_items: Sequence[int] | np.ndarray, k: int) -> float | None:
    test = np.asarray(test_items, dtype=np.int64)
    if len(test) == 0:
        return None
    return int(np.isin(np.asarray(slate, dtype=np.int64)[:k], test).sum()) / k


def recall_at_k(slate: Sequence[int] | np.ndarray, test_items: Sequence[int] | np.ndarray, k: int) -> float | None:
    test = np.unique(np.asarray(test_items, dtype=np.int64))
    if len(test) == 0:
        return None
    return int(np.isin(np.asarray(slate, dtype=np.int64)[:k], test).sum()) / len(test)


def user_accuracy(slates: Slates, relevant: sp.csr_matrix, k: int) -> UserAccuracy:
    """Accuracy of every user; users without a slate are scored against an empty list."""
    n_users = relevant.shape[0]
    values = np.full((3, n_users), np.nan)
    empty = np.empty(0, dtype=np.int64)
    for user in range(n_users):
        test = relevant.indices[relevant.indptr[user] : relevant.indptr[user + 1]]
        if len(test) == 0:
            continue
        slate = slates[user].items if user in slates else empty
        values[0, user] = ndcg_at_k(slate, test, k)
        values[1, user] = precision_at_k(slate, test, k)
        values[2, user] = recall_at_k(slate, test, k)
    skipped = int(np.isnan(values[0]).sum())
    if skipped:
        _logger.info("%d users have an empty test set and are excluded from accuracy averages", skipped)
    return UserAccuracy(ndcg=values[0], precision=values[1], recall=values[2])


def estimate_pm_users(ndcg: np.ndarray, scheme: GroupScheme) -> GroupDistribution:
    """Share of the total NDCG mass earned by each user group."""
    labels = scheme.user_labels
    evaluated = ~np.isnan(ndcg)
    mass = np.bincount(scheme.user_group[evaluated], weights=ndcg[evaluated], minlength=len(labels))
    total = mass.sum()
    if total <= 0:
        _logger.warning("No user earned any NDCG; user-side model distribution set to uniform")
        return GroupDistribution.uniform(labels, degenerate=True)
    return GroupDistribution(labels, mass / total)


def exposure_counts(slates: Slates, scheme: GroupScheme) -> np.ndarray:
    """Recommended slots filled by each item group."""
    counts = np.zeros(len(scheme.item_labels))
    for slate in slates.values():
        counts += np.bincount(scheme.item_group[slate.items], minlength=len(scheme.item_labels))
    return counts


def estimate_pm_items(slates: Slates, scheme: GroupScheme, smoothing: float = 1.0) -> GroupDistribution:
    """Smoothed exposure share of each item group."""
    labels = scheme.item_labels
    counts = exposure_counts(slates, scheme) + smoothing
    total = counts.sum()
    if total <= 0:
        _logger.warning("Slates expose no items and smoothing is 0; item-side model distribution set to uniform")
        return GroupDistribution.uniform(labels, degenerate=True)
    return GroupDistribution(labels, counts / total)


def gce(pf: GroupDistribution, pm: GroupDistribution, params: GceParams | None = None) -> float:
    """Generalized cross-entropy between a target and a model distribution."""
    params = params or GceParams()
    target, model = pf.probs, pm.probs
    if target.shape != model.shape:
        raise ValueError("pf and pm must cover the same groups")
    if np.array_equal(target, model):
        return 0.0
    beta = params.beta
    if abs(beta) < params.limit_tolerance:
        value = -float(np.sum(rel_entr(model, target)))
    elif abs(beta - 1.0) < params.limit_tolerance:
        value = -float(np.sum(rel_entr(target, model)))
    else:
        if beta > 1 and np.any((model == 0) & (target > 0)):
            raise DivergentMeasureError(
                f"GCE with beta={beta} is infinite: model distribution has zero mass where the target has mass; "
                "use smoothing > 0"
            )
        if beta < 0 and np.any((target == 0) & (model > 0)):
            raise DivergentMeasureError(
                f"GCE with beta={beta} is infinite: target distribution has zero mass where the model has mass"
            )
        support = (target > 0) & (model > 0)
        mixed = np.sum(target[support] ** beta * model[support] ** (1.0 - beta))
        value = float((mixed - 1.0) / (beta * (1.0 - beta)))
    if not np.isfinite(value):
        raise DivergentMeasureError(f"GCE with beta={beta} diverges for pf={target.tolist()}, pm={model.tolist()}")
    return min(value, 0.0)


def madr(perf: GroupPerformance, epsilon: float = 1e-12) -> MadrResult:
    """Mean absolute pairwise difference of group values, and its guarded reciprocal.

    Example: values (0.10, 0.06, 0.02, 0.02) -> MADr = 0.28 / 6 ≈ 0.0466667.
    """
    values = perf.values[~np.isnan(perf.values)]
    if len(values) < 2:
        _logger.warning("MADr undefined on the %s side: only %d non-empty groups", perf.side, len(values))
        return MadrResult(madr=None, fairness=None, groups_used=len(values))
    deviation = float(np.mean([abs(a - b) for a, b in itertools.combinations(values.tolist(), 2)]))
    return MadrResult(madr=deviation, fairness=1.0 / (deviation + epsilon), groups_used=len(values))


def group_performance(
    side: str,
    scheme: GroupScheme,
    ndcg: np.ndarray | None = None,
    slates: Slates | None = None,
) -> GroupPerformance:
    """User side: mean NDCG per activity group. Item side: exposure share per popularity tier."""
    if side == "user":
        if ndcg is None:
            raise ValueError("user-side performance needs per-user NDCG")
        labels = scheme.user_labels
        evaluated = ~np.isnan(ndcg)
        sums = np.bincount(scheme.user_group[evaluated], weights=ndcg[evaluated], minlength=len(labels))
        sizes = np.bincount(scheme.user_group[evaluated], minlength=len(labels))
        values = np.divide(sums, sizes, out=np.full(len(labels), np.nan), where=sizes > 0)
        metric = "ndcg"
    elif side == "item":
        if slates is None:
            raise ValueError("item-side performance needs slates")
        labels = scheme.item_labels
        counts = exposure_counts(slates, scheme)
        total = counts.sum()
        values = counts / total if total > 0 else np.zeros(len(labels))
        values = np.where(scheme.item_sizes() > 0, values, np.nan)
        metric = "exposure"
    else:
        raise ValueError(f"side must be 'user' or 'item', got {side!r}")
    empty = [label for label, v in zip(labels, values, strict=True) if np.isnan(v)]
    if empty:
        _logger.warning("Empty %s groups excluded from MADr pairing: %s", side, ", ".join(empty))
    return GroupPerformance(labels=tuple(labels), values=values, metric=metric, side=side)


def tradeoff_auc(x: float, y: float) -> float:
    """Area of the right triangle under a model's point in a 2-D trade-off plot."""
    if x < 0 or y < 0:
        raise ValueError(f"trade-off coordinates must be >= 0, got ({x}, {y})")
    return x * y / 2.0


def _mean(values: np.ndarray) -> float | None:
    finite = values[~np.isnan(values)]
    return float(finite.mean()) if len(finite) else None


def _gce_by_target(
    targets: Mapping[str, Sequence[float]], labels: tuple[str, ...], pm: GroupDistribution, params: GceParams
) -> dict[str, float]:
    return {name: gce(GroupDistribution(labels, np.asarray(pf)), pm, params) for name, pf in targets.items()}


@dataclass(eq=False)
class ModelEvaluation:
    """Every metric of one model on the test partition."""

    name: str
    kind: str
    n_evaluated: int
    n_skipped: int
    ndcg: float | None
    precision: float | None
    recall: float | None
    user_pm: GroupDistribution
    item_pm: GroupDistribution
    user_gce: dict[str, float]
    item_gce: dict[str, float]
    user_performance: GroupPerformance
    item_performance: GroupPerformance
    user_madr: MadrResult
    item_madr: MadrResult
    extra_gce: dict[str, dict[str, dict[str, float]]] = field(default_factory=dict)  # beta -> side -> target
    selected_params: dict[str, object] = field(default_factory=dict)


def evaluate_model(
    name: str,
    kind: str,
    slates: Slates,
    relevant: sp.csr_matrix,
    scheme: GroupScheme,
    k: int,
    params: GceParams,
    user_targets: Mapping[str, Sequence[float]],
    item_targets: Mapping[str, Sequence[float]],
    epsilon: float = 1e-12,
    extra_betas: Sequence[float] = (),
) -> ModelEvaluation:
    accuracy = user_accuracy(slates, relevant, k)
    user_pm = estimate_pm_users(accuracy.ndcg, scheme)
    item_pm = estimate_pm_items(slates, scheme, params.smoothing)
    user_perf = group_performance("user", scheme, ndcg=accuracy.ndcg)
    item_perf = group_performance("item", scheme, slates=slates)

    extra: dict[str, dict[str, dict[str, float]]] = {}
    for beta in extra_betas:
        other = GceParams(beta=beta, limit_tolerance=params.limit_tolerance, smoothing=params.smoothing)
        extra[f"{beta:g}"] = {
            "user": _gce_by_target(user_targets, scheme.user_labels, user_pm, other),
            "item": _gce_by_target(item_targets, scheme.item_labels, item_pm, other),
        }

    evaluated = int(accuracy.evaluated.sum())
    return ModelEvaluation(
        name=name,
        kind=kind,
        n_evaluated=evaluated,
        n_skipped=len(accuracy.ndcg) - evaluated,
        ndcg=_mean(accuracy.ndcg),
        precision=_mean(accuracy.precision),
        recall=_mean(accuracy.recall),
        user_pm=user_pm,
        item_pm=item_pm,
        user_gce=_gce_by_target(user_targets, scheme.user_labels, user_pm, params),
        item_gce=_gce_by_target(item_targets, scheme.item_labels, item_pm, params),
        user_performance=user_perf,
        item_performance=item_perf,
        user_madr=madr(user_perf, epsilon),
        item_madr=madr(item_perf, epsilon),
        extra_gce=extra,
    )


def highlight(values: Mapping[str, float]) -> str:
    """Target whose |GCE| is smallest; the first listed wins ties."""
    names = list(values)
    return names[int(np.argmin(np.abs([values[n] for n in names])))]


TRADEOFF_PLOTS = ("accuracy-user", "accuracy-item", "user-item")


@dataclass(eq=False)
class FairnessReport:
    k: int
    beta: float
    ndcg_scale: float
    user_targets: dict[str, list[float]]
    item_targets: dict[str, list[float]]
    models: list[ModelEvaluation]
    user_highlight: dict[str, str] = field(default_factory=dict)
    item_highlight: dict[str, str] = field(default_factory=dict)
    auc: dict[str, dict[str, float | None]] = field(default_factory=dict)

    def points(self, evaluation: ModelEvaluation) -> dict[str, tuple[float | None, float | None]]:
        scaled = None if evaluation.ndcg is None else evaluation.ndcg * self.ndcg_scale
        user, item = evaluation.user_madr.fairness, evaluation.item_madr.fairness
        return {"accuracy-user": (scaled, user), "accuracy-item": (scaled, item), "user-item": (user, item)}

    def table(self) -> pd.DataFrame:
        """One row per model with the accuracy, fairness and AUC columns."""
        rows = []
        for ev in self.models:
            row: dict[str, object] = {"model": ev.name, "ndcg": ev.ndcg, "precision": ev.precision, "recall": ev.recall}
            row.update({f"user_gce_{name}": value for name, value in ev.user_gce.items()})
            row["user_fairness"] = ev.user_madr.fairness
            row.update({f"item_gce_{name}": value for name, value in ev.item_gce.items()})
            row["item_fairness"] = ev.item_madr.fairness
            auc = self.auc[ev.name]
            row.update({"auc_au": auc["accuracy-user"], "auc_ai": auc["accuracy-item"], "auc_ui": auc["user-item"]})
            row["user_highlight"] = self.user_highlight[ev.name]
            row["item_highlight"] = self.item_highlight[ev.name]
            rows.append(row)
        return pd.DataFrame(rows)

    def tradeoff(self) -> pd.DataFrame:
        rows = []
        for ev in self.models:
            for plot, (x, y) in self.points(ev).items():
                rows.append({"model": ev.name, "plot": plot, "x": x, "y": y, "auc": self.auc[ev.name][plot]})
        return pd.DataFrame(rows, columns=["model", "plot", "x", "y", "auc"])

    def as_dict(self) -> dict[str, object]:
        models = []
        for ev in self.models:
            models.append(
                {
                    "name": ev.name,
                    "kind": ev.kind,
                    "selected_params": ev.selected_params,
                    "users_evaluated": ev.n_evaluated,
                    "users_skipped": ev.n_skipped,
                    "ndcg": ev.ndcg,
                    "precision": ev.precision,
                    "recall": ev.recall,
                    "user": {
                        "pm": dict(zip(ev.user_pm.labels, ev.user_pm.probs.tolist(), strict=True)),
                        "pm_degenerate": ev.user_pm.degenerate,
                        "gce": ev.user_gce,
                        "highlight": self.user_highlight[ev.name],
                        "group_ndcg": dict(
                            zip(ev.user_performance.labels, ev.user_performance.values.tolist(), strict=True)
                        ),
                        "madr": ev.user_madr.madr,
                        "fairness": ev.user_madr.fairness,
                    },
                    "item": {
                        "pm": dict(zip(ev.item_pm.labels, ev.item_pm.probs.tolist(), strict=True)),
                        "gce": ev.item_gce,
                        "highlight": self.item_highlight[ev.name],
                        "group_exposure": dict(
                            zip(ev.item_performance.labels, ev.item_performance.values.tolist(), strict=True)
                        ),
                        "madr": ev.item_madr.madr,
                        "fairness": ev.item_madr.fairness,
                    },
                    "extra_gce": ev.extra_gce,
                    "auc": self.auc[ev.name],
                }
            )
        return {
            "k": self.k,
            "beta": self.beta,
            "ndcg_scale": self.ndcg_scale,
            "user_targets": self.user_targets,
            "item_targets": self.item_targets,
            "models": models,
        }


def build_report(
    evaluations: Sequence[ModelEvaluation],
    user_targets: Mapping[str, Sequence[float]],
    item_targets: Mapping[str, Sequence[float]],
    k: int,
    beta: float,
    ndcg_scale: float = 10.0,
) -> FairnessReport:
    report = FairnessReport(
        k=k,
        beta=beta,
        ndcg_scale=ndcg_scale,
        user_targets={n: list(v) for n, v in user_targets.items()},
        item_targets={n: list(v) for n, v in item_targets.items()},
        models=list(evaluations),
    )
    for ev in report.models:
        report.user_highlight[ev.name] = highlight(ev.user_gce)
        report.item_highlight[ev.name] = highlight(ev.item_gce)
        report.auc[ev.name] = {
            plot: None if x is None or y is None else tradeoff_auc(x, y)
            for plot, (x, y) in report.points(ev).items()
        }
    return report


def mark_best(table: pd.DataFrame, columns: Sequence[str]) -> pd.DataFrame:
    """Add ``<column>_mark`` with 'best' and 'second' for the two highest values of each column.

    GCE values are <= 0, so the highest is also the fairest. Ties keep row order.
    """
    marked = table.copy()
    for column in columns:
        marks = pd.Series("", index=table.index, dtype=object)
        values = pd.to_numeric(table[column], errors="coerce").dropna()
        ranked = values.sort_values(ascending=False, kind="mergesort").index.tolist()
        for label, index in zip(("best", "second"), ranked, strict=False):
            marks[index] = label
        marked[f"{column}_mark"] = marks
    return marked
