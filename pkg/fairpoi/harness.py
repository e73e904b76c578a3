"""Pipeline orchestration: prep -> analyze -> train -> recommend -> evaluate -> report.

Every stage result is cached under ``<out>/cache`` keyed by a digest of the
config values it depends on plus the cache keys of the stages it consumes.
A change anywhere upstream therefore misses every downstream entry, and a
rerun with an unchanged config is all cache hits. Artifacts are always
rewritten from the (computed or cached) result with deterministic content;
their digests go into ``manifest.json``. Wall-clock timings go to
``timings.json`` only.
"""

import logging
import pickle
import tempfile
import threading
import time
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
import pandas as pd

from fairpoi import __version__
from fairpoi.artifacts import atomic_write_bytes, atomic_write_text, canonical_json, digest_bytes, digest_file, write_json
from fairpoi.config import ExperimentConfig, ModelEntry, config_digest, dump_config, grid_points
from fairpoi.contextual import ContextualModel, build_geosoca, build_lore, require_categories
from fairpoi.dataset import InteractionStore, ingest, preprocess, sample_users, stats, temporal_split
from fairpoi.errors import ConfigError, DataError, StageError
from fairpoi.metrics import FairnessReport, GceParams, ModelEvaluation, build_report, evaluate_model, mark_best, user_accuracy
from fairpoi.models import (
    FactorModel,
    RankedSlate,
    Recommender,
    Slates,
    export_rankings,
    import_external_rankings,
    recommend,
    train_bpr,
    train_mostpop,
    train_pf,
    train_wmf,
)
from fairpoi.profiling import GroupScheme, ProfileStats, build_scheme, group_summary, longtail_curve, profile_popularity

_logger = logging.getLogger(__name__)

T = TypeVar("T")

STAGES = ("prep", "analyze", "train", "recommend", "evaluate", "report")
PROGRESS_MODELS = ("bpr", "wmf", "pf")


@dataclass
class RunManifest:
    """Config digest, toolkit version and the input/output digests of every stage."""

    config_digest: str
    version: str = __version__
    stages: dict[str, dict[str, dict[str, str]]] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(self, stage: str, inputs: dict[str, str], outputs: dict[str, str]) -> None:
        with self._lock:
            self.stages[stage] = {"inputs": dict(inputs), "outputs": dict(outputs)}

    def artifacts(self) -> dict[str, str]:
        listed: dict[str, str] = {}
        for entry in self.stages.values():
            listed.update(entry["outputs"])
        return listed

    def as_dict(self) -> dict[str, Any]:
        return {"config_digest": self.config_digest, "version": self.version, "stages": self.stages}


@dataclass(eq=False)
class TrainedModel:
    entry: ModelEntry
    model: Recommender | None  # None for external rankings
    params: dict[str, Any]
    validation: list[dict[str, Any]]  # grid point -> validation NDCG


def build_model(kind: str, store: InteractionStore, params: dict[str, Any], seed: int, progress: bool) -> Recommender:
    """Construct and fit one model kind with fixed hyper-parameters."""
    try:
        if kind == "mostpop":
            return train_mostpop(store)
        if kind == "bpr":
            return train_bpr(store, **params, seed=seed, progress=progress)
        if kind == "wmf":
            return train_wmf(store, **params, seed=seed, progress=progress)
        if kind == "pf":
            return train_pf(store, **params, seed=seed, progress=progress)
        if kind == "geosoca":
            return build_geosoca(store, **params)
        if kind == "lore":
            return build_lore(store, **params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{kind}: {exc}") from exc
    raise ConfigError(f"model kind '{kind}' cannot be trained")


def select_model(
    entry: ModelEntry, store: InteractionStore, config: ExperimentConfig
) -> tuple[Recommender, dict[str, Any], list[dict[str, Any]]]:
    """Fit every grid point; keep the best validation NDCG@k (first wins ties)."""
    grid = grid_points(config.model_params(entry.kind))
    progress = config.output.progress and entry.kind in PROGRESS_MODELS
    if len(grid) == 1:
        return build_model(entry.kind, store, grid[0], config.seed, progress), grid[0], []

    k = config.metrics.k
    relevant = store.relevant("validation")
    users = np.flatnonzero(np.diff(relevant.indptr) > 0)
    results = []
    best: tuple[float, Recommender, dict[str, Any]] | None = None
    for params in grid:
        model = build_model(entry.kind, store, params, config.seed, progress)
        slates = recommend(model, store, k, mode="validation", users=users)
        ndcg = np.nanmean(user_accuracy(slates, relevant, k).ndcg) if len(users) else 0.0
        results.append({"params": params, "validation_ndcg": float(ndcg)})
        _logger.info("%s: validation NDCG@%d = %.6f for %s", entry.name, k, ndcg, params)
        if best is None or ndcg > best[0]:
            best = (float(ndcg), model, params)
    assert best is not None
    _logger.info("%s: selected %s (validation NDCG@%d %.6f)", entry.name, best[2], k, best[0])
    return best[1], best[2], results


def _key(payload: Any) -> str:
    return digest_bytes(canonical_json(payload).encode("utf-8"))


def _csv_text(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, lineterminator="\n")


class Pipeline:
    """One experiment: cached stages over a shared output directory."""

    def __init__(self, config: ExperimentConfig, outdir: str | Path | None = None):
        self.config = config
        self.outdir = Path(outdir or config.output.dir)
        self.cache_dir = self.outdir / "cache"
        self.manifest = RunManifest(config_digest(config))
        self.timings: dict[str, float] = {}
        self._digests: dict[str, str] = {}
        self._keys: dict[str, str] = {}
        self._store: InteractionStore | None = None
        self._analysis: tuple[GroupScheme, ProfileStats] | None = None
        self._trained: dict[str, TrainedModel] = {}
        self._slates: dict[str, Slates] = {}
        self._lock = threading.Lock()
        ensure_writable(self.outdir)

    # --- plumbing -------------------------------------------------------

    def _entry(self, name: str) -> ModelEntry:
        for entry in self.config.models:
            if entry.name == name:
                return entry
        known = ", ".join(m.name for m in self.config.models)
        raise ConfigError(f"model '{name}' is not in the configured roster ({known})")

    def _write(self, relative: str, text: str) -> tuple[str, str]:
        payload = text.encode("utf-8")
        atomic_write_bytes(self.outdir / relative, payload)
        return relative, digest_bytes(payload)

    def _cached(self, stage: str, key_payload: Any, compute: Callable[[], T]) -> T:
        key = _key({"stage": stage, "version": __version__, "inputs": key_payload})
        with self._lock:
            self._keys[stage] = key
        path = self.cache_dir / f"{stage.replace(':', '-')}-{key[:16]}.pkl"
        if path.exists():
            try:
                with path.open("rb") as handle:
                    value = pickle.load(handle)
                _logger.info("Stage %s: cache hit", stage)
                return value
            except (OSError, pickle.UnpicklingError, EOFError, AttributeError) as exc:
                _logger.warning("Stage %s: unreadable cache entry %s (%s); recomputing", stage, path.name, exc)
        value = compute()
        atomic_write_bytes(path, pickle.dumps(value, protocol=pickle.HIGHEST_PROTOCOL))
        return value

    def _stage(self, stage: str, action: Callable[[], T]) -> T:
        started = time.perf_counter()
        try:
            result = action()
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, exc) from exc
        elapsed = time.perf_counter() - started
        with self._lock:
            self.timings[stage] = self.timings.get(stage, 0.0) + elapsed
        _logger.debug("Stage %s took %.3fs", stage, elapsed)
        return result

    # --- stages ---------------------------------------------------------

    def prep(self) -> InteractionStore:
        if self._store is None:
            self._store = self._stage("prep", self._prep)
        return self._store

    def _prep(self) -> InteractionStore:
        cfg = self.config
        ds = cfg.dataset
        if not ds.checkins:
            raise ConfigError("dataset.checkins is required")
        inputs = {}
        for label, path in (("checkins", ds.checkins), ("social", ds.social), ("categories", ds.categories)):
            if path is not None:
                if not Path(path).is_file():
                    raise DataError(f"{label} file not found: {path}")
                inputs[label] = digest_file(path)

        def compute() -> InteractionStore:
            events = ingest(ds.checkins, ds.social, ds.categories)  # type: ignore[arg-type]
            store = preprocess(events, ds.min_user_checkins, ds.min_poi_visits, iterate=ds.iterate)
            store = temporal_split(store, cfg.split.train_frac, cfg.split.valid_frac)
            return sample_users(store, cfg.sampling.fraction, cfg.seed)

        key = {
            "inputs": inputs,
            "dataset": dump_config(cfg)["dataset"] | {"checkins": None, "social": None, "categories": None},
            "split": dump_config(cfg)["split"],
            "sampling": dump_config(cfg)["sampling"],
            "seed": cfg.seed,
        }
        store = self._cached("prep", key, compute)

        checkins = store.checkins
        split_frame = pd.DataFrame(
            {
                "user_id": store.user_ids[checkins["user"].to_numpy()],
                "poi_id": store.poi_ids[checkins["poi"].to_numpy()],
                "ts": checkins["ts"],
                "part": checkins["part"],
            }
        )
        pois = pd.DataFrame(
            {"index": np.arange(store.n_pois), "poi_id": store.poi_ids, "lat": store.poi_coords[:, 0], "lon": store.poi_coords[:, 1]}
        )
        outputs = dict(
            [
                self._write("prep/split.csv", _csv_text(split_frame)),
                self._write("prep/users.csv", _csv_text(pd.DataFrame({"index": np.arange(store.n_users), "user_id": store.user_ids}))),
                self._write("prep/pois.csv", _csv_text(pois)),
                self._write(
                    "prep/stats.json",
                    canonical_json(stats(store).as_dict() | {"flagged_users": len(store.require_split().flagged_users)}),
                ),
            ]
        )
        self._digests["prep"] = outputs["prep/split.csv"]
        self.manifest.record("prep", inputs, outputs)
        return store

    def analyze(self) -> tuple[GroupScheme, ProfileStats]:
        if self._analysis is None:
            store = self.prep()
            self._analysis = self._stage("analyze", lambda: self._analyze(store))
        return self._analysis

    def _analyze(self, store: InteractionStore) -> tuple[GroupScheme, ProfileStats]:
        groups = self.config.groups

        def compute() -> tuple[GroupScheme, ProfileStats]:
            scheme = build_scheme(store, tuple(groups.user_thresholds), tuple(groups.item_shares))  # type: ignore[arg-type]
            return scheme, profile_popularity(store, scheme)

        inputs = {"prep/split.csv": self._digests["prep"]}
        key = {"inputs": inputs, "upstream": self._keys["prep"], "groups": dump_config(self.config)["groups"]}
        scheme, profile = self._cached("analyze", key, compute)

        longtail = pd.DataFrame(longtail_curve(store), columns=["rank", "checkins"])
        profile_frame = pd.DataFrame(
            {
                "user_id": store.user_ids,
                "group": np.asarray(scheme.user_labels, dtype=object)[scheme.user_group],
                "profile_size": profile.profile_size,
                "popular_count": profile.popular_count,
                "mean_popularity": profile.mean_popularity,
            }
        )
        membership = pd.concat(
            [
                pd.DataFrame({"side": "user", "id": store.user_ids, "group": np.asarray(scheme.user_labels, dtype=object)[scheme.user_group]}),
                pd.DataFrame({"side": "item", "id": store.poi_ids, "group": np.asarray(scheme.item_labels, dtype=object)[scheme.item_group]}),
            ],
            ignore_index=True,
        )
        item_sizes = scheme.item_sizes()
        summary = {
            "stats": stats(store).as_dict(),
            "user_group_sizes": dict(zip(scheme.user_labels, scheme.user_sizes().tolist(), strict=True)),
            "item_group_sizes": dict(zip(scheme.item_labels, item_sizes.tolist(), strict=True)),
            "short_head_share_of_catalog": float(item_sizes[0]) / store.n_pois,
            "pearson_size_popular": profile.r_size_popular,
            "pearson_size_mean_popularity": profile.r_size_mean_popularity,
            "users_with_unpopular_share": profile.users_with_unpopular_share,
            "users_with_unpopular_share_fraction": profile.users_with_unpopular_share / store.n_users,
            "unpopular_share": profile.unpopular_share,
        }
        outputs = dict(
            [
                self._write("analysis/longtail.csv", _csv_text(longtail)),
                self._write("analysis/profile_stats.csv", _csv_text(profile_frame)),
                self._write("analysis/groups.csv", _csv_text(membership)),
                self._write("analysis/groups_summary.csv", _csv_text(group_summary(store, scheme))),
                self._write("analysis/analysis.json", canonical_json(summary)),
            ]
        )
        self._digests["analyze"] = outputs["analysis/groups.csv"]
        self.manifest.record("analyze", inputs, outputs)
        return scheme, profile

    def train(self, name: str) -> TrainedModel:
        with self._lock:
            trained = self._trained.get(name)
        if trained is None:
            entry = self._entry(name)
            store = self.prep()
            trained = self._stage(f"train:{name}", lambda: self._train(entry, store))
            with self._lock:
                self._trained[name] = trained
        return trained

    def _train(self, entry: ModelEntry, store: InteractionStore) -> TrainedModel:
        if entry.kind == "external":
            return TrainedModel(entry=entry, model=None, params={"rankings": entry.rankings}, validation=[])
        if entry.kind == "geosoca":
            require_categories(store)

        def compute() -> TrainedModel:
            model, params, results = select_model(entry, store, self.config)
            return TrainedModel(entry=entry, model=model, params=params, validation=results)

        config = dump_config(self.config)
        inputs = {"prep/split.csv": self._digests["prep"]}
        key = {
            "inputs": inputs,
            "upstream": self._keys["prep"],
            "kind": entry.kind,
            "params": config.get(entry.kind, {}),
            "seed": self.config.seed,
            "k": self.config.metrics.k,
        }
        trained = self._cached(f"train:{entry.name}", key, compute)

        outputs = dict([self._write(f"models/{entry.name}.json", canonical_json({"kind": entry.kind, "params": trained.params, "validation": trained.validation}))])
        if isinstance(trained.model, FactorModel):
            checkpoint = f"models/{entry.name}.npz"
            trained.model.save(self.outdir / checkpoint)
            outputs[checkpoint] = digest_file(self.outdir / checkpoint)
        self._digests[f"train:{entry.name}"] = outputs[f"models/{entry.name}.json"]
        self.manifest.record(f"train:{entry.name}", inputs, outputs)
        return trained

    def recommend(self, name: str) -> Slates:
        with self._lock:
            slates = self._slates.get(name)
        if slates is None:
            trained = self.train(name)
            store = self.prep()
            slates = self._stage(f"recommend:{name}", lambda: self._recommend(trained, store))
            with self._lock:
                self._slates[name] = slates
        return slates

    def _recommend(self, trained: TrainedModel, store: InteractionStore) -> Slates:
        entry, k = trained.entry, self.config.metrics.k
        if trained.model is None:
            path = Path(entry.rankings or "")
            inputs = {"rankings": digest_file(path)} if path.is_file() else {}
            if not inputs:
                raise DataError(f"rankings file for external model '{entry.name}' not found: {path}")
            imported = self._cached(
                f"recommend:{entry.name}",
                {"inputs": inputs, "upstream": self._keys["prep"]},
                lambda: import_external_rankings(path, store),
            )
            slates = {u: RankedSlate(user=u, items=s.items[:k], scores=s.scores[:k]) for u, s in imported.items()}
            _warn_seen(entry.name, slates, store)
        else:
            model = trained.model
            inputs = {f"models/{entry.name}.json": self._digests[f"train:{entry.name}"]}
            slates = self._cached(
                f"recommend:{entry.name}",
                {"inputs": inputs, "upstream": self._keys[f"train:{entry.name}"], "k": k},
                lambda: recommend(model, store, k, mode="test"),
            )

        relative = f"rankings/{entry.name}.csv"
        export_rankings(slates, store, self.outdir / relative)
        outputs = {relative: digest_file(self.outdir / relative)}
        if self.config.output.dump_components and isinstance(trained.model, ContextualModel):
            users = np.concatenate([np.full(len(s), u) for u, s in sorted(slates.items())]) if slates else np.empty(0)
            items = np.concatenate([s.items for _, s in sorted(slates.items())]) if slates else np.empty(0)
            frame = trained.model.component_frame(users.astype(np.int64), items.astype(np.int64))
            frame.insert(0, "user_id", store.user_ids[frame.pop("user").to_numpy()])
            frame.insert(1, "poi_id", store.poi_ids[frame.pop("poi").to_numpy()])
            outputs.update([self._write(f"components/{entry.name}.csv", _csv_text(frame))])
        if isinstance(trained.model, ContextualModel):
            trained.model.log_flags()
        self._digests[f"recommend:{entry.name}"] = outputs[relative]
        self.manifest.record(f"recommend:{entry.name}", inputs, outputs)
        return slates

    def recommend_all(self) -> dict[str, Slates]:
        names = [entry.name for entry in self.config.models]
        self.analyze()
        if self.config.threads > 1 and len(names) > 1:
            with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
                results = list(pool.map(self.recommend, names))
        else:
            results = [self.recommend(name) for name in names]
        return dict(zip(names, results, strict=True))

    def evaluate(self) -> list[ModelEvaluation]:
        all_slates = self.recommend_all()
        store = self.prep()
        scheme, _ = self.analyze()
        return self._stage("evaluate", lambda: self._evaluate(all_slates, store, scheme))

    def _evaluate(self, all_slates: dict[str, Slates], store: InteractionStore, scheme: GroupScheme) -> list[ModelEvaluation]:
        mt = self.config.metrics
        params = GceParams(beta=mt.beta, limit_tolerance=mt.limit_tolerance, smoothing=mt.smoothing)
        inputs = {"analysis/groups.csv": self._digests["analyze"]}
        inputs.update({f"rankings/{name}.csv": self._digests[f"recommend:{name}"] for name in all_slates})

        def compute() -> list[ModelEvaluation]:
            evaluations = []
            for entry in self.config.models:
                evaluation = evaluate_model(
                    entry.name,
                    entry.kind,
                    all_slates[entry.name],
                    store.relevant("test"),
                    scheme,
                    mt.k,
                    params,
                    mt.user_targets,
                    mt.item_targets,
                    epsilon=mt.epsilon,
                    extra_betas=mt.extra_betas,
                )
                evaluation.selected_params = self.train(entry.name).params
                evaluations.append(evaluation)
            return evaluations

        upstream = [self._keys["prep"], self._keys["analyze"]] + [self._keys[f"recommend:{name}"] for name in all_slates]
        key = {"inputs": inputs, "upstream": upstream, "metrics": dump_config(self.config)["metrics"]}
        evaluations = self._cached("evaluate", key, compute)

        relevant = store.relevant("test")
        per_user = pd.DataFrame({"user_id": store.user_ids, "group": np.asarray(scheme.user_labels, dtype=object)[scheme.user_group]})
        for entry in self.config.models:
            per_user[entry.name] = user_accuracy(all_slates[entry.name], relevant, mt.k).ndcg
        outputs = dict([self._write("evaluation/per_user_ndcg.csv", _csv_text(per_user))])
        self._digests["evaluate"] = outputs["evaluation/per_user_ndcg.csv"]
        self.manifest.record("evaluate", inputs, outputs)
        return evaluations

    def report(self) -> FairnessReport:
        evaluations = self.evaluate()
        mt = self.config.metrics
        report = self._stage(
            "report", lambda: build_report(evaluations, mt.user_targets, mt.item_targets, mt.k, mt.beta, mt.ndcg_scale)
        )
        emit_report(report, self.manifest, self.outdir, self.timings, inputs={"evaluation/per_user_ndcg.csv": self._digests["evaluate"]})
        return report

    def run(self) -> tuple[FairnessReport, RunManifest]:
        report = self.report()
        return report, self.manifest


def _warn_seen(name: str, slates: Slates, store: InteractionStore) -> None:
    seen = store.seen("test")
    leaked = sum(
        int(np.isin(slate.items, seen.indices[seen.indptr[u] : seen.indptr[u + 1]]).sum()) for u, slate in slates.items()
    )
    if leaked:
        _logger.warning("External model %s recommends %d already-visited (train/validation) POIs", name, leaked)


def ensure_writable(outdir: Path) -> None:
    """Fail before any computation when the output directory cannot be written."""
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=outdir, prefix=".write-check-"):
            pass
    except OSError as exc:
        raise ConfigError(f"output directory {outdir} is not writable: {exc}") from exc


TABLE_METRIC_PREFIXES = ("ndcg", "precision", "recall", "user_gce_", "user_fairness", "item_gce_", "item_fairness", "auc_")


def emit_report(
    report: FairnessReport,
    manifest: RunManifest,
    outdir: str | Path,
    timings: dict[str, float] | None = None,
    inputs: dict[str, str] | None = None,
) -> dict[str, str]:
    """Write report.json, table.csv, tradeoff.csv, manifest.json and timings.json."""
    outdir = Path(outdir)
    table = report.table()
    metric_columns = [c for c in table.columns if c.startswith(TABLE_METRIC_PREFIXES)]
    outputs = {}
    for relative, text in (
        ("report.json", canonical_json(report.as_dict())),
        ("table.csv", _csv_text(mark_best(table, metric_columns))),
        ("tradeoff.csv", _csv_text(report.tradeoff())),
    ):
        payload = text.encode("utf-8")
        atomic_write_bytes(outdir / relative, payload)
        outputs[relative] = digest_bytes(payload)
    manifest.record("report", inputs or {}, outputs)
    write_json(outdir / "manifest.json", manifest.as_dict())
    if timings is not None:
        write_json(outdir / "timings.json", {stage: round(seconds, 6) for stage, seconds in timings.items()})
        for stage, seconds in sorted(timings.items()):
            _logger.info("Stage %s: %.3fs", stage, seconds)
    return outputs


def run(config: ExperimentConfig, outdir: str | Path | None = None) -> tuple[FairnessReport, RunManifest]:
    """Run every stage; failures surface as StageError naming the stage."""
    pipeline = Pipeline(config, outdir)
    atomic_write_text(pipeline.outdir / "config.resolved.json", canonical_json(dump_config(config)))
    return pipeline.run()
