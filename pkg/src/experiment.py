"""
SCKD-Discovery Experiment Runner
Seeds, two-stage training, evaluation, imbalance sweeps and embedding dumps.
Desk-scale Novel Class Discovery
"""

import copy
import dataclasses
import itertools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .config import (
    ExperimentConfig, SweepPoint, SweepSpec, apply_preset, config_to_dict, experiment_from_dict,
)
from .data import DiscoveryDataset, generate_synthetic, load_csv, split_dataset
from .errors import ConfigurationError, NumericError
from .evaluation import EvalReport, evaluate_all, evaluate_task_agnostic
from .export_utils import FLOAT_FORMAT, get_export_service
from .model import ModelState, build_model, forward, save_checkpoint
from .objective import Trainer

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[float, str], None]


@dataclass
class SeedResult:
    """Outcome of one seed. ``metrics`` is flat: ``<split>/<protocol>/<metric>``."""
    seed: int
    status: str = "completed"
    metrics: Dict[str, Optional[float]] = field(default_factory=dict)
    reports: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    error: Optional[str] = None


@dataclass
class ExperimentResult:
    """A finished results bundle."""
    name: str
    output_dir: str
    status: str
    seeds: List[SeedResult]
    aggregate: Dict[str, Dict[str, Optional[float]]]

    @property
    def failed(self) -> bool:
        return self.status != "completed"


# ==================== Data ====================

def prepare_data(config: ExperimentConfig, seed: int) -> Tuple[DiscoveryDataset, DiscoveryDataset]:
    """
    Train/test datasets for one seed. Synthetic data is redrawn per seed
    (generator seed offset by the run seed); CSV data is fixed.
    """
    if config.source == "synthetic":
        synthetic = dataclasses.replace(config.synthetic, seed=config.synthetic.seed + seed)
        return generate_synthetic(synthetic)

    for name, path in (("csv.path", config.csv.path), ("csv.test_path", config.csv.test_path)):
        if path and not os.path.isfile(path):
            raise ConfigurationError(f"CSV file not found: {path}", field=name)

    schema = config.csv.to_schema()
    data = load_csv(config.csv.path, schema)
    if config.csv.test_path:
        return data, load_csv(config.csv.test_path, schema)

    features = np.vstack([data.labeled_features, data.unlabeled_features])
    labels = np.concatenate([data.labeled_labels, data.unlabeled_hidden_labels])
    rng = np.random.default_rng(config.csv.split_seed)
    return split_dataset(features, labels, data.num_known, data.num_novel, rng)


def flatten_reports(reports: Dict[str, EvalReport]) -> Dict[str, Optional[float]]:
    return {
        f"{key}/{name}": value
        for key, report in sorted(reports.items())
        for name, value in report.metrics().items()
    }


# ==================== Single Seed ====================

def _seed_dir(seed: int) -> str:
    return f"seed_{seed}"


def run_seed(
    config: ExperimentConfig,
    seed: int,
    output_dir: str,
    progress_callback: Optional[ProgressCallback] = None
) -> SeedResult:
    """
    Stage 1, replica snapshot, stage 2 and final evaluation for one seed.

    Writes ``seed_<n>/metrics.json``, ``seed_<n>/train_log.jsonl`` and
    ``seed_<n>/model.npz`` under ``output_dir``. A NumericError during
    training marks the seed failed; its partial log is still written.
    """
    exporter = get_export_service(output_dir)
    folder = _seed_dir(seed)
    train_config = dataclasses.replace(config.train, seed=seed)

    train_set, test_set = prepare_data(config, seed)
    model = build_model(
        config.model, train_set.feature_dim, train_set.num_known, train_set.num_novel,
        np.random.default_rng(seed)
    )

    def periodic_eval(epoch: int, state: ModelState) -> Dict[str, Any]:
        every = config.eval.every
        if every <= 0 or (epoch + 1) % every:
            return {}
        report = evaluate_task_agnostic(state, test_set, mapping=config.eval.agnostic_mapping)
        return {"eval": report.metrics()}

    trainer = Trainer(model, train_set, train_config, progress_callback, epoch_callback=periodic_eval)
    result = SeedResult(seed=seed)
    try:
        trainer.train_stage1()
        trainer.snapshot()
        trainer.train_stage2()
    except NumericError as e:
        logger.error("Seed %d failed: %s", seed, e)
        result.status = "failed"
        result.error = str(e)

    if result.status == "completed":
        reports = evaluate_all(
            model, test_set,
            train_set=train_set if config.eval.train_novel else None,
            mapping=config.eval.agnostic_mapping,
        )
        result.metrics = flatten_reports(reports)
        result.reports = {key: report.to_dict() for key, report in sorted(reports.items())}
        save_checkpoint(
            exporter.path(os.path.join(folder, "model.npz")), model, trainer.replica,
            config={**config_to_dict(config), "run_seed": seed},
        )

    exporter.write_jsonl(os.path.join(folder, "train_log.jsonl"), trainer.epoch_log)
    exporter.write_json(os.path.join(folder, "metrics.json"), dataclasses.asdict(result))
    return result


def _run_seed_worker(args: Tuple[Dict[str, Any], int, str]) -> SeedResult:
    config_dict, seed, output_dir = args
    return run_seed(experiment_from_dict(config_dict), seed, output_dir)


# ==================== Aggregation ====================

def aggregate_metrics(results: List[SeedResult]) -> Dict[str, Dict[str, Optional[float]]]:
    """
    Mean and population std (ddof=0) of every metric over completed seeds.
    Metrics absent for a seed are skipped for that seed.
    """
    rows = [r.metrics for r in results if r.status == "completed"]
    if not rows:
        return {}
    frame = pd.DataFrame(rows, dtype=float)
    summary = {}
    for column in sorted(frame.columns):
        values = frame[column].dropna()
        if values.empty:
            summary[column] = {"mean": None, "std": None, "n": 0}
        else:
            summary[column] = {
                "mean": float(values.mean()),
                "std": float(values.std(ddof=0)),
                "n": int(values.size),
            }
    return summary


def run_experiment(
    config: ExperimentConfig,
    progress_callback: Optional[ProgressCallback] = None
) -> ExperimentResult:
    """
    Run every seed of ``config`` and write the results bundle.

    Bundle layout under ``<output_dir>/<name>/``: ``config.json`` (the
    config verbatim), ``seed_<n>/...`` per seed, ``reports.csv`` and
    ``aggregate.json``.

    Args:
        config: Validated experiment config.
        progress_callback: Optional callback(fraction, message) over all seeds.

    Returns:
        ExperimentResult; status is ``failed`` if any seed failed.
    """
    config.validate()
    bundle = os.path.join(config.output_dir, config.name)
    exporter = get_export_service(bundle)
    reports_path = exporter.path("reports.csv")
    if os.path.exists(reports_path):
        os.remove(reports_path)
    exporter.write_json("config.json", config_to_dict(config))

    seeds = list(config.seeds)
    logger.info("Running '%s' on %d seed(s) with %d worker(s)", config.name, len(seeds), config.workers)

    results: List[SeedResult] = []
    if config.workers > 1 and len(seeds) > 1:
        payload = [(config_to_dict(config), seed, bundle) for seed in seeds]
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for i, result in enumerate(pool.map(_run_seed_worker, payload)):
                results.append(result)
                if progress_callback:
                    progress_callback((i + 1) / len(seeds), f"seed {result.seed} {result.status}")
    else:
        for i, seed in enumerate(seeds):
            def seed_progress(fraction: float, message: str, i=i, seed=seed):
                if progress_callback:
                    progress_callback((i + fraction) / len(seeds), f"seed {seed}: {message}")

            results.append(run_seed(config, seed, bundle, seed_progress))

    report_rows = [
        {"seed": r.seed, "key": key, **report} for r in results for key, report in r.reports.items()
    ]
    if report_rows:
        exporter.append_csv_rows("reports.csv", report_rows)

    status = "completed" if all(r.status == "completed" for r in results) else "failed"
    aggregate = aggregate_metrics(results)
    exporter.write_json("aggregate.json", {
        "status": status,
        "seeds": seeds,
        "failed_seeds": [r.seed for r in results if r.status != "completed"],
        "metrics": aggregate,
    })
    logger.info("Experiment '%s' %s; bundle at %s", config.name, status, bundle)
    return ExperimentResult(config.name, bundle, status, results, aggregate)


# ==================== Sweep ====================

def novel_fraction(point: SweepPoint, total_samples: int) -> float:
    """Share of samples belonging to novel classes at a sweep point."""
    known, novel = point_sample_counts(point, total_samples)
    return point.num_novel * novel / (point.num_known * known + point.num_novel * novel)


def point_sample_counts(point: SweepPoint, total_samples: int) -> Tuple[int, int]:
    """Per-class counts; unspecified counts share the total budget equally."""
    share = max(1, total_samples // (point.num_known + point.num_novel))
    return (point.samples_per_known_class or share, point.samples_per_novel_class or share)


def _grid(spec: SweepSpec) -> List[Dict[str, float]]:
    axes = [(name, values) for name, values in (("alpha", spec.alphas), ("beta", spec.betas), ("lam", spec.lams)) if values]
    if not axes:
        return [{}]
    names = [name for name, _ in axes]
    return [dict(zip(names, combo)) for combo in itertools.product(*[values for _, values in axes])]


def _variant_tag(method: str, overrides: Dict[str, float]) -> str:
    return "_".join([method] + [f"{k}{v:g}" for k, v in overrides.items()])


def run_sweep(spec: SweepSpec, progress_callback: Optional[ProgressCallback] = None) -> pd.DataFrame:
    """
    Imbalance sweep: every point × method preset × grid combination.

    Grid values override the preset, except that the ``baseline`` method
    always keeps beta = 0. Rows are ordered by increasing novel fraction.

    Returns:
        The sweep table, also written as ``sweep.csv`` / ``sweep.json``.
    """
    spec.validate()
    base = spec.base
    if base.source != "synthetic":
        raise ConfigurationError("sweeps vary class counts and need the synthetic source", field="source")

    points = sorted(spec.points, key=lambda p: (novel_fraction(p, spec.total_samples), p.num_novel))
    variants = [(method, overrides) for method in spec.methods for overrides in _grid(spec)]
    total = len(points) * len(variants)
    sweep_dir = os.path.join(base.output_dir, base.name, "sweep")

    rows = []
    done = 0
    for point in points:
        known_count, novel_count = point_sample_counts(point, spec.total_samples)
        fraction = novel_fraction(point, spec.total_samples)
        for method, overrides in variants:
            config = apply_preset(copy.deepcopy(base), method)
            sckd_overrides = {k: v for k, v in overrides.items() if not (method == "baseline" and k == "beta")}
            config.train.sckd = dataclasses.replace(config.train.sckd, **sckd_overrides)
            config.train.sckd.validate()
            config.synthetic = dataclasses.replace(
                config.synthetic,
                num_known=point.num_known, num_novel=point.num_novel,
                samples_per_known_class=known_count, samples_per_novel_class=novel_count,
            )
            tag = _variant_tag(method, overrides)
            config.name = f"{point.num_known}k_{point.num_novel}n/{tag}"
            config.output_dir = sweep_dir

            result = run_experiment(config)
            metrics = result.aggregate
            row = {
                "point": point.label,
                "num_known": point.num_known,
                "num_novel": point.num_novel,
                "novel_fraction": fraction,
                "method": tag,
                "beta": config.train.sckd.beta,
                "alpha": config.train.sckd.alpha,
                "lam": config.train.sckd.lam,
                "status": result.status,
            }
            for name in ("known_acc", "novel_cluster_acc", "all_acc"):
                stats = metrics.get(f"test/task_agnostic/{name}", {})
                row[f"{name}_mean"] = stats.get("mean")
                row[f"{name}_std"] = stats.get("std")
            rows.append(row)

            done += 1
            logger.info("Sweep %d/%d: %s %s all_acc=%s", done, total, point.label, tag, row["all_acc_mean"])
            if progress_callback:
                progress_callback(done / total, f"{point.label} {tag}")

    table = pd.DataFrame(rows)
    get_export_service(sweep_dir).write_table("sweep", table)
    return table


# ==================== Embeddings ====================

def emit_embeddings(model: ModelState, dataset: DiscoveryDataset, path: str) -> pd.DataFrame:
    """
    Write one row per sample: ``sample_id, true_label, predicted_id, f0..f(k-1)``.

    Labeled samples come first; ``predicted_id`` is the argmax over all
    class slots. Floats are written with 17 significant digits.
    """
    features = dataset.all_features()
    out = forward(model, features)
    frame = pd.DataFrame(out.features, columns=[f"f{i}" for i in range(out.features.shape[1])])
    frame.insert(0, "predicted_id", np.argmax(out.concat_probs, axis=1))
    frame.insert(0, "true_label", dataset.all_labels())
    frame.insert(0, "sample_id", np.arange(features.shape[0]))

    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info("Wrote %d embeddings to %s", len(frame), path)
    return frame


def load_embeddings(path: str) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")

