"""
SCKD-Discovery Checks
Oracle and invariant suite: gradients, assignment, Sinkhorn, loss identities, metrics, determinism.
Desk-scale Novel Class Discovery
"""

import itertools
import logging
import os
import tempfile
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from .config import ExperimentConfig, SweepPoint, SweepSpec, apply_preset
from .data import SyntheticConfig, generate_synthetic
from .evaluation import ari, cluster_accuracy, hungarian, nmi
from .experiment import run_experiment, run_sweep
from .model import ModelConfig, build_model, init_model, snapshot_replica
from .numerics import finite_difference_gradient, kl_divergence, max_relative_error, softmax
from .objective import TrainConfig, Trainer, discovery_step, sinkhorn_targets
from .sckd import SckdConfig, normalize_scores, sckd_losses, similarity_matrix, synthesize_known_pseudo, synthesize_novel_pseudo

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    """Outcome of one check."""
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0


def _timed(name: str, fn: Callable[[], tuple]) -> CheckResult:
    start = time.perf_counter()
    passed, detail = fn()
    result = CheckResult(name, bool(passed), detail, time.perf_counter() - start)
    level = logging.INFO if result.passed else logging.WARNING
    logger.log(level, "%s %s (%.2fs): %s", "PASS" if result.passed else "FAIL", name, result.seconds, detail)
    return result


# ==================== Gradient ====================

def gradient_errors(seed: int = 0, score_gradient: bool = False, h: float = 1e-6) -> Dict[str, float]:
    """
    Max relative error between the analytic and central-difference gradient
    of the stage-2 loss for each parameter block of a tiny model
    (d=3, k=2, C^l=C^u=2, N=M=2). Stop-gradient inputs come from a fixed
    copy of the starting model.
    """
    rng = np.random.default_rng(seed)
    state = init_model(3, 4, 2, 2, 2, 2, tau=0.1, rng=rng)
    detached = state.copy()
    replica = snapshot_replica(detached)
    labeled = rng.standard_normal((2, 3))
    labels = np.array([0, 1])
    unlabeled = rng.standard_normal((2, 3))
    config = TrainConfig(sckd=SckdConfig(alpha=1.0, beta=0.5, lam=0.3, score_gradient=score_gradient))

    def loss(params: Dict[str, np.ndarray]) -> float:
        perturbed = state.with_params(params)
        return discovery_step(perturbed, replica, labeled, labels, unlabeled, config, detached=detached).breakdown.total

    analytic = discovery_step(state, replica, labeled, labels, unlabeled, config, detached=detached).grads
    numeric = finite_difference_gradient(loss, state.params, h=h)
    return {name: max_relative_error(analytic[name], numeric[name], threshold=1e-5) for name in sorted(analytic)}


def check_gradients(tolerance: float = 1e-4) -> CheckResult:
    def run():
        worst = {}
        for score_gradient in (False, True):
            for name, err in gradient_errors(score_gradient=score_gradient).items():
                worst[name] = max(worst.get(name, 0.0), err)
        name, err = max(worst.items(), key=lambda item: item[1])
        return err < tolerance, f"max relative error {err:.2e} ({name})"
    return _timed("gradient", run)


# ==================== Assignment ====================

def brute_force_assignment(cost: np.ndarray) -> np.ndarray:
    """Lexicographically first minimum-cost permutation by enumeration."""
    n = cost.shape[0]
    perms = np.array(list(itertools.permutations(range(n))))
    sums = cost[np.arange(n), perms].sum(axis=1)
    return perms[int(np.argmin(sums))]


def check_hungarian(trials: int = 1000, sizes=range(2, 8), seed: int = 0) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        mismatches = 0
        for n in sizes:
            for _ in range(trials):
                # small integers force many tied optima
                cost = rng.integers(0, 10, size=(n, n)).astype(np.float64)
                perm = hungarian(cost)
                oracle = brute_force_assignment(cost)
                same_cost = cost[np.arange(n), perm].sum() == cost[np.arange(n), oracle].sum()
                if not same_cost or not np.array_equal(perm, oracle):
                    mismatches += 1
        return mismatches == 0, f"{mismatches} mismatches over {trials * len(list(sizes))} matrices"
    return _timed("hungarian", run)


# ==================== Sinkhorn ====================

def column_deviation(assignment: np.ndarray) -> float:
    """L1 distance between column sums and the balanced mass M/C."""
    rows, cols = assignment.shape
    return float(np.abs(assignment.sum(axis=0) - rows / cols).sum())


def check_sinkhorn(trials: int = 500, rows: int = 32, cols: int = 8, epsilon: float = 0.05, seed: int = 0) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        improved = 0
        rows_ok = True
        oracle_dev = 0.0
        for _ in range(trials):
            logits = rng.standard_normal((rows, cols))
            three = sinkhorn_targets(logits, epsilon, 3)
            one = sinkhorn_targets(logits, epsilon, 1)
            oracle = sinkhorn_targets(logits, epsilon, 200)
            rows_ok &= bool(np.all(np.abs(three.sum(axis=1) - 1.0) <= 1e-6))
            improved += column_deviation(three) <= column_deviation(one) + 1e-12
            oracle_dev = max(oracle_dev, column_deviation(oracle))
        share = improved / trials
        return rows_ok and share >= 0.95, (
            f"rows {'ok' if rows_ok else 'off'}, 3-iter no worse than 1-iter on {share:.1%}, "
            f"converged deviation {oracle_dev:.2e}"
        )
    return _timed("sinkhorn", run)


# ==================== Loss Identities ====================

def _tiny_experiment(output_dir: str, **train_overrides) -> ExperimentConfig:
    train = TrainConfig(
        stage1_epochs=2, stage2_epochs=3, warmup_epochs=1, lr_peak=0.05, lr_floor=0.001,
        batch_size=16, **train_overrides
    )
    return ExperimentConfig(
        name="tiny",
        synthetic=SyntheticConfig(num_known=2, num_novel=2, samples_per_known_class=20,
                                  samples_per_novel_class=20, feature_dim=4),
        model=ModelConfig(hidden=8, k=4),
        train=train,
        seeds=[0],
        output_dir=output_dir,
    )


def check_loss_identities(seed: int = 0) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        n, m, num_known, num_novel = 6, 8, 3, 4
        scores = normalize_scores(similarity_matrix(rng.standard_normal((n, 5)), rng.standard_normal((m, 5))).values)
        novel_l, known_u = rng.standard_normal((n, num_novel)), rng.standard_normal((m, num_known))
        student_u, student_l = rng.standard_normal((m, num_novel)), rng.standard_normal((n, num_known))

        losses = sckd_losses(
            student_u, synthesize_novel_pseudo(scores, novel_l, 0.1),
            student_l, synthesize_known_pseudo(scores, known_u, 0.1), lam=0.5,
        )
        balanced = abs(losses.total - (losses.k_to_n + losses.n_to_k))

        zero = sckd_losses(
            student_u, synthesize_novel_pseudo(scores, novel_l, 0.0),
            student_l, synthesize_known_pseudo(scores, known_u, 0.0),
        )
        uniform_kn = float(np.mean(kl_divergence(np.full((m, num_novel), 1.0 / num_novel), softmax(student_u))))
        uniform_nk = float(np.mean(kl_divergence(np.full((n, num_known), 1.0 / num_known), softmax(student_l))))
        uniform = max(abs(zero.k_to_n - uniform_kn), abs(zero.n_to_k - uniform_nk))

        config = _tiny_experiment(tempfile.gettempdir())
        train_set, _ = generate_synthetic(config.synthetic)
        model = build_model(config.model, train_set.feature_dim, 2, 2, np.random.default_rng(seed))
        trainer = Trainer(model, train_set, config.train)
        trainer.train_stage1()
        trainer.snapshot()
        trainer.train_stage2()
        sckd = config.train.sckd
        logged = all(step.satisfies_identity(sckd.beta, sckd.lam, 1e-9) for step in trainer.steps)

        passed = balanced <= 1e-12 and uniform <= 1e-12 and logged
        return passed, (
            f"lam=0.5 gap {balanced:.1e}, alpha=0 uniform gap {uniform:.1e}, "
            f"{len(trainer.steps)} logged steps {'consistent' if logged else 'inconsistent'}"
        )
    return _timed("loss identities", run)


# ==================== Metrics ====================

def check_metric_invariance(trials: int = 200, seed: int = 0) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        failures = 0
        for _ in range(trials):
            size = int(rng.integers(2, 8))
            y_true = rng.integers(0, size, 60)
            y_pred = rng.integers(0, size, 60)
            relabel = rng.permutation(size)
            moved = relabel[y_pred]
            invariant = (
                cluster_accuracy(y_true, y_pred) == cluster_accuracy(y_true, moved)
                and abs(nmi(y_true, y_pred) - nmi(y_true, moved)) <= 1e-12
                and abs(ari(y_true, y_pred) - ari(y_true, moved)) <= 1e-12
                and cluster_accuracy(y_true, relabel[y_true]) == 1.0
            )
            failures += not invariant
        return failures == 0, f"{failures} failures over {trials} label vectors"
    return _timed("metric invariance", run)


# ==================== Determinism ====================

def check_determinism(workdir: Optional[str] = None) -> CheckResult:
    def run():
        root = workdir or tempfile.mkdtemp(prefix="sckd-determinism-")
        contents = []
        for run_id in ("a", "b"):
            config = _tiny_experiment(os.path.join(root, run_id))
            result = run_experiment(config)
            with open(os.path.join(result.output_dir, "seed_0", "metrics.json"), "rb") as f:
                contents.append(f.read())
        same = contents[0] == contents[1]
        return same, "per-seed metrics identical" if same else "per-seed metrics differ"
    return _timed("determinism", run)


# ==================== Directional (slow) ====================

def desk_experiment(output_dir: str, seeds: int = 5) -> ExperimentConfig:
    """Laptop-sized synthetic setting for the directional checks."""
    return ExperimentConfig(
        name="desk",
        synthetic=SyntheticConfig(num_known=5, num_novel=5, feature_dim=16, separation=4.0, std=1.0),
        model=ModelConfig(hidden=64, k=16),
        train=TrainConfig(stage1_epochs=20, stage2_epochs=40, warmup_epochs=5),
        seeds=list(range(seeds)),
        output_dir=output_dir,
    )


def _stat(result, key: str) -> tuple:
    stats = result.aggregate.get(key, {})
    return stats.get("mean") or 0.0, stats.get("std") or 0.0


def _at_least(a: tuple, b: tuple) -> bool:
    """Mean of ``a`` is >= mean of ``b`` up to one standard deviation."""
    return a[0] >= b[0] - max(a[1], b[1])


def check_imbalance(workdir: str, seeds: int = 5) -> CheckResult:
    def run():
        base = desk_experiment(workdir, seeds)
        spec = SweepSpec(
            base=base,
            points=[SweepPoint(8, 2), SweepPoint(5, 5), SweepPoint(2, 8)],
            total_samples=1000,
            methods=["baseline", "sckd"],
        )
        table = run_sweep(spec)
        by_method = {method: frame.sort_values("novel_fraction") for method, frame in table.groupby("method")}
        degradation = {
            method: frame["known_acc_mean"].iloc[0] - frame["known_acc_mean"].iloc[-1]
            for method, frame in by_method.items()
        }
        all_ok = all(
            s >= b for s, b in zip(by_method["sckd"]["all_acc_mean"], by_method["baseline"]["all_acc_mean"])
        )
        passed = degradation["sckd"] < degradation["baseline"] and all_ok
        return passed, (
            f"known-acc drop sckd {degradation['sckd']:.3f} vs baseline {degradation['baseline']:.3f}; "
            f"all-acc >= baseline at every point: {all_ok}"
        )
    return _timed("imbalance sweep", run)


def _preset_runs(workdir: str, presets: List[str], seeds: int) -> Dict[str, object]:
    runs = {}
    for preset in presets:
        config = apply_preset(desk_experiment(workdir, seeds), preset)
        config.name = f"desk_{preset}"
        runs[preset] = run_experiment(config)
    return runs


def check_ablation(workdir: str, seeds: int = 5) -> CheckResult:
    def run():
        runs = _preset_runs(workdir, ["sckd", "only_k_to_n", "only_n_to_k", "baseline", "no_replica"], seeds)
        acc = {name: _stat(r, "test/task_aware/novel_cluster_acc") for name, r in runs.items()}
        best_single = max(acc["only_k_to_n"], acc["only_n_to_k"], key=lambda s: s[0])
        passed = (
            _at_least(acc["sckd"], best_single)
            and _at_least(best_single, acc["baseline"])
            and acc["no_replica"][0] <= acc["sckd"][0] + acc["sckd"][1]
        )
        detail = ", ".join(f"{name} {mean:.3f}±{std:.3f}" for name, (mean, std) in acc.items())
        return passed, detail
    return _timed("ablation ordering", run)


def check_score_ablation(workdir: str, seeds: int = 5) -> CheckResult:
    def run():
        runs = _preset_runs(workdir, ["sckd", "average_s", "random_s"], seeds)
        acc = {name: _stat(r, "test/task_aware/novel_cluster_acc")[0] for name, r in runs.items()}
        passed = acc["sckd"] >= acc["average_s"] and acc["sckd"] >= acc["random_s"]
        return passed, ", ".join(f"{name} {value:.3f}" for name, value in acc.items())
    return _timed("score-matrix ablation", run)


def run_checks(directional: bool = False, workdir: Optional[str] = None) -> List[CheckResult]:
    """
    Run the fast oracle/invariant checks, plus the slow desk-scale
    directional checks when ``directional`` is set.
    """
    workdir = workdir or tempfile.mkdtemp(prefix="sckd-checks-")
    results = [
        check_gradients(),
        check_hungarian(),
        check_sinkhorn(),
        check_loss_identities(),
        check_metric_invariance(),
        check_determinism(os.path.join(workdir, "determinism")),
    ]
    if directional:
        results += [
            check_imbalance(os.path.join(workdir, "imbalance")),
            check_ablation(os.path.join(workdir, "ablation")),
            check_score_ablation(os.path.join(workdir, "score")),
        ]
    return results
