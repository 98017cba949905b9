"""
SCKD-Discovery Objective
Sinkhorn-Knopp targets, cross-entropy, total-loss assembly, SGD, LR schedule and the two-stage trainer.
Desk-scale Novel Class Discovery
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from .data import Batch, BatchSampler, DiscoveryDataset, augment_view
from .errors import ConfigurationError, ContractError, NumericError
from .model import (
    ENCODER_PARAMS, KNOWN_HEAD_PARAMS, NOVEL_HEAD_PARAMS,
    ModelState, ReplicaEncoder, backward, forward, forward_replica, snapshot_replica,
)
from .numerics import PROB_FLOOR, Gradients, as_matrix, softmax
from .sckd import SckdConfig, build_scores, sckd_losses, score_backward, synthesize_known_pseudo, synthesize_novel_pseudo

logger = logging.getLogger(__name__)

UNLABELED_TARGETS = ("novel_only", "all_slots")

# Smallest row or column mass the linear-domain Sinkhorn accepts.
LINEAR_SINKHORN_FLOOR = 1e-200


@dataclass
class TrainConfig:
    """Optimisation schedule for both stages plus the distillation settings."""
    stage1_epochs: int = 50
    stage2_epochs: int = 200
    warmup_epochs: int = 10
    lr_floor: float = 0.001
    lr_peak: float = 0.4
    momentum: float = 0.9
    weight_decay: float = 1.5e-4
    max_grad_norm: float = 5.0
    batch_size: int = 64
    sinkhorn_epsilon: float = 0.05
    sinkhorn_iters: int = 3
    noise_std: float = 0.1
    seed: int = 0
    unlabeled_targets: str = "novel_only"
    sckd: SckdConfig = field(default_factory=SckdConfig)

    def validate(self):
        for name in ("stage1_epochs", "stage2_epochs", "sinkhorn_iters"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"must be >= 1, got {getattr(self, name)}", field=name)
        if self.warmup_epochs < 0:
            raise ConfigurationError(f"must be >= 0, got {self.warmup_epochs}", field="warmup_epochs")
        if not 0 < self.lr_floor <= self.lr_peak:
            raise ConfigurationError(
                f"need 0 < lr_floor <= lr_peak, got {self.lr_floor} / {self.lr_peak}", field="lr_floor"
            )
        if not 0 <= self.momentum < 1:
            raise ConfigurationError(f"must lie in [0, 1), got {self.momentum}", field="momentum")
        if self.weight_decay < 0:
            raise ConfigurationError(f"must be >= 0, got {self.weight_decay}", field="weight_decay")
        if not self.max_grad_norm >= 0:
            raise ConfigurationError(f"must be >= 0, got {self.max_grad_norm}", field="max_grad_norm")
        if self.batch_size < 2:
            raise ConfigurationError(f"must be >= 2, got {self.batch_size}", field="batch_size")
        if not self.sinkhorn_epsilon > 0:
            raise ConfigurationError(f"must be positive, got {self.sinkhorn_epsilon}", field="sinkhorn_epsilon")
        if self.noise_std < 0:
            raise ConfigurationError(f"must be >= 0, got {self.noise_std}", field="noise_std")
        if self.unlabeled_targets not in UNLABELED_TARGETS:
            raise ConfigurationError(
                f"must be one of {UNLABELED_TARGETS}, got '{self.unlabeled_targets}'", field="unlabeled_targets"
            )
        try:
            self.sckd.validate()
        except ConfigurationError as e:
            raise ConfigurationError(e.reason, field=f"sckd.{e.field}") from e


@dataclass
class LossBreakdown:
    """Loss terms of one training step."""
    ce: float
    l_k_to_n: float = 0.0
    l_n_to_k: float = 0.0
    total: float = 0.0

    def sckd(self, lam: float) -> float:
        return 2.0 * (lam * self.l_k_to_n + (1.0 - lam) * self.l_n_to_k)

    def satisfies_identity(self, beta: float, lam: float, tol: float = 1e-9) -> bool:
        """total == ce + beta * L_SCKD."""
        return abs(self.total - (self.ce + beta * self.sckd(lam))) <= tol

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass
class StepResult:
    breakdown: LossBreakdown
    grads: Gradients


# ==================== Loss Pieces ====================

def sinkhorn_targets(logits, epsilon: float = 0.05, n_iter: int = 3) -> np.ndarray:
    """
    Balanced soft assignments from Sinkhorn-Knopp scaling of exp(logits / epsilon).

    Each iteration rescales columns to mass M/C and then rows to mass 1.
    Logits are shifted by their maximum once and scaled in the linear
    domain; if that underflows a whole row or column the same iterations
    run in log space instead.

    Args:
        logits: M×C score matrix.
        epsilon: Entropic regularisation.
        n_iter: Full column/row alternations.

    Returns:
        M×C row-stochastic assignment, treated as a constant target.
    """
    if not epsilon > 0:
        raise ConfigurationError(f"must be positive, got {epsilon}", field="sinkhorn_epsilon")
    if n_iter < 1:
        raise ConfigurationError(f"must be >= 1, got {n_iter}", field="sinkhorn_iters")
    logits = as_matrix(logits, "logits")
    rows, cols = logits.shape
    col_mass = rows / cols

    log_q = (logits - logits.max()) / epsilon
    q = np.exp(log_q)
    if min(q.sum(axis=0).min(), q.sum(axis=1).min()) > LINEAR_SINKHORN_FLOOR:
        for _ in range(n_iter):
            q *= col_mass / q.sum(axis=0, keepdims=True)
            q /= q.sum(axis=1, keepdims=True)
        return q

    log_col_mass = math.log(col_mass)
    for _ in range(n_iter):
        log_q = log_q - logsumexp(log_q, axis=0, keepdims=True) + log_col_mass
        log_q = log_q - logsumexp(log_q, axis=1, keepdims=True)
    return np.exp(log_q)


def ce_loss(concat_probs, targets) -> float:
    """-(1/n) Σ_i Σ_c t_ic log p_ic with probabilities floored at PROB_FLOOR."""
    probs = as_matrix(concat_probs, "concat_probs")
    targets = as_matrix(targets, "targets")
    if probs.shape != targets.shape:
        raise ContractError(f"shape mismatch: probs {probs.shape} vs targets {targets.shape}")
    if np.any(np.abs(targets.sum(axis=1) - 1.0) > 1e-6):
        raise ContractError("target rows must sum to 1")
    return float(-np.sum(targets * np.log(np.maximum(probs, PROB_FLOOR))) / probs.shape[0])


def total_loss(ce: float, sckd: float, beta: float) -> float:
    """L = L_CE + beta * L_SCKD."""
    if beta < 0:
        raise ConfigurationError(f"must be >= 0, got {beta}", field="beta")
    return ce + beta * sckd


def one_hot(labels: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], width))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


# ==================== Optimisation ====================

def is_weight(name: str) -> bool:
    """Weight matrices decay, biases do not."""
    return name.rsplit(".", 1)[-1].startswith("W")


def sgd_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    lr: float,
    momentum: float,
    weight_decay: float,
    velocity: Optional[Dict[str, np.ndarray]] = None,
    decay: Optional[Callable[[str], bool]] = None
) -> Dict[str, np.ndarray]:
    """
    Momentum SGD with coupled weight decay.

        velocity <- momentum * velocity + grad + weight_decay * param
        param    <- param - lr * velocity

    Args:
        params: Named parameter blocks (not modified).
        grads: Gradient per name in ``params``.
        velocity: Momentum buffers, updated in place; missing buffers start at zero.
        decay: Predicate choosing which names get weight decay (default: all).

    Returns:
        New parameter blocks.
    """
    velocity = {} if velocity is None else velocity
    updated = {}
    for name, param in params.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != param.shape:
            raise ContractError(f"gradient for {name} has shape {grad.shape}, parameter {param.shape}")
        step = grad
        if weight_decay and (decay is None or decay(name)):
            step = step + weight_decay * param
        buf = velocity.get(name)
        buf = step.copy() if buf is None else momentum * buf + step
        velocity[name] = buf
        updated[name] = param - lr * buf
    return updated


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """
    Rescale ``grads`` so their joint L2 norm is at most ``max_norm``.

    A ``max_norm`` of 0 disables clipping. Non-finite gradients pass through
    untouched so the caller's finiteness check still sees them.

    Returns:
        (gradients, norm before clipping)
    """
    norm = float(np.sqrt(sum(np.sum(np.square(g)) for g in grads.values())))
    if max_norm <= 0 or not np.isfinite(norm) or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}, norm


class SGDOptimizer:
    """Momentum SGD over a registered subset of a ModelState's parameters."""

    def __init__(self, param_names: Iterable[str], momentum: float, weight_decay: float, max_grad_norm: float = 0.0):
        self.param_names = tuple(param_names)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.max_grad_norm = max_grad_norm
        self.velocity: Dict[str, np.ndarray] = {}
        self.clipped_steps = 0

    def step(self, state: ModelState, grads: Gradients, lr: float):
        """Update the registered blocks of ``state`` in place."""
        blocks = {name: state.params[name] for name in self.param_names}
        grads, norm = clip_gradients({name: grads[name] for name in self.param_names}, self.max_grad_norm)
        if self.max_grad_norm and norm > self.max_grad_norm:
            self.clipped_steps += 1
        updated = sgd_step(
            blocks, grads, lr, self.momentum, self.weight_decay,
            velocity=self.velocity, decay=is_weight
        )
        state.params.update(updated)


def cosine_lr(step: int, warmup_steps: int, total_steps: int, lr_floor: float, lr_peak: float) -> float:
    """
    Linear warm-up from lr_floor to lr_peak, then cosine annealing back to lr_floor.
    """
    if not 0 <= warmup_steps < total_steps:
        raise ContractError(f"need 0 <= warmup_steps < total_steps, got {warmup_steps} / {total_steps}")
    if not 0 <= step <= total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    if step <= warmup_steps:
        if warmup_steps == 0:
            return lr_peak
        return lr_floor + (lr_peak - lr_floor) * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return lr_floor + 0.5 * (lr_peak - lr_floor) * (1.0 + math.cos(math.pi * progress))


# ==================== Step Functions ====================

def supervised_step(state: ModelState, features: np.ndarray, labels: np.ndarray) -> StepResult:
    """Stage-1 CE on the known head over labeled samples only."""
    out = forward(state, features)
    probs = softmax(out.known_logits, state.tau)
    targets = one_hot(labels, state.num_known)
    ce = ce_loss(probs, targets)

    d_known = (probs - targets) / (state.tau * features.shape[0])
    grads = backward(state, out, d_known, np.zeros_like(out.novel_logits))
    for name in NOVEL_HEAD_PARAMS:
        grads.pop(name)
    return StepResult(LossBreakdown(ce=ce, total=ce), grads)


def discovery_step(
    state: ModelState,
    replica: Optional[ReplicaEncoder],
    labeled_features: np.ndarray,
    labeled_labels: np.ndarray,
    unlabeled_features: np.ndarray,
    config: TrainConfig,
    rng: Optional[np.random.Generator] = None,
    detached: Optional[ModelState] = None
) -> StepResult:
    """
    One stage-2 evaluation of the total loss and its gradient.

    Quantities under stop-gradient (S unless ``score_gradient``, both
    pseudo-label targets, the Sinkhorn targets, replica features) come from
    ``detached``, which defaults to ``state`` itself. Fixing ``detached``
    while perturbing ``state`` reproduces exactly the function whose
    gradient is returned.

    Args:
        state: Trainable model.
        replica: Frozen encoder; required when ``config.sckd.use_replica``.
        labeled_features: N×d view of labeled samples.
        labeled_labels: N known labels.
        unlabeled_features: M×d view of unlabeled samples.
        config: Training settings.
        rng: Source for the random score-matrix ablation.
        detached: Model that supplies stop-gradient quantities.

    Returns:
        StepResult with the LossBreakdown and per-parameter gradients.
    """
    cfg = config.sckd
    n = labeled_features.shape[0]
    num_known = state.num_known
    X = np.vstack([labeled_features, unlabeled_features])

    out = forward(state, X)
    det = out if detached is None else forward(detached, X)

    if cfg.use_replica:
        if replica is None:
            raise ContractError("stage 2 needs a replica encoder; call snapshot first")
        v_labeled = forward_replica(replica, labeled_features)
    else:
        v_labeled = det.features[:n]
    v_unlabeled = out.features[n:] if cfg.score_gradient else det.features[n:]

    scores, raw = build_scores(cfg, v_labeled, v_unlabeled, rng)
    source_novel = det.novel_logits[:n]
    source_known = det.known_logits[n:]
    novel_target = synthesize_novel_pseudo(scores, source_novel, cfg.alpha)
    known_target = synthesize_known_pseudo(scores, source_known, cfg.alpha)

    distill_temperature = cfg.distill_temperature * (state.tau if cfg.tempered else 1.0)
    distill = sckd_losses(
        out.novel_logits[n:], novel_target,
        out.known_logits[:n], known_target,
        distill_temperature, cfg.lam,
        use_k_to_n=cfg.use_k_to_n, use_n_to_k=cfg.use_n_to_k,
    )

    targets = np.zeros_like(out.concat_probs)
    targets[:n] = one_hot(labeled_labels, targets.shape[1])
    if config.unlabeled_targets == "all_slots":
        targets[n:] = sinkhorn_targets(det.concat_logits[n:], config.sinkhorn_epsilon, config.sinkhorn_iters)
    else:
        targets[n:, num_known:] = sinkhorn_targets(
            det.novel_logits[n:], config.sinkhorn_epsilon, config.sinkhorn_iters
        )
    ce = ce_loss(out.concat_probs, targets)
    total = total_loss(ce, distill.total, cfg.beta)

    d_concat = (out.concat_probs - targets) / (state.tau * X.shape[0])
    d_known = d_concat[:, :num_known].copy()
    d_novel = d_concat[:, num_known:].copy()
    d_novel[n:] += cfg.beta * distill.grad_novel_logits
    d_known[:n] += cfg.beta * distill.grad_known_logits

    d_features = None
    if cfg.score_gradient and raw is not None:
        grad_scores = cfg.alpha * cfg.beta * (
            source_novel @ distill.grad_novel_target.T + distill.grad_known_target @ source_known.T
        )
        d_features = np.zeros_like(out.features)
        d_features[n:] = score_backward(
            v_labeled, v_unlabeled, raw, scores, grad_scores, cfg.normalization
        )

    grads = backward(state, out, d_known, d_novel, d_features)
    breakdown = LossBreakdown(ce=ce, l_k_to_n=distill.k_to_n, l_n_to_k=distill.n_to_k, total=total)
    return StepResult(breakdown, grads)


# ==================== Trainer ====================

def _mean_breakdown(steps: List[LossBreakdown]) -> Dict[str, float]:
    return {key: float(np.mean([getattr(s, key) for s in steps])) for key in ("ce", "l_k_to_n", "l_n_to_k", "total")}


class Trainer:
    """
    Two-stage NCD training: supervised pre-training on known classes, replica
    snapshot, then joint discovery with CE + beta * L_SCKD.

    The model is updated in place. Every random draw comes from streams
    spawned from ``config.seed``, so a fixed config is bit-reproducible.
    """

    def __init__(
        self,
        model: ModelState,
        dataset: DiscoveryDataset,
        config: TrainConfig,
        progress_callback: Optional[Callable[[float, str], None]] = None,
        epoch_callback: Optional[Callable[[int, ModelState], Dict[str, Any]]] = None
    ):
        """
        Args:
            model: Freshly initialised model.
            dataset: Training data.
            config: Training settings (validated here).
            progress_callback: Optional callback(fraction, message) per epoch.
            epoch_callback: Optional hook called after each stage-2 epoch;
                the dict it returns is merged into that epoch's log record.
        """
        config.validate()
        if model.num_known != dataset.num_known or model.num_novel != dataset.num_novel:
            raise ContractError(
                f"model heads {model.num_known}/{model.num_novel} do not match dataset "
                f"classes {dataset.num_known}/{dataset.num_novel}"
            )
        self.model = model
        self.dataset = dataset
        self.config = config
        self.progress_callback = progress_callback
        self.epoch_callback = epoch_callback

        batch_seq, noise_seq, score_seq = np.random.SeedSequence(config.seed).spawn(3)
        self.batch_rng = np.random.default_rng(batch_seq)
        self.noise_rng = np.random.default_rng(noise_seq)
        self.score_rng = np.random.default_rng(score_seq)

        self.replica: Optional[ReplicaEncoder] = None
        self.optimizer: Optional[SGDOptimizer] = None
        self.steps: List[LossBreakdown] = []
        self.epoch_log: List[Dict[str, Any]] = []

    def _schedule(self, epochs: int, batches: int) -> Tuple[int, int]:
        total = epochs * batches
        warmup = self.config.warmup_epochs * batches
        if warmup >= total:
            logger.warning("Warm-up of %d steps exceeds run of %d; clamping", warmup, total)
            warmup = total - 1
        return warmup, total

    def _check_finite(self, stage: int, epoch: int, step: int):
        for name, block in self.model.params.items():
            if not np.all(np.isfinite(block)):
                raise NumericError(f"non-finite {name} after stage {stage} epoch {epoch} step {step}")

    def _report(self, fraction: float, message: str):
        logger.debug(message)
        if self.progress_callback:
            self.progress_callback(fraction, message)

    def train_stage1(self) -> ModelState:
        """Supervised training of encoder and known head on labeled data."""
        cfg = self.config
        labeled = self.dataset.labeled_features
        labels = self.dataset.labeled_labels
        if self.dataset.num_labeled == 0:
            raise ConfigurationError("stage 1 needs a non-empty labeled subset")

        size = min(cfg.batch_size, self.dataset.num_labeled)
        batches = max(1, self.dataset.num_labeled // size)
        warmup, total = self._schedule(cfg.stage1_epochs, batches)
        optimizer = self.optimizer = SGDOptimizer(
            ENCODER_PARAMS + KNOWN_HEAD_PARAMS, cfg.momentum, cfg.weight_decay, cfg.max_grad_norm
        )

        step = 0
        for epoch in range(cfg.stage1_epochs):
            order = self.batch_rng.permutation(self.dataset.num_labeled)
            epoch_steps = []
            for b in range(batches):
                idx = order[b * size:(b + 1) * size]
                view = augment_view(labeled[idx], cfg.noise_std, self.noise_rng)
                lr = cosine_lr(step, warmup, total, cfg.lr_floor, cfg.lr_peak)
                result = supervised_step(self.model, view, labels[idx])
                optimizer.step(self.model, result.grads, lr)
                self._check_finite(1, epoch, b)
                epoch_steps.append(result.breakdown)
                step += 1

            record = {"stage": 1, "epoch": epoch, "lr": lr, **_mean_breakdown(epoch_steps)}
            self.epoch_log.append(record)
            self._report((epoch + 1) / cfg.stage1_epochs, f"stage 1 epoch {epoch + 1}/{cfg.stage1_epochs} ce={record['ce']:.4f}")

        logger.info(
            "Stage 1 finished after %d epochs (ce %.4f, %d clipped steps)",
            cfg.stage1_epochs, self.epoch_log[-1]["ce"], optimizer.clipped_steps
        )
        return self.model

    def snapshot(self) -> ReplicaEncoder:
        """Freeze a copy of the current encoder as the replica."""
        self.replica = snapshot_replica(self.model)
        return self.replica

    def train_stage2(self) -> Tuple[ModelState, List[Dict[str, Any]]]:
        """
        Discovery training on mixed batches.

        Returns:
            The model and the per-epoch log records of this stage.
        """
        cfg = self.config
        if cfg.sckd.use_replica and self.replica is None:
            raise ContractError("stage 2 needs a replica encoder; call snapshot first")

        sampler = BatchSampler(self.dataset, cfg.batch_size, self.batch_rng)
        warmup, total = self._schedule(cfg.stage2_epochs, sampler.batches_per_epoch)
        optimizer = self.optimizer = SGDOptimizer(
            ENCODER_PARAMS + KNOWN_HEAD_PARAMS + NOVEL_HEAD_PARAMS, cfg.momentum, cfg.weight_decay, cfg.max_grad_norm
        )

        records = []
        step = 0
        for epoch in range(cfg.stage2_epochs):
            epoch_steps = []
            for b, batch in enumerate(sampler.epoch()):
                lr = cosine_lr(step, warmup, total, cfg.lr_floor, cfg.lr_peak)
                result = self._discovery_batch(batch)
                optimizer.step(self.model, result.grads, lr)
                self._check_finite(2, epoch, b)
                epoch_steps.append(result.breakdown)
                self.steps.append(result.breakdown)
                step += 1

            record = {"stage": 2, "epoch": epoch, "lr": lr, **_mean_breakdown(epoch_steps)}
            if self.epoch_callback:
                record.update(self.epoch_callback(epoch, self.model) or {})
            records.append(record)
            self.epoch_log.append(record)
            self._report(
                (epoch + 1) / cfg.stage2_epochs,
                f"stage 2 epoch {epoch + 1}/{cfg.stage2_epochs} total={record['total']:.4f}"
            )

        logger.info(
            "Stage 2 finished after %d epochs (total %.4f, %d clipped steps)",
            cfg.stage2_epochs, records[-1]["total"], optimizer.clipped_steps
        )
        return self.model, records

    def _discovery_batch(self, batch: Batch) -> StepResult:
        labeled = augment_view(batch.labeled_features, self.config.noise_std, self.noise_rng)
        unlabeled = augment_view(batch.unlabeled_features, self.config.noise_std, self.noise_rng)
        return discovery_step(
            self.model, self.replica, labeled, batch.labeled_labels, unlabeled,
            self.config, rng=self.score_rng
        )


def train_stage1(model: ModelState, dataset: DiscoveryDataset, config: TrainConfig) -> ModelState:
    """Stage 1 on its own; returns the (in-place) trained model."""
    return Trainer(model, dataset, config).train_stage1()


def train_stage2(
    model: ModelState,
    dataset: DiscoveryDataset,
    config: TrainConfig,
    replica: Optional[ReplicaEncoder]
) -> Tuple[ModelState, List[Dict[str, Any]]]:
    """Stage 2 on its own, given the replica taken after stage 1."""
    trainer = Trainer(model, dataset, config)
    trainer.replica = replica
    return trainer.train_stage2()
