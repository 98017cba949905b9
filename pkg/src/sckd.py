"""
SCKD-Discovery Self-Cooperation Distillation
Similarity score matrix, cross-space pseudo-label synthesis and the two KL objectives.
Desk-scale Novel Class Discovery
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigurationError, ContractError
from .numerics import PROB_FLOOR, as_matrix, cosine_matrix, kl_divergence, softmax, unit_rows

logger = logging.getLogger(__name__)

SCORE_MODES = ("cosine", "average", "random")
NORMALIZATIONS = ("abs", "signed")


@dataclass
class SckdConfig:
    """
    Distillation settings.

    ``lam`` balances the two directions: L_SCKD = 2[lam * L_k→n + (1 - lam) * L_n→k].
    With ``tempered`` the KL compares distributions of l / tau, the scale the
    prediction softmax uses; ``distill_temperature`` applies on top of that.
    """
    alpha: float = 0.1
    beta: float = 0.5
    lam: float = 0.5
    distill_temperature: float = 1.0
    tempered: bool = True
    score_mode: str = "cosine"
    normalization: str = "abs"
    use_replica: bool = True
    use_k_to_n: bool = True
    use_n_to_k: bool = True
    score_gradient: bool = False

    def validate(self):
        if self.alpha < 0:
            raise ConfigurationError(f"must be >= 0, got {self.alpha}", field="alpha")
        if self.beta < 0:
            raise ConfigurationError(f"must be >= 0, got {self.beta}", field="beta")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError(f"must lie in [0, 1], got {self.lam}", field="lam")
        if not self.distill_temperature > 0:
            raise ConfigurationError(f"must be positive, got {self.distill_temperature}", field="distill_temperature")
        if self.score_mode not in SCORE_MODES:
            raise ConfigurationError(f"must be one of {SCORE_MODES}, got '{self.score_mode}'", field="score_mode")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigurationError(f"must be one of {NORMALIZATIONS}, got '{self.normalization}'", field="normalization")


@dataclass(frozen=True)
class ScoreMatrix:
    """N×M labeled-to-unlabeled similarity scores."""
    values: np.ndarray
    degenerate: bool = False

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass
class SckdLosses:
    """Both distillation terms, their weighted sum and gradients w.r.t. the student logits."""
    k_to_n: float
    n_to_k: float
    total: float
    grad_novel_logits: np.ndarray   # d total / d l^u_uh
    grad_known_logits: np.ndarray   # d total / d l^l_kh
    grad_novel_target: np.ndarray   # d total / d l̂^u_uh
    grad_known_target: np.ndarray   # d total / d l̂^l_kh


def similarity_matrix(v_labeled, v_unlabeled) -> ScoreMatrix:
    """S_ij = cos(v^l_i, v^u_j), before normalization."""
    v_labeled = as_matrix(v_labeled, "v_labeled")
    v_unlabeled = as_matrix(v_unlabeled, "v_unlabeled")
    if v_labeled.shape[1] != v_unlabeled.shape[1]:
        raise ContractError(
            f"feature dimension mismatch: {v_labeled.shape[1]} vs {v_unlabeled.shape[1]}"
        )
    return ScoreMatrix(cosine_matrix(v_labeled, v_unlabeled))


def _normalizer_index(values: np.ndarray, normalization: str) -> Tuple[int, int]:
    if normalization == "abs":
        flat = int(np.argmax(np.abs(values)))
    elif normalization == "signed":
        flat = int(np.argmax(values))
    else:
        raise ConfigurationError(f"must be one of {NORMALIZATIONS}, got '{normalization}'", field="normalization")
    return np.unravel_index(flat, values.shape)


def normalize_scores(scores, normalization: str = "abs") -> ScoreMatrix:
    """
    Divide S by the magnitude of its largest entry.

    ``abs`` uses max |S_ij| so results stay in [-1, 1]; ``signed`` uses
    |max S_ij|. A matrix whose normalizer is zero is returned unchanged
    and flagged as degenerate.
    """
    values = as_matrix(np.asarray(scores), "scores")
    index = _normalizer_index(values, normalization)
    scale = abs(values[index])
    if scale == 0:
        logger.warning("Similarity matrix %s has a zero normalizer; using it unnormalized", values.shape)
        return ScoreMatrix(values.copy(), degenerate=True)
    return ScoreMatrix(values / scale)


def synthesize_novel_pseudo(scores, novel_logits_labeled, alpha: float) -> np.ndarray:
    """l̂^u_uh = alpha * Sᵀ · l^l_uh (M×C^u), a constant target."""
    S = np.asarray(scores, dtype=np.float64)
    logits = as_matrix(novel_logits_labeled, "novel_logits_labeled")
    if S.ndim != 2 or S.shape[0] != logits.shape[0]:
        raise ContractError(f"S {S.shape} does not conform with labeled logits {logits.shape}")
    return alpha * (S.T @ logits)


def synthesize_known_pseudo(scores, known_logits_unlabeled, alpha: float) -> np.ndarray:
    """l̂^l_kh = alpha * S · l^u_kh (N×C^l), a constant target."""
    S = np.asarray(scores, dtype=np.float64)
    logits = as_matrix(known_logits_unlabeled, "known_logits_unlabeled")
    if S.ndim != 2 or S.shape[1] != logits.shape[0]:
        raise ContractError(f"S {S.shape} does not conform with unlabeled logits {logits.shape}")
    return alpha * (S @ logits)


def _distill(student: np.ndarray, target: np.ndarray, temperature: float) -> Tuple[float, np.ndarray, np.ndarray]:
    """Mean row KL(softmax(target/T) || softmax(student/T)) and its gradients."""
    if student.shape != target.shape:
        raise ContractError(f"student {student.shape} and target {target.shape} logits differ in shape")
    q = softmax(student, temperature)
    t = softmax(target, temperature)
    rows = student.shape[0]
    loss = float(np.mean(kl_divergence(t, q)))

    grad_student = (q - t) / (temperature * rows)
    g = np.log(np.maximum(t, PROB_FLOOR)) - np.log(np.maximum(q, PROB_FLOOR))
    grad_target = t * (g - np.sum(t * g, axis=1, keepdims=True)) / (temperature * rows)
    return loss, grad_student, grad_target


def sckd_losses(
    novel_logits_unlabeled,
    novel_target,
    known_logits_labeled,
    known_target,
    distill_temperature: float = 1.0,
    lam: float = 0.5,
    use_k_to_n: bool = True,
    use_n_to_k: bool = True
) -> SckdLosses:
    """
    Bidirectional self-distillation.

    L_k→n averages KL(target ∥ prediction) over the M unlabeled rows of the
    novel head; L_n→k does the same over the N labeled rows of the known
    head. A switched-off direction contributes 0.

    Args:
        novel_logits_unlabeled: l^u_uh (M×C^u), student.
        novel_target: l̂^u_uh (M×C^u).
        known_logits_labeled: l^l_kh (N×C^l), student.
        known_target: l̂^l_kh (N×C^l).
        distill_temperature: Softmax temperature inside the KL.
        lam: Directional balance; 0.5 gives L_k→n + L_n→k.

    Returns:
        SckdLosses with values and gradients.
    """
    if not distill_temperature > 0:
        raise ConfigurationError(f"must be positive, got {distill_temperature}", field="distill_temperature")
    if not 0.0 <= lam <= 1.0:
        raise ConfigurationError(f"must lie in [0, 1], got {lam}", field="lam")

    student_u = as_matrix(novel_logits_unlabeled, "novel_logits_unlabeled")
    student_l = as_matrix(known_logits_labeled, "known_logits_labeled")
    target_u = np.asarray(novel_target, dtype=np.float64)
    target_l = np.asarray(known_target, dtype=np.float64)

    k_to_n, gs_u, gt_u = _distill(student_u, target_u, distill_temperature)
    n_to_k, gs_l, gt_l = _distill(student_l, target_l, distill_temperature)

    w_kn = 2.0 * lam if use_k_to_n else 0.0
    w_nk = 2.0 * (1.0 - lam) if use_n_to_k else 0.0
    if not use_k_to_n:
        k_to_n = 0.0
    if not use_n_to_k:
        n_to_k = 0.0

    return SckdLosses(
        k_to_n=k_to_n,
        n_to_k=n_to_k,
        total=2.0 * (lam * k_to_n + (1.0 - lam) * n_to_k),
        grad_novel_logits=w_kn * gs_u,
        grad_known_logits=w_nk * gs_l,
        grad_novel_target=w_kn * gt_u,
        grad_known_target=w_nk * gt_l,
    )


def score_matrix_variant(mode: str, n: int, m: int, rng: np.random.Generator) -> ScoreMatrix:
    """Fixed-influence ablations: all-ones (``average``) or i.i.d. U[0, 1] (``random``)."""
    if n < 1 or m < 1:
        raise ContractError(f"score matrix needs positive shape, got {n}x{m}")
    if mode == "average":
        return ScoreMatrix(np.ones((n, m)))
    if mode == "random":
        return ScoreMatrix(rng.uniform(0.0, 1.0, size=(n, m)))
    raise ConfigurationError(f"unknown score matrix variant '{mode}', expected 'average' or 'random'", field="score_mode")


def build_scores(
    config: SckdConfig,
    v_labeled: np.ndarray,
    v_unlabeled: np.ndarray,
    rng: Optional[np.random.Generator] = None
) -> Tuple[ScoreMatrix, Optional[np.ndarray]]:
    """
    The S used for one training step.

    Returns:
        (scores, raw cosine matrix or None for the ablation variants)
    """
    if config.score_mode == "cosine":
        raw = similarity_matrix(v_labeled, v_unlabeled).values
        return normalize_scores(raw, config.normalization), raw
    if rng is None:
        rng = np.random.default_rng()
    return score_matrix_variant(config.score_mode, v_labeled.shape[0], v_unlabeled.shape[0], rng), None


def score_backward(
    v_labeled: np.ndarray,
    v_unlabeled: np.ndarray,
    raw: np.ndarray,
    scores: ScoreMatrix,
    grad_scores: np.ndarray,
    normalization: str = "abs"
) -> np.ndarray:
    """
    Push dLoss/dS back to the unlabeled features v^u through the max
    normalization and the cosine. The labeled side stays detached.
    """
    if scores.degenerate:
        return np.zeros_like(v_unlabeled)

    index = _normalizer_index(raw, normalization)
    pivot = raw[index]
    scale = abs(pivot)
    grad_raw = grad_scores / scale
    grad_raw[index] -= np.sum(grad_scores * raw) * np.sign(pivot) / scale ** 2

    a_hat = unit_rows(v_labeled)
    b_hat = unit_rows(v_unlabeled)
    norms = np.linalg.norm(v_unlabeled, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    col_weight = np.sum(grad_raw * raw, axis=0)[:, np.newaxis]
    grad_v = (grad_raw.T @ a_hat - col_weight * b_hat) / safe
    return np.where(norms > 0, grad_v, 0.0)
