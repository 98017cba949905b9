"""
SCKD-Discovery Model
Encoder, frozen replica encoder, known/novel heads and their analytic backward pass.
Desk-scale Novel Class Discovery
"""

import json
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

from .errors import ConfigurationError, ContractError
from .numerics import ACTIVATIONS, Gradients, activate, activate_grad, as_matrix, softmax, unit_rows, unit_rows_backward

ENCODER_PARAMS = ("encoder.W1", "encoder.b1", "encoder.W2", "encoder.b2")
KNOWN_HEAD_PARAMS = ("known_head.W", "known_head.b")
NOVEL_HEAD_PARAMS = ("novel_head.W1", "novel_head.b1", "novel_head.W2", "novel_head.b2")
ALL_PARAMS = ENCODER_PARAMS + KNOWN_HEAD_PARAMS + NOVEL_HEAD_PARAMS


@dataclass
class ModelConfig:
    """
    Architecture settings. ``activation`` is the hidden nonlinearity (tanh or relu).

    With ``cosine_heads`` both heads read unit-norm inputs through unit-norm
    weight columns, so every logit lies in [-1, 1] plus its bias before the
    division by ``tau``. Plain affine heads are kept for comparison.
    """
    hidden: int = 64
    k: int = 16
    k_mlp: Optional[int] = None  # None: same as k
    tau: float = 0.1
    activation: str = "tanh"
    cosine_heads: bool = True

    def validate(self):
        for name in ("hidden", "k"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"must be >= 1, got {getattr(self, name)}", field=name)
        if self.k_mlp is not None and self.k_mlp < 1:
            raise ConfigurationError(f"must be >= 1, got {self.k_mlp}", field="k_mlp")
        if not self.tau > 0:
            raise ConfigurationError(f"must be positive, got {self.tau}", field="tau")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"must be one of {ACTIVATIONS}, got '{self.activation}'", field="activation")


@dataclass
class ModelState:
    """All trainable parameter blocks plus the softmax temperature."""
    params: Dict[str, np.ndarray]
    tau: float
    activation: str = "tanh"
    cosine_heads: bool = True

    @property
    def feature_dim(self) -> int:
        return int(self.params["encoder.W1"].shape[0])

    @property
    def k(self) -> int:
        return int(self.params["encoder.W2"].shape[1])

    @property
    def num_known(self) -> int:
        return int(self.params["known_head.W"].shape[1])

    @property
    def num_novel(self) -> int:
        return int(self.params["novel_head.W2"].shape[1])

    def copy(self) -> "ModelState":
        return self.with_params({name: block.copy() for name, block in self.params.items()})

    def with_params(self, params: Dict[str, np.ndarray]) -> "ModelState":
        """Same architecture over other parameter blocks (no copy)."""
        return ModelState(params=params, tau=self.tau, activation=self.activation, cosine_heads=self.cosine_heads)

    def encoder_params(self) -> Dict[str, np.ndarray]:
        return {name: self.params[name] for name in ENCODER_PARAMS}


@dataclass(frozen=True)
class ReplicaEncoder:
    """Frozen copy of the encoder taken at the end of stage 1."""
    params: Mapping[str, np.ndarray]
    activation: str = "tanh"


@dataclass
class ForwardOutput:
    """Forward-pass results plus the activations the backward pass needs."""
    features: np.ndarray
    known_logits: np.ndarray
    novel_logits: np.ndarray
    concat_probs: np.ndarray
    cache: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def concat_logits(self) -> np.ndarray:
        return np.hstack([self.known_logits, self.novel_logits])


def _uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_model(
    d: int,
    hidden: int,
    k: int,
    k_mlp: int,
    num_known: int,
    num_novel: int,
    tau: float,
    rng: np.random.Generator,
    activation: str = "tanh",
    cosine_heads: bool = True
) -> ModelState:
    """
    Initialise weights with fan-in scaled uniform draws and zero biases.

    Args:
        d: Input feature dimension.
        hidden: Encoder hidden width.
        k: Encoder output dimension.
        k_mlp: Novel-head MLP width.
        num_known: Known classes C^l.
        num_novel: Novel classes C^u.
        tau: Softmax temperature.
        rng: Source of randomness; the same seed gives the same weights.
        activation: Hidden nonlinearity.
        cosine_heads: Bound the logits with unit-norm head inputs and weights.

    Returns:
        A fresh ModelState.
    """
    dims = {"d": d, "hidden": hidden, "k": k, "k_mlp": k_mlp, "num_known": num_known, "num_novel": num_novel}
    for name, value in dims.items():
        if value < 1:
            raise ConfigurationError(f"must be >= 1, got {value}", field=name)
    if not tau > 0:
        raise ConfigurationError(f"must be positive, got {tau}", field="tau")
    if activation not in ACTIVATIONS:
        raise ConfigurationError(f"must be one of {ACTIVATIONS}, got '{activation}'", field="activation")

    params = {
        "encoder.W1": _uniform(rng, d, hidden),
        "encoder.b1": np.zeros(hidden),
        "encoder.W2": _uniform(rng, hidden, k),
        "encoder.b2": np.zeros(k),
        "known_head.W": _uniform(rng, k, num_known),
        "known_head.b": np.zeros(num_known),
        "novel_head.W1": _uniform(rng, k, k_mlp),
        "novel_head.b1": np.zeros(k_mlp),
        "novel_head.W2": _uniform(rng, k_mlp, num_novel),
        "novel_head.b2": np.zeros(num_novel),
    }
    return ModelState(params=params, tau=tau, activation=activation, cosine_heads=cosine_heads)


def build_model(config: ModelConfig, feature_dim: int, num_known: int, num_novel: int, rng: np.random.Generator) -> ModelState:
    """init_model driven by a ModelConfig."""
    config.validate()
    return init_model(
        feature_dim, config.hidden, config.k, config.k_mlp or config.k,
        num_known, num_novel, config.tau, rng,
        activation=config.activation, cosine_heads=config.cosine_heads,
    )


def _unit_columns(weights: np.ndarray) -> np.ndarray:
    return unit_rows(weights.T).T


def _head_weights(state: ModelState, name: str) -> np.ndarray:
    weights = state.params[name]
    return _unit_columns(weights) if state.cosine_heads else weights


def _head_weight_grad(state: ModelState, name: str, grad_effective: np.ndarray) -> np.ndarray:
    if not state.cosine_heads:
        return grad_effective
    return unit_rows_backward(state.params[name].T, grad_effective.T).T


def _encode(params: Mapping[str, np.ndarray], X: np.ndarray, activation: str) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    if X.shape[1] != params["encoder.W1"].shape[0]:
        raise ContractError(
            f"input has {X.shape[1]} columns, encoder expects {params['encoder.W1'].shape[0]}"
        )
    pre1 = X @ params["encoder.W1"] + params["encoder.b1"]
    hidden = activate(pre1, activation)
    features = hidden @ params["encoder.W2"] + params["encoder.b2"]
    return features, {"X": X, "pre1": pre1, "hidden": hidden}


def forward(state: ModelState, X) -> ForwardOutput:
    """
    Full prediction path: features, both heads, and the concatenated
    temperature softmax over C^l + C^u classes.
    """
    X = as_matrix(X, "X")
    p = state.params
    features, cache = _encode(p, X, state.activation)
    head_in = unit_rows(features) if state.cosine_heads else features

    known_logits = head_in @ _head_weights(state, "known_head.W") + p["known_head.b"]
    pre2 = head_in @ p["novel_head.W1"] + p["novel_head.b1"]
    novel_hidden = activate(pre2, state.activation)
    novel_in = unit_rows(novel_hidden) if state.cosine_heads else novel_hidden
    novel_logits = novel_in @ _head_weights(state, "novel_head.W2") + p["novel_head.b2"]

    cache.update(features=features, head_in=head_in, pre2=pre2, novel_hidden=novel_hidden, novel_in=novel_in)
    concat_probs = softmax(np.hstack([known_logits, novel_logits]), state.tau)
    return ForwardOutput(
        features=features,
        known_logits=known_logits,
        novel_logits=novel_logits,
        concat_probs=concat_probs,
        cache=cache,
    )


def backward(
    state: ModelState,
    out: ForwardOutput,
    d_known: np.ndarray,
    d_novel: np.ndarray,
    d_features: Optional[np.ndarray] = None
) -> Gradients:
    """
    Backpropagate logit (and optional feature) gradients to every parameter.

    Args:
        state: Model whose forward produced ``out``.
        out: Forward output with its cache.
        d_known: dLoss/d known_logits (n×C^l).
        d_novel: dLoss/d novel_logits (n×C^u).
        d_features: Extra dLoss/d features (n×k) from paths outside the heads.

    Returns:
        Gradient per parameter name.
    """
    if d_known.shape != out.known_logits.shape or d_novel.shape != out.novel_logits.shape:
        raise ContractError("logit gradients must match the forward logits")
    p, c = state.params, out.cache
    grads: Gradients = {}

    grads["known_head.W"] = _head_weight_grad(state, "known_head.W", c["head_in"].T @ d_known)
    grads["known_head.b"] = d_known.sum(axis=0)
    d_head_in = d_known @ _head_weights(state, "known_head.W").T

    grads["novel_head.W2"] = _head_weight_grad(state, "novel_head.W2", c["novel_in"].T @ d_novel)
    grads["novel_head.b2"] = d_novel.sum(axis=0)
    d_novel_in = d_novel @ _head_weights(state, "novel_head.W2").T
    if state.cosine_heads:
        d_novel_in = unit_rows_backward(c["novel_hidden"], d_novel_in)
    d_pre2 = d_novel_in * activate_grad(c["pre2"], state.activation)
    grads["novel_head.W1"] = c["head_in"].T @ d_pre2
    grads["novel_head.b1"] = d_pre2.sum(axis=0)
    d_head_in = d_head_in + d_pre2 @ p["novel_head.W1"].T

    d_feat = unit_rows_backward(c["features"], d_head_in) if state.cosine_heads else d_head_in
    if d_features is not None:
        d_feat = d_feat + d_features

    grads["encoder.W2"] = c["hidden"].T @ d_feat
    grads["encoder.b2"] = d_feat.sum(axis=0)
    d_pre1 = (d_feat @ p["encoder.W2"].T) * activate_grad(c["pre1"], state.activation)
    grads["encoder.W1"] = c["X"].T @ d_pre1
    grads["encoder.b1"] = d_pre1.sum(axis=0)
    return grads


def snapshot_replica(state: ModelState) -> ReplicaEncoder:
    """Deep, read-only copy of the current encoder."""
    frozen = {}
    for name in ENCODER_PARAMS:
        block = state.params[name].copy()
        block.flags.writeable = False
        frozen[name] = block
    return ReplicaEncoder(params=MappingProxyType(frozen), activation=state.activation)


def forward_replica(replica: ReplicaEncoder, X) -> np.ndarray:
    """Features from the frozen replica; never part of any gradient."""
    if replica is None:
        raise ContractError("replica encoder has not been snapshotted")
    features, _ = _encode(replica.params, as_matrix(X, "X"), replica.activation)
    return features


# ==================== Checkpoints ====================

def save_checkpoint(
    path: str,
    state: ModelState,
    replica: Optional[ReplicaEncoder] = None,
    config: Optional[Dict[str, Any]] = None
) -> str:
    """
    Write every parameter block (shapes travel with the arrays) and the run
    config to an ``.npz`` file. Loading gives back bit-identical arrays.
    """
    arrays = {f"param/{name}": block for name, block in state.params.items()}
    if replica is not None:
        arrays.update({f"replica/{name}": np.asarray(block) for name, block in replica.params.items()})
    meta = {
        "tau": state.tau, "activation": state.activation,
        "cosine_heads": state.cosine_heads, "config": config or {},
    }
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    return path


def load_checkpoint(path: str) -> Tuple[ModelState, Optional[ReplicaEncoder], Dict[str, Any]]:
    """Inverse of ``save_checkpoint``."""
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["meta"]))
        params = {key[len("param/"):]: archive[key].copy() for key in archive.files if key.startswith("param/")}
        replica_blocks = {key[len("replica/"):]: archive[key].copy() for key in archive.files if key.startswith("replica/")}

    missing = [name for name in ALL_PARAMS if name not in params]
    if missing:
        raise ContractError(f"checkpoint {path} is missing parameter blocks {missing}")
    state = ModelState(
        params=params, tau=meta["tau"], activation=meta["activation"],
        cosine_heads=meta.get("cosine_heads", False),
    )

    replica = None
    if replica_blocks:
        for block in replica_blocks.values():
            block.flags.writeable = False
        replica = ReplicaEncoder(params=MappingProxyType(replica_blocks), activation=meta["activation"])
    return state, replica, meta["config"]
