"""Multilayer perceptrons, initialization, Adam, and network checkpoints.

Parameter sets are immutable snapshots: :func:`adam_step` returns new arrays
instead of updating in place, so a snapshot taken before an update stays
valid and can be compared bitwise afterwards.

Randomness comes from numpy's Philox 4x64 counter-based generator
(:func:`make_rng`); a seed reproduces the same stream on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .autodiff import ContractError, ShapeError, Tape, Tensor

HEADS = ("linear", "sigmoid", "gaussian")
LOG_SIGMA_MIN = -7.0
LOG_SIGMA_MAX = 2.0
CHECKPOINT_FORMAT_VERSION = 1


class NonFiniteError(FloatingPointError):
    """A loss or gradient became NaN or infinite."""


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """Seeded Philox generator."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class MlpParameters:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    slope: float = 0.02
    head: str = "linear"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ContractError("need one bias per weight and at least one layer")
        if self.head not in HEADS:
            raise ContractError(f"unknown head {self.head!r}; expected one of {HEADS}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}", w.shape, b.shape)
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i} chain", self.weights[i - 1].shape, w.shape)
        if self.head == "gaussian" and self.out_dim % 2:
            raise ContractError("gaussian head needs an even output width")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParameters":
        arrays = list(arrays)
        return replace(self, weights=tuple(arrays[0::2]), biases=tuple(arrays[1::2]))

    def names(self, prefix: str = "") -> list[str]:
        out = []
        for i in range(len(self.weights)):
            out += [f"{prefix}W{i}", f"{prefix}b{i}"]
        return out


def mlp_init(
    layer_sizes: Sequence[int],
    head: str,
    rng: np.random.Generator,
    init_std: float = 0.01,
    slope: float = 0.02,
) -> MlpParameters:
    """Gaussian weights ``N(0, init_std**2)`` and zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ContractError(f"layer sizes must be >= 2 positive ints, got {list(layer_sizes)}")
    weights = tuple(rng.normal(0.0, init_std, size=(a, b)) for a, b in zip(sizes, sizes[1:]))
    biases = tuple(np.zeros(b) for b in sizes[1:])
    return MlpParameters(weights, biases, slope=slope, head=head)


def mlp_forward(params: MlpParameters, x: Tensor, tape: Tape, trainable: bool = True) -> Tensor:
    """Affine + leaky ReLU on hidden layers, then the output head.

    A ``gaussian`` head returns the raw ``[mu, log_sigma]`` block; split it
    with :func:`gaussian_head`.
    """
    if x.data.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeError("mlp_forward", x.shape, (params.in_dim,))
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = tape.affine(h, tape.param(w, trainable), tape.param(b, trainable))
        if i < last:
            h = tape.leaky_relu(h, params.slope)
    if params.head == "sigmoid":
        h = tape.sigmoid(h)
    return h


def gaussian_head(out: Tensor, tape: Tape) -> tuple[Tensor, Tensor]:
    """Split a gaussian-head output into ``mu`` and clamped ``log_sigma``."""
    d = out.shape[-1] // 2
    mu = tape.slice_last_axis(out, 0, d)
    log_sigma = tape.clip(tape.slice_last_axis(out, d, 2 * d), LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    return mu, log_sigma


def mlp_apply(params: MlpParameters, x: np.ndarray) -> np.ndarray:
    """Forward pass on plain arrays, for evaluation."""
    tape = Tape()
    return mlp_forward(params, tape.constant(np.atleast_2d(x)), tape, trainable=False).numpy()


def param_grads(
    tape: Tape, grads: dict[Tensor, np.ndarray], params: MlpParameters
) -> list[np.ndarray]:
    """Gradients aligned with ``params.arrays()``; zeros for unused arrays."""
    out = []
    for a in params.arrays():
        leaf = tape.leaf_for(a)
        g = grads.get(leaf) if leaf is not None else None
        out.append(np.zeros_like(a) if g is None else g)
    return out


@dataclass(frozen=True)
class AdamState:
    m: tuple[np.ndarray, ...]
    v: tuple[np.ndarray, ...]
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.lr <= 0 or not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1) or self.t < 0:
            raise ContractError(
                f"bad Adam hyperparameters lr={self.lr} beta1={self.beta1} "
                f"beta2={self.beta2} t={self.t}"
            )


def adam_init(
    arrays: Sequence[np.ndarray],
    lr: float = 1e-4,
    beta1: float = 0.5,
    beta2: float = 0.999,
    eps: float = 1e-8,
    names: Sequence[str] = (),
) -> AdamState:
    zeros = tuple(np.zeros_like(a) for a in arrays)
    return AdamState(zeros, zeros, 0, lr, beta1, beta2, eps, tuple(names))


def adam_step(
    state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new arrays and a new state."""
    if not (len(params) == len(grads) == len(state.m)):
        raise ContractError(
            f"adam_step: {len(params)} params, {len(grads)} grads, {len(state.m)} moments"
        )
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[i].shape:
            raise ShapeError("adam_step", p.shape, g.shape, state.m[i].shape)
        if not np.all(np.isfinite(g)):
            name = state.names[i] if i < len(state.names) else f"#{i}"
            raise NonFiniteError(f"non-finite gradient for parameter {name}")

    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        denom = v / c2
        np.sqrt(denom, out=denom)
        denom += state.eps
        step = m / c1
        step *= state.lr
        step /= denom
        new_p.append(p - step)
        new_m.append(m)
        new_v.append(v)
    return new_p, replace(state, m=tuple(new_m), v=tuple(new_v), t=t)


def network_to_dict(params: MlpParameters, role: str) -> dict:
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "role": role,
        "layer_sizes": params.layer_sizes,
        "head": params.head,
        "slope": params.slope,
        "weights": [w.reshape(-1).tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def network_from_dict(doc: dict) -> MlpParameters:
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ContractError(f"unsupported checkpoint format_version {version!r}")
    sizes = doc["layer_sizes"]
    weights = tuple(
        np.asarray(w, dtype=np.float64).reshape(a, b)
        for w, a, b in zip(doc["weights"], sizes, sizes[1:])
    )
    biases = tuple(np.asarray(b, dtype=np.float64) for b in doc["biases"])
    return MlpParameters(weights, biases, slope=float(doc["slope"]), head=doc["head"])
