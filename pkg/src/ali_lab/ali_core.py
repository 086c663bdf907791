"""Adversarially learned inference: networks, losses and the training step.

The encoder ``G_z`` is stochastic (Gaussian head, reparametrized), the
decoder ``G_x`` is deterministic, and the discriminator scores joint pairs
``(x, z)`` with a single logit. Losses are written in terms of logits:

    -log D(l)     == softplus(-l)
    -log(1-D(l))  == softplus(l)

so saturated discriminators never produce ``log(0)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .autodiff import ContractError, ShapeError, Tape, Tensor, backward
from .nn import (
    AdamState,
    MlpParameters,
    NonFiniteError,
    adam_init,
    adam_step,
    gaussian_head,
    mlp_forward,
    mlp_init,
    param_grads,
)

LOG4 = float(np.log(4.0))

Sampler = Callable[[np.random.Generator, int], tuple[np.ndarray, np.ndarray | None]]


class DataSampler:
    """Uniform minibatches (with replacement) from a fixed dataset."""

    def __init__(self, x: np.ndarray, labels: np.ndarray | None = None, n_classes: int = 0):
        self.x = np.asarray(x, dtype=np.float64)
        self.labels = None if labels is None else np.asarray(labels)
        self.n_classes = n_classes

    def __len__(self) -> int:
        return self.x.shape[0]

    def __call__(self, rng: np.random.Generator, m: int):
        idx = rng.integers(0, self.x.shape[0], size=m)
        return self.x[idx], None if self.labels is None else self.labels[idx]


def one_hot(labels: np.ndarray, width: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= width):
        raise ContractError(f"labels outside [0, {width})")
    out = np.zeros((labels.shape[0], width))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


@dataclass(frozen=True)
class AliModel:
    encoder: MlpParameters
    decoder: MlpParameters
    discriminator: MlpParameters
    dim_x: int
    dim_z: int
    dim_y: int = 0

    def __post_init__(self):
        dx, dz, dy = self.dim_x, self.dim_z, self.dim_y
        checks = [
            ("encoder in", self.encoder.in_dim, dx + dy),
            ("encoder out", self.encoder.out_dim, 2 * dz),
            ("decoder in", self.decoder.in_dim, dz + dy),
            ("decoder out", self.decoder.out_dim, dx),
            ("discriminator in", self.discriminator.in_dim, dx + dz + dy),
        ]
        for what, got, want in checks:
            if got != want:
                raise ShapeError(f"AliModel {what}", (got,), (want,))
        if self.encoder.head != "gaussian":
            raise ContractError("encoder needs a gaussian head")


def build_ali_model(
    dim_x: int,
    dim_z: int,
    rng: np.random.Generator,
    encoder_hidden: Iterable[int] = (128, 128),
    decoder_hidden: Iterable[int] = (128, 128),
    discriminator_hidden: Iterable[int] = (128, 128),
    init_std: float = 0.01,
    slope: float = 0.02,
    dim_y: int = 0,
    disc_out: int = 1,
) -> AliModel:
    enc = mlp_init([dim_x + dim_y, *encoder_hidden, 2 * dim_z], "gaussian", rng, init_std, slope)
    dec = mlp_init([dim_z + dim_y, *decoder_hidden, dim_x], "linear", rng, init_std, slope)
    disc = mlp_init(
        [dim_x + dim_z + dim_y, *discriminator_hidden, disc_out], "linear", rng, init_std, slope
    )
    return AliModel(enc, dec, disc, dim_x, dim_z, dim_y)


def zero_network(params: MlpParameters) -> MlpParameters:
    return params.with_arrays([np.zeros_like(a) for a in params.arrays()])


def with_condition_inputs(model: AliModel, dim_y: int) -> AliModel:
    """Append ``dim_y`` zero-weighted condition inputs to every network."""

    def widen(p: MlpParameters) -> MlpParameters:
        arrays = p.arrays()
        arrays[0] = np.vstack([arrays[0], np.zeros((dim_y, arrays[0].shape[1]))])
        return p.with_arrays(arrays)

    return AliModel(
        widen(model.encoder),
        widen(model.decoder),
        widen(model.discriminator),
        model.dim_x,
        model.dim_z,
        model.dim_y + dim_y,
    )


def _with_y(x: Tensor, y: Tensor | None, tape: Tape) -> Tensor:
    return x if y is None else tape.concat_last_axis(x, y)


def _check_width(op: str, t: Tensor, width: int) -> None:
    if t.data.ndim != 2 or t.shape[1] != width:
        raise ShapeError(op, t.shape, (width,))


def encoder_stats(
    model: AliModel, x: Tensor, tape: Tape, y: Tensor | None = None, trainable: bool = True
) -> tuple[Tensor, Tensor]:
    """``(mu, log_sigma)`` of ``q(z | x)``."""
    _check_width("encode", x, model.dim_x)
    out = mlp_forward(model.encoder, _with_y(x, y, tape), tape, trainable)
    return gaussian_head(out, tape)


def encode(
    model: AliModel,
    x: Tensor,
    noise: Tensor,
    tape: Tape,
    y: Tensor | None = None,
    trainable: bool = True,
) -> Tensor:
    """Reparametrized draw ``mu(x) + exp(log_sigma(x)) * noise``."""
    if noise.shape != (x.shape[0], model.dim_z):
        raise ShapeError("encode noise", noise.shape, (x.shape[0], model.dim_z))
    mu, log_sigma = encoder_stats(model, x, tape, y, trainable)
    return mu + tape.exponential(log_sigma) * noise


def decode(
    model: AliModel, z: Tensor, tape: Tape, y: Tensor | None = None, trainable: bool = True
) -> Tensor:
    _check_width("decode", z, model.dim_z)
    return mlp_forward(model.decoder, _with_y(z, y, tape), tape, trainable)


def discriminate(
    model: AliModel,
    x: Tensor,
    z: Tensor,
    tape: Tape,
    y: Tensor | None = None,
    trainable: bool = True,
) -> Tensor:
    """Logits ``[M, out]`` of the joint discriminator; ``D = sigmoid(logit)``."""
    _check_width("discriminate x", x, model.dim_x)
    _check_width("discriminate z", z, model.dim_z)
    pair = _with_y(tape.concat_last_axis(x, z), y, tape)
    return mlp_forward(model.discriminator, pair, tape, trainable)


def _as_tensors(a, b):
    if isinstance(a, Tensor):
        return a.tape, a, b, False
    tape = Tape()
    return tape, tape.constant(np.ravel(a)), tape.constant(np.ravel(b)), True


def discriminator_loss(logits_q, logits_p):
    """``-mean log D(q-pairs) - mean log(1 - D(p-pairs))``.

    Accepts tape tensors (returns a scalar tensor) or arrays (returns float).
    """
    tape, lq, lp, plain = _as_tensors(logits_q, logits_p)
    loss = tape.mean(tape.softplus(tape.negate(lq))) + tape.mean(tape.softplus(lp))
    return float(loss.data) if plain else loss


def generator_loss(logits_q, logits_p):
    """``-mean log(1 - D(q-pairs)) - mean log D(p-pairs)``: the swapped targets."""
    tape, lq, lp, plain = _as_tensors(logits_q, logits_p)
    loss = tape.mean(tape.softplus(lq)) + tape.mean(tape.softplus(tape.negate(lp)))
    return float(loss.data) if plain else loss


@dataclass(frozen=True)
class StepMetrics:
    Ld: float
    Lg: float
    mean_Dq: float
    mean_Dp: float

    def as_row(self, step: int) -> list:
        return [step, self.Ld, self.Lg, self.mean_Dq, self.mean_Dp]


@dataclass
class TrainerState:
    """Everything one adversarial run owns.

    ``generators`` names the networks updated on the generator loss (in
    order); ``frozen`` networks are used but never updated.
    """

    model: object
    opt_g: AdamState
    opt_d: AdamState
    rng: np.random.Generator
    step: int = 0
    generators: tuple[str, ...] = ("encoder", "decoder")
    discriminator: str = "discriminator"
    config: dict = field(default_factory=dict)


def _gen_arrays(model, names: tuple[str, ...]) -> list[np.ndarray]:
    out = []
    for n in names:
        out += getattr(model, n).arrays()
    return out


def _gen_names(model, names: tuple[str, ...]) -> list[str]:
    out = []
    for n in names:
        out += getattr(model, n).names(f"{n}.")
    return out


def _replace_networks(model, names: tuple[str, ...], arrays: list[np.ndarray]):
    updates, pos = {}, 0
    for n in names:
        net = getattr(model, n)
        k = len(net.arrays())
        updates[n] = net.with_arrays(arrays[pos : pos + k])
        pos += k
    return replace(model, **updates)


def init_trainer(
    model,
    rng: np.random.Generator,
    lr: float = 1e-4,
    beta1: float = 0.5,
    beta2: float = 0.999,
    generators: tuple[str, ...] = ("encoder", "decoder"),
    discriminator: str = "discriminator",
    config: dict | None = None,
) -> TrainerState:
    g = _gen_arrays(model, generators)
    d = getattr(model, discriminator).arrays()
    return TrainerState(
        model=model,
        opt_g=adam_init(g, lr, beta1, beta2, names=_gen_names(model, generators)),
        opt_d=adam_init(
            d, lr, beta1, beta2, names=getattr(model, discriminator).names(f"{discriminator}.")
        ),
        rng=rng,
        generators=generators,
        discriminator=discriminator,
        config=dict(config or {}),
    )


@dataclass(frozen=True)
class Batch:
    x: np.ndarray
    z: np.ndarray
    noise: np.ndarray
    labels: np.ndarray | None = None


def draw_batch(rng: np.random.Generator, sampler: Sampler, m: int, dim_z: int) -> Batch:
    """Data minibatch, prior draws and encoder noise, in that order."""
    if m < 1:
        raise ContractError("batch size M must be >= 1")
    x, labels = sampler(rng, m)
    z = rng.standard_normal((m, dim_z))
    noise = rng.standard_normal((m, dim_z))
    return Batch(x, z, noise, labels)


# forward(model, batch, tape, train) -> (logits_q, logits_p); ``train`` is the
# set of network names whose parameters should receive gradients.
Forward = Callable[[object, Batch, Tape, frozenset], tuple[Tensor, Tensor]]


def _check_finite(**values: float) -> None:
    for name, v in values.items():
        if not np.isfinite(v):
            raise NonFiniteError(f"{name} is not finite ({v})")


def adversarial_step(
    state: TrainerState,
    sampler: Sampler,
    m: int,
    forward: Forward,
    dim_z: int,
    d_loss=discriminator_loss,
    g_loss=generator_loss,
) -> tuple[TrainerState, StepMetrics]:
    """One discriminator update followed by one generator update.

    Metrics come from the first forward pass, before either update. The
    generator phase draws a fresh minibatch.
    """
    model = state.model
    dname = state.discriminator

    batch = draw_batch(state.rng, sampler, m, dim_z)
    tape = Tape()
    lq, lp = forward(model, batch, tape, frozenset({dname}))
    ld = d_loss(lq, lp)
    lg_value = float(g_loss(tape.constant(lq.data), tape.constant(lp.data)).data)
    _check_finite(Ld=float(ld.data), Lg=lg_value)
    metrics = StepMetrics(
        Ld=float(ld.data),
        Lg=lg_value,
        mean_Dq=float(_sigmoid(lq.data).mean()),
        mean_Dp=float(_sigmoid(lp.data).mean()),
    )
    disc = getattr(model, dname)
    grads = backward(tape, ld)
    new_d, opt_d = adam_step(state.opt_d, disc.arrays(), param_grads(tape, grads, disc))
    model = replace(model, **{dname: disc.with_arrays(new_d)})

    batch = draw_batch(state.rng, sampler, m, dim_z)
    tape = Tape()
    lq, lp = forward(model, batch, tape, frozenset(state.generators))
    lg = g_loss(lq, lp)
    _check_finite(Lg=float(lg.data))
    grads = backward(tape, lg)
    g_grads = []
    for n in state.generators:
        g_grads += param_grads(tape, grads, getattr(model, n))
    new_g, opt_g = adam_step(state.opt_g, _gen_arrays(model, state.generators), g_grads)
    model = _replace_networks(model, state.generators, new_g)

    return replace(state, model=model, opt_g=opt_g, opt_d=opt_d, step=state.step + 1), metrics


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def ali_forward(model: AliModel, batch: Batch, tape: Tape, train: frozenset):
    x = tape.constant(batch.x)
    z = tape.constant(batch.z)
    z_hat = encode(model, x, tape.constant(batch.noise), tape, trainable="encoder" in train)
    x_tilde = decode(model, z, tape, trainable="decoder" in train)
    d_train = "discriminator" in train
    lq = discriminate(model, x, z_hat, tape, trainable=d_train)
    lp = discriminate(model, x_tilde, z, tape, trainable=d_train)
    return lq, lp


def cond_forward(model: AliModel, batch: Batch, tape: Tape, train: frozenset):
    if batch.labels is None:
        raise ContractError("conditional training needs labels from the sampler")
    y = tape.constant(one_hot(batch.labels, model.dim_y))
    x = tape.constant(batch.x)
    z = tape.constant(batch.z)
    z_hat = encode(model, x, tape.constant(batch.noise), tape, y, trainable="encoder" in train)
    x_tilde = decode(model, z, tape, y, trainable="decoder" in train)
    d_train = "discriminator" in train
    lq = discriminate(model, x, z_hat, tape, y, trainable=d_train)
    lp = discriminate(model, x_tilde, z, tape, y, trainable=d_train)
    return lq, lp


def ali_train_step(state: TrainerState, sampler: Sampler, m: int):
    """One iteration of the ALI procedure on ``state.model``."""
    return adversarial_step(state, sampler, m, ali_forward, state.model.dim_z)


def cond_train_step(state: TrainerState, sampler: Sampler, m: int):
    """Conditional ALI: every network also receives the one-hot label.

    The prior pairs reuse the minibatch's labels, so ``y`` follows its data
    marginal on both sides.
    """
    if state.model.dim_y < 1:
        raise ContractError("model has no condition inputs (dim_y == 0)")
    return adversarial_step(state, sampler, m, cond_forward, state.model.dim_z)
