"""Comparison models: GAN, inverse-mapping and post-hoc encoders, VAE, and
the K+1-class semi-supervised ALI variant.

GAN and post-hoc inference reuse :func:`ali_core.adversarial_step`; the
other trainers have their own single-phase or labelled-batch steps.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .ali_core import (
    AliModel,
    Batch,
    Sampler,
    TrainerState,
    adversarial_step,
    ali_forward,
    build_ali_model,
    discriminate,
    draw_batch,
    encode,
    encoder_stats,
    init_trainer,
    one_hot,
)
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

LOG_2PI = float(np.log(2.0 * np.pi))


# -- GAN ----------------------------------------------------------------


@dataclass(frozen=True)
class GanModel:
    decoder: MlpParameters
    discriminator: MlpParameters
    dim_x: int
    dim_z: int

    def __post_init__(self):
        if self.decoder.in_dim != self.dim_z or self.decoder.out_dim != self.dim_x:
            raise ShapeError("GanModel decoder", (self.decoder.in_dim, self.decoder.out_dim))
        if self.discriminator.in_dim != self.dim_x or self.discriminator.out_dim != 1:
            raise ShapeError("GanModel discriminator", (self.discriminator.in_dim,))


def build_gan_model(
    dim_x: int,
    dim_z: int,
    rng: np.random.Generator,
    decoder_hidden: Iterable[int] = (128, 128),
    discriminator_hidden: Iterable[int] = (128, 128),
    init_std: float = 0.01,
    slope: float = 0.02,
) -> GanModel:
    dec = mlp_init([dim_z, *decoder_hidden, dim_x], "linear", rng, init_std, slope)
    disc = mlp_init([dim_x, *discriminator_hidden, 1], "linear", rng, init_std, slope)
    return GanModel(dec, disc, dim_x, dim_z)


def gan_forward(model: GanModel, batch: Batch, tape: Tape, train: frozenset):
    x = tape.constant(batch.x)
    x_tilde = mlp_forward(model.decoder, tape.constant(batch.z), tape, "decoder" in train)
    d_train = "discriminator" in train
    lq = mlp_forward(model.discriminator, x, tape, d_train)
    lp = mlp_forward(model.discriminator, x_tilde, tape, d_train)
    return lq, lp


def init_gan_trainer(model: GanModel, rng, **adam) -> TrainerState:
    return init_trainer(model, rng, generators=("decoder",), **adam)


def gan_train_step(state: TrainerState, sampler: Sampler, m: int):
    """Adversarial losses with a marginal discriminator ``D(x)``."""
    # the encoder noise is drawn but unused, keeping the stream aligned with ALI
    return adversarial_step(state, sampler, m, gan_forward, state.model.dim_z)


# -- learned inverse mapping ---------------------------------------------


@dataclass
class InverseMapState:
    encoder: MlpParameters
    decoder: MlpParameters
    opt: AdamState
    rng: np.random.Generator
    step: int = 0


def init_inverse_map(
    decoder: MlpParameters, encoder: MlpParameters, rng, lr=1e-4, beta1=0.5, beta2=0.999
) -> InverseMapState:
    if encoder.head != "gaussian" or encoder.out_dim != 2 * decoder.in_dim:
        raise ContractError("encoder must be a gaussian head over the decoder's latent space")
    opt = adam_init(encoder.arrays(), lr, beta1, beta2, names=encoder.names("encoder."))
    return InverseMapState(encoder, decoder, opt, rng)


def inverse_mapping_loss(encoder: MlpParameters, decoder: MlpParameters, z: np.ndarray, tape: Tape):
    """``mean ||z - mu(G_x(z))||^2`` with the decoder held fixed."""
    zt = tape.constant(z)
    x = mlp_forward(decoder, zt, tape, trainable=False)
    mu, _ = gaussian_head(mlp_forward(encoder, x, tape), tape)
    return tape.mean(tape.sum(tape.square(zt - mu), axis=1))


def inverse_mapping_train_step(state: InverseMapState, m: int) -> tuple[InverseMapState, float]:
    if m < 1:
        raise ContractError("batch size M must be >= 1")
    z = state.rng.standard_normal((m, state.decoder.in_dim))
    tape = Tape()
    loss = inverse_mapping_loss(state.encoder, state.decoder, z, tape)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NonFiniteError(f"inverse-mapping loss is not finite ({value})")
    grads = param_grads(tape, backward(tape, loss), state.encoder)
    new, opt = adam_step(state.opt, state.encoder.arrays(), grads)
    return replace(state, encoder=state.encoder.with_arrays(new), opt=opt, step=state.step + 1), value


# -- post-hoc learned inference ------------------------------------------


def init_posthoc(
    decoder: MlpParameters,
    rng: np.random.Generator,
    dim_x: int,
    dim_z: int,
    encoder_hidden: Iterable[int] = (128, 128),
    discriminator_hidden: Iterable[int] = (128, 128),
    init_std: float = 0.01,
    slope: float = 0.02,
    **adam,
) -> TrainerState:
    """ALI trainer around a frozen, pre-trained decoder."""
    fresh = build_ali_model(
        dim_x, dim_z, rng, encoder_hidden, (), discriminator_hidden, init_std, slope
    )
    model = AliModel(fresh.encoder, decoder, fresh.discriminator, dim_x, dim_z)
    return init_trainer(model, rng, generators=("encoder",), **adam)


def posthoc_train_step(state: TrainerState, sampler: Sampler, m: int):
    if "decoder" in state.generators:
        raise ContractError("post-hoc inference must keep the decoder frozen")
    return adversarial_step(state, sampler, m, ali_forward, state.model.dim_z)


# -- VAE ----------------------------------------------------------------


@dataclass(frozen=True)
class VaeModel:
    encoder: MlpParameters
    decoder: MlpParameters
    dim_x: int
    dim_z: int

    def __post_init__(self):
        if self.encoder.out_dim != 2 * self.dim_z or self.decoder.out_dim != 2 * self.dim_x:
            raise ShapeError(
                "VaeModel heads", (self.encoder.out_dim,), (self.decoder.out_dim,)
            )
        if self.encoder.head != "gaussian" or self.decoder.head != "gaussian":
            raise ContractError("VAE encoder and decoder need gaussian heads")


def build_vae_model(
    dim_x: int,
    dim_z: int,
    rng: np.random.Generator,
    encoder_hidden: Iterable[int] = (128, 128),
    decoder_hidden: Iterable[int] = (128, 128),
    init_std: float = 0.01,
    slope: float = 0.02,
) -> VaeModel:
    enc = mlp_init([dim_x, *encoder_hidden, 2 * dim_z], "gaussian", rng, init_std, slope)
    dec = mlp_init([dim_z, *decoder_hidden, 2 * dim_x], "gaussian", rng, init_std, slope)
    return VaeModel(enc, dec, dim_x, dim_z)


@dataclass
class VaeState:
    model: VaeModel
    opt: AdamState
    rng: np.random.Generator
    step: int = 0


@dataclass(frozen=True)
class VaeMetrics:
    elbo: float
    recon_term: float
    kl_term: float

    def as_row(self, step: int) -> list:
        return [step, self.elbo, self.recon_term, self.kl_term]


def init_vae(model: VaeModel, rng, lr=1e-4, beta1=0.5, beta2=0.999) -> VaeState:
    arrays = model.encoder.arrays() + model.decoder.arrays()
    names = model.encoder.names("encoder.") + model.decoder.names("decoder.")
    return VaeState(model, adam_init(arrays, lr, beta1, beta2, names=names), rng)


def gaussian_kl(mu: Tensor, log_sigma: Tensor, tape: Tape) -> Tensor:
    """Per-row ``KL(N(mu, sigma^2) || N(0, I))``."""
    var = tape.exponential(tape.scale(log_sigma, 2.0))
    inner = tape.square(mu) + var - tape.scale(log_sigma, 2.0)
    return tape.scale(tape.sum(inner - tape.constant(np.ones(mu.shape)), axis=1), 0.5)


def gaussian_log_likelihood(x: Tensor, mu: Tensor, log_sigma: Tensor, tape: Tape) -> Tensor:
    """Per-row ``log N(x; mu, diag(sigma^2))``."""
    std = (x - mu) * tape.exponential(tape.negate(log_sigma))
    per_dim = tape.scale(tape.square(std), -0.5) - log_sigma
    d = x.shape[1]
    return tape.sum(per_dim, axis=1) - tape.constant(np.full(x.shape[0], 0.5 * d * LOG_2PI))


def vae_terms(model: VaeModel, x: np.ndarray, noise: np.ndarray, tape: Tape, trainable=True):
    """``(elbo, recon, kl)`` batch means as tape scalars."""
    xt = tape.constant(x)
    mu, log_sigma = gaussian_head(mlp_forward(model.encoder, xt, tape, trainable), tape)
    z = mu + tape.exponential(log_sigma) * tape.constant(noise)
    x_mu, x_log_sigma = gaussian_head(mlp_forward(model.decoder, z, tape, trainable), tape)
    recon = tape.mean(gaussian_log_likelihood(xt, x_mu, x_log_sigma, tape))
    kl = tape.mean(gaussian_kl(mu, log_sigma, tape))
    return recon - kl, recon, kl


def vae_train_step(state: VaeState, sampler: Sampler, m: int) -> tuple[VaeState, VaeMetrics]:
    """One Adam step on ``-ELBO`` with a single reparametrized sample."""
    if m < 1:
        raise ContractError("batch size M must be >= 1")
    model = state.model
    x, _ = sampler(state.rng, m)
    noise = state.rng.standard_normal((m, model.dim_z))
    tape = Tape()
    elbo, recon, kl = vae_terms(model, x, noise, tape)
    metrics = VaeMetrics(float(elbo.data), float(recon.data), float(kl.data))
    if not np.isfinite(metrics.elbo):
        raise NonFiniteError(f"ELBO is not finite ({metrics.elbo})")
    loss = tape.negate(elbo)
    grads = backward(tape, loss)
    g = param_grads(tape, grads, model.encoder) + param_grads(tape, grads, model.decoder)
    arrays = model.encoder.arrays() + model.decoder.arrays()
    new, opt = adam_step(state.opt, arrays, g)
    k = len(model.encoder.arrays())
    model = replace(
        model, encoder=model.encoder.with_arrays(new[:k]), decoder=model.decoder.with_arrays(new[k:])
    )
    return replace(state, model=model, opt=opt, step=state.step + 1), metrics


# -- K+1-class semi-supervised ALI ----------------------------------------


def build_semisup_model(
    dim_x: int, dim_z: int, n_classes: int, rng: np.random.Generator, **kwargs
) -> AliModel:
    """ALI networks whose discriminator emits ``n_classes + 1`` logits."""
    if n_classes < 2:
        raise ContractError("semi-supervised head needs K >= 2")
    return build_ali_model(dim_x, dim_z, rng, disc_out=n_classes + 1, **kwargs)


def class_probabilities(logits: np.ndarray) -> np.ndarray:
    """Softmax over the ``K + 1`` discriminator outputs."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def real_logit(logits: Tensor, tape: Tape) -> Tensor:
    """``log sum_{k<=K} exp(l_k) - l_{K+1}``: the logit of "not generated"."""
    k = logits.shape[1] - 1
    real = tape.logsumexp_last_axis(tape.slice_last_axis(logits, 0, k))
    fake = tape.reshape(tape.slice_last_axis(logits, k, k + 1), (logits.shape[0],))
    return real - fake


def labelled_cross_entropy(logits: Tensor, labels: np.ndarray, tape: Tape) -> Tensor:
    """Mean ``-log softmax(l)[y]`` over all ``K + 1`` outputs."""
    picked = tape.sum(logits * tape.constant(one_hot(labels, logits.shape[1])), axis=1)
    return tape.mean(tape.logsumexp_last_axis(logits) - picked)


@dataclass(frozen=True)
class SemiSupMetrics:
    Ld: float
    Lg: float
    L_sup: float
    labeled_accuracy: float

    def as_row(self, step: int) -> list:
        return [step, self.Ld, self.Lg, self.L_sup, self.labeled_accuracy]


def semisup_train_step(
    state: TrainerState,
    sampler: Sampler,
    labeled: tuple[np.ndarray, np.ndarray],
    m: int,
) -> tuple[TrainerState, SemiSupMetrics]:
    """Discriminator then generator update for the K+1-class game.

    Discriminator targets: labelled q-pairs -> their class, unlabelled
    q-pairs -> any real class, p-pairs -> the extra class. The generator
    swaps the real/generated targets, as in the binary game.
    """
    x_lab, y_lab = labeled
    if x_lab is None or len(x_lab) == 0:
        raise ContractError("semi-supervised training needs at least one labelled example")
    model: AliModel = state.model
    rng = state.rng

    batch = draw_batch(rng, sampler, m, model.dim_z)
    idx = rng.integers(0, len(x_lab), size=m)
    lab_x, lab_y = x_lab[idx], np.asarray(y_lab)[idx]
    lab_noise = rng.standard_normal((m, model.dim_z))

    tape = Tape()
    lq, lp = ali_forward(model, batch, tape, frozenset({"discriminator"}))
    lx = tape.constant(lab_x)
    z_lab = encode(model, lx, tape.constant(lab_noise), tape, trainable=False)
    l_lab = discriminate(model, lx, z_lab, tape)
    aq, ap = real_logit(lq, tape), real_logit(lp, tape)
    l_unsup = tape.mean(tape.softplus(tape.negate(aq))) + tape.mean(tape.softplus(ap))
    l_sup = labelled_cross_entropy(l_lab, lab_y, tape)
    ld = l_unsup + l_sup
    lg_value = float(np.mean(_softplus(aq.data)) + np.mean(_softplus(-ap.data)))
    acc = float(np.mean(np.argmax(l_lab.data[:, :-1], axis=1) == lab_y))
    for name, v in (("Ld", float(ld.data)), ("Lg", lg_value)):
        if not np.isfinite(v):
            raise NonFiniteError(f"{name} is not finite ({v})")
    grads = backward(tape, ld)
    disc = model.discriminator
    new_d, opt_d = adam_step(state.opt_d, disc.arrays(), param_grads(tape, grads, disc))
    model = replace(model, discriminator=disc.with_arrays(new_d))

    batch = draw_batch(rng, sampler, m, model.dim_z)
    tape = Tape()
    lq, lp = ali_forward(model, batch, tape, frozenset({"encoder", "decoder"}))
    aq, ap = real_logit(lq, tape), real_logit(lp, tape)
    lg = tape.mean(tape.softplus(aq)) + tape.mean(tape.softplus(tape.negate(ap)))
    grads = backward(tape, lg)
    g = param_grads(tape, grads, model.encoder) + param_grads(tape, grads, model.decoder)
    arrays = model.encoder.arrays() + model.decoder.arrays()
    new_g, opt_g = adam_step(state.opt_g, arrays, g)
    k = len(model.encoder.arrays())
    model = replace(
        model, encoder=model.encoder.with_arrays(new_g[:k]), decoder=model.decoder.with_arrays(new_g[k:])
    )
    metrics = SemiSupMetrics(float(ld.data), lg_value, float(l_sup.data), acc)
    return replace(state, model=model, opt_g=opt_g, opt_d=opt_d, step=state.step + 1), metrics


def _softplus(a: np.ndarray) -> np.ndarray:
    return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))


def semisup_classify(model: AliModel, x: np.ndarray) -> np.ndarray:
    """Predicted class in ``0..K-1`` from the discriminator at ``(x, mu(x))``."""
    tape = Tape()
    xt = tape.constant(np.atleast_2d(x))
    mu, _ = encoder_stats(model, xt, tape, trainable=False)
    logits = discriminate(model, xt, mu, tape, trainable=False).data
    return np.argmax(logits[:, :-1], axis=1)
