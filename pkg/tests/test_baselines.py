import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ali_lab.ali_core import AliModel, DataSampler, build_ali_model, init_trainer, zero_network
from ali_lab.autodiff import ContractError, ShapeError, Tape, gradient_check
from ali_lab.baselines import (
    GanModel,
    VaeModel,
    build_gan_model,
    build_semisup_model,
    build_vae_model,
    class_probabilities,
    gan_train_step,
    gaussian_kl,
    init_gan_trainer,
    init_inverse_map,
    init_posthoc,
    init_vae,
    inverse_mapping_loss,
    inverse_mapping_train_step,
    posthoc_train_step,
    real_logit,
    semisup_classify,
    semisup_train_step,
    vae_terms,
    vae_train_step,
)
from ali_lab.evaluation import invertibility_diagnostic, latent_occupancy
from ali_lab.mixture import GaussianMixture, make_grid_mixture, sample
from ali_lab.nn import MlpParameters, make_rng, mlp_init

LOG4 = np.log(4.0)
H = (8,)


def _data(n=2000, seed=0):
    return sample(make_grid_mixture(5, 0.5, 0.0125), n, make_rng(seed))


def _identity(d=2, head="linear"):
    return MlpParameters((np.eye(d),), (np.zeros(d),), head=head)


# -- GAN ------------------------------------------------------------------


def test_gan_symmetric_init():
    x, _ = _data()
    m = build_gan_model(2, 2, make_rng(0), H, H)
    m = GanModel(m.decoder, zero_network(m.discriminator), 2, 2)
    _, met = gan_train_step(init_gan_trainer(m, make_rng(1)), DataSampler(x), 100)
    assert met.Ld == pytest.approx(LOG4, abs=1e-9) and met.Lg == pytest.approx(LOG4, abs=1e-9)


def test_gan_shares_ali_architecture_except_discriminator_input():
    gan = build_gan_model(2, 2, make_rng(0), (64, 64), (64, 64))
    ali = build_ali_model(2, 2, make_rng(0), (64, 64), (64, 64), (64, 64))
    assert gan.decoder.layer_sizes == ali.decoder.layer_sizes
    assert gan.discriminator.layer_sizes[1:] == ali.discriminator.layer_sizes[1:]
    assert gan.discriminator.in_dim == 2 and ali.discriminator.in_dim == 4


def test_gan_is_deterministic():
    x, _ = _data()
    traces = []
    for _ in range(2):
        state = init_gan_trainer(build_gan_model(2, 2, make_rng(3), H, H), make_rng(4))
        out = []
        for _ in range(5):
            state, met = gan_train_step(state, DataSampler(x), 20)
            out.append(met)
        traces.append(out)
    assert traces[0] == traces[1]


# -- inverse mapping ------------------------------------------------------


def test_identity_pair_has_zero_loss():
    enc = MlpParameters((np.hstack([np.eye(2), np.zeros((2, 2))]),), (np.zeros(4),), head="gaussian")
    tape = Tape()
    z = make_rng(0).standard_normal((50, 2))
    assert float(inverse_mapping_loss(enc, _identity(), z, tape).data) == 0.0


def test_zero_encoder_loss_is_second_moment_of_prior():
    enc = zero_network(mlp_init([2, 4], "gaussian", make_rng(0)))
    z = make_rng(1).standard_normal((20000, 2))
    loss = float(inverse_mapping_loss(enc, _identity(), z, Tape()).data)
    # E||z||^2 = 2, Var||z||^2 = 4 for a 2D standard normal
    assert abs(loss - 2.0) < 3 * np.sqrt(4.0 / z.shape[0])


def test_inverse_mapping_decreases_and_keeps_decoder_frozen():
    dec = MlpParameters((np.array([[0.5, 0.2], [-0.1, 0.4]]),), (np.array([0.1, -0.2]),))
    enc = mlp_init([2, 16, 4], "gaussian", make_rng(0), init_std=0.1)
    state = init_inverse_map(dec, enc, make_rng(1), lr=1e-3)
    before = [a.copy() for a in dec.arrays()]
    losses = []
    for _ in range(500):
        state, loss = inverse_mapping_train_step(state, 64)
        losses.append(loss)
    assert np.mean(losses[-50:]) < np.mean(losses[:50])
    for a, b in zip(before, state.decoder.arrays()):
        assert a.tobytes() == b.tobytes()


def test_inverse_mapping_needs_matching_gaussian_encoder():
    with pytest.raises(ContractError):
        init_inverse_map(_identity(), mlp_init([2, 2], "linear", make_rng(0)), make_rng(0))


# -- post-hoc inference ---------------------------------------------------


def test_posthoc_symmetric_init_and_frozen_decoder():
    x, _ = _data()
    dec = mlp_init([2, *H, 2], "linear", make_rng(0), init_std=0.3)
    state = init_posthoc(dec, make_rng(1), 2, 2, H, H)
    state.model = AliModel(state.model.encoder, dec, zero_network(state.model.discriminator), 2, 2)
    state, met = posthoc_train_step(state, DataSampler(x), 50)
    assert met.Ld == pytest.approx(LOG4, abs=1e-9) and met.Lg == pytest.approx(LOG4, abs=1e-9)
    for _ in range(20):
        state, _ = posthoc_train_step(state, DataSampler(x), 50)
    for a, b in zip(dec.arrays(), state.model.decoder.arrays()):
        assert a.tobytes() == b.tobytes()


def test_posthoc_refuses_trainable_decoder():
    x, _ = _data()
    state = init_posthoc(_identity(), make_rng(1), 2, 2, H, H)
    state.generators = ("encoder", "decoder")
    with pytest.raises(ContractError):
        posthoc_train_step(state, DataSampler(x), 10)


def test_posthoc_inverts_exact_decoder_on_single_gaussian():
    s = 0.5
    dec = MlpParameters((s * np.eye(2),), (np.zeros(2),))
    x = make_rng(1).standard_normal((5000, 2)) * s
    state = init_posthoc(dec, make_rng(0), 2, 2, (16,), (16,), 0.1, lr=1e-3)
    for _ in range(1000):
        state, _ = posthoc_train_step(state, DataSampler(x), 100)
    occ = latent_occupancy(state.model.encoder, x, make_rng(5))
    assert np.all(np.abs(occ.mean) < 0.2)
    assert np.all(np.abs(occ.covariance - np.eye(2)) < 0.2)
    # and the encoder actually inverts the decoder rather than ignoring x
    assert invertibility_diagnostic(state.model.encoder, dec, x, make_rng(6))["z_cycle_mse"] < 0.05


# -- VAE --------------------------------------------------------------------


def _kl(mu, log_sigma):
    tape = Tape()
    return gaussian_kl(tape.constant(mu), tape.constant(log_sigma), tape).numpy()


def test_kl_standard_normal_is_zero():
    assert _kl(np.zeros((3, 2)), np.zeros((3, 2))).tolist() == [0.0, 0.0, 0.0]


def test_kl_shifted_mean():
    assert _kl(np.array([[1.0, 0.0]]), np.zeros((1, 2))).tolist() == [0.5]


def test_kl_matches_closed_form_oracle():
    rng = make_rng(0)
    mu, ls = rng.standard_normal((5, 3)), 0.3 * rng.standard_normal((5, 3))
    oracle = 0.5 * np.sum(mu**2 + np.exp(2 * ls) - 2 * ls - 1, axis=1)
    np.testing.assert_allclose(_kl(mu, ls), oracle, rtol=1e-13)


def test_vae_heads_checked():
    with pytest.raises((ShapeError, ContractError)):
        VaeModel(mlp_init([2, 4], "gaussian", make_rng(0)), mlp_init([2, 2], "linear", make_rng(0)), 2, 2)


def test_elbo_gradient_check():
    rng = make_rng(1)
    base = build_vae_model(2, 2, make_rng(2), (5,), (5,), init_std=0.5)
    x, noise = rng.standard_normal((6, 2)), rng.standard_normal((6, 2))
    k = len(base.encoder.arrays())

    def elbo(tape, *leaves):
        arrays = [leaf.data for leaf in leaves]
        m = VaeModel(base.encoder.with_arrays(arrays[:k]), base.decoder.with_arrays(arrays[k:]), 2, 2)
        return vae_terms(m, x, noise, tape)[0]

    assert gradient_check(elbo, base.encoder.arrays() + base.decoder.arrays()) < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 10**6))
def test_elbo_finite_for_any_finite_parameters(scale, seed):
    model = build_vae_model(2, 2, make_rng(seed), (4,), (4,), init_std=scale)
    rng = make_rng(seed + 1)
    elbo, recon, kl = vae_terms(model, rng.standard_normal((8, 2)), rng.standard_normal((8, 2)), Tape())
    assert np.isfinite(float(elbo.data))


def test_vae_step_improves_elbo():
    x, _ = _data()
    state = init_vae(build_vae_model(2, 2, make_rng(0), (16,), (16,)), make_rng(1), lr=1e-3)
    elbos = []
    for _ in range(300):
        state, met = vae_train_step(state, DataSampler(x), 100)
        elbos.append(met.elbo)
        assert met.elbo == pytest.approx(met.recon_term - met.kl_term, abs=1e-12)
    assert np.mean(elbos[-30:]) > np.mean(elbos[:30])


# -- semi-supervised --------------------------------------------------------


def test_uniform_logits_give_fake_probability_one_third():
    p = class_probabilities(np.zeros((4, 3)))
    np.testing.assert_allclose(p[:, -1], 1 / 3, rtol=1e-15)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 26), elements=st.floats(-50, 50, allow_nan=False)))
def test_class_probabilities_are_a_simplex(logits):
    p = class_probabilities(logits)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(-20, 20, allow_nan=False)))
def test_real_logit_is_log_odds_of_real_classes(logits):
    tape = Tape()
    a = real_logit(tape.constant(logits), tape).numpy()
    p = class_probabilities(logits)
    fake = p[:, -1]
    np.testing.assert_allclose(1 / (1 + np.exp(-a)), 1 - fake, rtol=1e-9, atol=1e-12)


def test_semisup_needs_k_at_least_two():
    with pytest.raises(ContractError):
        build_semisup_model(2, 2, 1, make_rng(0))


def test_semisup_needs_labels():
    x, _ = _data()
    state = init_trainer(build_semisup_model(2, 2, 25, make_rng(0), encoder_hidden=H, decoder_hidden=H, discriminator_hidden=H), make_rng(1))
    with pytest.raises(ContractError):
        semisup_train_step(state, DataSampler(x), (x[:0], np.zeros(0, dtype=int)), 10)


def test_fully_labelled_two_component_run():
    mix = GaussianMixture(
        np.array([[-0.5, 0.0], [0.5, 0.0]]), np.stack([0.05**2 * np.eye(2)] * 2), np.array([0.5, 0.5])
    )
    x, y = sample(mix, 2000, make_rng(0))
    xt, yt = sample(mix, 1000, make_rng(1))
    model = build_semisup_model(2, 2, 2, make_rng(2), encoder_hidden=(16,), decoder_hidden=(16,), discriminator_hidden=(16,))
    state = init_trainer(model, make_rng(3), lr=1e-3)
    for _ in range(200):
        state, met = semisup_train_step(state, DataSampler(x), (x, y), 50)
    assert met.labeled_accuracy > 0.95
    assert np.mean(semisup_classify(state.model, xt) == yt) > 0.95


def test_semisup_is_deterministic():
    x, y = _data()
    runs = []
    for _ in range(2):
        model = build_semisup_model(2, 2, 25, make_rng(0), encoder_hidden=H, decoder_hidden=H, discriminator_hidden=H)
        state = init_trainer(model, make_rng(1))
        mets = []
        for _ in range(3):
            state, met = semisup_train_step(state, DataSampler(x), (x[:100], y[:100]), 20)
            mets.append(met)
        runs.append(mets)
    assert runs[0] == runs[1]
