import numpy as np
import pytest

from ctalvae.errors import DataValidationError, SchemaMismatchError
from ctalvae.net_core import OptimizerState, ParameterStore, adam_step, grad_check
from ctalvae.objectives import mse_loss, mse_loss_grad
from ctalvae.vae import (
    CoreConfig,
    LatentParams,
    decode,
    decode_backward,
    decode_forward,
    encode,
    encode_backward,
    encode_forward,
    init_core,
    reconstruct,
    sample_latent,
)


def zeroed(store):
    for param in store:
        param.value[...] = 0.0
    return store


class TestCoreConfig:

    def test_defaults(self):
        assert CoreConfig().to_dict() == {"core_dim": 43, "hidden": 64, "latent": 16, "T": 30}

    def test_rejects_non_positive(self):
        with pytest.raises(DataValidationError):
            CoreConfig(hidden=0)


class TestEncode:

    def test_zero_weights_give_biases(self, tiny_core, tiny_store):
        zeroed(tiny_store)
        tiny_store["enc.mu.b"][...] = [1.0, -2.0]
        tiny_store["enc.log_var.b"][...] = [0.5, 0.25]

        lp = encode(tiny_store, np.ones((tiny_core.T, tiny_core.core_dim)), np.ones(tiny_core.T, bool))

        np.testing.assert_array_equal(lp.mu, [1.0, -2.0])
        np.testing.assert_array_equal(lp.log_var, [0.5, 0.25])

    def test_padded_rows_are_ignored(self, rng):
        core = CoreConfig(core_dim=2, hidden=3, latent=2, T=5)
        store = ParameterStore()
        init_core(store, core, rng)
        seq = rng.normal(size=(5, 2))
        mask = np.array([True, True, True, False, False])
        other = seq.copy()
        other[3:] = rng.normal(size=(2, 2)) * 100

        a = encode(store, seq, mask)
        b = encode(store, other, mask)

        np.testing.assert_array_equal(a.mu, b.mu)
        np.testing.assert_array_equal(a.log_var, b.log_var)
        truncated = encode(store, seq[:3], mask[:3])
        np.testing.assert_array_equal(truncated.mu, a.mu)

    def test_default_latent_shape(self, rng):
        core = CoreConfig()
        store = ParameterStore()
        init_core(store, core, rng)
        lp = encode(store, rng.normal(size=(core.T, core.core_dim)), np.ones(core.T, bool))
        assert lp.mu.shape == lp.log_var.shape == (16,)

    def test_batch_matches_single(self, tiny_core, tiny_store, rng):
        seqs = rng.normal(size=(3, tiny_core.T, tiny_core.core_dim))
        masks = np.arange(tiny_core.T) < np.array([[3], [2], [1]])

        batch = encode(tiny_store, seqs, masks)

        for k in range(3):
            single = encode(tiny_store, seqs[k], masks[k])
            np.testing.assert_allclose(batch.mu[k], single.mu, rtol=1e-12)

    def test_empty_mask_rejected(self, tiny_core, tiny_store):
        with pytest.raises(DataValidationError):
            encode(tiny_store, np.zeros((tiny_core.T, tiny_core.core_dim)), np.zeros(tiny_core.T, bool))

    def test_mask_must_be_a_prefix(self, tiny_core, tiny_store):
        with pytest.raises(DataValidationError):
            encode(tiny_store, np.zeros((tiny_core.T, tiny_core.core_dim)), np.array([True, False, True]))

    def test_wrong_dimension(self, tiny_core, tiny_store):
        with pytest.raises(SchemaMismatchError):
            encode(tiny_store, np.zeros((tiny_core.T, tiny_core.core_dim + 1)), np.ones(tiny_core.T, bool))

    def test_backward_matches_finite_differences(self, tiny_core, tiny_store, rng):
        seqs = rng.normal(size=(2, tiny_core.T, tiny_core.core_dim))
        masks = np.arange(tiny_core.T) < np.array([[3], [2]])
        w_mu, w_lv = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))

        def loss(s):
            lp, cache = encode_forward(s, seqs, masks)
            encode_backward(s, cache, w_mu, w_lv)
            return float(np.sum(lp.mu * w_mu) + np.sum(lp.log_var * w_lv))

        assert grad_check(loss, tiny_store, samples=60, names=[n for n in tiny_store.names() if n.startswith("enc.")]) < 1e-5


class TestSampleLatent:

    def test_zero_noise_gives_mean(self):
        lp = LatentParams(np.array([1.0, -3.0]), np.array([0.7, -0.2]))
        np.testing.assert_array_equal(sample_latent(lp, np.zeros(2)), lp.mu)

    def test_sample_statistics(self, rng):
        lp = LatentParams(np.full(10_000, 1.0), np.full(10_000, np.log(4.0)))
        z = sample_latent(lp, rng.standard_normal(10_000))
        assert abs(z.mean() - 1.0) < 3 * 2.0 / np.sqrt(10_000)
        assert abs(z.std() - 2.0) < 0.1

    def test_noise_shape_checked(self):
        with pytest.raises(SchemaMismatchError):
            sample_latent(LatentParams(np.zeros(2), np.zeros(2)), np.zeros(3))


class TestDecode:

    def test_zero_weights_emit_output_bias(self, tiny_core, tiny_store):
        zeroed(tiny_store)
        tiny_store["dec.out.b"][...] = np.arange(tiny_core.core_dim)

        y = decode(tiny_store, np.ones(tiny_core.latent), tiny_core.T)

        assert y.shape == (tiny_core.T, tiny_core.core_dim)
        np.testing.assert_array_equal(y, np.tile(np.arange(tiny_core.core_dim), (tiny_core.T, 1)))

    def test_deterministic(self, tiny_core, tiny_store, rng):
        z = rng.normal(size=tiny_core.latent)
        assert decode(tiny_store, z, 4).tobytes() == decode(tiny_store, z, 4).tobytes()

    def test_length_follows_request(self, tiny_core, tiny_store):
        assert decode(tiny_store, np.zeros((2, tiny_core.latent)), 7).shape == (2, 7, tiny_core.core_dim)

    def test_backward_matches_finite_differences(self, tiny_core, tiny_store, rng):
        tiny_store["dec.start"][...] = rng.normal(size=tiny_core.core_dim)
        z = rng.normal(size=(2, tiny_core.latent))
        w = rng.normal(size=(2, tiny_core.T, tiny_core.core_dim))

        def loss(s):
            y, cache = decode_forward(s, z, tiny_core.T)
            decode_backward(s, cache, w)
            return float(np.sum(y * w))

        dec_names = [n for n in tiny_store.names() if n.startswith("dec.")]
        assert grad_check(loss, tiny_store, samples=80, names=dec_names) < 1e-5

    def test_latent_gradient(self, tiny_core, tiny_store, rng):
        z = rng.normal(size=tiny_core.latent)
        y, cache = decode_forward(tiny_store, z, tiny_core.T)
        dz = decode_backward(tiny_store, cache, np.ones_like(y))

        h = 1e-6
        for k in range(tiny_core.latent):
            step = np.zeros(tiny_core.latent)
            step[k] = h
            numeric = (decode(tiny_store, z + step, tiny_core.T).sum()
                       - decode(tiny_store, z - step, tiny_core.T).sum()) / (2 * h)
            assert dz[k] == pytest.approx(numeric, rel=1e-5, abs=1e-9)


def test_reconstruct_uses_posterior_mean(tiny_core, tiny_store, rng):
    seq = rng.normal(size=(tiny_core.T, tiny_core.core_dim))
    mask = np.ones(tiny_core.T, bool)

    x_hat, lp = reconstruct(tiny_store, seq, mask)

    np.testing.assert_array_equal(x_hat, decode(tiny_store, lp.mu, tiny_core.T))
    noisy, _ = reconstruct(tiny_store, seq, mask, eps=np.ones(tiny_core.latent))
    assert not np.array_equal(noisy, x_hat)


def test_autoencoder_overfits_one_sequence(identity_pair_store):
    core, store, _ = identity_pair_store
    seq = np.random.default_rng(11).normal(size=(core.T, core.core_dim))
    mask = np.ones(core.T, bool)
    opt = OptimizerState(lr=0.01)

    def step():
        lp, enc_cache = encode_forward(store, seq, mask)
        x_hat, dec_cache = decode_forward(store, lp.mu, core.T)
        dz = decode_backward(store, dec_cache, mse_loss_grad(seq, x_hat, mask))
        encode_backward(store, enc_cache, dz, np.zeros_like(dz))
        return mse_loss(seq, x_hat, mask)

    initial = step()
    store.zero_grad()
    for _ in range(200):
        step()
        adam_step(opt, store)

    final = mse_loss(seq, reconstruct(store, seq, mask)[0], mask)
    assert final < 0.1 * initial
