import numpy as np
import pytest

from varicast import tensor as T
from varicast.cvae import CvaeCore, LatentBlock
from varicast.tensor import Tensor

from oracles import latent_block_np


def make_core(seed=0, d=3, c_dim=6, m=8, n_tok=2, layers=2, hidden=10):
    rng = np.random.default_rng(seed)
    return CvaeCore(rng, d=d, c_dim=c_dim, m=m, n_tok=n_tok, layers=layers,
                    enc_hidden=hidden, dec_hidden=hidden)


def test_encode_zero_weights_standard_normal_posterior():
    core = make_core()
    for _, p in core.params():
        p.data[...] = 0.0
    mu, log_var = core.encode(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 6))))
    np.testing.assert_array_equal(mu.data, 0.0)
    np.testing.assert_array_equal(log_var.data, 0.0)


def test_encode_output_dims():
    for m, n_tok in ((8, 2), (16, 4)):
        core = make_core(m=m, n_tok=n_tok)
        mu, log_var = core.encode(Tensor(np.zeros((5, 3))), Tensor(np.zeros((5, 6))))
        assert mu.shape == (5, m) and log_var.shape == (5, m)


def test_encode_grad_check():
    core = make_core(seed=1, layers=0)
    rng = np.random.default_rng(2)
    x, c = rng.normal(size=(1, 3)), rng.normal(size=(1, 6))
    probe_mu, probe_lv = rng.normal(size=(1, 8)), rng.normal(size=(1, 8))

    def run():
        mu, lv = core.encode(Tensor(x), Tensor(c))
        return float((mu.data * probe_mu).sum() + (lv.data * probe_lv).sum())

    tensors = [p for _, p in core.params()][:6]  # encoder side
    with T.Tape() as tape:
        mu, lv = core.encode(Tensor(x), Tensor(c))
        tape.backward((mu * Tensor(probe_mu)).sum() + (lv * Tensor(probe_lv)).sum())
    for p, num in zip(tensors, T.finite_difference_grads(run, tensors)):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        assert np.max(np.abs(analytic - num) / np.maximum(1.0, np.abs(num))) <= 1e-5


def test_reparameterize_identities():
    mu = Tensor(np.array([[1.0, -2.0]]))
    log_var = Tensor(np.array([[0.4, -0.6]]))
    z = CvaeCore.reparameterize(mu, log_var, np.zeros((1, 2)))
    np.testing.assert_array_equal(z.data, mu.data)

    e = np.array([[0.3, -1.1]])
    z = CvaeCore.reparameterize(mu, Tensor(np.zeros((1, 2))), e)
    np.testing.assert_allclose(z.data, mu.data + e)

    # bit-exact identity given recorded eps
    z = CvaeCore.reparameterize(mu, log_var, e)
    np.testing.assert_array_equal(z.data, mu.data + np.exp(log_var.data / 2.0) * e)


def test_reparameterize_monte_carlo_moments():
    rng = np.random.default_rng(3)
    mu = np.array([[0.7, -1.2]])
    log_var = np.array([[0.5, -0.8]])
    eps = rng.standard_normal((100_000, 2))
    z = CvaeCore.reparameterize(Tensor(np.tile(mu, (100_000, 1))),
                                Tensor(np.tile(log_var, (100_000, 1))), eps)
    sigma = np.exp(log_var / 2.0)
    np.testing.assert_allclose(z.data.mean(axis=0), mu[0], atol=0.02 * np.abs(mu).max() + 0.01)
    np.testing.assert_allclose(z.data.std(axis=0), sigma[0], rtol=0.02)


def test_reparameterize_no_gradient_to_eps():
    mu = Tensor(np.array([[0.5]]), requires_grad=True)
    log_var = Tensor(np.array([[0.2]]), requires_grad=True)
    with T.Tape() as tape:
        z = CvaeCore.reparameterize(mu, log_var, np.array([[1.5]]))
        tape.backward(z.sum())
    assert mu.grad is not None and log_var.grad is not None


def test_resformer_zero_blocks_identity():
    core = make_core(layers=3)
    for blk in core.blocks:
        for m in ("q", "k", "v", "out"):
            blk.attn[m].w.data[...] = 0.0
            blk.attn[m].b.data[...] = 0.0
        for aff in (blk.mlp.first, blk.mlp.second):
            aff.w.data[...] = 0.0
            aff.b.data[...] = 0.0
    z0 = Tensor(np.random.default_rng(4).normal(size=(3, 8)))
    zL = core.resformer_stack(z0)
    np.testing.assert_array_equal(zL.data, z0.data)


def test_resformer_no_layers_is_identity():
    core = make_core(layers=0)
    z0 = Tensor(np.random.default_rng(5).normal(size=(2, 8)))
    assert core.resformer_stack(z0) is z0


def test_latent_block_matches_transcription_oracle():
    rng = np.random.default_rng(6)
    for trial in range(20):
        blk = LatentBlock(np.random.default_rng(100 + trial), d_tok=4, heads=2, mlp_hidden=6)
        z = rng.normal(size=(3, 4))
        got = blk(Tensor(z.reshape(1, 3, 4))).data[0]
        want = latent_block_np(z, blk)
        np.testing.assert_allclose(got, want, atol=1e-10)


def test_decode_zero_weights():
    core = make_core()
    for _, p in core.params():
        p.data[...] = 0.0
    mu, log_var = core.decode(Tensor(np.ones((2, 8))), Tensor(np.ones((2, 6))))
    np.testing.assert_array_equal(mu.data, 0.0)
    np.testing.assert_array_equal(log_var.data, 0.0)
    assert mu.shape == (2, 3) and log_var.shape == (2, 3)


def test_full_chain_grad_check():
    core = make_core(seed=7, m=8, n_tok=2, layers=2, hidden=8)
    rng = np.random.default_rng(8)
    x, c = rng.normal(size=(1, 3)), rng.normal(size=(1, 6))
    eps = rng.standard_normal((1, 8))
    probe = rng.normal(size=(1, 3))

    def run():
        _, mu_dec, log_var_dec = core.forward(Tensor(x), Tensor(c), eps)
        return float((mu_dec.data * probe).sum() + (log_var_dec.data * probe).sum())

    names, tensors = zip(*core.params())
    with T.Tape() as tape:
        _, mu_dec, log_var_dec = core.forward(Tensor(x), Tensor(c), eps)
        tape.backward((mu_dec * Tensor(probe)).sum() + (log_var_dec * Tensor(probe)).sum())
    worst = 0.0
    for p, num in zip(tensors, T.finite_difference_grads(run, tensors)):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst = max(worst, np.max(np.abs(analytic - num) / np.maximum(1.0, np.abs(num))))
    assert worst <= 1e-4, worst


def test_sample_prior_deterministic_and_zero_decoder():
    core = make_core(seed=9)
    c = Tensor(np.random.default_rng(10).normal(size=(4, 6)))
    a = core.sample_prior(c, np.random.default_rng(42)).data
    b = core.sample_prior(c, np.random.default_rng(42)).data
    np.testing.assert_array_equal(a, b)

    for _, p in core.params():
        p.data[...] = 0.0
    out = core.sample_prior(c, np.random.default_rng(1)).data
    np.testing.assert_array_equal(out, 0.0)
