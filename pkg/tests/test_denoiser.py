import numpy as np
import pytest
import torch

from tridiff.denoiser import (
    Denoiser,
    DenoiserConfig,
    SEQ_LEN,
    load_denoiser,
    parameter_count,
    save_denoiser,
    sinusoidal_embedding,
)

TINY = DenoiserConfig(token_dim=16, layers=1, heads=2)


def _random_inputs(batch=2, seed=0, dtype=torch.float32):
    gen = torch.Generator().manual_seed(seed)
    return (torch.randn((batch, 172), generator=gen, dtype=dtype),
            torch.randn((batch, 9), generator=gen, dtype=dtype),
            torch.randn((batch, 128), generator=gen, dtype=dtype),
            torch.randint(0, 100, (batch,), generator=gen),
            torch.randint(0, 100, (batch,), generator=gen),
            torch.randint(0, 100, (batch,), generator=gen),
            torch.randn((batch, 1064), generator=gen, dtype=dtype))


def test_sequence_length():
    # 51 joint tokens + beta + g_h + g_o + z + conditioning + 3 time tokens
    assert SEQ_LEN == 59
    net = Denoiser(TINY)
    tokens = net.tokenize(*_random_inputs())
    assert tokens.shape == (2, 59, 16)


def test_time_tokens_injective():
    net = Denoiser(TINY)
    h, o, i, *_ , cond = _random_inputs()
    seen = []
    for t in range(0, 101):
        tok = net.tokenize(h, o, i, torch.full((2,), t), torch.zeros(2, dtype=torch.long),
                           torch.zeros(2, dtype=torch.long), cond)
        seen.append(tok[0, 56])
    seen = torch.stack(seen)
    dists = torch.cdist(seen, seen)
    dists.fill_diagonal_(np.inf)
    assert float(dists.min()) > 1e-6  # all time embeddings distinct


def test_sinusoidal_embedding_shape_and_range():
    emb = sinusoidal_embedding(torch.arange(10, dtype=torch.float32), 32)
    assert emb.shape == (10, 32)
    assert float(emb.abs().max()) <= 1.0


def test_output_shapes_and_finite():
    net = Denoiser(TINY)
    out = net.denoise(net.tokenize(*_random_inputs()))
    assert out.theta.shape == (2, 51, 3)
    assert out.beta.shape == (2, 10)
    assert out.g_h.shape == (2, 9)
    assert out.g_o.shape == (2, 9)
    assert out.z.shape == (2, 128)
    h, o, i = out.flat()
    assert h.shape == (2, 172) and o.shape == (2, 9) and i.shape == (2, 128)
    for t in (h, o, i):
        assert torch.isfinite(t).all()


def test_deterministic_in_eval():
    net = Denoiser(TINY).eval()
    inputs = _random_inputs(seed=5)
    with torch.no_grad():
        a = net(*inputs)
        b = net(*inputs)
    for x, y in zip(a, b):
        assert torch.equal(x, y)


def test_bad_shapes_rejected():
    net = Denoiser(TINY)
    h, o, i, th, to, ti, cond = _random_inputs()
    with pytest.raises(ValueError):
        net.tokenize(h[:, :100], o, i, th, to, ti, cond)
    with pytest.raises(ValueError):
        net.tokenize(h, o, i, th, to, ti, cond[:, :10])


def test_nan_weights_rejected():
    net = Denoiser(TINY)
    with torch.no_grad():
        net.head_z.weight[0, 0] = float("nan")
    with pytest.raises(RuntimeError, match="non-finite"):
        net(*_random_inputs())


def test_theta_token_permutation_symmetry():
    """Swapping two joint tokens together with their position embeddings
    leaves all outputs unchanged except the heads that read those slots,
    which swap accordingly."""
    net = Denoiser(TINY).eval()
    h, o, i, th, to, ti, cond = _random_inputs(seed=9)
    with torch.no_grad():
        base = net.denoise(net.tokenize(h, o, i, th, to, ti, cond))

        # swap joints 3 and 7 in the input and the position embeddings
        h_swapped = h.clone()
        theta = h_swapped[:, :153].reshape(2, 51, 3)
        theta[:, [3, 7]] = theta[:, [7, 3]]
        h_swapped[:, :153] = theta.reshape(2, 153)
        net.pos.data[[3, 7]] = net.pos.data[[7, 3]]
        swapped = net.denoise(net.tokenize(h_swapped, o, i, th, to, ti, cond))
        net.pos.data[[3, 7]] = net.pos.data[[7, 3]]  # restore

    assert torch.allclose(swapped.beta, base.beta, atol=1e-5)
    assert torch.allclose(swapped.z, base.z, atol=1e-5)
    assert torch.allclose(swapped.theta[:, [7, 3]], base.theta[:, [3, 7]], atol=1e-5)


def test_full_connectivity_jacobian():
    """Every output block receives gradient from every input block (no
    accidental masking)."""
    net = Denoiser(TINY).double()
    h, o, i, th, to, ti, cond = _random_inputs(seed=3, dtype=torch.float64)
    h, o, i, cond = (x.requires_grad_(True) for x in (h, o, i, cond))
    out_h, out_o, out_i = net(h, o, i, th, to, ti, cond)
    for target in (out_h.sum(), out_o.sum(), out_i.sum()):
        grads = torch.autograd.grad(target, (h, o, i, cond), retain_graph=True)
        for g in grads:
            assert float(g.abs().max()) > 0.0


def test_parameter_budgets():
    paper = parameter_count(Denoiser(DenoiserConfig.paper()))
    assert 15e6 * 0.8 <= paper <= 15e6 * 1.2
    desk = parameter_count(Denoiser(DenoiserConfig.desk()))
    assert desk <= 1e6


def test_heads_divisibility_checked():
    with pytest.raises(ValueError):
        DenoiserConfig(token_dim=50, heads=4)


def test_checkpoint_round_trip(tmp_path):
    net = Denoiser(TINY).eval()
    path = tmp_path / "net.trdi"
    save_denoiser(net, path, {"T": 100})
    loaded, manifest = load_denoiser(path)
    assert manifest["T"] == 100
    inputs = _random_inputs(seed=11)
    with torch.no_grad():
        a = net(*inputs)
        b = loaded(*inputs)
    for x, y in zip(a, b):
        assert torch.allclose(x, y, atol=1e-6)
