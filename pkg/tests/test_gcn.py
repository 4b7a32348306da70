import numpy as np
import pytest
import torch

from dyadic_motion.gcn import GcnDecoder, GraphConv

from oracles import np_gcn_forward, np_gcn_layer


def test_layer_zero_features_zero_bias():
    torch.manual_seed(0)
    layer = GraphConv(3, 5, node_count=4)
    out = layer(torch.zeros(4, 3))
    assert not out.detach().numpy().any()  # bias starts at zero


def test_layer_identity_passthrough():
    layer = GraphConv(3, 3, node_count=4, dtype=torch.float64)
    with torch.no_grad():
        layer.adjacency.copy_(torch.eye(4, dtype=torch.float64))
        layer.weight.copy_(torch.eye(3, dtype=torch.float64))
        layer.bias.zero_()
    x = torch.randn(4, 3, dtype=torch.float64)
    assert torch.equal(layer(x), x)


def test_layer_matches_double_matmul_oracle(rng):
    torch.manual_seed(2)
    layer = GraphConv(3, 2, node_count=4, dtype=torch.float64)
    with torch.no_grad():
        layer.bias.copy_(torch.as_tensor(rng.normal(size=2)))
    x = rng.normal(size=(4, 3))
    expected = np_gcn_layer(x, layer.adjacency.detach().numpy(),
                            layer.weight.detach().numpy(),
                            layer.bias.detach().numpy())
    got = layer(torch.as_tensor(x)).detach().numpy()
    assert np.abs(got - expected).max() < 1e-12


def test_layer_shape_errors():
    layer = GraphConv(3, 2, node_count=4)
    with pytest.raises(ValueError):
        layer(torch.zeros(4, 5))
    with pytest.raises(ValueError):
        layer(torch.zeros(5, 3))


def test_decoder_residual_identity_at_init(rng):
    torch.manual_seed(1)
    dec = GcnDecoder(node_count=6, seq_len=12, hidden=8, num_blocks=2,
                     dtype=torch.float64)
    d = torch.as_tensor(rng.normal(size=(6, 12)))
    u = torch.as_tensor(rng.normal(size=(6, 12)))
    assert torch.equal(dec.decode(u, d), d)  # zero-initialized output layer


def test_decoder_output_shape_default():
    torch.manual_seed(0)
    dec = GcnDecoder(node_count=57, seq_len=40, hidden=16, num_blocks=1)
    out = dec.decode(torch.zeros(57, 40), torch.zeros(57, 40))
    assert out.shape == (57, 40)


def test_decoder_shape_errors():
    dec = GcnDecoder(node_count=6, seq_len=12, hidden=8, num_blocks=1)
    with pytest.raises(ValueError):
        dec.decode(torch.zeros(6, 12), torch.zeros(6, 11))
    with pytest.raises(ValueError):
        dec.decode(torch.zeros(6, 11), torch.zeros(6, 11))


def test_decoder_forward_matches_composition_oracle(rng):
    torch.manual_seed(9)
    dec = GcnDecoder(node_count=5, seq_len=6, hidden=7, num_blocks=2,
                     dtype=torch.float64)
    with torch.no_grad():  # make the output layer non-trivial for the oracle
        dec.gc_out.weight.copy_(torch.as_tensor(rng.normal(size=(7, 6)) * 0.1))
        dec.gc_out.bias.copy_(torch.as_tensor(rng.normal(size=6) * 0.1))
    params = {k: v.detach().numpy() for k, v in dec.state_dict().items()}
    params = {f"gcn.{k}": v for k, v in params.items()}
    features = rng.normal(size=(5, 12))
    expected = np_gcn_forward(features, params, num_blocks=2)
    got = dec(torch.as_tensor(features)).detach().numpy()
    assert np.abs(got - expected).max() < 1e-12


def test_decode_gradient_matches_finite_differences(rng):
    torch.manual_seed(4)
    dec = GcnDecoder(node_count=6, seq_len=12, hidden=8, num_blocks=2,
                     dtype=torch.float64)
    with torch.no_grad():
        dec.gc_out.weight.copy_(torch.as_tensor(rng.normal(size=(8, 12)) * 0.1))
    d = torch.as_tensor(rng.normal(size=(6, 12)))
    u = torch.as_tensor(rng.normal(size=(6, 12)))
    probe = torch.as_tensor(rng.normal(size=(6, 12)))

    def scalar():
        return (dec.decode(u, d) * probe).sum()

    grads = torch.autograd.grad(scalar(), list(dec.parameters()))
    h = 1e-6
    worst = 0.0
    for p, g in zip(dec.parameters(), grads):
        flat = p.data.view(-1)
        for idx in range(0, flat.numel(), max(1, flat.numel() // 25)):
            orig = flat[idx].item()
            flat[idx] = orig + h
            up = scalar().item()
            flat[idx] = orig - h
            down = scalar().item()
            flat[idx] = orig
            fd = (up - down) / (2 * h)
            ana = g.view(-1)[idx].item()
            worst = max(worst, abs(fd - ana) / max(abs(fd), abs(ana), 1e-8))
    assert worst < 1e-4


def test_blocks_share_nothing_but_decode_streams_do(rng):
    """The decoder is one parameter set: mutating it changes both streams'
    outputs identically on identical inputs."""
    torch.manual_seed(3)
    dec = GcnDecoder(node_count=4, seq_len=6, hidden=5, num_blocks=1,
                     dtype=torch.float64)
    d = torch.as_tensor(rng.normal(size=(4, 6)))
    u = torch.as_tensor(rng.normal(size=(4, 6)))
    with torch.no_grad():
        out_a1 = dec.decode(u, d).clone()
        out_b1 = dec.decode(u, d).clone()
        dec.gc_out.weight.add_(0.05)
        out_a2 = dec.decode(u, d)
        out_b2 = dec.decode(u, d)
    assert torch.equal(out_a1, out_b1) and torch.equal(out_a2, out_b2)
    assert not torch.equal(out_a1, out_a2)
