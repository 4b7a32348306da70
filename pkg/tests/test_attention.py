import numpy as np
import pytest
import torch

from dyadic_motion.attention import (ATTENTION_EPS, MergeBlock,
                                     SequenceEncoder, SubsequenceCoder,
                                     attend, attention_weights,
                                     enumerate_subsequences, ratio_weights,
                                     relative_motion)

from oracles import np_attend, np_encoder, np_ratio_weights


def test_enumerate_default_horizons(rng):
    history = rng.normal(size=(60, 57))
    windows = enumerate_subsequences(history, 10, 30)
    assert len(windows) == 21  # T_p - T_l - T_f + 1
    key, value = windows[0]
    assert np.array_equal(key, history[:10])
    assert np.array_equal(value, history[:40])
    key, value = windows[-1]
    assert np.array_equal(value, history[20:60])


def test_enumerate_boundary_single_window(rng):
    history = rng.normal(size=(40, 6))
    windows = enumerate_subsequences(history, 10, 30)
    assert len(windows) == 1


def test_enumerate_too_short(rng):
    with pytest.raises(ValueError, match="too short"):
        enumerate_subsequences(rng.normal(size=(39, 6)), 10, 30)


def test_encoder_window_reduces_to_single_latent():
    enc = SequenceEncoder(6, latent_dim=16)
    assert enc.window_len == 10
    out = enc(torch.randn(2, 10, 6))
    assert out.shape == (2, 1, 16)


def test_encoder_default_latent_is_256(rng):
    enc = SequenceEncoder(57)
    assert enc.encode_window(rng.normal(size=(10, 57))).shape == (256,)


def test_encoder_zero_window_zero_bias(rng):
    torch.manual_seed(0)
    enc = SequenceEncoder(6, latent_dim=8)
    with torch.no_grad():
        enc.conv1.bias.zero_()
        enc.conv2.bias.zero_()
    assert not enc.encode_window(np.zeros((10, 6))).any()


def test_encoder_matches_straight_line_conv_oracle(rng):
    torch.manual_seed(7)
    enc = SequenceEncoder(6, latent_dim=8, dtype=torch.float64)
    window = rng.normal(size=(10, 6))
    params = {f"e.{k}": v.detach().numpy() for k, v in enc.state_dict().items()}
    expected = np_encoder(window, params, "e")
    got = enc.encode_window(window)
    assert np.abs(got - expected).max() < 1e-12


def test_encoder_keys_match_per_window_encoding(rng):
    torch.manual_seed(3)
    enc = SequenceEncoder(6, latent_dim=8, dtype=torch.float64)
    history = rng.normal(size=(30, 6))
    with torch.no_grad():
        batched = enc(torch.as_tensor(history).unsqueeze(0))[0].numpy()
    for t in range(batched.shape[0]):
        single = enc.encode_window(history[t:t + 10])
        assert np.abs(batched[t] - single).max() < 1e-12


def test_encoder_rejects_wrong_window_length(rng):
    enc = SequenceEncoder(6, latent_dim=8)
    with pytest.raises(ValueError):
        enc.encode_window(rng.normal(size=(9, 6)))


def test_weights_single_key():
    w, degenerate = attention_weights(np.ones(4), np.ones((1, 4)))
    assert np.allclose(w, [1.0]) and not degenerate


def test_weights_identical_keys(rng):
    q = rng.normal(size=5)
    keys = np.tile(rng.normal(size=5), (7, 1))
    w, _ = attention_weights(q, keys)
    assert np.allclose(w, 1 / 7)


def test_weights_direct_arithmetic():
    # scores q.k = (2, 1, 1) -> (0.5, 0.25, 0.25)
    q = np.array([2.0, 1.0, 1.0])
    keys = np.eye(3)
    w, degenerate = attention_weights(q, keys)
    assert np.allclose(w, [0.5, 0.25, 0.25]) and not degenerate


def test_weights_degenerate_fallback():
    w, degenerate = attention_weights(np.zeros(3), np.ones((5, 3)))
    assert degenerate and np.allclose(w, 0.2)


def test_weights_scale_invariance(rng):
    q = rng.normal(size=6)
    keys = rng.normal(size=(9, 6))
    w1, _ = attention_weights(q, keys)
    w2, _ = attention_weights(37.5 * q, keys)
    assert np.abs(w1 - w2).max() < 1e-12


def test_weights_sum_to_one_random(rng):
    for _ in range(200):
        q = rng.normal(size=4)
        keys = rng.normal(size=(6, 4))
        w, degenerate = attention_weights(q, keys)
        if not degenerate:
            assert abs(w.sum() - 1.0) < 1e-6


def test_torch_ratio_weights_match_numpy(rng):
    scores = rng.normal(size=(8, 5))
    w, deg = ratio_weights(torch.as_tensor(scores))
    for i in range(8):
        expected, flag = np_ratio_weights(scores[i])
        assert np.abs(w[i].numpy() - expected).max() < 1e-12
        assert bool(deg[i]) == flag


def test_attend_one_hot(rng):
    values = torch.as_tensor(rng.normal(size=(4, 6, 8)))
    weights = torch.tensor([0.0, 0.0, 1.0, 0.0], dtype=values.dtype)
    assert torch.equal(attend(weights, values), values[2])


def test_attend_uniform_identical_values(rng):
    v = rng.normal(size=(6, 8))
    values = torch.as_tensor(np.stack([v] * 5))
    out = attend(torch.full((5,), 0.2, dtype=values.dtype), values)
    assert np.abs(out.numpy() - v).max() < 1e-12


def test_attend_matches_brute_force(rng):
    weights = rng.normal(size=4)
    values = rng.normal(size=(4, 3, 7))
    out = attend(torch.as_tensor(weights), torch.as_tensor(values))
    assert np.abs(out.numpy() - np_attend(weights, list(values))).max() < 1e-12


def test_attend_is_linear_in_values(rng):
    w = torch.as_tensor(rng.normal(size=5))
    v1 = torch.as_tensor(rng.normal(size=(5, 4, 6)))
    v2 = torch.as_tensor(rng.normal(size=(5, 4, 6)))
    lhs = attend(w, 2.0 * v1 - 3.0 * v2)
    rhs = 2.0 * attend(w, v1) - 3.0 * attend(w, v2)
    assert torch.allclose(lhs, rhs, atol=1e-12)


def test_attend_length_mismatch(rng):
    with pytest.raises(ValueError):
        attend(torch.ones(3), torch.zeros(4, 2, 5))


def test_relative_motion_basic(rng):
    x = rng.normal(size=(12, 6))
    assert not relative_motion(x, x).any()
    shift = rng.normal(size=6)
    assert np.abs(relative_motion(x + shift, x * 0 + shift)
                  - relative_motion(x, x * 0)).max() < 1e-12
    y = rng.normal(size=(12, 6))
    assert np.array_equal(relative_motion(x, y), x - y)
    with pytest.raises(ValueError):
        relative_motion(x, y[:-1])


def test_translation_invariance_of_pairwise_inputs(rng):
    """A common global translation cancels in the relative-motion path:
    query, keys and values built from X1 - X2 are unchanged."""
    torch.manual_seed(0)
    enc = SequenceEncoder(6, latent_dim=8, dtype=torch.float64)
    coder = SubsequenceCoder(12, dtype=torch.float64)
    x1 = rng.normal(size=(20, 6))
    x2 = rng.normal(size=(20, 6))
    shift = rng.normal(size=6)
    rel_a = torch.as_tensor(relative_motion(x1, x2)).unsqueeze(0)
    rel_b = torch.as_tensor(relative_motion(x1 + shift, x2 + shift)).unsqueeze(0)
    assert torch.allclose(rel_a, rel_b, atol=1e-12)
    assert torch.allclose(enc(rel_a[:, -10:]), enc(rel_b[:, -10:]), atol=1e-12)
    assert torch.allclose(coder.values(rel_a, 9), coder.values(rel_b, 9), atol=1e-12)


def test_merge_zero_inputs_zero_bias(rng):
    merge = MergeBlock(2, 12)
    out = merge([torch.zeros(3, 12), torch.zeros(3, 12)])
    assert not out.detach().numpy().any()


def test_merge_identity_init_averages(rng):
    merge = MergeBlock(2, 12, dtype=torch.float64)
    v = torch.as_tensor(rng.normal(size=(5, 12)))
    w = torch.as_tensor(rng.normal(size=(5, 12)))
    out = merge([v, w]).detach().numpy()
    assert np.abs(out - 0.5 * (v.numpy() + w.numpy())).max() < 1e-12


def test_merge_output_shape_default():
    merge = MergeBlock(2, 40)
    out = merge([torch.zeros(57, 40), torch.zeros(57, 40)])
    assert out.shape == (57, 40)


def test_merge_matches_matrix_multiply_oracle(rng):
    torch.manual_seed(11)
    merge = MergeBlock(3, 6, dtype=torch.float64)
    with torch.no_grad():
        merge.proj.weight.copy_(torch.as_tensor(rng.normal(size=(6, 18))))
        merge.proj.bias.copy_(torch.as_tensor(rng.normal(size=6)))
    inputs = [rng.normal(size=(4, 6)) for _ in range(3)]
    out = merge([torch.as_tensor(x) for x in inputs]).detach().numpy()
    expected = np.concatenate(inputs, axis=1) @ merge.proj.weight.detach().numpy().T \
        + merge.proj.bias.detach().numpy()
    assert np.abs(out - expected).max() < 1e-12


def test_merge_shape_mismatch(rng):
    merge = MergeBlock(2, 6)
    with pytest.raises(ValueError):
        merge([torch.zeros(3, 6), torch.zeros(4, 6)])
    with pytest.raises(ValueError):
        merge([torch.zeros(3, 6)])


def test_attention_path_gradient_matches_finite_differences(rng):
    """Gradient of a scalar of the attended output w.r.t. encoder parameters,
    checked by central differences on a tiny instance (K=6, T_l=10, T_f=2)."""
    torch.manual_seed(5)
    enc_q = SequenceEncoder(6, latent_dim=8, dtype=torch.float64)
    enc_k = SequenceEncoder(6, latent_dim=8, dtype=torch.float64)
    coder = SubsequenceCoder(12, dtype=torch.float64)
    history = torch.as_tensor(rng.normal(size=(1, 16, 6)))  # N = 5 windows
    probe = torch.as_tensor(rng.normal(size=(1, 6, 12)))

    def scalar():
        q = enc_q(history[:, -10:])[:, 0]
        keys = enc_k(history[:, :14])
        scores = torch.einsum("bd,bnd->bn", q, keys)
        weights, _ = ratio_weights(scores)
        u = attend(weights, coder.values(history, 5))
        return (u * probe).sum()

    loss = scalar()
    params = list(enc_q.parameters()) + list(enc_k.parameters())
    grads = torch.autograd.grad(loss, params)
    h = 1e-6
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.view(-1)
        for idx in range(0, flat.numel(), max(1, flat.numel() // 40)):
            orig = flat[idx].item()
            flat[idx] = orig + h
            up = scalar().item()
            flat[idx] = orig - h
            down = scalar().item()
            flat[idx] = orig
            fd = (up - down) / (2 * h)
            ana = g.view(-1)[idx].item()
            rel = abs(fd - ana) / max(abs(fd), abs(ana), 1e-8)
            worst = max(worst, rel)
    assert worst < 1e-4
