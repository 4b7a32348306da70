"""Dyadic motion predictor: full forward pass, role swapping, variants.

The full model attends three ways over DCT-coded sub-sequences of the motion
history: self-attention of the primary subject, and two pairwise paths whose
queries/keys/values come from the relative motion between the subjects. Two
GCN decoder streams with shared weights consume (D1, U1) and (D1, P1), and a
final merge block projects them to the predicted poses. Predicting the second
subject just swaps the roles; the model is role-agnostic.

Inputs and outputs are in millimeters; internally poses are scaled to meters
so activations stay in a sane range without normalization layers.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .attention import (
    ATTENTION_EPS,
    MergeBlock,
    SequenceEncoder,
    SubsequenceCoder,
    attend,
    ratio_weights,
)
from .gcn import GcnDecoder
from .skeleton import DyadSample

VARIANTS = (
    "full",
    "hri_concat",
    "sum_pooling",
    "avg_pooling",
    "max_pooling",
    "no_pairwise_att",
    "no_delta_pose",
    "early_merge",
    "with_self_att_aux",
    "pairwise_att_u12_only",
    "single_person_hri",
)

# Variants whose pairwise branch exists (needs relative-motion encoders).
_PAIRWISE_VARIANTS = {"full", "no_delta_pose", "early_merge",
                      "with_self_att_aux", "pairwise_att_u12_only"}
# Variants that decode two GCN streams and merge them at the end.
_TWO_STREAM_VARIANTS = {"full", "no_delta_pose", "with_self_att_aux",
                        "pairwise_att_u12_only", "no_pairwise_att"}
_POOLING_OPS = {"sum_pooling": torch.add,
                "avg_pooling": lambda a, b: 0.5 * (a + b),
                "max_pooling": torch.maximum}


@dataclass
class ModelConfig:
    past_len: int = 60        # T_p
    window_len: int = 10      # T_l, must match the encoder receptive field
    future_len: int = 30      # T_f
    joint_count: int = 19
    latent_dim: int = 256     # d
    hidden: int = 256
    residual_blocks: int = 12
    variant: str = "full"
    share_qk_across_paths: bool = False
    dropout: float = 0.0
    encoder_kernels: tuple = (6, 5)
    input_scale: float = 1e-3  # mm -> internal units
    eps: float = ATTENTION_EPS

    def __post_init__(self):
        self.encoder_kernels = tuple(self.encoder_kernels)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; one of {VARIANTS}")
        receptive = sum(k - 1 for k in self.encoder_kernels) + 1
        if self.window_len != receptive:
            raise ValueError(
                f"window_len={self.window_len} incompatible with encoder kernels "
                f"{self.encoder_kernels} (receptive field {receptive}): the query "
                "window must reduce to exactly one latent vector")
        if self.past_len < self.window_len + self.future_len:
            raise ValueError(
                f"past_len={self.past_len} < window_len+future_len="
                f"{self.window_len + self.future_len}")

    @property
    def dim(self) -> int:
        return 3 * self.joint_count

    @property
    def seq_len(self) -> int:
        """Value/coefficient length T_l + T_f."""
        return self.window_len + self.future_len

    @property
    def num_windows(self) -> int:
        """N = T_p - T_l - T_f + 1 attention sub-sequences."""
        return self.past_len - self.window_len - self.future_len + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_kernels"] = list(self.encoder_kernels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "encoder_kernels" in d:
            d["encoder_kernels"] = tuple(d["encoder_kernels"])
        return cls(**d)


@dataclass
class Prediction:
    """Single-sample forward output, in millimeters."""

    future: np.ndarray   # (T_f, K) predicted future poses of the primary
    window: np.ndarray   # (T_l+T_f, K): reconstructed last window + future
    self_weights: np.ndarray | None = None
    pairwise_weights_12: np.ndarray | None = None
    pairwise_weights_21: np.ndarray | None = None
    degenerate_flags: dict = field(default_factory=dict)


class DyadicMotionPredictor(nn.Module):
    """Variant-dispatching dyadic predictor. The architecture (and therefore
    the parameter set) is fixed by config.variant at construction."""

    def __init__(self, config: ModelConfig, dtype=torch.float32):
        super().__init__()
        self.config = config
        k = config.dim
        channels = 2 * k if config.variant == "hri_concat" else k
        self.coder = SubsequenceCoder(config.seq_len, dtype=dtype)
        self.enc_q = SequenceEncoder(channels, config.latent_dim,
                                     config.encoder_kernels, dtype=dtype)
        self.enc_k = SequenceEncoder(channels, config.latent_dim,
                                     config.encoder_kernels, dtype=dtype)
        if config.variant in _PAIRWISE_VARIANTS:
            if config.share_qk_across_paths:
                self.enc_q_pair = self.enc_q
                self.enc_k_pair = self.enc_k
            else:
                self.enc_q_pair = SequenceEncoder(channels, config.latent_dim,
                                                  config.encoder_kernels, dtype=dtype)
                self.enc_k_pair = SequenceEncoder(channels, config.latent_dim,
                                                  config.encoder_kernels, dtype=dtype)
        pair_arity = {"full": 2, "no_delta_pose": 2, "pairwise_att_u12_only": 1,
                      "early_merge": 3, "with_self_att_aux": 3}.get(config.variant)
        if pair_arity is not None:
            self.merge_pair = MergeBlock(pair_arity, config.seq_len, dtype=dtype)
        self.gcn = GcnDecoder(channels, config.seq_len, config.hidden,
                              config.residual_blocks, config.dropout, dtype=dtype)
        if config.variant in _TWO_STREAM_VARIANTS:
            self.merge_out = MergeBlock(2, config.seq_len, dtype=dtype)

    @property
    def dtype(self):
        return self.enc_q.conv1.weight.dtype

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    # -- attention plumbing -------------------------------------------------

    def _attention_inputs(self, seq, query_encoder, key_encoder):
        """seq (B, T_p, K') -> query (B, d), keys (B, N, d), values (B, N, K', T)."""
        cfg = self.config
        q = query_encoder(seq[:, -cfg.window_len:, :])[:, 0]
        keys = key_encoder(seq[:, :cfg.past_len - cfg.future_len, :])
        values = self.coder.values(seq, cfg.num_windows)
        return q, keys, values

    def _attend(self, q, keys, values):
        scores = torch.einsum("bd,bnd->bn", q, keys)
        weights, degenerate = ratio_weights(scores, self.config.eps)
        return attend(weights, values), weights, degenerate

    def _padded_window_coeffs(self, seq):
        """DCT of the last observed window extended by replicating its final
        pose: seq (B, T_p, K') -> (B, K', T)."""
        cfg = self.config
        window = seq[:, -cfg.window_len:, :]
        tail = window[:, -1:, :].expand(-1, cfg.future_len, -1)
        return self.coder.encode(torch.cat([window, tail], dim=1))

    # -- forward ------------------------------------------------------------

    def forward_batch(self, primary: torch.Tensor, auxiliary: torch.Tensor) -> dict:
        """Batched forward: (B, T_p, K) mm tensors -> dict of mm outputs."""
        cfg = self.config
        if primary.shape != auxiliary.shape:
            raise ValueError(
                f"subject shapes differ: {primary.shape} vs {auxiliary.shape}")
        if primary.ndim != 3 or primary.shape[1] != cfg.past_len \
                or primary.shape[2] != cfg.dim:
            raise ValueError(
                f"expected (B, {cfg.past_len}, {cfg.dim}) histories, got {primary.shape}")
        xp = primary * cfg.input_scale
        xa = auxiliary * cfg.input_scale
        diag = {}

        if cfg.variant == "hri_concat":
            combo = torch.cat([xp, xa], dim=-1)
            q, keys, values = self._attention_inputs(combo, self.enc_q, self.enc_k)
            u, a, deg = self._attend(q, keys, values)
            diag.update(self_weights=a, self_degenerate=deg)
            coeffs = self.gcn.decode(u, self._padded_window_coeffs(combo))
            window = self.coder.decode(coeffs)[..., :cfg.dim]
            return self._finish(window, diag)

        q1, k1, v1 = self._attention_inputs(xp, self.enc_q, self.enc_k)
        u1, a, deg = self._attend(q1, k1, v1)
        diag.update(self_weights=a, self_degenerate=deg)
        d1 = self._padded_window_coeffs(xp)

        if cfg.variant == "single_person_hri":
            coeffs = self.gcn.decode(u1, d1)
        elif cfg.variant in _POOLING_OPS:
            q2, k2, v2 = self._attention_inputs(xa, self.enc_q, self.enc_k)
            u2, _, _ = self._attend(q2, k2, v2)
            coeffs = self.gcn.decode(_POOLING_OPS[cfg.variant](u1, u2), d1)
        elif cfg.variant == "no_pairwise_att":
            q2, k2, v2 = self._attention_inputs(xa, self.enc_q, self.enc_k)
            u2, _, _ = self._attend(q2, k2, v2)
            stream_a = self.gcn.decode(u1, d1)
            stream_b = self.gcn.decode(u2, self._padded_window_coeffs(xa))
            coeffs = self.merge_out([stream_a, stream_b])
        else:
            # pairwise paths over the relative motion (or rawness of the
            # auxiliary for no_delta_pose)
            rel = xa if cfg.variant == "no_delta_pose" else xp - xa
            q2, k2, v2 = self._attention_inputs(rel, self.enc_q_pair, self.enc_k_pair)
            c12, deg12 = ratio_weights(torch.einsum("bd,bnd->bn", q2, k1), cfg.eps)
            u12 = attend(c12, v1)
            diag.update(pairwise_weights_12=c12, pairwise_degenerate_12=deg12)
            if cfg.variant == "pairwise_att_u12_only":
                p1 = self.merge_pair([u12])
            else:
                c21, deg21 = ratio_weights(torch.einsum("bd,bnd->bn", q1, k2), cfg.eps)
                u21 = attend(c21, v2)
                diag.update(pairwise_weights_21=c21, pairwise_degenerate_21=deg21)
                if cfg.variant == "early_merge":
                    p1 = self.merge_pair([u12, u21, u1])
                elif cfg.variant == "with_self_att_aux":
                    q2s, k2s, v2s = self._attention_inputs(xa, self.enc_q, self.enc_k)
                    u2, _, _ = self._attend(q2s, k2s, v2s)
                    p1 = self.merge_pair([u12, u21, u2])
                else:
                    p1 = self.merge_pair([u12, u21])
            if cfg.variant == "early_merge":
                coeffs = self.gcn.decode(p1, d1)
            else:
                stream_a = self.gcn.decode(u1, d1)
                stream_b = self.gcn.decode(p1, d1)
                coeffs = self.merge_out([stream_a, stream_b])

        window = self.coder.decode(coeffs)
        return self._finish(window, diag)

    def _finish(self, window: torch.Tensor, diag: dict) -> dict:
        out = {"window": window / self.config.input_scale}
        out["future"] = out["window"][:, -self.config.future_len:, :]
        out.update(diag)
        return out

    def forward(self, primary_past: np.ndarray, auxiliary_past: np.ndarray) -> Prediction:
        """Single-sample forward on (T_p, K) mm arrays."""
        xp = torch.as_tensor(np.asarray(primary_past), dtype=self.dtype).unsqueeze(0)
        xa = torch.as_tensor(np.asarray(auxiliary_past), dtype=self.dtype).unsqueeze(0)
        if not (torch.isfinite(xp).all() and torch.isfinite(xa).all()):
            raise ValueError("non-finite input history")
        with torch.no_grad():
            out = self.forward_batch(xp, xa)

        def grab(name):
            return out[name][0].numpy() if name in out else None

        flags = {k: bool(v[0].item()) for k, v in out.items() if k.endswith(
            ("self_degenerate", "degenerate_12", "degenerate_21"))}
        return Prediction(
            future=out["future"][0].numpy(),
            window=out["window"][0].numpy(),
            self_weights=grab("self_weights"),
            pairwise_weights_12=grab("pairwise_weights_12"),
            pairwise_weights_21=grab("pairwise_weights_21"),
            degenerate_flags=flags,
        )

    def predict_both(self, sample: DyadSample) -> tuple[Prediction, Prediction]:
        """Predict both subjects by running forward twice with roles swapped."""
        first = self.forward(sample.subject1_past, sample.subject2_past)
        second = self.forward(sample.subject2_past, sample.subject1_past)
        return first, second


def build_model(config: ModelConfig, seed: int = 0,
                dtype=torch.float32) -> DyadicMotionPredictor:
    """Deterministic model construction: same seed, same parameters."""
    torch.manual_seed(seed)
    return DyadicMotionPredictor(config, dtype=dtype)


# -- checkpoint container ----------------------------------------------------
#
# Single-file layout: magic 'DYCK', u32 format version, u64 header length,
# UTF-8 JSON header, then the named tensors concatenated as row-major
# little-endian float32 in header order.

CHECKPOINT_MAGIC = b"DYCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: DyadicMotionPredictor, extra: dict | None = None):
    entries = []
    blobs = []
    offset = 0
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "size": int(arr.size)})
        blobs.append(arr.tobytes(order="C"))
        offset += arr.size * 4
    header = json.dumps({
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "extra": extra or {},
        "tensors": entries,
    }).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> tuple[ModelConfig, dict, dict]:
    """Returns (config, name -> float32 ndarray, extra metadata)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        version, = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header_len, = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len).decode("utf-8"))
        data = f.read()
    tensors = {}
    for entry in header["tensors"]:
        start = entry["offset"]
        flat = np.frombuffer(data, dtype="<f4", count=entry["size"], offset=start)
        tensors[entry["name"]] = flat.reshape(entry["shape"]).copy()
    return ModelConfig.from_dict(header["config"]), tensors, header.get("extra", {})


def restore_model(path, dtype=torch.float32) -> tuple[DyadicMotionPredictor, dict]:
    """Rebuild a model from a checkpoint file; returns (model, extra)."""
    config, tensors, extra = load_checkpoint(path)
    model = DyadicMotionPredictor(config, dtype=dtype)
    state = {k: torch.as_tensor(v, dtype=dtype) for k, v in tensors.items()}
    model.load_state_dict(state)
    return model, extra
