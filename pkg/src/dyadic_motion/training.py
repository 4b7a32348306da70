"""Loss, optimization loop, model selection, and horizon-wise evaluation.

The training loss is the squared mean per joint position error over the last
T_l observed frames plus the T_f predicted frames, normalized by J*(T_l+T_f)
(a config switch selects the unsquared variant). The reporting metric is the
standard unsquared MPJPE in millimeters, tabulated at 100..1000 ms horizons
plus the average over all predicted frames.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .predictor import DyadicMotionPredictor
from .skeleton import DyadSample

DEFAULT_HORIZONS_MS = tuple(range(100, 1001, 100))


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 32
    epochs: int = 500
    seed: int = 0
    squared_loss: bool = True   # loss exactly as the squared-norm objective
    max_steps: int | None = None
    log_path: str | None = None

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("hyperparameters must be positive")


def loss(pred: np.ndarray, target: np.ndarray, squared: bool = True) -> float:
    """Window loss on (T, K) arrays: (1/(J*T)) * sum_t sum_j ||err_{t,j}||^2.

    K must be divisible by 3; with squared=False the per-joint norms are not
    squared (plain MPJPE).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2 or pred.shape[1] % 3:
        raise ValueError(f"bad window shapes: {pred.shape} vs {target.shape}")
    t, k = pred.shape
    err = (pred - target).reshape(t, k // 3, 3)
    sq = (err ** 2).sum(axis=-1)
    per_joint = sq if squared else np.sqrt(sq)
    return float(per_joint.sum() / (t * (k // 3)))


def loss_batch(pred: torch.Tensor, target: torch.Tensor,
               squared: bool = True) -> torch.Tensor:
    """Differentiable batch mean of the window loss: (B, T, K) tensors."""
    if pred.shape != target.shape:
        raise ValueError(f"bad window shapes: {pred.shape} vs {target.shape}")
    b, t, k = pred.shape
    err = (pred - target).reshape(b, t, k // 3, 3)
    sq = (err ** 2).sum(dim=-1)
    per_joint = sq if squared else torch.sqrt(sq + 1e-12)
    return per_joint.sum(dim=(1, 2)).mean() / (t * (k // 3))


def mpjpe_per_frame(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """(T, K) arrays -> (T,) mean Euclidean joint error per frame, in mm."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2 or pred.shape[1] % 3:
        raise ValueError(f"bad shapes: {pred.shape} vs {target.shape}")
    t, k = pred.shape
    err = (pred - target).reshape(t, k // 3, 3)
    return np.sqrt((err ** 2).sum(axis=-1)).mean(axis=-1)


def mpjpe_metric(pred: np.ndarray, target: np.ndarray, frame: int) -> float:
    """MPJPE at one 1-based frame index of the prediction horizon."""
    per_frame = mpjpe_per_frame(pred, target)
    if not (1 <= frame <= len(per_frame)):
        raise ValueError(f"frame {frame} out of range 1..{len(per_frame)}")
    return float(per_frame[frame - 1])


def horizon_frame(ms: float, frame_rate: float = 30.0) -> int:
    """Milliseconds -> nearest 1-based frame index."""
    return int(round(ms * frame_rate / 1000.0))


@dataclass
class EvalTable:
    """MPJPE (mm) at fixed millisecond horizons plus the all-frame average."""

    horizons_ms: tuple
    values_mm: np.ndarray       # one value per horizon
    average_mm: float           # mean over every predicted frame
    per_frame_mm: np.ndarray    # (T_f,)
    num_windows: int
    label: str = "Ours"

    def header(self) -> list[str]:
        return ["milliseconds"] + [str(int(h)) for h in self.horizons_ms] + ["Average"]

    def row(self) -> list[str]:
        return [self.label] + [f"{v:.2f}" for v in self.values_mm] \
            + [f"{self.average_mm:.2f}"]

    def to_csv(self) -> str:
        return ",".join(self.header()) + "\n" + ",".join(self.row()) + "\n"


def _oriented_arrays(samples: list[DyadSample], window_len: int):
    """Stack each dyad twice (each subject once as primary) into arrays:
    (M, T_p, K) primary, (M, T_p, K) auxiliary, (M, T_l+T_f, K) target."""
    prim, aux, target = [], [], []
    for s in samples:
        for p_past, a_past, p_fut in ((s.subject1_past, s.subject2_past, s.subject1_future),
                                      (s.subject2_past, s.subject1_past, s.subject2_future)):
            prim.append(p_past)
            aux.append(a_past)
            target.append(np.concatenate([p_past[-window_len:], p_fut], axis=0))
    return np.stack(prim), np.stack(aux), np.stack(target)


def evaluate(model: DyadicMotionPredictor, samples: list[DyadSample],
             horizons_ms=DEFAULT_HORIZONS_MS, frame_rate: float = 30.0,
             chunk: int = 64, label: str = "Ours") -> EvalTable:
    """Average MPJPE over all windows, scoring each subject as primary once."""
    if not samples:
        raise ValueError("empty evaluation set")
    cfg = model.config
    prim, aux, target = _oriented_arrays(samples, cfg.window_len)
    future_target = target[:, -cfg.future_len:, :]
    totals = np.zeros(cfg.future_len)
    count = 0
    model.eval()
    with torch.no_grad():
        for i in range(0, len(prim), chunk):
            xp = torch.as_tensor(prim[i:i + chunk], dtype=model.dtype)
            xa = torch.as_tensor(aux[i:i + chunk], dtype=model.dtype)
            fut = model.forward_batch(xp, xa)["future"].numpy()
            err = (fut - future_target[i:i + chunk]).reshape(
                fut.shape[0], cfg.future_len, cfg.joint_count, 3)
            totals += np.sqrt((err ** 2).sum(axis=-1)).mean(axis=-1).sum(axis=0)
            count += fut.shape[0]
    per_frame = totals / count
    frames = [horizon_frame(ms, frame_rate) for ms in horizons_ms]
    for f in frames:
        if not (1 <= f <= cfg.future_len):
            raise ValueError(f"horizon frame {f} outside 1..{cfg.future_len}")
    values = np.array([per_frame[f - 1] for f in frames])
    return EvalTable(tuple(horizons_ms), values, float(per_frame.mean()),
                     per_frame, num_windows=count, label=label)


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_mpjpe: float = float("inf")
    steps: int = 0


def train(model: DyadicMotionPredictor, train_samples: list[DyadSample],
          val_samples: list[DyadSample], config: TrainConfig,
          start_epoch: int = 0, quiet: bool = True) -> TrainResult:
    """Adam training with best-validation-checkpoint selection.

    The best (lowest validation average MPJPE) parameters are loaded back
    into the model before returning. Raises TrainingDivergedError on a
    non-finite loss.
    """
    if not train_samples:
        raise ValueError("empty training set")
    if not val_samples:
        raise ValueError("empty validation set")
    cfg = model.config
    prim, aux, target = _oriented_arrays(train_samples, cfg.window_len)
    prim_t = torch.as_tensor(prim, dtype=model.dtype)
    aux_t = torch.as_tensor(aux, dtype=model.dtype)
    target_t = torch.as_tensor(target, dtype=model.dtype)

    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    result = TrainResult()
    best_state = None
    log_file = open(config.log_path, "w") if config.log_path else None
    try:
        stop = False
        for epoch in range(start_epoch, start_epoch + config.epochs):
            model.train()
            order = rng.permutation(len(prim))
            epoch_losses = []
            for i in range(0, len(order), config.batch_size):
                idx = order[i:i + config.batch_size]
                optimizer.zero_grad()
                out = model.forward_batch(prim_t[idx], aux_t[idx])
                batch_loss = loss_batch(out["window"], target_t[idx],
                                        config.squared_loss)
                if not torch.isfinite(batch_loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, step {result.steps}: "
                        f"{batch_loss.item()}")
                batch_loss.backward()
                optimizer.step()
                epoch_losses.append(batch_loss.item())
                result.steps += 1
                if config.max_steps is not None and result.steps >= config.max_steps:
                    stop = True
                    break
            val_table = evaluate(model, val_samples)
            record = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses)),
                      "val_mpjpe": val_table.average_mm, "steps": result.steps}
            result.history.append(record)
            if log_file:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            if not quiet:
                print(f"epoch {epoch}: train {record['train_loss']:.4f} "
                      f"val {record['val_mpjpe']:.2f} mm")
            if val_table.average_mm < result.best_val_mpjpe:
                result.best_val_mpjpe = val_table.average_mm
                result.best_epoch = epoch
                best_state = {k: v.detach().clone()
                              for k, v in model.state_dict().items()}
            if stop:
                break
    finally:
        if log_file:
            log_file.close()
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return result
