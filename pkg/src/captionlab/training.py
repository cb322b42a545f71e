"""Teacher-forced optimization: Adam, global-norm gradient clipping,
ReduceLROnPlateau, EarlyStopping, per-epoch checkpointing, and champion
selection by task metric.

Checkpoint file layout: magic b"CKPT", uint32 version, uint32 record count,
records (uint32 name length, UTF-8 name, uint32 rank, uint32 extents,
little-endian float64 payload), uint32 optimizer record count, optimizer
records in the same encoding, then a uint32-length-prefixed UTF-8 JSON
metadata trailer.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .models import CaptionModel, ModelConfig, build, caption_loss, forward_train, init_states_batch

CKPT_MAGIC = b"CKPT"
CKPT_VERSION = 1

# "no improvement" means the new value failed to beat the best by more than this
IMPROVEMENT_EPS = 1e-6


class CheckpointError(ValueError):
    """Corrupt or truncated checkpoint file."""


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-4
    clipnorm: float = 1.0
    label_epsilon: float = 0.1
    plateau_patience: int = 1
    plateau_factor: float = 0.5
    early_stop_patience: int = 3
    max_epochs: int = 25
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.clipnorm <= 0 or self.max_epochs <= 0:
            raise ValueError("learning_rate, clipnorm, max_epochs must be positive")
        if not 0.0 <= self.label_epsilon < 1.0:
            raise ValueError("label_epsilon must be in [0, 1)")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError("plateau_factor must be in (0, 1)")


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def clip_by_global_norm(grads: dict[str, np.ndarray], clipnorm: float) -> dict[str, np.ndarray]:
    """Scale all gradients by clipnorm/norm when the global L2 norm exceeds clipnorm."""
    if clipnorm <= 0:
        raise ValueError("clipnorm must be positive")
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= clipnorm:
        return {k: g.copy() for k, g in grads.items()}
    scale = clipnorm / total
    return {k: g * scale for k, g in grads.items()}


def adam_update(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """In-place Adam step with bias correction."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(f"adam_update: grad shape {g.shape} != param shape {p.data.shape} for {name}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / corr1
        v_hat = v / corr2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# checkpoint I/O

def _write_records(f, arrays: dict[str, np.ndarray]) -> None:
    f.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        nm = name.encode("utf-8")
        f.write(struct.pack("<I", len(nm)))
        f.write(nm)
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.astype("<f8").tobytes())


def _read_records(buf: memoryview, offset: int) -> tuple[dict[str, np.ndarray], int]:
    def take(n):
        nonlocal offset
        if offset + n > len(buf):
            raise CheckpointError("checkpoint truncated")
        out = bytes(buf[offset:offset + n])
        offset += n
        return out

    (count,) = struct.unpack("<I", take(4))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).copy()
        arrays[name] = data
    return arrays, offset


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam_t: int
    epoch: int
    train_loss: list[float]
    val_loss: list[float]
    lr_history: list[float]
    model_config: dict
    path: Path | None = None


def save_checkpoint(
    path: str | Path,
    model: CaptionModel,
    adam: AdamState,
    epoch: int,
    train_loss: list[float],
    val_loss: list[float],
    lr_history: list[float],
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = model.parameters()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        _write_records(f, {k: p.data for k, p in params.items()})
        opt: dict[str, np.ndarray] = {}
        for k in params:
            opt[f"adam.m.{k}"] = adam.m.get(k, np.zeros_like(params[k].data))
            opt[f"adam.v.{k}"] = adam.v.get(k, np.zeros_like(params[k].data))
        _write_records(f, opt)
        meta = {
            "epoch": epoch,
            "adam_t": adam.t,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "lr": lr_history,
            "model_config": asdict(model.config),
        }
        blob = json.dumps(meta).encode("utf-8")
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = memoryview(path.read_bytes())
    if len(raw) < 8 or bytes(raw[:4]) != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic")
    (version,) = struct.unpack("<I", bytes(raw[4:8]))
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    params, offset = _read_records(raw, 8)
    opt, offset = _read_records(raw, offset)
    if offset + 4 > len(raw):
        raise CheckpointError(f"{path}: missing metadata trailer")
    (mlen,) = struct.unpack("<I", bytes(raw[offset:offset + 4]))
    blob = bytes(raw[offset + 4:offset + 4 + mlen])
    if len(blob) != mlen:
        raise CheckpointError(f"{path}: truncated metadata trailer")
    meta = json.loads(blob.decode("utf-8"))
    adam_m = {k[len("adam.m."):]: v for k, v in opt.items() if k.startswith("adam.m.")}
    adam_v = {k[len("adam.v."):]: v for k, v in opt.items() if k.startswith("adam.v.")}
    return Checkpoint(
        params=params,
        adam_m=adam_m,
        adam_v=adam_v,
        adam_t=int(meta["adam_t"]),
        epoch=int(meta["epoch"]),
        train_loss=[float(x) for x in meta["train_loss"]],
        val_loss=[float(x) for x in meta["val_loss"]],
        lr_history=[float(x) for x in meta["lr"]],
        model_config=meta["model_config"],
        path=path,
    )


def restore_model(ckpt: Checkpoint) -> CaptionModel:
    config = ModelConfig(**ckpt.model_config)
    model = build(config, seed=0)
    params = model.parameters()
    if set(params) != set(ckpt.params):
        raise CheckpointError("checkpoint parameter names do not match the model config")
    for name, p in params.items():
        if p.data.shape != ckpt.params[name].shape:
            raise CheckpointError(f"checkpoint shape mismatch for {name}")
        p.data = ckpt.params[name].copy()
        p.zero_grad()
    return model


def restore_adam(ckpt: Checkpoint) -> AdamState:
    return AdamState(
        t=ckpt.adam_t,
        m={k: v.copy() for k, v in ckpt.adam_m.items()},
        v={k: v.copy() for k, v in ckpt.adam_v.items()},
    )


# ---------------------------------------------------------------------------
# training loop

@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainResult:
    rows: list[EpochRow]
    checkpoint_paths: list[Path]
    stopped_early: bool


def _features_for(model: CaptionModel, example):
    from .features import to_vector

    if model.config.architecture == "focalis":
        return example.features
    return to_vector(example.features)


def _mean(losses: list[Tensor]) -> Tensor:
    total = losses[0]
    for term in losses[1:]:
        total = ad.add(total, term)
    return ad.mul(total, Tensor(np.array(1.0 / len(losses))))


def example_loss(model: CaptionModel, example, epsilon: float) -> Tensor:
    """Mean teacher-forced loss over the example's references."""
    feats = _features_for(model, example)
    return _mean([forward_train(model, feats, ref, epsilon=epsilon) for ref in example.references])


def batch_loss(model: CaptionModel, examples, epsilon: float) -> Tensor:
    """Mean of example losses over a batch; shares the batched spatial
    encoding across the batch for attention models."""
    states = init_states_batch(model, [_features_for(model, ex) for ex in examples])
    return _mean([
        _mean([caption_loss(model, st, ref, epsilon) for ref in ex.references])
        for st, ex in zip(states, examples)
    ])


def dataset_loss(model: CaptionModel, examples, epsilon: float, chunk: int = 32) -> float:
    total = 0.0
    with ad.no_grad():
        for lo in range(0, len(examples), chunk):
            part = examples[lo:lo + chunk]
            total += float(batch_loss(model, part, epsilon).data) * len(part)
    return total / len(examples)


def masked_batch_loss(
    model: CaptionModel,
    feature_list,
    ids: np.ndarray,
    mask: np.ndarray,
    epsilon: float,
) -> Tensor:
    """Loss over a padded id matrix; all-pad rows and padded tails are ignored."""
    losses = []
    for feats, row, row_mask in zip(feature_list, ids, mask):
        length = int(row_mask.sum())
        if length < 2:
            continue  # all-pad (or degenerate) row contributes nothing
        losses.append(forward_train(model, feats, [int(x) for x in row[:length]], epsilon=epsilon))
    if not losses:
        raise ValueError("masked_batch_loss: no real rows in batch")
    total = losses[0]
    for term in losses[1:]:
        total = ad.add(total, term)
    return ad.mul(total, Tensor(np.array(1.0 / len(losses))))


def train(
    model: CaptionModel,
    train_set,
    val_set,
    config: TrainingConfig,
    out_dir: str | Path | None = None,
    resume_from: Checkpoint | None = None,
    log=None,
) -> TrainResult:
    """Run the full recipe. Deterministic for a fixed seed: the per-epoch
    shuffle is keyed on (seed, epoch), so resuming from a checkpoint
    reproduces the uninterrupted run bit-for-bit."""
    if not train_set or not val_set:
        raise ValueError("train: empty train or validation split")
    params = model.parameters()
    adam = restore_adam(resume_from) if resume_from else AdamState()
    train_hist = list(resume_from.train_loss) if resume_from else []
    val_hist = list(resume_from.val_loss) if resume_from else []
    lr_hist = list(resume_from.lr_history) if resume_from else []
    start_epoch = (resume_from.epoch + 1) if resume_from else 1

    out_dir = Path(out_dir) if out_dir else None
    ckpt_paths: list[Path] = []
    rows: list[EpochRow] = []
    stopped = False

    for epoch in range(start_epoch, config.max_epochs + 1):
        lr = _lr_for_epoch(config, val_hist)
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(len(train_set))
        loss_sum = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch_idx = order[lo:lo + config.batch_size]
            for p in params.values():
                p.zero_grad()
            loss = batch_loss(model, [train_set[int(i)] for i in batch_idx], config.label_epsilon)
            value = float(loss.data)
            if not np.isfinite(value):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            loss_sum += value * len(batch_idx)
            ad.backward(loss)
            grads = clip_by_global_norm({k: p.grad for k, p in params.items()}, config.clipnorm)
            adam_update(params, grads, adam, lr)

        train_loss = loss_sum / len(order)
        val_loss = dataset_loss(model, val_set, config.label_epsilon)
        train_hist.append(train_loss)
        val_hist.append(val_loss)
        lr_hist.append(lr)
        rows.append(EpochRow(epoch, train_loss, val_loss, lr))
        if log:
            log(f"epoch {epoch:3d}  train_loss {train_loss:.4f}  val_loss {val_loss:.4f}  lr {lr:.2e}")

        if out_dir is not None:
            ckpt_paths.append(
                save_checkpoint(
                    out_dir / f"epoch_{epoch:04d}.ckpt",
                    model, adam, epoch, train_hist, val_hist, lr_hist,
                )
            )
        if _epochs_since_improvement(val_hist) >= config.early_stop_patience:
            stopped = True
            break

    if out_dir is not None:
        _write_loss_csv(out_dir / "loss.csv", train_hist, val_hist, lr_hist)
    return TrainResult(rows=rows, checkpoint_paths=ckpt_paths, stopped_early=stopped)


def _epochs_since_improvement(val_hist: list[float]) -> int:
    """Epochs elapsed since the last strict (> eps) improvement of the best value."""
    best = np.inf
    since = 0
    for v in val_hist:
        if v < best - IMPROVEMENT_EPS:
            best = v
            since = 0
        else:
            since += 1
    return since


def _lr_for_epoch(config: TrainingConfig, val_hist: list[float]) -> float:
    """ReduceLROnPlateau: replay the history, multiplying the learning rate by
    plateau_factor whenever plateau_patience epochs pass without improvement."""
    lr = config.learning_rate
    best = np.inf
    since = 0
    for v in val_hist:
        if v < best - IMPROVEMENT_EPS:
            best = v
            since = 0
        else:
            since += 1
            if since >= config.plateau_patience:
                lr *= config.plateau_factor
                since = 0
    return lr


def _write_loss_csv(path: Path, train_hist, val_hist, lr_hist) -> None:
    lines = ["epoch,train_loss,val_loss,lr"]
    for i, (t, v, lr) in enumerate(zip(train_hist, val_hist, lr_hist), start=1):
        lines.append(f"{i},{t:.17g},{v:.17g},{lr:.17g}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def select_champion(checkpoints: list[Checkpoint], val_metric_fn) -> Checkpoint:
    """Argmax of val_metric_fn (BLEU-4 by convention); ties go to the earliest epoch."""
    if not checkpoints:
        raise ValueError("select_champion: no checkpoints")
    scored = [(val_metric_fn(c), -c.epoch, c) for c in checkpoints]
    scored.sort(key=lambda x: (x[0], x[1]))
    return scored[-1][2]
