"""Optimization loop for both architectures.

Adam with decoupled-into-gradient L2 weight decay, an optional
warm-restart cosine schedule, seeded data splitting with five folds,
ablation mode, divergence handling, and binary checkpoints.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field, fields

import numpy as np

from . import corpus as cp
from . import frontend as fe
from . import metrics as mt
from . import stutterformer as sf
from . import stutterzero as sz

CHECKPOINT_VERSION = 1
GRAD_CLIP_NORM = 5.0


class TrainingError(RuntimeError):
    pass


class DivergenceError(TrainingError):
    """Raised when the loss turns non-finite; carries the last good state."""

    def __init__(self, message, model=None, history=None):
        super().__init__(message)
        self.model = model
        self.history = history


class CheckpointError(ValueError):
    pass


# -- optimizer -------------------------------------------------------------

class Adam:
    """Bias-corrected Adam over a named parameter dict.

    Weight decay enters as an L2 term added to each gradient before the
    moment updates.  step() validates every gradient first and mutates
    nothing when one is non-finite, then zeroes gradients afterward.
    """

    def __init__(self, params: dict, lr: float = 1e-4, weight_decay: float = 1e-6,
                 betas: tuple = (0.9, 0.999), eps: float = 1e-6):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise TrainingError(f"non-finite gradient in parameter {name!r}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1 ** self.t)
            v_hat = self.v[name] / (1 - b2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.grad = None


def clip_gradients(params: dict, max_norm: float = GRAD_CLIP_NORM) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


# -- learning-rate schedule ------------------------------------------------

@dataclass
class ScheduleState:
    eta_max: float
    t_0: int = 50
    t_mult: int = 2
    eta_min: float = 0.0


def cosine_warm_restart_lr(epoch: int, sched: ScheduleState) -> float:
    """Half-cosine decay within cycles whose lengths grow by t_mult.

    Restarts land at cumulative epochs t_0, t_0*(1 + t_mult), ... so with the
    defaults the rate returns to eta_max at epochs 50, 150, 350.
    """
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    t_cur, t_i = epoch, sched.t_0
    while t_cur >= t_i:
        t_cur -= t_i
        t_i *= sched.t_mult
    return sched.eta_min + 0.5 * (sched.eta_max - sched.eta_min) * (
        1.0 + math.cos(math.pi * t_cur / t_i))


# -- data splitting --------------------------------------------------------

@dataclass
class SplitPlan:
    train: list
    test: list
    validation: list
    folds: list  # five (train_ids, held_out_ids) over the train+test pool

    @property
    def pool(self) -> list:
        return self.train + self.test


def make_splits(ids, seed: int = 0, n_folds: int = 5) -> SplitPlan:
    """Seeded shuffle, then 80/10/10 partition and folds over the 90% pool.

    The validation slice never appears in any fold.
    """
    ids = list(ids)
    if len(ids) < 10:
        raise TrainingError(f"need at least 10 samples to split, got {len(ids)}")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    n = len(order)
    n_val = n // 10
    n_test = n // 10
    validation = order[:n_val]
    test = order[n_val:n_val + n_test]
    train = order[n_val + n_test:]
    pool = train + test
    folds = []
    for part in np.array_split(np.arange(len(pool)), n_folds):
        held = [pool[i] for i in part]
        kept = [s for s in pool if s not in set(held)]
        folds.append((kept, held))
    return SplitPlan(train, test, validation, folds)


# -- feature preparation ---------------------------------------------------

def prepare_features(sample: cp.PairedSample, fb: fe.MelFilterbank,
                     stft_cfg: fe.StftConfig):
    """Normalized input frames, target frames in the same coordinates, tokens.

    The fluent target is expressed with the stuttered utterance's feature
    statistics so that free-running predictions can be de-normalized with the
    statistics available at inference time.
    """
    mel_in = fe.log_mel(sample.stuttered, fb, stft_cfg)
    raw_out = fe.log_mel(sample.fluent, fb, stft_cfg, normalize=False).values
    target = (raw_out - mel_in.mean) / mel_in.scale
    tokens = cp.tokenize(sample.transcript)
    return mel_in, target.astype(np.float32), tokens


# -- training configuration ------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 3
    lr: float = 1e-4
    weight_decay: float = 1e-6
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-6
    use_scheduler: bool = False
    t_0: int = 50
    t_mult: int = 2
    eta_min: float = 0.0
    grad_clip: float = GRAD_CLIP_NORM
    eval_interval: int = 10  # epochs between held-out WER evaluations
    max_steps: int = 0       # 0 = no cap; otherwise stop after this many updates
    seed: int = 0


def default_train_config(kind: str, **overrides) -> TrainConfig:
    """Published hyperparameters per architecture."""
    if kind == "stutterzero":
        base = dict(lr=1e-4, weight_decay=1e-6, betas=(0.9, 0.999), eps=1e-6)
    elif kind == "stutterformer":
        base = dict(lr=1e-4, weight_decay=1e-5, betas=(0.9, 0.98), eps=1e-6,
                    use_scheduler=True)
    else:
        raise ValueError(f"unknown model kind: {kind}")
    base.update(overrides)
    return TrainConfig(**base)


def build_model(kind: str, model_cfg=None, seed: int = 0):
    rng = np.random.default_rng(seed)
    if kind == "stutterzero":
        return sz.StutterZero(model_cfg or sz.StutterZeroConfig(), rng)
    if kind == "stutterformer":
        return sf.StutterFormer(model_cfg or sf.StutterFormerConfig(), rng)
    raise ValueError(f"unknown model kind: {kind}")


# -- training loop ---------------------------------------------------------

def _mean_entry(vals):
    return float(np.mean(vals)) if vals else None


def train(kind: str, samples, model_cfg=None, train_cfg: TrainConfig | None = None,
          ablate: bool = False, val_samples=None, history_path=None,
          checkpoint_path=None, log=None):
    """Teacher-forced epoch loop; returns (model at best held-out WER, history).

    Losses of each batch are averaged over per-sample forward passes, clipped
    at a global gradient norm, and stepped with Adam.  Divergence restores the
    best state seen so far and raises DivergenceError carrying it.
    """
    if not samples:
        raise TrainingError("corpus is empty")
    cfg = train_cfg or default_train_config(kind)
    model = build_model(kind, model_cfg, cfg.seed)
    params = model.parameters()
    if ablate:
        # removed decoder: its parameters see neither gradients nor decay
        frozen = set(model.transcript_parameter_names())
        params = {n: p for n, p in params.items() if n not in frozen}
    opt = Adam(params, cfg.lr, cfg.weight_decay, cfg.betas, cfg.eps)
    sched = ScheduleState(cfg.lr, cfg.t_0, cfg.t_mult, cfg.eta_min)
    stft_cfg = fe.StftConfig()
    fb = fe.build_mel_filterbank(n_mels=model.cfg.n_mels, cfg=stft_cfg)
    feats = [prepare_features(s, fb, stft_cfg) for s in samples]
    rng = np.random.default_rng(cfg.seed)
    history = []
    best_wer = math.inf
    best_state = _snapshot(model)
    steps = 0
    for epoch in range(cfg.epochs):
        lr = cosine_warm_restart_lr(epoch, sched) if cfg.use_scheduler else cfg.lr
        opt.lr = lr
        order = rng.permutation(len(feats))
        sums = {"mse": [], "mae": [], "ce": [], "total": []}
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            losses = []
            for idx in batch:
                mel_in, target, tokens = feats[idx]
                drop = np.random.default_rng(cfg.seed * 1_000_003 + steps * 131 + int(idx))
                out = model.forward_train(mel_in.values, target, tokens,
                                          ablate=ablate, dropout_rng=drop)
                losses.append(out)
            total = losses[0]["total"]
            for o in losses[1:]:
                total = total + o["total"]
            total = total * (1.0 / len(losses))
            if not np.isfinite(total.data):
                _restore(model, best_state)
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}", model, history)
            model.zero_grad()
            total.backward()
            clip_gradients(params, cfg.grad_clip)
            opt.step()
            steps += 1
            for key in sums:
                vals = [float(o[key].data) for o in losses if key in o]
                if vals:
                    sums[key].extend(vals)
            if cfg.max_steps and steps >= cfg.max_steps:
                break
        row = {"epoch": epoch,
               "l_mse": _mean_entry(sums["mse"]),
               "l_mae": _mean_entry(sums["mae"]),
               "l_ce": _mean_entry(sums["ce"]),
               "l_total": _mean_entry(sums["total"]),
               "val_wer": None, "lr": lr}
        last_epoch = (cfg.max_steps and steps >= cfg.max_steps) or epoch == cfg.epochs - 1
        if val_samples and (epoch % cfg.eval_interval == 0 or last_epoch):
            report = mt.evaluate_model(model, val_samples)
            vals = report.values("wer_audio")
            row["val_wer"] = float(np.mean(vals)) if vals else 1.0
            if row["val_wer"] < best_wer:
                best_wer = row["val_wer"]
                best_state = _snapshot(model)
        elif not val_samples:
            # no held-out set: keep the latest finite state as best
            best_state = _snapshot(model)
        history.append(row)
        if log:
            log(row)
        if last_epoch:
            break
    _restore(model, best_state)
    if history_path:
        write_history(history, history_path)
    if checkpoint_path:
        save_checkpoint(model, checkpoint_path)
    return model, history


def _snapshot(model) -> dict:
    return {n: p.data.copy() for n, p in model.parameters().items()}


def _restore(model, state: dict) -> None:
    for n, p in model.parameters().items():
        p.data = state[n].copy()


def write_history(history, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "l_mse", "l_mae", "l_ce", "l_total", "val_wer", "lr"])
        for row in history:
            w.writerow([row["epoch"]] + [
                "" if row[k] is None else f"{row[k]:.8g}"
                for k in ("l_mse", "l_mae", "l_ce", "l_total", "val_wer", "lr")])


# -- checkpoints -----------------------------------------------------------

_MAGICS = {"stutterzero": sz.MAGIC, "stutterformer": sf.MAGIC}
_CONFIGS = {"stutterzero": sz.StutterZeroConfig, "stutterformer": sf.StutterFormerConfig}
_BUILDERS = {"stutterzero": sz.StutterZero, "stutterformer": sf.StutterFormer}


def model_kind(model) -> str:
    return "stutterzero" if isinstance(model, sz.StutterZero) else "stutterformer"


def _config_fields(cfg):
    # fixed serialization order: dataclass declaration order
    return [(f.name, getattr(cfg, f.name)) for f in fields(cfg)]


def _write_config(buf, cfg) -> None:
    items = _config_fields(cfg)
    buf.write(struct.pack("<I", len(items)))
    for name, value in items:
        raw = name.encode()
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        if isinstance(value, bool):
            buf.write(b"b" + struct.pack("<B", value))
        elif isinstance(value, int):
            buf.write(b"i" + struct.pack("<q", value))
        elif isinstance(value, float):
            buf.write(b"f" + struct.pack("<d", value))
        elif isinstance(value, tuple):
            buf.write(b"t" + struct.pack("<I", len(value)))
            for v in value:
                buf.write(struct.pack("<d", float(v)))
        else:
            raise CheckpointError(f"unserializable config field {name!r}")


def _read_exact(f, n: int) -> bytes:
    raw = f.read(n)
    if len(raw) != n:
        raise CheckpointError("truncated checkpoint file")
    return raw


def _read_config(f, cfg_cls):
    (n_items,) = struct.unpack("<I", _read_exact(f, 4))
    values = {}
    for _ in range(n_items):
        (name_len,) = struct.unpack("<I", _read_exact(f, 4))
        name = _read_exact(f, name_len).decode()
        tag = _read_exact(f, 1)
        if tag == b"b":
            values[name] = bool(struct.unpack("<B", _read_exact(f, 1))[0])
        elif tag == b"i":
            values[name] = int(struct.unpack("<q", _read_exact(f, 8))[0])
        elif tag == b"f":
            values[name] = float(struct.unpack("<d", _read_exact(f, 8))[0])
        elif tag == b"t":
            (k,) = struct.unpack("<I", _read_exact(f, 4))
            vals = struct.unpack(f"<{k}d", _read_exact(f, 8 * k))
            values[name] = tuple(int(v) if float(v).is_integer() else float(v)
                                 for v in vals)
        else:
            raise CheckpointError(f"unknown config field tag {tag!r}")
    known = {f.name for f in fields(cfg_cls)}
    unknown = set(values) - known
    if unknown:
        raise CheckpointError(f"unknown config fields: {sorted(unknown)}")
    return cfg_cls(**values)


def save_checkpoint(model, path) -> None:
    """magic, version, config block, then name-sorted f32 parameter records."""
    kind = model_kind(model)
    buf = io.BytesIO()
    buf.write(_MAGICS[kind])
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    _write_config(buf, model.cfg)
    records = {name: p.data for name, p in model.parameters().items()}
    records.update({f"buffer:{name}": b for name, b in model.buffers().items()})
    buf.write(struct.pack("<I", len(records)))
    for name in sorted(records):
        data = np.asarray(records[name], dtype=np.float32)
        if data.ndim:  # ascontiguousarray would promote 0-d to 1-d
            data = np.ascontiguousarray(data)
        raw = name.encode()
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", data.ndim))
        buf.write(struct.pack(f"<{data.ndim}I", *data.shape))
        buf.write(data.astype("<f4").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path, into=None):
    """Rebuild (or fill) a model from a checkpoint; bit-exact on parameters."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4)
        kinds = {m: k for k, m in _MAGICS.items()}
        if magic not in kinds:
            raise CheckpointError("not a checkpoint")
        kind = kinds[magic]
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        cfg = _read_config(f, _CONFIGS[kind])
        if into is not None:
            if model_kind(into) != kind:
                raise CheckpointError(
                    f"checkpoint holds a {kind} model, not a {model_kind(into)}")
            model = into
        else:
            model = _BUILDERS[kind](cfg, np.random.default_rng(0))
        params = model.parameters()
        buffers = model.buffers()
        (n_records,) = struct.unpack("<I", _read_exact(f, 4))
        seen = set()
        diffs = []
        for _ in range(n_records):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, name_len).decode()
            (rank,) = struct.unpack("<I", _read_exact(f, 4))
            shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            data = np.frombuffer(_read_exact(f, 4 * count), dtype="<f4").reshape(shape)
            seen.add(name)
            if name.startswith("buffer:"):
                buf_name = name[len("buffer:"):]
                if buf_name not in buffers:
                    diffs.append(f"{name}: not present in target model")
                elif buffers[buf_name].shape != tuple(shape):
                    diffs.append(f"{name}: checkpoint shape {tuple(shape)} vs "
                                 f"model shape {buffers[buf_name].shape}")
                else:
                    model.set_buffer(buf_name, data)
                continue
            if name not in params:
                diffs.append(f"{name}: not present in target model")
                continue
            if params[name].data.shape != tuple(shape):
                diffs.append(f"{name}: checkpoint shape {tuple(shape)} vs "
                             f"model shape {params[name].data.shape}")
                continue
            params[name].data = data.astype(np.float32).copy()
        expected = set(params) | {f"buffer:{n}" for n in buffers}
        missing = sorted(expected - seen)
        diffs.extend(f"{name}: missing from checkpoint" for name in missing)
        if diffs:
            raise CheckpointError("parameter mismatch:\n  " + "\n  ".join(diffs))
    return model
