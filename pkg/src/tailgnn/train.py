"""Weighted-BCE training with Adam, early stopping, and checkpointing."""

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from tailgnn import autodiff as ad
from tailgnn import evaluate, model
from tailgnn.dataio import encode_one_hot
from tailgnn.errors import (
    BadMagic,
    EmptySplit,
    NonFiniteGradient,
    ShapeMismatch,
    TruncatedFile,
    VersionMismatch,
)

CHECKPOINT_MAGIC = b"TGNN"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_threshold: float = 0.5

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.patience > self.max_epochs:
            raise ValueError("patience must be <= max_epochs")

    def to_dict(self):
        return {
            "lr": self.lr, "batch_size": self.batch_size,
            "max_epochs": self.max_epochs, "patience": self.patience,
            "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "seed": self.seed, "eval_threshold": self.eval_threshold,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class OptimizerState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_params(cls, params):
        return cls(m={k: np.zeros_like(a) for k, a in params.items()},
                   v={k: np.zeros_like(a) for k, a in params.items()})


def class_weights(train_ds, clamp=(0.1, 100.0)):
    """Inverse-frequency positive-class weights, clamped for stability."""
    m = train_ds.label_matrix()
    n = m.shape[0]
    pos = m.sum(axis=0)
    w = (n - pos) / np.maximum(pos, 1.0)
    return np.clip(w, clamp[0], clamp[1])


def weighted_bce(probs, targets, weights):
    """Mean over all (record, label) cells of weighted binary cross-entropy.

    The per-label weight scales only the positive term. Log arguments are
    floored at 1e-12.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if probs.data.shape != targets.shape:
        raise ShapeMismatch(f"probs {probs.data.shape} vs targets {targets.shape}")
    weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), targets.shape)
    pos_coeff = targets * weights
    neg_coeff = 1.0 - targets
    logp = ad.log(ad.clip_min(probs, 1e-12))
    log1p = ad.log(ad.clip_min(ad.sub(1.0, probs), 1e-12))
    term = ad.add(ad.mul_const(logp, pos_coeff), ad.mul_const(log1p, neg_coeff))
    return ad.mul(ad.reduce_mean(term), -1.0)


def adam_step(params, grads, state, cfg):
    """Standard Adam with bias correction, applied in place."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    for name in sorted(params):
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter {name!r}")
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / (1.0 - b1 ** state.t)
        v_hat = state.v[name] / (1.0 - b2 ** state.t)
        params[name] -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return params, state


def _batch_arrays(records, encodings, n_labels):
    max_len = max(len(r.sequence) for r in records)
    x = np.zeros((len(records), max_len, 21))
    pool_w = np.zeros((len(records), max_len, 1))
    targets = np.zeros((len(records), n_labels))
    for b, r in enumerate(records):
        n = len(r.sequence)
        x[b, :n] = encodings[b]
        pool_w[b, :n, 0] = 1.0 / n
        targets[b] = r.labels.mask
    return x, pool_w, targets


def predict_probs(params, cfg, dataset, a, spectral=None, batch_size=32):
    """Forward pass over a dataset without recording; (N, n_labels)."""
    n_labels = dataset.ontology.node_count
    pt = {name: ad.Tensor(arr) for name, arr in params.items()}
    out = []
    for lo in range(0, len(dataset.records), batch_size):
        chunk = dataset.records[lo:lo + batch_size]
        enc = [encode_one_hot(r.sequence) for r in chunk]
        x, pool_w, _ = _batch_arrays(chunk, enc, n_labels)
        probs = model.model_forward(x, pool_w, pt, cfg, n_labels, a, spectral)
        out.append(probs.data)
    return np.concatenate(out, axis=0)


def train_loop(model_cfg, train_cfg, train_ds, val_ds, a, spectral=None,
               log=None):
    """Adam training with early stopping on validation micro-F1.

    Returns (best params, history) where history is a list of
    {"epoch", "train_loss", "val_f1"} dicts.
    """
    if not train_ds.records:
        raise EmptySplit("empty training split")
    if not val_ds.records:
        raise EmptySplit("empty validation split")
    n_labels = train_ds.ontology.node_count
    weights = class_weights(train_ds)
    params = model.init_params(model_cfg, n_labels, train_cfg.seed)
    state = OptimizerState.for_params(params)
    encodings = [encode_one_hot(r.sequence) for r in train_ds.records]
    rng = np.random.default_rng(train_cfg.seed)

    best_params = {k: v.copy() for k, v in params.items()}
    best_f1 = -1.0
    since_improved = 0
    history = []

    n = len(train_ds.records)
    for epoch in range(1, train_cfg.max_epochs + 1):
        perm = rng.permutation(n)
        losses = []
        for lo in range(0, n, train_cfg.batch_size):
            idx = perm[lo:lo + train_cfg.batch_size]
            chunk = [train_ds.records[i] for i in idx]
            enc = [encodings[i] for i in idx]
            x, pool_w, targets = _batch_arrays(chunk, enc, n_labels)
            tape = ad.Tape()
            pt = model.params_on_tape(tape, params)
            probs = model.model_forward(x, pool_w, pt, model_cfg, n_labels,
                                        a, spectral)
            loss = weighted_bce(probs, targets, weights)
            losses.append(float(loss.data))
            grads = tape.backward(loss)
            named = {name: grads[t.node_id] for name, t in pt.items()}
            adam_step(params, named, state, train_cfg)

        val_probs = predict_probs(params, model_cfg, val_ds, a, spectral,
                                  train_cfg.batch_size)
        val_f1, _ = evaluate.micro_f1(val_probs, val_ds.label_matrix(),
                                      train_cfg.eval_threshold)
        train_loss = float(np.mean(losses))
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_f1": val_f1})
        if log:
            log(f"epoch {epoch}: loss {train_loss:.5f} val_f1 {val_f1:.4f}")

        if val_f1 > best_f1:
            best_f1 = val_f1
            best_params = {k: v.copy() for k, v in params.items()}
            since_improved = 0
        else:
            since_improved += 1
            if since_improved >= max(train_cfg.patience, 1):
                break
    return best_params, history


def history_csv(history):
    lines = ["epoch,train_loss,val_f1"]
    for row in history:
        lines.append(f"{row['epoch']},{row['train_loss']:.17g},{row['val_f1']:.17g}")
    return "\n".join(lines) + "\n"


# --- checkpoints ---

def _meta_blob(model_cfg, train_cfg, extra):
    meta = {"model": model_cfg.to_dict(), "train": train_cfg.to_dict()}
    meta.update(extra)
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()


def save_checkpoint(params, model_cfg, train_cfg, path, **extra):
    """Versioned binary checkpoint; identical inputs give identical bytes."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    blob = _meta_blob(model_cfg, train_cfg, extra)
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(params)))
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype=np.float64)
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<I", d))
        buf.write(arr.astype("<f8").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def _read_exact(f, n, what):
    data = f.read(n)
    if len(data) != n:
        raise TruncatedFile(f"unexpected end of file while reading {what}")
    return data


def load_checkpoint(path):
    """Returns (params, model_cfg, train_cfg, meta dict)."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise BadMagic(f"bad magic bytes {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise VersionMismatch(f"format version {version}, expected {CHECKPOINT_VERSION}")
        (blob_len,) = struct.unpack("<Q", _read_exact(f, 8, "metadata length"))
        meta = json.loads(_read_exact(f, blob_len, "metadata"))
        model_cfg = model.ModelConfig.from_dict(meta.pop("model"))
        train_cfg = TrainConfig.from_dict(meta.pop("train"))
        (count,) = struct.unpack("<I", _read_exact(f, 4, "tensor count"))
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, nlen, "name").decode()
            (rank,) = struct.unpack("<B", _read_exact(f, 1, "rank"))
            shape = tuple(
                struct.unpack("<I", _read_exact(f, 4, "dim"))[0]
                for _ in range(rank))
            nbytes = 8 * int(np.prod(shape)) if shape else 8
            data = _read_exact(f, nbytes, f"data of {name}")
            params[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
        if f.read(1):
            raise TruncatedFile("trailing bytes after tensor table")

    n_labels = meta.get("n_labels")
    if n_labels is not None:
        expected = model.init_params(model_cfg, n_labels, seed=0)
        if set(expected) != set(params):
            missing = set(expected) ^ set(params)
            raise ShapeMismatch(f"tensor set mismatch: {sorted(missing)}")
        for name, arr in expected.items():
            if params[name].shape != arr.shape:
                raise ShapeMismatch(
                    f"tensor {name!r} has shape {params[name].shape}, "
                    f"config implies {arr.shape}")
    return params, model_cfg, train_cfg, meta
