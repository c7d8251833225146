"""Losses, metrics, the ADAM optimizer and the mini-batch BPTT training loop.

Everything is float64.  Sequences are differentiated end to end (no
truncation; the processes here are short), gradients are exact reverse-mode
from the tape, and a fixed seed reproduces the entire parameter trajectory
bit for bit.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, backward, val
from .errors import Divergence, EmptyBatch, ShapeMismatch, ZeroTarget
from .models import OutputMap, RnnBaseline, apply_output_map, grnn_forward, rnn_forward
from .rng import make_rng


# ---------------------------------------------------------------------------
# losses (tape-aware)


def l1_loss(pred, target):
    """Mean absolute deviation; pred may be a Var or an array."""
    t = np.asarray(val(target))
    if val(pred).shape != t.shape:
        raise ShapeMismatch(f"pred {val(pred).shape} vs target {t.shape}")
    if t.size == 0:
        raise EmptyBatch("empty batch in l1_loss")
    return ad.mean(ad.abs_(ad.sub(pred, t)))


def sequence_l1_loss(pred_seq, target_seq):
    """Mean L1 over all steps of a sequence (lists of per-step Vars/arrays)."""
    total = None
    for y, t in zip(pred_seq, target_seq):
        term = l1_loss(y, t)
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, 1.0 / len(pred_seq))


def class_weights_from_counts(counts):
    """Weights inversely proportional to class sizes, normalized to mean 1."""
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts <= 0):
        counts = np.maximum(counts, 1.0)  # absent classes get the smallest-class weight
    w = 1.0 / counts
    return w / w.mean()


def weighted_cross_entropy(logits, labels, class_weights=None):
    """Mean of -w_c * log softmax at the true class.

    logits: (..., C) Var or array; labels: integer array matching the leading
    shape; class_weights: length-C (defaults to ones).
    """
    lv = val(logits)
    labels = np.asarray(labels)
    if lv.shape[:-1] != labels.shape:
        raise ShapeMismatch(f"logits {lv.shape} vs labels {labels.shape}")
    if labels.size == 0:
        raise EmptyBatch("empty batch in weighted_cross_entropy")
    n_class = lv.shape[-1]
    if class_weights is None:
        class_weights = np.ones(n_class)
    class_weights = np.asarray(class_weights, dtype=np.float64)
    if class_weights.shape != (n_class,):
        raise ShapeMismatch("class_weights length must match the class dimension")

    flat_labels = labels.reshape(-1)
    w = class_weights[flat_labels]  # per-row weight
    rows = labels.size

    def value_of(l):
        ls = l.reshape(rows, n_class)
        shifted = ls - ls.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1)) + ls.max(axis=1)
        nll = logz - ls[np.arange(rows), flat_labels]
        return float(np.mean(w * nll))

    if not isinstance(logits, ad.Var):
        return value_of(lv)

    out = value_of(lv)
    ls = lv.reshape(rows, n_class)
    shifted = ls - ls.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    sm = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        grad = sm.copy()
        grad[np.arange(rows), flat_labels] -= 1.0
        grad *= (w / rows)[:, None]
        return (float(g) * grad.reshape(lv.shape),)

    return ad._record(logits.tape, np.float64(out), (logits,), vjp)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class Metrics:
    rrmse: float = None
    accuracy: float = None
    f1: float = None
    precision: float = None
    recall: float = None

    def to_dict(self):
        return {k: v for k, v in self.__dict__.items() if v is not None}


def rrmse(pred_seq, target_seq):
    """Mean over samples and steps of ||pred - target|| / ||target||.

    Accepts (T, n), (T, n, F), (S, T, n, F), etc. The norm is taken over the
    trailing node/feature axes, the mean over everything else.
    """
    p = np.asarray(val(pred_seq), dtype=np.float64)
    t = np.asarray(val(target_seq), dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeMismatch(f"pred {p.shape} vs target {t.shape}")
    if t.ndim == 1:
        p, t = p[None, :], t[None, :]
    # collapse trailing node(/feature) axes into one vector per (sample, step)
    if p.ndim == 2:
        lead, size = p.shape[:1], p.shape[-1]
    else:
        lead, size = p.shape[:-2], p.shape[-2] * p.shape[-1]
    pv = p.reshape(int(np.prod(lead)), size)
    tv = t.reshape(int(np.prod(lead)), size)
    denom = np.linalg.norm(tv, axis=1)
    if np.any(denom == 0):
        raise ZeroTarget("target vector is zero for some sample/step")
    return float(np.mean(np.linalg.norm(pv - tv, axis=1) / denom))


def binary_f1(pred_labels, true_labels) -> Metrics:
    """F1/precision/recall with the infected (1) class positive; 0/0 -> 0."""
    p = np.asarray(pred_labels).reshape(-1)
    t = np.asarray(true_labels).reshape(-1)
    if p.shape != t.shape:
        raise ShapeMismatch("label arrays differ in size")
    tp = int(np.sum((p == 1) & (t == 1)))
    fp = int(np.sum((p == 1) & (t == 0)))
    fn = int(np.sum((p == 0) & (t == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = float(np.mean(p == t)) if p.size else 0.0
    return Metrics(accuracy=accuracy, f1=f1, precision=precision, recall=recall)


# ---------------------------------------------------------------------------
# ADAM


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params, grads):
    """Standard bias-corrected ADAM update, applied in place to the arrays.

    params/grads: dicts name -> ndarray with matching shapes.
    """
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} vs param {p.shape} at {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 10
    batch_size: int = 100
    loss: str = "l1"  # "l1" | "cross_entropy"
    seed: int = 0
    class_weights: np.ndarray = None
    clip_norm: float = None  # optional max gradient norm; off by default


def _forward_loss(model, s, x_batch, target, cfg, params):
    """x_batch: (B, T, n, F) -> per-step (B, n, F) slices; loss over the batch."""
    x_steps = np.swapaxes(x_batch, 0, 1)  # (T, B, n, F)
    if isinstance(model, RnnBaseline):
        flat = x_steps.reshape(x_steps.shape[0], x_steps.shape[1], -1)
        y_seq = rnn_forward(model, flat, params=params)
    elif isinstance(model, OutputMap):
        # snapshot GNN: each step mapped independently
        y_seq = [apply_output_map(model, s, x_steps[t], params=params)
                 for t in range(x_steps.shape[0])]
    else:
        y_seq, _, _ = grnn_forward(model, s, x_steps, params=params)
    if cfg.loss == "l1":
        t_steps = np.swapaxes(np.asarray(target), 0, 1)
        if isinstance(model, RnnBaseline):
            t_steps = t_steps.reshape(t_steps.shape[0], t_steps.shape[1], -1)
        return sequence_l1_loss(y_seq, [t_steps[t] for t in range(len(t_steps))])
    if cfg.loss == "cross_entropy":
        # per-node classification read off the last step
        logits = y_seq[-1]
        return weighted_cross_entropy(logits, target, cfg.class_weights)
    raise ValueError(f"unknown loss {cfg.loss!r}")


def train(model, dataset_inputs, dataset_targets, cfg: TrainConfig, s=None):
    """Mini-batch BPTT; returns (model, trace) with one (step, epoch, loss) row per step.

    dataset_inputs: (S, T, n, F); dataset_targets: (S, T, n, F) for sequence
    regression or (S, ...) labels for classification.  The model's parameter
    arrays are updated in place.
    """
    inputs = np.asarray(dataset_inputs, dtype=np.float64)
    if inputs.shape[0] == 0:
        raise EmptyBatch("empty training set")
    targets = np.asarray(dataset_targets)
    names = [name for name, _ in model.parameters()]
    arrays = dict(model.parameters())
    state = AdamState(lr=cfg.lr)
    rng = make_rng(cfg.seed)
    trace = []
    step = 0
    n_samples = inputs.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_samples)
        for lo in range(0, n_samples, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            tape = Tape()
            params = {name: tape.leaf(arrays[name]) for name in names}
            loss = _forward_loss(model, s, inputs[idx], targets[idx], cfg, params)
            loss_val = float(val(loss))
            if not np.isfinite(loss_val):
                raise Divergence(f"loss became {loss_val} at step {step} (epoch {epoch})")
            grads_all = backward(tape, loss)
            grads = {name: grads_all.wrt(params[name]) for name in names}
            if cfg.clip_norm is not None:
                total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if total > cfg.clip_norm:
                    factor = cfg.clip_norm / total
                    grads = {k: g * factor for k, g in grads.items()}
            adam_step(state, arrays, grads)
            trace.append((step, epoch, loss_val))
            step += 1
    return model, trace


def predict(model, s, inputs):
    """Forward a whole (S, T, n, F) split in one batch; returns same-shape predictions."""
    x = np.asarray(inputs, dtype=np.float64)
    x_steps = np.swapaxes(x, 0, 1)
    if isinstance(model, RnnBaseline):
        flat = x_steps.reshape(x_steps.shape[0], x_steps.shape[1], -1)
        y = rnn_forward(model, flat)
        return np.swapaxes(y, 0, 1).reshape(x.shape[:-1] + (-1,))
    if isinstance(model, OutputMap):
        y = np.stack([apply_output_map(model, s, x_steps[t]) for t in range(x_steps.shape[0])])
        return np.swapaxes(y, 0, 1)
    y_seq, _, _ = grnn_forward(model, s, x_steps)
    return np.swapaxes(y_seq, 0, 1)


def write_trace_csv(path, trace, metric_names=(), metric_rows=None):
    """Loss trace as CSV: step, epoch, loss[, metrics...]."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "epoch", "loss", *metric_names])
        for i, row in enumerate(trace):
            extra = list(metric_rows[i]) if metric_rows else []
            writer.writerow([row[0], row[1], repr(row[2]), *extra])
