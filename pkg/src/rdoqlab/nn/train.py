"""Adam training loop with validation-RD checkpoint selection.

Accuracy is a misleading metric here because of the heavy class
imbalance, so checkpoints are ranked by the mean RD cost the refined
quantizer actually achieves on the validation split.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..codec import QuantParams
from ..search import batch_rd_cost
from .models import (ModelParams, SensitivityMap, adjustment_loss,
                     network_backward, network_logits, one_hot_deltas,
                     quantize_with_network)


@dataclass(frozen=True)
class Hyperparams:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-6
    batch_size: int = 256
    epochs: int = 50
    patience: int = 10
    seed: int = 0
    use_sensitivity_map: bool = False
    zero_mask_loss: bool = False
    class_weights: tuple[float, ...] | None = None


@dataclass
class TrainingSplit:
    """Blocks of one (n, qp) dataset split, as parallel arrays."""

    x: np.ndarray      # (S, n, n) float, signed scaled TCs
    q_sq: np.ndarray   # (S, n, n) int levels
    q_ref: np.ndarray  # (S, n, n) int refined levels

    def __len__(self):
        return self.x.shape[0]

    def deltas(self) -> np.ndarray:
        return np.abs(self.q_ref) - np.abs(self.q_sq)


class Adam:
    """Standard Adam with optional L2 penalty added to the gradients."""

    def __init__(self, params: dict, hyper: Hyperparams):
        self.h = hyper
        self.m = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
        self.v = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        h = self.h
        self.t += 1
        bc1 = 1.0 - h.beta1 ** self.t
        bc2 = 1.0 - h.beta2 ** self.t
        for k, p in params.items():
            g = grads[k].astype(np.float64)
            if h.weight_decay:
                g = g + 2.0 * h.weight_decay * p.astype(np.float64)
            self.m[k] = h.beta1 * self.m[k] + (1 - h.beta1) * g
            self.v[k] = h.beta2 * self.v[k] + (1 - h.beta2) * g * g
            upd = h.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + 1e-8)
            params[k] = (p.astype(np.float64) - upd).astype(p.dtype)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_accuracy: float
    val_rd: float
    best_rd: float


@dataclass
class TrainResult:
    model: ModelParams
    log: list[EpochLog] = field(default_factory=list)


def _prepare(split: TrainingSplit, model: ModelParams):
    x_mags = np.abs(split.x).astype(np.float64)
    q_mags = np.abs(split.q_sq).astype(np.float64)
    x2 = model.stats.apply(x_mags, q_mags).astype(np.float32)
    labels = split.deltas().astype(np.int64)
    zero = q_mags == 0
    return x2, labels, zero


def evaluate_model(model: ModelParams, split: TrainingSplit,
                   quant: QuantParams, zero_mask: bool = True):
    """(classification accuracy %, mean validation RD cost)."""
    x = split.x.astype(np.float64)
    labels = split.deltas()
    q_net = quantize_with_network(x, model, quant, zero_mask=zero_mask)
    pred = np.abs(q_net) - np.abs(np.asarray(split.q_sq))
    acc = 100.0 * float(np.mean(pred == labels))
    rd = float(np.mean(batch_rd_cost(x, q_net, quant)))
    return acc, rd


def train(train_split: TrainingSplit, val_split: TrainingSplit,
          model: ModelParams, quant: QuantParams,
          hyper: Hyperparams = Hyperparams(),
          sens_map: SensitivityMap | None = None,
          log_fn=None) -> TrainResult:
    """Train a model in place-copy semantics: the returned model holds
    the parameters with the best validation RD seen at any epoch end."""
    if len(train_split) == 0:
        raise ValueError("empty training split")
    model = model.copy()
    cs = model.class_set
    if hyper.use_sensitivity_map and sens_map is None:
        raise ValueError("sensitivity map requested but not provided")
    smap = sens_map if hyper.use_sensitivity_map else None
    cw = None
    if hyper.class_weights is not None:
        if len(hyper.class_weights) != cs.k:
            raise ValueError("class_weights length must equal k")
        cw = np.asarray(hyper.class_weights, dtype=np.float64)

    x2, labels, zero = _prepare(train_split, model)
    s = len(train_split)
    rng = np.random.default_rng(hyper.seed)
    opt = Adam(model.params, hyper)
    result = TrainResult(model=model)
    n2 = model.n * model.n

    best_rd = np.inf
    best_params = None
    best_state = None
    stale = 0
    for epoch in range(hyper.epochs):
        order = rng.permutation(s)
        total_loss, nbatches = 0.0, 0
        for lo in range(0, s, hyper.batch_size):
            idx = order[lo:lo + hyper.batch_size]
            xb = x2[idx]
            lb = labels[idx]
            oh = (one_hot_deltas(lb, cs).astype(xb.dtype)
                  if model.arch == "arm" else None)
            logits, caches = network_logits(model, xb, oh, train=True)
            mask = None
            if hyper.zero_mask_loss:
                mask = ~zero[idx].reshape(len(idx), n2)
            wmask = mask
            if cw is not None:
                wrow = cw[cs.index_of(lb.reshape(len(idx), n2))]
                wmask = wrow if mask is None else wrow * mask
            loss, dlogits = adjustment_loss(
                logits, lb, cs, smap,
                wmask if wmask is not None else None)
            grads = network_backward(model, dlogits.astype(logits.dtype), caches)
            opt.step(model.params, grads)
            total_loss += loss
            nbatches += 1

        acc, rd = evaluate_model(model, val_split, quant)
        if rd < best_rd:
            best_rd = rd
            best_params = {k: v.copy() for k, v in model.params.items()}
            best_state = {k: v.copy() for k, v in model.state.items()}
            stale = 0
        else:
            stale += 1
        entry = EpochLog(epoch=epoch, train_loss=total_loss / max(nbatches, 1),
                         val_accuracy=acc, val_rd=rd, best_rd=best_rd)
        result.log.append(entry)
        if log_fn is not None:
            log_fn(f"epoch {epoch:3d}  loss {entry.train_loss:.6f}  "
                   f"val-acc {acc:7.3f}%  val-rd {rd:.4f}  best {best_rd:.4f}")
        if stale >= hyper.patience:
            break

    if best_params is not None:
        model.params = best_params
        model.state = best_state
    return result
