"""Seeded mini-batch training loop shared by every model in the package."""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..exceptions import ContractError, DivergenceError
from ..numerics import autodiff as ad
from ..numerics.autodiff import Tape, Tensor
from ..numerics.optim import AdamState, adam_step, clip_global_norm
from ..numerics.rng import stream
from .model import forward


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_size: int = 16
    lr: float = 3e-3
    warmup: int = 50
    min_lr_ratio: float = 0.1
    clip: float = 1.0
    weight_decay: float = 0.0
    beta2: float = 0.99

    def lr_at(self, step):
        """Linear warmup then cosine decay to ``lr * min_lr_ratio``."""
        if step < self.warmup:
            return self.lr * (step + 1) / self.warmup
        span = max(self.steps - self.warmup, 1)
        frac = min((step - self.warmup) / span, 1.0)
        return self.lr * (self.min_lr_ratio + (1 - self.min_lr_ratio) * 0.5 * (1 + math.cos(math.pi * frac)))

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    params: dict
    losses: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)


def fit_params(params, n_examples, batch_loss, hyper, seed=0, stage="lm", sample_weights=None,
               log=None):
    """Minimise ``batch_loss(tensors, indices, rng, step)`` with Adam.

    Each step draws ``batch_size`` example indices from a seeded stream
    (weighted by ``sample_weights`` when given) and takes one clipped Adam
    step. ``params`` is updated in place and returned in the result.
    """
    if n_examples < 1:
        raise ContractError(f"{stage}: training corpus is empty")
    picks = stream(seed, f"{stage}-batches")
    drop = stream(seed, f"{stage}-dropout")
    probs = None
    if sample_weights is not None:
        w = np.asarray(sample_weights, dtype=np.float64)
        probs = w / w.sum()
    state = AdamState.zeros_like(params)
    result = TrainResult(params)
    for step in range(hyper.steps):
        idx = picks.choice(n_examples, size=min(hyper.batch_size, n_examples),
                           replace=probs is not None or hyper.batch_size > n_examples, p=probs)
        tensors = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
        with Tape() as tape:
            loss = batch_loss(tensors, np.sort(idx), drop, step)
        value = float(loss.data)
        if not np.isfinite(value):
            raise DivergenceError(step, value, stage)
        tape.backward(loss)
        grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}
        result.grad_norms.append(clip_global_norm(grads, hyper.clip))
        adam_step(params, grads, state, hyper.lr_at(step), beta2=hyper.beta2,
                  weight_decay=hyper.weight_decay)
        result.losses.append(value)
        if log is not None and (step % 50 == 0 or step == hyper.steps - 1):
            log(f"{stage} step {step} loss {value:.4f}")
    return result


def pad_batch(seqs, pad):
    n = max(len(s) for s in seqs)
    out = np.full((len(seqs), n), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def lm_batch_loss(cfg, seqs, masks, pad, conds=None):
    """Closure: masked next-token loss over examples ``seqs[i]``.

    ``masks[i][t]`` is 1 where token ``t`` is a prediction target; the
    model sees ``seq[:-1]`` and is scored on ``seq[1:]``.
    """
    def loss(p, idx, rng, step):
        batch = pad_batch([seqs[i] for i in idx], pad)
        w = pad_batch([masks[i] for i in idx], 0).astype(np.float64)
        cond = None if conds is None else pad_batch([conds[i] for i in idx], 0)[:, :-1]
        logits = forward(p, cfg, batch[:, :-1], cond=cond, rng=rng if cfg.dropout else None)
        return ad.cross_entropy(logits, batch[:, 1:], w[:, 1:])
    return loss


def train_lm(params, cfg, seqs, masks, hyper, seed=0, pad=0, conds=None, sample_weights=None,
             stage="lm", log=None):
    """Train a causal LM on token sequences with per-token loss masks."""
    seqs = [np.asarray(s, dtype=np.int64) for s in seqs]
    masks = [np.asarray(m, dtype=np.float64) for m in masks]
    for i, (s, m) in enumerate(zip(seqs, masks)):
        if s.shape != m.shape:
            raise ContractError(f"{stage}: example {i} has {s.size} tokens but {m.size} mask entries")
        if s.size > cfg.max_seq + 1:
            raise ContractError(f"{stage}: example {i} has {s.size} tokens, max_seq is {cfg.max_seq}")
        if not m[1:].any():
            raise ContractError(f"{stage}: example {i} has no target tokens")
    if conds is not None:
        conds = [np.asarray(c, dtype=np.int64) for c in conds]
    return fit_params(params, len(seqs), lm_batch_loss(cfg, seqs, masks, pad, conds), hyper, seed,
                      stage, sample_weights, log)
