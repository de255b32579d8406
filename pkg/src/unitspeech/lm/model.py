"""Pre-norm decoder-only transformer over the tape autodiff.

Parameters live in a flat ``{name: ndarray}`` dict so they serialize
directly to checkpoints and feed :func:`~unitspeech.numerics.adam_step`::

    tok_emb (V, d)   pos_emb (max_seq, d)   [cond_emb (n_cond, d)]
    h{i}.ln1.g/b  h{i}.attn.{q,k,v,out}.w/b  h{i}.ln2.g/b
    h{i}.mlp.fc.w/b  h{i}.mlp.proj.w/b
    ln_f.g/b  head.w (d, V)  head.b
"""

from dataclasses import asdict, dataclass

import numpy as np

from ..exceptions import ContractError, ShapeError
from ..numerics import autodiff as ad
from ..numerics.autodiff import Tensor
from ..numerics.rng import stream, truncated_normal


@dataclass(frozen=True)
class LmConfig:
    layers: int = 4
    heads: int = 4
    model_dim: int = 256
    ffn_dim: int = 1024
    max_seq: int = 512
    vocab_size: int = 512
    dropout: float = 0.0
    n_cond: int = 0

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ContractError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if min(self.layers, self.heads, self.model_dim, self.ffn_dim, self.max_seq, self.vocab_size) < 1:
            raise ContractError("all LmConfig sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_dict(self):
        return asdict(self)


def init_block(params, prefix, d, f, rng):
    params[f"{prefix}.ln1.g"] = np.ones(d)
    params[f"{prefix}.ln1.b"] = np.zeros(d)
    for name in ("q", "k", "v", "out"):
        params[f"{prefix}.attn.{name}.w"] = truncated_normal(rng, (d, d))
        params[f"{prefix}.attn.{name}.b"] = np.zeros(d)
    params[f"{prefix}.ln2.g"] = np.ones(d)
    params[f"{prefix}.ln2.b"] = np.zeros(d)
    params[f"{prefix}.mlp.fc.w"] = truncated_normal(rng, (d, f))
    params[f"{prefix}.mlp.fc.b"] = np.zeros(f)
    params[f"{prefix}.mlp.proj.w"] = truncated_normal(rng, (f, d))
    params[f"{prefix}.mlp.proj.b"] = np.zeros(d)


def init_params(cfg, seed=0):
    """Truncated-normal (std 0.02) weights, zero biases, unit layer-norm gains."""
    rng = stream(seed, "lm-init")
    d = cfg.model_dim
    p = {"tok_emb": truncated_normal(rng, (cfg.vocab_size, d)),
         "pos_emb": truncated_normal(rng, (cfg.max_seq, d))}
    if cfg.n_cond:
        p["cond_emb"] = truncated_normal(rng, (cfg.n_cond, d))
    for i in range(cfg.layers):
        init_block(p, f"h{i}", d, cfg.ffn_dim, rng)
    p["ln_f.g"] = np.ones(d)
    p["ln_f.b"] = np.zeros(d)
    p["head.w"] = truncated_normal(rng, (d, cfg.vocab_size))
    p["head.b"] = np.zeros(cfg.vocab_size)
    return p


def as_tensors(params, requires_grad=False):
    return {k: v if isinstance(v, Tensor) else Tensor(v, requires_grad) for k, v in params.items()}


def block(p, prefix, x, heads, causal, key_mask=None, rate=0.0, rng=None):
    """One pre-norm block on ``x`` of shape ``(B, T, d)``."""
    b, t, d = x.shape
    dh = d // heads
    h = ad.layer_norm(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])

    def split(name):
        y = ad.linear(h, p[f"{prefix}.attn.{name}.w"], p[f"{prefix}.attn.{name}.b"])
        return ad.transpose(ad.reshape(y, (b, t, heads, dh)), (0, 2, 1, 3))

    a = ad.attention(split("q"), split("k"), split("v"), causal=causal, key_mask=key_mask)
    a = ad.reshape(ad.transpose(a, (0, 2, 1, 3)), (b, t, d))
    a = ad.linear(a, p[f"{prefix}.attn.out.w"], p[f"{prefix}.attn.out.b"])
    x = ad.add(x, ad.dropout(a, rate, rng))
    h = ad.layer_norm(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    h = ad.gelu(ad.linear(h, p[f"{prefix}.mlp.fc.w"], p[f"{prefix}.mlp.fc.b"]))
    h = ad.linear(h, p[f"{prefix}.mlp.proj.w"], p[f"{prefix}.mlp.proj.b"])
    return ad.add(x, ad.dropout(h, rate, rng))


def _check_ids(ids, limit, what):
    if ids.size and (ids.min() < 0 or ids.max() >= limit):
        bad = np.argwhere((ids < 0) | (ids >= limit))[0]
        raise ContractError(f"{what} {ids[tuple(bad)]} at position {tuple(bad.tolist())} outside [0, {limit})")


def forward(params, cfg, tokens, cond=None, rng=None):
    """Causal logits ``(B, T, V)`` for token IDs ``(B, T)`` (or ``(T,)``, giving ``(T, V)``).

    ``cond`` holds optional per-position IDs into ``cond_emb`` added to the
    input embedding. ``rng`` enables dropout (training only).
    """
    p = as_tensors(params)
    ids = np.asarray(tokens, dtype=np.int64)
    single = ids.ndim == 1
    if single:
        ids = ids[None, :]
    if ids.ndim != 2:
        raise ShapeError(f"tokens must be (T,) or (B, T), got {ids.shape}")
    t = ids.shape[1]
    if t > cfg.max_seq:
        raise ContractError(f"sequence length {t} exceeds max_seq {cfg.max_seq}")
    if t == 0:
        raise ContractError("forward needs at least one token")
    _check_ids(ids, cfg.vocab_size, "token")
    x = ad.add(ad.embedding(p["tok_emb"], ids), ad.embedding(p["pos_emb"], np.arange(t)))
    if cond is not None:
        c = np.asarray(cond, dtype=np.int64).reshape(ids.shape)
        _check_ids(c, cfg.n_cond, "condition")
        x = ad.add(x, ad.embedding(p["cond_emb"], c))
    rate = cfg.dropout if rng is not None else 0.0
    x = ad.dropout(x, rate, rng)
    for i in range(cfg.layers):
        x = block(p, f"h{i}", x, cfg.heads, True, None, rate, rng)
    x = ad.layer_norm(x, p["ln_f.g"], p["ln_f.b"])
    logits = ad.linear(x, p["head.w"], p["head.b"])
    return ad.reshape(logits, (t, cfg.vocab_size)) if single else logits
