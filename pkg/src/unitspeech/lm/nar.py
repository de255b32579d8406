"""Non-autoregressive transformer that fills codec levels 2..Q in parallel.

The input is the target frames followed by the source acoustic prompt::

    target frame a:  sum_{l<q} tgt_emb.q{l}[tok[a, l]] + unit_emb[unit[a]]
                     + level_emb[q] + seg_emb[1] + pos_emb[a]
    prompt frame j:  sum_{l<=Q} prompt_emb.q{l}[prompt[j, l]] + seg_emb[0] + pos_emb[j]

Attention is bidirectional with key padding. Level ``q`` logits come from
``head.q{q}`` applied to the target frames only, so they depend on levels
``1..q-1`` of the target and never on levels ``>= q``.
"""

from dataclasses import asdict, dataclass

import numpy as np

from ..exceptions import ContractError, ShapeError
from ..numerics import autodiff as ad
from ..numerics.rng import stream, truncated_normal
from .model import _check_ids, as_tensors, block, init_block


@dataclass(frozen=True)
class NarConfig:
    layers: int = 4
    heads: int = 4
    model_dim: int = 256
    ffn_dim: int = 1024
    max_seq: int = 512
    Q: int = 6
    codebook_size: int = 1024
    n_units: int = 500
    dropout: float = 0.0

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ContractError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.Q < 2:
            raise ContractError("a NAR model needs Q >= 2")

    def to_dict(self):
        return asdict(self)


def init_nar_params(cfg, seed=0):
    rng = stream(seed, "nar-init")
    d, c = cfg.model_dim, cfg.codebook_size
    p = {"pos_emb": truncated_normal(rng, (cfg.max_seq, d)),
         "unit_emb": truncated_normal(rng, (cfg.n_units, d)),
         "level_emb": truncated_normal(rng, (cfg.Q + 1, d)),
         "seg_emb": truncated_normal(rng, (2, d))}
    for level in range(1, cfg.Q + 1):
        p[f"prompt_emb.q{level}"] = truncated_normal(rng, (c, d))
    for level in range(1, cfg.Q):
        p[f"tgt_emb.q{level}"] = truncated_normal(rng, (c, d))
    for i in range(cfg.layers):
        init_block(p, f"h{i}", d, cfg.ffn_dim, rng)
    p["ln_f.g"] = np.ones(d)
    p["ln_f.b"] = np.zeros(d)
    for level in range(2, cfg.Q + 1):
        p[f"head.q{level}.w"] = truncated_normal(rng, (d, c))
        p[f"head.q{level}.b"] = np.zeros(c)
    return p


def _batch(x, ndim, name):
    x = np.asarray(x, dtype=np.int64)
    if x.ndim == ndim - 1:
        x = x[None]
    if x.ndim != ndim:
        raise ShapeError(f"{name} has shape {x.shape}")
    return x


def nar_forward(params, cfg, units, partial, prompt, level, tgt_len=None, prompt_len=None,
                positions=None, rng=None):
    """Level-``level`` logits ``(B, T_a, codebook_size)`` for every target frame.

    ``units`` is ``(B, T_a)`` frame-aligned semantic units, ``partial`` is
    ``(B, T_a, >= level-1)`` target tokens (only the first ``level - 1``
    columns are read) and ``prompt`` is ``(B, P, Q)`` source codec tokens.
    ``tgt_len``/``prompt_len`` give valid lengths for padded batches.
    ``positions`` optionally overrides the target-frame position indices.
    Unbatched inputs give ``(T_a, codebook_size)``.
    """
    if not 2 <= level <= cfg.Q:
        raise ContractError(f"level {level} outside [2, {cfg.Q}]")
    single = np.asarray(units).ndim == 1
    units = _batch(units, 2, "units")
    partial = _batch(partial, 3, "partial")
    prompt = _batch(prompt, 3, "prompt")
    b, t = units.shape
    if partial.shape[:2] != (b, t) or partial.shape[2] < level - 1:
        raise ShapeError(f"partial tokens {partial.shape} do not cover levels 1..{level - 1} "
                         f"of {t} frames")
    if prompt.shape[0] != b or prompt.shape[2] != cfg.Q:
        raise ShapeError(f"prompt {prompt.shape} is not (B, P, {cfg.Q})")
    pl = prompt.shape[1]
    if t == 0:
        raise ContractError("nar_forward needs at least one target frame")
    if max(t, pl) > cfg.max_seq:
        raise ContractError(f"{t} target / {pl} prompt frames exceed max_seq {cfg.max_seq}")
    _check_ids(units, cfg.n_units, "unit")
    _check_ids(partial[:, :, :level - 1], cfg.codebook_size, "token")
    _check_ids(prompt, cfg.codebook_size, "prompt token")
    p = as_tensors(params)
    pos = np.arange(t) if positions is None else np.asarray(positions, dtype=np.int64)
    x = ad.add(ad.embedding(p["unit_emb"], units), ad.embedding(p["pos_emb"], pos))
    for lv in range(1, level):
        x = ad.add(x, ad.embedding(p[f"tgt_emb.q{lv}"], partial[:, :, lv - 1]))
    x = ad.add(x, ad.embedding(p["level_emb"], np.array([level])))
    x = ad.add(x, ad.embedding(p["seg_emb"], np.array([1])))
    parts = [x]
    if pl:
        y = ad.embedding(p["pos_emb"], np.arange(pl))
        for lv in range(1, cfg.Q + 1):
            y = ad.add(y, ad.embedding(p[f"prompt_emb.q{lv}"], prompt[:, :, lv - 1]))
        y = ad.add(y, ad.embedding(p["seg_emb"], np.array([0])))
        parts.append(y)
    h = ad.concat(parts, axis=1) if len(parts) > 1 else x
    tl = np.full(b, t) if tgt_len is None else np.asarray(tgt_len)
    plen = np.full(b, pl) if prompt_len is None else np.asarray(prompt_len)
    mask = np.concatenate([np.arange(t)[None] < tl[:, None], np.arange(pl)[None] < plen[:, None]], axis=1)
    rate = cfg.dropout if rng is not None else 0.0
    h = ad.dropout(h, rate, rng)
    for i in range(cfg.layers):
        h = block(p, f"h{i}", h, cfg.heads, False, mask, rate, rng)
    if pl:
        h = ad.take_rows(h, np.arange(t))
    h = ad.layer_norm(h, p["ln_f.g"], p["ln_f.b"])
    logits = ad.linear(h, p[f"head.q{level}.w"], p[f"head.q{level}.b"])
    return ad.reshape(logits, (t, cfg.codebook_size)) if single else logits
