"""Autoregressive decoding: greedy and seeded top-k sampling."""

from dataclasses import dataclass

import numpy as np

from ..exceptions import ContractError
from ..numerics.linalg import softmax
from ..numerics.rng import stream
from .model import as_tensors, forward


@dataclass
class Generation:
    tokens: np.ndarray
    stopped: bool
    truncated: bool


def generate(params, cfg, prompt, max_new, strategy="greedy", k=1, temperature=1.0, seed=0,
             stop=(), allowed=None, cond=None):
    """Continue ``prompt`` by up to ``max_new`` tokens.

    ``stop`` tokens end generation (and are not returned). ``allowed`` is an
    optional ``(lo, hi)`` ID range that candidate tokens are restricted to.
    ``cond`` holds per-position condition IDs for the whole
    ``prompt + continuation`` span. Ties always go to the lowest token ID,
    so ``top-k`` with ``k=1`` is identical to greedy.
    """
    prompt = [int(t) for t in prompt]
    if not prompt:
        raise ContractError("generation needs a non-empty prompt")
    if len(prompt) + max_new > cfg.max_seq + 1:
        raise ContractError(f"prompt {len(prompt)} + max_new {max_new} exceeds max_seq {cfg.max_seq}")
    if strategy not in ("greedy", "top-k"):
        raise ContractError(f"unknown strategy {strategy!r}")
    if strategy == "top-k" and (k < 1 or temperature <= 0):
        raise ContractError("top-k needs k >= 1 and temperature > 0")
    rng = stream(seed, "sample") if strategy == "top-k" else None
    stop = set(int(s) for s in stop)
    p = as_tensors(params)
    seq = list(prompt)
    out = []
    for _ in range(max_new):
        c = None if cond is None else np.asarray(cond[:len(seq)])
        logits = forward(p, cfg, np.array(seq), cond=c).data[-1].copy()
        if allowed is not None:
            lo, hi = allowed
            logits[:lo] = -np.inf
            logits[hi:] = -np.inf
        if strategy == "greedy" or k == 1:
            tok = int(np.argmax(logits))
        else:
            order = np.argsort(-logits, kind="stable")[:k]
            probs = softmax(logits[order] / temperature)
            tok = int(order[rng.choice(len(order), p=probs)])
        if tok in stop:
            return Generation(np.array(out, dtype=np.int64), True, False)
        out.append(tok)
        seq.append(tok)
    return Generation(np.array(out, dtype=np.int64), False, bool(stop) and max_new > 0)
