"""Corpus BLEU over token sequences, unit error rate and waveform SNR.

BLEU here is computed directly on unit (or text-token) sequences. It is a
"unit-BLEU", not an ASR-BLEU: no recogniser is involved.

BLEU definition used throughout:

* clipped n-gram matches and hypothesis n-gram totals are summed over the
  corpus for n = 1..4 (a single reference per hypothesis);
* ``p_n = matches_n / totals_n``; for n >= 2, when ``matches_n == 0`` the
  precision is add-one smoothed to ``(matches_n + 1) / (totals_n + 1)``;
  ``p_1 == 0`` gives BLEU 0;
* brevity penalty ``BP = 1`` if ``c > r`` else ``exp(1 - r / c)`` (0 when c = 0);
* ``BLEU = 100 * BP * exp(mean(log p_n))``.
"""

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ContractError

SNR_MAX = 999.0


@dataclass
class BleuReport:
    bleu: float
    precisions: list
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    matches: list = field(default_factory=list)
    totals: list = field(default_factory=list)
    kind: str = "unit-BLEU"


def _ngrams(seq, n):
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def corpus_bleu(hyps, refs, max_n=4):
    hyps = [list(h) for h in hyps]
    refs = [list(r) for r in refs]
    if len(hyps) != len(refs):
        raise ContractError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise ContractError("corpus_bleu needs a non-empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    c = r = 0
    for h, ref in zip(hyps, refs):
        c += len(h)
        r += len(ref)
        for n in range(1, max_n + 1):
            hc, rc = _ngrams(h, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(k, rc[g]) for g, k in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    precisions = []
    for n in range(max_n):
        if n > 0 and matches[n] == 0:
            precisions.append((matches[n] + 1) / (totals[n] + 1))
        else:
            precisions.append(matches[n] / totals[n] if totals[n] else 0.0)
    if c == 0:
        bp = 0.0
    else:
        bp = 1.0 if c > r else math.exp(1.0 - r / c)
    if min(precisions) <= 0.0 or bp == 0.0:
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / max_n)
    return BleuReport(min(score, 100.0), precisions, bp, c, r, matches, totals)


def edit_distance(a, b):
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def unit_error_rate(hyp, ref):
    """Levenshtein distance divided by ``len(ref)``; with an empty reference, ``len(hyp)``."""
    d = edit_distance(hyp, ref)
    n = len(list(ref))
    return float(d) if n == 0 else d / n


def snr(reference, test):
    """``10 log10(|ref|^2 / |ref - test|^2)`` in dB.

    ``test`` is trimmed or zero-padded to the reference length. An exact
    match returns :data:`SNR_MAX`.
    """
    ref = np.asarray(getattr(reference, "samples", reference), dtype=np.float64)
    tst = np.asarray(getattr(test, "samples", test), dtype=np.float64)
    if tst.size != ref.size:
        tst = np.pad(tst[: ref.size], (0, max(ref.size - tst.size, 0)))
    power = float(np.sum(ref ** 2))
    if power == 0.0:
        raise ContractError("SNR undefined for a zero-energy reference")
    noise = float(np.sum((ref - tst) ** 2))
    if noise == 0.0:
        return SNR_MAX
    return 10.0 * math.log10(power / noise)


def write_report(stem, report):
    """Write ``stem.txt`` (key = value lines) and ``stem.json``."""
    data = asdict(report) if hasattr(report, "__dataclass_fields__") else dict(report)
    lines = []
    for k, v in data.items():
        if isinstance(v, (list, tuple)):
            v = " ".join(f"{x:.6f}" if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, float):
            v = f"{v:.6f}"
        lines.append(f"{k} = {v}")
    with open(f"{stem}.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(f"{stem}.json", "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
