"""Byte-level BPE vocabulary with atomic semantic-unit tokens.

Token ID layout (dense from 0)::

    [0, 256)                  raw bytes
    [256, 256 + M)            learned merges, in training order
    [U_b, U_b + K_b)          one block per unit extractor b, contiguous
    last len(SPECIALS) IDs    <pad> <bos> <eos> <sep>

Unit markup in strings is ``<u:ID>`` for extractor 0 and ``<uB:ID>`` for
extractor ``B`` (no leading zeros anywhere); each occurrence encodes to
exactly one token. Any other text starting with ``<u<digits>:`` is rejected
as malformed.
"""

import re
from collections import Counter

import numpy as np

from ..exceptions import ContractError

SPECIALS = ("<pad>", "<bos>", "<eos>", "<sep>")
VOCAB_MAGIC = "# vocab v1"

_PRETOKEN = re.compile(r" ?[^\s]+|\s+")
_MARKUP = re.compile(r"<u([1-9]\d*)?:(0|[1-9]\d*)>")
_MARKUP_START = re.compile(r"<u\d*:")


class Vocabulary:
    def __init__(self, merges=(), unit_counts=(), specials=SPECIALS):
        self.merges = [(int(a), int(b)) for a, b in merges]
        self.unit_counts = [int(k) for k in unit_counts]
        self.specials = tuple(specials)
        pieces = [bytes([i]) for i in range(256)]
        for n, (a, b) in enumerate(self.merges):
            if not (0 <= a < len(pieces) and 0 <= b < len(pieces)):
                raise ContractError(f"merge {n} refers to unknown token ({a}, {b})")
            pieces.append(pieces[a] + pieces[b])
        self._pieces = pieces
        self._lookup = {}
        for i, p in enumerate(pieces):
            self._lookup.setdefault(p, i)
        self._max_piece = max(len(p) for p in pieces)
        offsets, off = [], len(pieces)
        for k in self.unit_counts:
            if k < 1:
                raise ContractError(f"unit block size must be >= 1, got {k}")
            offsets.append(off)
            off += k
        self.unit_offsets = offsets
        self.special_base = off

    def __len__(self):
        return self.special_base + len(self.specials)

    @property
    def n_text(self):
        return len(self._pieces)

    def special(self, name):
        return self.special_base + self.specials.index(name)

    @property
    def pad(self):
        return self.special("<pad>")

    @property
    def bos(self):
        return self.special("<bos>")

    @property
    def eos(self):
        return self.special("<eos>")

    @property
    def sep(self):
        return self.special("<sep>")

    def unit_token(self, unit, block=0):
        if not 0 <= block < len(self.unit_counts):
            raise ContractError(f"no unit block {block} (have {len(self.unit_counts)})")
        if not 0 <= unit < self.unit_counts[block]:
            raise ContractError(f"unit {unit} outside [0, {self.unit_counts[block]}) for block {block}")
        return self.unit_offsets[block] + int(unit)

    def unit_of(self, token):
        """``(block, unit)`` for a unit token, else ``None``."""
        for b, (off, k) in enumerate(zip(self.unit_offsets, self.unit_counts)):
            if off <= token < off + k:
                return b, token - off
        return None

    def is_unit(self, token, block=None):
        hit = self.unit_of(int(token))
        return hit is not None and (block is None or hit[0] == block)

    def _encode_text(self, data, out):
        i, n = 0, len(data)
        while i < n:
            for L in range(min(self._max_piece, n - i), 0, -1):
                tok = self._lookup.get(data[i:i + L])
                if tok is not None:
                    out.append(tok)
                    i += L
                    break

    def encode(self, s):
        """Token IDs for ``s``; unit markup becomes single unit tokens."""
        text = s
        out = []
        pos = 0
        byte_pos = 0
        for m in _MARKUP_START.finditer(text):
            if m.start() < pos:
                continue
            full = _MARKUP.match(text, m.start())
            chunk = text[pos:m.start()]
            offset = byte_pos + len(chunk.encode("utf-8"))
            if full is None:
                raise ContractError(f"malformed unit markup at byte offset {offset}")
            block = int(full.group(1)) if full.group(1) else 0
            unit = int(full.group(2))
            if block >= len(self.unit_counts) or unit >= self.unit_counts[block]:
                raise ContractError(f"unit markup {full.group(0)} at byte offset {offset} "
                                    f"is outside the vocabulary")
            self._encode_text(chunk.encode("utf-8"), out)
            out.append(self.unit_offsets[block] + unit)
            byte_pos = offset + len(full.group(0))
            pos = full.end()
        self._encode_text(text[pos:].encode("utf-8"), out)
        return np.array(out, dtype=np.int64)

    def decode(self, ids, specials=False):
        """Inverse of :meth:`encode`. Special tokens are dropped unless ``specials``."""
        parts = []
        buf = bytearray()
        for t in ids:
            t = int(t)
            if 0 <= t < len(self._pieces):
                buf += self._pieces[t]
                continue
            if buf:
                parts.append(buf.decode("utf-8", errors="replace"))
                buf = bytearray()
            hit = self.unit_of(t)
            if hit is not None:
                b, u = hit
                parts.append(f"<u:{u}>" if b == 0 else f"<u{b}:{u}>")
            elif self.special_base <= t < len(self):
                if specials:
                    parts.append(self.specials[t - self.special_base])
            else:
                raise ContractError(f"token {t} outside vocabulary of size {len(self)}")
        if buf:
            parts.append(buf.decode("utf-8", errors="replace"))
        return "".join(parts)

    def save(self, path):
        lines = [VOCAB_MAGIC,
                 "specials " + " ".join(self.specials),
                 "units " + " ".join(str(k) for k in self.unit_counts),
                 f"merges {len(self.merges)}"]
        lines += [f"{a} {b}" for a, b in self.merges]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        if not lines or lines[0] != VOCAB_MAGIC:
            raise ContractError(f"{path}: not a vocabulary file (expected {VOCAB_MAGIC!r})")
        try:
            specials = [x for x in lines[1].split(" ")[1:] if x]
            units = [int(x) for x in lines[2].split(" ")[1:] if x]
            m = int(lines[3].split(" ")[1])
            merges = [tuple(int(x) for x in ln.split(" ")) for ln in lines[4:4 + m]]
        except (IndexError, ValueError) as exc:
            raise ContractError(f"{path}: malformed vocabulary file ({exc})") from exc
        if len(merges) != m:
            raise ContractError(f"{path}: expected {m} merges, found {len(merges)}")
        return cls(merges, units, specials)


def _strip_markup(s):
    return [seg for seg in _MARKUP.split(s)[::3] if seg]


def build_vocab(texts, unit_counts, merges, seed=0):
    """Learn ``merges`` byte-pair merges on ``texts`` (unit markup excluded).

    Pairs are counted inside whitespace-delimited pretokens. Ties are broken
    by the lowest ``(left, right)`` ID pair, so the result does not depend
    on ``seed``; the argument is kept for interface uniformity.
    """
    if merges < 0:
        raise ContractError(f"merges must be >= 0, got {merges}")
    words = Counter()
    for s in texts:
        for seg in _strip_markup(s):
            for w in _PRETOKEN.findall(seg):
                words[tuple(w.encode("utf-8"))] += 1
    words = [(list(w), c) for w, c in sorted(words.items())]
    learned = []
    next_id = 256
    while len(learned) < merges:
        pairs = Counter()
        for w, c in words:
            for pair in zip(w, w[1:]):
                pairs[pair] += c
        if not pairs:
            break
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        learned.append(best)
        for w, _ in words:
            i = 0
            while i < len(w) - 1:
                if w[i] == best[0] and w[i + 1] == best[1]:
                    w[i:i + 2] = [next_id]
                i += 1
        next_id += 1
    return Vocabulary(learned, unit_counts)
