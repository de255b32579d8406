"""Synthetic bijective language pairs for desk-scale training.

A toy language has ``n_units`` phones. Each phone is a steady chord: a
subset (1 to 4 tones) of six tones at multiples of 400 Hz. A 400 Hz period
divides both the 20 ms feature frame at 16 kHz and the 300-sample codec
frame at 24 kHz, so every frame inside a phone is identical. A source
utterance is a random phone string with random durations; its translation
applies a fixed permutation ``f`` to every phone and a per-phone duration
rule. Texts are syllable transliterations, one syllable per phone.

Speakers are signed gains. Log-power features are exactly invariant to
polarity, so semantic units do not depend on the speaker, while codec
embeddings flip sign and carry the voice.
"""

import json
import zlib
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ..audio import Waveform
from ..exceptions import ContractError
from ..frontend import UnitSequence
from ..numerics.rng import stream
from .templates import ParallelRecord

TONES = tuple(400.0 * i for i in range(1, 7))
CHORDS = tuple(c for k in range(1, 5) for c in combinations(range(len(TONES)), k))
TONE_AMP = 0.15
_ONSETS = "b d f g h k l m n p r s t v z".split()
_VOWELS = "a e i o u".split()


@dataclass(frozen=True)
class ToyLanguageSpec:
    n_units: int = 50
    min_len: int = 3
    max_len: int = 8
    src_duration: tuple = (2, 4)
    tgt_duration: object = 2
    src_lang: str = "Chinese"
    tgt_lang: str = "English"
    written: bool = True
    gains: tuple = (1.0, -1.0)
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.n_units <= len(CHORDS):
            raise ContractError(f"n_units must be in [2, {len(CHORDS)}], got {self.n_units}")
        if not 1 <= self.min_len <= self.max_len:
            raise ContractError("need 1 <= min_len <= max_len")
        lo, hi = self.src_duration
        if not 1 <= lo <= hi:
            raise ContractError("source durations must satisfy 1 <= lo <= hi")

    @property
    def unit_map(self):
        return stream(self.seed, "toy-map").permutation(self.n_units)

    @property
    def tgt_durations(self):
        """Target duration of each target phone."""
        d = self.tgt_duration
        table = np.full(self.n_units, d, dtype=np.int64) if np.isscalar(d) else np.asarray(d, np.int64)
        if table.shape != (self.n_units,) or table.min() < 1:
            raise ContractError("tgt_duration must be a positive int or one per unit")
        return table

    def syllables(self, side):
        pool = [c + v for c in _ONSETS for v in _VOWELS]
        order = stream(self.seed, f"toy-syllables-{side}").permutation(len(pool))
        return [pool[i] for i in order[: self.n_units]]


def translate_units(spec, units):
    """The oracle ``f`` applied elementwise."""
    return spec.unit_map[np.asarray(units, dtype=np.int64)]


def transliterate(spec, units, side):
    syl = spec.syllables(side)
    return " ".join(syl[int(u)] for u in units)


def _phones(rng, spec):
    n = int(rng.integers(spec.min_len, spec.max_len + 1))
    out = [int(rng.integers(spec.n_units))]
    while len(out) < n:
        u = int(rng.integers(spec.n_units - 1))
        out.append(u if u < out[-1] else u + 1)
    return np.array(out, dtype=np.int64)


def _record(spec, rng, utt_id):
    src = _phones(rng, spec)
    lo, hi = spec.src_duration
    src_d = rng.integers(lo, hi + 1, size=src.size).astype(np.int64)
    tgt = translate_units(spec, src)
    tgt_d = spec.tgt_durations[tgt]
    speaker = int(rng.integers(len(spec.gains)))
    r = ParallelRecord(
        utt_id,
        src_lang=spec.src_lang,
        tgt_lang=spec.tgt_lang,
        src_unit=UnitSequence(spec.n_units, src, src_d, np.repeat(src, src_d)),
        tgt_unit=UnitSequence(spec.n_units, tgt, tgt_d, np.repeat(tgt, tgt_d)),
        meta={"speaker": speaker, "gain": float(spec.gains[speaker])},
    )
    if spec.written:
        r.src_text = transliterate(spec, src, "src")
        r.tgt_text = transliterate(spec, tgt, "tgt")
    return r


def gen_toy_pair(spec, n, seed=0, prefix="utt", exclude=()):
    """``n`` records with IDs ``{prefix}-00000``...; source strings in ``exclude`` are skipped."""
    rng = stream(seed, f"toy-{prefix}")
    seen = set(exclude)
    out = []
    while len(out) < n:
        r = _record(spec, rng, f"{prefix}-{len(out):05d}")
        key = tuple(r.src_unit.merged_units.tolist())
        if key in seen:
            continue
        seen.add(key)
        out.append(r)
    return out


def gen_toy_corpus(spec, n_train, n_test, seed=0):
    """Disjoint train/test splits: distinct IDs and distinct source phone strings."""
    train = gen_toy_pair(spec, n_train, seed, "train")
    used = {tuple(r.src_unit.merged_units.tolist()) for r in train}
    test = gen_toy_pair(spec, n_test, seed, "test", exclude=used)
    return train, test


def check_toy_records(spec, records):
    """Problems found when re-deriving every record from ``spec``; empty when consistent."""
    problems = []
    perm = spec.unit_map
    rule = spec.tgt_durations
    lo, hi = spec.src_duration
    for r in records:
        s, t = r.src_unit, r.tgt_unit
        if len(s) != len(t):
            problems.append(f"{r.utt_id}: length {len(s)} vs {len(t)}")
            continue
        for i, (a, b) in enumerate(zip(s.merged_units, t.merged_units)):
            if perm[a] != b:
                problems.append(f"{r.utt_id}: unit {i} maps {a} -> {b}, expected {perm[a]}")
            if t.durations[i] != rule[b]:
                problems.append(f"{r.utt_id}: target duration {i} is {t.durations[i]}, expected {rule[b]}")
            if not lo <= s.durations[i] <= hi:
                problems.append(f"{r.utt_id}: source duration {i} is {s.durations[i]}")
        if spec.written:
            if r.src_text != transliterate(spec, s.merged_units, "src"):
                problems.append(f"{r.utt_id}: source text mismatch")
            if r.tgt_text != transliterate(spec, t.merged_units, "tgt"):
                problems.append(f"{r.utt_id}: target text mismatch")
        elif r.src_text is not None or r.tgt_text is not None:
            problems.append(f"{r.utt_id}: unwritten spec but text present")
    return problems


def render_speech(units, durations, sample_rate, gain=1.0, seed=0, frame_ms=20, noise=0.0):
    """Chord-per-phone waveform with phone boundaries on ``frame_ms`` frame edges.

    Phase is continuous in absolute time. ``noise`` adds seeded white noise
    of that standard deviation (off by default).
    """
    hop = sample_rate * frame_ms // 1000
    frames = np.repeat(np.asarray(units, dtype=np.int64), np.asarray(durations, dtype=np.int64))
    n = frames.size * hop
    t = np.arange(n) / sample_rate
    mask = np.zeros((len(CHORDS), len(TONES)))
    for i, chord in enumerate(CHORDS):
        mask[i, list(chord)] = 1.0
    x = np.zeros(n)
    active = mask[np.repeat(frames, hop)]
    for j, f in enumerate(TONES):
        x += active[:, j] * np.sin(2 * np.pi * f * t)
    x *= TONE_AMP * gain
    if noise:
        x += noise * stream(seed, f"toy-noise-{sample_rate}").standard_normal(n)
    return Waveform(sample_rate, np.clip(x, -1.0, 1.0))


def _noise_seed(utt_id, side):
    return zlib.crc32(f"{utt_id}/{side}".encode())


def render_record(r, side, sample_rate):
    """Waveform for the source or target side of a toy record."""
    u = r.src_unit if side == "src" else r.tgt_unit
    return render_speech(u.merged_units, u.durations, sample_rate, r.meta.get("gain", 1.0),
                         _noise_seed(r.utt_id, side))


def write_records(path, records):
    """Toy records as JSON lines (units, durations, texts, speaker)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            row = {"id": r.utt_id, "src_lang": r.src_lang, "tgt_lang": r.tgt_lang,
                   "K": r.src_unit.vocab_size,
                   "src_units": r.src_unit.merged_units.tolist(),
                   "src_durations": r.src_unit.durations.tolist(),
                   "tgt_units": r.tgt_unit.merged_units.tolist(),
                   "tgt_durations": r.tgt_unit.durations.tolist(),
                   "src_text": r.src_text, "tgt_text": r.tgt_text, "meta": r.meta}
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def read_records(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            k = d["K"]
            out.append(ParallelRecord(
                d["id"], d["src_lang"], d["tgt_lang"],
                UnitSequence(k, d["src_units"], d["src_durations"]),
                UnitSequence(k, d["tgt_units"], d["tgt_durations"]),
                d["src_text"], d["tgt_text"], meta=d["meta"]))
    return out
