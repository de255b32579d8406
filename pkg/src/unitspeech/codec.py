"""Acoustic tokenizer: lapped transform analysis/synthesis plus residual VQ.

``analyze`` is a circular MDCT with a sine window: frame ``a`` spans
``2 * hop`` samples centred on hop block ``a`` and the signal is treated as
periodic after zero-padding to ``T_a * hop`` samples, so ``T_a`` frames
reconstruct exactly ``T_a * hop`` samples. The embedding keeps the lowest
``dim`` coefficients, i.e. the codec is band-limited to
``dim * sample_rate / (2 * hop)`` Hz.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .audio import Waveform
from .exceptions import ContractError, NotFittedError, ShapeError
from .frontend import Codebook, kmeans_fit
from .numerics.checkpoint import load_checkpoint, save_checkpoint
from .numerics.kernels import sq_dist_argmin
from .numerics.linalg import matmul


@dataclass(frozen=True)
class RvqConfig:
    Q: int = 6
    codebook_size: int = 1024
    frame_rate: int = 80
    sample_rate: int = 24000
    dim: int = 64

    def __post_init__(self):
        if self.sample_rate % self.frame_rate:
            raise ContractError(f"sample_rate {self.sample_rate} not divisible by frame_rate {self.frame_rate}")
        if self.Q < 1 or self.codebook_size < 2:
            raise ContractError("need Q >= 1 and codebook_size >= 2")
        if not 1 <= self.dim <= self.hop:
            raise ContractError(f"dim must be in [1, hop={self.hop}]")

    @property
    def hop(self):
        return self.sample_rate // self.frame_rate

    def n_frames(self, n_samples):
        return -(-n_samples // self.hop)


@dataclass
class CodecTokenGrid:
    """``tokens[a, q]`` is the level-``q+1`` index of frame ``a``; column 0 is coarsest."""

    tokens: np.ndarray
    codebook_size: int = 1024

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.tokens.ndim != 2:
            raise ShapeError(f"token grid must be (T_a, Q), got {self.tokens.shape}")

    @property
    def T(self):
        return self.tokens.shape[0]

    @property
    def Q(self):
        return self.tokens.shape[1]

    def validate(self):
        bad = np.argwhere((self.tokens < 0) | (self.tokens >= self.codebook_size))
        if bad.size:
            a, q = bad[0]
            raise ContractError(f"token {int(self.tokens[a, q])} out of range at (frame {a}, level {q + 1})")
        return self


@dataclass
class RvqCodebooks:
    levels: list
    residual_energy: list = field(default_factory=list)

    @property
    def Q(self):
        return len(self.levels)

    @property
    def codebook_size(self):
        return self.levels[0].K

    @property
    def dim(self):
        return self.levels[0].dim

    def save(self, path, cfg=None):
        tensors = {f"level{q + 1}": cb.centroids for q, cb in enumerate(self.levels)}
        tensors["residual_energy"] = np.asarray(self.residual_energy, dtype=np.float64)
        meta = {"kind": "rvq", "config": cfg.__dict__ if cfg else None}
        save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path):
        tensors, meta = load_checkpoint(path)
        q = sum(1 for k in tensors if k.startswith("level"))
        levels = [Codebook(tensors[f"level{i + 1}"]) for i in range(q)]
        cfg = RvqConfig(**meta["config"]) if meta.get("config") else None
        return cls(levels, tensors["residual_energy"].tolist()), cfg


# -- transform --------------------------------------------------------------

_BASIS = {}


def _basis(hop, dim):
    key = (hop, dim)
    if key not in _BASIS:
        n = np.arange(2 * hop)
        k = np.arange(dim)
        window = np.sin(np.pi * (n + 0.5) / (2 * hop))
        cos = np.cos(np.pi / hop * (n[None, :] + 0.5 + hop / 2) * (k[:, None] + 0.5))
        _BASIS[key] = (window, np.sqrt(2.0 / hop) * cos)
    return _BASIS[key]


def _frame_index(t_a, hop):
    start = np.arange(t_a) * hop - hop // 2
    return (start[:, None] + np.arange(2 * hop)[None, :]) % (t_a * hop)


def analyze(w, cfg=RvqConfig()):
    """Frame embeddings ``(T_a, dim)`` with ``T_a = ceil(len(w) / hop)``."""
    if w.sample_rate != cfg.sample_rate:
        raise ContractError(f"waveform is {w.sample_rate} Hz, codec expects {cfg.sample_rate} Hz")
    hop = cfg.hop
    t_a = cfg.n_frames(len(w))
    if t_a == 0:
        return np.zeros((0, cfg.dim))
    x = np.zeros(t_a * hop)
    x[: len(w)] = w.samples
    window, basis = _basis(hop, cfg.dim)
    frames = x[_frame_index(t_a, hop)] * window
    return matmul(frames, basis.T)


def synthesize(embeddings, cfg=RvqConfig()):
    """Windowed overlap-add inverse of :func:`analyze`; ``T_a * hop`` samples."""
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2 or e.shape[1] != cfg.dim:
        raise ShapeError(f"embeddings must be (T_a, {cfg.dim}), got {e.shape}")
    hop = cfg.hop
    t_a = e.shape[0]
    if t_a == 0:
        return Waveform(cfg.sample_rate, np.zeros(0))
    window, basis = _basis(hop, cfg.dim)
    frames = matmul(e, basis) * window
    out = np.zeros(t_a * hop)
    np.add.at(out, _frame_index(t_a, hop).ravel(), frames.ravel())
    return Waveform(cfg.sample_rate, out)


# -- residual vector quantisation ------------------------------------------

def _fit_level(residual, size, iters, seed):
    distinct = np.unique(residual, axis=0)
    if distinct.shape[0] >= size:
        return kmeans_fit(residual, size, iters, seed)
    # fewer distinct residuals than entries: cover them exactly, pad with the
    # first row (never selected thanks to lowest-index tie-breaking)
    cent = np.vstack([distinct, np.repeat(distinct[:1], size - distinct.shape[0], axis=0)])
    return Codebook(cent, [0.0])


def rvq_fit(embeddings, cfg=RvqConfig(), seed=0, iters=100, max_frames=None):
    """Fit ``cfg.Q`` codebooks, level ``q`` by k-means on the residual after levels ``< q``.

    ``residual_energy[q]`` is the mean squared residual norm after level
    ``q + 1`` on the training frames; it is non-increasing in ``q``.
    """
    x = embeddings if isinstance(embeddings, np.ndarray) else np.vstack([e for e in embeddings if len(e)])
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.dim:
        raise ShapeError(f"embeddings must be (N, {cfg.dim}), got {x.shape}")
    if max_frames is not None and x.shape[0] > max_frames:
        from .numerics.rng import stream
        keep = np.sort(stream(seed, "rvq-subsample").choice(x.shape[0], max_frames, replace=False))
        x = x[keep]
    if x.shape[0] < cfg.codebook_size:
        raise ContractError(f"rvq_fit needs at least {cfg.codebook_size} frames, got {x.shape[0]}")
    residual = x.copy()
    levels, energy = [], []
    for q in range(cfg.Q):
        cb = _fit_level(residual, cfg.codebook_size, iters, seed + 1000 * q)
        idx, _ = sq_dist_argmin(residual, cb.centroids)
        residual = residual - cb.centroids[idx]
        levels.append(cb)
        energy.append(float(np.mean(np.sum(residual ** 2, axis=1))))
    return RvqCodebooks(levels, energy)


def rvq_encode(embeddings, cbs):
    """Greedy residual quantisation; ties go to the lowest index."""
    e = np.ascontiguousarray(embeddings, dtype=np.float64)
    if e.ndim != 2 or e.shape[1] != cbs.dim:
        raise ShapeError(f"embeddings must be (T_a, {cbs.dim}), got {e.shape}")
    tokens = np.zeros((e.shape[0], cbs.Q), dtype=np.int64)
    residual = e.copy()
    for q, cb in enumerate(cbs.levels):
        if e.shape[0] == 0:
            break
        idx, _ = sq_dist_argmin(residual, cb.centroids)
        tokens[:, q] = idx
        residual = residual - cb.centroids[idx]
    return CodecTokenGrid(tokens, cbs.codebook_size)


def rvq_decode(grid, cbs, levels=None):
    """Sum of the selected centroids over levels ``1..levels``."""
    levels = cbs.Q if levels is None else levels
    if not 0 <= levels <= min(cbs.Q, grid.Q):
        raise ContractError(f"levels={levels} outside [0, {min(cbs.Q, grid.Q)}]")
    grid.validate()
    out = np.zeros((grid.T, cbs.dim))
    for q in range(levels):
        out = out + cbs.levels[q].centroids[grid.tokens[:, q]]
    return out


# -- token grid files -------------------------------------------------------

GRID_FILE_HEADER = "# codecgrid v1"


def write_grid_file(path, grids):
    """One line per utterance: ``id<TAB>T_a<TAB>Q<TAB>codebook_size<TAB>row-major indices``."""
    lines = [GRID_FILE_HEADER]
    for utt, g in grids.items():
        lines.append("\t".join([utt, str(g.T), str(g.Q), str(g.codebook_size),
                                " ".join(map(str, g.tokens.reshape(-1).tolist()))]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_grid_file(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ContractError(f"{path}:{n}: expected 5 tab-separated fields")
            utt, t, q, size, data = parts
            tok = np.array(data.split(), dtype=np.int64)
            if tok.size != int(t) * int(q):
                raise ContractError(f"{path}:{n}: {tok.size} indices for a {t}x{q} grid")
            out[utt] = CodecTokenGrid(tok.reshape(int(t), int(q)), int(size)).validate()
    return out


# -- estimators -------------------------------------------------------------

class ResidualVQ(BaseEstimator, TransformerMixin):
    """Residual vector quantiser over frame embeddings.

    ``transform`` maps ``(N, dim)`` embeddings to ``(N, Q)`` indices;
    ``inverse_transform`` reconstructs embeddings from indices.
    """

    def __init__(self, n_levels=6, codebook_size=1024, max_iter=100, seed=0, max_frames=None):
        self.n_levels = n_levels
        self.codebook_size = codebook_size
        self.max_iter = max_iter
        self.seed = seed
        self.max_frames = max_frames

    def fit(self, X, y=None):
        x = np.asarray(X, dtype=np.float64)
        cfg = RvqConfig(Q=self.n_levels, codebook_size=self.codebook_size, dim=x.shape[1],
                        sample_rate=max(24000, x.shape[1] * 80), frame_rate=80)
        self.codebooks_ = rvq_fit(x, cfg, self.seed, self.max_iter, self.max_frames)
        return self

    def transform(self, X):
        if not hasattr(self, "codebooks_"):
            raise NotFittedError("ResidualVQ is not fitted")
        return rvq_encode(X, self.codebooks_).tokens

    def inverse_transform(self, X, levels=None):
        if not hasattr(self, "codebooks_"):
            raise NotFittedError("ResidualVQ is not fitted")
        return rvq_decode(CodecTokenGrid(X, self.codebooks_.codebook_size), self.codebooks_, levels)


class Codec:
    """Waveform <-> token grid, bundling a config with fitted codebooks."""

    def __init__(self, cfg, codebooks):
        self.cfg = cfg
        self.codebooks = codebooks

    @classmethod
    def fit(cls, waveforms, cfg=RvqConfig(), seed=0, iters=100, max_frames=None):
        emb = [analyze(w, cfg) for w in waveforms]
        return cls(cfg, rvq_fit(emb, cfg, seed, iters, max_frames))

    def encode(self, w):
        return rvq_encode(analyze(w, self.cfg), self.codebooks)

    def decode(self, grid, levels=None):
        return synthesize(rvq_decode(grid, self.codebooks, levels), self.cfg)

    def save(self, path):
        self.codebooks.save(path, self.cfg)

    @classmethod
    def load(cls, path):
        cbs, cfg = RvqCodebooks.load(path)
        return cls(cfg, cbs)
