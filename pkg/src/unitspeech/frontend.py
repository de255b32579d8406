"""Speech frontend: filterbank features, k-means semantic units, run-length merging.

A deterministic log-mel filterbank stands in for a pretrained self-supervised
encoder. Frames are non-overlapping (window == hop), so a frame never mixes
two segments that start on frame boundaries.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin

from .audio import Waveform
from .exceptions import ContractError, NotFittedError, ShapeError
from .numerics.checkpoint import load_checkpoint, save_checkpoint
from .numerics.kernels import sq_dist_argmin, sq_dist_to
from .numerics.rng import stream

LOG_FLOOR = 1e-10


@dataclass
class FeatureSequence:
    frames: np.ndarray
    frame_rate: float = 50.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ShapeError(f"frames must be (T, dim), got {self.frames.shape}")

    @property
    def dim(self):
        return self.frames.shape[1]

    def __len__(self):
        return self.frames.shape[0]


@dataclass
class UnitSequence:
    """Semantic units at frame level and/or merged with run lengths.

    ``durations[i]`` is the number of frames ``merged_units[i]`` spans.
    """

    vocab_size: int
    merged_units: np.ndarray = None
    durations: np.ndarray = None
    frame_units: np.ndarray = None

    def __post_init__(self):
        for name in ("merged_units", "durations", "frame_units"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=np.int64).reshape(-1))

    def validate(self):
        k = self.vocab_size
        if self.frame_units is not None and self.frame_units.size:
            if self.frame_units.min() < 0 or self.frame_units.max() >= k:
                raise ContractError(f"frame unit outside [0, {k})")
        if self.merged_units is None:
            return self
        if self.durations is None or self.durations.size != self.merged_units.size:
            raise ContractError("merged_units and durations must have equal length")
        m = self.merged_units
        if m.size:
            if m.min() < 0 or m.max() >= k:
                raise ContractError(f"merged unit outside [0, {k})")
            if np.any(m[1:] == m[:-1]):
                raise ContractError("adjacent merged units are equal")
            if self.durations.min() < 1:
                raise ContractError("durations must be >= 1")
        if self.frame_units is not None:
            if int(self.durations.sum()) != self.frame_units.size:
                raise ContractError("sum(durations) != number of frames")
            if not np.array_equal(np.repeat(m, self.durations), self.frame_units):
                raise ContractError("expanded merged units do not reproduce frame units")
        return self

    @property
    def n_frames(self):
        if self.frame_units is not None:
            return self.frame_units.size
        return int(self.durations.sum()) if self.durations is not None else 0

    def __len__(self):
        return self.merged_units.size if self.merged_units is not None else 0


@dataclass
class Codebook:
    centroids: np.ndarray
    inertia_history: list = field(default_factory=list)

    def __post_init__(self):
        self.centroids = np.ascontiguousarray(self.centroids, dtype=np.float64)

    @property
    def K(self):
        return self.centroids.shape[0]

    @property
    def dim(self):
        return self.centroids.shape[1]


# -- features ---------------------------------------------------------------

def _mel(f):
    return 2595.0 * np.log10(1.0 + f / 700.0)


def _imel(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def mel_filterbank(sample_rate, n_fft, n_bands, f_min=0.0, f_max=None):
    """Triangular mel filters, shape ``(n_bands, n_fft // 2 + 1)``, plus band centres in Hz."""
    f_max = sample_rate / 2 if f_max is None else f_max
    edges = _imel(np.linspace(_mel(f_min), _mel(f_max), n_bands + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down)), edges[1:-1]


def _frame_params(sample_rate, frame_ms):
    hop = sample_rate * frame_ms / 1000.0
    if hop != int(hop) or hop < 1:
        raise ContractError(f"{frame_ms} ms is not a whole number of samples at {sample_rate} Hz")
    hop = int(hop)
    n_fft = 1 << max(9, int(np.ceil(np.log2(hop))) + 1)
    return hop, n_fft


def extract_features(w, frame_ms=20, n_bands=40, top_db=None):
    """Log mel filterbank energies of non-overlapping Hann-windowed frames.

    ``T = floor(len(w) / hop)``; a trailing partial frame is dropped. With
    ``top_db``, values are also floored at ``top_db`` decibels below the
    utterance maximum, which hides low-level noise (e.g. codec quantization
    error) in bands that carry no signal.
    """
    hop, n_fft = _frame_params(w.sample_rate, frame_ms)
    rate = 1000.0 / frame_ms
    t = len(w) // hop
    if t == 0:
        return FeatureSequence(np.zeros((0, n_bands)), rate)
    fb, _ = mel_filterbank(w.sample_rate, n_fft, n_bands)
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(hop) / hop)
    frames = w.samples[: t * hop].reshape(t, hop) * window
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    energies = power @ fb.T
    logs = np.log(np.maximum(energies, LOG_FLOOR))
    if top_db is not None:
        logs = np.maximum(logs, logs.max() - top_db * np.log(10.0) / 10.0)
    return FeatureSequence(logs, rate)


# -- k-means ----------------------------------------------------------------

def _stack(features):
    if isinstance(features, FeatureSequence):
        return features.frames
    if isinstance(features, np.ndarray):
        return np.asarray(features, dtype=np.float64)
    mats = [f.frames if isinstance(f, FeatureSequence) else np.asarray(f, dtype=np.float64)
            for f in features]
    mats = [m for m in mats if m.size]
    if not mats:
        return np.zeros((0, 0))
    return np.vstack(mats)


def _kmeans_pp(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = sq_dist_to(x, centers[0])
    for i in range(1, k):
        # at least K distinct rows exist, so some point still has d2 > 0
        cum = np.cumsum(d2)
        idx = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), n - 1)
        while d2[idx] == 0.0:
            idx = (idx + 1) % n
        centers[i] = x[idx]
        d2 = np.minimum(d2, sq_dist_to(x, centers[i]))
    return centers


def kmeans_fit(features, K, iters=100, seed=0):
    """Lloyd's algorithm with k-means++ seeding.

    ``inertia_history[i]`` is the total squared distance after the i-th
    assignment step; it never increases. Stops early once assignments repeat.
    Empty clusters are re-seeded with the point farthest from its centre.
    """
    x = np.ascontiguousarray(_stack(features))
    n = x.shape[0]
    if n < K:
        raise ContractError(f"k-means needs at least K={K} frames, got {n}")
    distinct = np.unique(x, axis=0).shape[0]
    if distinct < K:
        raise ContractError(f"k-means needs at least K={K} distinct frames, got {distinct}")
    rng = stream(seed, "kmeans++")
    centers = _kmeans_pp(x, K, rng)
    history = []
    prev = None
    for _ in range(iters):
        assign, d2 = sq_dist_argmin(x, centers)
        history.append(float(d2.sum()))
        if prev is not None and np.array_equal(assign, prev):
            break
        prev = assign
        # shifted mean: anchor each cluster on its first member so identical
        # points give a centroid exactly equal to them
        counts = np.bincount(assign, minlength=K)
        filled = counts > 0
        anchor_idx = np.zeros(K, dtype=np.int64)
        anchor_idx[assign[::-1]] = np.arange(n)[::-1]
        anchors = x[anchor_idx]
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, x - anchors[assign])
        centers[filled] = anchors[filled] + sums[filled] / counts[filled, None]
        if not filled.all():
            order = np.argsort(-d2, kind="stable")
            taken = 0
            for k in np.flatnonzero(~filled):
                centers[k] = x[order[taken]]
                taken += 1
    return Codebook(centers, history)


def quantize(features, cb):
    """Nearest-centroid unit per frame (ties to the lowest index)."""
    frames = features.frames if isinstance(features, FeatureSequence) else np.asarray(features, dtype=np.float64)
    if frames.shape[0] == 0:
        return UnitSequence(cb.K, frame_units=np.zeros(0, dtype=np.int64))
    if frames.shape[1] != cb.dim:
        raise ShapeError(f"feature dim {frames.shape[1]} != codebook dim {cb.dim}")
    idx, _ = sq_dist_argmin(np.ascontiguousarray(frames), cb.centroids)
    return UnitSequence(cb.K, frame_units=idx)


# -- run-length representation ---------------------------------------------

def merge_units(u):
    """Collapse runs of equal frame units into (unit, duration) pairs."""
    z = u.frame_units
    if z is None:
        raise ContractError("merge_units needs frame_units")
    if z.size == 0:
        return UnitSequence(u.vocab_size, np.zeros(0, np.int64), np.zeros(0, np.int64), z)
    starts = np.concatenate([[0], np.flatnonzero(z[1:] != z[:-1]) + 1])
    durations = np.diff(np.concatenate([starts, [z.size]]))
    return UnitSequence(u.vocab_size, z[starts], durations, z)


def expand_units(u):
    """Frame-level units from merged units and durations (inverse of :func:`merge_units`)."""
    m, d = u.merged_units, u.durations
    if m is None or d is None or m.size != d.size:
        raise ContractError("expand_units needs merged_units and durations of equal length")
    bad = np.flatnonzero(d < 1)
    if bad.size:
        raise ContractError(f"duration {int(d[bad[0]])} at position {int(bad[0])} is not positive")
    return np.repeat(m, d)


# -- unit files -------------------------------------------------------------

UNIT_FILE_HEADER = "# unitseq v1"


def write_unit_file(path, records):
    """One line per utterance: ``id<TAB>K<TAB>units<TAB>durations`` (space-separated ints)."""
    lines = [UNIT_FILE_HEADER]
    for utt, u in records.items():
        if any(c.isspace() for c in utt):
            raise ContractError(f"utterance id {utt!r} contains whitespace")
        lines.append("\t".join([utt, str(u.vocab_size),
                                " ".join(map(str, u.merged_units.tolist())),
                                " ".join(map(str, u.durations.tolist()))]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_unit_file(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ContractError(f"{path}:{n}: expected 4 tab-separated fields, got {len(parts)}")
            utt, k, units, durs = parts
            out[utt] = UnitSequence(int(k), np.array(units.split(), dtype=np.int64),
                                    np.array(durs.split(), dtype=np.int64)).validate()
    return out


# -- estimators -------------------------------------------------------------

class FilterbankFeatures(BaseEstimator, TransformerMixin):
    """Stateless transformer from waveforms to :class:`FeatureSequence`."""

    def __init__(self, frame_ms=20, n_bands=40, top_db=None):
        self.frame_ms = frame_ms
        self.n_bands = n_bands
        self.top_db = top_db

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return [extract_features(w, self.frame_ms, self.n_bands, self.top_db) for w in _waveforms(X)]


class UnitKMeans(BaseEstimator, ClusterMixin, TransformerMixin):
    """k-means codebook over feature frames with the estimator interface.

    ``transform`` returns squared distances to every centroid; ``predict``
    returns nearest-centroid indices.
    """

    def __init__(self, n_clusters=500, max_iter=100, seed=0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.seed = seed

    def fit(self, X, y=None):
        cb = kmeans_fit(X, self.n_clusters, self.max_iter, self.seed)
        self.codebook_ = cb
        self.cluster_centers_ = cb.centroids
        self.inertia_history_ = cb.inertia_history
        self.inertia_ = cb.inertia_history[-1]
        self.n_iter_ = len(cb.inertia_history)
        return self

    def _check(self):
        if not hasattr(self, "codebook_"):
            raise NotFittedError("UnitKMeans is not fitted")

    def predict(self, X):
        self._check()
        return quantize(_stack(X), self.codebook_).frame_units

    def transform(self, X):
        self._check()
        x = _stack(X)
        return np.stack([sq_dist_to(np.ascontiguousarray(x), c) for c in self.cluster_centers_], axis=1)


class SemanticUnitExtractor(BaseEstimator, TransformerMixin):
    """Waveforms to merged :class:`UnitSequence` via filterbank + k-means."""

    def __init__(self, n_units=500, frame_ms=20, n_bands=40, top_db=None, max_iter=100, seed=0):
        self.n_units = n_units
        self.frame_ms = frame_ms
        self.n_bands = n_bands
        self.top_db = top_db
        self.max_iter = max_iter
        self.seed = seed

    def _features(self, X):
        return FilterbankFeatures(self.frame_ms, self.n_bands, self.top_db).transform(X)

    def fit(self, X, y=None):
        feats = self._features(X)
        self.codebook_ = kmeans_fit(feats, self.n_units, self.max_iter, self.seed)
        return self

    def transform(self, X):
        if not hasattr(self, "codebook_"):
            raise NotFittedError("SemanticUnitExtractor is not fitted")
        feats = self._features(X)
        return [merge_units(quantize(f, self.codebook_)) for f in feats]

    def save(self, path):
        if not hasattr(self, "codebook_"):
            raise NotFittedError("SemanticUnitExtractor is not fitted")
        save_checkpoint(path, {"centroids": self.codebook_.centroids,
                               "inertia": np.asarray(self.codebook_.inertia_history)},
                        {"kind": "semantic", "estimator": self.get_params()})

    @classmethod
    def load(cls, path):
        tensors, meta = load_checkpoint(path)
        if meta.get("kind") != "semantic":
            raise ContractError(f"{path}: not a semantic codebook checkpoint")
        est = cls(**meta["estimator"])
        est.codebook_ = Codebook(tensors["centroids"], tensors["inertia"].tolist())
        if est.codebook_.K != est.n_units:
            raise ContractError(f"{path}: {est.codebook_.K} centroids but n_units={est.n_units}")
        return est


def _waveforms(X):
    if isinstance(X, Waveform):
        return [X]
    out = list(X)
    for w in out:
        if not isinstance(w, Waveform):
            raise ContractError(f"expected Waveform, got {type(w).__name__}")
    return out
