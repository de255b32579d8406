"""The three language-model tasks of the pipeline, as estimators.

Token layouts (``K`` semantic units, ``C`` codec entries, ``D`` = ``d_max``)::

    U-XLM     bos  prompt-prefix  completion  eos          byte-level vocabulary
    duration  bos src sep src_dur sep tgt sep tgt_dur       units | durations 1..D | specials
    U-SLM AR  bos src sep tgt sep prompt_L1 sep tgt_L1      units | codec | specials

Only the completion (U-XLM), the target durations and the target level-1
tokens carry loss. The AR model additionally receives, at the input
position that predicts codec frame ``a``, an embedding of the target
semantic unit aligned with that frame, so the number of generated tokens
is fixed by the durations. The NAR model fills levels ``2..Q``.
"""

import numpy as np
from sklearn.base import BaseEstimator

from ..corpus.templates import TEMPLATES, inference_prefix, parse_completion, parse_unit_markup, sample_prompts
from ..corpus.vocab import Vocabulary, build_vocab
from ..exceptions import ContractError, NotFittedError, StageError
from ..numerics import autodiff as ad
from ..numerics.checkpoint import load_checkpoint, save_checkpoint
from .generate import generate
from .model import LmConfig, init_params
from .nar import NarConfig, init_nar_params, nar_forward
from .train import TrainConfig, fit_params, pad_batch, train_lm

_SPECIALS = ("<bos>", "<sep>", "<eos>", "<pad>")


def align_units(frame_units, t_a, ratio=0.625):
    """Semantic unit under each of ``t_a`` codec frames.

    Codec frame ``a`` takes the unit of semantic frame ``floor((a + 0.5) * ratio)``
    (clipped to the last frame); ``ratio`` is semantic rate / codec rate.
    """
    f = np.asarray(frame_units, dtype=np.int64)
    if t_a == 0:
        return np.zeros(0, dtype=np.int64)
    if f.size == 0:
        raise ContractError("cannot align codec frames to an empty unit sequence")
    idx = np.minimum(np.floor((np.arange(t_a) + 0.5) * ratio).astype(np.int64), f.size - 1)
    return f[idx]


def codec_frames(n_frames, ratio=0.625):
    """Codec frames covering ``n_frames`` semantic frames: ``ceil(n_frames / ratio)``."""
    return int(np.ceil(n_frames / ratio - 1e-9))


class _TaskLM(BaseEstimator):
    """Shared plumbing: configs, checkpoints and the fitted check."""

    _kind = None

    def _lm_config(self, vocab_size, n_cond=0):
        return LmConfig(layers=self.layers, heads=self.heads, model_dim=self.model_dim,
                        ffn_dim=self.ffn_dim, max_seq=self.max_seq, vocab_size=vocab_size,
                        dropout=self.dropout, n_cond=n_cond)

    def _train_config(self):
        return TrainConfig(steps=self.steps, batch_size=self.batch_size, lr=self.lr,
                           warmup=self.warmup)

    def _check(self):
        if not hasattr(self, "params_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted")

    def _meta(self):
        return {"kind": self._kind, "estimator": self.get_params(), "config": self.config_.to_dict(),
                "losses": list(map(float, self.losses_))}

    def save(self, path):
        self._check()
        save_checkpoint(path, self.params_, self._meta())

    @classmethod
    def _restore(cls, path, config_cls):
        tensors, meta = load_checkpoint(path)
        if meta.get("kind") != cls._kind:
            raise ContractError(f"{path}: checkpoint kind {meta.get('kind')!r}, expected {cls._kind!r}")
        est = cls(**meta["estimator"])
        est.params_ = tensors
        est.config_ = config_cls(**meta["config"])
        est.losses_ = meta["losses"]
        return est, meta


# -- U-XLM --------------------------------------------------------------------

class UnitTranslator(_TaskLM):
    """Decoder-only cross-lingual unit LM trained on rendered prompts.

    ``fit`` renders every available ``tasks`` template for every record and
    trains on the completions. ``translate`` runs the ``S2ST-1`` prompt and
    parses the generated units.
    """

    _kind = "u-xlm"

    def __init__(self, tasks=("S2ST-1",), task_weights=None, merges=200, layers=2, heads=4,
                 model_dim=64, ffn_dim=256, max_seq=128, dropout=0.0, steps=1500, batch_size=32,
                 lr=3e-3, warmup=50, max_new=64, seed=0):
        self.tasks = tasks
        self.task_weights = task_weights
        self.merges = merges
        self.layers = layers
        self.heads = heads
        self.model_dim = model_dim
        self.ffn_dim = ffn_dim
        self.max_seq = max_seq
        self.dropout = dropout
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.warmup = warmup
        self.max_new = max_new
        self.seed = seed

    def samples(self, records):
        return sample_prompts(records, self.tasks, self.task_weights)

    def encode_sample(self, prefix, completion):
        v = self.vocab_
        a = v.encode(prefix)
        b = v.encode(completion)
        seq = np.concatenate([[v.bos], a, b, [v.eos]]).astype(np.int64)
        mask = np.concatenate([np.zeros(1 + a.size), np.ones(b.size + 1)])
        return seq, mask

    def fit(self, records, y=None, vocab=None, log=None):
        samples = self.samples(records)
        if not samples:
            raise ContractError("u-xlm: no record has the fields any requested task needs")
        unit_counts = sorted({r.src_unit.vocab_size for r in records if r.src_unit is not None})
        if len(unit_counts) != 1:
            raise ContractError(f"u-xlm: expected one unit inventory, got sizes {unit_counts}")
        return self.fit_prompts([(t, p, c, w) for _, t, p, c, w in samples], unit_counts, vocab, log)

    def fit_prompts(self, prompts, unit_counts, vocab=None, log=None):
        """Train on ``(task, prefix, completion, weight)`` tuples, e.g. from a corpus file."""
        if not prompts:
            raise ContractError("u-xlm: empty prompt corpus")
        self.vocab_ = vocab or build_vocab([p + c for _, p, c, _ in prompts], list(unit_counts),
                                           self.merges, self.seed)
        seqs, masks = zip(*(self.encode_sample(p, c) for _, p, c, _ in prompts))
        self.config_ = self._lm_config(len(self.vocab_))
        self.task_counts_ = {}
        for t, *_ in prompts:
            self.task_counts_[t] = self.task_counts_.get(t, 0) + 1
        params = init_params(self.config_, self.seed)
        res = train_lm(params, self.config_, seqs, masks, self._train_config(), self.seed,
                       pad=self.vocab_.pad, sample_weights=[w for *_, w in prompts], stage="u-xlm",
                       log=log)
        self.params_ = res.params
        self.losses_ = res.losses
        return self

    def complete(self, prefix, strategy="greedy", k=1, temperature=1.0, seed=0):
        """Completion text for a rendered prompt prefix (greedy by default)."""
        self._check()
        v = self.vocab_
        prompt = np.concatenate([[v.bos], v.encode(prefix)])
        budget = min(self.max_new, self.config_.max_seq + 1 - prompt.size)
        if budget < 1:
            raise StageError("u-xlm", f"prompt of {prompt.size} tokens leaves no room to generate "
                                      f"(max_seq {self.config_.max_seq})")
        g = generate(self.params_, self.config_, prompt, budget, strategy=strategy, k=k,
                     temperature=temperature, seed=seed, stop=(v.eos,))
        return v.decode(g.tokens), g

    def translate(self, record):
        """Target units for ``record`` (its ``src_unit`` and languages) via ``S2ST-1``."""
        text, g = self.complete(inference_prefix(TEMPLATES["S2ST-1"], record))
        if not g.stopped:
            raise StageError("u-xlm", "generation hit the length budget before end-of-sequence",
                             raw=text)
        try:
            return parse_unit_markup(parse_completion(text)), text
        except ContractError as e:
            raise StageError("u-xlm", f"output is not a unit sequence: {e}", raw=text) from e

    def predict(self, X):
        return [self.translate(r)[0] for r in X]

    def save(self, path, vocab_path=None):
        super().save(path)
        if vocab_path is not None:
            self.vocab_.save(vocab_path)

    @classmethod
    def load(cls, path, vocab_path):
        est, _ = cls._restore(path, LmConfig)
        est.vocab_ = Vocabulary.load(vocab_path)
        if len(est.vocab_) != est.config_.vocab_size:
            raise ContractError(f"vocabulary {vocab_path} has {len(est.vocab_)} tokens, "
                                f"checkpoint expects {est.config_.vocab_size}")
        return est


# -- duration LM --------------------------------------------------------------

class DurationPredictor(_TaskLM):
    """Predicts one frame count per target unit from the source units and durations."""

    _kind = "duration"

    def __init__(self, n_units=50, d_max=32, layers=2, heads=4, model_dim=64, ffn_dim=128,
                 max_seq=64, dropout=0.0, steps=300, batch_size=32, lr=3e-3, warmup=30, seed=0):
        self.n_units = n_units
        self.d_max = d_max
        self.layers = layers
        self.heads = heads
        self.model_dim = model_dim
        self.ffn_dim = ffn_dim
        self.max_seq = max_seq
        self.dropout = dropout
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.warmup = warmup
        self.seed = seed

    @property
    def vocab_size(self):
        return self.n_units + self.d_max + len(_SPECIALS)

    def _special(self, name):
        return self.n_units + self.d_max + _SPECIALS.index(name)

    def _dur_tokens(self, d):
        return self.n_units + np.clip(np.asarray(d, dtype=np.int64), 1, self.d_max) - 1

    def prompt(self, src_units, src_durations, tgt_units):
        bos, sep = self._special("<bos>"), self._special("<sep>")
        parts = [[bos], src_units, [sep], self._dur_tokens(src_durations), [sep], tgt_units, [sep]]
        return np.concatenate([np.asarray(p, dtype=np.int64) for p in parts])

    def fit(self, records, y=None, log=None):
        seqs, masks = [], []
        for r in records:
            s, t = r.src_unit, r.tgt_unit
            p = self.prompt(s.merged_units, s.durations, t.merged_units)
            seqs.append(np.concatenate([p, self._dur_tokens(t.durations)]))
            masks.append(np.concatenate([np.zeros(p.size), np.ones(len(t))]))
        self.config_ = self._lm_config(self.vocab_size)
        params = init_params(self.config_, self.seed)
        res = train_lm(params, self.config_, seqs, masks, self._train_config(), self.seed,
                       pad=self._special("<pad>"), stage="duration", log=log)
        self.params_ = res.params
        self.losses_ = res.losses
        return self

    def predict_durations(self, src_units, src_durations, tgt_units):
        """``(durations, n_invalid)``: durations in ``[1, d_max]``, one per target unit.

        A generated token that is not a duration token is replaced by 1 and
        counted in ``n_invalid``.
        """
        self._check()
        tgt_units = np.asarray(tgt_units, dtype=np.int64)
        if tgt_units.size == 0:
            raise ContractError("predict_durations needs at least one target unit")
        p = self.prompt(src_units, src_durations, tgt_units)
        g = generate(self.params_, self.config_, p, tgt_units.size)
        tok = g.tokens
        ok = (tok >= self.n_units) & (tok < self.n_units + self.d_max)
        return np.where(ok, tok - self.n_units + 1, 1).astype(np.int64), int((~ok).sum())

    def predict(self, X):
        return [self.predict_durations(r.src_unit.merged_units, r.src_unit.durations,
                                       r.tgt_unit.merged_units)[0] for r in X]

    @classmethod
    def load(cls, path):
        return cls._restore(path, LmConfig)[0]


# -- U-SLM ----------------------------------------------------------------------

class AcousticExample:
    """One U-SLM training/inference item.

    ``src_units`` / ``tgt_units`` are merged semantic units, ``tgt_frames``
    the expanded target units at the semantic frame rate, ``prompt`` the
    ``(P, Q)`` source codec grid and ``target`` the ``(T_a, Q)`` target grid
    (absent at inference).
    """

    def __init__(self, src_units, tgt_units, tgt_frames, prompt, target=None):
        self.src_units = np.asarray(src_units, dtype=np.int64)
        self.tgt_units = np.asarray(tgt_units, dtype=np.int64)
        self.tgt_frames = np.asarray(tgt_frames, dtype=np.int64)
        self.prompt = np.asarray(prompt, dtype=np.int64).reshape(-1, np.shape(prompt)[-1])
        self.target = None if target is None else np.asarray(target, dtype=np.int64)

    @property
    def t_a(self):
        return self.target.shape[0] if self.target is not None else codec_frames(self.tgt_frames.size)


class AcousticAR(_TaskLM):
    """Autoregressive level-1 codec token model (the first U-SLM stage)."""

    _kind = "u-slm-ar"

    def __init__(self, n_units=50, codebook_size=64, prompt_frames=240, layers=2, heads=4,
                 model_dim=64, ffn_dim=256, max_seq=160, dropout=0.0, steps=600, batch_size=16,
                 lr=3e-3, warmup=50, seed=0):
        self.n_units = n_units
        self.codebook_size = codebook_size
        self.prompt_frames = prompt_frames
        self.layers = layers
        self.heads = heads
        self.model_dim = model_dim
        self.ffn_dim = ffn_dim
        self.max_seq = max_seq
        self.dropout = dropout
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.warmup = warmup
        self.seed = seed

    @property
    def vocab_size(self):
        return self.n_units + self.codebook_size + len(_SPECIALS)

    def _special(self, name):
        return self.n_units + self.codebook_size + _SPECIALS.index(name)

    def prompt(self, ex):
        """Prompt tokens and their condition IDs (all zero)."""
        bos, sep = self._special("<bos>"), self._special("<sep>")
        pl1 = ex.prompt[: self.prompt_frames, 0] + self.n_units
        p = np.concatenate([[bos], ex.src_units, [sep], ex.tgt_units, [sep], pl1, [sep]]).astype(np.int64)
        return p

    def conds(self, ex, prompt_len, t_a):
        """Condition ID per position of ``prompt + target`` (``prompt_len + t_a`` entries).

        The input at position ``prompt_len - 1 + a`` predicts frame ``a`` and
        carries ``1 + unit`` of that frame; every other position carries 0.
        """
        c = np.zeros(prompt_len + t_a, dtype=np.int64)
        c[prompt_len - 1: prompt_len - 1 + t_a] = 1 + align_units(ex.tgt_frames, t_a)
        return c

    def fit(self, examples, y=None, log=None):
        seqs, masks, conds = [], [], []
        for ex in examples:
            p = self.prompt(ex)
            t_a = ex.target.shape[0]
            seqs.append(np.concatenate([p, ex.target[:, 0] + self.n_units]))
            masks.append(np.concatenate([np.zeros(p.size), np.ones(t_a)]))
            conds.append(self.conds(ex, p.size, t_a))
        self.config_ = self._lm_config(self.vocab_size, n_cond=self.n_units + 1)
        params = init_params(self.config_, self.seed)
        res = train_lm(params, self.config_, seqs, masks, self._train_config(), self.seed,
                       pad=self._special("<pad>"), conds=conds, stage="u-slm-ar", log=log)
        self.params_ = res.params
        self.losses_ = res.losses
        return self

    def predict_level1(self, ex, strategy="greedy", k=1, temperature=1.0, seed=0):
        """Exactly ``ex.t_a`` level-1 tokens, restricted to the codec range."""
        self._check()
        p = self.prompt(ex)
        t_a = ex.t_a
        if t_a == 0:
            return np.zeros(0, dtype=np.int64)
        if p.size + t_a > self.config_.max_seq + 1:
            raise StageError("u-slm-ar", f"prompt {p.size} + {t_a} frames exceeds max_seq "
                                         f"{self.config_.max_seq}")
        g = generate(self.params_, self.config_, p, t_a, strategy=strategy, k=k,
                     temperature=temperature, seed=seed,
                     allowed=(self.n_units, self.n_units + self.codebook_size),
                     cond=self.conds(ex, p.size, t_a))
        return g.tokens - self.n_units

    def predict(self, X):
        return [self.predict_level1(ex) for ex in X]

    @classmethod
    def load(cls, path):
        return cls._restore(path, LmConfig)[0]


class AcousticNAR(_TaskLM):
    """Non-autoregressive model for codec levels ``2..Q`` (the second U-SLM stage).

    Each training step draws one level ``q = 2 + step mod (Q - 1)`` for the
    whole batch and teacher-forces levels ``1..q-1``.
    """

    _kind = "u-slm-nar"

    def __init__(self, n_units=50, codebook_size=64, Q=6, prompt_frames=240, layers=2, heads=4,
                 model_dim=64, ffn_dim=256, max_seq=256, dropout=0.0, steps=500, batch_size=16,
                 lr=3e-3, warmup=50, seed=0):
        self.n_units = n_units
        self.codebook_size = codebook_size
        self.Q = Q
        self.prompt_frames = prompt_frames
        self.layers = layers
        self.heads = heads
        self.model_dim = model_dim
        self.ffn_dim = ffn_dim
        self.max_seq = max_seq
        self.dropout = dropout
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.warmup = warmup
        self.seed = seed

    def _nar_config(self):
        return NarConfig(layers=self.layers, heads=self.heads, model_dim=self.model_dim,
                         ffn_dim=self.ffn_dim, max_seq=self.max_seq, Q=self.Q,
                         codebook_size=self.codebook_size, n_units=self.n_units,
                         dropout=self.dropout)

    def _inputs(self, exs):
        units = [align_units(ex.tgt_frames, ex.target.shape[0]) for ex in exs]
        prompts = [ex.prompt[: self.prompt_frames] for ex in exs]
        tl = np.array([u.size for u in units])
        pl = np.array([p.shape[0] for p in prompts])
        b = len(exs)
        grid = np.zeros((b, tl.max(), self.Q), dtype=np.int64)
        pgrid = np.zeros((b, max(pl.max(), 0), self.Q), dtype=np.int64)
        for i, ex in enumerate(exs):
            grid[i, : tl[i]] = ex.target
            pgrid[i, : pl[i]] = prompts[i]
        return pad_batch(units, 0), grid, pgrid, tl, pl

    def fit(self, examples, y=None, log=None):
        examples = list(examples)
        self.config_ = self._nar_config()
        cfg = self.config_
        params = init_nar_params(cfg, self.seed)

        def loss(p, idx, rng, step):
            q = 2 + step % (cfg.Q - 1)
            units, grid, pgrid, tl, pl = self._inputs([examples[i] for i in idx])
            logits = nar_forward(p, cfg, units, grid, pgrid, q, tl, pl,
                                 rng=rng if cfg.dropout else None)
            w = (np.arange(units.shape[1])[None] < tl[:, None]).astype(np.float64)
            return ad.cross_entropy(logits, grid[:, :, q - 1], w)

        res = fit_params(params, len(examples), loss, self._train_config(), self.seed,
                         "u-slm-nar", log=log)
        self.params_ = res.params
        self.losses_ = res.losses
        return self

    def fill(self, ex, level1):
        """Complete a ``(T_a, Q)`` grid from level-1 tokens, one level at a time (greedy)."""
        self._check()
        level1 = np.asarray(level1, dtype=np.int64)
        t_a = level1.size
        grid = np.zeros((t_a, self.Q), dtype=np.int64)
        grid[:, 0] = level1
        if t_a == 0:
            return grid
        units = align_units(ex.tgt_frames, t_a)
        prompt = ex.prompt[: self.prompt_frames]
        for q in range(2, self.Q + 1):
            logits = nar_forward(self.params_, self.config_, units, grid, prompt, q)
            grid[:, q - 1] = np.argmax(logits.data, axis=-1)
        return grid

    def predict(self, X):
        return [self.fill(ex, ex.target[:, 0]) for ex in X]

    @classmethod
    def load(cls, path):
        return cls._restore(path, NarConfig)[0]
