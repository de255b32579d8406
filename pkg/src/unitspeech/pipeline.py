"""End-to-end speech-to-speech translation and the training that produces it.

Inference::

    waveform -> filterbank -> semantic units -> merge -> S2ST-1 prompt -> U-XLM
             -> target units -> duration LM -> expand -> U-SLM AR (level 1)
             -> U-SLM NAR (levels 2..Q) -> RVQ decode -> synthesis

Training (:func:`train_all`) fits, in order, the semantic codebook, the
codec, the vocabulary and U-XLM, the duration LM and the two U-SLM stages.
Every model after the semantic codebook is trained on units re-extracted
from the training audio, never on the generator's phone labels.
"""

import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .audio import Waveform, resample, write_wav
from .codec import Codec, CodecTokenGrid, RvqConfig, write_grid_file
from .corpus.templates import TEMPLATES, ParallelRecord, inference_prefix, write_corpus
from .corpus.toy import render_record
from .eval import corpus_bleu, unit_error_rate
from .exceptions import ContractError, StageError
from .frontend import SemanticUnitExtractor, UnitSequence, write_unit_file
from .lm.tasks import (AcousticAR, AcousticExample, AcousticNAR, DurationPredictor, UnitTranslator,
                       codec_frames)

STAGES = ("semantic", "codec", "u-xlm", "duration", "u-slm-ar", "u-slm-nar")
TRACE_STAGES = ("features", "units", "prompt", "u-xlm", "duration", "expand", "u-slm-ar",
                "u-slm-nar", "codec-decode")
ARTIFACTS = {"semantic": "semantic.ckpt", "codec": "codec.ckpt", "vocabulary": "vocab.txt",
             "u-xlm": "uxlm.ckpt", "duration": "duration.ckpt", "u-slm-ar": "uslm_ar.ckpt",
             "u-slm-nar": "uslm_nar.ckpt"}


@dataclass
class PipelineConfig:
    """Every training and decoding setting; stored in the manifest.

    ``uxlm``/``duration``/``ar``/``nar`` hold keyword overrides for the
    corresponding estimators.
    """

    n_units: int = 50
    frame_ms: int = 20
    n_bands: int = 40
    top_db: float = 20.0
    kmeans_iters: int = 100
    semantic_rate: int = 16000
    codec_rate: int = 24000
    codec_frame_rate: int = 80
    codec_dim: int = 64
    Q: int = 6
    codebook_size: int = 64
    rvq_iters: int = 30
    rvq_max_frames: int = 20000
    prompt_frames: int = 240
    d_max: int = 32
    src_lang: str = "Chinese"
    tgt_lang: str = "English"
    tasks: tuple = ("S2ST-1",)
    task_weights: dict = None
    decode_strategy: str = "greedy"
    decode_k: int = 1
    decode_temperature: float = 1.0
    uxlm: dict = field(default_factory=dict)
    duration: dict = field(default_factory=dict)
    ar: dict = field(default_factory=dict)
    nar: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tasks = tuple(self.tasks)
        unknown = [t for t in self.tasks if t not in TEMPLATES]
        if unknown:
            raise ContractError(f"unknown tasks {unknown}")
        if self.decode_strategy not in ("greedy", "top-k"):
            raise ContractError(f"unknown decode strategy {self.decode_strategy!r}")

    @property
    def rvq(self):
        return RvqConfig(Q=self.Q, codebook_size=self.codebook_size, frame_rate=self.codec_frame_rate,
                         sample_rate=self.codec_rate, dim=self.codec_dim)

    @property
    def frame_ratio(self):
        """Semantic frame rate over codec frame rate."""
        return (1000.0 / self.frame_ms) / self.codec_frame_rate


def toy_config(written=True, **overrides):
    """Desk-scale settings for the synthetic language pairs.

    Dict-valued ``overrides`` (``uxlm=dict(steps=10)``) are merged into
    the defaults. ``written`` trains U-XLM on all eight prompt tasks with ``S2ST-1``
    making up half of the draws; otherwise only ``S2ST-1`` is used and no
    text field is ever read.
    """
    tasks = tuple(TEMPLATES) if written else ("S2ST-1",)
    weights = {t: (7.0 if t == "S2ST-1" else 1.0) for t in tasks} if written else None
    base = dict(tasks=tasks, task_weights=weights,
                uxlm=dict(steps=2500, merges=200), duration=dict(steps=300),
                ar=dict(steps=600), nar=dict(steps=500))
    known = {f.name for f in fields(PipelineConfig)}
    for k, v in overrides.items():
        if k not in known:
            raise ContractError(f"unknown config key {k!r}")
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            base[k] = {**base[k], **v}
        else:
            base[k] = v
    return PipelineConfig(**base)


# -- manifest -------------------------------------------------------------------

MANIFEST_HEADER = "# unitspeech pipeline manifest v1"


@dataclass
class PipelineManifest:
    """Artifact paths (relative to ``root``), config, seed and completed stages."""

    root: Path
    config: PipelineConfig = field(default_factory=PipelineConfig)
    seed: int = 0
    artifacts: dict = field(default_factory=dict)
    completed: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def path_of(self, name):
        if name not in self.artifacts:
            raise ContractError(f"manifest has no artifact {name!r}")
        return Path(self.root) / self.artifacts[name]

    def save(self, path=None):
        path = Path(path or Path(self.root) / "manifest.txt")
        lines = [MANIFEST_HEADER, f"seed = {self.seed}",
                 f"src_lang = {self.config.src_lang}", f"tgt_lang = {self.config.tgt_lang}",
                 f"completed = {' '.join(self.completed)}"]
        lines += [f"artifact.{k} = {v}" for k, v in self.artifacts.items()]
        for f in fields(self.config):
            lines.append(f"config.{f.name} = {json.dumps(getattr(self.config, f.name), sort_keys=True)}")
        lines += [f"info.{k} = {v}" for k, v in self.info.items()]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise ContractError(f"manifest {path} does not exist")
        kv = {}
        for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            if " = " not in line:
                raise ContractError(f"{path}:{n}: expected 'key = value'")
            k, v = line.split(" = ", 1)
            kv[k.strip()] = v
        known = {f.name for f in fields(PipelineConfig)}
        cfg = {}
        for k, v in kv.items():
            if k.startswith("config."):
                name = k[len("config."):]
                if name not in known:
                    raise ContractError(f"{path}: unknown config key {name!r}")
                cfg[name] = json.loads(v)
        return cls(root=path.parent, config=PipelineConfig(**cfg), seed=int(kv.get("seed", 0)),
                   artifacts={k[len("artifact."):]: v for k, v in kv.items() if k.startswith("artifact.")},
                   completed=kv.get("completed", "").split(),
                   info={k[len("info."):]: v for k, v in kv.items() if k.startswith("info.")})

    def is_done(self, stage):
        names = ["vocabulary", "u-xlm"] if stage == "u-xlm" else [stage]
        return stage in self.completed and all(
            n in self.artifacts and self.path_of(n).exists() for n in names)


# -- training ---------------------------------------------------------------------

@dataclass
class _Speech:
    src: list
    tgt: list
    tgt_codec: list


def _render(records, audio, cfg):
    return _Speech([audio(r, "src", cfg.semantic_rate) for r in records],
                   [audio(r, "tgt", cfg.semantic_rate) for r in records],
                   [audio(r, "tgt", cfg.codec_rate) for r in records])


def relabel(records, extractor, src_waves, tgt_waves):
    """Copies of ``records`` whose units are extracted from their audio."""
    src_u = extractor.transform(src_waves)
    tgt_u = extractor.transform(tgt_waves)
    out = []
    for r, s, t in zip(records, src_u, tgt_u):
        out.append(ParallelRecord(r.utt_id, r.src_lang, r.tgt_lang, s, t, r.src_text, r.tgt_text,
                                  meta=dict(r.meta)))
    return out


def acoustic_examples(records, codec, speech, cfg):
    """U-SLM training items: prompt from the source audio, target grid from the target audio."""
    out = []
    for r, src, tgt in zip(records, speech.src, speech.tgt_codec):
        if len(r.src_unit) == 0 or len(r.tgt_unit) == 0:
            continue
        prompt = codec.encode(resample(src, cfg.codec_rate)).tokens
        target = codec.encode(tgt).tokens
        frames = r.tgt_unit.frame_units if r.tgt_unit.frame_units is not None else \
            np.repeat(r.tgt_unit.merged_units, r.tgt_unit.durations)
        if target.shape[0] != codec_frames(frames.size, cfg.frame_ratio):
            raise StageError("u-slm", f"{r.utt_id}: {target.shape[0]} codec frames for "
                                      f"{frames.size} semantic frames")
        out.append(AcousticExample(r.src_unit.merged_units, r.tgt_unit.merged_units, frames,
                                   prompt, target))
    return out


def _estimators(cfg, seed):
    return {
        "u-xlm": UnitTranslator(**{"tasks": cfg.tasks, "task_weights": cfg.task_weights,
                                   "seed": seed, **cfg.uxlm}),
        "duration": DurationPredictor(**{"n_units": cfg.n_units, "d_max": cfg.d_max, "seed": seed,
                                         **cfg.duration}),
        "u-slm-ar": AcousticAR(**{"n_units": cfg.n_units, "codebook_size": cfg.codebook_size,
                                  "prompt_frames": cfg.prompt_frames, "seed": seed, **cfg.ar}),
        "u-slm-nar": AcousticNAR(**{"n_units": cfg.n_units, "codebook_size": cfg.codebook_size,
                                    "Q": cfg.Q, "prompt_frames": cfg.prompt_frames, "seed": seed,
                                    **cfg.nar}),
    }


def _write_losses(root, stage, losses):
    d = Path(root) / "losses"
    d.mkdir(exist_ok=True)
    (d / f"{stage}.txt").write_text("".join(f"{x:.10g}\n" for x in losses), encoding="utf-8")


def _canon(cfg):
    return json.dumps(asdict(cfg), sort_keys=True)


def train_all(records, workdir, config=None, seed=0, audio=render_record, log=None):
    """Fit every stage on ``records`` and write ``workdir/manifest.txt``.

    ``audio(record, side, sample_rate)`` returns the source or target
    waveform. Stages already marked complete in an existing manifest (with
    their artifacts present) are loaded instead of retrained; the manifest
    is rewritten after each stage so an interrupted run resumes.
    """
    root = Path(workdir)
    root.mkdir(parents=True, exist_ok=True)
    mpath = root / "manifest.txt"
    if mpath.exists():
        m = PipelineManifest.load(mpath)
        same = config is None or _canon(m.config) == _canon(config)
        if not same or m.seed != seed:
            raise ContractError(f"{mpath} was written with a different config or seed")
    else:
        m = PipelineManifest(root, config or PipelineConfig(), seed)
    cfg = m.config
    say = log or (lambda s: None)
    timings = {}
    if not records:
        raise ContractError("train_all needs at least one record")
    m.info["n_records"] = len(records)

    def finish(stage, t0):
        if stage not in m.completed:
            m.completed.append(stage)
        timings[stage] = time.perf_counter() - t0
        m.save()
        say(f"stage {stage} done in {timings[stage]:.1f}s")

    t0 = time.perf_counter()
    speech = _render(records, audio, cfg)
    if m.is_done("semantic"):
        extractor = SemanticUnitExtractor.load(m.path_of("semantic"))
    else:
        extractor = SemanticUnitExtractor(cfg.n_units, cfg.frame_ms, cfg.n_bands, cfg.top_db,
                                          cfg.kmeans_iters, seed)
        extractor.fit(speech.src + speech.tgt)
        m.artifacts["semantic"] = ARTIFACTS["semantic"]
        extractor.save(m.path_of("semantic"))
    finish("semantic", t0)
    units = relabel(records, extractor, speech.src, speech.tgt)
    write_unit_file(root / "train_src.units", {r.utt_id: r.src_unit for r in units})
    write_unit_file(root / "train_tgt.units", {r.utt_id: r.tgt_unit for r in units})

    t0 = time.perf_counter()
    if m.is_done("codec"):
        codec = Codec.load(m.path_of("codec"))
    else:
        waves = speech.tgt_codec + [resample(w, cfg.codec_rate) for w in speech.src]
        codec = Codec.fit(waves, cfg.rvq, seed, cfg.rvq_iters, cfg.rvq_max_frames)
        m.artifacts["codec"] = ARTIFACTS["codec"]
        codec.save(m.path_of("codec"))
    finish("codec", t0)

    est = _estimators(cfg, seed)
    t0 = time.perf_counter()
    if not m.is_done("u-xlm"):
        uxlm = est["u-xlm"]
        write_corpus(root / "uxlm_corpus.txt", uxlm.samples(units))
        uxlm.fit(units, log=say)
        m.artifacts["vocabulary"] = ARTIFACTS["vocabulary"]
        m.artifacts["u-xlm"] = ARTIFACTS["u-xlm"]
        uxlm.save(m.path_of("u-xlm"), m.path_of("vocabulary"))
        _write_losses(root, "u-xlm", uxlm.losses_)
    finish("u-xlm", t0)

    t0 = time.perf_counter()
    if not m.is_done("duration"):
        dur = est["duration"].fit(units, log=say)
        m.artifacts["duration"] = ARTIFACTS["duration"]
        dur.save(m.path_of("duration"))
        _write_losses(root, "duration", dur.losses_)
    finish("duration", t0)

    examples = None
    for stage in ("u-slm-ar", "u-slm-nar"):
        t0 = time.perf_counter()
        if not m.is_done(stage):
            if examples is None:
                examples = acoustic_examples(units, codec, speech, cfg)
            model = est[stage].fit(examples, log=say)
            m.artifacts[stage] = ARTIFACTS[stage]
            model.save(m.path_of(stage))
            _write_losses(root, stage, model.losses_)
        finish(stage, t0)
    m.info.update({f"seconds.{k}": f"{v:.1f}" for k, v in timings.items()})
    m.save()
    return m


# -- inference ----------------------------------------------------------------------

@dataclass
class TranslationTrace:
    """Intermediate outputs of one run, in pipeline order.

    ``timings`` (seconds per stage) is informational and is not written by
    :meth:`dump`, so dumps of repeated runs are byte-identical.
    """

    utt_id: str = "utt"
    src_units: UnitSequence = None
    prompt: str = None
    raw_output: str = None
    tgt_units: np.ndarray = None
    tgt_durations: np.ndarray = None
    tgt_frames: np.ndarray = None
    acoustic_prompt: CodecTokenGrid = None
    codec_grid: CodecTokenGrid = None
    waveform: Waveform = None
    stages: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    failed_stage: str = None
    error: str = None
    timings: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.failed_stage is None

    def validate(self):
        """Check each present intermediate against its own invariants."""
        if self.stages != list(TRACE_STAGES[: len(self.stages)]) and self.stages:
            raise ContractError(f"stages {self.stages} are not in pipeline order")
        if self.src_units is not None:
            self.src_units.validate()
        if self.tgt_durations is not None:
            UnitSequence(self.src_units.vocab_size, self.tgt_units, self.tgt_durations,
                         self.tgt_frames).validate()
        if self.codec_grid is not None:
            self.codec_grid.validate()
            if self.codec_grid.T != self.diagnostics.get("codec_frames", self.codec_grid.T):
                raise ContractError("codec grid length differs from the conditioning length")
        return self

    def dump(self, directory):
        """Per-stage files: unit files, token grids, the prompt, the WAV and ``trace.txt``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        if self.src_units is not None:
            write_unit_file(d / "source.units", {self.utt_id: self.src_units})
        if self.tgt_durations is not None:
            write_unit_file(d / "target.units", {self.utt_id: UnitSequence(
                self.src_units.vocab_size, self.tgt_units, self.tgt_durations)})
        if self.prompt is not None:
            (d / "prompt.txt").write_text(self.prompt + (self.raw_output or "") + "\n", encoding="utf-8")
        if self.acoustic_prompt is not None:
            write_grid_file(d / "prompt.codec", {self.utt_id: self.acoustic_prompt})
        if self.codec_grid is not None:
            write_grid_file(d / "target.codec", {self.utt_id: self.codec_grid})
        if self.waveform is not None:
            write_wav(d / "output.wav", self.waveform)
        lines = [f"utt_id = {self.utt_id}", f"stages = {' '.join(self.stages)}",
                 f"failed_stage = {self.failed_stage or ''}", f"error = {self.error or ''}"]
        lines += [f"{k} = {v}" for k, v in sorted(self.diagnostics.items())]
        (d / "trace.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        return d


class Pipeline:
    """Loaded models for inference, checked for mutual consistency."""

    def __init__(self, manifest):
        self.manifest = manifest
        self.config = cfg = manifest.config
        missing = [s for s in STAGES if not manifest.is_done(s)]
        if missing:
            raise ContractError(f"manifest stages not trained: {missing}")
        self.extractor = SemanticUnitExtractor.load(manifest.path_of("semantic"))
        self.codec = Codec.load(manifest.path_of("codec"))
        self.translator = UnitTranslator.load(manifest.path_of("u-xlm"), manifest.path_of("vocabulary"))
        self.durations = DurationPredictor.load(manifest.path_of("duration"))
        self.ar = AcousticAR.load(manifest.path_of("u-slm-ar"))
        self.nar = AcousticNAR.load(manifest.path_of("u-slm-nar"))
        k = self.extractor.n_units
        checks = {"u-xlm unit block": self.translator.vocab_.unit_counts[0],
                  "duration n_units": self.durations.n_units, "u-slm-ar n_units": self.ar.n_units,
                  "u-slm-nar n_units": self.nar.n_units}
        for what, v in checks.items():
            if v != k:
                raise ContractError(f"{what} is {v} but the semantic codebook has {k} units")
        c = self.codec.cfg.codebook_size
        for what, v in {"u-slm-ar codebook": self.ar.codebook_size,
                        "u-slm-nar codebook": self.nar.codebook_size}.items():
            if v != c:
                raise ContractError(f"{what} is {v} but the codec has {c} entries")
        if self.nar.Q != self.codec.cfg.Q:
            raise ContractError(f"u-slm-nar has Q={self.nar.Q} but the codec has Q={self.codec.cfg.Q}")
        if self.codec.cfg.sample_rate != cfg.codec_rate:
            raise ContractError("codec sample rate differs from the manifest")

    @classmethod
    def load(cls, path):
        return cls(PipelineManifest.load(path))

    def _run(self, w, utt_id, identity, durations, strict):
        cfg = self.config
        tr = TranslationTrace(utt_id)
        current = [None, 0.0]

        def stage(name):
            if current[0] is not None:
                tr.timings[current[0]] = time.perf_counter() - current[1]
                tr.stages.append(current[0])
            current[0], current[1] = name, time.perf_counter()

        try:
            stage("features")
            w16 = resample(w, cfg.semantic_rate)
            feats = self.extractor._features([w16])
            stage("units")
            tr.src_units = self.extractor.transform([w16])[0] if len(feats[0]) else UnitSequence(
                cfg.n_units, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64))
            stage("prompt")
            rec = ParallelRecord(utt_id, cfg.src_lang, cfg.tgt_lang, src_unit=tr.src_units)
            if len(tr.src_units) == 0:
                tr.prompt, tr.raw_output = "", ""
            else:
                tr.prompt = inference_prefix(TEMPLATES["S2ST-1"], rec)
            stage("u-xlm")
            if len(tr.src_units) == 0:
                tr.tgt_units = np.zeros(0, np.int64)
            elif identity:
                tr.tgt_units = tr.src_units.merged_units.copy()
                tr.raw_output = ""
            else:
                try:
                    units, tr.raw_output = self.translator.translate(rec)
                except StageError as e:
                    tr.raw_output = e.raw
                    raise
                keep = np.r_[True, units[1:] != units[:-1]] if units.size else np.zeros(0, bool)
                tr.tgt_units = units[keep]
                tr.diagnostics["collapsed_repeats"] = int((~keep).sum())
            stage("duration")
            n = tr.tgt_units.size
            if n == 0:
                tr.tgt_durations = np.zeros(0, np.int64)
                tr.diagnostics["invalid_durations"] = 0
            elif durations == "ones":
                tr.tgt_durations = np.ones(n, np.int64)
                tr.diagnostics["invalid_durations"] = 0
            elif durations == "source" and identity:
                tr.tgt_durations = tr.src_units.durations.copy()
                tr.diagnostics["invalid_durations"] = 0
            else:
                tr.tgt_durations, bad = self.durations.predict_durations(
                    tr.src_units.merged_units, tr.src_units.durations, tr.tgt_units)
                tr.diagnostics["invalid_durations"] = bad
            stage("expand")
            tr.tgt_frames = np.repeat(tr.tgt_units, tr.tgt_durations)
            t_a = codec_frames(tr.tgt_frames.size, cfg.frame_ratio)
            tr.diagnostics.update(target_frames=int(tr.tgt_frames.size), codec_frames=t_a,
                                  source_frames=int(tr.src_units.n_frames),
                                  length_error=int(tr.tgt_frames.size) - int(tr.src_units.n_frames))
            stage("u-slm-ar")
            tr.acoustic_prompt = self.codec.encode(resample(w, cfg.codec_rate))
            ex = AcousticExample(tr.src_units.merged_units, tr.tgt_units, tr.tgt_frames,
                                 tr.acoustic_prompt.tokens)
            level1 = self.ar.predict_level1(ex, cfg.decode_strategy, cfg.decode_k,
                                            cfg.decode_temperature, self.manifest.seed) if t_a else \
                np.zeros(0, np.int64)
            stage("u-slm-nar")
            tr.codec_grid = CodecTokenGrid(self.nar.fill(ex, level1), self.codec.cfg.codebook_size)
            stage("codec-decode")
            tr.waveform = self.codec.decode(tr.codec_grid)
            tr.validate()
            stage(None)
        except (StageError, ContractError) as e:
            tr.failed_stage = e.stage if isinstance(e, StageError) else current[0]
            tr.error = str(e)
            if strict:
                err = e if isinstance(e, StageError) else StageError(tr.failed_stage, str(e))
                err.trace = tr
                raise err from (None if err is e else e)
        return tr

    def translate_speech(self, w, utt_id="utt", durations="model", strict=True):
        """Run the full path on ``w``; ``durations="ones"`` bypasses the duration LM.

        On failure the trace (with ``failed_stage`` set) is attached to the
        raised :class:`StageError` as ``.trace``; with ``strict=False`` it is
        returned instead.
        """
        return self._run(w, utt_id, False, durations, strict)

    def resynthesize(self, w, utt_id="utt", durations="model", strict=True):
        """Same path with identity translation (target units := source units).

        ``durations`` is ``"model"`` (duration LM), ``"ones"`` (bypass) or
        ``"source"``; ``trace.diagnostics["length_error"]`` reports the
        expanded length minus the source frame count.
        """
        return self._run(w, utt_id, True, durations, strict)

    def reextract(self, w):
        """Merged units of a synthesised waveform, for unit-level scoring."""
        return self.extractor.transform([resample(w, self.config.semantic_rate)])[0].merged_units


def evaluate(pipeline, records, audio=render_record, synth_limit=None, log=None):
    """Toy-scale metrics against units extracted from the reference target audio.

    Returns a dict with unit-BLEU of the U-XLM output, duration accuracy on
    positions where the predicted unit matches the reference, mean absolute
    expanded-length error with the duration model and with durations forced
    to 1, U-XLM failures, and (for the first ``synth_limit`` records)
    unit-BLEU of units re-extracted from the synthesised audio plus the
    resynthesis unit error rate.
    """
    cfg = pipeline.config
    say = log or (lambda s: None)
    hyps, refs = [], []
    dur_ok = dur_n = 0
    err_model, err_ones = [], []
    failures = 0
    n_synth = len(records) if synth_limit is None else min(synth_limit, len(records))
    re_hyps, re_refs, resyn = [], [], []
    tr = None
    for i, r in enumerate(records):
        src = audio(r, "src", cfg.semantic_rate)
        ref = pipeline.extractor.transform([audio(r, "tgt", cfg.semantic_rate)])[0]
        refs.append(ref.merged_units.tolist())
        synth = i < n_synth
        try:
            if synth:
                tr = pipeline.translate_speech(src, r.utt_id)
            else:
                rec = ParallelRecord(r.utt_id, cfg.src_lang, cfg.tgt_lang,
                                     src_unit=pipeline.extractor.transform([src])[0])
                units, _ = pipeline.translator.translate(rec)
                durs = pipeline.durations.predict_durations(
                    rec.src_unit.merged_units, rec.src_unit.durations, units)[0] if units.size else units
                tr = TranslationTrace(r.utt_id, src_units=rec.src_unit, tgt_units=units,
                                      tgt_durations=durs)
        except StageError:
            failures += 1
            hyps.append([])
            err_model.append(ref.n_frames)
            err_ones.append(ref.n_frames)
            continue
        hyps.append(tr.tgt_units.tolist())
        m = min(tr.tgt_units.size, len(ref))
        same = tr.tgt_units[:m] == ref.merged_units[:m]
        dur_n += int(same.sum())
        dur_ok += int((tr.tgt_durations[:m][same] == ref.durations[:m][same]).sum())
        err_model.append(abs(int(tr.tgt_durations.sum()) - ref.n_frames))
        err_ones.append(abs(int(tr.tgt_units.size) - ref.n_frames))
        if synth:
            re_hyps.append(pipeline.reextract(tr.waveform).tolist())
            re_refs.append(ref.merged_units.tolist())
            rs = pipeline.resynthesize(src, r.utt_id)
            resyn.append(unit_error_rate(pipeline.reextract(rs.waveform), rs.src_units.merged_units))
        if (i + 1) % 50 == 0:
            say(f"evaluated {i + 1}/{len(records)}")
    out = {"n": len(records), "uxlm_failures": failures,
           "unit_bleu": corpus_bleu(hyps, refs).bleu,
           "duration_accuracy": dur_ok / dur_n if dur_n else 0.0,
           "length_error_model": float(np.mean(err_model)),
           "length_error_ones": float(np.mean(err_ones)),
           "n_synth": n_synth}
    if re_hyps:
        out["reextracted_unit_bleu"] = corpus_bleu(re_hyps, re_refs).bleu
        out["resynthesis_uer"] = float(np.mean(resyn))
    return out
