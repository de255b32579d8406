"""``unitspeech`` command line: one verb per stage plus the end-to-end paths.

Exit status is 0 on success, 2 on usage errors (unknown verb or flag,
bad flag value) and 1 when a stage fails; failures print one line
``error: stage=<name> <message>`` to stderr.
"""

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .audio import read_wav, resample, write_wav
from .codec import Codec, RvqConfig, read_grid_file, write_grid_file
from .corpus.templates import TEMPLATES, read_corpus, sample_prompts, write_corpus
from .corpus.toy import ToyLanguageSpec, gen_toy_corpus, read_records, render_record, write_records
from .corpus.vocab import Vocabulary, build_vocab
from .eval import corpus_bleu, unit_error_rate, write_report
from .exceptions import ContractError, DivergenceError, StageError
from .frontend import SemanticUnitExtractor, read_unit_file, write_unit_file
from .lm.tasks import UnitTranslator
from .pipeline import Pipeline, evaluate, toy_config, train_all

log = logging.getLogger("unitspeech")


class UsageError(Exception):
    pass


def _utt(path):
    return Path(path).stem


def _map(fn, items, jobs):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _records_audio(path, rate):
    recs = read_records(path)
    return [render_record(r, side, rate) for r in recs for side in ("src", "tgt")]


def _inputs(args, rate):
    waves = [read_wav(p) for p in args.inputs or []]
    if getattr(args, "records", None):
        waves += _records_audio(args.records, rate)
    if not waves:
        raise UsageError("give --in WAV files or --records")
    return waves


# -- verbs ------------------------------------------------------------------------

def cmd_toy_gen(args):
    spec = ToyLanguageSpec(n_units=args.n_units, written=not args.unwritten,
                           src_lang=args.src_lang, tgt_lang=args.tgt_lang, seed=args.seed)
    train, test = gen_toy_corpus(spec, args.pairs, args.test, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records(out / "train.jsonl", train)
    write_records(out / "test.jsonl", test)
    if args.wav:
        (out / "wav").mkdir(exist_ok=True)
        for r in train + test:
            for side in ("src", "tgt"):
                write_wav(out / "wav" / f"{r.utt_id}_{side}.wav", render_record(r, side, args.sample_rate))
    log.info("wrote %d train / %d test records to %s", len(train), len(test), out)


def cmd_units_fit(args):
    waves = [resample(w, 16000) for w in _inputs(args, 16000)]
    ext = SemanticUnitExtractor(args.units, args.frame_ms, args.n_bands, args.top_db, args.iters, args.seed)
    ext.fit(waves).save(args.out)
    log.info("k-means inertia %.6g after %d iterations", ext.codebook_.inertia_history[-1],
             len(ext.codebook_.inertia_history))


def cmd_units_encode(args):
    ext = SemanticUnitExtractor.load(args.codebook)
    units = _map(lambda p: ext.transform([resample(read_wav(p), 16000)])[0], args.inputs, args.jobs)
    write_unit_file(args.out, {_utt(p): u for p, u in zip(args.inputs, units)})


def cmd_codec_fit(args):
    cfg = RvqConfig(Q=args.levels, codebook_size=args.codebook_size, dim=args.dim,
                    sample_rate=args.sample_rate, frame_rate=args.frame_rate)
    waves = [resample(w, cfg.sample_rate) for w in _inputs(args, cfg.sample_rate)]
    codec = Codec.fit(waves, cfg, args.seed, args.iters, args.max_frames)
    codec.save(args.out)
    log.info("residual energy per level: %s", " ".join(f"{e:.4g}" for e in codec.codebooks.residual_energy))


def cmd_codec_encode(args):
    codec = Codec.load(args.codec)
    grids = _map(lambda p: codec.encode(resample(read_wav(p), codec.cfg.sample_rate)), args.inputs, args.jobs)
    write_grid_file(args.out, {_utt(p): g for p, g in zip(args.inputs, grids)})


def cmd_codec_decode(args):
    codec = Codec.load(args.codec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for utt, grid in read_grid_file(args.inputs[0]).items():
        write_wav(out / f"{utt}.wav", codec.decode(grid, args.levels))


def cmd_corpus_build(args):
    recs = read_records(args.records)
    tasks = args.tasks.split(",")
    for t in tasks:
        if t not in TEMPLATES:
            raise UsageError(f"unknown task {t!r}; choose from {', '.join(TEMPLATES)}")
    weights = json.loads(args.weights) if args.weights else None
    samples = sample_prompts(recs, tasks, weights)
    write_corpus(args.out, samples)
    log.info("wrote %d prompts", len(samples))


def cmd_vocab_build(args):
    rows = read_corpus(args.corpus)
    vocab = build_vocab([p + c for _, _, p, c, _ in rows], [int(k) for k in args.units.split(",")],
                        args.merges, args.seed)
    vocab.save(args.out)
    log.info("vocabulary of %d tokens", len(vocab))


def cmd_lm_train(args):
    vocab = Vocabulary.load(args.vocab)
    rows = read_corpus(args.corpus)
    m = UnitTranslator(tasks=tuple(sorted({t for _, t, *_ in rows})), merges=0, layers=args.layers,
                       heads=args.heads, model_dim=args.model_dim, ffn_dim=args.ffn_dim,
                       max_seq=args.max_seq, steps=args.steps, batch_size=args.batch_size, lr=args.lr,
                       warmup=args.warmup, seed=args.seed)
    m.fit_prompts([(t, p, c, w) for _, t, p, c, w in rows], vocab.unit_counts, vocab=vocab,
                  log=log.info)
    m.save(args.out)
    (Path(str(args.out) + ".losses")).write_text("".join(f"{x:.10g}\n" for x in m.losses_))


def cmd_lm_generate(args):
    m = UnitTranslator.load(args.model, args.vocab)
    m.max_new = args.max_new
    prompts = [args.prompt] if args.prompt is not None else \
        Path(args.prompts).read_text(encoding="utf-8").splitlines()
    out = []
    for p in prompts:
        text, _ = m.complete(p, args.strategy, args.k, args.temperature, args.seed)
        out.append(text)
    data = "".join(t + "\n" for t in out)
    if args.out:
        Path(args.out).write_text(data, encoding="utf-8")
    else:
        sys.stdout.write(data)


def _overrides(pairs):
    out = {}
    for kv in pairs or []:
        if "=" not in kv:
            raise UsageError(f"--set expects key=value, got {kv!r}")
        k, v = kv.split("=", 1)
        try:
            val = json.loads(v)
        except json.JSONDecodeError:
            val = v
        if "." in k:
            group, name = k.split(".", 1)
            out.setdefault(group, {})[name] = val
        else:
            out[k] = val
    return out


def cmd_train_all(args):
    recs = read_records(args.records)
    cfg = toy_config(written=not args.unwritten, **_overrides(args.set))
    m = train_all(recs, args.out, cfg, args.seed, log=log.info)
    log.info("manifest %s", Path(m.root) / "manifest.txt")


def _trace_dir(args):
    return Path(args.trace) if args.trace else Path(args.out).with_suffix(".trace")


def cmd_s2st(args):
    p = Pipeline.load(args.manifest)
    try:
        tr = p.translate_speech(read_wav(args.inputs[0]), _utt(args.inputs[0]))
    except StageError as e:
        if getattr(e, "trace", None) is not None:
            e.trace.dump(_trace_dir(args))
        raise
    write_wav(args.out, tr.waveform)
    tr.dump(_trace_dir(args))


def cmd_resynth(args):
    p = Pipeline.load(args.manifest)
    tr = p.resynthesize(read_wav(args.inputs[0]), _utt(args.inputs[0]), durations=args.durations)
    write_wav(args.out, tr.waveform)
    tr.dump(_trace_dir(args))
    log.info("expanded %d frames for %d source frames", tr.diagnostics["target_frames"],
             tr.diagnostics["source_frames"])


def cmd_eval(args):
    if args.manifest:
        if not args.records:
            raise UsageError("--manifest needs --records")
        res = evaluate(Pipeline.load(args.manifest), read_records(args.records),
                       synth_limit=args.synth_limit, log=log.info)
        write_report(args.out, res)
        return
    if not (args.hyp and args.ref):
        raise UsageError("give --hyp and --ref unit files, or --manifest and --records")
    hyp, ref = read_unit_file(args.hyp), read_unit_file(args.ref)
    missing = sorted(set(ref) - set(hyp))
    if missing:
        raise ContractError(f"{len(missing)} reference utterances have no hypothesis, e.g. {missing[0]}")
    ids = sorted(ref)
    rep = corpus_bleu([hyp[i].merged_units for i in ids], [ref[i].merged_units for i in ids])
    write_report(args.out, rep)
    uer = float(np.mean([unit_error_rate(hyp[i].merged_units, ref[i].merged_units) for i in ids]))
    write_report(str(args.out) + ".uer", {"kind": "unit-error-rate", "n": len(ids), "uer": uer})


# -- parser ---------------------------------------------------------------------------

def _common(p):
    p.add_argument("--seed", type=int, default=0, help="seed for every stochastic step")
    p.add_argument("--jobs", type=int, default=1, help="maximum worker threads")
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    ap = argparse.ArgumentParser(prog="unitspeech", formatter_class=fmt,
                                 description="Unit-based speech-to-speech translation at desk scale")
    sub = ap.add_subparsers(dest="verb", metavar="VERB")
    sub.required = True

    def verb(name, fn, help_):
        p = sub.add_parser(name, help=help_, description=help_, formatter_class=fmt)
        p.set_defaults(func=fn)
        _common(p)
        return p

    p = verb("toy-gen", cmd_toy_gen, "generate a synthetic bijective language pair")
    p.add_argument("--pairs", type=int, default=2000, help="training pairs")
    p.add_argument("--test", type=int, default=200, help="held-out pairs")
    p.add_argument("--n-units", type=int, default=50, help="phones per language")
    p.add_argument("--src-lang", default="Chinese", help="source language name")
    p.add_argument("--tgt-lang", default="English", help="target language name")
    p.add_argument("--unwritten", action="store_true", help="omit all text fields")
    p.add_argument("--wav", action="store_true", help="also write source/target WAV files")
    p.add_argument("--sample-rate", type=int, default=16000, help="WAV sample rate")
    p.add_argument("--out", default="toy", help="output directory")

    p = verb("units-fit", cmd_units_fit, "fit the semantic k-means codebook")
    p.add_argument("--in", dest="inputs", nargs="+", help="WAV files")
    p.add_argument("--records", help="toy records (JSONL) to render instead of WAVs")
    p.add_argument("--units", type=int, default=500, help="number of clusters K")
    p.add_argument("--frame-ms", type=int, default=20, help="frame length in ms")
    p.add_argument("--n-bands", type=int, default=40, help="mel bands")
    p.add_argument("--top-db", type=float, default=None, help="dynamic-range floor in dB")
    p.add_argument("--iters", type=int, default=100, help="maximum Lloyd iterations")
    p.add_argument("--out", required=True, help="codebook checkpoint")

    p = verb("units-encode", cmd_units_encode, "WAV files to a unit file")
    p.add_argument("--codebook", required=True, help="semantic codebook checkpoint")
    p.add_argument("--in", dest="inputs", nargs="+", required=True, help="WAV files")
    p.add_argument("--out", required=True, help="unit file")

    p = verb("codec-fit", cmd_codec_fit, "fit the residual vector quantiser")
    p.add_argument("--in", dest="inputs", nargs="+", help="WAV files")
    p.add_argument("--records", help="toy records (JSONL) to render instead of WAVs")
    p.add_argument("--levels", type=int, default=6, help="quantiser levels Q")
    p.add_argument("--codebook-size", type=int, default=1024, help="entries per level")
    p.add_argument("--dim", type=int, default=64, help="embedding dimension")
    p.add_argument("--sample-rate", type=int, default=24000, help="codec sample rate")
    p.add_argument("--frame-rate", type=int, default=80, help="codec frames per second")
    p.add_argument("--iters", type=int, default=100, help="k-means iterations per level")
    p.add_argument("--max-frames", type=int, default=None, help="subsample training frames")
    p.add_argument("--out", required=True, help="codec checkpoint")

    p = verb("codec-encode", cmd_codec_encode, "WAV files to a token-grid file")
    p.add_argument("--codec", required=True, help="codec checkpoint")
    p.add_argument("--in", dest="inputs", nargs="+", required=True, help="WAV files")
    p.add_argument("--out", required=True, help="token-grid file")

    p = verb("codec-decode", cmd_codec_decode, "token-grid file to WAV files")
    p.add_argument("--codec", required=True, help="codec checkpoint")
    p.add_argument("--in", dest="inputs", nargs=1, required=True, help="token-grid file")
    p.add_argument("--levels", type=int, default=None, help="levels to decode (default all)")
    p.add_argument("--out-dir", required=True, help="output directory")

    p = verb("corpus-build", cmd_corpus_build, "render prompt-template training corpora")
    p.add_argument("--records", required=True, help="records (JSONL)")
    p.add_argument("--tasks", default="S2ST-1", help="comma-separated template names")
    p.add_argument("--weights", default=None, help='JSON task weights, e.g. {"S2ST-1": 2}')
    p.add_argument("--out", required=True, help="corpus file (a .manifest sidecar is written too)")

    p = verb("vocab-build", cmd_vocab_build, "learn the byte-level vocabulary")
    p.add_argument("--corpus", required=True, help="corpus file")
    p.add_argument("--units", default="500", help="comma-separated K per unit extractor")
    p.add_argument("--merges", type=int, default=200, help="byte-pair merges")
    p.add_argument("--out", required=True, help="vocabulary file")

    p = verb("lm-train", cmd_lm_train, "train the unit translation LM on a corpus")
    p.add_argument("--corpus", required=True, help="corpus file")
    p.add_argument("--vocab", required=True, help="vocabulary file")
    p.add_argument("--layers", type=int, default=2, help="transformer layers")
    p.add_argument("--heads", type=int, default=4, help="attention heads")
    p.add_argument("--model-dim", type=int, default=64, help="model width")
    p.add_argument("--ffn-dim", type=int, default=256, help="feed-forward width")
    p.add_argument("--max-seq", type=int, default=128, help="maximum sequence length")
    p.add_argument("--steps", type=int, default=1500, help="optimizer steps")
    p.add_argument("--batch-size", type=int, default=32, help="sequences per step")
    p.add_argument("--lr", type=float, default=3e-3, help="peak learning rate")
    p.add_argument("--warmup", type=int, default=50, help="linear warmup steps")
    p.add_argument("--out", required=True, help="checkpoint")

    p = verb("lm-generate", cmd_lm_generate, "complete prompt prefixes with a trained LM")
    p.add_argument("--model", required=True, help="checkpoint")
    p.add_argument("--vocab", required=True, help="vocabulary file")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--prompt", help="one prompt prefix")
    g.add_argument("--prompts", help="file with one prompt prefix per line")
    p.add_argument("--strategy", choices=("greedy", "top-k"), default="greedy", help="decoding")
    p.add_argument("--k", type=int, default=10, help="top-k candidates")
    p.add_argument("--temperature", type=float, default=1.0, help="sampling temperature")
    p.add_argument("--max-new", type=int, default=64, help="maximum new tokens")
    p.add_argument("--out", default=None, help="output file (default stdout)")

    p = verb("train-all", cmd_train_all, "train every stage on toy records and write a manifest")
    p.add_argument("--records", required=True, help="training records (JSONL)")
    p.add_argument("--unwritten", action="store_true", help="S2ST-1 prompts only, no text")
    p.add_argument("--set", nargs="*", metavar="KEY=VALUE",
                   help="config overrides, e.g. uxlm.steps=500 codebook_size=32")
    p.add_argument("--out", required=True, help="output directory")

    p = verb("s2st", cmd_s2st, "translate one utterance end to end")
    p.add_argument("--in", dest="inputs", nargs=1, required=True, help="source WAV")
    p.add_argument("--manifest", required=True, help="pipeline manifest")
    p.add_argument("--out", required=True, help="output WAV")
    p.add_argument("--trace", default=None, help="trace directory (default: <out>.trace)")

    p = verb("resynth", cmd_resynth, "resynthesise an utterance through its own units")
    p.add_argument("--in", dest="inputs", nargs=1, required=True, help="source WAV")
    p.add_argument("--manifest", required=True, help="pipeline manifest")
    p.add_argument("--durations", choices=("model", "ones", "source"), default="model",
                   help="duration source")
    p.add_argument("--out", required=True, help="output WAV")
    p.add_argument("--trace", default=None, help="trace directory (default: <out>.trace)")

    p = verb("eval", cmd_eval, "unit-BLEU / unit error rate reports")
    p.add_argument("--hyp", help="hypothesis unit file")
    p.add_argument("--ref", help="reference unit file")
    p.add_argument("--manifest", help="evaluate a trained pipeline instead")
    p.add_argument("--records", help="held-out records (JSONL) for --manifest")
    p.add_argument("--synth-limit", type=int, default=None, help="utterances to synthesise fully")
    p.add_argument("--out", required=True, help="report stem (.txt and .json are written)")
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    if args.jobs < 1:
        ap.error("--jobs must be >= 1")
    try:
        args.func(args)
    except UsageError as e:
        ap.error(str(e))
    except StageError as e:
        msg = str(e).removeprefix(f"[{e.stage}] ")
        print(f"error: stage={e.stage} {msg}", file=sys.stderr)
        return 1
    except DivergenceError as e:
        print(f"error: stage={e.stage or args.verb} training diverged at step {e.step} "
              f"(loss={e.loss})", file=sys.stderr)
        return 1
    except (ContractError, OSError, ValueError) as e:
        print(f"error: stage={args.verb} {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
