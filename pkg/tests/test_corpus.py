import re
from pathlib import Path

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from unitspeech.corpus import (TEMPLATES, ParallelRecord, ToyLanguageSpec, Vocabulary, build_vocab,
                               check_toy_records, gen_toy_corpus, gen_toy_pair, inference_prefix,
                               parse_completion, parse_unit_markup, read_corpus, read_records,
                               render_parts, render_prompt, render_record, sample_prompts,
                               translate_units, write_corpus, write_records)
from unitspeech.exceptions import ContractError
from unitspeech.frontend import UnitSequence, extract_features, kmeans_fit, quantize

GOLDEN = Path(__file__).parent / "golden"


def fixture_record():
    return ParallelRecord(
        "golden-1", "Chinese", "English",
        src_unit=UnitSequence(500, [5, 17, 3], [2, 1, 4]),
        tgt_unit=UnitSequence(500, [12, 40, 7, 9], [1, 1, 2, 1]),
        src_text="ni hao ma", tgt_text="how are you")


@pytest.mark.parametrize("task", sorted(TEMPLATES))
def test_rendering_matches_golden_file_byte_for_byte(task):
    expected = (GOLDEN / f"{task}.txt").read_bytes()
    got = (render_prompt(TEMPLATES[task], fixture_record()) + "\n").encode("utf-8")
    assert got == expected


def test_all_eight_templates_present():
    assert sorted(TEMPLATES) == sorted(["ASR-u2t", "ASR-t2u", "MT"] + [f"S2ST-{i}" for i in range(1, 6)])


@pytest.mark.parametrize("task", sorted(TEMPLATES))
def test_rendered_prompt_matches_template_regex(task):
    t = TEMPLATES[task]
    pat = re.escape(t.pattern)
    for ph in (r"\[src\ lang\]", r"\[tgt\ lang\]", r"\[lang\]"):
        pat = pat.replace(ph, "(Chinese|English)")
    pat = re.sub(r"\\\{\w+\\\}", r'[^"]+', pat)
    assert re.fullmatch(pat, render_prompt(t, fixture_record()))


def test_missing_field_names_task_and_field():
    r = fixture_record()
    r.tgt_text = ""
    with pytest.raises(ContractError, match=r"MT.*tgt_text"):
        render_prompt(TEMPLATES["MT"], r)


def test_prefix_ends_at_final_colon_quote():
    prefix, completion = render_parts(TEMPLATES["S2ST-1"], fixture_record())
    assert prefix.endswith('English unit: "')
    assert completion == ' <u:12> <u:40> <u:7> <u:9> "'
    assert parse_unit_markup(parse_completion(completion)).tolist() == [12, 40, 7, 9]
    r = fixture_record()
    r.tgt_unit = None
    assert inference_prefix(TEMPLATES["S2ST-1"], r) == prefix


def test_asr_prompt2_renders_text_before_unit():
    s = render_prompt(TEMPLATES["ASR-t2u"], fixture_record())
    assert s.index("ni hao ma") < s.index("<u:5>")


def test_second_extractor_block_markup():
    r = fixture_record()
    r.tgt_unit_block = 1
    assert "<u1:12>" in render_prompt(TEMPLATES["S2ST-1"], r)


def test_sample_prompts_skips_tasks_with_missing_fields():
    r = fixture_record()
    r.src_text = r.tgt_text = None
    tasks = {s[1] for s in sample_prompts([r])}
    assert tasks == {"S2ST-1"}


def test_corpus_file_round_trip(tmp_path):
    samples = sample_prompts([fixture_record()], weights={"S2ST-1": 3.0})
    write_corpus(tmp_path / "c.txt", samples)
    back = read_corpus(tmp_path / "c.txt")
    assert len(back) == 8
    for (r, task, p, c, w), (rid, task2, p2, c2, w2) in zip(samples, back):
        assert (r.utt_id, task, p, c, w) == (rid, task2, p2, c2, w2)


# -- vocabulary ---------------------------------------------------------------

def test_no_merge_vocabulary_size():
    v = build_vocab(["hello world"], [50], merges=0)
    assert len(v) == 256 + 50 + 4


def test_two_extractors_give_1500_unit_tokens():
    v = build_vocab([], [500, 1000], merges=0)
    units = [t for t in range(len(v)) if v.is_unit(t)]
    assert len(units) == 1500
    assert units == list(range(units[0], units[0] + 1500))
    assert units[0] >= v.n_text and units[-1] < v.special_base


def test_merges_learned_and_counted():
    v = build_vocab(["ab ab ab abc"] * 3, [10], merges=3)
    assert len(v) == 256 + 3 + 10 + 4
    assert v.merges[0] == (ord("a"), ord("b"))
    assert v.decode([v.n_text - 1]) == " abc"
    assert len(v.encode("ab")) == 1


def test_merges_stop_when_no_pairs_remain():
    v = build_vocab(["a"], [], merges=10)
    assert v.merges == []


def test_unit_markup_is_single_token():
    v = build_vocab([], [500], merges=0)
    ids = v.encode("<u:499>")
    assert ids.tolist() == [v.unit_token(499)]
    assert v.decode(ids) == "<u:499>"


def test_empty_string():
    v = build_vocab([], [5], merges=0)
    assert v.encode("").tolist() == []
    assert v.decode([]) == ""


@pytest.mark.parametrize("bad, offset", [("ab<u:12", 2), ("é<u:x>", 2), ("<u:05>", 0), ("<u0:1>", 0)])
def test_malformed_markup_reports_byte_offset(bad, offset):
    v = build_vocab([], [50], merges=0)
    with pytest.raises(ContractError, match=f"byte offset {offset}"):
        v.encode(bad)


def test_out_of_range_markup_rejected():
    v = build_vocab([], [50], merges=0)
    with pytest.raises(ContractError, match="outside"):
        v.encode("<u:50>")
    with pytest.raises(ContractError, match="outside"):
        v.encode("<u1:0>")


def test_emoji_round_trip_with_merges():
    v = build_vocab(["héllo wörld 😀 <u:3> 😀😀"], [10], merges=20)
    s = "😀 héllo <u:3> <u:9> 🙈 wörld"
    assert v.decode(v.encode(s)) == s


_TEXT = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=60)


@settings(max_examples=1000, deadline=None)
@given(_TEXT, st.lists(st.integers(0, 49), max_size=4))
def test_round_trip_random_strings(s, units):
    v = _PROPERTY_VOCAB
    s = s + "".join(f" <u:{u}>" for u in units)
    assume(not re.search(r"<u\d*:", re.sub(r"<u:(0|[1-9]\d*)>", "", s)))
    assert v.decode(v.encode(s)) == s


_PROPERTY_VOCAB = build_vocab(["the quick brown fox jumps over the lazy dog", "ni hao ma " * 3], [50], merges=30)


def test_vocab_file_round_trip(tmp_path):
    v = build_vocab(["the cat sat on the mat"] * 2, [50, 20], merges=8)
    v.save(tmp_path / "v.txt")
    w = Vocabulary.load(tmp_path / "v.txt")
    assert w.merges == v.merges and w.unit_counts == v.unit_counts and len(w) == len(v)
    s = "the <u:3> mat <u1:19>"
    assert np.array_equal(w.encode(s), v.encode(s))
    assert (tmp_path / "v.txt").read_text().startswith("# vocab v1\n")


def test_vocab_file_rejects_wrong_magic(tmp_path):
    (tmp_path / "v.txt").write_text("nope\n")
    with pytest.raises(ContractError):
        Vocabulary.load(tmp_path / "v.txt")


# -- toy language pairs -------------------------------------------------------

def test_toy_target_is_bijective_map_of_source():
    spec = ToyLanguageSpec()
    f = spec.unit_map
    assert sorted(f.tolist()) == list(range(50))
    for r in gen_toy_pair(spec, 50, seed=1):
        assert np.array_equal(r.tgt_unit.merged_units, f[r.src_unit.merged_units])
        assert np.all(r.tgt_unit.durations == 2)
        r.src_unit.validate()
        r.tgt_unit.validate()


def test_toy_generation_is_deterministic():
    spec = ToyLanguageSpec()
    a, b = gen_toy_pair(spec, 20, seed=7), gen_toy_pair(spec, 20, seed=7)
    for x, y in zip(a, b):
        assert x.utt_id == y.utt_id and x.src_text == y.src_text and x.meta == y.meta
        assert np.array_equal(x.src_unit.durations, y.src_unit.durations)


def test_held_out_split_is_disjoint():
    train, test = gen_toy_corpus(ToyLanguageSpec(), 300, 50, seed=0)
    assert not {r.utt_id for r in train} & {r.utt_id for r in test}
    key = lambda r: tuple(r.src_unit.merged_units.tolist())
    assert not {key(r) for r in train} & {key(r) for r in test}


def test_independent_checker_accepts_and_catches():
    spec = ToyLanguageSpec()
    recs = gen_toy_pair(spec, 30, seed=2)
    assert check_toy_records(spec, recs) == []
    recs[4].tgt_unit.merged_units[0] = (recs[4].tgt_unit.merged_units[0] + 1) % 50
    assert any("maps" in p for p in check_toy_records(spec, recs))


def test_unwritten_mode_has_no_text():
    spec = ToyLanguageSpec(written=False, src_lang="English", tgt_lang="Spanish")
    r = gen_toy_pair(spec, 1)[0]
    assert r.src_text is None and r.tgt_text is None
    assert [s[1] for s in sample_prompts([r])] == ["S2ST-1"]


def test_per_unit_duration_rule():
    table = np.arange(50) % 3 + 1
    spec = ToyLanguageSpec(tgt_duration=tuple(table))
    for r in gen_toy_pair(spec, 20):
        assert np.array_equal(r.tgt_unit.durations, table[r.tgt_unit.merged_units])
    assert translate_units(spec, [0, 1]).tolist() == spec.unit_map[:2].tolist()


def test_toy_audio_gives_pure_units():
    spec = ToyLanguageSpec()
    recs = gen_toy_pair(spec, 200, seed=3)
    feats = [extract_features(render_record(r, s, 16000)) for r in recs for s in ("src", "tgt")]
    cb = kmeans_fit(feats, 50, seed=0)
    pairs = set()
    for r in recs[:60]:
        for side, u in (("src", r.src_unit), ("tgt", r.tgt_unit)):
            q = quantize(extract_features(render_record(r, side, 16000)), cb).frame_units
            pairs |= set(zip(u.frame_units.tolist(), q.tolist()))
    phones = {p for p, _ in pairs}
    assert len(pairs) == len(phones)


def test_polarity_speakers_share_features():
    r = gen_toy_pair(ToyLanguageSpec(), 1)[0]
    r.meta["gain"] = 1.0
    a = render_record(r, "src", 16000)
    r.meta["gain"] = -1.0
    b = render_record(r, "src", 16000)
    assert np.array_equal(a.samples, -b.samples)
    assert np.array_equal(extract_features(a).frames, extract_features(b).frames)


def test_record_file_round_trip(tmp_path):
    recs = gen_toy_pair(ToyLanguageSpec(), 5, seed=4)
    write_records(tmp_path / "r.jsonl", recs)
    back = read_records(tmp_path / "r.jsonl")
    for a, b in zip(recs, back):
        assert a.utt_id == b.utt_id and a.tgt_text == b.tgt_text and a.meta == b.meta
        assert np.array_equal(a.tgt_unit.merged_units, b.tgt_unit.merged_units)
