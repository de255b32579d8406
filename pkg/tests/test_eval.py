import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unitspeech.eval import SNR_MAX, corpus_bleu, edit_distance, snr, unit_error_rate, write_report
from unitspeech.exceptions import ContractError


def test_identity_is_100():
    refs = [[1, 2, 3, 4, 5], [6, 7, 8, 9]]
    assert corpus_bleu(refs, refs).bleu == pytest.approx(100.0)


def test_short_hypothesis_gets_brevity_penalty():
    rep = corpus_bleu([[1]], [[1, 2, 3, 4]])
    assert rep.brevity_penalty == pytest.approx(math.exp(1 - 4))
    assert rep.brevity_penalty < 1


def test_hand_counted_three_sentence_corpus():
    # counted by hand before the implementation existed:
    # h1 = a b c d e   vs r1 = a b c d f   -> 1g 4/5, 2g 3/4, 3g 2/3, 4g 1/2
    # h2 = a a b       vs r2 = a b b       -> 1g 2/3 (a clipped to 1), 2g 1/2, 3g 0/1
    # h3 = x y         vs r3 = x y z       -> 1g 2/2, 2g 1/1
    # totals: 1g 8/10, 2g 5/7, 3g 2/4, 4g 1/2; c = 10, r = 11
    a, b, c, d, e, f, x, y, z = range(9)
    hyps = [[a, b, c, d, e], [a, a, b], [x, y]]
    refs = [[a, b, c, d, f], [a, b, b], [x, y, z]]
    rep = corpus_bleu(hyps, refs)
    assert rep.matches == [8, 5, 2, 1]
    assert rep.totals == [10, 7, 4, 2]
    assert (rep.hyp_len, rep.ref_len) == (10, 11)
    expected = 100 * math.exp(1 - 11 / 10) * (0.8 * 5 / 7 * 0.5 * 0.5) ** 0.25
    assert rep.bleu == pytest.approx(expected, rel=1e-12)


def test_zero_higher_order_matches_are_add_one_smoothed():
    rep = corpus_bleu([[1, 2, 3, 4]], [[4, 3, 2, 1]])
    assert rep.precisions[0] == 1.0
    assert rep.precisions[1:] == [1 / 4, 1 / 3, 1 / 2]


def test_no_unigram_match_is_zero():
    assert corpus_bleu([[1, 2]], [[3, 4]]).bleu == 0.0


def test_empty_corpus_and_count_mismatch():
    with pytest.raises(ContractError):
        corpus_bleu([], [])
    with pytest.raises(ContractError):
        corpus_bleu([[1]], [[1], [2]])


def _brute_bleu(hyps, refs):
    m, t = [0] * 4, [0] * 4
    for h, r in zip(hyps, refs):
        for n in range(1, 5):
            hg = [tuple(h[i:i + n]) for i in range(len(h) - n + 1)]
            rg = [tuple(r[i:i + n]) for i in range(len(r) - n + 1)]
            used = [False] * len(rg)
            for g in hg:
                for j, q in enumerate(rg):
                    if not used[j] and q == g:
                        used[j] = True
                        m[n - 1] += 1
                        break
            t[n - 1] += len(hg)
    return m, t


_SEQS = st.lists(st.lists(st.integers(0, 4), min_size=1, max_size=9), min_size=1, max_size=5)


@settings(max_examples=200, deadline=None)
@given(_SEQS, st.data())
def test_counts_match_greedy_matching_oracle(hyps, data):
    refs = [data.draw(st.lists(st.integers(0, 4), min_size=1, max_size=9)) for _ in hyps]
    rep = corpus_bleu(hyps, refs)
    assert (rep.matches, rep.totals) == _brute_bleu(hyps, refs)
    assert 0.0 <= rep.bleu <= 100.0
    if rep.bleu > 0:
        geo = math.exp(sum(math.log(p) for p in rep.precisions) / 4)
        assert rep.bleu == pytest.approx(100 * rep.brevity_penalty * geo)


@settings(max_examples=100, deadline=None)
@given(_SEQS, st.randoms(use_true_random=False))
def test_corpus_order_does_not_matter(hyps, rnd):
    refs = [list(reversed(h)) + [0] for h in hyps]
    order = list(range(len(hyps)))
    rnd.shuffle(order)
    a = corpus_bleu(hyps, refs).bleu
    b = corpus_bleu([hyps[i] for i in order], [refs[i] for i in order]).bleu
    assert a == b


def test_uer_definition_cases():
    assert unit_error_rate([1, 2, 3], [1, 2, 3]) == 0.0
    assert unit_error_rate([1, 9, 3, 4], [1, 2, 3, 4]) == 0.25
    assert unit_error_rate([1, 2], []) == 2.0
    assert unit_error_rate([], []) == 0.0
    assert unit_error_rate([1] * 10, [1]) == 9.0


def _full_matrix_dp(a, b):
    d = np.zeros((len(a) + 1, len(b) + 1), dtype=int)
    d[:, 0] = np.arange(len(a) + 1)
    d[0, :] = np.arange(len(b) + 1)
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i, j] = min(d[i - 1, j] + 1, d[i, j - 1] + 1, d[i - 1, j - 1] + (a[i - 1] != b[j - 1]))
    return int(d[-1, -1])


_UNITS = st.lists(st.integers(0, 5), max_size=15)


@settings(max_examples=300, deadline=None)
@given(_UNITS, _UNITS)
def test_edit_distance_matches_full_matrix_oracle(a, b):
    assert edit_distance(a, b) == _full_matrix_dp(a, b)


@settings(max_examples=300, deadline=None)
@given(_UNITS, _UNITS, _UNITS)
def test_edit_distance_triangle_inequality(a, b, c):
    assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)


def test_snr_cases():
    t = np.arange(16000) / 16000
    ref = np.sin(2 * np.pi * 440 * t)
    assert snr(ref, ref) == SNR_MAX
    assert snr(ref, np.zeros_like(ref)) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ContractError):
        snr(np.zeros(4), np.ones(4))


def test_snr_with_noise_of_known_power():
    t = np.arange(48000) / 16000
    ref = 0.5 * np.sin(2 * np.pi * 440 * t)
    noise = np.random.default_rng(0).standard_normal(t.size)
    noise *= 0.05 / np.sqrt(np.mean(noise ** 2))
    # signal power 0.125, noise power 0.0025 -> 10 log10(50)
    assert snr(ref, ref + noise) == pytest.approx(10 * math.log10(50), abs=0.1)


def test_snr_pads_short_test_signal():
    assert snr([1.0, 1.0], [1.0]) == pytest.approx(10 * math.log10(2))


def test_report_files(tmp_path):
    rep = corpus_bleu([[1, 2, 3]], [[1, 2, 3]])
    write_report(tmp_path / "r", rep)
    txt = (tmp_path / "r.txt").read_text()
    assert "kind = unit-BLEU" in txt and "bleu = 100.000000" in txt
    assert json.loads((tmp_path / "r.json").read_text())["bleu"] == pytest.approx(100.0)
