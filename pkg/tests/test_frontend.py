import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unitspeech.audio import Waveform, read_wav, resample, write_wav
from unitspeech.exceptions import ContractError, ShapeError
from unitspeech.frontend import (Codebook, FeatureSequence, SemanticUnitExtractor, UnitKMeans,
                                 UnitSequence, expand_units, extract_features, kmeans_fit,
                                 mel_filterbank, merge_units, quantize, read_unit_file,
                                 write_unit_file)


def brute_nearest(frames, centroids):
    out = []
    for f in frames:
        d = [float(np.sum((f - c) ** 2)) for c in centroids]
        out.append(int(np.argmin(d)))
    return np.array(out)


def test_silence_gives_log_floor_frames():
    f = extract_features(Waveform(16000, np.zeros(16000)))
    assert len(f) == 50
    assert np.all(f.frames == f.frames[0])


def test_one_second_is_fifty_frames():
    assert len(extract_features(Waveform(16000, np.zeros(16000 + 319)))) == 50


def test_empty_waveform_gives_empty_features():
    f = extract_features(Waveform(16000, np.zeros(0)))
    assert f.frames.shape == (0, 40)


def test_frame_must_be_whole_samples():
    with pytest.raises(ContractError):
        extract_features(Waveform(16000, np.zeros(100)), frame_ms=0.01)


@pytest.mark.parametrize("band", [0, 5, 17, 39])
def test_sine_at_band_centre_dominates(band):
    _, centres = mel_filterbank(16000, 1024, 40)
    t = np.arange(8000) / 16000
    f = extract_features(Waveform(16000, 0.5 * np.sin(2 * np.pi * centres[band] * t)))
    assert np.all(f.frames.argmax(axis=1) == band)


def test_kmeans_exact_fit_on_k_points():
    pts = np.random.default_rng(0).standard_normal((6, 3))
    cb = kmeans_fit(pts, 6, seed=3)
    assert cb.inertia_history[-1] == 0.0
    assert sorted(map(tuple, cb.centroids)) == sorted(map(tuple, pts))


def test_kmeans_two_blobs():
    rng = np.random.default_rng(1)
    a = rng.normal([0, 0], 0.3, (200, 2))
    b = rng.normal([10, 10], 0.3, (200, 2))
    cb = kmeans_fit(np.vstack([a, b]), 2, seed=0)
    got = sorted(map(tuple, np.round(cb.centroids, 6)))
    want = sorted([tuple(a.mean(0)), tuple(b.mean(0))])
    assert np.abs(np.array(got) - np.array(want)).max() < 0.1


@pytest.mark.parametrize("seed", range(5))
def test_kmeans_inertia_non_increasing(seed):
    x = np.random.default_rng(seed).standard_normal((400, 4))
    cb = kmeans_fit(x, 12, iters=20, seed=seed)
    h = np.array(cb.inertia_history)
    assert np.all(np.diff(h) <= 0)


def test_kmeans_too_few_distinct_frames():
    with pytest.raises(ContractError, match="K=3.*got 2"):
        kmeans_fit(np.array([[0.0], [0.0], [1.0], [1.0]]), 3)


def test_quantize_exact_and_tie_rules():
    cent = np.zeros((8, 2))
    cent[:, 0] = np.arange(8)
    cb = Codebook(cent)
    assert quantize(np.array([[7.0, 0.0]]), cb).frame_units.tolist() == [7]
    cb2 = Codebook(np.array([[9.0, 9], [9, 9], [0, 0], [9, 9], [9, 9], [2, 0]]))
    assert quantize(np.array([[1.0, 0.0]]), cb2).frame_units.tolist() == [2]


def test_quantize_matches_brute_force():
    rng = np.random.default_rng(2)
    cb = Codebook(rng.standard_normal((17, 5)))
    frames = rng.standard_normal((300, 5))
    assert np.array_equal(quantize(FeatureSequence(frames), cb).frame_units,
                          brute_nearest(frames, cb.centroids))


def test_quantize_dim_mismatch():
    with pytest.raises(ShapeError):
        quantize(np.zeros((2, 3)), Codebook(np.zeros((2, 4))))


@pytest.mark.parametrize("frames,units,durs", [
    ([5, 5, 5, 2, 2, 9], [5, 2, 9], [3, 2, 1]),
    ([], [], []),
    ([1, 2, 1, 2], [1, 2, 1, 2], [1, 1, 1, 1]),
])
def test_merge_units_examples(frames, units, durs):
    m = merge_units(UnitSequence(10, frame_units=frames))
    assert m.merged_units.tolist() == units and m.durations.tolist() == durs
    m.validate()


def test_expand_units_example_and_error():
    assert expand_units(UnitSequence(5, [3, 4], [2, 3])).tolist() == [3, 3, 4, 4, 4]
    with pytest.raises(ContractError, match="position 1"):
        expand_units(UnitSequence(5, [3, 4], [2, 0]))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 6), max_size=60))
def test_expand_merge_identity(frames):
    u = merge_units(UnitSequence(7, frame_units=frames))
    assert expand_units(u).tolist() == frames


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(1, 5)), max_size=30))
def test_merge_expand_identity(pairs):
    units, durs = [], []
    for u, d in pairs:
        if units and units[-1] == u:
            continue
        units.append(u)
        durs.append(d)
    m = UnitSequence(7, units, durs).validate()
    back = merge_units(UnitSequence(7, frame_units=expand_units(m)))
    assert back.merged_units.tolist() == units and back.durations.tolist() == durs


@pytest.mark.parametrize("k", [500, 1000])
def test_unit_ids_below_k_for_paper_cluster_counts(k):
    rng = np.random.default_rng(k)
    feats = rng.standard_normal((k + 500, 8))
    cb = kmeans_fit(feats, k, iters=3, seed=0)
    units = quantize(rng.standard_normal((2000, 8)), cb).frame_units
    assert units.max() < k and units.min() >= 0


def test_unit_file_round_trip(tmp_path):
    recs = {"u1": UnitSequence(50, [5, 2, 9], [3, 2, 1]), "u2": UnitSequence(50, [], [])}
    path = tmp_path / "x.units"
    write_unit_file(path, recs)
    back = read_unit_file(path)
    assert list(back) == ["u1", "u2"]
    assert back["u1"].merged_units.tolist() == [5, 2, 9]
    assert back["u1"].durations.tolist() == [3, 2, 1]
    assert len(back["u2"]) == 0
    assert path.read_text().splitlines()[1] == "u1\t50\t5 2 9\t3 2 1"


def test_wav_round_trip(tmp_path):
    x = np.round(np.sin(np.arange(800) / 7) * 0.5 * 32767) / 32767
    w = Waveform(24000, x)
    write_wav(tmp_path / "a.wav", w)
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == 24000
    assert np.abs(back.samples - x).max() < 1e-4


def test_resample_preserves_length_ratio():
    w = Waveform(16000, np.zeros(1600))
    assert len(resample(w, 24000)) == 2400
    assert resample(w, 16000) is w


def test_estimators_follow_sklearn_conventions():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((100, 3))
    km = UnitKMeans(n_clusters=4, seed=1).fit(x)
    assert km.get_params()["n_clusters"] == 4
    assert km.predict(x).shape == (100,)
    assert km.transform(x).shape == (100, 4)
    t = np.arange(16000) / 16000
    waves = [Waveform(16000, 0.3 * np.sin(2 * np.pi * f * t)) for f in (300, 900, 2000)]
    ext = SemanticUnitExtractor(n_units=3, seed=0).fit(waves)
    out = ext.transform(waves)
    assert [len(u) for u in out] == [1, 1, 1]
    assert len({int(u.merged_units[0]) for u in out}) == 3
