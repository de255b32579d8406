import numpy as np
import pytest
from sklearn.cluster import KMeans

from unitspeech.audio import Waveform
from unitspeech.codec import (Codec, CodecTokenGrid, ResidualVQ, RvqCodebooks, RvqConfig, analyze,
                              read_grid_file, rvq_decode, rvq_encode, rvq_fit, synthesize,
                              write_grid_file)
from unitspeech.eval import snr
from unitspeech.exceptions import ContractError, ShapeError
from unitspeech.frontend import Codebook


def tone(freq, seconds=1.0, sr=24000, amp=0.5):
    t = np.arange(int(seconds * sr)) / sr
    return Waveform(sr, amp * np.sin(2 * np.pi * freq * t))


def test_default_config_matches_reference_codec():
    cfg = RvqConfig()
    assert (cfg.Q, cfg.codebook_size, cfg.hop) == (6, 1024, 300)


def test_three_seconds_is_240_frames():
    assert analyze(tone(440, 3.0)).shape == (240, 64)


@pytest.mark.parametrize("n", [1, 299, 300, 301, 12345])
def test_token_rate_is_ceil_samples_over_hop(n):
    assert analyze(Waveform(24000, np.zeros(n))).shape[0] == -(-n // 300)


def test_zero_waveform_gives_zero_embeddings_and_back():
    e = analyze(Waveform(24000, np.zeros(900)))
    assert np.all(e == 0)
    assert np.all(synthesize(e).samples == 0)


def test_sample_rate_mismatch():
    with pytest.raises(ContractError):
        analyze(Waveform(16000, np.zeros(10)))


@pytest.mark.parametrize("freq", [440.0, 441.3, 1234.5, 2200.0])
def test_analysis_synthesis_snr_above_30db(freq):
    w = tone(freq)
    back = synthesize(analyze(w))
    assert len(back) == -(-len(w) // 300) * 300
    assert snr(w, Waveform(24000, back.samples[: len(w)])) > 30.0


def test_full_dim_transform_is_invertible():
    cfg = RvqConfig(dim=300)
    x = np.random.default_rng(0).uniform(-1, 1, 1000)
    y = synthesize(analyze(Waveform(24000, x), cfg), cfg).samples
    assert np.abs(y[:1000] - x).max() < 1e-12
    assert np.abs(y[1000:]).max() < 1e-12


def test_exact_cover_has_zero_residual():
    rng = np.random.default_rng(1)
    pts = rng.standard_normal((1024, 8))
    data = pts[rng.integers(0, 1024, 3000)]
    data = np.vstack([pts, data])
    cfg = RvqConfig(Q=1, dim=8)
    cbs = rvq_fit(data, cfg, seed=0, iters=5)
    assert cbs.residual_energy == [0.0]
    g = rvq_encode(data, cbs)
    assert np.array_equal(rvq_decode(g, cbs), data)


def test_constructed_two_level_sum_encodes_exactly():
    c1 = np.array([[0.0, 0], [10, 0], [0, 10]])
    c2 = np.array([[0.0, 0], [1, 0], [0, 1]])
    cbs = RvqCodebooks([Codebook(c1), Codebook(c2)])
    e = (c1[2] + c2[1])[None, :]
    g = rvq_encode(e, cbs)
    assert g.tokens.tolist() == [[2, 1]]
    assert np.array_equal(rvq_decode(g, cbs) - e, np.zeros((1, 2)))


def _clustered(seed, n=2000, dim=6, n_coarse=8):
    rng = np.random.default_rng(seed)
    axes = np.vstack([np.eye(dim), -np.eye(dim)])
    coarse = axes[:n_coarse] * 60
    fine = axes[::-1][:4] * 5
    a = rng.integers(0, len(coarse), n)
    b = rng.integers(0, len(fine), n)
    return coarse[a] + fine[b] + rng.standard_normal((n, dim)) * 0.05


def test_residual_energy_non_increasing_fit_and_encode():
    x = _clustered(2)
    cfg = RvqConfig(Q=4, codebook_size=8, dim=6)
    cbs = rvq_fit(x, cfg, seed=3, iters=50)
    assert all(b <= a for a, b in zip(cbs.residual_energy, cbs.residual_energy[1:]))
    held = _clustered(2)[:500] + np.random.default_rng(9).standard_normal((500, 6)) * 0.01
    g = rvq_encode(held, cbs)
    mse = [np.mean(np.sum((held - rvq_decode(g, cbs, q)) ** 2, axis=1)) for q in range(5)]
    assert all(b <= a for a, b in zip(mse, mse[1:]))


def test_two_level_fit_matches_independent_kmeans_oracle():
    # well separated data, so both implementations reach the same partitions
    x = _clustered(4, n_coarse=4)
    cfg = RvqConfig(Q=2, codebook_size=4, dim=6)
    cbs = rvq_fit(x, cfg, seed=0, iters=100)
    r = x.copy()
    energy = []
    for _ in range(2):
        km = KMeans(4, n_init=10, random_state=0).fit(r)
        r = r - km.cluster_centers_[km.labels_]
        energy.append(np.mean(np.sum(r ** 2, axis=1)))
    assert cbs.residual_energy[0] == pytest.approx(energy[0], abs=1e-9)
    assert cbs.residual_energy[1] == pytest.approx(energy[1], abs=1e-9)


def test_decode_level_bounds_and_identity_cases():
    x = _clustered(5, n=300)
    cbs = rvq_fit(x, RvqConfig(Q=3, codebook_size=8, dim=6), iters=20)
    g = rvq_encode(x, cbs)
    assert np.all(rvq_decode(g, cbs, 0) == 0)
    assert np.array_equal(rvq_decode(g, cbs, 1), cbs.levels[0].centroids[g.tokens[:, 0]])
    assert np.array_equal(rvq_encode(x, cbs).tokens, g.tokens)
    mse = np.mean(np.sum((rvq_decode(g, cbs) - x) ** 2, axis=1))
    assert mse <= cbs.residual_energy[-1] + 1e-12
    with pytest.raises(ContractError):
        rvq_decode(g, cbs, 4)


def test_decode_rejects_out_of_range_index_with_position():
    cbs = RvqCodebooks([Codebook(np.zeros((4, 2))), Codebook(np.ones((4, 2)))])
    with pytest.raises(ContractError, match=r"frame 1, level 2"):
        rvq_decode(CodecTokenGrid([[0, 0], [0, 4]], 4), cbs)


def test_rvq_fit_needs_enough_frames():
    with pytest.raises(ContractError):
        rvq_fit(np.zeros((10, 4)), RvqConfig(Q=1, codebook_size=16, dim=4))
    with pytest.raises(ShapeError):
        rvq_encode(np.zeros((3, 5)), rvq_fit(_clustered(0, 100, 4), RvqConfig(Q=1, codebook_size=4, dim=4)))


def test_grid_file_and_codebook_round_trip(tmp_path):
    grids = {"a": CodecTokenGrid([[1, 2, 3], [4, 5, 6]], 8), "b": CodecTokenGrid(np.zeros((0, 3)), 8)}
    write_grid_file(tmp_path / "g.txt", grids)
    back = read_grid_file(tmp_path / "g.txt")
    assert back["a"].tokens.tolist() == [[1, 2, 3], [4, 5, 6]] and back["b"].T == 0
    waves = [tone(f, 0.5, amp=0.3) for f in (400, 800, 1600)]
    codec = Codec.fit(waves, RvqConfig(Q=2, codebook_size=16), iters=10)
    codec.save(tmp_path / "c.ckpt")
    again = Codec.load(tmp_path / "c.ckpt")
    assert again.cfg == codec.cfg
    for a, b in zip(again.codebooks.levels, codec.codebooks.levels):
        assert a.centroids.tobytes() == b.centroids.tobytes()
    g1, g2 = codec.encode(waves[0]), again.encode(waves[0])
    assert np.array_equal(g1.tokens, g2.tokens)
    assert len(codec.decode(g1)) == g1.T * 300


def test_residual_vq_estimator():
    x = _clustered(6, n=400)
    vq = ResidualVQ(n_levels=2, codebook_size=8, seed=1).fit(x)
    idx = vq.transform(x)
    assert idx.shape == (400, 2)
    assert vq.inverse_transform(idx).shape == x.shape
    assert vq.get_params()["n_levels"] == 2
