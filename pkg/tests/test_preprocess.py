import numpy as np
import pytest

from pwave_vae.preprocess import (
    ArtifactReport,
    NoiseProfile,
    augment_record,
    detect_artifacts,
    fgn_autocovariance,
    fit_noise_profile,
    generate_fbm,
    hurst_rs,
)
from pwave_vae.signal_model import Record, RecordError


def record_from(axis0, p=None, n_axes=3, seed=0):
    rng = np.random.default_rng(seed)
    n = len(axis0)
    samples = np.vstack([axis0] + [rng.standard_normal(n) for _ in range(n_axes - 1)])
    return Record(samples=samples, p_arrival=p, record_id="t")


def brute_flat_blocks(x, win, thr):
    """Reference scan: indices of blocks judged flat."""
    blocks = [x[i : i + win] for i in range(0, len(x) - win + 1, win)]
    ptp = np.array([b.max() - b.min() for b in blocks])
    live = ptp[ptp > 0]
    t = thr * np.median(live) if live.size else 0.0
    return [i for i, v in enumerate(ptp) if v == 0 or v < t]


class TestDetectArtifacts:
    def test_constant_pre_p(self):
        x = np.r_[np.full(500, 3.25), np.random.default_rng(0).standard_normal(500)]
        rep = detect_artifacts(record_from(x, p=500))
        assert rep.flat_segments == [(0, 500)]
        assert rep.clean_pre_event == (0, 0)

    def test_white_noise_no_segments(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal(1500)
        rep = detect_artifacts(record_from(x, p=1000))
        assert brute_flat_blocks(x[:1000], 50, 0.05) == []
        assert rep.flat_segments == []
        assert rep.clean_pre_event == (0, 1000)

    def test_half_constant(self):
        rng = np.random.default_rng(5)
        x = np.r_[np.zeros(250), rng.standard_normal(250), rng.standard_normal(300)]
        rep = detect_artifacts(record_from(x, p=500))
        assert brute_flat_blocks(x[:500], 50, 0.05) == [0, 1, 2, 3, 4]
        assert rep.flat_segments == [(0, 250)]
        assert rep.clean_pre_event == (250, 500)

    def test_unaligned_flatline_gets_exact_edges(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(1200)
        x[137:411] = -0.5
        rep = detect_artifacts(record_from(x, p=1000))
        assert rep.flat_segments == [(137, 411)]

    def test_never_past_p(self):
        x = np.zeros(1000)
        x[600:] = np.random.default_rng(0).standard_normal(400)
        x[700:] = 0.0  # flat after P must be ignored
        rep = detect_artifacts(record_from(x, p=650))
        assert all(e <= 650 for _, e in rep.flat_segments)

    def test_short_region(self):
        with pytest.raises(RecordError):
            detect_artifacts(record_from(np.zeros(300), p=40), win_len=50)

    @pytest.mark.parametrize("kw", [{"win_len": 1}, {"rel_threshold": 0.0}, {"rel_threshold": 1.0}])
    def test_bad_params(self, kw):
        with pytest.raises(ValueError):
            detect_artifacts(record_from(np.zeros(300), p=200), **kw)


class TestNoiseProfile:
    def test_invariants(self):
        with pytest.raises(ValueError):
            NoiseProfile(1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            NoiseProfile(0.5, 0.0, 1.0)
        with pytest.raises(ValueError):
            NoiseProfile(0.5, 1.0, -1.0)

    @pytest.mark.parametrize("h", [0.3, 0.5, 0.7, 0.8])
    def test_hurst_round_trip(self, h):
        x = generate_fbm(NoiseProfile(h, 1.0, 1.0), 4096, seed=0)
        assert abs(fit_noise_profile(x).hurst - h) <= 0.1

    def test_fbm_h07_in_band(self):
        x = generate_fbm(NoiseProfile(0.7, 1.0, 2.0), 4096, seed=3)
        assert 0.6 <= fit_noise_profile(x).hurst <= 0.8

    def test_dominant_period_sinusoid(self):
        n = 1000
        t = np.arange(n) / 100.0
        prof = fit_noise_profile(np.sin(2 * np.pi * 2.0 * t))
        # FFT oracle: bin spacing 0.1 Hz, peak at bin 20
        df = 100.0 / n
        assert 1 / (2.0 + df) <= prof.dominant_period <= 1 / (2.0 - df)

    def test_amplitude_scale(self):
        x = np.random.default_rng(0).normal(0, 3.0, 2000)
        assert fit_noise_profile(x).amplitude_scale == pytest.approx(np.std(x, ddof=1))

    def test_constant_rejected(self):
        with pytest.raises(ValueError, match="zero variance"):
            fit_noise_profile(np.full(500, 2.0))

    def test_too_short(self):
        with pytest.raises(ValueError):
            fit_noise_profile(np.random.default_rng(0).standard_normal(127))

    def test_rs_needs_data(self):
        with pytest.raises(ValueError):
            hurst_rs(np.ones(20))


class TestGenerateFbm:
    def test_white_at_half(self):
        x = generate_fbm(NoiseProfile(0.5, 1.0, 1.0), 8192, seed=4)
        lag1 = np.corrcoef(x[:-1], x[1:])[0, 1]
        assert abs(lag1) < 0.05

    def test_deterministic(self):
        p = NoiseProfile(0.65, 0.4, 0.2)
        np.testing.assert_array_equal(generate_fbm(p, 1000, seed=9), generate_fbm(p, 1000, seed=9))
        assert not np.array_equal(generate_fbm(p, 1000, seed=9), generate_fbm(p, 1000, seed=10))

    @pytest.mark.parametrize("h", [0.3, 0.5, 0.7])
    def test_variance(self, h):
        x = generate_fbm(NoiseProfile(h, 1.0, 2.5), 4096, seed=1)
        assert x.var() == pytest.approx(2.5**2, rel=0.10)

    def test_autocovariance_matches_theory(self):
        h = 0.75
        x = np.concatenate(
            [generate_fbm(NoiseProfile(h, 1.0, 1.0), 4096, seed=s) for s in range(8)]
        )
        gamma = fgn_autocovariance(h, 4)
        emp = [np.mean(x[: len(x) - k] * x[k:]) for k in range(4)]
        np.testing.assert_allclose(emp, gamma, atol=0.05)

    def test_length_one(self):
        assert generate_fbm(NoiseProfile(0.5, 1.0, 1.0), 1, seed=0).shape == (1,)

    def test_band_emphasis_changes_spectrum(self):
        p = NoiseProfile(0.5, 0.2, 1.0)  # 5 Hz
        plain = generate_fbm(p, 4096, seed=0)
        shaped = generate_fbm(p, 4096, seed=0, band_emphasis=3.0)
        f = np.fft.rfftfreq(4096, 0.01)
        band = (f > 4) & (f < 6)
        ratio = lambda x: np.sum(np.abs(np.fft.rfft(x))[band] ** 2) / np.sum(np.abs(np.fft.rfft(x)) ** 2)
        assert ratio(shaped) > 1.5 * ratio(plain)


class TestAugment:
    def test_flatline_prefix_padded_to_30s(self):
        rng = np.random.default_rng(0)
        n = 2500
        x = rng.standard_normal((3, n))
        x[:, :200] = 0.0
        rec = Record(samples=x, p_arrival=1200, record_id="a")
        rep = detect_artifacts(rec)
        assert rep.flat_segments == [(0, 200)]
        out = augment_record(rec, rep, NoiseProfile(0.6, 0.5, 1.0), 30.0, seed=1)
        assert out.length == 3000
        assert out.p_arrival == 1700
        # first 7 s synthetic: 5 s prepended + 2 s replaced flatline
        assert not np.any(out.samples[:, :700] == 0.0)
        np.testing.assert_array_equal(out.samples[:, 700:], rec.samples[:, 200:])
        assert out.samples[0, out.p_arrival] == rec.samples[0, rec.p_arrival]

    def test_noop_on_clean_30s(self):
        rec = Record(samples=np.random.default_rng(1).standard_normal((3, 3000)), p_arrival=900)
        out = augment_record(rec, ArtifactReport([], (0, 900)), NoiseProfile(0.5, 1.0, 1.0), 30.0)
        np.testing.assert_array_equal(out.samples, rec.samples)
        assert out.p_arrival == 900

    def test_cannot_shrink(self):
        rec = Record(samples=np.zeros((3, 3500)), p_arrival=900)
        with pytest.raises(RecordError, match="longer than target"):
            augment_record(rec, ArtifactReport(), NoiseProfile(0.5, 1.0, 1.0), 30.0)

    def test_interior_segment_replaced(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((3, 3000))
        x[:, 300:500] = 1.5
        rec = Record(samples=x, p_arrival=2000)
        rep = detect_artifacts(rec)
        assert rep.flat_segments == [(300, 500)]
        out = augment_record(rec, rep, [NoiseProfile(0.5, 1.0, 1.0)] * 3, 30.0, seed=2)
        keep = np.ones(3000, bool)
        keep[300:500] = False
        np.testing.assert_array_equal(out.samples[:, keep], rec.samples[:, keep])
        assert np.all(out.samples[:, 300:500] != 1.5)

    def test_deterministic(self):
        rec = Record(samples=np.random.default_rng(1).standard_normal((3, 2000)), p_arrival=900)
        prof = NoiseProfile(0.5, 1.0, 1.0)
        a = augment_record(rec, ArtifactReport(), prof, 30.0, seed=5)
        b = augment_record(rec, ArtifactReport(), prof, 30.0, seed=5)
        np.testing.assert_array_equal(a.samples, b.samples)
