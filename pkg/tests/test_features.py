import numpy as np
import pytest

from avsep.dsp import stft
from avsep.features import (MIC_PAIRS, angle_feature, assemble_input, cos_ipd, extract_features, load_features,
                            lps, mic_delays, save_features, steering_vector)
from avsep.room.geometry import ArrayGeometry

ARRAY = ArrayGeometry()


def _random_spec(rng, m=9, t=6, f=257):
    return rng.normal(size=(m, t, f)) + 1j * rng.normal(size=(m, t, f))


def test_lps_examples():
    spec = np.ones((2, 257), dtype=complex)
    assert np.allclose(lps(spec), np.log(1 + 1e-10))
    assert lps(np.zeros((1, 3)))[0, 0] == pytest.approx(np.log(1e-10))
    rng = np.random.default_rng(0)
    s = _random_spec(rng)[0]
    assert np.allclose(lps(2 * s) - lps(s), np.log(4), atol=1e-8)


def test_cos_ipd_identical_channels():
    rng = np.random.default_rng(1)
    one = _random_spec(rng, m=1)
    assert np.allclose(cos_ipd(np.repeat(one, 9, axis=0)), 1.0)


def test_cos_ipd_integer_delay():
    n, delay, k = 8000, 3, 40
    t = np.arange(n + delay)
    tone = np.cos(2 * np.pi * k * t / 512)
    chans = np.stack([tone[delay:]] * 9)
    chans[8] = tone[:n]  # mic 8 lags mic 0 by `delay` samples
    ipd = cos_ipd(stft(chans))[:, :257]  # pair (0, 8)
    # the mirrored negative-frequency lobe leaks ~1e-5 into a real tone's bin
    assert np.allclose(ipd[2:-2, k], np.cos(2 * np.pi * k * delay / 512), atol=1e-4)


def test_cos_ipd_range_and_gain_invariance():
    rng = np.random.default_rng(2)
    spec = _random_spec(rng)
    ipd = cos_ipd(spec)
    assert ipd.shape == (6, 5 * 257)
    assert np.all(np.abs(ipd) <= 1.0)
    gains = rng.uniform(0.1, 5.0, (9, 1, 1))
    assert np.allclose(cos_ipd(spec * gains), ipd, atol=1e-12)
    with pytest.raises(ValueError):
        cos_ipd(spec[:8])


def test_cos_ipd_pair_order_only_permutes_slices():
    rng = np.random.default_rng(3)
    spec = _random_spec(rng)
    a = cos_ipd(spec)
    b = cos_ipd(spec, MIC_PAIRS[::-1])
    for i in range(5):
        assert np.array_equal(a[:, i * 257 : (i + 1) * 257], b[:, (4 - i) * 257 : (5 - i) * 257])


def test_steering_examples():
    sv = steering_vector(np.pi / 2, ARRAY)
    assert sv.shape == (257, 9)
    assert np.allclose(sv, 1.0)
    sv = steering_vector(0.3, ARRAY)
    assert np.allclose(sv[0], 1.0)
    assert np.allclose(sv[:, 0], 1.0)
    assert np.allclose(np.abs(sv), 1.0)
    # endfire, pair (0, 8) 0.24 m apart, 1 kHz = bin 32
    sv = steering_vector(0.0, ARRAY)
    rel = np.angle(sv[32, 8] / sv[32, 0])
    expected = 2 * np.pi * 1000 * 0.24 / 343
    assert np.isclose(np.angle(np.exp(1j * (rel - expected))), 0.0, atol=1e-12)


def test_steering_delays_point_at_the_source():
    # endfire towards mic 8: mic 8 hears the wave first, mic 0 last
    tau = mic_delays(0.0, ARRAY)
    assert tau[0] == 0 and tau[8] == pytest.approx(-0.24 / 343)
    assert np.all(np.diff(tau) < 0)


def _plane_wave(doa, rng, t=20):
    x = rng.normal(size=(t, 257)) + 1j * rng.normal(size=(t, 257))
    sv = steering_vector(doa, ARRAY)
    return sv.T[:, None, :] * x[None], sv


def test_angle_feature_plane_wave_gives_nine():
    rng = np.random.default_rng(4)
    spec, sv = _plane_wave(1.1, rng)
    af = angle_feature(spec, sv)
    assert np.max(np.abs(af - 9.0)) < 1e-6


def test_angle_feature_antipodal_floor_is_minus_seven():
    # every non-reference phasor points opposite to the observed ratio Y(m)/Y(0); the m=0 self-term
    # is always +1, so the sum bottoms out at 1 - 8 = -7
    rng = np.random.default_rng(5)
    spec, sv = _plane_wave(0.7, rng, t=3)
    flipped = -sv
    flipped[:, 0] = 1.0
    assert np.allclose(angle_feature(spec, flipped), -7.0, atol=1e-6)


def test_angle_feature_range_and_scaling():
    rng = np.random.default_rng(7)
    spec = _random_spec(rng)
    sv = steering_vector(0.9, ARRAY)
    af = angle_feature(spec, sv)
    assert np.all(np.abs(af) <= 9 + 1e-9)
    z = 0.3 - 2.1j
    assert np.allclose(angle_feature(spec * z, sv), af, atol=1e-9)


def test_angle_feature_degenerate_bins_are_zero():
    rng = np.random.default_rng(8)
    spec = _random_spec(rng)
    spec[0, 1, 5] = 0.0
    assert angle_feature(spec, steering_vector(1.0, ARRAY))[1, 5] == 0.0


def test_assemble_input_layout_and_errors():
    rng = np.random.default_rng(9)
    block = assemble_input(rng.normal(size=(249, 257)), rng.uniform(-1, 1, (249, 1285)), rng.normal(size=(249, 257)))
    assert block.shape == (249, 1799)
    assert np.allclose(block[:, :257].mean(axis=1), 0.0, atol=1e-9)
    const = assemble_input(np.full((3, 257), 4.2), np.zeros((3, 1285)), np.zeros((3, 257)))
    assert np.allclose(const[:, :257], 0.0)
    with pytest.raises(ValueError):
        assemble_input(np.zeros((3, 257)), np.zeros((4, 1285)), np.zeros((3, 257)))


def test_extract_and_persist(tmp_path):
    rng = np.random.default_rng(10)
    mix = rng.normal(size=(9, 64000))
    feats = extract_features(mix, 1.0, ARRAY)
    assert feats.shape == (249, 1799)
    assert np.all(extract_features(mix, 1.0, ARRAY, use_angle=False)[:, -257:] == 0)
    save_features(tmp_path / "f.bin", feats, {"scene_id": "x"})
    assert np.allclose(load_features(tmp_path / "f.bin"), feats, atol=1e-5)
