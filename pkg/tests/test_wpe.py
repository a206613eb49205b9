import numpy as np
import pytest
from scipy.signal import lfilter

from avsep.dsp import stft
from avsep.losses import si_snr
from avsep.room.rir import RoomSpec, generate_rir
from avsep.room.sources import SpeakerProfile, synth_utterance
from avsep.wpe import WpeConfig, WpeInputError, wpe_dereverberate, wpe_waveform


def speech(seed, n=64000):
    return synth_utterance(SpeakerProfile.from_id(seed), n, seed)


def comb_reverb(s, t60=0.5, delay=768, fs=16000):
    """Recirculating echo whose envelope decays 60 dB in ``t60`` seconds."""
    g = 10 ** (-3 * delay / (fs * t60))
    a = np.zeros(delay + 1)
    a[0], a[delay] = 1.0, -g
    return lfilter([1.0], a, s)


def bin_correlation(a, b):
    return np.abs(np.sum(a * b.conj(), axis=0)) / (np.linalg.norm(a, axis=0) * np.linalg.norm(b, axis=0) + 1e-30)


def anechoic_correlations(seed):
    """Per-bin |corr| between WPE output and a direct-path-only input, over bins that carry energy."""
    rir = generate_rir(RoomSpec((6, 5, 4), 0.3), (2, 2, 1.5), (4, 3, 1.5), seed)
    y = stft(np.convolve(speech(seed), rir.direct)[:64000])
    c = bin_correlation(wpe_dereverberate(y), y)
    energy = np.sum(np.abs(y) ** 2, axis=0)
    return c[energy >= 0.01 * energy.mean()]


def reverb_gain(seed, t60=0.5):
    s = speech(seed)
    y = comb_reverb(s, t60)
    d = wpe_waveform(y)
    n = len(d)
    return si_snr(d, s[:n]) - si_snr(y[:n], s[:n])


def test_zero_in_zero_out():
    assert not np.any(wpe_dereverberate(np.zeros((40, 257), dtype=complex)))


@pytest.mark.parametrize("seed", range(3))
def test_anechoic_pass_through(seed):
    assert np.all(anechoic_correlations(seed) > 0.99)


@pytest.mark.parametrize("t60", [0.4, 0.7])
def test_constructed_reverb_improves(t60):
    assert reverb_gain(0, t60) > 3.0


def test_energy_never_grows_and_repeat_changes_little():
    for seed in range(3):
        y = stft(comb_reverb(speech(seed)))
        d1 = wpe_dereverberate(y)
        d2 = wpe_dereverberate(d1)
        e0, e1, e2 = (np.sum(np.abs(z) ** 2) for z in (y, d1, d2))
        assert e1 <= 1.01 * e0
        assert abs(e2 - e1) < 0.1 * abs(e1 - e0)


def test_deterministic():
    y = stft(comb_reverb(speech(1, 32000)))
    assert wpe_dereverberate(y).tobytes() == wpe_dereverberate(y).tobytes()


def test_too_few_frames():
    cfg = WpeConfig(taps=10, delay=3)
    with pytest.raises(WpeInputError):
        wpe_dereverberate(np.ones((13, 257), dtype=complex), cfg)
    wpe_dereverberate(np.ones((14, 257), dtype=complex), cfg)


def test_waveform_length():
    x = speech(2, 20000)
    assert len(wpe_waveform(x)) == 256 * ((20000 - 512) // 256) + 512
