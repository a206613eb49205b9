"""Extended short-time objective intelligibility (ESTOI).

Pipeline: resample to 10 kHz, drop frames more than 40 dB below the loudest
reference frame, one-third-octave band envelopes, then 30-frame segments whose
band-by-time matrices are row- and column-normalized and correlated.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import resample_poly

from .dsp import SAMPLE_RATE

FS = 10000
FRAME = 256
HOP = 128
NFFT = 512
NUM_BANDS = 15
MIN_FREQ = 150.0
SEGMENT = 30
DYN_RANGE_DB = 40.0
_EPS = np.finfo(float).eps


class EstoiInputError(ValueError):
    pass


def _window() -> np.ndarray:
    # Hann without the zero end points
    return np.hanning(FRAME + 2)[1:-1]


@lru_cache(maxsize=1)
def third_octave_matrix() -> np.ndarray:
    """(bands, NFFT/2+1) 0/1 matrix pooling FFT bins into one-third-octave bands."""
    freqs = np.linspace(0, FS, NFFT + 1)[: NFFT // 2 + 1]
    k = np.arange(NUM_BANDS)
    lo = MIN_FREQ * 2.0 ** ((2 * k - 1) / 6)
    hi = MIN_FREQ * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((NUM_BANDS, len(freqs)))
    for b in range(NUM_BANDS):
        i_lo = int(np.argmin(np.abs(freqs - lo[b])))
        i_hi = int(np.argmin(np.abs(freqs - hi[b])))
        obm[b, i_lo:i_hi] = 1.0
    return obm


def _frames(x: np.ndarray) -> np.ndarray:
    return sliding_window_view(x, FRAME)[::HOP] * _window()


def _drop_silent(ref: np.ndarray, est: np.ndarray):
    """Keep frames within DYN_RANGE_DB of the loudest reference frame; re-synthesize by overlap-add."""
    fr, fe = _frames(ref), _frames(est)
    level = 20 * np.log10(np.linalg.norm(fr, axis=1) + _EPS)
    keep = level > level.max() - DYN_RANGE_DB
    fr, fe = fr[keep], fe[keep]
    n = (len(fr) - 1) * HOP + FRAME if len(fr) else 0
    out_r, out_e = np.zeros(n), np.zeros(n)
    for i in range(len(fr)):
        out_r[i * HOP : i * HOP + FRAME] += fr[i]
        out_e[i * HOP : i * HOP + FRAME] += fe[i]
    return out_r, out_e


def _band_envelopes(x: np.ndarray) -> np.ndarray:
    spec = np.fft.rfft(_frames(x), n=NFFT, axis=-1)
    return np.sqrt(third_octave_matrix() @ (np.abs(spec) ** 2).T)  # (bands, frames)


def _normalize(a: np.ndarray, axis: int) -> np.ndarray:
    a = a - a.mean(axis=axis, keepdims=True)
    return a / (np.linalg.norm(a, axis=axis, keepdims=True) + _EPS)


def estoi(est, ref, fs: int = SAMPLE_RATE) -> float:
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape or est.ndim != 1:
        raise EstoiInputError(f"expected equal-length 1-D signals, got {est.shape} and {ref.shape}")
    if not np.any(ref):
        raise EstoiInputError("reference signal is silent")
    if fs != FS:
        g = np.gcd(FS, fs)
        ref = resample_poly(ref, FS // g, fs // g)
        est = resample_poly(est, FS // g, fs // g)
    if len(ref) < FRAME:
        raise EstoiInputError("signal too short for ESTOI")
    ref, est = _drop_silent(ref, est)
    if len(ref) < FRAME:
        raise EstoiInputError("no active frames")
    x, y = _band_envelopes(ref), _band_envelopes(est)
    if x.shape[1] < SEGMENT:
        raise EstoiInputError(f"need {SEGMENT} active frames, have {x.shape[1]}")
    xs = sliding_window_view(x, SEGMENT, axis=1)  # (bands, segments, N)
    ys = sliding_window_view(y, SEGMENT, axis=1)
    xs = np.moveaxis(xs, 1, 0)  # (segments, bands, N)
    ys = np.moveaxis(ys, 1, 0)
    # rows: each band over time; columns: each frame over bands
    xn = _normalize(_normalize(xs, 2), 1)
    yn = _normalize(_normalize(ys, 2), 1)
    return float(np.sum(xn * yn) / SEGMENT / xn.shape[0])
