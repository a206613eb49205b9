"""Single-channel weighted prediction error (WPE) dereverberation.

Per frequency bin, late reverberation is modeled as a linear prediction from
frames delayed by at least ``delay``; the filter is the weighted least-squares
solution with weights 1/lambda_t taken from the current estimate's power.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import DEFAULT_STFT, StftConfig, istft, stft


class WpeInputError(ValueError):
    pass


@dataclass(frozen=True)
class WpeConfig:
    taps: int = 10
    delay: int = 3
    iterations: int = 3
    eps: float = 1e-8
    # ridge added to the normal equations, relative to their mean diagonal
    ridge: float = 1e-6

    def __post_init__(self):
        if self.taps < 1 or self.delay < 1 or self.iterations < 1:
            raise WpeInputError("taps, delay and iterations must all be >= 1")


def _delayed_stack(y: np.ndarray, taps: int, delay: int) -> np.ndarray:
    """(F, T) -> (F, T, K) with [..., t, k] = y[..., t - delay - k] (zero before start)."""
    f, t = y.shape
    out = np.zeros((f, t, taps), dtype=y.dtype)
    for k in range(taps):
        shift = delay + k
        if shift < t:
            out[:, shift:, k] = y[:, : t - shift]
    return out


def wpe_dereverberate(spec: np.ndarray, cfg: WpeConfig = WpeConfig()) -> np.ndarray:
    """Dereverberate a (T, F) complex spectrogram; returns the same shape."""
    spec = np.asarray(spec, dtype=np.complex128)
    if spec.ndim != 2:
        raise WpeInputError(f"expected (T, F) spectrogram, got {spec.shape}")
    t_len = spec.shape[0]
    if t_len <= cfg.taps + cfg.delay:
        raise WpeInputError(f"need more than {cfg.taps + cfg.delay} frames, got {t_len}")
    y = spec.T  # (F, T)
    x = _delayed_stack(y, cfg.taps, cfg.delay)
    d = y
    for _ in range(cfg.iterations):
        lam = np.maximum(np.abs(d) ** 2, cfg.eps)  # (F, T)
        xw = x / lam[..., None]
        r = np.einsum("ftk,ftl->fkl", xw, np.conj(x))  # sum_t x x^H / lam
        p = np.einsum("ftk,ft->fk", xw, np.conj(y))  # sum_t x y^* / lam
        scale = np.real(np.trace(r, axis1=1, axis2=2)) / cfg.taps
        r = r + (cfg.ridge * scale + cfg.eps)[:, None, None] * np.eye(cfg.taps)
        g = np.linalg.solve(r, p[..., None])[..., 0]  # (F, K)
        d = y - np.einsum("fk,ftk->ft", np.conj(g), x)
    return d.T


def wpe_waveform(x: np.ndarray, cfg: WpeConfig = WpeConfig(), stft_cfg: StftConfig = DEFAULT_STFT) -> np.ndarray:
    """Waveform in, waveform out (length (T-1)*hop + window, no padding)."""
    return istft(wpe_dereverberate(stft(x, stft_cfg), cfg), stft_cfg)
