"""STFT analysis/synthesis on a fixed 16 kHz, 32 ms square-root Hann grid."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

SAMPLE_RATE = 16000


class SignalTooShortError(ValueError):
    pass


def sqrt_hann(length: int) -> np.ndarray:
    # periodic Hann: squared windows sum to exactly 1 at 50% overlap
    return np.sqrt(get_window("hann", length, fftbins=True))


@dataclass(frozen=True)
class StftConfig:
    window_length: int = 512
    hop: int = 256
    fft_size: int = 512
    window: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.window is None:
            object.__setattr__(self, "window", sqrt_hann(self.window_length))
        if self.fft_size < self.window_length:
            raise ValueError("fft_size must be >= window_length")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def num_frames(self, num_samples: int) -> int:
        return 1 + (num_samples - self.window_length) // self.hop

    def num_samples(self, num_frames: int) -> int:
        return (num_frames - 1) * self.hop + self.window_length

    def bin_frequencies(self) -> np.ndarray:
        return np.arange(self.num_bins) * SAMPLE_RATE / self.fft_size


DEFAULT_STFT = StftConfig()


def stft(x: np.ndarray, cfg: StftConfig = DEFAULT_STFT) -> np.ndarray:
    """Complex spectrogram of shape (..., T, F); no edge padding.

    Leading axes are treated as channels, so a (M, N) array yields (M, T, F).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < cfg.window_length:
        raise SignalTooShortError(
            f"signal has {x.shape[-1]} samples, need at least {cfg.window_length}"
        )
    frames = sliding_window_view(x, cfg.window_length, axis=-1)[..., :: cfg.hop, :]
    return np.fft.rfft(frames * cfg.window, n=cfg.fft_size, axis=-1)


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    *lead, num_frames, length = frames.shape
    out = np.zeros((*lead, (num_frames - 1) * hop + length))
    for t in range(num_frames):
        out[..., t * hop : t * hop + length] += frames[..., t, :]
    return out


def istft(spec: np.ndarray, cfg: StftConfig = DEFAULT_STFT) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft` (synthesis window = analysis window)."""
    spec = np.asarray(spec)
    if not np.all(np.isfinite(spec)):
        raise ValueError("spectrogram contains non-finite values")
    frames = np.fft.irfft(spec, n=cfg.fft_size, axis=-1)[..., : cfg.window_length]
    return _overlap_add(frames * cfg.window, cfg.hop)


def recompose(mag: np.ndarray, phase: np.ndarray, cfg: StftConfig = DEFAULT_STFT) -> np.ndarray:
    mag = np.asarray(mag, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if mag.shape != phase.shape:
        raise ValueError(f"magnitude {mag.shape} and phase {phase.shape} shapes differ")
    return istft(mag * np.exp(1j * phase), cfg)


def recompose_adjoint(grad_wave: np.ndarray, phase: np.ndarray,
                      cfg: StftConfig = DEFAULT_STFT) -> np.ndarray:
    """Gradient of a waveform loss w.r.t. the magnitude fed to :func:`recompose`.

    Each output sample is linear in the magnitudes, so this is the transpose of that
    map: weighted rfft of the windowed frames, projected onto the phase direction.
    """
    grad_wave = np.asarray(grad_wave, dtype=np.float64)
    frames = sliding_window_view(grad_wave, cfg.window_length, axis=-1)[..., :: cfg.hop, :]
    frames = frames[..., : phase.shape[-2], :]
    g = np.fft.rfft(frames * cfg.window, n=cfg.fft_size, axis=-1)
    weight = np.full(cfg.num_bins, 2.0 / cfg.fft_size)
    weight[0] = 1.0 / cfg.fft_size
    if cfg.fft_size % 2 == 0:
        weight[-1] = 1.0 / cfg.fft_size
    return weight * np.real(np.exp(1j * phase) * np.conj(g))


def magnitude(spec: np.ndarray) -> np.ndarray:
    return np.abs(spec)


def phase(spec: np.ndarray) -> np.ndarray:
    return np.angle(spec)
