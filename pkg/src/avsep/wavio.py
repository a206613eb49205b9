"""WAV read/write at the system rate. Channels are returned first: (M, N) or (N,)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .dsp import SAMPLE_RATE


class WavFormatError(ValueError):
    pass


def read_wav(path) -> np.ndarray:
    try:
        rate, data = wavfile.read(str(path))
    except ValueError as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE} Hz")
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        data = data.astype(np.float64)
    else:
        raise WavFormatError(f"{path}: unsupported sample format {data.dtype}")
    return data.T if data.ndim == 2 else data


def write_wav(path, x: np.ndarray, dtype: str = "float32") -> None:
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise ValueError("refusing to write non-finite samples")
    data = x.T if x.ndim == 2 else x
    if dtype == "float32":
        data = data.astype(np.float32)
    elif dtype == "int16":
        data = np.clip(np.round(data * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unsupported dtype {dtype!r}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), SAMPLE_RATE, np.ascontiguousarray(data))
