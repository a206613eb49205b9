"""Visual embedding streams at 25 frames/s.

Real lip embeddings are replaced by a cheap surrogate computed from a speaker's
dry signal: per-frame log band energies projected to ``dim`` by a fixed random
matrix. It carries the speaker's articulation timing, which is what the
separation network exploits from lip movement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import SAMPLE_RATE

VIDEO_FPS = 25
AUDIO_FPS = 62.5
SAMPLES_PER_VIDEO_FRAME = SAMPLE_RATE // VIDEO_FPS
NUM_BANDS = 8
_LOG_FLOOR = 1e-8


@dataclass
class VisualStream:
    frames: np.ndarray  # (Tv, D)
    present: np.ndarray  # (Tv,) bool
    role: str = "target"

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def _projection(dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 2718])
    return rng.normal(0.0, 1.0 / np.sqrt(NUM_BANDS + 1), (NUM_BANDS + 1, dim))


def visual_embed_surrogate(signal: np.ndarray, role: str = "target", seed: int = 0,
                           dim: int = 64) -> VisualStream:
    x = np.asarray(signal, dtype=np.float64)
    n_frames = len(x) // SAMPLES_PER_VIDEO_FRAME
    frames = x[: n_frames * SAMPLES_PER_VIDEO_FRAME].reshape(n_frames, SAMPLES_PER_VIDEO_FRAME)
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2 / SAMPLES_PER_VIDEO_FRAME
    # log-spaced bands up to 8 kHz
    edges = np.unique(np.geomspace(1, power.shape[1], NUM_BANDS + 1).astype(int))
    bands = np.stack([power[:, lo:hi].sum(axis=1) for lo, hi in zip(edges[:-1], edges[1:])], axis=1)
    if bands.shape[1] < NUM_BANDS:
        bands = np.pad(bands, ((0, 0), (0, NUM_BANDS - bands.shape[1])))
    total = power.sum(axis=1, keepdims=True)
    feats = np.log10(np.concatenate([total, bands], axis=1) + _LOG_FLOOR) / 4.0
    emb = np.tanh(feats @ _projection(dim, seed))
    return VisualStream(emb, np.ones(n_frames, dtype=bool), role)


def zero_stream(num_frames: int, dim: int, role: str = "interferer") -> VisualStream:
    return VisualStream(np.zeros((num_frames, dim)), np.ones(num_frames, dtype=bool), role)


def _pad_to(frames: np.ndarray, n: int) -> np.ndarray:
    if len(frames) >= n:
        return frames[:n]
    return np.concatenate([frames, np.repeat(frames[-1:], n - len(frames), axis=0)])


def average_interferers(streams, num_frames: int | None = None, dim: int = 64) -> VisualStream:
    """Element-wise mean of interferer streams; an empty list gives an all-zero stream."""
    streams = list(streams)
    if not streams:
        return zero_stream(num_frames or 0, dim)
    n = max(s.num_frames for s in streams) if num_frames is None else num_frames
    stacked = np.stack([_pad_to(s.frames, n) for s in streams])
    return VisualStream(stacked.mean(axis=0), np.ones(n, dtype=bool), "interferer")


def fill_missing_frames(stream: VisualStream) -> VisualStream:
    """Replace absent frames by the latest present one; leading gaps become zeros."""
    out = np.zeros_like(stream.frames)
    last = None
    for t in range(stream.num_frames):
        if stream.present[t]:
            last = stream.frames[t]
        if last is not None:
            out[t] = last
    return VisualStream(out, np.ones(stream.num_frames, dtype=bool), stream.role)


def drop_frames(stream: VisualStream, fraction: float, seed: int) -> VisualStream:
    """Mark a random ``fraction`` of frames as missing (data zeroed)."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    rng = np.random.default_rng([seed, 31337])
    n_drop = int(round(fraction * stream.num_frames))
    present = np.ones(stream.num_frames, dtype=bool)
    present[rng.choice(stream.num_frames, n_drop, replace=False)] = False
    return VisualStream(np.where(present[:, None], stream.frames, 0.0), present, stream.role)


def upsample_index(num_audio_frames: int, num_video_frames: int) -> np.ndarray:
    """Video frame held by each audio frame: floor(t * 25 / 62.5), clamped."""
    if num_video_frames < 1:
        raise ValueError("visual stream is empty")
    t = np.arange(num_audio_frames)
    return np.minimum((2 * t) // 5, num_video_frames - 1)


def upsample_visual(stream: VisualStream, num_audio_frames: int) -> np.ndarray:
    return stream.frames[upsample_index(num_audio_frames, stream.num_frames)]
