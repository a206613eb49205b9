"""Turning rendered scenes into training examples and chunk batches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dsp import DEFAULT_STFT, stft
from ..features import extract_features
from ..room.geometry import ArrayGeometry
from ..room.scene import MixtureBundle
from ..visual import (average_interferers, drop_frames, fill_missing_frames,
                      visual_embed_surrogate, zero_stream)

HOP = DEFAULT_STFT.hop
# audio-frame offsets are multiples of 5 so the 25 fps visual grid stays aligned (5 audio = 2 video)
OFFSET_QUANTUM = 5


@dataclass
class Example:
    scene_id: str
    features: np.ndarray  # (T, 1799)
    mix_mag: np.ndarray  # (T, F)
    mix_phase: np.ndarray  # (T, F)
    anechoic_mag: np.ndarray  # (T, F)
    reverb_target_mag: np.ndarray  # (T, F)
    mixture: np.ndarray  # ch-0 waveform
    reverb_target: np.ndarray
    anechoic: np.ndarray
    visual_target: np.ndarray  # (Tv, Dv)
    visual_interferer: np.ndarray
    metadata: dict

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]


def visual_streams(bundle: MixtureBundle, seed: int, dim: int, missing: float, missing_seed: int):
    n_video = len(bundle.anechoic_target) // 640
    target = visual_embed_surrogate(bundle.sources["target"], "target", seed, dim)
    interferers = [visual_embed_surrogate(sig, "interferer", seed, dim)
                   for name, sig in sorted(bundle.sources.items()) if name.startswith("interferer")]
    inter = average_interferers(interferers, n_video, dim) if interferers else zero_stream(n_video, dim)
    if missing > 0:
        target = fill_missing_frames(drop_frames(target, missing, missing_seed))
        # the interferer branch sees the average of streams that each lose frames
        if interferers:
            streams = [fill_missing_frames(drop_frames(s, missing, missing_seed + 1 + k))
                       for k, s in enumerate(interferers)]
            inter = average_interferers(streams, n_video, dim)
    return target.frames, inter.frames


def prepare_example(bundle: MixtureBundle, use_angle: bool = True, visual_seed: int = 0,
                    visual_dim: int = 64, missing: float = 0.0, missing_seed: int = 0) -> Example:
    meta = bundle.metadata
    if meta.get("spec") is None:
        raise ValueError("bundle metadata lacks the scene spec (array geometry)")
    array = ArrayGeometry.from_dict(meta["spec"]["array"])
    feats = extract_features(bundle.mixture, meta["target_doa"], array, use_angle=use_angle)
    spec0 = stft(bundle.mixture[0])
    vt, vi = visual_streams(bundle, visual_seed, visual_dim, missing, missing_seed)
    return Example(
        scene_id=meta["scene_id"],
        features=feats,
        mix_mag=np.abs(spec0),
        mix_phase=np.angle(spec0),
        anechoic_mag=np.abs(stft(bundle.anechoic_target)),
        reverb_target_mag=np.abs(stft(bundle.reverb_target)),
        mixture=np.asarray(bundle.mixture[0], dtype=np.float64),
        reverb_target=np.asarray(bundle.reverb_target, dtype=np.float64),
        anechoic=np.asarray(bundle.anechoic_target, dtype=np.float64),
        visual_target=vt,
        visual_interferer=vi,
        metadata=meta,
    )


@dataclass
class Batch:
    features: np.ndarray
    mix_mag: np.ndarray
    mix_phase: np.ndarray
    anechoic_mag: np.ndarray
    reverb_target: np.ndarray  # (B, L) aligned with recompose output
    anechoic: np.ndarray
    mixture: np.ndarray
    visual_target: np.ndarray
    visual_interferer: np.ndarray


def _video_slice(frames: np.ndarray, offset: int, count: int) -> np.ndarray:
    v0 = 2 * offset // 5
    out = frames[v0 : v0 + count]
    if len(out) < count:
        out = np.concatenate([out, np.repeat(frames[-1:], count - len(out), axis=0)])
    return out


def chunk_frames(chunk_seconds: float) -> int:
    return DEFAULT_STFT.num_frames(int(round(chunk_seconds * 16000)))


def make_batch(examples, offsets, num_frames: int) -> Batch:
    """Crop each example to ``num_frames`` STFT frames starting at its offset.

    Frame t of a crop starting at frame o is frame o + t of the full signal, and
    the matching waveform span is samples o*hop .. o*hop + (num_frames-1)*hop + window.
    """
    length = DEFAULT_STFT.num_samples(num_frames)
    n_video = (2 * (num_frames - 1)) // 5 + 1
    cols = {k: [] for k in Batch.__dataclass_fields__}
    for ex, o in zip(examples, offsets):
        sl = slice(o, o + num_frames)
        s0 = o * HOP
        cols["features"].append(ex.features[sl])
        cols["mix_mag"].append(ex.mix_mag[sl])
        cols["mix_phase"].append(ex.mix_phase[sl])
        cols["anechoic_mag"].append(ex.anechoic_mag[sl])
        cols["reverb_target"].append(ex.reverb_target[s0 : s0 + length])
        cols["anechoic"].append(ex.anechoic[s0 : s0 + length])
        cols["mixture"].append(ex.mixture[s0 : s0 + length])
        cols["visual_target"].append(_video_slice(ex.visual_target, o, n_video))
        cols["visual_interferer"].append(_video_slice(ex.visual_interferer, o, n_video))
    return Batch(**{k: np.stack(v) for k, v in cols.items()})


def full_batch(examples) -> Batch:
    """Whole-utterance batch; examples must share a frame count."""
    t = examples[0].num_frames
    if any(ex.num_frames != t for ex in examples):
        raise ValueError("examples differ in length")
    return make_batch(examples, [0] * len(examples), t)


def sample_offsets(rng, examples, num_frames: int) -> list[int]:
    out = []
    for ex in examples:
        slack = ex.num_frames - num_frames
        if slack < 0:
            raise ValueError(f"scene {ex.scene_id} shorter than the training chunk")
        out.append(int(rng.integers(0, slack // OFFSET_QUANTUM + 1)) * OFFSET_QUANTUM)
    return out
