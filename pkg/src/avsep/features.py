"""Per-frame input features: log-power spectrum, cosIPD and the angle feature."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dsp import DEFAULT_STFT, StftConfig, stft
from .room.geometry import ArrayGeometry

MIC_PAIRS = ((0, 8), (0, 4), (1, 4), (4, 6), (4, 5))
LPS_EPS = 1e-10
NORM_EPS = 1e-10
# bins where the reference channel is quieter than this contribute 0 to the angle feature
DEGENERATE_MAG = 1e-12
SPEED_OF_SOUND = 343.0


def lps(spec: np.ndarray) -> np.ndarray:
    return np.log(np.abs(spec) ** 2 + LPS_EPS)


def _check_channels(spec_mc: np.ndarray, num_mics: int = 9) -> None:
    if spec_mc.ndim != 3 or spec_mc.shape[0] != num_mics:
        raise ValueError(f"expected ({num_mics}, T, F) multichannel spectrogram, got {spec_mc.shape}")


def cos_ipd(spec_mc: np.ndarray, pairs=MIC_PAIRS) -> np.ndarray:
    """cos(angle Y[m2] - angle Y[m1]) per pair, concatenated along frequency."""
    _check_channels(spec_mc)
    blocks = []
    for m1, m2 in pairs:
        # cos of the phase difference without explicit angles: Re(z)/|z| with z = Y2 conj(Y1)
        z = spec_mc[m2] * np.conj(spec_mc[m1])
        mag = np.abs(z)
        c = np.where(mag > 0, z.real / np.where(mag > 0, mag, 1.0), 1.0)
        blocks.append(np.clip(c, -1.0, 1.0))
    return np.concatenate(blocks, axis=-1)


def mic_delays(doa: float, array: ArrayGeometry, c: float = SPEED_OF_SOUND) -> np.ndarray:
    """Plane-wave arrival delay (s) of each mic relative to mic 0.

    A source in direction theta reaches mics closer to it first; mic m is
    (d_m - d_0) cos(theta) metres closer than mic 0, hence arrives earlier.
    """
    d = np.asarray(array.offsets)
    return -(d - d[0]) * np.cos(doa) / c


def steering_vector(doa: float, array: ArrayGeometry, cfg: StftConfig = DEFAULT_STFT,
                    c: float = SPEED_OF_SOUND) -> np.ndarray:
    """(F, M) unit phasors exp(-j 2 pi f tau_m); column 0 is all ones."""
    if not 0.0 <= doa <= np.pi + 1e-12:
        raise ValueError(f"DOA {doa} outside [0, pi]")
    tau = mic_delays(doa, array, c)
    return np.exp(-2j * np.pi * np.outer(cfg.bin_frequencies(), tau))


def angle_feature(spec_mc: np.ndarray, sv: np.ndarray) -> np.ndarray:
    """Sum over mics of the 2-D cosine similarity between e_f^(m) and Y^(m)/Y^(0)."""
    m, t, f = spec_mc.shape
    if sv.shape != (f, m):
        raise ValueError(f"steering vector shape {sv.shape} does not match ({f}, {m})")
    ref = spec_mc[0]
    active = np.abs(ref) >= DEGENERATE_MAG
    safe_ref = np.where(active, ref, 1.0)
    ratio = spec_mc / safe_ref  # (M, T, F)
    e = sv.T[:, None, :]  # (M, 1, F)
    dot = (np.conj(e) * ratio).real
    cos = dot / ((np.abs(e) + NORM_EPS) * (np.abs(ratio) + NORM_EPS))
    return np.where(active, cos.sum(axis=0), 0.0)


def assemble_input(lps_feat: np.ndarray, ipd_feat: np.ndarray, af_feat: np.ndarray,
                   normalize: bool = True) -> np.ndarray:
    """[LPS | cosIPD | AF] per frame.

    With ``normalize`` the LPS block is standardized per frame; the learned affine
    that follows is applied by the model.
    """
    if not lps_feat.shape[0] == ipd_feat.shape[0] == af_feat.shape[0]:
        raise ValueError(f"frame counts differ: {lps_feat.shape[0]}, {ipd_feat.shape[0]}, {af_feat.shape[0]}")
    x = layer_norm_frames(lps_feat) if normalize else lps_feat
    return np.concatenate([x, ipd_feat, af_feat], axis=-1)


def layer_norm_frames(x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def extract_features(mixture: np.ndarray, target_doa: float, array: ArrayGeometry,
                     use_angle: bool = True, cfg: StftConfig = DEFAULT_STFT) -> np.ndarray:
    """Mixture (M, N) -> (T, 1799) feature block. ``use_angle=False`` zeroes the angle slice."""
    spec = stft(mixture, cfg)
    ipd = cos_ipd(spec)
    af = angle_feature(spec, steering_vector(target_doa, array, cfg)) if use_angle else np.zeros(spec.shape[1:])
    return assemble_input(lps(spec[0]), ipd, af)


def save_features(path, block: np.ndarray, meta: dict | None = None) -> None:
    """Flat little-endian float32 array plus a JSON header ``<path>.json``."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    block.astype("<f4").tofile(p)
    header = {"shape": list(block.shape), "dtype": "float32", "order": "C",
              "layout": ["lps", "cos_ipd", "angle"], **(meta or {})}
    p.with_suffix(p.suffix + ".json").write_text(json.dumps(header, indent=2, sort_keys=True))


def load_features(path) -> np.ndarray:
    p = Path(path)
    header = json.loads(p.with_suffix(p.suffix + ".json").read_text())
    return np.fromfile(p, dtype="<f4").reshape(header["shape"]).astype(np.float64)
