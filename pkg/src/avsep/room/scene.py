"""Scene specifications and rendering of the multi-channel far-field mixture.

Mixture at mic m:  y_m = s * h_s,m + sum_i s_i * h_i,m + n * h_n,m
SNR and TIR are set on the reverberant components at the reference mic (0).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from ..dsp import SAMPLE_RATE
from ..wavio import read_wav, write_wav
from .geometry import ArrayGeometry, doa_from_position, min_interferer_angle
from .rir import RoomSpec, compute_drr, generate_rirs
from .sources import materialize

REFERENCE_MIC = 0
# mixture ch-0 RMS after level normalization (about -26 dBFS)
MIXTURE_RMS = 0.05


class SilentSignalError(ValueError):
    pass


def energy(x) -> float:
    return float(np.sum(np.asarray(x, dtype=float) ** 2))


def scale_to_snr(target, noise, snr_db: float) -> float:
    """Amplitude gain for ``noise`` so that 10 log10(E_target / E_noise) = snr_db."""
    et, en = energy(target), energy(noise)
    if et <= 0 or en <= 0:
        raise SilentSignalError("SNR undefined for a zero-energy signal")
    return float(np.sqrt(et / (en * 10.0 ** (snr_db / 10.0))))


def scale_to_tir(target, interferers, tir_db: float) -> float:
    """Joint amplitude gain for the summed interferers to realize ``tir_db``."""
    total = np.sum(np.atleast_2d(np.asarray(interferers, dtype=float)), axis=0)
    return scale_to_snr(target, total, tir_db)


def ratio_db(a, b) -> float:
    return float(10.0 * np.log10(energy(a) / energy(b)))


@dataclass
class SourcePlacement:
    position: tuple
    kind: str  # target | interferer | noise
    source: dict | None = None
    signal: np.ndarray | None = field(default=None, repr=False)

    def render_signal(self, num_samples: int) -> np.ndarray:
        if self.signal is not None:
            x = np.asarray(self.signal, dtype=float)[:num_samples]
            return np.pad(x, (0, num_samples - len(x)))
        if self.source is None:
            raise ValueError(f"{self.kind} placement has neither a signal nor a source reference")
        return materialize(self.source, num_samples)

    def to_dict(self) -> dict:
        if self.source is None:
            raise ValueError("placements with in-memory signals are not serializable")
        return {"position": list(self.position), "kind": self.kind, "source": self.source}

    @classmethod
    def from_dict(cls, d: dict) -> "SourcePlacement":
        return cls(tuple(d["position"]), d["kind"], d.get("source"))


@dataclass
class SceneSpec:
    room: RoomSpec
    array: ArrayGeometry
    target: SourcePlacement
    interferers: list
    noise: SourcePlacement | None
    snr_db: float
    tir_db: float
    rng_seed: int
    num_samples: int = 4 * SAMPLE_RATE
    split: str = "train"
    scene_id: str = ""

    @property
    def num_speakers(self) -> int:
        return 1 + len(self.interferers)

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "split": self.split,
            "room": self.room.to_dict(),
            "array": self.array.to_dict(),
            "target": self.target.to_dict(),
            "interferers": [p.to_dict() for p in self.interferers],
            "noise": None if self.noise is None else self.noise.to_dict(),
            "snr_db": self.snr_db,
            "tir_db": self.tir_db,
            "rng_seed": self.rng_seed,
            "num_samples": self.num_samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(
            room=RoomSpec.from_dict(d["room"]),
            array=ArrayGeometry.from_dict(d["array"]),
            target=SourcePlacement.from_dict(d["target"]),
            interferers=[SourcePlacement.from_dict(p) for p in d["interferers"]],
            noise=None if d.get("noise") is None else SourcePlacement.from_dict(d["noise"]),
            snr_db=d["snr_db"],
            tir_db=d["tir_db"],
            rng_seed=d["rng_seed"],
            num_samples=d.get("num_samples", 4 * SAMPLE_RATE),
            split=d.get("split", "train"),
            scene_id=d.get("scene_id", ""),
        )


@dataclass
class MixtureBundle:
    """Rendered scene. Multi-channel arrays are (M, N); references are mic-0 signals."""

    mixture: np.ndarray
    reverb_target_mc: np.ndarray
    reverb_interference_mc: np.ndarray
    reverb_noise_mc: np.ndarray
    anechoic_target: np.ndarray
    sources: dict  # dry signals: "target", "interferer0", ...
    metadata: dict

    @property
    def reverb_target(self) -> np.ndarray:
        return self.reverb_target_mc[REFERENCE_MIC]

    @property
    def reverb_interference(self) -> np.ndarray:
        return self.reverb_interference_mc[REFERENCE_MIC]

    @property
    def reverb_noise(self) -> np.ndarray:
        return self.reverb_noise_mc[REFERENCE_MIC]

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_wav(d / "mixture.wav", self.mixture)
        write_wav(d / "reverb_target.wav", self.reverb_target)
        write_wav(d / "anechoic_target.wav", self.anechoic_target)
        write_wav(d / "reverb_interference.wav", self.reverb_interference)
        write_wav(d / "reverb_noise.wav", self.reverb_noise)
        for name, sig in self.sources.items():
            write_wav(d / f"source_{name}.wav", sig)
        (d / "meta.json").write_text(json.dumps(self.metadata, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "MixtureBundle":
        d = Path(directory)
        meta = json.loads((d / "meta.json").read_text())
        sources = {p.stem[len("source_"):]: read_wav(p) for p in sorted(d.glob("source_*.wav"))}

        def mono_mc(name):
            x = read_wav(d / name)
            return x[None, :]

        return cls(
            mixture=read_wav(d / "mixture.wav"),
            reverb_target_mc=mono_mc("reverb_target.wav"),
            reverb_interference_mc=mono_mc("reverb_interference.wav"),
            reverb_noise_mc=mono_mc("reverb_noise.wav"),
            anechoic_target=read_wav(d / "anechoic_target.wav"),
            sources=sources,
            metadata=meta,
        )


def _spec_dict(spec: SceneSpec) -> dict | None:
    try:
        return spec.to_dict()
    except ValueError:
        return None


def _convolve(sig: np.ndarray, rirs, n: int) -> np.ndarray:
    return np.stack([fftconvolve(sig, r.taps)[:n] for r in rirs])


def render_scene(spec: SceneSpec, noise_gain: float | None = None, normalize: bool = True) -> MixtureBundle:
    """Render a scene; ``noise_gain`` overrides the SNR-derived noise gain (e.g. 0)."""
    n = spec.num_samples
    mics = spec.array.mic_positions
    room = spec.room

    s = spec.target.render_signal(n)
    if energy(s) == 0.0:
        raise SilentSignalError("target source is silent")
    rirs_t = generate_rirs(room, spec.target.position, mics, seed=spec.rng_seed)
    rev_t = _convolve(s, rirs_t, n)
    if energy(rev_t[REFERENCE_MIC]) == 0.0:
        raise SilentSignalError("reverberant target is silent at the reference mic")
    anechoic = fftconvolve(s, rirs_t[REFERENCE_MIC].direct)[:n]
    sources = {"target": s}

    rev_i = np.zeros_like(rev_t)
    tir_gain = None
    if spec.interferers:
        parts = []
        for k, p in enumerate(spec.interferers):
            si = p.render_signal(n)
            sources[f"interferer{k}"] = si
            ri = _convolve(si, generate_rirs(room, p.position, mics, seed=spec.rng_seed), n)
            # balance interferers before the joint TIR gain
            ri *= np.sqrt(energy(rev_t[REFERENCE_MIC]) / energy(ri[REFERENCE_MIC]))
            parts.append(ri)
        rev_i = np.sum(parts, axis=0)
        tir_gain = scale_to_snr(rev_t[REFERENCE_MIC], rev_i[REFERENCE_MIC], spec.tir_db)
        rev_i *= tir_gain

    rev_n = np.zeros_like(rev_t)
    if spec.noise is not None and noise_gain != 0.0:
        sn = spec.noise.render_signal(n)
        sources["noise"] = sn
        rn = _convolve(sn, generate_rirs(room, spec.noise.position, mics, seed=spec.rng_seed), n)
        g = scale_to_snr(rev_t[REFERENCE_MIC], rn[REFERENCE_MIC], spec.snr_db) if noise_gain is None else noise_gain
        rev_n = rn * g

    mixture = rev_t + rev_i + rev_n
    level = 1.0
    if normalize:
        level = MIXTURE_RMS / np.sqrt(np.mean(mixture[REFERENCE_MIC] ** 2))
        mixture, rev_t, rev_i, rev_n = mixture * level, rev_t * level, rev_i * level, rev_n * level
        anechoic = anechoic * level

    t_doa = doa_from_position(spec.target.position, spec.array)
    i_doas = [doa_from_position(p.position, spec.array) for p in spec.interferers]
    meta = {
        "scene_id": spec.scene_id,
        "split": spec.split,
        "seed": spec.rng_seed,
        "num_speakers": spec.num_speakers,
        "requested_snr_db": spec.snr_db,
        "requested_tir_db": spec.tir_db if spec.interferers else None,
        "snr_db": ratio_db(rev_t[REFERENCE_MIC], rev_n[REFERENCE_MIC]) if energy(rev_n[REFERENCE_MIC]) > 0 else None,
        "tir_db": ratio_db(rev_t[REFERENCE_MIC], rev_i[REFERENCE_MIC]) if spec.interferers else None,
        "drr_db": compute_drr(rirs_t[REFERENCE_MIC]),
        "t60": room.t60,
        "target_doa": t_doa,
        "interferer_doas": i_doas,
        "min_angle": min_interferer_angle(t_doa, i_doas) if i_doas else None,
        "target_distance": rirs_t[REFERENCE_MIC].distance,
        "level_gain": level,
        "num_samples": n,
        "spec": _spec_dict(spec),
    }
    return MixtureBundle(mixture, rev_t, rev_i, rev_n, anechoic, sources, meta)
