"""Dry source signals: synthetic speech-like talkers, colored noise, or WAV files.

A synthetic *speaker* is a fixed voice profile (pitch range, formant layout,
syllable rate, pause habits); each *utterance* of that speaker is a seeded draw of an
f0 trajectory and syllable envelope. Utterances of one speaker share spectral
character; different speakers differ, which is what the separation model needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dsp import SAMPLE_RATE
from ..wavio import read_wav


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: int
    f0_mean: float
    f0_spread: float  # octaves
    formants: tuple
    bandwidths: tuple
    syllable_rate: float
    pause_prob: float
    breathiness: float

    @classmethod
    def from_id(cls, speaker_id: int, pool_seed: int = 0) -> "SpeakerProfile":
        rng = np.random.default_rng([pool_seed, 7919, speaker_id])
        low_voice = rng.random() < 0.5
        f0 = rng.uniform(85, 155) if low_voice else rng.uniform(165, 260)
        f1 = rng.uniform(300, 800)
        f2 = rng.uniform(900, 2200)
        f3 = rng.uniform(2300, 3400)
        return cls(
            speaker_id=speaker_id,
            f0_mean=float(f0),
            f0_spread=float(rng.uniform(0.1, 0.35)),
            formants=(float(f1), float(f2), float(f3)),
            bandwidths=tuple(float(b) for b in rng.uniform([80, 100, 150], [160, 220, 300])),
            syllable_rate=float(rng.uniform(3.0, 6.0)),
            pause_prob=float(rng.uniform(0.1, 0.3)),
            breathiness=float(rng.uniform(0.02, 0.08)),
        )


def _smooth_walk(rng, n: int, knots_per_s: float, scale: float) -> np.ndarray:
    knots = max(int(n / SAMPLE_RATE * knots_per_s) + 2, 2)
    values = rng.normal(0.0, scale, knots)
    return np.interp(np.arange(n), np.linspace(0, n - 1, knots), values)


def synth_utterance(profile: SpeakerProfile, num_samples: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, profile.speaker_id, 104729])
    n = num_samples
    t = np.arange(n) / SAMPLE_RATE

    f0 = profile.f0_mean * 2.0 ** (_smooth_walk(rng, n, 4.0, profile.f0_spread / 2))
    # slowly moving formants give each syllable a different vowel colour
    formant_shift = 2.0 ** _smooth_walk(rng, n, profile.syllable_rate, 0.15)

    # syllable envelope: raised-cosine bumps, with occasional pauses
    env = np.zeros(n)
    pos = rng.uniform(0, 0.2) * SAMPLE_RATE
    while pos < n:
        dur = rng.uniform(0.6, 1.4) / profile.syllable_rate * SAMPLE_RATE
        if rng.random() < profile.pause_prob:
            pos += rng.uniform(0.15, 0.5) * SAMPLE_RATE
            continue
        lo, hi = int(pos), min(int(pos + dur), n)
        if hi > lo:
            k = np.arange(hi - lo) / max(hi - lo - 1, 1)
            env[lo:hi] += rng.uniform(0.4, 1.0) * np.sin(np.pi * k) ** 2
        pos += dur
    if not env.any():
        # short utterances can draw nothing but pauses; keep one syllable so the source is never silent
        hi = min(int(rng.uniform(0.6, 1.4) / profile.syllable_rate * SAMPLE_RATE), n)
        env[:hi] = np.sin(np.pi * np.arange(hi) / max(hi - 1, 1)) ** 2
    env = np.minimum(env, 1.0)

    phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE
    n_harm = int(7000 / profile.f0_mean)
    out = np.zeros(n)
    for h in range(1, n_harm + 1):
        fh = h * f0
        gain = np.zeros(n)
        for fc, bw in zip(profile.formants, profile.bandwidths):
            fc_t = fc * formant_shift
            gain += 1.0 / (1.0 + ((fh - fc_t) / bw) ** 2)
        gain *= (fh < 7600) / np.sqrt(h)
        out += gain * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    noise = np.diff(rng.normal(size=n + 1))  # crude high-tilted aspiration
    out = env * (out + profile.breathiness * noise * np.sqrt(n_harm))
    rms = np.sqrt(np.mean(out ** 2))
    return out / rms * 0.1 if rms > 0 else out


def colored_noise(exponent: float, num_samples: int, seed: int, modulation: float = 0.0) -> np.ndarray:
    """Noise with a 1/f**exponent power spectrum (1 = pink, 2 = brown)."""
    rng = np.random.default_rng([seed, 15485863])
    spec = np.fft.rfft(rng.normal(size=num_samples))
    f = np.fft.rfftfreq(num_samples, 1 / SAMPLE_RATE)
    f[0] = f[1]
    spec *= f ** (-exponent / 2)
    spec *= f > 40
    x = np.fft.irfft(spec, num_samples)
    if modulation > 0:
        x *= 1.0 + modulation * np.sin(2 * np.pi * rng.uniform(0.3, 2.0) * np.arange(num_samples) / SAMPLE_RATE)
    return x / np.sqrt(np.mean(x ** 2)) * 0.1


@dataclass(frozen=True)
class NoiseProfile:
    noise_id: int
    exponent: float
    modulation: float

    @classmethod
    def from_id(cls, noise_id: int, pool_seed: int = 0) -> "NoiseProfile":
        rng = np.random.default_rng([pool_seed, 6151, noise_id])
        return cls(noise_id, float(rng.uniform(0.5, 2.0)), float(rng.choice([0.0, rng.uniform(0.2, 0.8)])))


@dataclass
class SourcePool:
    """Speakers and noises available to the scene sampler.

    ``speaker_dirs`` maps extra speaker ids to directories of 16 kHz WAV files;
    ``noise_files`` adds recorded noises. Synthetic ids come first.
    """

    num_speakers: int = 24
    num_noises: int = 12
    pool_seed: int = 0
    speaker_dirs: dict = field(default_factory=dict)
    noise_files: list = field(default_factory=list)

    @property
    def speaker_ids(self) -> list[int]:
        return list(range(self.num_speakers)) + sorted(self.speaker_dirs)

    @property
    def noise_ids(self) -> list[int]:
        return list(range(self.num_noises + len(self.noise_files)))

    def speech_ref(self, speaker: int, utterance: int) -> dict:
        if speaker in self.speaker_dirs:
            files = sorted(Path(self.speaker_dirs[speaker]).glob("*.wav"))
            return {"kind": "wav", "path": str(files[utterance % len(files)]), "speaker": speaker}
        return {"kind": "speech", "speaker": speaker, "utterance": utterance, "pool_seed": self.pool_seed}

    def noise_ref(self, noise: int, seed: int) -> dict:
        if noise >= self.num_noises:
            return {"kind": "wav", "path": str(self.noise_files[noise - self.num_noises]), "noise": noise,
                    "offset_seed": seed}
        return {"kind": "noise", "noise": noise, "seed": seed, "pool_seed": self.pool_seed}

    def to_dict(self) -> dict:
        return {
            "num_speakers": self.num_speakers,
            "num_noises": self.num_noises,
            "pool_seed": self.pool_seed,
            "speaker_dirs": {str(k): str(v) for k, v in self.speaker_dirs.items()},
            "noise_files": [str(p) for p in self.noise_files],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SourcePool":
        return cls(d.get("num_speakers", 24), d.get("num_noises", 12), d.get("pool_seed", 0),
                   {int(k): v for k, v in d.get("speaker_dirs", {}).items()}, list(d.get("noise_files", [])))


def materialize(ref: dict, num_samples: int) -> np.ndarray:
    """Render a JSON source reference to a dry signal of ``num_samples`` samples."""
    kind = ref["kind"]
    if kind == "speech":
        profile = SpeakerProfile.from_id(ref["speaker"], ref.get("pool_seed", 0))
        return synth_utterance(profile, num_samples, ref["utterance"])
    if kind == "noise":
        profile = NoiseProfile.from_id(ref["noise"], ref.get("pool_seed", 0))
        return colored_noise(profile.exponent, num_samples, ref["seed"], profile.modulation)
    if kind == "wav":
        x = read_wav(ref["path"])
        if x.ndim == 2:
            x = x[0]
        if len(x) < num_samples:
            x = np.concatenate([x, np.zeros(num_samples - len(x))])
        offset = 0
        if "offset_seed" in ref and len(x) > num_samples:
            offset = int(np.random.default_rng(ref["offset_seed"]).integers(0, len(x) - num_samples))
        return x[offset : offset + num_samples].astype(np.float64)
    if kind == "silence":
        return np.zeros(num_samples)
    raise ValueError(f"unknown source kind {kind!r}")
