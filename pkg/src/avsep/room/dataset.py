"""Random scene sampling, speaker/noise-disjoint splits and dataset rendering."""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..dsp import SAMPLE_RATE
from .geometry import DEFAULT_OFFSETS, ArrayGeometry
from .rir import RoomSpec
from .scene import MixtureBundle, SceneSpec, SourcePlacement, render_scene
from .sources import SourcePool

SPLITS = ("train", "validation", "test")
_SPLIT_CODE = {name: i for i, name in enumerate(SPLITS)}


class PoolTooSmallError(ValueError):
    pass


@dataclass
class SamplerConfig:
    room_min: tuple = (4.0, 4.0, 3.0)
    room_max: tuple = (10.0, 10.0, 6.0)
    t60_range: tuple = (0.05, 0.7)
    distance_range: tuple = (0.5, 6.0)
    snr_choices: tuple = (6, 12, 18, 24, 30)
    tir_choices: tuple = (-6, 0, 6)
    # number of speakers per scene -> probability
    speaker_counts: dict = field(default_factory=lambda: {2: 0.5, 3: 0.5})
    duration_s: float = 4.0
    wall_margin: float = 0.3
    array_height: tuple = (1.0, 1.6)
    source_height: tuple = (1.1, 1.9)
    split_fractions: tuple = (0.6, 0.15, 0.25)
    offsets: tuple = DEFAULT_OFFSETS

    def to_dict(self) -> dict:
        d = asdict(self)
        d["speaker_counts"] = {str(k): v for k, v in self.speaker_counts.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        d = dict(d)
        if "speaker_counts" in d:
            d["speaker_counts"] = {int(k): float(v) for k, v in d["speaker_counts"].items()}
        for key in ("room_min", "room_max", "t60_range", "distance_range", "snr_choices", "tir_choices",
                    "array_height", "source_height", "split_fractions", "offsets"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @property
    def max_speakers(self) -> int:
        return max(k for k, p in self.speaker_counts.items() if p > 0)


def _partition(ids: list, fractions, minimum: int, what: str) -> dict:
    n = len(ids)
    counts = [max(minimum, int(round(f * n))) for f in fractions]
    counts[0] = n - sum(counts[1:])
    if counts[0] < minimum or sum(counts) > n:
        raise PoolTooSmallError(f"{n} {what} cannot form disjoint splits of at least {minimum} each")
    out, start = {}, 0
    for name, c in zip(SPLITS, counts):
        out[name] = ids[start : start + c]
        start += c
    return out


def split_pool(pool: SourcePool, config: SamplerConfig) -> dict:
    """Disjoint speaker and noise ids per split."""
    if len(pool.speaker_ids) < 3:
        raise PoolTooSmallError("source pool needs at least 3 distinct speakers")
    speakers = _partition(pool.speaker_ids, config.split_fractions, config.max_speakers, "speakers")
    noises = _partition(pool.noise_ids, config.split_fractions, 1, "noises")
    return {name: {"speakers": speakers[name], "noises": noises[name]} for name in SPLITS}


def scene_seed(seed: int, split: str, index: int) -> int:
    return int(np.random.SeedSequence([seed, _SPLIT_CODE[split], index]).generate_state(1)[0])


def _place(rng, room: RoomSpec, array: ArrayGeometry, doa: float, config: SamplerConfig):
    """Point at the given DOA, in front of the camera, legal distance, inside the room."""
    axis = np.asarray(array.axis)
    normal = np.array([-axis[1], axis[0], 0.0])
    direction = np.cos(doa) * axis + np.sin(doa) * normal
    center = np.asarray(array.center)
    lo, hi = config.distance_range
    for _ in range(50):
        z = rng.uniform(*config.source_height)
        horiz = rng.uniform(lo, hi)
        p = center + horiz * direction
        p[2] = z
        dist = np.linalg.norm(p - center)
        if lo <= dist <= hi and room.contains(p, config.wall_margin):
            return tuple(float(v) for v in p)
    return None


def sample_scene(rng, pool: SourcePool, split_ids: dict, config: SamplerConfig, seed: int,
                 split: str, index: int) -> SceneSpec:
    while True:
        dims = rng.uniform(config.room_min, config.room_max)
        room_probe = RoomSpec(tuple(float(d) for d in dims), 1.0)
        t_lo = max(config.t60_range[0], room_probe.min_t60() * 1.001)
        if t_lo >= config.t60_range[1]:
            continue
        room = RoomSpec(room_probe.dimensions, float(rng.uniform(t_lo, config.t60_range[1])))
        margin = 0.5
        center = rng.uniform([margin, margin, config.array_height[0]],
                             [dims[0] - margin, dims[1] - margin, config.array_height[1]])
        yaw = rng.uniform(0, 2 * np.pi)
        array = ArrayGeometry(config.offsets, tuple(float(c) for c in center),
                              (float(np.cos(yaw)), float(np.sin(yaw)), 0.0))

        counts, probs = zip(*sorted(config.speaker_counts.items()))
        n_spk = int(rng.choice(counts, p=np.asarray(probs) / np.sum(probs)))
        speakers = rng.choice(split_ids["speakers"], size=n_spk, replace=False)
        positions = [_place(rng, room, array, rng.uniform(0, np.pi), config) for _ in range(n_spk + 1)]
        if any(p is None for p in positions):
            continue
        utt = rng.integers(0, 2**31, size=n_spk + 1)
        target = SourcePlacement(positions[0], "target", pool.speech_ref(int(speakers[0]), int(utt[0])))
        interferers = [SourcePlacement(positions[k], "interferer", pool.speech_ref(int(speakers[k]), int(utt[k])))
                       for k in range(1, n_spk)]
        noise_id = int(rng.choice(split_ids["noises"]))
        noise = SourcePlacement(positions[n_spk], "noise", pool.noise_ref(noise_id, int(utt[n_spk])))
        return SceneSpec(
            room=room,
            array=array,
            target=target,
            interferers=interferers,
            noise=noise,
            snr_db=float(rng.choice(config.snr_choices)),
            tir_db=float(rng.choice(config.tir_choices)),
            rng_seed=seed,
            num_samples=int(round(config.duration_s * SAMPLE_RATE)),
            split=split,
            scene_id=f"{split}_{index:05d}",
        )


def sample_dataset(count: int, pool: SourcePool, seed: int, split: str = "train",
                   config: SamplerConfig | None = None) -> list[SceneSpec]:
    """Deterministic list of scene specs for one split."""
    config = config or SamplerConfig()
    ids = split_pool(pool, config)[split]
    scenes = []
    for i in range(count):
        s = scene_seed(seed, split, i)
        scenes.append(sample_scene(np.random.default_rng(s), pool, ids, config, s, split, i))
    return scenes


def sample_splits(counts: dict, pool: SourcePool, seed: int, config: SamplerConfig | None = None) -> dict:
    return {split: sample_dataset(n, pool, seed, split, config) for split, n in counts.items()}


def speakers_of(scenes) -> set:
    out = set()
    for sc in scenes:
        for p in [sc.target, *sc.interferers]:
            if p.source and "speaker" in p.source:
                out.add(p.source["speaker"])
    return out


def default_jobs() -> int:
    return int(os.environ.get("AVSEP_JOBS", "1"))


def render_dataset(scenes, out_dir, jobs: int | None = None) -> dict:
    """Render scenes to ``out_dir/<scene_id>/`` and write ``manifest.json``.

    Each scene is a pure function of its spec, so the output does not depend on
    ``jobs``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = jobs or default_jobs()

    def work(spec: SceneSpec):
        bundle = render_scene(spec)
        bundle.save(out / spec.scene_id)
        return spec.scene_id, bundle.metadata

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            results = list(ex.map(work, scenes))
    else:
        results = [work(s) for s in scenes]
    entries = [{"scene_id": sid, "split": meta["split"], "path": sid,
                "num_speakers": meta["num_speakers"], "min_angle": meta["min_angle"],
                "drr_db": meta["drr_db"]} for sid, meta in results]
    manifest = {"scenes": entries, "specs": [s.to_dict() for s in scenes]}
    text = json.dumps(manifest, indent=2, sort_keys=True)
    manifest["hash"] = hashlib.sha256(text.encode()).hexdigest()[:16]
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def load_manifest(directory) -> dict:
    return json.loads((Path(directory) / "manifest.json").read_text())


def load_bundles(directory, split: str | None = None) -> list[MixtureBundle]:
    d = Path(directory)
    manifest = load_manifest(d)
    return [MixtureBundle.load(d / e["path"]) for e in manifest["scenes"] if split is None or e["split"] == split]
