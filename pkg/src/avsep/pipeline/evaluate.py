"""Per-utterance evaluation of processing systems against the anechoic target."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..dsp import DEFAULT_STFT, recompose
from ..estoi import estoi
from ..losses import si_snr
from ..model import Model
from ..room.dataset import default_jobs
from ..room.geometry import angle_bin
from ..wpe import WpeConfig, wpe_waveform
from .data import Example, full_batch

ORACLE_EPS = 1e-8
DRR_BIN_EDGES = (-math.inf, -15.0, -10.0, -5.0, 0.0, math.inf)


def _drr_label(lo: float, hi: float) -> str:
    if lo == -math.inf:
        return f"<{hi:g}"
    if hi == math.inf:
        return f">={lo:g}"
    return f"{lo:g}..{hi:g}"


DRR_BINS = tuple(_drr_label(lo, hi) for lo, hi in zip(DRR_BIN_EDGES[:-1], DRR_BIN_EDGES[1:]))


def drr_bin(drr_db: float) -> str:
    """Left-closed 5 dB bins."""
    for label, lo, hi in zip(DRR_BINS, DRR_BIN_EDGES[:-1], DRR_BIN_EDGES[1:]):
        if lo <= drr_db < hi:
            return label
    raise ValueError(f"DRR {drr_db} not binnable")


def _angle_key(meta: dict) -> str:
    if meta.get("min_angle") is None:
        return "none"
    return angle_bin(meta["min_angle"])


def oracle_mask_waveform(ex: Example) -> np.ndarray:
    """Ratio mask |S_reverb| / (|Y| + eps) on the mixture magnitude with the mixture phase."""
    mask = ex.reverb_target_mag / (ex.mix_mag + ORACLE_EPS)
    return recompose(mask * ex.mix_mag, ex.mix_phase)


def model_waveforms(model: Model, examples, stages=("sep", "full")) -> list[dict]:
    """Run the network on whole utterances (inference mode) and recompose with the noisy phase."""
    out = []
    for ex in examples:
        b = full_batch([ex])
        _, sep, est = model.forward(b.features, b.visual_target, b.visual_interferer, b.mix_mag, training=False)
        w = {}
        if "sep" in stages:
            w["sep"] = recompose(sep.data[0], ex.mix_phase)
        if "full" in stages:
            w["full"] = recompose(est.data[0], ex.mix_phase)
        out.append(w)
    return out


def score(est: np.ndarray, ex: Example, unprocessed_si_snr: float) -> dict:
    ref = ex.anechoic[: len(est)]
    s = si_snr(est, ref)
    return {"si_snr": s, "si_snri": s - unprocessed_si_snr, "estoi": estoi(est, ref)}


def _row(system: str, ex: Example, metrics: dict, condition: str = "") -> dict:
    meta = ex.metadata
    return {
        "system": system,
        "condition": condition,
        "scene_id": ex.scene_id,
        "num_speakers": int(meta["num_speakers"]),
        "angle_bin": _angle_key(meta),
        "drr_db": float(meta["drr_db"]),
        "drr_bin": drr_bin(float(meta["drr_db"])),
        **metrics,
    }


def evaluate_examples(examples, systems: dict, jobs: int | None = None, condition: str = "",
                      include_unprocessed: bool = True) -> list[dict]:
    """Score every system on every example.

    ``systems`` maps a system name to a list of waveforms aligned with
    ``examples`` (or to a callable ``ex -> waveform``). The unprocessed mixture
    row is included unless disabled. The unprocessed SI-SNR pairs mixture ch-0 with the
    anechoic target.
    """
    jobs = jobs or default_jobs()

    def one(i):
        ex = examples[i]
        waves = {name: _waveform(src, i, ex) for name, src in systems.items()}
        length = DEFAULT_STFT.num_samples(ex.num_frames)
        unproc = ex.mixture[:length]
        base = si_snr(unproc, ex.anechoic[:length])
        rows = [_row("unprocessed", ex, score(unproc, ex, base), condition)] if include_unprocessed else []
        for name, w in waves.items():
            rows.append(_row(name, ex, score(w[:length], ex, base), condition))
        return rows

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            per = list(pool.map(one, range(len(examples))))
    else:
        per = [one(i) for i in range(len(examples))]
    return [r for rows in per for r in rows]


def _waveform(src, i, ex):
    return src(ex) if callable(src) else src[i]


def oracle_mask_gain(examples) -> list[float]:
    """SI-SNR gain (dB) of the oracle mask over the mixture, both against the reverberant target."""
    gains = []
    for ex in examples:
        w = oracle_mask_waveform(ex)
        ref = ex.reverb_target[: len(w)]
        gains.append(si_snr(w, ref) - si_snr(ex.mixture[: len(w)], ref))
    return gains


def wpe_on(waves, cfg: WpeConfig = WpeConfig()) -> list[np.ndarray]:
    """WPE applied to each (separated) waveform, re-padded to its input length."""
    out = []
    for w in waves:
        d = wpe_waveform(w, cfg)
        out.append(np.pad(d, (0, len(w) - len(d))))
    return out
