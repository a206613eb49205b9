"""Training objectives with analytic gradients.

Every loss returns a :class:`LossValue` whose gradient has the shape of the
estimate. Waveform losses zero-mean both signals first; the gradient is
projected back through that centering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import DEFAULT_STFT, StftConfig, recompose, recompose_adjoint

EPS = 1e-8
SI_SNR_CAP_DB = 80.0
LAMBDA_GRID = (0.01, 0.02, 0.05, 0.08, 0.1, 0.2, 0.4)
_DB = 20.0 / np.log(10.0)
# guards divisions by a norm that can legitimately reach 0
_TINY = 1e-300


@dataclass
class LossValue:
    value: float
    gradient: np.ndarray


def validate_lambda(lam: float) -> float:
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0:
        raise ValueError(f"lambda must be a finite value >= 0, got {lam}")
    return lam


@dataclass
class _Projection:
    """Zero-mean decomposition x = t + e with t = alpha s."""

    x: np.ndarray
    s: np.ndarray
    alpha: float
    t: np.ndarray
    e: np.ndarray
    nt: float
    ne: float
    nx: float


def _project(est, ref) -> _Projection:
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape or est.ndim != 1:
        raise ValueError(f"expected equal-length 1-D signals, got {est.shape} and {ref.shape}")
    s = ref - ref.mean()
    ss = float(s @ s)
    if ss == 0.0:
        raise ValueError("reference signal is silent")
    x = est - est.mean()
    alpha = float(x @ s) / ss
    t = alpha * s
    e = x - t
    return _Projection(x, s, alpha, t, e, float(np.linalg.norm(t)), float(np.linalg.norm(e)),
                       float(np.linalg.norm(x)))


def _stabilized_error(p: _Projection) -> float:
    # relative floor keeps the measure exactly scale invariant
    return p.ne + EPS * p.nx


def _center(g: np.ndarray) -> np.ndarray:
    return g - g.mean()


def si_snr(est, ref) -> float:
    """Scale-invariant SNR in dB, clipped to +-80."""
    p = _project(est, ref)
    if p.nt == 0.0:
        return -SI_SNR_CAP_DB
    raw = _DB * np.log(p.nt / _stabilized_error(p))
    return float(np.clip(raw, -SI_SNR_CAP_DB, SI_SNR_CAP_DB))


def loss_si_snr(est, ref) -> LossValue:
    """Negative SI-SNR with its gradient."""
    p = _project(est, ref)
    if p.nt == 0.0:
        return LossValue(SI_SNR_CAP_DB, np.zeros_like(p.x))
    d = _stabilized_error(p)
    raw = _DB * np.log(p.nt / d)
    if abs(raw) >= SI_SNR_CAP_DB:
        return LossValue(-float(np.clip(raw, -SI_SNR_CAP_DB, SI_SNR_CAP_DB)), np.zeros_like(p.x))
    # d log||t|| / dx = t/||t||^2 ; d log D / dx = (e/||e|| + eps x/||x||)/D
    g_num = p.t / p.nt**2
    g_den = (p.e / max(p.ne, _TINY) + EPS * p.x / max(p.nx, _TINY)) / d
    return LossValue(-float(raw), -_DB * _center(g_num - g_den))


def loss_si_snr_rewritten(est, ref) -> float:
    """The same loss written as 20 log10(||e|| / ||t||), evaluated independently."""
    p = _project(est, ref)
    if p.nt == 0.0:
        return SI_SNR_CAP_DB
    raw = 20.0 * np.log10(_stabilized_error(p) / p.nt)
    return float(np.clip(raw, -SI_SNR_CAP_DB, SI_SNR_CAP_DB))


def loss_si_snr_nonneg(est, ref) -> LossValue:
    """20 log10(||e||/||t|| + 1); zero iff the estimate is a scaled reference."""
    p = _project(est, ref)
    if p.nt == 0.0:
        # estimate orthogonal to the reference; the ratio is unbounded
        nt = _TINY if p.ne == 0.0 else p.ne * 1e-12
    else:
        nt = p.nt
    r = p.ne / nt
    value = 20.0 * np.log10(r + 1.0)
    dr = p.e / (nt * max(p.ne, _TINY)) - r * p.t / nt**2
    return LossValue(float(value), _DB / (r + 1.0) * _center(dr))


def loss_mse(est_mag, ref_mag) -> LossValue:
    est_mag = np.asarray(est_mag, dtype=np.float64)
    ref_mag = np.asarray(ref_mag, dtype=np.float64)
    if est_mag.shape != ref_mag.shape:
        raise ValueError(f"shape mismatch {est_mag.shape} vs {ref_mag.shape}")
    diff = est_mag - ref_mag
    return LossValue(float(np.mean(diff**2)), 2.0 * diff / diff.size)


def batched(loss_fn, est, ref) -> LossValue:
    """Mean of a 1-D waveform loss over the leading axis of (B, N) arrays."""
    est = np.atleast_2d(est)
    ref = np.atleast_2d(ref)
    vals, grads = [], []
    for e, r in zip(est, ref):
        lv = loss_fn(e, r)
        vals.append(lv.value)
        grads.append(lv.gradient)
    b = len(vals)
    return LossValue(float(np.mean(vals)), np.stack(grads) / b)


def loss_multi_obj(est_mag, ref_mag, phase, ref_wav, lam: float,
                   cfg: StftConfig = DEFAULT_STFT) -> LossValue:
    """MSE on magnitudes plus lam times the non-negative SI-SNR loss on the waveform.

    ``est_mag``/``ref_mag``/``phase`` are (T, F) or (B, T, F); the waveform is
    ``recompose(est_mag, phase)`` and ``ref_wav`` is trimmed to its length.
    The gradient is with respect to ``est_mag``.
    """
    lam = validate_lambda(lam)
    mse = loss_mse(est_mag, ref_mag)
    if lam == 0.0:
        return mse
    single = np.ndim(est_mag) == 2
    mags = np.asarray(est_mag)[None] if single else np.asarray(est_mag)
    phases = np.asarray(phase)[None] if single else np.asarray(phase)
    refs = np.atleast_2d(ref_wav)
    wav = recompose(mags, phases, cfg)
    si = batched(loss_si_snr_nonneg, wav, refs[:, : wav.shape[-1]])
    g_mag = recompose_adjoint(si.gradient, phases, cfg)
    grad = mse.gradient + lam * (g_mag[0] if single else g_mag)
    return LossValue(mse.value + lam * si.value, grad)


def si_snr_improvement(processed, unprocessed, ref) -> float:
    return si_snr(processed, ref) - si_snr(unprocessed, ref)
