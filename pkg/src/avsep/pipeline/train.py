"""Three-phase training: separation, dereverberation (separation frozen), joint."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import autograd as ag
from ..losses import batched, loss_multi_obj, loss_si_snr
from ..model import Model
from ..optim import AdamState, NumericFailure, adam_step
from .config import PHASES, TrainConfig
from .data import Batch, chunk_frames, full_batch, make_batch, sample_offsets

log = logging.getLogger(__name__)

_GROUP = {"sep": Model.SEPARATION, "dereverb": Model.DEREVERB, "joint": None}


@dataclass
class PhaseResult:
    phase: str
    steps: int
    losses: list = field(default_factory=list)  # per-step minibatch loss
    monitor_initial: float = float("nan")
    monitor_final: float = float("nan")
    validation: list = field(default_factory=list)  # (step, loss)
    best_step: int = 0
    best_validation: float = float("nan")
    frozen_checksum_before: str | None = None
    frozen_checksum_after: str | None = None
    max_frozen_grad: float = 0.0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _si_snr_node(wav: ag.DiffValue, ref: np.ndarray) -> ag.DiffValue:
    lv = batched(loss_si_snr, wav.data, ref)
    return ag.seed_loss(wav, lv.value, lv.gradient)


def phase_loss(model: Model, batch: Batch, phase: str, cfg: TrainConfig, training: bool) -> ag.DiffValue:
    """Scalar loss node of one phase's objective on a batch."""
    if phase == "sep":
        _, sep = model.forward_separation(batch.features, batch.visual_target, batch.visual_interferer,
                                          batch.mix_mag, training)
        wav = ag.recompose_node(sep, batch.mix_phase)
        return _si_snr_node(wav, batch.reverb_target)
    if phase == "dereverb":
        # separation runs as a fixed feature extractor with its running statistics
        _, sep = model.forward_separation(batch.features, batch.visual_target, batch.visual_interferer,
                                          batch.mix_mag, training=False)
        est = model.forward_dereverb(ag.const(sep.data), training)
        return ag.mean_squared_error(est, batch.anechoic_mag)
    if phase == "joint":
        _, _, est = model.forward(batch.features, batch.visual_target, batch.visual_interferer,
                                  batch.mix_mag, training)
        if cfg.joint_objective == "mse":
            return ag.mean_squared_error(est, batch.anechoic_mag)
        lv = loss_multi_obj(est.data, batch.anechoic_mag, batch.mix_phase, batch.anechoic, cfg.lam)
        return ag.seed_loss(est, lv.value, lv.gradient)
    raise ValueError(f"unknown phase {phase!r}")


def evaluate_loss(model: Model, batch: Batch, phase: str, cfg: TrainConfig, training: bool = False) -> float:
    """Loss value without touching parameters or running statistics."""
    saved = model.update_stats
    model.update_stats = False
    try:
        return float(phase_loss(model, batch, phase, cfg, training).data)
    finally:
        model.update_stats = saved


def train_phase(model: Model, train_set, val_set, cfg: TrainConfig, phase: str,
                callback=None) -> PhaseResult:
    """Run one phase in place on ``model``; the validation-best parameters are kept.

    ``monitor_initial``/``monitor_final`` are the phase loss on a fixed training
    batch (batch statistics, running averages untouched) before the first and
    after the last update.
    """
    if phase not in PHASES:
        raise ValueError(f"unknown phase {phase!r}")
    steps = cfg.steps(phase)
    group = _GROUP[phase]
    model.set_trainable(group)
    trainable = model.names(group)
    frozen = [n for n in model.params if n not in set(trainable)]
    result = PhaseResult(phase, steps)
    if phase == "dereverb":
        result.frozen_checksum_before = model.checksum(Model.SEPARATION)

    n_frames = min(chunk_frames(cfg.chunk_seconds), min(ex.num_frames for ex in train_set))
    monitor = make_batch(train_set[: cfg.monitor_batch], [0] * min(cfg.monitor_batch, len(train_set)), n_frames)
    val_batch = full_batch(val_set) if val_set else None
    result.monitor_initial = evaluate_loss(model, monitor, phase, cfg, training=True)

    def validate(step):
        if val_batch is None:
            return
        v = evaluate_loss(model, val_batch, phase, cfg)
        result.validation.append((step, v))
        if not np.isfinite(v):
            raise NumericFailure(f"{phase}: non-finite validation loss at step {step}")
        if step == 0 or v < result.best_validation:
            result.best_validation, result.best_step = v, step
            best_state[0] = model.state()

    best_state = [model.state()]
    validate(0)
    rng = np.random.default_rng([cfg.seed, PHASES.index(phase), 977])
    adam = AdamState()
    for step in range(1, steps + 1):
        idx = rng.choice(len(train_set), size=min(cfg.batch_size, len(train_set)), replace=False)
        chosen = [train_set[i] for i in sorted(idx)]
        batch = make_batch(chosen, sample_offsets(rng, chosen, n_frames), n_frames)
        model.zero_grad()
        loss = phase_loss(model, batch, phase, cfg, training=True)
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericFailure(f"{phase}: non-finite loss at step {step}")
        loss.backward()
        grads = model.gradients()
        result.max_frozen_grad = max([result.max_frozen_grad] + [float(np.abs(grads[n]).max()) for n in frozen])
        adam_step({n: model.params[n].data for n in trainable}, {n: grads[n] for n in trainable}, adam, cfg.lr)
        result.losses.append(value)
        if callback:
            callback(phase, step, value)
        if step % cfg.validate_every == 0 or step == steps:
            validate(step)
    result.monitor_final = evaluate_loss(model, monitor, phase, cfg, training=True)
    model.load_state(best_state[0])
    model.set_trainable(None)
    if phase == "dereverb":
        result.frozen_checksum_after = model.checksum(Model.SEPARATION)
    log.info("%s: monitor %.4f -> %.4f, best validation %.4f at step %d", phase, result.monitor_initial,
             result.monitor_final, result.best_validation, result.best_step)
    return result


def train_stage1(model, train_set, val_set, cfg, **kw) -> PhaseResult:
    return train_phase(model, train_set, val_set, cfg, "sep", **kw)


def train_stage2(model, train_set, val_set, cfg, **kw) -> PhaseResult:
    return train_phase(model, train_set, val_set, cfg, "dereverb", **kw)


def train_joint(model, train_set, val_set, cfg, **kw) -> PhaseResult:
    return train_phase(model, train_set, val_set, cfg, "joint", **kw)
