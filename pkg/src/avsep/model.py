"""Two-stage audio-visual network: dilated-conv mask estimator + BLSTM spectral mapper.

Separation module
    features (B, 1799, T) -> pointwise C -> 8 dilated blocks
    visual target / interferer (B, Dv, Tv) -> shared 1-D conv block -> concat -> upsample
    fusion pointwise over [audio | visual] -> C -> repeats x 8 dilated blocks
    -> pointwise 257 -> ReLU mask;  separated magnitude = mask * |Y0|
Dereverberation module
    (B, T, 257) -> layer norm -> BLSTM stack -> linear 257 -> ReLU
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import BatchNormState, DiffValue
from .dsp import DEFAULT_STFT
from .visual import upsample_index

FEATURE_DIM = 1799
NUM_BINS = DEFAULT_STFT.num_bins


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 32
    blocks: int = 8
    repeats: int = 3
    kernel: int = 3
    visual_dim: int = 64
    visual_channels: int = 32
    lstm_hidden: int = 64
    lstm_layers: int = 4
    mask_activation: str = "relu"  # or "sigmoid"
    use_visual: bool = True
    input_dim: int = FEATURE_DIM
    num_bins: int = NUM_BINS
    init_seed: int = 0

    def __post_init__(self):
        if self.mask_activation not in ("relu", "sigmoid"):
            raise ValueError(f"unknown mask activation {self.mask_activation!r}")
        if self.kernel % 2 != 1:
            raise ValueError("kernel size must be odd")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def receptive_field(blocks: int, kernel: int = 3) -> int:
    """Frames seen by one stack of blocks with dilations 1, 2, ..., 2^(blocks-1)."""
    return (kernel - 1) * (2**blocks - 1) + 1


class Model:
    """Parameters and forward passes. Parameters live in ``self.params`` by name."""

    SEPARATION = "sep"
    DEREVERB = "derev"

    def __init__(self, config: ModelConfig = ModelConfig()):
        self.config = config
        self.params: dict[str, DiffValue] = {}
        self.bn: dict[str, BatchNormState] = {}
        # False: training-mode passes use batch statistics but leave running averages alone
        self.update_stats = True
        self._rng = np.random.default_rng([config.init_seed, 4242])
        self._build()
        del self._rng

    # ------------------------------------------------------------ construction
    def _add(self, name, value):
        self.params[name] = ag.param(value, name)

    def _weight(self, name, shape, fan_in):
        self._add(name, self._rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape))

    def _block(self, prefix, channels, hidden):
        c, k = channels, self.config.kernel
        self._weight(f"{prefix}.in.w", (hidden, c), c)
        self._add(f"{prefix}.in.b", np.zeros(hidden))
        self._norm(f"{prefix}.bn1", hidden)
        self._add(f"{prefix}.prelu1", np.full(hidden, 0.25))
        self._weight(f"{prefix}.dw.w", (hidden, k), k)
        self._add(f"{prefix}.dw.b", np.zeros(hidden))
        self._norm(f"{prefix}.bn2", hidden)
        self._add(f"{prefix}.prelu2", np.full(hidden, 0.25))
        # small output weights keep the residual stack near identity at start
        self._add(f"{prefix}.out.w", self._rng.normal(0.0, 0.1 / np.sqrt(hidden), (c, hidden)))
        self._add(f"{prefix}.out.b", np.zeros(c))

    def _norm(self, name, channels):
        self._add(f"{name}.gamma", np.ones(channels))
        self._add(f"{name}.beta", np.zeros(channels))
        self.bn[name] = BatchNormState(channels)

    def _build(self):
        cfg = self.config
        c = cfg.channels
        s = self.SEPARATION
        self._add(f"{s}.lps.gamma", np.ones(cfg.num_bins))
        self._add(f"{s}.lps.beta", np.zeros(cfg.num_bins))
        self._weight(f"{s}.in.w", (c, cfg.input_dim), cfg.input_dim)
        self._add(f"{s}.in.b", np.zeros(c))
        for i in range(cfg.blocks):
            self._block(f"{s}.pre{i}", c, c)
        fuse_in = c + (2 * cfg.visual_channels if cfg.use_visual else 0)
        if cfg.use_visual:
            v = cfg.visual_channels
            self._weight(f"{s}.vis.in.w", (v, cfg.visual_dim), cfg.visual_dim)
            self._add(f"{s}.vis.in.b", np.zeros(v))
            self._weight(f"{s}.vis.dw.w", (v, cfg.kernel), cfg.kernel)
            self._add(f"{s}.vis.dw.b", np.zeros(v))
            self._norm(f"{s}.vis.bn", v)
            self._add(f"{s}.vis.prelu", np.full(v, 0.25))
            self._add(f"{s}.vis.out.w", self._rng.normal(0.0, 0.1 / np.sqrt(v), (v, v)))
            self._add(f"{s}.vis.out.b", np.zeros(v))
        self._weight(f"{s}.fuse.w", (c, fuse_in), fuse_in)
        self._add(f"{s}.fuse.b", np.zeros(c))
        for r in range(cfg.repeats):
            for i in range(cfg.blocks):
                self._block(f"{s}.rep{r}.{i}", c, c)
        self._add(f"{s}.mask.w", self._rng.normal(0.0, 0.1 / np.sqrt(c), (cfg.num_bins, c)))
        self._add(f"{s}.mask.b", np.full(cfg.num_bins, 0.5 if cfg.mask_activation == "relu" else 0.0))

        d = self.DEREVERB
        h = cfg.lstm_hidden
        self._add(f"{d}.ln.gamma", np.ones(cfg.num_bins))
        self._add(f"{d}.ln.beta", np.zeros(cfg.num_bins))
        width = cfg.num_bins
        bound = 1.0 / np.sqrt(h)
        for layer in range(cfg.lstm_layers):
            for direction in ("fw", "bw"):
                p = f"{d}.lstm{layer}.{direction}"
                self._add(f"{p}.w_ih", self._rng.uniform(-bound, bound, (4 * h, width)))
                self._add(f"{p}.w_hh", self._rng.uniform(-bound, bound, (4 * h, h)))
                bias = np.zeros(4 * h)
                bias[h : 2 * h] = 1.0  # forget gate open at start
                self._add(f"{p}.b", bias)
            width = 2 * h
        self._weight(f"{d}.out.w", (cfg.num_bins, width), width)
        self._add(f"{d}.out.b", np.full(cfg.num_bins, 0.1))

    # ------------------------------------------------------------ bookkeeping
    def names(self, group: str | None = None) -> list[str]:
        return [n for n in self.params if group is None or n.startswith(group + ".")]

    def set_trainable(self, group: str | None) -> None:
        """Only parameters of ``group`` (None = all) receive gradients."""
        for name, p in self.params.items():
            p.requires_grad = group is None or name.startswith(group + ".")

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        return {n: (np.zeros_like(p.data) if p.grad is None else p.grad) for n, p in self.params.items()}

    def checksum(self, group: str | None = None) -> str:
        h = hashlib.sha256()
        for n in self.names(group):
            h.update(n.encode())
            h.update(np.ascontiguousarray(self.params[n].data).tobytes())
        for n, st in sorted(self.bn.items()):
            if group is None or n.startswith(group + "."):
                h.update(st.mean.tobytes())
                h.update(st.var.tobytes())
        return h.hexdigest()

    def state(self) -> dict[str, np.ndarray]:
        out = {n: p.data.copy() for n, p in self.params.items()}
        for n, st in self.bn.items():
            out[f"{n}.running_mean"] = st.mean.copy()
            out[f"{n}.running_var"] = st.var.copy()
        return out

    def load_state(self, state: dict) -> None:
        for n, p in self.params.items():
            if state[n].shape != p.data.shape:
                raise ValueError(f"{n}: checkpoint shape {state[n].shape} != model shape {p.data.shape}")
            p.data = np.array(state[n], dtype=np.float64)
        for n, st in self.bn.items():
            st.mean = np.array(state[f"{n}.running_mean"], dtype=np.float64)
            st.var = np.array(state[f"{n}.running_var"], dtype=np.float64)

    def clone(self) -> "Model":
        other = Model.__new__(Model)
        other.config = self.config
        other.update_stats = True
        other.params = {n: ag.param(p.data.copy(), n) for n, p in self.params.items()}
        other.bn = {}
        for n, st in self.bn.items():
            cp = BatchNormState(len(st.mean), st.momentum)
            cp.mean, cp.var = st.mean.copy(), st.var.copy()
            other.bn[n] = cp
        return other

    # ------------------------------------------------------------ forward
    def _p(self, name):
        return self.params[name]

    def _bn(self, x, name, training):
        return ag.batch_norm(x, self._p(f"{name}.gamma"), self._p(f"{name}.beta"), self.bn[name], training,
                             update=self.update_stats)

    def _dilated_block(self, x, prefix, dilation, training):
        h = ag.pointwise_conv(x, self._p(f"{prefix}.in.w"), self._p(f"{prefix}.in.b"))
        h = ag.prelu(self._bn(h, f"{prefix}.bn1", training), self._p(f"{prefix}.prelu1"))
        h = ag.depthwise_conv(h, self._p(f"{prefix}.dw.w"), self._p(f"{prefix}.dw.b"), dilation)
        h = ag.prelu(self._bn(h, f"{prefix}.bn2", training), self._p(f"{prefix}.prelu2"))
        h = ag.pointwise_conv(h, self._p(f"{prefix}.out.w"), self._p(f"{prefix}.out.b"))
        return ag.add(x, h)

    def _visual_block(self, v, training):
        s = self.SEPARATION
        h = ag.pointwise_conv(v, self._p(f"{s}.vis.in.w"), self._p(f"{s}.vis.in.b"))
        r = ag.depthwise_conv(h, self._p(f"{s}.vis.dw.w"), self._p(f"{s}.vis.dw.b"), 1)
        r = ag.prelu(self._bn(r, f"{s}.vis.bn", training), self._p(f"{s}.vis.prelu"))
        r = ag.pointwise_conv(r, self._p(f"{s}.vis.out.w"), self._p(f"{s}.vis.out.b"))
        return ag.add(h, r)

    def forward_separation(self, features, visual_target, visual_interferer, mix_mag, training=False):
        """Return (mask, separated magnitude) as (B, T, F) DiffValues.

        ``features`` (B, T, 1799) with per-frame standardized LPS in the first F
        columns; visual streams (B, Tv, Dv); ``mix_mag`` (B, T, F).
        """
        cfg = self.config
        s = self.SEPARATION
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim == 2:
            feats = feats[None]
        mix_mag = np.asarray(mix_mag, dtype=np.float64).reshape(feats.shape[0], feats.shape[1], -1)
        bsz, t_len, dim = feats.shape
        if dim != cfg.input_dim:
            raise ValueError(f"feature width {dim} != {cfg.input_dim}")
        if mix_mag.shape != (bsz, t_len, cfg.num_bins):
            raise ValueError(f"mixture magnitude {mix_mag.shape} does not match features {feats.shape}")
        x = np.transpose(feats, (0, 2, 1))
        f = cfg.num_bins
        lps = ag.add(ag.mul(ag.const(x[:, :f]), _col(self._p(f"{s}.lps.gamma"))), _col(self._p(f"{s}.lps.beta")))
        h = ag.concat([lps, ag.const(x[:, f:])], axis=1)
        h = ag.pointwise_conv(h, self._p(f"{s}.in.w"), self._p(f"{s}.in.b"))
        for i in range(cfg.blocks):
            h = self._dilated_block(h, f"{s}.pre{i}", 2**i, training)

        if cfg.use_visual:
            vt = np.asarray(visual_target, dtype=np.float64).reshape(bsz, -1, cfg.visual_dim)
            vi = np.asarray(visual_interferer, dtype=np.float64).reshape(bsz, -1, cfg.visual_dim)
            if vt.shape[1] != vi.shape[1]:
                raise ValueError("target and interferer visual streams differ in length")
            both = np.concatenate([vt, vi], axis=0).transpose(0, 2, 1)  # shared weights: one pass
            emb = self._visual_block(ag.const(both), training)
            emb = ag.concat([_slice_batch(emb, 0, bsz), _slice_batch(emb, bsz, 2 * bsz)], axis=1)
            emb = ag.gather_time(emb, upsample_index(t_len, vt.shape[1]))
            h = ag.concat([h, emb], axis=1)
        h = ag.pointwise_conv(h, self._p(f"{s}.fuse.w"), self._p(f"{s}.fuse.b"))
        for r in range(cfg.repeats):
            for i in range(cfg.blocks):
                h = self._dilated_block(h, f"{s}.rep{r}.{i}", 2**i, training)
        m = ag.pointwise_conv(h, self._p(f"{s}.mask.w"), self._p(f"{s}.mask.b"))
        m = ag.relu(m) if cfg.mask_activation == "relu" else ag.sigmoid(m)
        mask = ag.transpose(m, (0, 2, 1))
        return mask, ag.mul(mask, mix_mag)

    def forward_dereverb(self, sep_mag, training=False):
        """(B, T, F) magnitude -> (B, T, F) non-negative estimate."""
        cfg = self.config
        d = self.DEREVERB
        x = sep_mag if isinstance(sep_mag, DiffValue) else ag.const(sep_mag)
        if x.data.ndim == 2:
            x = _unsqueeze(x)
        if x.shape[-1] != cfg.num_bins:
            raise ValueError(f"expected {cfg.num_bins} bins, got {x.shape[-1]}")
        h = ag.layer_norm(x, self._p(f"{d}.ln.gamma"), self._p(f"{d}.ln.beta"), axis=-1)
        for layer in range(cfg.lstm_layers):
            p = f"{d}.lstm{layer}"
            fw = ag.lstm(h, self._p(f"{p}.fw.w_ih"), self._p(f"{p}.fw.w_hh"), self._p(f"{p}.fw.b"))
            bw = ag.lstm(h, self._p(f"{p}.bw.w_ih"), self._p(f"{p}.bw.w_hh"), self._p(f"{p}.bw.b"), reverse=True)
            h = ag.concat([fw, bw], axis=-1)
        y = ag.linear(h, self._p(f"{d}.out.w"), self._p(f"{d}.out.b"))
        return ag.relu(y)

    def forward(self, features, visual_target, visual_interferer, mix_mag, training=False):
        mask, sep = self.forward_separation(features, visual_target, visual_interferer, mix_mag, training)
        return mask, sep, self.forward_dereverb(sep, training)


def _col(p: DiffValue) -> DiffValue:
    """(C,) parameter viewed as (1, C, 1)."""
    return DiffValue(p.data[None, :, None], (p,), lambda g: (g.sum(axis=(0, 2)),))


def _slice_batch(x: DiffValue, lo: int, hi: int) -> DiffValue:
    def back(g):
        gx = np.zeros_like(x.data)
        gx[lo:hi] = g
        return (gx,)

    return DiffValue(x.data[lo:hi], (x,), back)


def _unsqueeze(x: DiffValue) -> DiffValue:
    return DiffValue(x.data[None], (x,), lambda g: (g[0],))
