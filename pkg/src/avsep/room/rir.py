"""Shoebox image-method room impulse responses.

Walls share one reflection coefficient derived from the requested T60. The default
``"lattice"`` model matches the direction-averaged energy decay of the image lattice
itself, whose tail is dominated by paths with few wall hits and therefore decays
slower than Eyring's diffuse-field estimate; ``"eyring"`` is available too. Arrival times are rendered with a Hann-windowed sinc (81 taps). The direct
path uses its exact fractional delay; reflections use fractional delays quantized to
1/32 sample, which keeps long reverberant tails cheap to render. The reflected part
is high-passed: every image pulse is positive, and without the filter the dense late
tail accumulates a low-frequency offset that stretches the measured decay.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.signal import butter, sosfilt

from ..dsp import SAMPLE_RATE

SINC_TAPS = 81
_HALF = SINC_TAPS // 2
_FRAC_STEPS = 32
# k_d guard after the direct arrival (0.5 ms)
DIRECT_GUARD = 8
DRR_CAP_DB = 80.0
SABINE = 0.161
HIGHPASS_HZ = 80.0
_HIGHPASS = butter(2, HIGHPASS_HZ, btype="highpass", fs=SAMPLE_RATE, output="sos")


class RoomGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class RoomSpec:
    dimensions: tuple
    t60: float
    speed_of_sound: float = 343.0
    # explicit wall reflection coefficient; overrides the T60-derived value
    reflection: float | None = None
    max_order: int | None = None
    absorption_model: str = "lattice"

    @property
    def volume(self) -> float:
        lx, ly, lz = self.dimensions
        return lx * ly * lz

    @property
    def surface(self) -> float:
        lx, ly, lz = self.dimensions
        return 2 * (lx * ly + lx * lz + ly * lz)

    def reflection_coefficient(self) -> float:
        if self.reflection is not None:
            if not 0.0 <= self.reflection < 1.0:
                raise RoomGeometryError(f"reflection coefficient {self.reflection} not in [0, 1)")
            return float(self.reflection)
        if self.t60 < 0.05:
            raise RoomGeometryError(f"T60 {self.t60} s below the 0.05 s minimum")
        if self.t60 < self.min_t60():
            raise RoomGeometryError(
                f"T60 {self.t60:.3f} s incompatible with room {self.dimensions}: "
                f"Sabine absorption would exceed 1 (minimum {self.min_t60():.3f} s)"
            )
        if self.absorption_model == "eyring":
            # T60 = 24 ln10 V / (-c S ln(1 - a)), with 1 - a = beta^2
            log_beta = -12.0 * np.log(10.0) * self.volume / (self.speed_of_sound * self.surface * self.t60)
        elif self.absorption_model == "lattice":
            log_beta = -_lattice_decay_scale(tuple(self.dimensions)) / (2.0 * self.speed_of_sound * self.t60)
        else:
            raise ValueError(f"unknown absorption model {self.absorption_model!r}")
        beta = np.exp(log_beta)
        if not 0.0 <= beta < 1.0:
            raise RoomGeometryError(f"T60 {self.t60} s incompatible with room {self.dimensions}")
        return float(beta)

    def min_t60(self) -> float:
        """Shortest physically meaningful T60: Sabine mean absorption reaches 1."""
        return SABINE * self.volume / self.surface

    def reflection_order(self) -> int:
        if self.max_order is not None:
            return int(self.max_order)
        return int(np.ceil(self.t60 * self.speed_of_sound / min(self.dimensions)))

    def contains(self, point, margin: float = 0.0) -> bool:
        p = np.asarray(point, dtype=float)
        dims = np.asarray(self.dimensions, dtype=float)
        return bool(np.all(p > margin) and np.all(p < dims - margin))

    def to_dict(self) -> dict:
        return {
            "dimensions": list(self.dimensions),
            "t60": self.t60,
            "speed_of_sound": self.speed_of_sound,
            "reflection": self.reflection,
            "max_order": self.max_order,
            "absorption_model": self.absorption_model,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoomSpec":
        return cls(tuple(d["dimensions"]), d["t60"], d.get("speed_of_sound", 343.0),
                   d.get("reflection"), d.get("max_order"), d.get("absorption_model", "lattice"))


@functools.lru_cache(maxsize=4096)
def _lattice_decay_scale(dimensions: tuple) -> float:
    """Return k * T60 for the lattice decay model, where beta = exp(-k / (2c)).

    An image at distance d in direction u has undergone about d * sum_i |u_i| / L_i
    reflections, so the energy arriving at time t is proportional to the direction
    average of exp(-k t g(u)), g(u) = sum_i |u_i| / L_i, with k = -2 c ln(beta). Its
    backward integral is the mean of exp(-s g) / g with s = k t, a fixed shape per room.
    The -5 to -25 dB span of that shape, scaled to 60 dB, fixes k * T60.
    """
    n = 4096
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (1.0 + 5.0 ** 0.5) * i
    u = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    g = (np.abs(u) / np.asarray(dimensions, dtype=float)).sum(axis=1)
    edc0 = np.mean(1.0 / g)

    def level(s, target_db):
        return 10.0 * np.log10(np.mean(np.exp(-s * g) / g) / edc0) - target_db

    hi = 1.0
    while level(hi, -25.0) > 0:
        hi *= 2.0
    s5 = brentq(level, 0.0, hi, args=(-5.0,))
    s25 = brentq(level, 0.0, hi, args=(-25.0,))
    return 3.0 * (s25 - s5)


@dataclass
class Rir:
    taps: np.ndarray
    direct: np.ndarray
    arrival: float  # direct-path delay in (fractional) samples
    distance: float

    @property
    def direct_index(self) -> int:
        return int(np.floor(self.arrival)) + DIRECT_GUARD


def fractional_kernel(frac: float) -> np.ndarray:
    """Windowed sinc taps for offsets -40..40 around an arrival at ``frac`` samples."""
    n = np.arange(-_HALF, _HALF + 1) - frac
    win = 0.5 * (1.0 + np.cos(np.pi * n / (_HALF + 1)))
    return np.sinc(n) * win


def rir_length(room: RoomSpec, max_distance: float) -> int:
    return int(np.ceil(room.t60 * SAMPLE_RATE)) + int(np.ceil(max_distance / room.speed_of_sound * SAMPLE_RATE)) + _HALF + 1


def _axis_images(coord: float, length: float, n_max: int):
    n = np.arange(-n_max, n_max + 1)
    pos = np.concatenate([coord + 2 * n * length, -coord + 2 * n * length])
    order = np.concatenate([2 * np.abs(n), np.abs(n - 1) + np.abs(n)])
    return pos, order


def _image_sources(room: RoomSpec, src, center, radius: float, max_order: int):
    """All image positions within ``radius`` of ``center`` and order <= max_order."""
    dims = np.asarray(room.dimensions, dtype=float)
    axes = [_axis_images(src[a], dims[a], int(np.ceil(radius / (2 * dims[a]))) + 1) for a in range(3)]
    (xp, xo), (yp, yo), (zp, zo) = axes
    dyz2 = (yp[:, None] - center[1]) ** 2 + (zp[None, :] - center[2]) ** 2
    oyz = yo[:, None] + zo[None, :]
    positions, orders = [], []
    for x, ox in zip(xp, xo):
        keep = ((x - center[0]) ** 2 + dyz2 <= radius ** 2) & (ox + oyz <= max_order)
        iy, iz = np.nonzero(keep)
        if iy.size:
            positions.append(np.column_stack([np.full(iy.size, x), yp[iy], zp[iz]]))
            orders.append(ox + oyz[iy, iz])
    return np.concatenate(positions), np.concatenate(orders)


def generate_rirs(room: RoomSpec, src, mics, seed: int = 0, length: int | None = None) -> list[Rir]:
    """RIRs from one source to several microphones (shares the image lattice).

    ``seed`` is accepted for interface stability; the image method itself is
    deterministic.
    """
    del seed
    src = np.asarray(src, dtype=float)
    mics = np.atleast_2d(np.asarray(mics, dtype=float))
    if not room.contains(src):
        raise RoomGeometryError(f"source {src.tolist()} outside room {room.dimensions}")
    for m in mics:
        if not room.contains(m):
            raise RoomGeometryError(f"microphone {m.tolist()} outside room {room.dimensions}")
    beta = room.reflection_coefficient()
    c = room.speed_of_sound
    direct_dist = np.linalg.norm(mics - src, axis=1)
    if length is None:
        length = rir_length(room, float(direct_dist.max()))

    center = mics.mean(axis=0)
    spread = float(np.linalg.norm(mics - center, axis=1).max())
    radius = (length - _HALF - 1) / SAMPLE_RATE * c + spread
    if beta > 0.0:
        img_pos, img_order = _image_sources(room, src, center, radius, room.reflection_order())
        reflected = img_order > 0
        img_pos, img_order = img_pos[reflected], img_order[reflected]
    else:
        img_pos, img_order = np.zeros((0, 3)), np.zeros(0, dtype=int)

    rirs = []
    for mic, d0 in zip(mics, direct_dist):
        taps = np.zeros(length)
        arrival = d0 / c * SAMPLE_RATE
        direct = np.zeros(length)
        _add_pulse(direct, arrival, 1.0 / (4 * np.pi * d0))
        if img_pos.shape[0]:
            dist = np.linalg.norm(img_pos - mic, axis=1)
            delay = dist / c * SAMPLE_RATE
            amp = beta ** img_order / (4 * np.pi * dist)
            ok = delay < length - _HALF - 1
            taps += sosfilt(_HIGHPASS, _render_quantized(delay[ok], amp[ok], length))
        taps += direct
        rirs.append(Rir(taps=taps, direct=direct, arrival=float(arrival), distance=float(d0)))
    return rirs


def generate_rir(room: RoomSpec, src, mic, seed: int = 0) -> Rir:
    return generate_rirs(room, src, np.asarray(mic, dtype=float)[None, :], seed)[0]


def _add_pulse(out: np.ndarray, delay: float, amp: float) -> None:
    k = int(np.floor(delay))
    kern = amp * fractional_kernel(delay - k)
    lo = k - _HALF
    start = max(lo, 0)
    stop = min(lo + SINC_TAPS, len(out))
    if stop > start:
        out[start:stop] += kern[start - lo : stop - lo]


_KERNELS = np.stack([fractional_kernel(q / _FRAC_STEPS) for q in range(_FRAC_STEPS)])


def _render_quantized(delay: np.ndarray, amp: np.ndarray, length: int) -> np.ndarray:
    k = np.floor(delay).astype(np.int64)
    q = np.rint((delay - k) * _FRAC_STEPS).astype(np.int64)
    wrap = q == _FRAC_STEPS
    k[wrap] += 1
    q[wrap] = 0
    padded = length + SINC_TAPS
    hist = np.bincount(q * padded + k, weights=amp, minlength=_FRAC_STEPS * padded)
    hist = hist.reshape(_FRAC_STEPS, padded)
    nfft = 1 << int(np.ceil(np.log2(padded + SINC_TAPS)))
    spec = np.fft.rfft(hist, nfft, axis=1) * np.fft.rfft(_KERNELS, nfft, axis=1)
    full = np.fft.irfft(spec.sum(axis=0), nfft)
    # kernel index 0 corresponds to offset -_HALF
    return full[_HALF : _HALF + length]


def compute_drr(rir, direct_index: int | None = None) -> float:
    """Direct-to-reverberant ratio in dB, capped at +80 dB for a vanishing tail.

    For a raw tap array the split is plain: taps up to ``direct_index`` against
    the rest. For an ``Rir`` the sinc ringing of the direct pulse past k_d still
    counts as direct sound, so only reflections after k_d form the tail.
    """
    if isinstance(rir, Rir):
        kd = rir.direct_index if direct_index is None else direct_index
        taps = rir.taps
        head = float(np.sum(taps[: kd + 1] ** 2) + np.sum(rir.direct[kd + 1 :] ** 2))
        tail = float(np.sum((taps[kd + 1 :] - rir.direct[kd + 1 :]) ** 2))
    else:
        taps = np.asarray(rir, dtype=float)
        if direct_index is None:
            raise ValueError("direct_index required for a raw tap array")
        kd = direct_index
        head = float(np.sum(taps[: kd + 1] ** 2))
        tail = float(np.sum(taps[kd + 1 :] ** 2))
    if head + tail == 0.0:
        raise ValueError("all-zero RIR")
    if tail < 1e-12 * head:
        return DRR_CAP_DB
    if head == 0.0:
        return -DRR_CAP_DB
    return float(min(10.0 * np.log10(head / tail), DRR_CAP_DB))


def measure_t60(rir: Rir) -> float:
    """Schroeder T60 of the reverberant part (taps after k_d)."""
    return schroeder_t60(rir.taps[rir.direct_index + 1 :])


def schroeder_t60(taps: np.ndarray, start_db: float = -5.0, stop_db: float = -25.0) -> float:
    """T60 extrapolated from a line fit to the backward-integrated energy decay."""
    energy = np.asarray(taps, dtype=float) ** 2
    edc = np.cumsum(energy[::-1])[::-1]
    edc_db = 10.0 * np.log10(edc / edc[0] + 1e-300)
    idx = np.nonzero((edc_db <= start_db) & (edc_db >= stop_db))[0]
    if idx.size < 2:
        raise ValueError("decay range not reached")
    t = idx / SAMPLE_RATE
    slope, _ = np.polyfit(t, edc_db[idx], 1)
    return float(-60.0 / slope)
