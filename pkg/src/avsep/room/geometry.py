"""Linear-array geometry and direction-of-arrival helpers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Axial offsets (m) of mics 0..8, left to right. Symmetric and nonuniform so the five
# feature pairs (0,8),(0,4),(1,4),(4,6),(4,5) span 0.24, 0.12, 0.08, 0.05, 0.03 m.
DEFAULT_OFFSETS = (-0.12, -0.08, -0.05, -0.03, 0.0, 0.03, 0.05, 0.08, 0.12)

ANGLE_BIN_EDGES_DEG = (0.0, 15.0, 45.0, 90.0, 180.0)


@dataclass(frozen=True)
class ArrayGeometry:
    offsets: tuple = DEFAULT_OFFSETS
    center: tuple = (0.0, 0.0, 0.0)
    # unit vector (horizontal) pointing from the array center towards mic 8
    axis: tuple = (1.0, 0.0, 0.0)

    def __post_init__(self):
        off = np.asarray(self.offsets, dtype=float)
        if off.ndim != 1 or len(off) < 2:
            raise ValueError("need at least two microphones")
        if not np.allclose(off + off[::-1], 0.0, atol=1e-12):
            raise ValueError("microphone offsets must be symmetric about the center")
        if np.any(np.diff(off) <= 0):
            raise ValueError("microphone offsets must be strictly increasing")
        axis = np.asarray(self.axis, dtype=float)
        if abs(axis[2]) > 1e-12:
            raise ValueError("array axis must be horizontal")
        object.__setattr__(self, "axis", tuple(axis / np.linalg.norm(axis)))
        object.__setattr__(self, "offsets", tuple(float(o) for o in off))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def num_mics(self) -> int:
        return len(self.offsets)

    @property
    def camera_position(self) -> np.ndarray:
        return np.asarray(self.center)

    @property
    def mic_positions(self) -> np.ndarray:
        return np.asarray(self.center) + np.outer(self.offsets, self.axis)

    def pair_distance(self, m1: int, m2: int) -> float:
        return abs(self.offsets[m2] - self.offsets[m1])

    def to_dict(self) -> dict:
        return {"offsets": list(self.offsets), "center": list(self.center), "axis": list(self.axis)}

    @classmethod
    def from_dict(cls, d: dict) -> "ArrayGeometry":
        return cls(tuple(d["offsets"]), tuple(d["center"]), tuple(d["axis"]))


def doa_from_position(src, array: ArrayGeometry) -> float:
    """Angle in [0, pi] between the array axis and the horizontal source direction."""
    v = np.asarray(src, dtype=float) - array.camera_position
    v[2] = 0.0
    norm = np.linalg.norm(v)
    if norm < 1e-12:
        raise ValueError("source coincides with the array center in the horizontal plane")
    cosang = np.dot(v, array.axis) / norm
    return float(np.arccos(np.clip(cosang, -1.0, 1.0)))


def doa_from_pixel(x_center: float, frame_width: float) -> float:
    """Map a face's horizontal pixel position in a 180-degree view to a DOA."""
    if frame_width <= 0:
        raise ValueError("frame width must be positive")
    if not 0 <= x_center <= frame_width:
        raise ValueError(f"x={x_center} outside frame of width {frame_width}")
    return float(np.pi * x_center / frame_width)


def min_interferer_angle(target_doa: float, interferer_doas) -> float:
    doas = np.atleast_1d(np.asarray(interferer_doas, dtype=float))
    if doas.size == 0:
        raise ValueError("no interferers")
    return float(np.min(np.abs(doas - target_doa)))


def angle_bin(angle_rad: float) -> str:
    """Left-closed angle bins; 180 degrees belongs to the last bin."""
    deg = round(float(np.degrees(angle_rad)), 9)
    edges = ANGLE_BIN_EDGES_DEG
    for lo, hi in zip(edges[:-1], edges[1:]):
        if lo <= deg < hi:
            return f"{lo:g}-{hi:g}"
    if np.isclose(deg, edges[-1]) or deg >= edges[-1]:
        return f"{edges[-2]:g}-{edges[-1]:g}"
    raise ValueError(f"angle {deg} deg out of range")
