"""Point-dipole magnetostatics and five-magnetometer sampling.

Internal units are SI (m, A*m^2, T). Readings leave this module in microtesla.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import InvalidParams, SingularEvaluation

MU0_OVER_4PI = 1e-7  # T*m/A
EPS_SING = 1e-6  # m
T_TO_UT = 1e6
N_SENSORS = 5
N_CHANNELS = 3 * N_SENSORS
MAX_OFFSET_MM = 5.0
SENSOR_DEPTH_MM = 1.5  # magnetometer die below the board surface the skin rests on


def _vec3(v, name="vector") -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (3,):
        raise ValueError(f"{name} must have 3 components, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite components")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dipole:
    position: np.ndarray
    moment: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position, "position"))
        object.__setattr__(self, "moment", _vec3(self.moment, "moment"))
        if not np.any(self.moment):
            raise ValueError("dipole moment must be nonzero")


@dataclass(frozen=True)
class DipoleArray:
    """Structure-of-arrays view of many dipoles: positions and moments are (N, 3)."""

    positions: np.ndarray
    moments: np.ndarray

    def __post_init__(self):
        p = np.array(self.positions, dtype=float).reshape(-1, 3)
        m = np.array(self.moments, dtype=float).reshape(-1, 3)
        if p.shape != m.shape:
            raise ValueError("positions and moments differ in length")
        p.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "moments", m)

    def __len__(self):
        return self.positions.shape[0]

    def __iter__(self):
        for p, m in zip(self.positions, self.moments):
            yield Dipole(p, m)

    def translated(self, delta) -> "DipoleArray":
        return DipoleArray(self.positions + np.asarray(delta, dtype=float), self.moments)

    def __add__(self, other: "DipoleArray") -> "DipoleArray":
        other = as_dipole_array(other)
        return DipoleArray(np.vstack([self.positions, other.positions]),
                           np.vstack([self.moments, other.moments]))


def as_dipole_array(dipoles) -> DipoleArray:
    """Accept a DipoleArray, anything with ``positions``/``moments``, or a list of Dipole."""
    if isinstance(dipoles, DipoleArray):
        return dipoles
    if hasattr(dipoles, "positions") and hasattr(dipoles, "moments"):
        return DipoleArray(dipoles.positions, dipoles.moments)
    dipoles = list(dipoles)
    if not dipoles:
        return DipoleArray(np.zeros((0, 3)), np.zeros((0, 3)))
    return DipoleArray(np.array([d.position for d in dipoles]),
                       np.array([d.moment for d in dipoles]))


def dipole_field(d: Dipole, p) -> np.ndarray:
    """Field in tesla of a single point dipole evaluated at position ``p`` (m)."""
    r = _vec3(p, "p") - d.position
    dist = float(np.sqrt(r @ r))
    if dist < EPS_SING:
        raise SingularEvaluation(f"evaluation point {dist:.3e} m from dipole")
    m = d.moment
    return MU0_OVER_4PI * (3.0 * (m @ r) * r / dist**5 - m / dist**3)


def fields_at_points(positions: np.ndarray, moments: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Superposed dipole field at many points.

    ``positions`` may carry leading batch axes, ``(..., N, 3)``; ``moments``
    broadcasts against it. Returns ``(..., P, 3)`` tesla for ``points`` of
    shape ``(P, 3)``.
    """
    positions = np.asarray(positions, dtype=float)
    moments = np.asarray(moments, dtype=float)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    batch = np.broadcast_shapes(positions.shape[:-2], moments.shape[:-2])
    out = np.zeros(batch + (points.shape[0], 3))
    if positions.shape[-2] == 0:
        return out
    px, py, pz = positions[..., 0], positions[..., 1], positions[..., 2]
    mx, my, mz = moments[..., 0], moments[..., 1], moments[..., 2]
    for i, (sx, sy, sz) in enumerate(points):
        dx = sx - px
        dy = sy - py
        dz = sz - pz
        r2 = dx * dx + dy * dy + dz * dz
        if r2.min() < EPS_SING**2:
            raise SingularEvaluation("evaluation point within 1 um of a dipole")
        inv_r2 = 1.0 / r2
        inv_r3 = inv_r2 * np.sqrt(inv_r2)
        coef = 3.0 * (mx * dx + my * dy + mz * dz) * inv_r2
        out[..., i, 0] = ((coef * dx - mx) * inv_r3).sum(axis=-1)
        out[..., i, 1] = ((coef * dy - my) * inv_r3).sum(axis=-1)
        out[..., i, 2] = ((coef * dz - mz) * inv_r3).sum(axis=-1)
    return MU0_OVER_4PI * out


def field_at(dipoles, p) -> np.ndarray:
    """Sum of every dipole's field at ``p``; zero for an empty collection."""
    arr = as_dipole_array(dipoles)
    return fields_at_points(arr.positions, arr.moments, _vec3(p, "p")[None, :])[0]


@dataclass(frozen=True)
class MagnetometerGrid:
    """Five coplanar three-axis magnetometers sharing the world axes (positions in m)."""

    sensor_positions: np.ndarray

    def __post_init__(self):
        s = np.array(self.sensor_positions, dtype=float)
        if s.shape != (N_SENSORS, 3):
            raise ValueError(f"grid needs exactly {N_SENSORS} sensors, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("sensor positions must be finite")
        diffs = s[:, None, :] - s[None, :, :]
        d = np.sqrt((diffs**2).sum(-1)) + np.eye(N_SENSORS)
        if np.any(d <= 0):
            raise ValueError("sensor positions must be pairwise distinct")
        if np.ptp(s[:, 2]) > 0:
            raise ValueError("sensors must be coplanar (same z)")
        s.setflags(write=False)
        object.__setattr__(self, "sensor_positions", s)

    @classmethod
    def default(cls, center_mm=(10.0, 10.0), spacing_mm=6.0, z_mm=-SENSOR_DEPTH_MM) -> "MagnetometerGrid":
        """Centre sensor plus four at +-spacing along x and y, centred under the skin.

        The sensing plane sits ``SENSOR_DEPTH_MM`` below the board surface (z = 0),
        which is where a zero-gap skin rests.
        """
        cx, cy = center_mm
        offs = [(0, 0), (spacing_mm, 0), (-spacing_mm, 0), (0, spacing_mm), (0, -spacing_mm)]
        return cls(np.array([[cx + dx, cy + dy, z_mm] for dx, dy in offs]) * 1e-3)

    def translated(self, delta) -> "MagnetometerGrid":
        return MagnetometerGrid(self.sensor_positions + np.asarray(delta, dtype=float))


@dataclass(frozen=True)
class SensorReading:
    """One sample of all 15 channels in uT, sensor-major (s0.x, s0.y, s0.z, s1.x, ...)."""

    timestamp_us: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.shape != (N_CHANNELS,):
            raise ValueError(f"reading needs {N_CHANNELS} values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("reading values must be finite")
        ts = int(self.timestamp_us)
        if ts < 0:
            raise ValueError("timestamp_us must be unsigned")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "timestamp_us", ts)

    def __eq__(self, other):
        if not isinstance(other, SensorReading):
            return NotImplemented
        return self.timestamp_us == other.timestamp_us and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.timestamp_us, self.values.tobytes()))

    @property
    def xy(self) -> np.ndarray:
        return self.values.reshape(N_SENSORS, 3)[:, :2].reshape(-1)

    @property
    def z(self) -> np.ndarray:
        return self.values.reshape(N_SENSORS, 3)[:, 2]


def sample_grid(positions: np.ndarray, moments: np.ndarray, grid: MagnetometerGrid) -> np.ndarray:
    """Raw 15-channel uT vector(s) for dipole arrays; batch axes on ``positions`` pass through."""
    positions = np.asarray(positions, dtype=float)
    moments = np.asarray(moments, dtype=float)
    batch = np.broadcast_shapes(positions.shape[:-2], moments.shape[:-2])
    n = positions.shape[-2]
    if n == 0:
        return np.zeros(batch + (N_CHANNELS,))
    pos = np.ascontiguousarray(np.broadcast_to(positions, batch + (n, 3)).reshape(-1, n, 3))
    mom = np.ascontiguousarray(np.broadcast_to(moments, batch + (n, 3)).reshape(-1, n, 3))
    out, ok = _kernels.grid_fields(pos, mom, np.ascontiguousarray(grid.sensor_positions))
    if not ok:
        raise SingularEvaluation("sensor within 1 um of a dipole")
    return (out * T_TO_UT).reshape(batch + (N_CHANNELS,))


def read_sensors(dipoles, grid: MagnetometerGrid, skin_offset=(0.0, 0.0), timestamp_us: int = 0) -> SensorReading:
    """Sample the grid with the skin translated in-plane by ``skin_offset`` (mm)."""
    ox, oy = (float(v) for v in skin_offset)
    if not (np.isfinite(ox) and np.isfinite(oy)) or np.hypot(ox, oy) > MAX_OFFSET_MM:
        raise InvalidParams(f"skin offset must be finite and at most {MAX_OFFSET_MM} mm")
    arr = as_dipole_array(dipoles)
    pos = arr.positions
    if ox or oy:
        pos = pos + np.array([ox, oy, 0.0]) * 1e-3
    return SensorReading(timestamp_us, sample_grid(pos, arr.moments, grid))


def readings_to_array(readings: Sequence[SensorReading]) -> np.ndarray:
    if not len(readings):
        return np.zeros((0, N_CHANNELS))
    return np.stack([r.values for r in readings])
