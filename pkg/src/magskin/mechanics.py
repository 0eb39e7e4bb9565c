"""Contact deformation, contact trajectories and simulated sensor sequences.

Deformation law: a dipole at in-plane position ``p`` (mm) moves by
``g(p) * (sx, sy, -depth)`` with ``g(p) = exp(-|p - c|^2 / (2 w^2))``, and its
moment is rotated by the surface tilt ``coupling * (grad u_z x z_hat)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from . import _kernels
from .errors import InvalidParams, SingularEvaluation
from .magnetics import N_SENSORS, T_TO_UT, DipoleArray, MagnetometerGrid, SensorReading, sample_grid
from .skins import SkinInstance, make_rng

KERNEL_WIDTH_RANGE = (0.5, 20.0)  # mm
TILT_COUPLING = 1.0
DEFAULT_NOISE_UT = 2.0
DEFAULT_RATE_HZ = 100.0


@dataclass(frozen=True)
class ContactState:
    center: tuple[float, float] = (10.0, 10.0)  # mm
    depth: float = 0.0  # mm
    shear: tuple[float, float] = (0.0, 0.0)  # mm
    kernel_width: float = 3.0  # mm

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "shear", tuple(float(v) for v in self.shear))
        object.__setattr__(self, "depth", float(self.depth))
        object.__setattr__(self, "kernel_width", float(self.kernel_width))
        vals = (*self.center, self.depth, *self.shear, self.kernel_width)
        if len(self.center) != 2 or len(self.shear) != 2 or not all(math.isfinite(v) for v in vals):
            raise InvalidParams("contact fields must be finite 2-vectors / scalars")
        if self.depth < 0:
            raise InvalidParams("depth must be non-negative")
        lo, hi = KERNEL_WIDTH_RANGE
        if not lo <= self.kernel_width <= hi:
            raise InvalidParams(f"kernel_width must lie in [{lo}, {hi}] mm")

    def as_vector(self) -> np.ndarray:
        """``(cx, cy, depth, sx, sy, w)``."""
        return np.array([*self.center, self.depth, *self.shear, self.kernel_width])


def _contact_arrays(contacts: Sequence[ContactState]) -> np.ndarray:
    return np.array([c.as_vector() for c in contacts]).reshape(-1, 6)


def deform_arrays(positions: np.ndarray, moments: np.ndarray, params: np.ndarray,
                  tilt_coupling: float = TILT_COUPLING) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised deformation for a batch of contacts.

    ``params`` is ``(K, 6)`` rows of ``(cx, cy, depth, sx, sy, w)`` in mm;
    returns positions and moments of shape ``(K, N, 3)``.
    """
    params = np.atleast_2d(np.asarray(params, dtype=float))
    cx, cy, depth, sx, sy, w = (params[:, i:i + 1] for i in range(6))
    px = positions[None, :, 0] * 1e3
    py = positions[None, :, 1] * 1e3
    dx = px - cx
    dy = py - cy
    inv_w2 = 1.0 / (w * w)
    g = np.exp(-0.5 * (dx * dx + dy * dy) * inv_w2)

    new_pos = np.empty(params.shape[:1] + positions.shape)
    new_pos[..., 0] = positions[:, 0] + g * sx * 1e-3
    new_pos[..., 1] = positions[:, 1] + g * sy * 1e-3
    new_pos[..., 2] = positions[:, 2] - g * depth * 1e-3

    # grad(u_z) with u_z = -depth * g; tilt vector = grad(u_z) x z_hat.
    gu = depth * g * inv_w2
    wx = tilt_coupling * gu * dy
    wy = -tilt_coupling * gu * dx
    theta = np.hypot(wx, wy)
    moved = theta > 0
    safe = np.where(moved, theta, 1.0)
    kx, ky = wx / safe, wy / safe
    mx, my, mz = moments[None, :, 0], moments[None, :, 1], moments[None, :, 2]
    c, s = np.cos(theta), np.sin(theta)
    kdotm = kx * mx + ky * my
    # Rodrigues with k = (kx, ky, 0): k x m = (ky*mz, -kx*mz, kx*my - ky*mx)
    new_m = np.empty_like(new_pos)
    new_m[..., 0] = np.where(moved, mx * c + ky * mz * s + kx * kdotm * (1 - c), mx)
    new_m[..., 1] = np.where(moved, my * c - kx * mz * s + ky * kdotm * (1 - c), my)
    new_m[..., 2] = np.where(moved, mz * c + (kx * my - ky * mx) * s, mz)
    return new_pos, new_m


def _check_contact(instance: SkinInstance, c: ContactState) -> None:
    if c.depth > instance.config.skin_thickness:
        raise InvalidParams(f"depth {c.depth} mm exceeds skin thickness {instance.config.skin_thickness} mm")


def deform(instance: SkinInstance, c: ContactState, tilt_coupling: float = TILT_COUPLING) -> DipoleArray:
    """Dipoles of ``instance`` after contact ``c``; the identity for a zero contact."""
    _check_contact(instance, c)
    if c.depth == 0 and c.shear == (0.0, 0.0):
        return instance.dipoles
    pos, mom = deform_arrays(instance.positions, instance.moments, c.as_vector()[None, :], tilt_coupling)
    return DipoleArray(pos[0], mom[0])


@dataclass(frozen=True)
class TrajectoryParams:
    center: tuple[float, float] = (10.0, 10.0)  # mm
    depth: float = 1.0  # peak indentation, mm
    kernel_width: float = 3.0  # mm
    slip_velocity: float = 5.0  # mm/s
    slip_direction: float = 0.0  # rad, in-plane
    max_shear: float = 0.5  # mm
    ramp_fraction: float | None = None  # None -> kind default


@dataclass(frozen=True)
class ContactTrajectory:
    kind: str
    rate_hz: float
    states: tuple[ContactState, ...] = field(repr=False)

    def __len__(self):
        return len(self.states)

    def params_array(self) -> np.ndarray:
        return _contact_arrays(self.states)


_DEFAULT_RAMP = {"press": 1.0, "hold": 0.5, "slip": 0.0, "none": 0.0}


def make_trajectory(kind: Literal["press", "hold", "slip", "none"], params: TrajectoryParams | None = None,
                    rate_hz: float = DEFAULT_RATE_HZ, duration_s: float = 1.0) -> ContactTrajectory:
    """Uniformly sampled contact sequence of ``round(rate_hz * duration_s)`` states.

    ``none`` is a zero-contact trajectory (useful for baselines).
    """
    params = params or TrajectoryParams()
    if kind not in _DEFAULT_RAMP:
        raise InvalidParams(f"unknown trajectory kind {kind!r}")
    if not (duration_s > 0 and rate_hz > 0):
        raise InvalidParams("duration and rate must be positive")
    if params.slip_velocity < 0 or params.depth < 0 or params.max_shear < 0:
        raise InvalidParams("velocity, depth and max_shear must be non-negative")
    ramp = _DEFAULT_RAMP[kind] if params.ramp_fraction is None else params.ramp_fraction
    if not 0.0 <= ramp <= 1.0:
        raise InvalidParams("ramp_fraction must lie in [0, 1]")
    n = int(round(rate_hz * duration_s))
    if n < 1:
        raise InvalidParams("trajectory would have no samples")

    t = np.arange(n) / rate_hz
    if kind == "none":
        depth = np.zeros(n)
    elif kind == "press":
        depth = params.depth * np.arange(n) / max(n - 1, 1)
    else:
        t_ramp = ramp * duration_s
        depth = params.depth * np.minimum(t / t_ramp, 1.0) if t_ramp > 0 else np.full(n, params.depth)

    cx = np.full(n, params.center[0])
    cy = np.full(n, params.center[1])
    shx = np.zeros(n)
    shy = np.zeros(n)
    if kind == "slip":
        ux, uy = math.cos(params.slip_direction), math.sin(params.slip_direction)
        travel = params.slip_velocity * np.maximum(t - ramp * duration_s, 0.0)
        cx = cx + travel * ux
        cy = cy + travel * uy
        sh = np.minimum(travel, params.max_shear)
        shx, shy = sh * ux, sh * uy

    states = tuple(ContactState((cx[k], cy[k]), depth[k], (shx[k], shy[k]), params.kernel_width)
                   for k in range(n))
    return ContactTrajectory(kind, float(rate_hz), states)


def timestamps_us(n: int, rate_hz: float, t0_us: int = 0) -> np.ndarray:
    """Sample ``k`` is stamped at the end of its period, ``t0 + (k + 1) / rate``."""
    return t0_us + np.round((np.arange(n) + 1) * 1e6 / rate_hz).astype(np.int64)


def sample_deformed(instance: SkinInstance, grid: MagnetometerGrid, params: np.ndarray,
                    tilt_coupling: float = TILT_COUPLING) -> np.ndarray:
    """Noise-free ``(K, 15)`` uT readings for ``K`` contact parameter rows ``(cx, cy, depth, sx, sy, w)``."""
    params = np.ascontiguousarray(np.atleast_2d(np.asarray(params, dtype=float)))
    out, ok = _kernels.deformed_grid_fields(
        np.ascontiguousarray(instance.positions), np.ascontiguousarray(instance.moments),
        params, np.ascontiguousarray(grid.sensor_positions), float(tilt_coupling))
    if not ok:
        raise SingularEvaluation("deformation brought a dipole within 1 um of a sensor")
    return out * T_TO_UT


def simulate_values(instance: SkinInstance, grid: MagnetometerGrid, traj: ContactTrajectory,
                    noise_sigma_ut: float = DEFAULT_NOISE_UT, seed: int = 0,
                    tilt_coupling: float = TILT_COUPLING) -> np.ndarray:
    """``(T, 15)`` uT array; the array form of :func:`simulate_sequence`."""
    if not noise_sigma_ut >= 0:
        raise InvalidParams("noise_sigma must be non-negative")
    for c in traj.states:
        _check_contact(instance, c)
    values = sample_deformed(instance, grid, traj.params_array(), tilt_coupling)
    if noise_sigma_ut > 0:
        values = values + make_rng(seed).normal(0.0, noise_sigma_ut, values.shape)
    return values


def simulate_sequence(instance: SkinInstance, grid: MagnetometerGrid, traj: ContactTrajectory,
                      noise_sigma_ut: float = DEFAULT_NOISE_UT, seed: int = 0,
                      tilt_coupling: float = TILT_COUPLING) -> list[SensorReading]:
    values = simulate_values(instance, grid, traj, noise_sigma_ut, seed, tilt_coupling)
    ts = timestamps_us(len(values), traj.rate_hz)
    return [SensorReading(int(t), v) for t, v in zip(ts, values)]


def inject_interference(readings: Sequence[SensorReading], drift_ut_per_s, t0_us: int = 0) -> list[SensorReading]:
    """Add a common-mode field ramp ``drift * (t - t0)`` to every magnetometer."""
    drift = np.asarray(drift_ut_per_s, dtype=float).reshape(3)
    if not np.all(np.isfinite(drift)):
        raise InvalidParams("drift must be finite")
    if not np.any(drift):
        return list(readings)
    common = np.tile(drift, N_SENSORS)
    return [SensorReading(r.timestamp_us, r.values + common * ((r.timestamp_us - t0_us) * 1e-6))
            for r in readings]
