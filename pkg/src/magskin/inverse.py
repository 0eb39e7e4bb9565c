"""Single-contact localization: damped Gauss-Newton and an exhaustive grid oracle.

The unknowns are ``(x, y, depth)`` in mm; shear is fixed at zero and the
kernel width is taken as known.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InitOutOfBounds, NotConverged
from .magnetics import N_CHANNELS, MagnetometerGrid, SensorReading
from .mechanics import TILT_COUPLING, ContactState, sample_deformed
from .skins import SkinInstance

JACOBIAN_STEP_MM = 1e-3
LAMBDA0 = 1e-3
STEP_TOL_MM = 1e-6


@dataclass(frozen=True)
class LocalizeResult:
    estimate: ContactState
    residual_norm_ut: float
    iterations: int
    converged: bool
    history: tuple[float, ...] = ()  # residual norm after each accepted step, starting at init


def _reading_values(reading) -> np.ndarray:
    v = reading.values if isinstance(reading, SensorReading) else np.asarray(reading, dtype=float)
    v = v.reshape(-1)
    if v.shape != (N_CHANNELS,):
        raise ValueError(f"reading must have {N_CHANNELS} channels")
    return v


def param_bounds(instance: SkinInstance) -> np.ndarray:
    """``(3, 2)`` lower/upper limits for ``(x, y, depth)``."""
    c = instance.config
    return np.array([[0.0, c.skin_length], [0.0, c.skin_width], [0.0, c.skin_thickness]])


def _rows(theta: np.ndarray, kernel_width: float) -> np.ndarray:
    theta = np.atleast_2d(theta)
    rows = np.zeros((theta.shape[0], 6))
    rows[:, :3] = theta
    rows[:, 5] = kernel_width
    return rows


def residual(reading, instance: SkinInstance, grid: MagnetometerGrid, c: ContactState,
             tilt_coupling: float = TILT_COUPLING) -> np.ndarray:
    """Model minus measurement, 15 channels in uT."""
    b = param_bounds(instance)
    x, y = c.center
    if not (b[0, 0] <= x <= b[0, 1] and b[1, 0] <= y <= b[1, 1] and c.depth <= b[2, 1]):
        raise InitOutOfBounds(f"contact {c} outside skin bounds")
    return sample_deformed(instance, grid, c.as_vector()[None, :], tilt_coupling)[0] - _reading_values(reading)


def _residuals(theta, target, instance, grid, kernel_width, coupling):
    return sample_deformed(instance, grid, _rows(theta, kernel_width), coupling) - target


def jacobian(theta, target, instance, grid, kernel_width, step=JACOBIAN_STEP_MM, central=False,
             coupling=TILT_COUPLING):
    """Finite-difference Jacobian of the residual w.r.t. ``(x, y, depth)``; returns ``(r0, J)``."""
    theta = np.asarray(theta, dtype=float)
    eye = np.eye(3) * step
    if central:
        r = _residuals(np.vstack([theta, theta + eye, theta - eye]), target, instance, grid, kernel_width, coupling)
        return r[0], ((r[1:4] - r[4:7]) / (2 * step)).T
    r = _residuals(np.vstack([theta, theta + eye]), target, instance, grid, kernel_width, coupling)
    return r[0], ((r[1:4] - r[0]) / step).T


def localize_gauss_newton(reading, instance: SkinInstance, grid: MagnetometerGrid, init: ContactState,
                          max_iters: int = 100, tol_ut: float = 1e-6, step_tol_mm: float = STEP_TOL_MM,
                          raise_on_failure: bool = False, tilt_coupling: float = TILT_COUPLING) -> LocalizeResult:
    """Levenberg-damped Gauss-Newton over ``(x, y, depth)``.

    Damping starts at 1e-3 and is multiplied by 10 on a rejected step and
    divided by 10 on an accepted one. Parameters are clamped to the skin
    bounds after every step. Stops when the residual norm drops below
    ``tol_ut``, the step is shorter than ``step_tol_mm``, or an accepted step
    no longer reduces the residual.
    """
    target = _reading_values(reading)
    bounds = param_bounds(instance)
    theta = np.array([*init.center, init.depth])
    if np.any(theta < bounds[:, 0]) or np.any(theta > bounds[:, 1]):
        raise InitOutOfBounds(f"initial guess {theta} outside {bounds.tolist()}")
    w = init.kernel_width

    r, J = jacobian(theta, target, instance, grid, w, coupling=tilt_coupling)
    cost = float(r @ r)
    history = [np.sqrt(cost)]
    lam = LAMBDA0
    converged = False
    it = 0
    while it < max_iters:
        it += 1
        if np.sqrt(cost) < tol_ut:
            converged = True
            break
        JtJ = J.T @ J
        g = J.T @ r
        try:
            step = -np.linalg.solve(JtJ + lam * np.eye(3), g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        cand = np.clip(theta + step, bounds[:, 0], bounds[:, 1])
        actual = cand - theta
        r_new = _residuals(cand, target, instance, grid, w, tilt_coupling)[0]
        cost_new = float(r_new @ r_new)
        if cost_new < cost:
            stagnant = cost - cost_new <= 1e-12 * cost
            theta, cost = cand, cost_new
            history.append(np.sqrt(cost))
            lam = max(lam / 10.0, 1e-12)
            if np.linalg.norm(actual) < step_tol_mm or stagnant:
                converged = True
                break
            r, J = jacobian(theta, target, instance, grid, w, coupling=tilt_coupling)
        else:
            if np.linalg.norm(actual) < step_tol_mm:
                # Clamped or tiny step that cannot improve: we are at a (bound) minimum.
                converged = True
                break
            lam *= 10.0
            if lam > 1e16:
                break

    est = ContactState((theta[0], theta[1]), theta[2], (0.0, 0.0), w)
    result = LocalizeResult(est, float(np.sqrt(cost)), it, converged, tuple(history))
    if not converged and raise_on_failure:
        raise NotConverged(f"no convergence after {it} iterations", result)
    return result


def oracle_axes(instance: SkinInstance, xy_step: float = 0.5, depth_step: float = 0.1,
                bounds=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Candidate coordinates of the oracle grid; ``bounds`` defaults to the whole skin."""
    if not (xy_step > 0 and depth_step > 0):
        raise ValueError("grid steps must be positive")
    b = param_bounds(instance) if bounds is None else np.asarray(bounds, dtype=float)

    def axis(lo, hi, step):
        n = int(np.floor((hi - lo) / step + 1e-9))
        return lo + step * np.arange(n + 1)

    return axis(*b[0], xy_step), axis(*b[1], xy_step), axis(*b[2], depth_step)


def localize_grid_oracle(reading, instance: SkinInstance, grid: MagnetometerGrid, xy_step: float = 0.5,
                         depth_step: float = 0.1, kernel_width: float = 3.0, bounds=None,
                         tilt_coupling: float = TILT_COUPLING) -> ContactState:
    """Exhaustive argmin of the residual norm over an ``(x, y, depth)`` lattice.

    Candidates are enumerated x-major, then y, then depth; ties go to the
    lowest index.
    """
    target = _reading_values(reading)
    xs, ys, ds = oracle_axes(instance, xy_step, depth_step, bounds)
    X, Y, D = np.meshgrid(xs, ys, ds, indexing="ij")
    theta = np.column_stack([X.ravel(), Y.ravel(), D.ravel()])
    costs = _kernels.oracle_costs(
        np.ascontiguousarray(instance.positions), np.ascontiguousarray(instance.moments),
        _rows(theta, kernel_width), np.ascontiguousarray(grid.sensor_positions), float(tilt_coupling), target)
    x, y, d = theta[int(np.argmin(costs))]
    return ContactState((x, y), d, (0.0, 0.0), kernel_width)
