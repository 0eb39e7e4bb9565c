"""Compiled inner loops for grid sampling (the numpy paths in magnetics/mechanics are the reference).

Both kernels sum dipoles in index order, so a zero contact reproduces the
undeformed reading bit for bit.
"""
import math

import numpy as np
from numba import njit

MU0_OVER_4PI = 1e-7
EPS2 = 1e-12  # (1 um)^2


@njit(cache=True)
def _accumulate(out, k, sensors, px, py, pz, mx, my, mz):
    for s in range(sensors.shape[0]):
        dx = sensors[s, 0] - px
        dy = sensors[s, 1] - py
        dz = sensors[s, 2] - pz
        r2 = dx * dx + dy * dy + dz * dz
        if r2 < EPS2:
            return False
        inv_r2 = 1.0 / r2
        inv_r3 = inv_r2 * math.sqrt(inv_r2)
        coef = 3.0 * (mx * dx + my * dy + mz * dz) * inv_r2
        out[k, 3 * s] += (coef * dx - mx) * inv_r3
        out[k, 3 * s + 1] += (coef * dy - my) * inv_r3
        out[k, 3 * s + 2] += (coef * dz - mz) * inv_r3
    return True


@njit(cache=True)
def grid_fields(positions, moments, sensors):
    """positions, moments: (K, N, 3) m and A*m^2 -> (K, 3*S) tesla. Returns (out, ok)."""
    K, N = positions.shape[0], positions.shape[1]
    out = np.zeros((K, 3 * sensors.shape[0]))
    for k in range(K):
        for n in range(N):
            if not _accumulate(out, k, sensors, positions[k, n, 0], positions[k, n, 1], positions[k, n, 2],
                               moments[k, n, 0], moments[k, n, 1], moments[k, n, 2]):
                return out, False
    out *= MU0_OVER_4PI
    return out, True


@njit(cache=True)
def deformed_grid_fields(positions, moments, params, sensors, coupling):
    """Fused contact deformation + grid sampling.

    positions, moments: (N, 3); params: (K, 6) rows (cx, cy, depth, sx, sy, w) in mm.
    Mirrors mechanics.deform_arrays operation for operation.
    """
    K, N = params.shape[0], positions.shape[0]
    out = np.zeros((K, 3 * sensors.shape[0]))
    for k in range(K):
        cx, cy, depth, sx, sy, w = params[k, 0], params[k, 1], params[k, 2], params[k, 3], params[k, 4], params[k, 5]
        inv_w2 = 1.0 / (w * w)
        for n in range(N):
            x0, y0, z0 = positions[n, 0], positions[n, 1], positions[n, 2]
            mx, my, mz = moments[n, 0], moments[n, 1], moments[n, 2]
            dx = x0 * 1e3 - cx
            dy = y0 * 1e3 - cy
            g = math.exp(-0.5 * (dx * dx + dy * dy) * inv_w2)
            px = x0 + g * sx * 1e-3
            py = y0 + g * sy * 1e-3
            pz = z0 - g * depth * 1e-3
            gu = depth * g * inv_w2
            wx = coupling * gu * dy
            wy = -coupling * gu * dx
            theta = math.hypot(wx, wy)
            if theta > 0:
                kx = wx / theta
                ky = wy / theta
                c = math.cos(theta)
                s = math.sin(theta)
                kdotm = kx * mx + ky * my
                nmx = mx * c + ky * mz * s + kx * kdotm * (1 - c)
                nmy = my * c - kx * mz * s + ky * kdotm * (1 - c)
                nmz = mz * c + (kx * my - ky * mx) * s
                mx, my, mz = nmx, nmy, nmz
            if not _accumulate(out, k, sensors, px, py, pz, mx, my, mz):
                return out, False
    out *= MU0_OVER_4PI
    return out, True


@njit(cache=True, fastmath=True)
def oracle_costs(positions, moments, params, sensors, coupling, target):
    """Squared residual norm (uT^2) against ``target`` for each contact row.

    Same physics as :func:`deformed_grid_fields`, restructured so the
    per-sensor reduction over dipoles vectorizes. Per-dipole kernel weights and
    tilt axes are reused while consecutive rows share centre and width, which
    is the case along the depth axis of the search lattice. Summation order
    differs, so results agree only to rounding; used by the brute-force search.
    """
    K, N, S = params.shape[0], positions.shape[0], sensors.shape[0]
    costs = np.empty(K)
    P = np.empty((3, N))
    M = np.empty((3, N))
    G = np.empty(N)  # kernel weight
    KX = np.empty(N)  # unit tilt axis
    KY = np.empty(N)
    TPD = np.empty(N)  # tilt angle per mm of depth
    scale = MU0_OVER_4PI * 1e6
    sign = 1.0 if coupling >= 0 else -1.0
    pcx = np.nan
    pcy = np.nan
    pw = np.nan
    for k in range(K):
        cx, cy, depth, sx, sy, w = params[k, 0], params[k, 1], params[k, 2], params[k, 3], params[k, 4], params[k, 5]
        if cx != pcx or cy != pcy or w != pw:
            inv_w2 = 1.0 / (w * w)
            for n in range(N):
                dx = positions[n, 0] * 1e3 - cx
                dy = positions[n, 1] * 1e3 - cy
                g = math.exp(-0.5 * (dx * dx + dy * dy) * inv_w2)
                rd = math.sqrt(dx * dx + dy * dy)
                G[n] = g
                if rd > 0:
                    KX[n] = sign * dy / rd
                    KY[n] = -sign * dx / rd
                else:
                    KX[n] = 0.0
                    KY[n] = 0.0
                TPD[n] = abs(coupling) * g * inv_w2 * rd
            pcx, pcy, pw = cx, cy, w
        for n in range(N):
            g = G[n]
            P[0, n] = positions[n, 0] + g * sx * 1e-3
            P[1, n] = positions[n, 1] + g * sy * 1e-3
            P[2, n] = positions[n, 2] - g * depth * 1e-3
            mx, my, mz = moments[n, 0], moments[n, 1], moments[n, 2]
            theta = depth * TPD[n]
            if theta > 0:
                kx = KX[n]
                ky = KY[n]
                c = math.cos(theta)
                s = math.sin(theta)
                kdotm = kx * mx + ky * my
                M[0, n] = mx * c + ky * mz * s + kx * kdotm * (1 - c)
                M[1, n] = my * c - kx * mz * s + ky * kdotm * (1 - c)
                M[2, n] = mz * c + (kx * my - ky * mx) * s
            else:
                M[0, n] = mx
                M[1, n] = my
                M[2, n] = mz
        total = 0.0
        for si in range(S):
            bx = 0.0
            by = 0.0
            bz = 0.0
            for n in range(N):
                ddx = sensors[si, 0] - P[0, n]
                ddy = sensors[si, 1] - P[1, n]
                ddz = sensors[si, 2] - P[2, n]
                inv_r2 = 1.0 / (ddx * ddx + ddy * ddy + ddz * ddz)
                inv_r3 = inv_r2 * math.sqrt(inv_r2)
                coef = 3.0 * (M[0, n] * ddx + M[1, n] * ddy + M[2, n] * ddz) * inv_r2
                bx += (coef * ddx - M[0, n]) * inv_r3
                by += (coef * ddy - M[1, n]) * inv_r3
                bz += (coef * ddz - M[2, n]) * inv_r3
            ex = bx * scale - target[3 * si]
            ey = by * scale - target[3 * si + 1]
            ez = bz * scale - target[3 * si + 2]
            total += ex * ex + ey * ey + ez * ez
        costs[k] = total
    return costs
