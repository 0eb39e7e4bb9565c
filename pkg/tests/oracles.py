"""Independent reference implementations used to check the library.

These are written from first principles in plain Python, sharing no code
with the package.
"""
from __future__ import annotations

import math
import statistics
import struct

MU0_OVER_4PI = 1e-7


def dipole_field(pos, mom, point):
    """Point-dipole field in tesla, evaluated with scalar Python arithmetic."""
    rx, ry, rz = (point[i] - pos[i] for i in range(3))
    r = math.sqrt(rx * rx + ry * ry + rz * rz)
    ux, uy, uz = rx / r, ry / r, rz / r
    mdotu = mom[0] * ux + mom[1] * uy + mom[2] * uz
    k = MU0_OVER_4PI / r ** 3
    return (k * (3 * mdotu * ux - mom[0]), k * (3 * mdotu * uy - mom[1]), k * (3 * mdotu * uz - mom[2]))


def grid_reading_ut(positions, moments, sensors):
    """15-channel reading in microtesla by explicit summation."""
    out = []
    for s in sensors:
        acc = [0.0, 0.0, 0.0]
        for p, m in zip(positions, moments):
            b = dipole_field(p, m, s)
            for i in range(3):
                acc[i] += b[i]
        out.extend(v * 1e6 for v in acc)
    return out


def crc16_ccitt_false(data: bytes) -> int:
    """Bit-serial CRC: poly 0x1021, init 0xFFFF, no reflection, no final xor."""
    crc = 0xFFFF
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) & 0xFFFF if crc & 0x8000 else (crc << 1) & 0xFFFF
    return crc


def normalized_std(rows):
    """Per-channel population std across rows, averaged per group, divided by the group's mean |v|."""
    n_ch = len(rows[0])
    xy = [c for c in range(n_ch) if c % 3 != 2]
    z = [c for c in range(n_ch) if c % 3 == 2]
    out = []
    for group in (xy, z):
        spread = statistics.fmean(statistics.pstdev([r[c] for r in rows]) for c in group)
        scale = statistics.fmean(abs(r[c]) for r in rows for c in group)
        out.append(spread / scale)
    return tuple(out)


def preprocess(rows, step=15):
    kept = rows[::step]
    return [[b - a for a, b in zip(kept[k], kept[k + 1])] for k in range(len(kept) - 1)]


def polygon_area(pts):
    s = 0.0
    for i in range(len(pts)):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % len(pts)]
        s += x0 * y1 - x1 * y0
    return s / 2


def parse_stl(data: bytes):
    """Returns ``(header, normals, triangles)`` from binary STL bytes."""
    header = data[:80]
    (count,) = struct.unpack("<I", data[80:84])
    normals, tris = [], []
    off = 84
    for _ in range(count):
        vals = struct.unpack("<12fH", data[off:off + 50])
        normals.append(vals[0:3])
        tris.append((vals[3:6], vals[6:9], vals[9:12]))
        off += 50
    assert off == len(data)
    return header, normals, tris


def mesh_volume(tris):
    v = 0.0
    for a, b, c in tris:
        v += (a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
              + a[2] * (b[0] * c[1] - b[1] * c[0]))
    return v / 6


def closed_by_coordinates(tris) -> bool:
    """Edge-pairing check on vertex coordinates: each directed edge must have exactly one reverse twin."""
    from collections import Counter
    edges = Counter()
    for t in tris:
        for i in range(3):
            edges[(tuple(t[i]), tuple(t[(i + 1) % 3]))] += 1
    return all(n == 1 and edges.get((b, a), 0) == 1 for (a, b), n in edges.items())
