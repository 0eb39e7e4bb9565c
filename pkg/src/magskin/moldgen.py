"""Fingertip and two-part mold meshes from a 2D outline, exported as binary STL.

Units are mm throughout. Cavities, channels, grooves and peg holes are
modelled as closed interior shells with inward-facing winding instead of
boolean subtraction; interior shells are laid out so they never overlap.
"""
from __future__ import annotations

import ast
import re
import struct
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._version import __version__
from .errors import (InvalidParams, OffsetCollapse, OpenContour, SelfIntersecting, TooFewVertices,
                     TriangulationFailure, UnsupportedEntity)

EPS = 1e-12
STL_HEADER = f"magskin moldgen {__version__}".encode().ljust(80, b"\0")


# ---------------------------------------------------------------- 2D primitives

def signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _segments_touch(p1, p2, q1, q2, tol: float) -> bool:
    """True if closed segments p1p2 and q1q2 share any point (collinear overlap included)."""
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    if ((d1 > tol and d2 < -tol) or (d1 < -tol and d2 > tol)) and \
            ((d3 > tol and d4 < -tol) or (d3 < -tol and d4 > tol)):
        return True

    def on_seg(a, b, p, d):
        return abs(d) <= tol and min(a[0], b[0]) - tol <= p[0] <= max(a[0], b[0]) + tol \
            and min(a[1], b[1]) - tol <= p[1] <= max(a[1], b[1]) + tol

    return on_seg(q1, q2, p1, d1) or on_seg(q1, q2, p2, d2) or on_seg(p1, p2, q1, d3) or on_seg(p1, p2, q2, d4)


def is_simple(pts: np.ndarray) -> bool:
    n = len(pts)
    scale = float(np.abs(pts).max()) if n else 1.0
    tol = 1e-12 * max(scale, 1.0) ** 2
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        if np.hypot(*(b - a)) <= 1e-12 * max(scale, 1.0):
            return False
        # Consecutive edges may only share their common vertex.
        c = pts[(i + 2) % n]
        if abs(_cross(a, b, c)) <= tol and np.dot(b - a, c - b) < 0:
            return False
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_touch(a, b, pts[j], pts[(j + 1) % n], tol):
                return False
    return True


@dataclass(frozen=True, eq=False)
class Contour2D:
    """Closed, simple, counter-clockwise polygon."""
    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise InvalidParams("vertices must be (n, 2)")
        if len(v) < 3:
            raise TooFewVertices(f"{len(v)} vertices; a contour needs at least 3")
        if not np.all(np.isfinite(v)):
            raise InvalidParams("vertices must be finite")
        if not is_simple(v):
            raise SelfIntersecting("contour crosses or touches itself")
        if signed_area(v) <= 0:
            raise InvalidParams("contour must be counter-clockwise with positive area")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    def __len__(self):
        return len(self.vertices)

    @property
    def area(self) -> float:
        return signed_area(self.vertices)

    @classmethod
    def from_points(cls, points) -> "Contour2D":
        """Drops a repeated closing vertex and consecutive duplicates; reverses clockwise input with a warning."""
        v = np.array(points, dtype=float).reshape(-1, 2)
        if len(v) > 1 and np.array_equal(v[0], v[-1]):
            v = v[:-1]
        if len(v):
            keep = np.ones(len(v), bool)
            keep[1:] = np.any(v[1:] != v[:-1], axis=1)
            v = v[keep]
        if len(v) < 3:
            raise TooFewVertices(f"{len(v)} distinct vertices; a contour needs at least 3")
        if not is_simple(v):
            raise SelfIntersecting("contour crosses or touches itself")
        if signed_area(v) < 0:
            warnings.warn("clockwise contour reversed to counter-clockwise", stacklevel=2)
            v = v[::-1].copy()
        if signed_area(v) == 0:
            raise TooFewVertices("contour has zero area")
        return cls(v)

    def diameter_pair(self) -> tuple[int, int]:
        """Indices of the two most distant vertices (lowest index pair on ties)."""
        d = np.linalg.norm(self.vertices[:, None] - self.vertices[None], axis=-1)
        i, j = np.unravel_index(int(np.argmax(d)), d.shape)
        return (int(i), int(j)) if i < j else (int(j), int(i))


# ---------------------------------------------------------------- parsing

def _parse_point_list(text: str) -> list[tuple[float, float]]:
    body = "\n".join(line.split("#", 1)[0] for line in text.splitlines()).strip()
    if body.startswith("["):
        try:
            pts = ast.literal_eval(body)
        except (ValueError, SyntaxError) as e:
            raise InvalidParams(f"malformed bracketed point array: {e}") from None
        return [(float(p[0]), float(p[1])) for p in pts]
    pts = []
    for k, line in enumerate(body.splitlines(), 1):
        if not line.strip():
            continue
        fields = re.split(r"[,\s]+", line.strip())
        if len(fields) != 2:
            raise InvalidParams(f"line {k}: expected 'x y', got {line.strip()!r}")
        pts.append((float(fields[0]), float(fields[1])))
    return pts


def _parse_dxf(text: str) -> list[tuple[float, float]]:
    """ASCII drawing subset: the ENTITIES section may hold exactly one closed LWPOLYLINE without bulges."""
    lines = [ln.strip() for ln in text.splitlines()]
    if len(lines) % 2:
        lines = lines[:-1] if lines[-1] == "" else lines
    pairs = [(lines[i], lines[i + 1]) for i in range(0, len(lines) - 1, 2)]
    in_entities = False
    entities: list[tuple[str, list[tuple[int, str]]]] = []
    for code, value in pairs:
        try:
            icode = int(code)
        except ValueError:
            raise InvalidParams(f"malformed group code {code!r}") from None
        if icode == 0:
            if value == "SECTION":
                continue
            if value == "ENDSEC":
                in_entities = False
                continue
            if in_entities and value != "EOF":
                entities.append((value, []))
            continue
        if icode == 2 and value == "ENTITIES":
            in_entities = True
            continue
        if in_entities and entities:
            entities[-1][1].append((icode, value))
    if not entities:
        raise InvalidParams("drawing has no entities")
    kinds = [e[0] for e in entities]
    for kind in kinds:
        if kind != "LWPOLYLINE":
            raise UnsupportedEntity(f"entity {kind} is not supported; use a closed LWPOLYLINE")
    if len(entities) != 1:
        raise UnsupportedEntity(f"expected one LWPOLYLINE, found {len(entities)}")
    flags = 0
    xs, ys = [], []
    for icode, value in entities[0][1]:
        if icode == 70:
            flags = int(value)
        elif icode == 10:
            xs.append(float(value))
        elif icode == 20:
            ys.append(float(value))
        elif icode == 42 and float(value) != 0.0:
            raise UnsupportedEntity("arc segments (bulge) are not supported")
    if len(xs) != len(ys):
        raise InvalidParams("polyline has unmatched x/y coordinates")
    pts = list(zip(xs, ys))
    if not flags & 1 and not (len(pts) > 1 and pts[0] == pts[-1]):
        raise OpenContour("polyline is not closed")
    return pts


def parse_contour(source, fmt: str | None = None) -> Contour2D:
    """Read a contour from a path or text. ``fmt`` is ``points`` or ``dxf``; sniffed when omitted."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()):
        text = Path(source).read_text()
        if fmt is None and Path(source).suffix.lower() == ".dxf":
            fmt = "dxf"
    else:
        text = str(source)
    if fmt is None:
        fmt = "dxf" if re.search(r"^\s*(SECTION|LWPOLYLINE)\s*$", text, re.M) else "points"
    if fmt == "dxf":
        pts = _parse_dxf(text)
    elif fmt == "points":
        pts = _parse_point_list(text)
    else:
        raise InvalidParams(f"unknown contour format {fmt!r}")
    return Contour2D.from_points(pts)


# ---------------------------------------------------------------- offsetting

def offset_contour(c: Contour2D, d: float) -> Contour2D:
    """Miter offset: outward for ``d > 0``, inward for ``d < 0``. Vertex count is preserved."""
    if d == 0:
        return c
    v = c.vertices
    n = len(v)
    e = np.roll(v, -1, axis=0) - v
    lengths = np.linalg.norm(e, axis=1)
    t = e / lengths[:, None]
    normals = np.column_stack([t[:, 1], -t[:, 0]])  # outward for CCW
    out = np.empty_like(v)
    for i in range(n):
        p = i - 1
        a0 = v[p] + d * normals[p]
        a1 = v[i] + d * normals[i]
        denom = t[p, 0] * t[i, 1] - t[p, 1] * t[i, 0]
        if abs(denom) < 1e-12:
            out[i] = v[i] + d * normals[i]
        else:
            diff = a1 - a0
            s = (diff[0] * t[i, 1] - diff[1] * t[i, 0]) / denom
            out[i] = a0 + s * t[p]
    new_e = np.roll(out, -1, axis=0) - out
    along = np.einsum("ij,ij->i", new_e, t)
    if np.any(along <= 1e-9 * lengths):
        if d < 0:
            raise OffsetCollapse(f"inward offset {-d} mm exceeds what the contour can absorb")
        raise SelfIntersecting("outward miter offset folds over itself")
    if not is_simple(out) or signed_area(out) <= 0:
        if d < 0:
            raise OffsetCollapse("inward offset collapses the contour")
        raise SelfIntersecting("outward miter offset crosses itself")
    return Contour2D(out)


# ---------------------------------------------------------------- meshes

def triangulate(c: Contour2D) -> np.ndarray:
    """Ear clipping; returns ``(n - 2, 3)`` CCW index triples."""
    v = c.vertices
    idx = list(range(len(v)))
    tris = []
    scale = max(float(np.abs(v).max()), 1.0)
    tol = 1e-12 * scale * scale
    while len(idx) > 3:
        m = len(idx)
        for k in range(m):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % m]
            a, b, cc = v[i0], v[i1], v[i2]
            if _cross(a, b, cc) <= tol:
                continue
            ear = True
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = v[j]
                if _cross(a, b, p) >= -tol and _cross(b, cc, p) >= -tol and _cross(cc, a, p) >= -tol:
                    ear = False
                    break
            if ear:
                tris.append((i0, i1, i2))
                del idx[k]
                break
        else:
            raise TriangulationFailure("no ear found; contour is degenerate")
    if _cross(v[idx[0]], v[idx[1]], v[idx[2]]) <= tol:
        raise TriangulationFailure("final triangle is degenerate")
    tris.append(tuple(idx))
    return np.array(tris, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray  # (V, 3) float
    triangles: np.ndarray  # (T, 3) int, outward winding for solids

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "triangles", np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3))

    def __len__(self):
        return len(self.triangles)

    def corners(self) -> np.ndarray:
        return self.vertices[self.triangles]

    def volume(self) -> float:
        """Signed volume by tetrahedra against the origin."""
        a, b, c = (self.corners()[:, k] for k in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def is_watertight(self) -> bool:
        """Every undirected edge is used by exactly two triangles, once in each direction."""
        t = self.triangles
        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        if len({tuple(e) for e in directed.tolist()}) != len(directed):
            return False
        fwd = {tuple(e) for e in directed.tolist()}
        return all((b, a) in fwd for a, b in fwd)

    def has_degenerate(self, tol: float = 1e-12) -> bool:
        a, b, c = (self.corners()[:, k] for k in range(3))
        return bool(np.any(np.linalg.norm(np.cross(b - a, c - a), axis=1) <= tol))

    def flipped(self) -> "TriMesh":
        return TriMesh(self.vertices, self.triangles[:, ::-1])

    def translated(self, offset) -> "TriMesh":
        return TriMesh(self.vertices + np.asarray(offset, dtype=float), self.triangles)

    def normals(self) -> np.ndarray:
        a, b, c = (self.corners()[:, k] for k in range(3))
        n = np.cross(b - a, c - a)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @staticmethod
    def merge(*meshes: "TriMesh") -> "TriMesh":
        verts, tris, base = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            tris.append(m.triangles + base)
            base += len(m.vertices)
        return TriMesh(np.concatenate(verts), np.concatenate(tris))


def extrude(c: Contour2D, height: float) -> TriMesh:
    """Prism over ``c`` from z = 0 to ``height``: ``4n - 4`` triangles."""
    if not height > 0:
        raise InvalidParams("height must be positive")
    n = len(c)
    caps = triangulate(c)
    v = c.vertices
    verts = np.vstack([np.column_stack([v, np.zeros(n)]), np.column_stack([v, np.full(n, float(height))])])
    i = np.arange(n)
    j = (i + 1) % n
    sides = np.concatenate([np.column_stack([i, j, j + n]), np.column_stack([i, j + n, i + n])])
    tris = np.concatenate([caps[:, ::-1], caps + n, sides])
    return TriMesh(verts, tris)


def ring(inner: Contour2D, outer: Contour2D, height: float) -> TriMesh:
    """Closed band between ``inner`` and a same-count offset ``outer``; quads split along the diagonal."""
    n = len(inner)
    if len(outer) != n:
        raise InvalidParams("ring contours need matching vertex counts")
    if not height > 0:
        raise InvalidParams("height must be positive")
    iv, ov = inner.vertices, outer.vertices
    z0, z1 = np.zeros(n), np.full(n, float(height))
    # Index blocks: inner bottom, inner top, outer bottom, outer top.
    verts = np.vstack([np.column_stack([iv, z0]), np.column_stack([iv, z1]),
                       np.column_stack([ov, z0]), np.column_stack([ov, z1])])
    i = np.arange(n)
    j = (i + 1) % n
    ib, it, ob, ot = i, i + n, i + 2 * n, i + 3 * n
    jb, jt, job, jot = j, j + n, j + 2 * n, j + 3 * n
    tris = np.concatenate([
        np.column_stack([ob, job, jot]), np.column_stack([ob, jot, ot]),  # outer wall, facing out
        np.column_stack([ib, jt, jb]), np.column_stack([ib, it, jt]),  # inner wall, facing the hole
        np.column_stack([it, ot, jot]), np.column_stack([it, jot, jt]),  # top
        np.column_stack([ib, job, ob]), np.column_stack([ib, jb, job]),  # bottom
    ])
    return TriMesh(verts, tris)


def stepped_pocket(inner: Contour2D, outer: Contour2D, inner_depth: float, outer_depth: float,
                   top: float) -> TriMesh:
    """Closed solid hanging down from z = ``top``: ``inner`` to ``inner_depth`` plus the band out to ``outer``
    to ``outer_depth``. Vertices are shared along the step, so the result is a single watertight shell."""
    n = len(inner)
    if len(outer) != n:
        raise InvalidParams("pocket contours need matching vertex counts")
    a, b = float(inner_depth), float(outer_depth)
    if not (a > 0 and b > 0):
        raise InvalidParams("pocket depths must be positive")
    iv, ov = inner.vertices, outer.vertices

    def level(v, z):
        return np.column_stack([v, np.full(n, z)])

    blocks = [level(ov, top), level(ov, top - b), level(iv, top - b)]
    if a != b:
        blocks.append(level(iv, top - a))
    verts = np.vstack(blocks)
    i = np.arange(n)
    j = (i + 1) % n
    OT, OS, IS = i, i + n, i + 2 * n
    IF = i + 3 * n if a != b else IS
    jOT, jOS, jIS, jIF = OT[j], OS[j], IS[j], IF[j]

    def wall_out(lo, jlo, hi, jhi):
        return [np.column_stack([lo, jlo, jhi]), np.column_stack([lo, jhi, hi])]

    parts = [triangulate(outer) + 0]  # top cap, facing up
    parts += wall_out(OS, jOS, OT, jOT)
    parts += [np.column_stack([IS, jOS, OS]), np.column_stack([IS, jIS, jOS])]  # step, facing down
    if a > b:
        parts += wall_out(IF, jIF, IS, jIS)
    elif a < b:
        parts += [t[:, ::-1] for t in wall_out(IS, jIS, IF, jIF)]
    parts.append(triangulate(inner)[:, ::-1] + IF[0])  # floor, facing down
    return TriMesh(verts, np.concatenate(parts))


def square(center, side: float) -> Contour2D:
    cx, cy = center
    h = side / 2.0
    return Contour2D(np.array([[cx - h, cy - h], [cx + h, cy - h], [cx + h, cy + h], [cx - h, cy + h]]))


# ---------------------------------------------------------------- STL

def stl_bytes(mesh: TriMesh) -> bytes:
    if mesh.has_degenerate():
        raise InvalidParams("mesh has degenerate triangles; normals are undefined")
    rec = np.zeros(len(mesh), dtype=np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")]))
    rec["n"] = mesh.normals()
    rec["v"] = mesh.corners()
    return STL_HEADER + struct.pack("<I", len(mesh)) + rec.tobytes()


def write_stl(mesh: TriMesh, path) -> int:
    """Binary STL; returns the byte count (84 + 50 per triangle)."""
    data = stl_bytes(mesh)
    Path(path).write_bytes(data)
    return len(data)


def read_stl(path) -> tuple[np.ndarray, np.ndarray]:
    """``(normals (T, 3), corners (T, 3, 3))`` from a binary STL."""
    data = Path(path).read_bytes()
    (count,) = struct.unpack_from("<I", data, 80)
    if len(data) != 84 + 50 * count:
        raise InvalidParams(f"STL size {len(data)} does not match {count} triangles")
    rec = np.frombuffer(data, offset=84, dtype=np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")]))
    return rec["n"].astype(float), rec["v"].astype(float)


# ---------------------------------------------------------------- molds

@dataclass(frozen=True)
class MoldParams:
    wall: float = 4.0
    clearance: float = 0.2
    skin_thickness: float = 2.0
    channel_side: float = 2.0
    peg_side: float = 2.0
    peg_height: float = 2.0
    groove_depth: float = 1.0
    groove_width: float = 1.0

    def __post_init__(self):
        for k, val in asdict(self).items():
            if not val > 0:
                raise InvalidParams(f"{k} must be positive")
        if self.groove_width + self.peg_side + 2 * self.clearance >= self.wall:
            raise InvalidParams("wall too thin for groove plus peg holes")

    @property
    def slab_height(self) -> float:
        return self.wall + self.skin_thickness / 2.0

    @property
    def hole_side(self) -> float:
        return self.peg_side + 2.0 * self.clearance


@dataclass(frozen=True, eq=False)
class MoldDesign:
    skin_solid: TriMesh
    mold_top: TriMesh
    mold_bottom: TriMesh
    params: MoldParams
    inlet: tuple[float, float]
    outlet: tuple[float, float]
    pegs: tuple[tuple[float, float], ...] = field(default=())

    def meshes(self) -> dict[str, TriMesh]:
        return {"skin_solid": self.skin_solid, "mold_top": self.mold_top, "mold_bottom": self.mold_bottom}

    def manifest(self) -> dict:
        return {"params": asdict(self.params), "inlet": list(self.inlet), "outlet": list(self.outlet),
                "pegs": [list(p) for p in self.pegs],
                "triangles": {k: len(m) for k, m in self.meshes().items()},
                "volume_mm3": {k: round(m.volume(), 9) for k, m in self.meshes().items()}}


def _closest_on_boundary(c: Contour2D, q: np.ndarray) -> np.ndarray:
    v = c.vertices
    a, b = v, np.roll(v, -1, axis=0)
    ab = b - a
    s = np.clip(np.einsum("ij,ij->i", q - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
    p = a + s[:, None] * ab
    return p[int(np.argmin(np.linalg.norm(p - q, axis=1)))]


def peg_positions(c: Contour2D, params: MoldParams) -> list[tuple[float, float]]:
    """Four pegs on the band between the groove and the outer wall, nearest the band's bounding-box corners."""
    mid = offset_contour(c, (params.groove_width + params.wall) / 2.0)
    lo, hi = mid.vertices.min(axis=0), mid.vertices.max(axis=0)
    corners = [(lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1])]
    return [tuple(float(x) for x in _closest_on_boundary(mid, np.array(q))) for q in corners]


def generate_mold(c: Contour2D, params: MoldParams = MoldParams()) -> MoldDesign:
    """Skin solid plus mating mold halves, each half printed cavity-side up.

    Both halves are a slab of height ``wall + t/2`` over the outline grown by
    ``wall``, with a cavity shell of depth ``t/2``. The bottom half carries
    four pegs; the top half carries matching holes, the perimeter groove, and
    inlet/outlet channels over the contour's two most distant vertices,
    running from the outer face up to the cavity floor.
    """
    t = params.skin_thickness
    H = params.slab_height
    outer = offset_contour(c, params.wall)
    slab = extrude(outer, H)
    cavity = extrude(c, t / 2.0).translated((0, 0, H - t / 2.0)).flipped()
    pegs = peg_positions(c, params)
    i, j = c.diameter_pair()
    inlet = tuple(float(x) for x in c.vertices[i])
    outlet = tuple(float(x) for x in c.vertices[j])

    bottom = TriMesh.merge(slab, cavity, *[extrude(square(p, params.peg_side), params.peg_height)
                                           .translated((0, 0, H)) for p in pegs])

    # cavity and perimeter groove share one shell so their common wall is not doubled
    pocket = stepped_pocket(c, offset_contour(c, params.groove_width), t / 2.0, params.groove_depth, H).flipped()
    channels = [extrude(square(p, params.channel_side), H - t / 2.0).flipped() for p in (inlet, outlet)]
    hole_depth = params.peg_height + params.clearance
    if hole_depth >= H:
        raise InvalidParams("peg holes would pierce the top mold")
    holes = [extrude(square(p, params.hole_side), hole_depth).translated((0, 0, H - hole_depth)).flipped()
             for p in pegs]
    top = TriMesh.merge(slab, pocket, *channels, *holes)
    return MoldDesign(extrude(c, t), top, bottom, params, inlet, outlet, tuple(pegs))


def write_design(design: MoldDesign, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, mesh in design.meshes().items():
        paths[name] = out / f"{name}.stl"
        write_stl(mesh, paths[name])
    return paths
