"""Triangle meshes with vertex groups, the parametric test can, and OBJ I/O.

Vertices, faces, normals and UVs are dense numpy arrays. Meshes are
immutable after construction (arrays are write-locked) so they can be
shared freely across parallel sample generators.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError, ParseError

# Tab/seal plates float slightly above the top cap to avoid z-fighting.
_PLATE_LIFT = 4e-4
_SEAL_SEGMENTS = 12


@dataclass(frozen=True)
class Mesh:
    """Immutable triangle mesh.

    vertices: (n, 3) float64, meters
    faces:    (m, 3) int64 vertex indices
    normals:  (n, 3) float64 unit vectors
    uvs:      (n, 2) float64 in [0, 1]^2
    groups:   name -> (n,) float64 weights in [0, 1]
    """

    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray
    uvs: np.ndarray
    groups: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        n = np.ascontiguousarray(np.asarray(self.normals, dtype=np.float64))
        uv = np.ascontiguousarray(np.asarray(self.uvs, dtype=np.float64))
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "normals", n)
        object.__setattr__(self, "uvs", uv)
        object.__setattr__(
            self, "groups", {k: np.asarray(w, dtype=np.float64) for k, w in self.groups.items()}
        )
        self._validate()
        for arr in (self.vertices, self.faces, self.normals, self.uvs, *self.groups.values()):
            arr.setflags(write=False)

    def _validate(self):
        nv = len(self.vertices)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ParameterError("vertices must have shape (n, 3)")
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= nv):
            raise ParameterError(f"face index out of range (vertex count {nv})")
        if self.normals.shape != self.vertices.shape:
            raise ParameterError("normals must match vertex count")
        lens = np.linalg.norm(self.normals, axis=1)
        if len(lens) and np.abs(lens - 1.0).max() > 1e-6:
            raise ParameterError("normals must have unit length within 1e-6")
        if self.uvs.shape != (nv, 2):
            raise ParameterError("uvs must have shape (n, 2)")
        for name, w in self.groups.items():
            if w.shape != (nv,):
                raise ParameterError(f"group {name!r} weight count != vertex count")
            if len(w) and (w.min() < 0.0 or w.max() > 1.0):
                raise ParameterError(f"group {name!r} has weights outside [0, 1]")

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    def group_weights(self, name: str) -> np.ndarray:
        from .errors import LookupError_

        if name not in self.groups:
            raise LookupError_(f"mesh has no vertex group {name!r}")
        return self.groups[name]

    def replaced(self, **changes) -> "Mesh":
        """Copy of the mesh with some arrays swapped out."""
        return dataclasses.replace(self, **changes)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass(frozen=True)
class CanParams:
    """Parametric stand-in for a CAD soda can (default: 330 ml form factor)."""

    radius: float = 0.033
    height: float = 0.115
    taper_fraction: float = 0.12
    radial_segments: int = 64
    height_segments: int = 16
    tab_length_fraction: float = 0.55
    seal_radius_fraction: float = 0.60

    def validate(self):
        if self.radius <= 0:
            raise ParameterError(f"radius must be > 0, got {self.radius}")
        if self.height <= 0:
            raise ParameterError(f"height must be > 0, got {self.height}")
        if self.radial_segments < 8:
            raise ParameterError(f"radial_segments must be >= 8, got {self.radial_segments}")
        if self.height_segments < 8:
            raise ParameterError(f"height_segments must be >= 8, got {self.height_segments}")
        if not 0.0 <= self.taper_fraction < 0.4:
            raise ParameterError(f"taper_fraction must be in [0, 0.4), got {self.taper_fraction}")


def can_vertex_count(params: CanParams) -> int:
    """Closed-form vertex count of generate_can for the given segment counts."""
    s, v = params.radial_segments, params.height_segments
    lateral = (v + 3) * (s + 1)
    caps = 2 * (s + 1)
    seal = 1 + _SEAL_SEGMENTS
    tab = 6
    return lateral + caps + seal + tab


def recompute_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted per-vertex normals from face windings."""
    normals = np.zeros_like(vertices)
    v0 = vertices[faces[:, 0]]
    cross = np.cross(vertices[faces[:, 1]] - v0, vertices[faces[:, 2]] - v0)
    for axis in range(3):
        np.add.at(normals[:, axis], faces.ravel(), np.repeat(cross[:, axis], 3))
    lens = np.linalg.norm(normals, axis=1)
    degenerate = lens < 1e-20
    normals[degenerate] = (0.0, 0.0, 1.0)
    lens[degenerate] = 1.0
    return normals / lens[:, None]


def generate_can(params: CanParams) -> Mesh:
    """Build the test can: tapered cylinder, top/bottom caps, seal disk and tab plate.

    The can is centered at the origin with its axis along +z. Vertex groups:
    `side` weights the lateral wall (feathered to 0 at the rim tapers, 0 on
    caps), `tab` and `seal` mark the opener plates on the top cap.
    """
    params.validate()
    s, v = params.radial_segments, params.height_segments
    r_out, h = params.radius, params.height
    r_rim = r_out * (1.0 - params.taper_fraction)
    h_taper = params.taper_fraction * h
    z_lo, z_hi = -h / 2.0, h / 2.0
    z_wall_lo, z_wall_hi = z_lo + h_taper, z_hi - h_taper

    ang = np.linspace(0.0, 2.0 * np.pi, s + 1)  # seam column duplicated for UV wrap
    cos_a, sin_a = np.cos(ang), np.sin(ang)
    u_wrap = np.linspace(0.0, 1.0, s + 1)

    verts, norms, uvs = [], [], []
    side_w = []

    def ring(radius, z, normal_rz):
        verts.append(np.stack([radius * cos_a, radius * sin_a, np.full(s + 1, z)], axis=1))
        nr, nz = normal_rz
        nvec = np.stack([nr * cos_a, nr * sin_a, np.full(s + 1, nz)], axis=1)
        norms.append(nvec / np.linalg.norm(nvec, axis=1, keepdims=True))
        uvs.append(np.stack([u_wrap, np.full(s + 1, (z - z_lo) / h)], axis=1))

    # Taper cone outward normal: (1, -dr/dz) in (r, z), normalized.
    slope = (r_out - r_rim) / h_taper if h_taper > 0 else 0.0
    taper_bot_n = (1.0, -slope)
    taper_top_n = (1.0, slope)
    wall_n = (1.0, 0.0)

    ring(r_rim, z_lo, taper_bot_n)
    wall_z = np.linspace(z_wall_lo, z_wall_hi, v + 1)
    for k, z in enumerate(wall_z):
        if k == 0:
            n = _mix_rz(taper_bot_n, wall_n)
        elif k == v:
            n = _mix_rz(taper_top_n, wall_n)
        else:
            n = wall_n
        ring(r_out, z, n)
    ring(r_rim, z_hi, taper_top_n)

    # Side weights: 1 on interior wall rows, feathered to 0 at the taper junctions.
    ramp = max(1, round(v / 5))
    for ring_idx in range(v + 3):
        if ring_idx == 0 or ring_idx == v + 2:
            w = 0.0
        else:
            row = ring_idx - 1  # wall row 0..v
            w = min(1.0, min(row, v - row) / ramp)
        side_w.append(np.full(s + 1, w))

    faces = []
    for r in range(v + 2):
        base = r * (s + 1)
        for j in range(s):
            i0, i1 = base + j, base + j + 1
            i2, i3 = i0 + s + 1, i1 + s + 1
            faces.append((i0, i1, i3))
            faces.append((i0, i3, i2))

    def cap(z, r_cap, up):
        start = sum(len(a) for a in verts)
        verts.append(np.array([[0.0, 0.0, z]]))
        norms.append(np.array([[0.0, 0.0, 1.0 if up else -1.0]]))
        uvs.append(np.array([[0.5, 0.5]]))
        side_w.append(np.zeros(1))
        ca, sa = cos_a[:s], sin_a[:s]
        verts.append(np.stack([r_cap * ca, r_cap * sa, np.full(s, z)], axis=1))
        norms.append(np.tile([[0.0, 0.0, 1.0 if up else -1.0]], (s, 1)))
        uvs.append(np.stack([0.5 + 0.5 * ca, 0.5 + 0.5 * sa], axis=1))
        side_w.append(np.zeros(s))
        for j in range(s):
            a, b = start + 1 + j, start + 1 + (j + 1) % s
            faces.append((start, a, b) if up else (start, b, a))
        return start

    cap(z_lo, r_rim, up=False)
    cap(z_hi, r_rim, up=True)

    # Seal: opening panel near the rim on the top cap, hinged toward the center.
    seal_r = 0.5 * params.seal_radius_fraction * r_rim
    seal_cx = r_rim - seal_r - 0.1 * r_rim
    seal_z = z_hi + _PLATE_LIFT
    seal_start = sum(len(a) for a in verts)
    sa = np.linspace(0.0, 2.0 * np.pi, _SEAL_SEGMENTS, endpoint=False)
    verts.append(np.array([[seal_cx, 0.0, seal_z]]))
    verts.append(
        np.stack(
            [seal_cx + seal_r * np.cos(sa), seal_r * np.sin(sa), np.full(_SEAL_SEGMENTS, seal_z)],
            axis=1,
        )
    )
    norms.append(np.tile([[0.0, 0.0, 1.0]], (1 + _SEAL_SEGMENTS, 1)))
    uvs.append(np.full((1 + _SEAL_SEGMENTS, 2), 0.5))
    side_w.append(np.zeros(1 + _SEAL_SEGMENTS))
    for j in range(_SEAL_SEGMENTS):
        faces.append(
            (seal_start, seal_start + 1 + j, seal_start + 1 + (j + 1) % _SEAL_SEGMENTS)
        )

    # Tab: two-segment plate from the rivet at the cap center pointing away
    # from the seal; the hinge is the rivet-end column.
    tab_w = 0.28 * r_rim
    tab_len = params.tab_length_fraction * r_rim
    tab_z = z_hi + 2.0 * _PLATE_LIFT
    tab_start = sum(len(a) for a in verts)
    xs = (0.1 * r_rim, 0.1 * r_rim - tab_len / 2.0, 0.1 * r_rim - tab_len)
    tab_pts = [(x, y, tab_z) for x in xs for y in (-tab_w / 2.0, tab_w / 2.0)]
    verts.append(np.array(tab_pts))
    norms.append(np.tile([[0.0, 0.0, 1.0]], (6, 1)))
    uvs.append(np.array([[i / 2.0, j] for i in range(3) for j in (0.0, 1.0)]))
    side_w.append(np.zeros(6))
    for col in range(2):
        a = tab_start + 2 * col
        faces.append((a, a + 1, a + 3))
        faces.append((a, a + 3, a + 2))

    vertices = np.concatenate(verts)
    normals = np.concatenate(norms)
    uv = np.clip(np.concatenate(uvs), 0.0, 1.0)
    side = np.concatenate(side_w)
    n_total = len(vertices)

    tab_g = np.zeros(n_total)
    tab_g[tab_start : tab_start + 6] = 1.0
    seal_g = np.zeros(n_total)
    seal_g[seal_start : seal_start + 1 + _SEAL_SEGMENTS] = 1.0

    mesh = Mesh(
        vertices=vertices,
        faces=np.array(faces, dtype=np.int64),
        normals=normals,
        uvs=uv,
        groups={"side": side, "tab": tab_g, "seal": seal_g},
    )
    assert mesh.vertex_count == can_vertex_count(params)
    return mesh


def _mix_rz(a, b):
    v = np.array([a[0] + b[0], a[1] + b[1]])
    return tuple(v / np.linalg.norm(v))


# ---------------------------------------------------------------------------
# Wavefront-style I/O. Floats are written with 17 significant digits so a
# save/load round trip reproduces float64 coordinates exactly.
# ---------------------------------------------------------------------------


def save_obj(mesh: Mesh, path: str | Path) -> None:
    """Write v/vt/vn/f records (1-based, unified index space) plus a `.groups` sidecar."""
    path = Path(path)
    lines = []
    for x, y, z in mesh.vertices:
        lines.append(f"v {x:.17g} {y:.17g} {z:.17g}")
    for u, w in mesh.uvs:
        lines.append(f"vt {u:.17g} {w:.17g}")
    for x, y, z in mesh.normals:
        lines.append(f"vn {x:.17g} {y:.17g} {z:.17g}")
    for a, b, c in mesh.faces + 1:
        lines.append(f"f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}")
    path.write_text("\n".join(lines) + "\n")
    if mesh.groups:
        glines = ["# group vertex-index weight (0-based indices)"]
        for name in sorted(mesh.groups):
            w = mesh.groups[name]
            for i in np.nonzero(w > 0.0)[0]:
                glines.append(f"{name} {i} {w[i]:.17g}")
        path.with_suffix(".groups").write_text("\n".join(glines) + "\n")


def load_obj(path: str | Path) -> Mesh:
    """Parse an OBJ file; polygon faces are fan-triangulated.

    Raises ParseError (with the line number) on malformed records or on the
    1-based-index violations the format forbids.
    """
    path = Path(path)
    positions, uvs_raw, normals_raw = [], [], []
    face_records = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        try:
            if tag == "v":
                positions.append([float(x) for x in parts[1:4]])
            elif tag == "vt":
                uvs_raw.append([float(x) for x in parts[1:3]])
            elif tag == "vn":
                normals_raw.append([float(x) for x in parts[1:4]])
            elif tag == "f":
                if len(parts) < 4:
                    raise ParseError(f"{path}:{lineno}: face with fewer than 3 vertices")
                corners = [_parse_face_corner(p, path, lineno) for p in parts[1:]]
                for k in range(1, len(corners) - 1):
                    face_records.append((corners[0], corners[k], corners[k + 1]))
        except ParseError:
            raise
        except (ValueError, IndexError) as e:
            raise ParseError(f"{path}:{lineno}: malformed {tag!r} record ({e})") from e

    if not positions:
        raise ParseError(f"{path}: no vertices found")
    vertices = np.asarray(positions, dtype=np.float64)
    nv = len(vertices)

    uv = np.zeros((nv, 2))
    have_normals = np.zeros(nv, dtype=bool)
    normals = np.zeros((nv, 3))
    faces = []
    for tri in face_records:
        idx = []
        for vi, ti, ni in tri:
            if vi > nv:
                raise ParseError(f"{path}: face references vertex {vi} of {nv}")
            idx.append(vi - 1)
            if ti is not None and ti <= len(uvs_raw):
                uv[vi - 1] = uvs_raw[ti - 1]
            if ni is not None and ni <= len(normals_raw):
                normals[vi - 1] = normals_raw[ni - 1]
                have_normals[vi - 1] = True
        faces.append(idx)
    faces = np.asarray(faces, dtype=np.int64)

    if not have_normals.all():
        normals = recompute_normals(vertices, faces)
    else:
        lens = np.linalg.norm(normals, axis=1)
        lens[lens == 0] = 1.0
        normals = normals / lens[:, None]

    groups = {}
    sidecar = path.with_suffix(".groups")
    if sidecar.exists():
        for lineno, raw in enumerate(sidecar.read_text().splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                name, idx_s, w_s = line.split()
                i, w = int(idx_s), float(w_s)
            except ValueError as e:
                raise ParseError(f"{sidecar}:{lineno}: malformed group record") from e
            if not 0 <= i < nv:
                raise ParseError(f"{sidecar}:{lineno}: vertex index {i} out of range")
            groups.setdefault(name, np.zeros(nv))[i] = w

    return Mesh(
        vertices=vertices,
        faces=faces,
        normals=normals,
        uvs=np.clip(uv, 0.0, 1.0),
        groups=groups,
    )


def _parse_face_corner(token: str, path, lineno: int):
    fields_ = token.split("/")
    vi = int(fields_[0])
    if vi == 0:
        raise ParseError(f"{path}:{lineno}: face index 0 (OBJ indices are 1-based)")
    if vi < 0:
        raise ParseError(f"{path}:{lineno}: negative face index {vi} not supported")
    ti = int(fields_[1]) if len(fields_) > 1 and fields_[1] else None
    ni = int(fields_[2]) if len(fields_) > 2 and fields_[2] else None
    return vi, ti, ni
