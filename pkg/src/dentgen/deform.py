"""Deformation vocabulary: lattice FFD shape keys, surface displacement, sampling.

Two mechanisms combine to deform the can. Macro deformations are free-form
deformations of a control lattice, baked into per-vertex shape keys and
blended linearly. Micro deformations displace wall vertices along their
normals by a hard turbulence texture, gated by the `side` vertex group.
A stochastic policy assembles both into labeled deformed/non-deformed states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import LatticeConfig
from .errors import ConfigurationError, GeometryError, ShapeError
from .mesh import Mesh, recompute_normals
from .noise import hard_turbulence

CATEGORIES = ("crush", "pinch", "fold", "twist", "crunch", "tab", "seal", "displace")
LATTICE_CATEGORIES = ("crush", "pinch", "fold", "twist", "crunch")

LABEL_DEFORMED = "deformed"
LABEL_NON_DEFORMED = "non_deformed"


@dataclass(frozen=True)
class ShapeKey:
    """Named per-vertex offsets blended into a base mesh with a scalar weight."""

    name: str
    offsets: np.ndarray  # (n, 3) meters
    category: str

    def __post_init__(self):
        object.__setattr__(self, "offsets", np.asarray(self.offsets, dtype=np.float64))
        if self.category not in CATEGORIES:
            raise ShapeError(f"unknown shape-key category {self.category!r}")
        self.offsets.setflags(write=False)


@dataclass(frozen=True)
class Lattice:
    """FFD control grid: (l, m, n) control points spanning rest_box."""

    resolution: tuple[int, int, int]
    rest_min: np.ndarray
    rest_max: np.ndarray
    control_points: np.ndarray  # (l, m, n, 3)

    def __post_init__(self):
        object.__setattr__(self, "rest_min", np.asarray(self.rest_min, dtype=np.float64))
        object.__setattr__(self, "rest_max", np.asarray(self.rest_max, dtype=np.float64))
        object.__setattr__(
            self, "control_points", np.asarray(self.control_points, dtype=np.float64)
        )
        l, m, n = self.resolution
        if min(l, m, n) < 2:
            raise ShapeError(f"lattice resolution must be >= 2 per axis, got {self.resolution}")
        if self.control_points.shape != (l, m, n, 3):
            raise ShapeError("control_points shape does not match resolution")

    @classmethod
    def around(cls, mesh: Mesh, resolution=(4, 4, 4), margin: float = 0.06) -> "Lattice":
        """Rest lattice whose box strictly contains the mesh (margin is fractional)."""
        lo, hi = mesh.bounds()
        extent = hi - lo
        pad = margin * np.where(extent > 0, extent, 1e-3)
        lo, hi = lo - pad, hi + pad
        return cls(tuple(resolution), lo, hi, rest_grid(resolution, lo, hi))

    def rest_points(self) -> np.ndarray:
        return rest_grid(self.resolution, self.rest_min, self.rest_max)

    def with_points(self, control_points: np.ndarray) -> "Lattice":
        return Lattice(self.resolution, self.rest_min, self.rest_max, control_points)

    def transformed(self, fn) -> "Lattice":
        """New lattice with fn applied to the flattened (k, 3) rest control points."""
        pts = self.rest_points().reshape(-1, 3)
        out = np.asarray(fn(pts), dtype=np.float64).reshape(self.control_points.shape)
        return self.with_points(out)


def rest_grid(resolution, lo, hi) -> np.ndarray:
    l, m, n = resolution
    xs = np.linspace(lo[0], hi[0], l)
    ys = np.linspace(lo[1], hi[1], m)
    zs = np.linspace(lo[2], hi[2], n)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    return np.stack([gx, gy, gz], axis=-1)


@dataclass(frozen=True)
class DisplaceParams:
    """Normal-direction displacement driven by hard turbulence, gated by a group."""

    noise_seed: int = 101
    scale: float = 90.0  # spatial frequency, 1/m
    strength: float = 0.0016  # m
    bias: float = 0.0005  # m, the slight inflation term
    group: str = "side"

    def __post_init__(self):
        if self.scale <= 0:
            raise ShapeError(f"displace scale must be > 0, got {self.scale}")
        if self.strength < 0:
            raise ShapeError(f"displace strength must be >= 0, got {self.strength}")


@dataclass
class DeformationState:
    """Full random deformation state of one sample; label-consistent by construction."""

    lattice_weights: dict[str, float]
    displace_weights: tuple[float, float, float]
    tab_open: float
    seal_open: float
    label: str

    def validate(self, categories_by_key: dict[str, str] | None = None):
        if self.label not in (LABEL_DEFORMED, LABEL_NON_DEFORMED):
            raise ShapeError(f"unknown label {self.label!r}")
        if len(self.displace_weights) != 3:
            raise ShapeError("displace_weights must have exactly 3 entries")
        if not self.tab_open <= self.seal_open:
            raise ShapeError("tab_open must be <= seal_open")
        active = {k for k, w in self.lattice_weights.items() if w > 0}
        if self.label == LABEL_NON_DEFORMED:
            if active or any(w > 0 for w in self.displace_weights):
                raise ShapeError("non_deformed state must have zero deformation weights")
        else:
            if categories_by_key is not None:
                cats = {categories_by_key[k] for k in active}
                if len(cats) < 3:
                    raise ShapeError("deformed state needs >= 3 active lattice categories")
            if not any(w > 0 for w in self.displace_weights):
                raise ShapeError("deformed state needs at least one displace weight > 0")


# ---------------------------------------------------------------------------
# Blend-shape evaluation and trivariate Bernstein FFD
# ---------------------------------------------------------------------------


def apply_shape_keys(mesh: Mesh, keys: list[tuple[ShapeKey, float]]) -> Mesh:
    """v' = v + sum_k w_k * offsets_k, with normals recomputed."""
    for key, _ in keys:
        if len(key.offsets) != mesh.vertex_count:
            raise ShapeError(
                f"shape key {key.name!r} has {len(key.offsets)} offsets "
                f"for a {mesh.vertex_count}-vertex mesh"
            )
    verts = mesh.vertices.copy()
    for key, weight in keys:
        if weight != 0.0:
            verts += weight * key.offsets
    return mesh.replaced(vertices=verts, normals=recompute_normals(verts, mesh.faces))


def _bernstein_weights(t: np.ndarray, degree: int) -> np.ndarray:
    """(len(t), degree+1) Bernstein basis values."""
    cols = [
        math.comb(degree, i) * t**i * (1.0 - t) ** (degree - i) for i in range(degree + 1)
    ]
    return np.stack(cols, axis=1)


def ffd_evaluate(lattice: Lattice, points: np.ndarray) -> np.ndarray:
    """Map points through the lattice deformation; points outside the box pass through.

    p' = sum_ijk B_i(s) B_j(t) B_k(u) P_ijk with (s, t, u) the normalized
    rest-box coordinates and B the Bernstein polynomials of the grid degrees.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    extent = lattice.rest_max - lattice.rest_min
    if np.any(extent <= 0):
        raise GeometryError(f"degenerate lattice rest_box, extent {extent}")
    stu = (pts - lattice.rest_min) / extent
    inside = np.all((stu >= 0.0) & (stu <= 1.0), axis=1)
    out = pts.copy()
    if inside.any():
        s = stu[inside]
        l, m, n = lattice.resolution
        bx = _bernstein_weights(s[:, 0], l - 1)
        by = _bernstein_weights(s[:, 1], m - 1)
        bz = _bernstein_weights(s[:, 2], n - 1)
        out[inside] = np.einsum(
            "pi,pj,pk,ijkc->pc", bx, by, bz, lattice.control_points, optimize=True
        )
    return out[0] if single else out


def bake_lattice_key(
    mesh: Mesh, lattice_rest: Lattice, lattice_deformed: Lattice, name: str, category: str
) -> ShapeKey:
    """offsets = ffd(deformed, v) - v for every vertex."""
    if lattice_rest.resolution != lattice_deformed.resolution:
        raise ShapeError(
            f"lattice resolution mismatch: {lattice_rest.resolution} "
            f"vs {lattice_deformed.resolution}"
        )
    if not (
        np.array_equal(lattice_rest.rest_min, lattice_deformed.rest_min)
        and np.array_equal(lattice_rest.rest_max, lattice_deformed.rest_max)
    ):
        raise ShapeError("lattices must share a rest_box")
    offsets = ffd_evaluate(lattice_deformed, mesh.vertices) - mesh.vertices
    return ShapeKey(name=name, offsets=offsets, category=category)


# ---------------------------------------------------------------------------
# The built-in macro deformation vocabulary (12 lattice keys + tab/seal hinges)
# ---------------------------------------------------------------------------


def builtin_lattice_keys(
    mesh: Mesh, lattice_rest: Lattice, cfg: LatticeConfig | None = None
) -> list[ShapeKey]:
    """The stock 12 keys across 5 categories, each a control-point edit then a bake.

    crush = axial compression of upper layers, pinch = inward radial pull at
    mid-height, fold = lateral shear, twist = per-layer azimuthal rotation,
    crunch = seeded jitter of all control points.
    """
    if "side" not in mesh.groups:
        raise ConfigurationError("mesh needs a `side` group to build lattice keys")
    cfg = cfg or LatticeConfig()
    lo, hi = lattice_rest.rest_min, lattice_rest.rest_max
    ez = hi[2] - lo[2]
    cx, cy = (lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0

    def tz(pts):
        return (pts[:, 2] - lo[2]) / ez

    keys = []

    crush_pows = (1.0, 2.0, 1.5)
    crush_tilts = (0.0, 0.0, 0.12)
    for i, amount in enumerate(cfg.crush_amounts):
        def edit(pts, amount=amount, p=crush_pows[i % 3], tilt=crush_tilts[i % 3]):
            t = tz(pts)
            out = pts.copy()
            out[:, 2] -= amount * ez * t**p
            out[:, 0] += tilt * ez * t**2
            return out

        keys.append(_bake(mesh, lattice_rest, edit, f"crush_{i}", "crush"))

    for i, amount in enumerate(cfg.pinch_amounts):
        def edit(pts, amount=amount, both=(i == 0)):
            t = tz(pts)
            bump = np.sin(np.pi * np.clip(t, 0.0, 1.0)) ** 2
            factor = 1.0 - amount * bump
            out = pts.copy()
            out[:, 0] = cx + (pts[:, 0] - cx) * (factor if both else 1.0)
            out[:, 1] = cy + (pts[:, 1] - cy) * factor
            return out

        keys.append(_bake(mesh, lattice_rest, edit, f"pinch_{i}", "pinch"))

    fold_dirs = (np.array([1.0, 0.0]), np.array([np.sqrt(0.5), np.sqrt(0.5)]))
    for i, amount in enumerate(cfg.fold_amounts):
        def edit(pts, amount=amount, d=fold_dirs[i % 2]):
            t = tz(pts)
            out = pts.copy()
            out[:, 0] += amount * ez * t**2 * d[0]
            out[:, 1] += amount * ez * t**2 * d[1]
            return out

        keys.append(_bake(mesh, lattice_rest, edit, f"fold_{i}", "fold"))

    for i, angle in enumerate(cfg.twist_angles_deg):
        def edit(pts, angle=math.radians(angle)):
            t = tz(pts)
            a = angle * t
            ca, sa = np.cos(a), np.sin(a)
            x, y = pts[:, 0] - cx, pts[:, 1] - cy
            out = pts.copy()
            out[:, 0] = cx + ca * x - sa * y
            out[:, 1] = cy + sa * x + ca * y
            return out

        keys.append(_bake(mesh, lattice_rest, edit, f"twist_{i}", "twist"))

    mean_extent = float(np.mean(hi - lo))
    for i, scale in enumerate(cfg.crunch_scales):
        def edit(pts, scale=scale, seed=cfg.crunch_seeds[i % len(cfg.crunch_seeds)]):
            jitter = np.random.default_rng(seed).normal(size=pts.shape)
            return pts + scale * mean_extent * jitter

        keys.append(_bake(mesh, lattice_rest, edit, f"crunch_{i}", "crunch"))

    return keys


def _bake(mesh, lattice_rest, edit, name, category):
    return bake_lattice_key(mesh, lattice_rest, lattice_rest.transformed(edit), name, category)


def make_tab_seal_keys(
    mesh: Mesh, tab_angle_deg: float = 55.0, seal_angle_deg: float = 40.0
) -> tuple[ShapeKey, ShapeKey]:
    """Hinge-rotation keys for the opener plates, baked at the fully open pose.

    The tab lifts up about its rivet-end edge; the seal folds down into the
    can about its center-side edge.
    """
    tab = _hinge_key(mesh, "tab", math.radians(tab_angle_deg), pivot_at_max_x=True, lift=True)
    seal = _hinge_key(mesh, "seal", math.radians(seal_angle_deg), pivot_at_max_x=False, lift=False)
    return tab, seal


def _hinge_key(mesh, group, angle, pivot_at_max_x, lift):
    w = mesh.group_weights(group)
    sel = w > 0.0
    if not sel.any():
        raise ConfigurationError(f"group {group!r} is empty")
    pts = mesh.vertices[sel]
    px = pts[:, 0].max() if pivot_at_max_x else pts[:, 0].min()
    pz = pts[:, 2].min()
    # Rotate about the y-directed hinge line through (px, *, pz).
    a = angle if lift else -angle
    ca, sa = math.cos(a), math.sin(a)
    dx, dz = pts[:, 0] - px, pts[:, 2] - pz
    rx = px + ca * dx + sa * dz
    rz = pz - sa * dx + ca * dz
    offsets = np.zeros_like(mesh.vertices)
    offsets[sel, 0] = rx - pts[:, 0]
    offsets[sel, 2] = rz - pts[:, 2]
    return ShapeKey(name=group, offsets=offsets, category=group)


# ---------------------------------------------------------------------------
# Surface displacement
# ---------------------------------------------------------------------------


def apply_displacement(mesh: Mesh, params: DisplaceParams, weight: float) -> Mesh:
    """Push vertices along their normals by the turbulence texture, gated by group.

    v' = v + n * g * weight * (strength * T(scale * v; seed) + bias); vertices
    with zero group weight are left bit-identical.
    """
    g = mesh.group_weights(params.group)
    moved = (g > 0.0) & (weight != 0.0)
    verts = mesh.vertices.copy()
    if moved.any():
        tex = hard_turbulence(mesh.vertices[moved] * params.scale, params.noise_seed)
        amount = g[moved] * weight * (params.strength * tex + params.bias)
        verts[moved] += mesh.normals[moved] * amount[:, None]
    return mesh.replaced(vertices=verts, normals=recompute_normals(verts, mesh.faces))


# ---------------------------------------------------------------------------
# Stochastic deformation policy
# ---------------------------------------------------------------------------


def sample_deformation(
    rng: np.random.Generator,
    keys: list[ShapeKey],
    label: str,
    lattice_weight_range: tuple[float, float] = (0.3, 1.0),
    displace_weight_range: tuple[float, float] = (0.2, 1.0),
) -> DeformationState:
    """Draw a label-consistent DeformationState.

    Fixed draw order: tab, seal, then for the deformed class the category
    count (uniform over {3..categories available}), the category subset, the
    per-category key picks, the lattice weights, and the displace weights.
    The tab <= seal ordering is enforced by swapping, not rejection.
    """
    by_cat: dict[str, list[str]] = {}
    for key in keys:
        if key.category in LATTICE_CATEGORIES:
            by_cat.setdefault(key.category, []).append(key.name)
    if len(by_cat) < 3:
        raise ConfigurationError(
            f"need lattice keys from >= 3 categories, got {sorted(by_cat)}"
        )

    tab = float(rng.uniform(0.0, 1.0))
    seal = float(rng.uniform(0.0, 1.0))
    if tab > seal:
        tab, seal = seal, tab

    weights = {k.name: 0.0 for k in keys if k.category in LATTICE_CATEGORIES}
    displace = (0.0, 0.0, 0.0)
    if label == LABEL_DEFORMED:
        cats = sorted(by_cat)
        n_cats = int(rng.integers(3, len(cats) + 1))
        chosen = rng.choice(cats, size=n_cats, replace=False)
        for cat in chosen:
            names = sorted(by_cat[cat])
            n_keys = int(rng.integers(1, len(names) + 1))
            picked = rng.choice(names, size=n_keys, replace=False)
            for name in picked:
                weights[name] = float(rng.uniform(*lattice_weight_range))
        displace = tuple(float(rng.uniform(*displace_weight_range)) for _ in range(3))
    elif label != LABEL_NON_DEFORMED:
        raise ConfigurationError(f"unknown label {label!r}")

    state = DeformationState(
        lattice_weights=weights,
        displace_weights=displace,
        tab_open=tab,
        seal_open=seal,
        label=label,
    )
    state.validate({k.name: k.category for k in keys})
    return state


def apply_deformation_state(
    mesh: Mesh,
    state: DeformationState,
    keys: list[ShapeKey],
    tab_key: ShapeKey,
    seal_key: ShapeKey,
    displace_params: tuple[DisplaceParams, ...],
) -> Mesh:
    """Run the full deformation stack for one sample state."""
    weighted = [(k, state.lattice_weights.get(k.name, 0.0)) for k in keys]
    weighted.append((tab_key, state.tab_open))
    weighted.append((seal_key, state.seal_open))
    out = apply_shape_keys(mesh, [(k, w) for k, w in weighted if w != 0.0])
    for params, weight in zip(displace_params, state.displace_weights):
        if weight > 0.0:
            out = apply_displacement(out, params, weight)
    return out


# ---------------------------------------------------------------------------
# Shape-key serialization (so authored keys can be versioned)
# ---------------------------------------------------------------------------


def save_shape_keys(path, keys: list[ShapeKey]) -> None:
    arrays = {"names": np.array([k.name for k in keys])}
    arrays["categories"] = np.array([k.category for k in keys])
    for i, key in enumerate(keys):
        arrays[f"offsets_{i}"] = key.offsets
    np.savez_compressed(path, **arrays)


def load_shape_keys(path) -> list[ShapeKey]:
    with np.load(path, allow_pickle=False) as data:
        names = [str(n) for n in data["names"]]
        cats = [str(c) for c in data["categories"]]
        return [
            ShapeKey(name=names[i], offsets=data[f"offsets_{i}"], category=cats[i])
            for i in range(len(names))
        ]
