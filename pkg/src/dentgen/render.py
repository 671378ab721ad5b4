"""Camera sampling and the software rasterizer.

Poses are drawn in spherical coordinates from the four azimuth quadrants
(polar angle and distance shared across quadrants), looking at the origin.
Rendering is perspective-correct z-buffered triangle rasterization with
Lambert shading, a UV label texture on the wall, and an exact-key background
(no anti-aliasing at silhouettes, so the chroma mask is exact by design).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .config import CameraConfig, LightConfig
from .errors import GeometryError, ParameterError
from .mesh import Mesh

# Albedo of untextured (cap/tab/seal) surfaces: aluminum-like gray.
CAP_ALBEDO = np.array([0.72, 0.72, 0.75])

KEY_GREEN = (0, 255, 0)
BLACK = (0, 0, 0)

_NEAR = 1e-3  # meters


@dataclass(frozen=True)
class CameraPose:
    """Spherical camera pose looking at the origin (degrees, meters)."""

    theta: float
    phi: float
    r: float
    quadrant: int = 1
    vertical_fov: float = 40.0
    image_size: int = 512

    def position(self) -> np.ndarray:
        th, ph = math.radians(self.theta), math.radians(self.phi)
        return self.r * np.array(
            [math.sin(ph) * math.cos(th), math.sin(ph) * math.sin(th), math.cos(ph)]
        )

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "phi": self.phi,
            "r": self.r,
            "quadrant": self.quadrant,
            "vertical_fov": self.vertical_fov,
            "image_size": self.image_size,
        }


@dataclass(frozen=True)
class LightSpec:
    """One directional light plus an ambient floor; direction points at the light."""

    direction: tuple[float, float, float]
    diffuse: float
    ambient: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if n == 0:
            raise ParameterError("light direction must be nonzero")
        object.__setattr__(self, "direction", tuple(d / n))
        if self.ambient + self.diffuse > 1.2 + 1e-12:
            raise ParameterError("ambient + diffuse must be <= 1.2")

    def to_dict(self) -> dict:
        return {
            "direction": list(self.direction),
            "diffuse": self.diffuse,
            "ambient": self.ambient,
        }


@dataclass
class RenderedSample:
    rgb: np.ndarray  # (H, W, 3) uint8
    coverage: np.ndarray  # (H, W) bool
    pose: CameraPose
    light: LightSpec


def sample_camera(
    rng: np.random.Generator, quadrant: int, cfg: CameraConfig | None = None
) -> CameraPose:
    """Uniform pose from the quadrant's azimuth range; draws theta, phi, r in order."""
    cfg = cfg or CameraConfig()
    if quadrant not in (1, 2, 3, 4):
        raise ParameterError(f"quadrant must be 1..4, got {quadrant}")
    lo, hi = cfg.theta_ranges[quadrant - 1]
    theta = float(rng.uniform(lo, hi))
    phi = float(rng.uniform(*cfg.phi_range))
    r = float(rng.uniform(*cfg.r_range))
    return CameraPose(
        theta=theta,
        phi=phi,
        r=r,
        quadrant=quadrant,
        vertical_fov=cfg.vertical_fov,
        image_size=cfg.image_size,
    )


def sample_light(rng: np.random.Generator, cfg: LightConfig | None = None) -> LightSpec:
    """Direction uniform on the upper hemisphere; draws z, azimuth, diffuse, ambient."""
    cfg = cfg or LightConfig()
    z = float(rng.uniform(0.0, 1.0))
    az = float(rng.uniform(0.0, 2.0 * math.pi))
    s = math.sqrt(max(0.0, 1.0 - z * z))
    direction = (s * math.cos(az), s * math.sin(az), z)
    diffuse = float(rng.uniform(*cfg.diffuse_range))
    ambient = float(rng.uniform(*cfg.ambient_range))
    return LightSpec(direction=direction, diffuse=diffuse, ambient=ambient)


@njit(cache=True, nogil=True)
def _raster_kernel(pxy, faces, attrs, buf):
    """Z-buffered rasterization; attrs[:, 0] is 1/depth and doubles as the depth key."""
    h, w = buf.shape[0], buf.shape[1]
    n_attr = attrs.shape[1]
    for k in range(faces.shape[0]):
        i0, i1, i2 = faces[k, 0], faces[k, 1], faces[k, 2]
        x0, y0 = pxy[i0, 0], pxy[i0, 1]
        x1, y1 = pxy[i1, 0], pxy[i1, 1]
        x2, y2 = pxy[i2, 0], pxy[i2, 1]
        xmin = int(max(math.floor(min(x0, min(x1, x2))), 0.0))
        xmax = int(min(math.ceil(max(x0, max(x1, x2))), w - 1.0))
        ymin = int(max(math.floor(min(y0, min(y1, y2))), 0.0))
        ymax = int(min(math.ceil(max(y0, max(y1, y2))), h - 1.0))
        if xmin > xmax or ymin > ymax:
            continue
        det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if det == 0.0:
            continue
        inv_det = 1.0 / det
        for py in range(ymin, ymax + 1):
            gy = py + 0.5
            for px in range(xmin, xmax + 1):
                gx = px + 0.5
                w0 = ((x1 - gx) * (y2 - gy) - (x2 - gx) * (y1 - gy)) * inv_det
                w1 = ((x2 - gx) * (y0 - gy) - (x0 - gx) * (y2 - gy)) * inv_det
                w2 = 1.0 - w0 - w1
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                q = w0 * attrs[i0, 0] + w1 * attrs[i1, 0] + w2 * attrs[i2, 0]
                if q > buf[py, px, 0]:
                    for c in range(n_attr):
                        buf[py, px, c] = (
                            w0 * attrs[i0, c] + w1 * attrs[i1, c] + w2 * attrs[i2, c]
                        )


def _camera_basis(eye: np.ndarray) -> np.ndarray:
    z_c = eye / np.linalg.norm(eye)  # camera looks along -z_c toward the origin
    up = np.array([0.0, 0.0, 1.0])
    x_c = np.cross(up, z_c)
    if np.linalg.norm(x_c) < 1e-9:
        x_c = np.cross(np.array([0.0, 1.0, 0.0]), z_c)
    x_c = x_c / np.linalg.norm(x_c)
    y_c = np.cross(z_c, x_c)
    return np.stack([x_c, y_c, z_c])


def _sample_texture_bilinear(texture: np.ndarray, uv: np.ndarray) -> np.ndarray:
    th, tw = texture.shape[:2]
    x = np.clip(uv[:, 0], 0.0, 1.0) * (tw - 1)
    y = (1.0 - np.clip(uv[:, 1], 0.0, 1.0)) * (th - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, tw - 1)
    y1 = np.minimum(y0 + 1, th - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    top = texture[y0, x0] * (1 - fx) + texture[y0, x1] * fx
    bot = texture[y1, x0] * (1 - fx) + texture[y1, x1] * fx
    return top * (1 - fy) + bot * fy


_default_texture_cache: dict[int, np.ndarray] = {}


def default_label_texture(seed: int = 7, size: int = 256) -> np.ndarray:
    """Procedural drink-label albedo in [0, 1]: brand bands plus text-like blocks."""
    if seed in _default_texture_cache:
        return _default_texture_cache[seed]
    rng = np.random.default_rng(seed)
    tex = np.zeros((size, size, 3))
    ramp = np.linspace(0.55, 0.85, size)[:, None]
    tex[:, :, 0] = ramp  # red brand gradient
    tex[:, :, 1] = 0.10
    tex[:, :, 2] = 0.12
    band = slice(int(0.30 * size), int(0.46 * size))
    tex[band] = (0.92, 0.90, 0.86)  # pale label band
    stripe = slice(int(0.62 * size), int(0.68 * size))
    tex[stripe] = (0.15, 0.25, 0.55)  # accent stripe
    for _ in range(26):  # blocky pseudo-text on the band
        r0 = rng.integers(int(0.32 * size), int(0.43 * size))
        c0 = rng.integers(0, size - 14)
        h = rng.integers(2, 5)
        wd = rng.integers(5, 14)
        tex[r0 : r0 + h, c0 : c0 + wd] = (0.1, 0.1, 0.14)
    tex = np.clip(tex, 0.0, 0.98)
    tex.setflags(write=False)
    _default_texture_cache[seed] = tex
    return tex


def rasterize(
    mesh: Mesh,
    pose: CameraPose,
    light: LightSpec,
    background: str = "key_green",
    texture: np.ndarray | None = None,
    key_color: tuple[int, int, int] = KEY_GREEN,
) -> RenderedSample:
    """Render the mesh over an exact-color background and report pixel coverage.

    Shading: clamp(ambient + diffuse * max(0, n.l)) times a per-pixel albedo
    that blends the UV label texture (weighted by the `side` group) with the
    metallic cap gray. Background pixels hold exactly the key color; covered
    pixels are guaranteed to differ from it.
    """
    if len(mesh.faces) == 0 or len(mesh.vertices) == 0:
        raise GeometryError("cannot rasterize an empty mesh")
    if background not in ("key_green", "black"):
        raise ParameterError(f"background must be key_green or black, got {background!r}")
    bg = np.array(key_color if background == "key_green" else BLACK, dtype=np.uint8)
    size = pose.image_size
    if texture is None:
        texture = default_label_texture()

    eye = pose.position()
    basis = _camera_basis(eye)
    vc = (mesh.vertices - eye) @ basis.T
    depth = -vc[:, 2]
    valid = depth > _NEAR
    safe_depth = np.where(valid, depth, 1.0)
    f = 1.0 / math.tan(math.radians(pose.vertical_fov) / 2.0)
    ndc_x = f * vc[:, 0] / safe_depth
    ndc_y = f * vc[:, 1] / safe_depth
    pxy = np.stack([(ndc_x * 0.5 + 0.5) * size, (0.5 - ndc_y * 0.5) * size], axis=1)

    faces = mesh.faces[valid[mesh.faces].all(axis=1)]
    rgb = np.tile(bg, (size, size, 1))
    coverage = np.zeros((size, size), dtype=bool)
    if len(faces) == 0:
        return RenderedSample(rgb=rgb, coverage=coverage, pose=pose, light=light)

    inv_z = 1.0 / safe_depth
    side = mesh.groups.get("side")
    side = np.zeros(mesh.vertex_count) if side is None else side
    attrs = np.empty((mesh.vertex_count, 7))
    attrs[:, 0] = inv_z
    attrs[:, 1:4] = mesh.normals * inv_z[:, None]
    attrs[:, 4:6] = mesh.uvs * inv_z[:, None]
    attrs[:, 6] = side * inv_z

    buf = np.zeros((size, size, 7))
    _raster_kernel(np.ascontiguousarray(pxy), np.ascontiguousarray(faces), attrs, buf)

    coverage = buf[:, :, 0] > 0.0
    if coverage.any():
        q = buf[coverage, 0]
        normal = buf[coverage, 1:4] / q[:, None]
        norm_len = np.linalg.norm(normal, axis=1)
        norm_len[norm_len < 1e-12] = 1.0
        normal /= norm_len[:, None]
        uv = buf[coverage, 4:6] / q[:, None]
        sw = np.clip(buf[coverage, 6] / q, 0.0, 1.0)

        ldir = np.asarray(light.direction)
        lambert = np.maximum(normal @ ldir, 0.0)
        intensity = np.clip(light.ambient + light.diffuse * lambert, 0.0, 1.0)
        albedo = sw[:, None] * _sample_texture_bilinear(texture, uv)
        albedo += (1.0 - sw)[:, None] * CAP_ALBEDO
        shaded = np.clip(np.rint(albedo * intensity[:, None] * 255.0), 0, 255).astype(np.uint8)

        # Exact chroma separation: a covered pixel must never equal the background key.
        clash = (shaded == bg).all(axis=1)
        if clash.any():
            if background == "key_green":
                shaded[clash, 1] = np.uint8(bg[1] - 1) if bg[1] > 0 else np.uint8(1)
            else:
                shaded[clash] = (1, 1, 1)
        rgb[coverage] = shaded

    return RenderedSample(rgb=rgb, coverage=coverage, pose=pose, light=light)
