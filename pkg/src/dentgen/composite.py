"""Green-screen masking, binary morphology, and background transfer.

Masks are plain 2D boolean arrays, row-major, matching their source image.
Because the renderer never blends silhouette edges, chroma masks default to
exact color matching; a tolerance switch covers externally rendered inputs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .config import CompositeConfig
from .errors import ImageError, ParameterError

BinaryMask = np.ndarray  # (h, w) bool

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


def chroma_mask(
    rgb: np.ndarray, key_color: tuple[int, int, int] = (0, 255, 0), tolerance: int = 0
) -> BinaryMask:
    """Foreground mask: true where the pixel differs from the key color.

    tolerance > 0 switches to distance keying (max channel deviation) for
    images with blended edges.
    """
    img = np.asarray(rgb)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ParameterError("chroma_mask expects an 8-bit RGB image")
    key = np.array(key_color, dtype=np.int16)
    if tolerance <= 0:
        return (img != key).any(axis=2)
    diff = np.abs(img.astype(np.int16) - key).max(axis=2)
    return diff > tolerance


def _check_radius(radius: int):
    if radius < 1:
        raise ParameterError(f"morphology radius must be >= 1, got {radius}")


def _box(radius: int) -> np.ndarray:
    return np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)


def erode(mask: BinaryMask, radius: int, border_value: bool = False) -> BinaryMask:
    """Minkowski erosion with a square structuring element, false padding by default."""
    _check_radius(radius)
    return ndimage.binary_erosion(mask, structure=_box(radius), border_value=border_value)


def dilate(mask: BinaryMask, radius: int, border_value: bool = False) -> BinaryMask:
    _check_radius(radius)
    return ndimage.binary_dilation(mask, structure=_box(radius), border_value=border_value)


def opening(mask: BinaryMask, radius: int) -> BinaryMask:
    """Erosion then dilation: removes speckle smaller than the element."""
    return dilate(erode(mask, radius), radius)


def closing(mask: BinaryMask, radius: int) -> BinaryMask:
    """Dilation then erosion: fills holes smaller than the element."""
    return erode(dilate(mask, radius), radius)


def refine_mask(mask: BinaryMask, cfg: CompositeConfig | None = None) -> BinaryMask:
    """The mask cleanup used before background transfer: close, open, erode.

    Closing fills accidental holes, opening drops stray speckle, and the
    final erosion pulls the boundary inside the silhouette so no key-colored
    fringe can survive compositing.
    """
    cfg = cfg or CompositeConfig()
    out = closing(mask, cfg.close_radius)
    out = opening(out, cfg.open_radius)
    return erode(out, cfg.erode_radius)


def composite(
    rgb: np.ndarray,
    mask: BinaryMask,
    background_image: np.ndarray,
    key_color: tuple[int, int, int] = (0, 255, 0),
) -> np.ndarray:
    """Foreground where mask is true, resized background elsewhere.

    The background is center-cropped square and bilinearly resampled to the
    frame size. Any output pixel that would equal the key color exactly
    (possible via the background itself) is nudged off it.
    """
    img = np.asarray(rgb)
    h, w = img.shape[:2]
    bg = resize_to_square(background_image, h)
    out = np.where(mask[:, :, None], img, bg)
    key = np.array(key_color, dtype=np.uint8)
    clash = (out == key).all(axis=2)
    if clash.any():
        g = int(key[1])
        out[clash, 1] = np.uint8(g - 1) if g > 0 else np.uint8(1)
    return out


def resize_to_square(image: np.ndarray, size: int) -> np.ndarray:
    """Center-crop to square then bilinear-resample to (size, size)."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageError("background must be an RGB image")
    h, w = img.shape[:2]
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    cropped = img[top : top + side, left : left + side]
    if side == size:
        return cropped.astype(np.uint8)
    pil = Image.fromarray(cropped.astype(np.uint8))
    return np.asarray(pil.resize((size, size), Image.BILINEAR))


class BackgroundPool:
    """Deterministically indexable directory of background photographs."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise ImageError(f"background pool directory not found: {self.root}")
        self.paths = sorted(
            p for p in self.root.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
        )
        if not self.paths:
            raise ImageError(f"background pool is empty: {self.root}")

    def __len__(self) -> int:
        return len(self.paths)

    def pick(self, seed: int, index: int) -> tuple[str, np.ndarray]:
        """Background for sample `index`: pool[hash(seed, index) mod size].

        Undecodable entries are skipped by advancing to the next pool slot.
        """
        import hashlib

        h = hashlib.sha256(f"{seed}:{index}".encode()).digest()
        start = int.from_bytes(h[:8], "big") % len(self.paths)
        for attempt in range(len(self.paths)):
            path = self.paths[(start + attempt) % len(self.paths)]
            try:
                with Image.open(path) as im:
                    return path.name, np.asarray(im.convert("RGB"))
            except (UnidentifiedImageError, OSError):
                continue
        raise ImageError(f"no decodable image in background pool {self.root}")
