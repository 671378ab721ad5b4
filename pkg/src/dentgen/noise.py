"""Seeded 3D gradient noise and the hard turbulence texture driving surface dents.

The primitive is classic lattice gradient noise (12 edge-vector gradients,
quintic fade, seeded 256-entry permutation table). Its value is exactly 0 at
integer lattice coordinates, and a per-cell envelope analysis bounds |noise|
by about 1.0364; AMPLITUDE_BOUND keeps a little headroom above that.
"""

from __future__ import annotations

import numpy as np

AMPLITUDE_BOUND = 1.05

# Sum of 4 octave amplitudes 1 + 1/2 + 1/4 + 1/8.
_OCTAVE_SUM = 1.875

_GRADS = np.array(
    [
        [1, 1, 0], [-1, 1, 0], [1, -1, 0], [-1, -1, 0],
        [1, 0, 1], [-1, 0, 1], [1, 0, -1], [-1, 0, -1],
        [0, 1, 1], [0, -1, 1], [0, 1, -1], [0, -1, -1],
    ],
    dtype=np.float64,
)

_perm_cache: dict[int, np.ndarray] = {}


def _perm(seed: int) -> np.ndarray:
    table = _perm_cache.get(seed)
    if table is None:
        p = np.random.default_rng(seed).permutation(256).astype(np.int64)
        table = np.concatenate([p, p])
        table.setflags(write=False)
        _perm_cache[seed] = table
    return table


def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def gradient_noise(points: np.ndarray, seed: int = 0) -> np.ndarray:
    """Gradient noise for an (n, 3) array of points; deterministic in (point, seed)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    perm = _perm(seed)
    cell = np.floor(pts)
    frac = pts - cell
    ci = cell.astype(np.int64) & 255
    fu, fv, fw = _fade(frac[:, 0]), _fade(frac[:, 1]), _fade(frac[:, 2])
    total = np.zeros(len(pts))
    for dx in (0, 1):
        wx = fu if dx else 1.0 - fu
        hx = perm[ci[:, 0] + dx]
        for dy in (0, 1):
            wy = fv if dy else 1.0 - fv
            hy = perm[hx + ci[:, 1] + dy]
            for dz in (0, 1):
                wz = fw if dz else 1.0 - fw
                g = _GRADS[perm[hy + ci[:, 2] + dz] % 12]
                d = frac - (dx, dy, dz)
                total += wx * wy * wz * np.einsum("ij,ij->i", g, d)
    return total


def hard_turbulence(points: np.ndarray, seed: int = 0) -> np.ndarray:
    """Absolute-value turbulence in [0, 1]: 4 octaves of |gradient_noise|.

    T(p) = sum_{o=0..3} |noise(2^o p)| / 2^o, divided by the closed-form
    maximum 1.875 * AMPLITUDE_BOUND. Zero at integer lattice points, where
    every octave's noise vanishes.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    total = np.zeros(len(pts))
    for octave in range(4):
        amp = 0.5**octave
        total += amp * np.abs(gradient_noise(pts * 2.0**octave, seed))
    return total / (_OCTAVE_SUM * AMPLITUDE_BOUND)
