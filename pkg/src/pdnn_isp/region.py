"""Locating the subregion that encloses the scatterers.

Threshold an initial contrast estimate against background statistics, close
small gaps, then dilate for margin. Morphology treats everything outside the
grid as background.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import ContrastMap


def disk_offsets(r: int) -> list:
    """Offsets (di, dj) with di^2 + dj^2 <= r^2."""
    return [(di, dj) for di in range(-r, r + 1) for dj in range(-r, r + 1)
            if di * di + dj * dj <= r * r]


def _shifted(b, di, dj):
    """out[..., i, j] = b[..., i + di, j + dj], False outside the grid."""
    H, W = b.shape[-2:]
    out = np.zeros_like(b)
    i0, i1 = max(0, -di), min(H, H - di)
    j0, j1 = max(0, -dj), min(W, W - dj)
    if i0 < i1 and j0 < j1:
        out[..., i0:i1, j0:j1] = b[..., i0 + di:i1 + di, j0 + dj:j1 + dj]
    return out


def morph_dilate(b, r: int) -> np.ndarray:
    """Binary dilation by disk_r over the last two axes (leading axes batch)."""
    if r < 1:
        raise ValueError("structuring-element radius must be >= 1")
    b = np.asarray(b, bool)
    out = np.zeros_like(b)
    for di, dj in disk_offsets(r):
        out |= _shifted(b, di, dj)
    return out


def morph_erode(b, r: int) -> np.ndarray:
    if r < 1:
        raise ValueError("structuring-element radius must be >= 1")
    b = np.asarray(b, bool)
    out = np.ones_like(b)
    for di, dj in disk_offsets(r):
        out &= _shifted(b, di, dj)
    return out


def morph_close(b, r: int) -> np.ndarray:
    return morph_erode(morph_dilate(b, r), r)


def threshold_map(estimate, delta: float = 3.0, order: str = "asc") -> np.ndarray:
    """Cells whose |chi| reaches mu + delta * sigma of the first half of sorted values.

    ``order='asc'`` takes the lower half (background statistics); ``'desc'``
    takes the upper half. If nothing passes, the top 10% of cells are kept.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    vals = estimate.values if isinstance(estimate, ContrastMap) else np.asarray(estimate)
    v = np.abs(vals)
    flat = np.sort(v.ravel())
    if order == "desc":
        flat = flat[::-1]
    elif order != "asc":
        raise ValueError(f"unknown sort order {order!r}")
    half = flat[:max(1, flat.size // 2)]
    mu, sigma = half.mean(), half.std()
    thr = mu + delta * sigma
    b = v >= thr - 8 * np.finfo(float).eps * max(abs(thr), 1.0)
    if not b.any():
        k = max(1, int(np.ceil(0.1 * v.size)))
        cut = np.sort(v.ravel())[-k]
        b = v >= cut
    return b


@dataclass(frozen=True, eq=False)
class RegionMask:
    mask: np.ndarray
    radius: int
    stages: dict = field(default_factory=dict)

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool)
        if not m.any():
            raise ValueError("region mask is empty; try a smaller delta")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @property
    def active_indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask.ravel())

    @property
    def n_active(self) -> int:
        return int(self.mask.sum())

    @property
    def reduction_ratio(self) -> float:
        return self.n_active / self.mask.size

    @classmethod
    def full(cls, grid_m: int) -> "RegionMask":
        return cls(np.ones((grid_m, grid_m), bool), 0)

    def covers(self, truth: ContrastMap) -> bool:
        return bool(np.all(self.mask[truth.values != 0]))

    def to_csv(self, path):
        np.savetxt(path, self.active_indices, fmt="%d", header=f"grid_m={self.mask.shape[0]}")

    @classmethod
    def from_csv(cls, path, radius: int = 0) -> "RegionMask":
        with open(path) as fh:
            head = fh.readline()
        grid_m = int(head.split("grid_m=")[1])
        idx = np.loadtxt(path, dtype=int, ndmin=1)
        mask = np.zeros(grid_m * grid_m, bool)
        mask[idx] = True
        return cls(mask.reshape(grid_m, grid_m), radius)


def identify_region(estimate, delta: float = 3.0, r: int = 3, order: str = "asc") -> RegionMask:
    """Threshold, close and dilate an estimate into a RegionMask."""
    b_thr = threshold_map(estimate, delta, order)
    b_close = morph_close(b_thr, r)
    b_dil = morph_dilate(b_close, r)
    if not b_dil.any():
        raise ValueError("identified region is empty; try a smaller delta")
    return RegionMask(b_dil, r, {"threshold": b_thr, "closing": b_close, "dilation": b_dil})
