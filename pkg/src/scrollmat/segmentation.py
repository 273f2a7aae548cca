"""Fragment isolation, sample-area search and patch extraction."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage
from scipy.cluster.vq import kmeans2, vq

from .errors import ClusteringError, EmptyMaskError, FragmentTooSmallError
from .imaging import BinaryMask, Raster, saturation_of

log = logging.getLogger(__name__)

DEFAULT_MIN_AREA = 64 * 64
_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def area(self) -> int:
        return self.w * self.h

    def as_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}


@dataclass(frozen=True, eq=False)
class FragmentRecord:
    fragment_id: str
    raster: Raster
    region: BinaryMask
    label: str | None = None
    set: str = "color"

    def __post_init__(self):
        if self.region.shape != self.raster.shape:
            raise ValueError(
                f"{self.fragment_id}: region {self.region.shape} does not match raster {self.raster.shape}"
            )


@dataclass(frozen=True, eq=False)
class SamplePatch:
    values: np.ndarray  # saturation, (patch, patch)
    fragment_id: str
    sample_index: int
    label: str | None
    set: str
    x: int
    y: int


def _distinct_colors(flat: np.ndarray) -> int:
    packed = (flat[:, 0].astype(np.uint32) << 16) | (flat[:, 1].astype(np.uint32) << 8) | flat[:, 2]
    return len(np.unique(packed))


def kmeans_segment(
    r: Raster,
    k: int = 3,
    seed: int = 0,
    min_area: int = DEFAULT_MIN_AREA,
    max_fit_pixels: int = 200_000,
) -> list[BinaryMask]:
    """Split a plate into fragment masks by clustering RGB values.

    The background cluster is the one owning most of the image border.
    Every other pixel is foreground; its 8-connected components of at least
    ``min_area`` pixels are returned, largest first.
    """
    if k < 2:
        raise ClusteringError(f"k must be >= 2, got {k}")
    flat = r.pixels.reshape(-1, 3)
    n_colors = _distinct_colors(flat)
    if k > n_colors:
        raise ClusteringError(f"k={k} exceeds the {n_colors} distinct colors in {r.source_id or 'raster'}")

    rng = np.random.default_rng(seed)
    data = flat.astype(np.float64)
    fit = data
    if len(data) > max_fit_pixels:
        fit = data[np.sort(rng.choice(len(data), size=max_fit_pixels, replace=False))]
    # Subsampling may drop rare colors; fall back to the full set then.
    if len(fit) < len(data) and _distinct_colors(fit.astype(np.uint8)) < k:
        fit = data
    centroids, _ = kmeans2(fit, k, iter=30, minit="++", seed=rng, missing="raise")
    labels, _ = vq(data, centroids)
    labels = labels.reshape(r.shape)

    border = np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])
    background = int(np.bincount(border, minlength=k).argmax())

    comps, n = ndimage.label(labels != background, structure=_EIGHT)
    if n == 0:
        return []
    areas = np.bincount(comps.ravel(), minlength=n + 1)[1:]
    keep = [i for i in np.argsort(-areas, kind="stable") if areas[i] >= min_area]
    log.debug("kmeans_segment: %d components, %d kept (min_area=%d)", n, len(keep), min_area)
    return [BinaryMask(comps == i + 1, "fragment") for i in keep]


@numba.njit(cache=True)
def _max_rect_dp(bits):
    H, W = bits.shape
    height = np.zeros(W, np.int64)
    left = np.zeros(W, np.int64)
    right = np.full(W, W, np.int64)
    best = (0, 0, 0, 0, 0)  # area, y, x, w, h
    for row in range(H):
        cur_left = 0
        for c in range(W):
            if bits[row, c]:
                height[c] += 1
                left[c] = max(left[c], cur_left)
            else:
                height[c] = 0
                left[c] = 0
                cur_left = c + 1
        cur_right = W
        for c in range(W - 1, -1, -1):
            if bits[row, c]:
                right[c] = min(right[c], cur_right)
            else:
                right[c] = W
                cur_right = c
        for c in range(W):
            h = height[c]
            if h == 0:
                continue
            w = right[c] - left[c]
            area = h * w
            y = row - h + 1
            x = left[c]
            a0, y0, x0, w0, _ = best
            if area > a0 or (area == a0 and (w > w0 or (w == w0 and (y < y0 or (y == y0 and x < x0))))):
                best = (area, y, x, w, h)
    return best


def largest_inscribed_rectangle(m: BinaryMask) -> Rect:
    """Largest-area axis-aligned rectangle of set pixels.

    Ties go to the widest rectangle, then the smallest top row, then the
    smallest left column.
    """
    if not m.bits.any():
        raise EmptyMaskError("largest_inscribed_rectangle: mask has no set pixels")
    area, y, x, w, h = _max_rect_dp(np.ascontiguousarray(m.bits))
    return Rect(int(x), int(y), int(w), int(h))


def _offsets(start: int, extent: int, grid: int, patch: int) -> list[int]:
    span = extent - patch
    if grid == 1:
        return [start]
    # round-half-up of i*span/(grid-1) in exact integer arithmetic
    return [start + (2 * i * span + (grid - 1)) // (2 * (grid - 1)) for i in range(grid)]


def sample_positions(area: Rect, grid: int = 5, patch: int = 256) -> list[tuple[int, int]]:
    """Top-left corners of a ``grid`` x ``grid`` lattice of patches, row-major."""
    if grid < 1 or patch < 1:
        raise ValueError("grid and patch must be positive")
    if area.w < patch or area.h < patch:
        raise FragmentTooSmallError(
            f"sample area {area.w}x{area.h} is smaller than the {patch}x{patch} patch"
        )
    xs = _offsets(area.x, area.w, grid, patch)
    ys = _offsets(area.y, area.h, grid, patch)
    return [(x, y) for y in ys for x in xs]


def extract_patches(
    f: FragmentRecord, positions: list[tuple[int, int]], patch: int = 256
) -> list[SamplePatch]:
    H, W = f.raster.shape
    out = []
    for i, (x, y) in enumerate(positions):
        if x < 0 or y < 0 or x + patch > W or y + patch > H:
            raise ValueError(f"{f.fragment_id}: patch {i} at ({x},{y}) outside {W}x{H} raster")
        sat = saturation_of(f.raster.pixels[y:y + patch, x:x + patch])
        out.append(SamplePatch(sat, f.fragment_id, i, f.label, f.set, x, y))
    return out


def crop_to_mask(r: Raster, m: BinaryMask) -> tuple[Raster, BinaryMask, Rect]:
    """Crop raster and mask to the mask's bounding box."""
    rows = np.flatnonzero(m.bits.any(axis=1))
    cols = np.flatnonzero(m.bits.any(axis=0))
    if len(rows) == 0:
        raise EmptyMaskError("cannot crop to an empty mask")
    box = Rect(int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))
    return r.crop(box.x, box.y, box.w, box.h), m.crop(box.x, box.y, box.w, box.h), box
