"""Exemplar-based region filling (Criminisi-style) and fill diagnostics.

Pixels are filled one patch at a time.  Each iteration picks the fill-front
pixel with the highest priority (confidence times data term), then searches
every window of already-known pixels for the one with the smallest sum of
squared RGB differences against the known part of the target patch, and
copies the missing pixels from it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import ndimage

from .errors import FillError
from .imaging import BinaryMask, Raster, saturation_of

log = logging.getLogger(__name__)

# Keeps confidence ordering meaningful on flat texture where the data term vanishes.
DATA_TERM_FLOOR = 1e-3


@dataclass(frozen=True, eq=False)
class FillJob:
    target: Raster
    fill_region: BinaryMask
    source_region: BinaryMask
    patch_size: int = 9

    def __post_init__(self):
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise ValueError(f"patch_size must be odd and >= 3, got {self.patch_size}")
        if self.fill_region.shape != self.target.shape or self.source_region.shape != self.target.shape:
            raise ValueError("fill/source masks must match the target raster")
        if (self.fill_region.bits & self.source_region.bits).any():
            raise ValueError("fill_region and source_region overlap")


@dataclass
class FillStats:
    iterations: int = 0
    filled_pixels: int = 0
    mean_ssd: float = 0.0
    remaining_trace: list[int] = field(default_factory=list)  # unfilled count after each iteration


@numba.njit(cache=True)
def _valid_windows(known, size):
    """valid[y, x] is True when the size x size window at (y, x) is fully known."""
    H, W = known.shape
    ii = np.zeros((H + 1, W + 1), np.int64)
    for y in range(H):
        acc = 0
        for x in range(W):
            acc += 1 if known[y, x] else 0
            ii[y + 1, x + 1] = ii[y, x + 1] + acc
    full = size * size
    valid = np.zeros((H - size + 1, W - size + 1), np.bool_)
    n = 0
    for y in range(H - size + 1):
        for x in range(W - size + 1):
            s = ii[y + size, x + size] - ii[y, x + size] - ii[y + size, x] + ii[y, x]
            if s == full:
                valid[y, x] = True
                n += 1
    return valid, n


@numba.njit(cache=True)
def _priority_at(img, known, todo, conf, half, floor, y, x):
    """(priority, confidence) of pixel (y, x); priority -1 when it is not on the fill front."""
    H, W = known.shape
    size = 2 * half + 1
    if not todo[y, x]:
        return -1.0, 0.0
    on_front = False
    for dy in range(-1, 2):
        for dx in range(-1, 2):
            if known[y + dy, x + dx]:
                on_front = True
    if not on_front:
        return -1.0, 0.0

    c = 0.0
    for dy in range(-half, half + 1):
        for dx in range(-half, half + 1):
            if known[y + dy, x + dx]:
                c += conf[y + dy, x + dx]
    c /= size * size

    # normal of the front from a Sobel response of the known indicator
    ny = 0.0
    nx = 0.0
    for dy in range(-1, 2):
        for dx in range(-1, 2):
            if known[y + dy, x + dx]:
                wy = 2.0 if dx == 0 else 1.0
                wx = 2.0 if dy == 0 else 1.0
                ny += dy * wy
                nx += dx * wx
    nn = np.sqrt(ny * ny + nx * nx)

    # strongest isophote among known pixels with a fully known stencil
    gy_best = 0.0
    gx_best = 0.0
    g_best = -1.0
    for dy in range(-half, half + 1):
        qy = y + dy
        if qy < 1 or qy >= H - 1:
            continue
        for dx in range(-half, half + 1):
            qx = x + dx
            if qx < 1 or qx >= W - 1 or not known[qy, qx]:
                continue
            if not (known[qy - 1, qx] and known[qy + 1, qx] and known[qy, qx - 1] and known[qy, qx + 1]):
                continue
            gy = 0.0
            gx = 0.0
            for ch in range(3):
                gy += img[qy + 1, qx, ch] - img[qy - 1, qx, ch]
                gx += img[qy, qx + 1, ch] - img[qy, qx - 1, ch]
            gy /= 6.0
            gx /= 6.0
            g = gy * gy + gx * gx
            if g > g_best:
                g_best = g
                gy_best = gy
                gx_best = gx
    d = 0.0
    if nn > 0 and g_best > 0:
        # isophote is the gradient rotated by 90 degrees
        d = abs(-gy_best * nx / nn + gx_best * ny / nn) / 255.0
    return c * (d + floor), c


@numba.njit(cache=True)
def _update_priorities(prio, cval, img, known, todo, conf, half, floor, y0, y1, x0, x1):
    H, W = known.shape
    y0 = max(y0, half)
    x0 = max(x0, half)
    y1 = min(y1, H - half)
    x1 = min(x1, W - half)
    for y in range(y0, y1):
        for x in range(x0, x1):
            p, c = _priority_at(img, known, todo, conf, half, floor, y, x)
            prio[y, x] = p
            cval[y, x] = c


@numba.njit(cache=True)
def _argmax_first(prio):
    H, W = prio.shape
    best = -1.0
    by = -1
    bx = -1
    for y in range(H):
        for x in range(W):
            if prio[y, x] > best:
                best = prio[y, x]
                by = y
                bx = x
    return by, bx


@numba.njit(cache=True)
def _refresh_valid(valid, known, size, y0, y1, x0, x1):
    VH, VW = valid.shape
    for y in range(max(y0, 0), min(y1, VH)):
        for x in range(max(x0, 0), min(x1, VW)):
            if valid[y, x]:
                continue
            ok = True
            for dy in range(size):
                for dx in range(size):
                    if not known[y + dy, x + dx]:
                        ok = False
                        break
                if not ok:
                    break
            valid[y, x] = ok


@numba.njit(cache=True)
def _best_source(img, known, valid, ty, tx, size):
    """Exhaustive SSD search over all fully-known windows; row-major first wins ties.

    Known target pixels are visited farthest-from-mean first so that the
    partial sum passes the running best as early as possible.
    """
    H, W, _ = img.shape
    flat = img.ravel()
    n_known = 0
    for dy in range(size):
        for dx in range(size):
            if known[ty + dy, tx + dx]:
                n_known += 1
    off = np.empty(n_known, np.int64)
    tv = np.empty((n_known, 3), np.int32)
    mean = np.zeros(3)
    k = 0
    for dy in range(size):
        for dx in range(size):
            if known[ty + dy, tx + dx]:
                off[k] = (dy * W + dx) * 3
                for ch in range(3):
                    tv[k, ch] = img[ty + dy, tx + dx, ch]
                    mean[ch] += tv[k, ch]
                k += 1
    mean /= max(n_known, 1)
    spread = np.empty(n_known)
    for i in range(n_known):
        spread[i] = -((tv[i, 0] - mean[0]) ** 2 + (tv[i, 1] - mean[1]) ** 2 + (tv[i, 2] - mean[2]) ** 2)
    order = np.argsort(spread, kind="mergesort")
    off = off[order]
    tv = tv[order]

    VH, VW = valid.shape
    best = np.int64(-1)
    sy = -1
    sx = -1
    for y in range(VH):
        for x in range(VW):
            if not valid[y, x]:
                continue
            base = (y * W + x) * 3
            s = np.int64(0)
            for i in range(n_known):
                j = base + off[i]
                d0 = flat[j] - tv[i, 0]
                d1 = flat[j + 1] - tv[i, 1]
                d2 = flat[j + 2] - tv[i, 2]
                s += d0 * d0 + d1 * d1 + d2 * d2
                if best >= 0 and s >= best:
                    break
            if best < 0 or s < best:
                best = s
                sy = y
                sx = x
    return sy, sx, best, n_known


def fill_regions(job: FillJob, stats: FillStats | None = None, max_iterations: int | None = None) -> Raster:
    """Fill ``job.fill_region`` from exemplars taken inside the known region."""
    if not job.fill_region.bits.any():
        return job.target

    half = job.patch_size // 2
    size = job.patch_size
    pad = ((half, half), (half, half))
    img = np.pad(job.target.pixels.astype(np.int32), pad + ((0, 0),))
    known = np.pad(job.source_region.bits, pad)
    todo = np.pad(job.fill_region.bits, pad)
    conf = known.astype(np.float64)

    valid, n_valid = _valid_windows(known, size)
    if n_valid == 0:
        raise FillError(
            f"no fully known {size}x{size} source window in {job.target.source_id or 'target'}",
            remaining=int(todo.sum()),
        )

    H, W = known.shape
    prio = np.full((H, W), -1.0)
    cval = np.zeros((H, W))
    _update_priorities(prio, cval, img, known, todo, conf, half, DATA_TERM_FLOOR, 0, H, 0, W)

    remaining = int(todo.sum())
    total = remaining
    trace = []
    iterations = 0
    ssd_sum = 0.0
    reach = half + 1  # priorities depend on pixels up to this distance
    while remaining:
        if max_iterations is not None and iterations >= max_iterations:
            raise FillError(f"iteration limit {max_iterations} reached", remaining=remaining)
        py, px = _argmax_first(prio)
        if py < 0:
            raise FillError(
                f"fill front is empty with {remaining} pixels left (region not adjacent to known pixels)",
                remaining=remaining,
            )
        c = cval[py, px]
        ty, tx = py - half, px - half
        sy, sx, ssd, n_known = _best_source(img, known, valid, ty, tx, size)

        win = (slice(ty, ty + size), slice(tx, tx + size))
        hole = todo[win].copy()
        img[win][hole] = img[sy:sy + size, sx:sx + size][hole]
        conf[win][hole] = c
        known[win][hole] = True
        todo[win][hole] = False

        newly = int(hole.sum())
        if newly == 0:  # unreachable: the target pixel itself is always in `hole`
            raise FillError("fill made no progress", remaining=remaining)
        remaining -= newly
        trace.append(remaining)
        iterations += 1
        ssd_sum += ssd / max(n_known, 1)
        _refresh_valid(valid, known, size, ty - size + 1, ty + size, tx - size + 1, tx + size)
        _update_priorities(prio, cval, img, known, todo, conf, half, DATA_TERM_FLOOR,
                           ty - reach, ty + size + reach, tx - reach, tx + size + reach)

    if stats is not None:
        stats.iterations = iterations
        stats.filled_pixels = total
        stats.mean_ssd = ssd_sum / iterations if iterations else 0.0
        stats.remaining_trace = trace
    log.debug("filled %d pixels in %d iterations", total, iterations)
    out = img[half:-half, half:-half].astype(np.uint8)
    return Raster(out, job.target.source_id)


def residual_check(
    filled: Raster, fill_region: BinaryMask, threshold: float = 0.1, window: int = 15
) -> dict:
    """Fraction of fill-region pixels whose saturation departs from the local median."""
    sat = saturation_of(filled.pixels)
    med = ndimage.median_filter(sat, size=window, mode="reflect")
    region = fill_region.bits
    total = int(region.sum())
    if total == 0:
        flagged = 0
    else:
        flagged = int((np.abs(sat - med)[region] > threshold).sum())
    return {
        "threshold": threshold,
        "window": window,
        "fill_pixels": total,
        "residual_pixels": flagged,
        "residual_fraction": flagged / total if total else 0.0,
    }


def ground_truth_mismatch(filled: Raster, truth: Raster, fill_region: BinaryMask) -> float:
    """Fraction of fill-region pixels that differ from a known original."""
    region = fill_region.bits
    total = int(region.sum())
    if total == 0:
        return 0.0
    diff = (filled.pixels != truth.pixels).any(axis=2)
    return float(diff[region].sum()) / total
