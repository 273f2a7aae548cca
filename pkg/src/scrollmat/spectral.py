"""Log-magnitude Fourier spectra of sample patches and the five texture vectors."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import FeatureError

KINDS = ("grid_mean", "grid_sd", "ring_mean", "ring_sd", "weighted_bin")


@dataclass(frozen=True)
class SpectralConfig:
    grid_n: int = 7
    ring_count: int = 6
    bin_count: int = 19
    patch: int = 256

    def __post_init__(self):
        for name in ("grid_n", "ring_count", "bin_count", "patch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def lengths(self) -> dict[str, int]:
        n2 = self.grid_n * self.grid_n
        return {
            "grid_mean": n2,
            "grid_sd": n2,
            "ring_mean": self.ring_count,
            "ring_sd": self.ring_count,
            "weighted_bin": self.bin_count,
        }


@dataclass(frozen=True, eq=False)
class FeatureVector:
    kind: str
    values: np.ndarray
    fragment_id: str
    sample_index: int
    label: str | None = None
    set: str = "color"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        v = np.array(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def to_record(self) -> dict:
        return {
            "fragment_id": self.fragment_id,
            "sample_index": self.sample_index,
            "kind": self.kind,
            "label": self.label,
            "set": self.set,
            "values": [float(x) for x in self.values],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "FeatureVector":
        return cls(rec["kind"], rec["values"], rec["fragment_id"], int(rec["sample_index"]),
                   rec.get("label"), rec.get("set", "color"))

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return (self.kind, self.fragment_id, self.sample_index, self.label, self.set) == (
            other.kind, other.fragment_id, other.sample_index, other.label, other.set
        ) and np.array_equal(self.values, other.values)


# -- transforms ---------------------------------------------------------------

def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_last_axis(a: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along the last axis."""
    n = a.shape[-1]
    if n == 1:
        return a.astype(np.complex128)
    out = a[..., _bit_reverse(n)].astype(np.complex128)
    lead = out.shape[:-1]
    m = 2
    while m <= n:
        half = m // 2
        w = np.exp(-2j * np.pi * np.arange(half) / m)
        blocks = out.reshape(lead + (n // m, m))
        even = blocks[..., :half]
        odd = blocks[..., half:] * w
        out = np.concatenate([even + odd, even - odd], axis=-1).reshape(lead + (n,))
        m *= 2
    return out


def _dft_last_axis(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    k = np.arange(n)
    # reduce the exponent mod n first so large indices keep full precision
    w = np.exp(-2j * np.pi * ((k[:, None] * k[None, :]) % n) / n)
    return a.astype(np.complex128) @ w.T


def _transform_last(a: np.ndarray) -> np.ndarray:
    return _fft_last_axis(a) if _is_pow2(a.shape[-1]) else _dft_last_axis(a)


def dft2(m: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2-D DFT; row index is the vertical frequency.

    Power-of-two axes use the radix-2 FFT, other sizes a direct DFT.
    """
    a = np.asarray(m, dtype=np.float64 if not np.iscomplexobj(m) else np.complex128)
    if a.ndim != 2:
        raise ValueError(f"dft2 expects a 2-D array, got shape {a.shape}")
    rows = _transform_last(a)
    return _transform_last(rows.T).T


def log_spectrum(s: np.ndarray) -> np.ndarray:
    """Center-shifted log(1 + |F|); DC lands at (h // 2, w // 2)."""
    return np.log1p(np.abs(np.fft.fftshift(s)))


# -- feature vectors -----------------------------------------------------------

def band_edges(size: int, n: int) -> list[int]:
    """Boundaries of ``n`` contiguous bands over ``size``; larger bands first."""
    base, extra = divmod(size, n)
    edges = [0]
    for i in range(n):
        edges.append(edges[-1] + base + (1 if i < extra else 0))
    return edges


def _stat(values: np.ndarray, stat: str) -> float:
    if stat == "mean":
        return float(values.mean())
    if stat == "sd":
        return float(values.std())
    raise ValueError(f"stat must be 'mean' or 'sd', got {stat!r}")


def grid_features(ls: np.ndarray, n: int = 7, stat: str = "mean") -> np.ndarray:
    """Per-cell mean or population sd over an n x n partition, row-major."""
    h, w = ls.shape
    if n < 1 or n > h or n > w:
        raise FeatureError(f"grid n={n} does not fit a {w}x{h} spectrum")
    re, ce = band_edges(h, n), band_edges(w, n)
    out = np.empty(n * n)
    for i in range(n):
        for j in range(n):
            out[i * n + j] = _stat(ls[re[i]:re[i + 1], ce[j]:ce[j + 1]], stat)
    return out


def ring_index(h: int, w: int, rings: int) -> np.ndarray:
    """Ring number of each bin, -1 for bins at or beyond the inscribed radius."""
    cy, cx = h // 2, w // 2
    yy, xx = np.mgrid[0:h, 0:w]
    r = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    outer = min(h, w) / 2
    edges = np.array([j * outer / rings for j in range(rings + 1)])
    idx = np.searchsorted(edges, r, side="right") - 1
    idx[r >= outer] = -1
    return idx


def ring_features(ls: np.ndarray, rings: int = 6, stat: str = "mean") -> np.ndarray:
    """Mean or population sd of the spectrum within concentric rings.

    Values inside each ring are sorted before reduction so the result does not
    depend on scan order (a spectrum and its transpose give identical output).
    """
    if rings < 1:
        raise FeatureError("rings must be >= 1")
    h, w = ls.shape
    idx = ring_index(h, w, rings)
    out = np.empty(rings)
    for j in range(rings):
        vals = np.sort(ls[idx == j])
        if len(vals) == 0:
            raise FeatureError(f"ring {j} of {rings} is empty for a {w}x{h} spectrum")
        out[j] = _stat(vals, stat)
    return out


def phase_bins(s: np.ndarray, bins: int = 19) -> np.ndarray:
    """Bin number of each spectrum entry's phase angle in [0, 2*pi)."""
    theta = np.arctan2(s.imag, s.real)
    theta = np.where(theta < 0, theta + 2 * np.pi, theta)
    idx = np.floor(theta * bins / (2 * np.pi)).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def weighted_bin_features(s: np.ndarray, bins: int = 19) -> np.ndarray:
    """Phase histogram weighted by log(1 + |F|), normalized to sum to one."""
    weights = np.log1p(np.abs(s)).ravel()
    total = weights.sum()
    if not total > 0:
        raise FeatureError("all-zero spectrum: weighted-bin normalization undefined")
    hist = np.bincount(phase_bins(s, bins).ravel(), weights=weights, minlength=bins)
    return hist / hist.sum()


def featurize_patch(p, cfg: SpectralConfig = SpectralConfig()) -> dict[str, FeatureVector]:
    """All five vectors for one sample patch (a ``SamplePatch``)."""
    values = np.asarray(p.values)
    if values.shape != (cfg.patch, cfg.patch):
        raise FeatureError(f"patch is {values.shape}, expected {cfg.patch}x{cfg.patch}")
    spec = dft2(values)
    ls = log_spectrum(spec)
    raw = {
        "grid_mean": grid_features(ls, cfg.grid_n, "mean"),
        "grid_sd": grid_features(ls, cfg.grid_n, "sd"),
        "ring_mean": ring_features(ls, cfg.ring_count, "mean"),
        "ring_sd": ring_features(ls, cfg.ring_count, "sd"),
        "weighted_bin": weighted_bin_features(spec, cfg.bin_count),
    }
    return {k: FeatureVector(k, v, p.fragment_id, p.sample_index, p.label, p.set) for k, v in raw.items()}


# -- feature store (JSON lines) -------------------------------------------------

def write_feature_store(path: str | Path, vectors: Iterable[FeatureVector]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for v in vectors:
            fh.write(json.dumps(v.to_record(), sort_keys=True, allow_nan=False))
            fh.write("\n")
            n += 1
    return n


def iter_feature_store(path: str | Path) -> Iterator[FeatureVector]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield FeatureVector.from_record(json.loads(line))


def read_feature_store(path: str | Path, kind: str | None = None, image_set: str | None = None) -> list[FeatureVector]:
    out = []
    for v in iter_feature_store(path):
        if kind is not None and v.kind != kind:
            continue
        if image_set is not None and v.set != image_set:
            continue
        out.append(v)
    return out
