"""Deterministic parchment-like and papyrus-like test fragments."""
from __future__ import annotations

import colorsys
import json
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .imaging import BinaryMask, Raster, save_image, save_mask

SYNTH_KINDS = {"papyrus_like": "papyrus", "parchment_like": "parchment"}
DEFAULT_CORPUS = "corpus_v1.json"


@dataclass(frozen=True)
class SynthSpec:
    kind: str
    size: int = 512
    seed: int = 0
    stripe_period: float = 16.0
    noise_scale: float = 4.0
    hole_fraction: float = 0.0
    text_coverage: float = 0.0
    jitter: float = 0.3

    def __post_init__(self):
        if self.kind not in SYNTH_KINDS:
            raise ValueError(f"unknown synth kind {self.kind!r}")
        if self.size < 512:
            raise ValueError(f"size must be >= 512, got {self.size}")
        if not 0.0 <= self.hole_fraction <= 0.3:
            raise ValueError(f"hole_fraction must lie in [0, 0.3], got {self.hole_fraction}")
        if not 0.0 <= self.text_coverage <= 0.2:
            raise ValueError(f"text_coverage must lie in [0, 0.2], got {self.text_coverage}")
        if self.stripe_period < 2:
            raise ValueError("stripe_period must be >= 2")
        if self.noise_scale <= 0:
            raise ValueError("noise_scale must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")

    @property
    def material(self) -> str:
        return SYNTH_KINDS[self.kind]

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SynthSpec fields: {sorted(unknown)}")
        return cls(**d)


def _smooth_noise(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    """Gaussian-filtered white noise rescaled to zero mean, unit sd."""
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return (f - f.mean()) / (f.std() + 1e-12)


def _texture(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    n = spec.size
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    if spec.kind == "papyrus_like":
        p = spec.stripe_period
        # slow phase wander keeps fibres wavy without moving the base frequency
        wander_v = spec.jitter * _smooth_noise(rng, (n, n), 24.0)
        wander_h = spec.jitter * _smooth_noise(rng, (n, n), 24.0)
        amp_v = 1.0 + 0.35 * _smooth_noise(rng, (n, n), 12.0)
        amp_h = 1.0 + 0.35 * _smooth_noise(rng, (n, n), 12.0)
        mix = rng.uniform(0.35, 0.65)
        vertical = amp_v * np.sin(2 * np.pi * xx / p + rng.uniform(0, 2 * np.pi) + wander_v)
        horizontal = amp_h * np.sin(2 * np.pi * yy / p + rng.uniform(0, 2 * np.pi) + wander_h)
        t = mix * vertical + (1 - mix) * horizontal
        t += 0.45 * _smooth_noise(rng, (n, n), 1.0)
    else:
        t = _smooth_noise(rng, (n, n), spec.noise_scale)
        t += 0.45 * _smooth_noise(rng, (n, n), 1.0)
    t += 0.5 * _smooth_noise(rng, (n, n), 40.0)  # mottling / stains
    return t / t.std()


def _colorize(t: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    hue = rng.uniform(0.05, 0.11)
    hue_rgb = np.array(colorsys.hsv_to_rgb(hue, 1.0, 1.0))
    s = np.clip(rng.uniform(0.30, 0.55) + rng.uniform(0.05, 0.09) * t, 0.02, 0.98)
    v = np.clip(rng.uniform(0.55, 0.85) + rng.uniform(0.03, 0.06) * t, 0.05, 1.0)
    rgb = v[..., None] * (1.0 - s[..., None] * (1.0 - hue_rgb))
    return np.rint(rgb * 255).astype(np.uint8)


def _fragment_mask(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    n = spec.size
    mask = np.ones((n, n), dtype=bool)
    # ragged outline: each edge loses a smoothly varying band of up to 6 px
    rows = np.arange(n)[:, None]
    cols = np.arange(n)[None, :]
    top, bottom, left, right = (
        np.clip(3 + 3 * _smooth_noise(rng, (n,), 8.0), 0, 6).astype(int) for _ in range(4)
    )
    mask &= rows >= top[None, :]
    mask &= rows < n - bottom[None, :]
    mask &= cols >= left[:, None]
    mask &= cols < n - right[:, None]

    if spec.hole_fraction > 0:
        budget = spec.hole_fraction * n * n
        yy, xx = np.mgrid[0:n, 0:n]
        n_holes = int(rng.integers(2, 5))
        shares = rng.dirichlet(np.ones(n_holes)) * budget
        for i, share in enumerate(shares):
            r = max(2.0, np.sqrt(share / np.pi))
            if i == 0:
                # damage bite on an edge
                cy, cx = [(0, rng.uniform(r, n - r)), (n - 1, rng.uniform(r, n - r)),
                          (rng.uniform(r, n - r), 0), (rng.uniform(r, n - r), n - 1)][int(rng.integers(4))]
                r = np.sqrt(2 * share / np.pi)  # only half the disc lies inside
            else:
                margin = r + 20
                cy, cx = rng.uniform(margin, n - margin, size=2)
            mask[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = False
    return mask


def _glyphs(spec: SynthSpec, rng: np.random.Generator, region: np.ndarray) -> np.ndarray:
    n = spec.size
    if spec.text_coverage <= 0:
        return np.zeros((n, n), dtype=bool)
    target = spec.text_coverage * region.sum()
    img = Image.new("L", (n, n), 0)
    draw = ImageDraw.Draw(img)
    line_gap = int(rng.integers(26, 40))
    baselines = list(range(int(rng.integers(12, 30)), n - 12, line_gap))
    covered = 0
    strokes = 0
    while covered < target and strokes < 20000:
        base = baselines[int(rng.integers(len(baselines)))]
        x0 = rng.uniform(8, n - 24)
        y0 = base + rng.uniform(-8, 2)
        length = rng.uniform(5, 16)
        angle = rng.choice([0.0, np.pi / 2, rng.uniform(0, np.pi)])
        x1, y1 = x0 + length * np.cos(angle), y0 + length * np.sin(angle)
        draw.line([(x0, y0), (x1, y1)], fill=255, width=int(rng.integers(2, 4)))
        strokes += 1
        if strokes % 25 == 0:
            covered = int((np.asarray(img) > 0)[region].sum())
    return (np.asarray(img) > 0) & region


def generate(spec: SynthSpec) -> tuple[Raster, BinaryMask, BinaryMask, Raster]:
    """Return ``(raster, fragment_mask, text_mask, ground_truth)``.

    The raster has holes painted black and ink drawn over the text mask plus
    a faint one-pixel halo that the mask itself misses.
    """
    rng = np.random.default_rng(spec.seed)
    truth = _colorize(_texture(spec, rng), rng)
    region = _fragment_mask(spec, rng)
    text = _glyphs(spec, rng, region)

    img = truth.astype(np.float64)
    ink = np.array([44.0, 32.0, 26.0]) * rng.uniform(0.8, 1.2)
    halo = ndimage.binary_dilation(text) & ~text & region
    img[halo] = 0.5 * img[halo] + 0.5 * ink
    img[text] = ink
    img[~region] = 0.0
    raster = Raster(np.rint(img).astype(np.uint8), f"synth-{spec.seed}")
    return (raster, BinaryMask(region, "fragment"), BinaryMask(text, "text"),
            Raster(truth, f"synth-{spec.seed}-truth"))


def axis_peak_ratio(log_spec: np.ndarray, exclude: int = 3) -> float:
    """Mean log magnitude on the two frequency axes over the mean elsewhere.

    Bins within ``exclude`` of DC are ignored.
    """
    h, w = log_spec.shape
    cy, cx = h // 2, w // 2
    yy, xx = np.mgrid[0:h, 0:w]
    near_dc = (np.abs(yy - cy) <= exclude) & (np.abs(xx - cx) <= exclude)
    on_axis = ((yy == cy) | (xx == cx)) & ~near_dc
    off_axis = ~on_axis & ~near_dc
    return float(log_spec[on_axis].mean() / log_spec[off_axis].mean())


# -- corpus -----------------------------------------------------------------------

def load_corpus(path: str | Path | None = None) -> dict:
    """Read a corpus spec file; the bundled versioned corpus when ``path`` is None."""
    if path is None:
        text = resources.files("scrollmat").joinpath("data", DEFAULT_CORPUS).read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    corpus = json.loads(text)
    for entry in corpus["fragments"]:
        entry["spec"] = SynthSpec.from_dict(entry["spec"])
    return corpus


def materialize(corpus: dict, out_dir: str | Path) -> Path:
    """Write images, masks, ground truth and a JSON manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    image_set = corpus.get("set", "color")
    rows = []
    for entry in corpus["fragments"]:
        spec: SynthSpec = entry["spec"]
        fid = entry["fragment_id"]
        raster, region, text, truth = generate(spec)
        d = out / fid
        d.mkdir(exist_ok=True)
        save_image(raster, d / "image.png")
        save_mask(region, d / "fragment_mask.png")
        save_mask(text, d / "text_mask.png")
        save_image(truth, d / "truth.png")
        rows.append({
            "image_path": f"{fid}/image.png",
            "set": image_set,
            "plate_id": fid,
            "material": spec.material,
            "fragment_mask_path": f"{fid}/fragment_mask.png",
            "text_mask_path": f"{fid}/text_mask.png",
            "ground_truth_path": f"{fid}/truth.png",
        })
    manifest = out / "manifest.json"
    snapshot = {
        "version": corpus.get("version"),
        "set": image_set,
        "fragments": [
            {"fragment_id": e["fragment_id"], "spec": asdict(e["spec"])} for e in corpus["fragments"]
        ],
    }
    (out / "corpus.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n")
    manifest.write_text(json.dumps({"records": rows}, indent=2, sort_keys=True) + "\n")
    return manifest
