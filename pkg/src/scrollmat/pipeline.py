"""Disk-backed pipeline stages: segment -> fill -> features -> evaluate.

Every stage writes into its own directory under the run's output root along
with a ``config.json`` snapshot of the settings that produced it.  Outputs are
deterministic, so re-running a stage on unchanged inputs rewrites identical
bytes.
"""
from __future__ import annotations

import csv
import json
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from scipy import ndimage

from . import IMAGE_SETS, MATERIALS
from .classify import build_dictionary, loo_evaluate
from .errors import FillError, FragmentTooSmallError, ManifestError, ScrollmatError
from .imaging import (
    BinaryMask,
    dilate_mask,
    load_image,
    load_mask,
    save_image,
    save_mask,
    union_masks,
)
from .inpaint import FillJob, FillStats, fill_regions, ground_truth_mismatch, residual_check
from .report import render_all
from .segmentation import (
    DEFAULT_MIN_AREA,
    FragmentRecord,
    crop_to_mask,
    extract_patches,
    kmeans_segment,
    largest_inscribed_rectangle,
    sample_positions,
)
from .spectral import (
    KINDS,
    FeatureVector,
    SpectralConfig,
    featurize_patch,
    read_feature_store,
    write_feature_store,
)

log = logging.getLogger(__name__)

FEATURE_STORE = "features.jsonl"


@dataclass
class RunConfig:
    out: str = "scrollmat-out"
    manifest: str | None = None
    grid_n: int = 7
    samples_per_side: int = 5
    patch: int = 256
    rings: int = 6
    bins: int = 19
    inpaint_patch: int = 9
    kmeans_k: int = 3
    seed: int = 0
    fv: list[str] = field(default_factory=lambda: list(KINDS))
    image_set: str | None = None
    workers: int = 1
    min_area: int = DEFAULT_MIN_AREA
    residual_threshold: float = 0.1

    def __post_init__(self):
        for name in ("grid_n", "samples_per_side", "patch", "rings", "bins", "inpaint_patch", "kmeans_k", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.patch < self.grid_n:
            raise ValueError("patch must be >= grid_n")
        unknown = set(self.fv) - set(KINDS)
        if unknown:
            raise ValueError(f"unknown feature kinds {sorted(unknown)}; choose from {list(KINDS)}")
        if self.image_set is not None and self.image_set not in IMAGE_SETS:
            raise ValueError(f"unknown image set {self.image_set!r}")

    @property
    def samples(self) -> int:
        return self.samples_per_side ** 2

    def spectral(self) -> SpectralConfig:
        return SpectralConfig(self.grid_n, self.rings, self.bins, self.patch)

    def snapshot(self) -> dict:
        # output location and worker count do not influence results
        d = asdict(self)
        d.pop("out")
        d.pop("workers")
        return d


@dataclass(frozen=True)
class ManifestRecord:
    row: int
    image_path: Path
    set: str
    plate_id: str
    material: str
    fragment_mask_path: Path | None = None
    text_mask_path: Path | None = None
    ground_truth_path: Path | None = None


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _safe_name(s: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", s)


def load_manifest(path: str | Path) -> list[ManifestRecord]:
    """Read a CSV or JSON manifest; relative paths resolve against its directory."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest {path} not found")
    base = path.parent
    if path.suffix.lower() == ".json":
        data = json.loads(path.read_text(encoding="utf-8"))
        rows = data["records"] if isinstance(data, dict) else data
    elif path.suffix.lower() in (".csv", ".tsv"):
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh, delimiter="\t" if path.suffix.lower() == ".tsv" else ","))
    else:
        raise ManifestError(f"{path}: manifest must be .json or .csv")

    def opt(row, key):
        v = row.get(key)
        return base / v if v else None

    out = []
    seen = set()
    for i, row in enumerate(rows):
        where = f"{path.name} row {i} (plate {row.get('plate_id')!r})"
        for key in ("image_path", "set", "plate_id", "material"):
            if not row.get(key):
                raise ManifestError(f"{where}: missing {key}")
        if row["set"] not in IMAGE_SETS:
            raise ManifestError(f"{where}: set must be one of {IMAGE_SETS}")
        if row["material"] not in MATERIALS:
            raise ManifestError(f"{where}: material must be one of {MATERIALS}")
        key = (row["set"], row["plate_id"])
        if key in seen:
            raise ManifestError(f"{where}: duplicate plate_id within set {row['set']!r}")
        seen.add(key)
        out.append(ManifestRecord(
            row=i,
            image_path=base / row["image_path"],
            set=row["set"],
            plate_id=str(row["plate_id"]),
            material=row["material"],
            fragment_mask_path=opt(row, "fragment_mask_path"),
            text_mask_path=opt(row, "text_mask_path"),
            ground_truth_path=opt(row, "ground_truth_path"),
        ))
    return out


def _stage_dir(cfg: RunConfig, name: str) -> Path:
    d = Path(cfg.out) / name
    d.mkdir(parents=True, exist_ok=True)
    _dump(d / "config.json", cfg.snapshot())
    return d


def _map(cfg: RunConfig, fn, items: list) -> list:
    if cfg.workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


# -- segment ----------------------------------------------------------------------

def _segment_record(args) -> list[dict]:
    rec, cfg, out_dir = args
    where = f"manifest row {rec.row} (plate {rec.plate_id!r})"
    for p in (rec.image_path, rec.fragment_mask_path, rec.text_mask_path, rec.ground_truth_path):
        if p is not None and not p.is_file():
            raise ManifestError(f"{where}: file not found: {p}")
    raster = load_image(rec.image_path, rec.plate_id)
    text = load_mask(rec.text_mask_path, "text") if rec.text_mask_path else None
    truth = load_image(rec.ground_truth_path) if rec.ground_truth_path else None
    for name, extra in (("text mask", text), ("ground truth", truth)):
        if extra is not None and extra.shape != raster.shape:
            raise ManifestError(f"{where}: {name} is {extra.shape}, image is {raster.shape}")

    if rec.fragment_mask_path:
        log.info("%s: fragment mask supplied, skipping k-means", rec.plate_id)
        region = load_mask(rec.fragment_mask_path, "fragment")
        if region.shape != raster.shape:
            raise ManifestError(f"{where}: fragment mask is {region.shape}, image is {raster.shape}")
        masks = [(rec.plate_id, region)]
    else:
        log.info("%s: running k-means (k=%d, seed=%d)", rec.plate_id, cfg.kmeans_k, cfg.seed)
        found = kmeans_segment(raster, cfg.kmeans_k, cfg.seed, cfg.min_area)
        masks = [(f"{rec.plate_id}-{i + 1}", m) for i, m in enumerate(found)]

    entries = []
    for fid, mask in masks:
        if not mask.bits.any():
            continue
        crop, region, box = crop_to_mask(raster, mask)
        d = out_dir / rec.set / _safe_name(fid)
        d.mkdir(parents=True, exist_ok=True)
        save_image(crop, d / "raster.png")
        save_mask(region, d / "region.png")
        meta = {
            "fragment_id": fid,
            "plate_id": rec.plate_id,
            "set": rec.set,
            "material": rec.material,
            "bbox": box.as_dict(),
            "area": region.area,
            "source": "mask" if rec.fragment_mask_path else "kmeans",
            "has_text_mask": text is not None,
            "has_ground_truth": truth is not None,
        }
        if text is not None:
            save_mask(text.crop(box.x, box.y, box.w, box.h), d / "text.png")
        if truth is not None:
            save_image(truth.crop(box.x, box.y, box.w, box.h), d / "truth.png")
        _dump(d / "meta.json", meta)
        entries.append({"fragment_id": fid, "set": rec.set, "material": rec.material,
                        "path": f"{rec.set}/{_safe_name(fid)}"})
    return entries


def cmd_segment(cfg: RunConfig) -> list[dict]:
    if not cfg.manifest:
        raise ManifestError("segment needs --manifest")
    records = load_manifest(cfg.manifest)
    if cfg.image_set:
        records = [r for r in records if r.set == cfg.image_set]
    out_dir = _stage_dir(cfg, "segment")
    per_record = _map(cfg, _segment_record, [(r, cfg, out_dir) for r in records])
    index = [e for entries in per_record for e in entries]
    if not index:
        raise ScrollmatError("segmentation found zero fragments")
    _dump(out_dir / "index.json", {"fragments": index})
    log.info("segment: %d fragments from %d manifest rows", len(index), len(records))
    return index


def _read_index(cfg: RunConfig, stage: str) -> list[dict]:
    path = Path(cfg.out) / stage / "index.json"
    if not path.is_file():
        raise ScrollmatError(f"{path} missing; run the {stage} stage first")
    index = json.loads(path.read_text(encoding="utf-8"))["fragments"]
    if cfg.image_set:
        index = [e for e in index if e["set"] == cfg.image_set]
    return index


# -- fill ---------------------------------------------------------------------------

def fill_masks(region: BinaryMask, text: BinaryMask | None) -> tuple[BinaryMask, BinaryMask, BinaryMask]:
    """Return ``(fill, source, outline)`` for one fragment.

    The outline is the region with interior gaps closed; the fill region is the
    dilated text plus those gaps, clipped to the outline.
    """
    outline = ndimage.binary_fill_holes(region.bits)
    gaps = BinaryMask(outline & ~region.bits, "fill")
    fill = gaps if text is None else union_masks(dilate_mask(text), gaps)
    fill = BinaryMask(fill.bits & outline, "fill")
    source = BinaryMask(region.bits & ~fill.bits, "fragment")
    return fill, source, BinaryMask(outline, "fragment")


def _fill_one(args) -> dict:
    entry, cfg, seg_dir, out_dir = args
    src = seg_dir / entry["path"]
    dst = out_dir / entry["path"]
    dst.mkdir(parents=True, exist_ok=True)
    raster = load_image(src / "raster.png", entry["fragment_id"])
    region = load_mask(src / "region.png", "fragment")
    text = load_mask(src / "text.png", "text") if (src / "text.png").is_file() else None
    fill, source, outline = fill_masks(region, text)
    save_mask(fill, dst / "fill_region.png")
    save_mask(outline, dst / "sample_region.png")

    report = {"fragment_id": entry["fragment_id"], "fill_pixels": fill.area}
    stats = FillStats()
    try:
        filled = fill_regions(FillJob(raster, fill, source, cfg.inpaint_patch), stats)
    except FillError as exc:
        log.warning("%s: fill failed: %s", entry["fragment_id"], exc)
        report.update(status="failed", error=exc.to_dict())
        _dump(dst / "report.json", report)
        return report
    save_image(filled, dst / "filled.png")
    report.update(
        status="ok",
        iterations=stats.iterations,
        mean_patch_ssd=stats.mean_ssd,
        residual=residual_check(filled, fill, cfg.residual_threshold),
    )
    if (src / "truth.png").is_file():
        truth = load_image(src / "truth.png")
        report["ground_truth_mismatch"] = ground_truth_mismatch(filled, truth, fill)
    _dump(dst / "report.json", report)
    return report


def cmd_fill(cfg: RunConfig) -> list[dict]:
    index = _read_index(cfg, "segment")
    seg_dir = Path(cfg.out) / "segment"
    out_dir = _stage_dir(cfg, "fill")
    reports = _map(cfg, _fill_one, [(e, cfg, seg_dir, out_dir) for e in index])
    filled_index = []
    for e, r in zip(index, reports):
        filled_index.append(dict(e, status=r["status"]))
    _dump(out_dir / "index.json", {"fragments": filled_index})
    n_bad = sum(r["status"] != "ok" for r in reports)
    log.info("fill: %d fragments, %d failed", len(reports), n_bad)
    return reports


# -- features -------------------------------------------------------------------------

def fragment_vectors(fragment: FragmentRecord, sample_region: BinaryMask, cfg: RunConfig):
    """Inscribed rectangle -> sample lattice -> patches -> feature vectors."""
    area = largest_inscribed_rectangle(sample_region)
    positions = sample_positions(area, cfg.samples_per_side, cfg.patch)
    patches = extract_patches(fragment, positions, cfg.patch)
    scfg = cfg.spectral()
    vectors = []
    for p in patches:
        fv = featurize_patch(p, scfg)
        vectors.extend(fv[k] for k in KINDS)
    return area, vectors


def _features_one(args):
    entry, cfg, fill_dir = args
    d = fill_dir / entry["path"]
    raster = load_image(d / "filled.png", entry["fragment_id"])
    sample_region = load_mask(d / "sample_region.png", "fragment")
    frag = FragmentRecord(entry["fragment_id"], raster, sample_region, entry["material"], entry["set"])
    try:
        area, vectors = fragment_vectors(frag, sample_region, cfg)
    except FragmentTooSmallError as exc:
        return entry, None, str(exc)
    return entry, (area.as_dict(), [v.to_record() for v in vectors]), None


def cmd_features(cfg: RunConfig) -> dict:
    index = _read_index(cfg, "fill")
    fill_dir = Path(cfg.out) / "fill"
    out_dir = _stage_dir(cfg, "features")
    skipped = []
    usable = []
    for e in index:
        if e.get("status") != "ok":
            skipped.append({"fragment_id": e["fragment_id"], "set": e["set"], "reason": "fill failed"})
        else:
            usable.append(e)
    results = _map(cfg, _features_one, [(e, cfg, fill_dir) for e in usable])

    records = []
    areas = {}
    for entry, payload, err in results:
        if payload is None:
            log.warning("%s: skipped: %s", entry["fragment_id"], err)
            skipped.append({"fragment_id": entry["fragment_id"], "set": entry["set"], "reason": err})
            continue
        area, recs = payload
        areas[f"{entry['set']}/{entry['fragment_id']}"] = area
        records.extend(recs)

    kind_order = {k: i for i, k in enumerate(KINDS)}
    records.sort(key=lambda r: (r["set"], r["fragment_id"], r["sample_index"], kind_order[r["kind"]]))
    n = write_feature_store(out_dir / FEATURE_STORE, (FeatureVector.from_record(r) for r in records))
    skipped.sort(key=lambda s: (s["set"], s["fragment_id"]))
    _dump(out_dir / "skipped.json", {"skipped": skipped})
    _dump(out_dir / "sample_areas.json", areas)
    log.info("features: %d records, %d fragments skipped", n, len(skipped))
    return {"records": n, "skipped": skipped}


# -- evaluate ---------------------------------------------------------------------------

def cmd_evaluate(cfg: RunConfig) -> list:
    store = Path(cfg.out) / "features" / FEATURE_STORE
    if not store.is_file():
        raise ScrollmatError(f"{store} missing; run the features stage first")
    vectors = read_feature_store(store, image_set=cfg.image_set)
    out_dir = _stage_dir(cfg, "evaluate")
    sets = sorted({v.set for v in vectors}, key=lambda s: IMAGE_SETS.index(s) if s in IMAGE_SETS else 99)
    missing = [f"{s}/{k}" for s in sets for k in cfg.fv if not any(v.set == s and v.kind == k for v in vectors)]
    if not vectors or missing:
        raise ScrollmatError(f"feature store lacks kinds: {missing or cfg.fv}")

    reports = []
    for s in sets:
        for k in cfg.fv:
            d = build_dictionary([v for v in vectors if v.set == s and v.kind == k], cfg.samples)
            rep = loo_evaluate(d)
            reports.append(rep)
            sd = out_dir / s
            sd.mkdir(exist_ok=True)
            _dump(sd / f"{k}.json", rep.to_dict())
    (out_dir / "report.txt").write_text(render_all(reports), encoding="utf-8")
    _dump(out_dir / "summary.json", {
        f"{r.set}/{r.kind}": {
            "overall_accuracy": r.overall_accuracy,
            "sample_accuracy": r.sample_accuracy,
            "fragment_f1": {c: r.fragment_metrics[c]["f1"] for c in MATERIALS},
            "sample_f1": {c: r.sample_metrics[c]["f1"] for c in MATERIALS},
        }
        for r in reports
    })
    return reports


def run_all(cfg: RunConfig) -> list:
    cmd_segment(cfg)
    cmd_fill(cfg)
    cmd_features(cfg)
    return cmd_evaluate(cfg)
