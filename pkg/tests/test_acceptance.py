"""End-to-end acceptance checks; one pass/fail line per criterion is printed in the summary."""
import json
import random
import time

import numpy as np
import pytest

from oracles import brute_dft2, brute_rect_area, scan_nearest
from scrollmat.classify import (
    Dictionary,
    accuracy_percent,
    classify_fragment,
    confusion_from_percentages,
    f1,
    nearest_label,
)
from scrollmat.imaging import BinaryMask, Raster
from scrollmat.inpaint import FillJob, FillStats, fill_regions
from scrollmat.pipeline import RunConfig, run_all
from scrollmat.segmentation import SamplePatch, largest_inscribed_rectangle
from scrollmat.spectral import (
    KINDS,
    FeatureVector,
    band_edges,
    dft2,
    featurize_patch,
    log_spectrum,
    ring_features,
    ring_index,
    weighted_bin_features,
)
from scrollmat.synth import load_corpus, materialize


@pytest.fixture
def criterion(record_property):
    def mark(name):
        record_property("criterion", name)
        return lambda detail: record_property("detail", detail)
    return mark


def test_c1_dft_oracle(criterion):
    note = criterion("C1 dft oracle")
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    shapes = [(16, 16)] + [tuple(rng.integers(1, 17, 2)) for _ in range(199)]
    for h, w in shapes:
        m = rng.uniform(-1, 1, (h, w))
        got = dft2(m)
        ref = np.array(brute_dft2(m.tolist()))
        worst = max(worst, float(np.abs(got - ref).max() / max(np.abs(ref).max(), 1e-300)))
        v, u = np.mgrid[0:h, 0:w]
        assert np.abs(got - np.conj(got[(h - v) % h, (w - u) % w])).max() <= 1e-9 * max(1.0, np.abs(got).max())
        energy = float((m ** 2).sum())
        assert abs((np.abs(got) ** 2).sum() / m.size - energy) <= 1e-6 * energy
    elapsed = time.perf_counter() - t0
    note(f"max rel err {worst:.2e}")
    assert worst <= 1e-6
    assert elapsed < 10


def test_c2_rectangle_oracle(criterion):
    note = criterion("C2 rectangle oracle")
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    n = 0
    while n < 500:
        h, w = rng.integers(1, 21, 2)
        bits = rng.random((h, w)) < rng.uniform(0.3, 0.95)
        if not bits.any():
            continue
        r = largest_inscribed_rectangle(BinaryMask(bits, "fragment"))
        area, _ = brute_rect_area(bits.tolist())
        assert r.area == area
        assert bits[r.y:r.y + r.h, r.x:r.x + r.w].all()
        n += 1
    elapsed = time.perf_counter() - t0
    note(f"{n} masks")
    assert elapsed < 30


def test_c3_nearest_neighbour_oracle(criterion):
    note = criterion("C3 nearest-neighbour oracle")
    t0 = time.perf_counter()
    rnd = random.Random(3)
    rng = np.random.default_rng(3)
    queries = 0
    for trial in range(100):
        dim = (6, 19, 49)[trial % 3]
        n_frag = rnd.randint(2, 40)
        coarse = trial % 2 == 0  # coarse values force exact distance ties
        values = rng.integers(0, 3, (n_frag * 25, dim)).astype(float) if coarse else rng.random((n_frag * 25, dim))
        entries = [FeatureVector("grid_mean", values[i], f"frag{i // 25:02d}", i % 25,
                                 ("parchment", "papyrus")[(i // 25) % 2]) for i in range(n_frag * 25)]
        rnd.shuffle(entries)
        d = Dictionary(entries)
        plain = [(e.fragment_id, e.sample_index, e.values.tolist(), e.label) for e in entries]
        for q in rnd.sample(entries, 5):
            entry, label, _ = nearest_label(q, d, excluded_fragment=q.fragment_id)
            assert (entry.fragment_id, entry.sample_index, label) == scan_nearest(list(q.values), plain, q.fragment_id)
            queries += 1
        for fid in d.fragments():
            res = classify_fragment(d, fid)
            assert all(m.matched_fragment_id != fid for m in res.per_sample_matches)
            assert res.votes_parchment + res.votes_papyrus == 25
    elapsed = time.perf_counter() - t0
    note(f"{queries} oracle queries")
    assert elapsed < 10


def test_c4_metric_arithmetic(criterion):
    note = criterion("C4 metric arithmetic")
    assert abs(f1(1.0, 0.70) - 0.82) <= 0.005
    assert abs(f1(0.89, 0.80) - 0.84) <= 0.005
    color = accuracy_percent(confusion_from_percentages([[100, 0], [30, 70]], [23, 10]))
    multi = accuracy_percent(confusion_from_percentages([[100, 0], [10, 90]], [23, 10]))
    note(f"color {color:.1f}, multispectral {multi:.1f}")
    assert abs(color - 90.9) <= 0.1
    assert abs(multi - 97.0) <= 0.1


def test_c5_feature_contracts(criterion):
    note = criterion("C5 feature contracts")
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    for i in range(20):
        p = SamplePatch(rng.random((256, 256)) ** (i % 3 + 1), "f", i, "papyrus", "color", 0, 0)
        vecs = featurize_patch(p)
        assert [len(vecs[k].values) for k in KINDS] == [49, 49, 6, 6, 19]
        wb = vecs["weighted_bin"].values
        assert abs(wb.sum() - 1.0) <= 1e-9 and (wb >= 0).all()
        ls = log_spectrum(dft2(p.values))
        for stat in ("mean", "sd"):
            assert np.array_equal(ring_features(ls, 6, stat), ring_features(ls.T.copy(), 6, stat))
        s = dft2(rng.random((32, 32)))
        assert abs(weighted_bin_features(s).sum() - 1.0) <= 1e-9
    for n in range(1, 9):
        e = band_edges(256, n)
        cover = np.zeros((256, 256), np.int64)
        for a in range(n):
            for b in range(n):
                cover[e[a]:e[a + 1], e[b]:e[b + 1]] += 1
        assert (cover == 1).all()
    idx = ring_index(256, 256, 6)
    yy, xx = np.mgrid[0:256, 0:256]
    assert (idx[np.hypot(yy - 128, xx - 128) >= 128] == -1).all()
    elapsed = time.perf_counter() - t0
    note("lengths 49/49/6/6/19")
    assert elapsed < 20


def test_c6_inpaint_invariants(criterion):
    note = criterion("C6 inpaint invariants")
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    for _ in range(50):
        h, w = rng.integers(24, 48, 2)
        px = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
        hole = np.zeros((h, w), bool)
        for _ in range(rng.integers(1, 4)):
            y, x = rng.integers(0, h - 6), rng.integers(0, w - 6)
            hole[y:y + rng.integers(1, 7), x:x + rng.integers(1, 7)] = True
        size = int(rng.choice([3, 5, 9]))
        stats = FillStats()
        out = fill_regions(FillJob(Raster(px), BinaryMask(hole, "fill"), BinaryMask(~hole, "fragment"), size), stats)
        assert np.array_equal(out.pixels[~hole], px[~hole])
        trace = [int(hole.sum())] + stats.remaining_trace
        assert all(b < a for a, b in zip(trace, trace[1:])) and trace[-1] == 0
    const = np.full((40, 40, 3), (173, 121, 77), np.uint8)
    hole = np.zeros((40, 40), bool)
    hole[15:20, 18:23] = True
    damaged = const.copy()
    damaged[hole] = (0, 0, 0)
    out = fill_regions(FillJob(Raster(damaged), BinaryMask(hole, "fill"), BinaryMask(~hole, "fragment")))
    assert np.array_equal(out.pixels, const)
    elapsed = time.perf_counter() - t0
    note("50 random jobs + constant hole")
    assert elapsed < 60


@pytest.fixture(scope="session")
def pipeline_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    t0 = time.perf_counter()
    manifest = materialize(load_corpus(), root / "corpus")
    reports = run_all(RunConfig(out=str(root / "run_a"), manifest=str(manifest)))
    first = time.perf_counter() - t0
    # the second run uses a worker pool, so identical bytes also show worker-count independence
    run_all(RunConfig(out=str(root / "run_b"), manifest=str(manifest), workers=2))
    return root, reports, first


@pytest.mark.slow
def test_c7_end_to_end(criterion, pipeline_runs):
    note = criterion("C7 end-to-end synthetic benchmark")
    root, reports, elapsed = pipeline_runs
    acc = {r.kind: r.overall_accuracy for r in reports}
    note(", ".join(f"{k} {acc[k]:.1f}%" for k in KINDS) + f"; {elapsed:.0f}s")
    counts = {tuple(r.fragment_counts.sum(axis=1)) for r in reports}
    assert counts == {(23, 10)}
    assert acc["grid_mean"] >= 90.0
    assert acc["grid_sd"] >= 90.0
    assert acc["weighted_bin"] < acc["grid_mean"]
    assert elapsed < 15 * 60


@pytest.mark.slow
def test_c8_determinism(criterion, pipeline_runs):
    note = criterion("C8 determinism")
    root = pipeline_runs[0]
    a, b = root / "run_a", root / "run_b"
    compared = [a / "features" / "features.jsonl"] + sorted((a / "evaluate").rglob("*"))
    compared = [p for p in compared if p.is_file()]
    for p in compared:
        assert p.read_bytes() == (b / p.relative_to(a)).read_bytes(), p.relative_to(a)
    n = sum(1 for _ in open(a / "features" / "features.jsonl"))
    assert n == 33 * 125
    summary = json.loads((a / "evaluate" / "summary.json").read_text())
    assert set(summary) == {f"color/{k}" for k in KINDS}
    note(f"{len(compared)} files byte-identical, {n} feature records")
