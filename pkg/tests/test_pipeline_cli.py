import csv
import json
import logging

import numpy as np
import pytest

from scrollmat.cli import main
from scrollmat.errors import ManifestError
from scrollmat.imaging import BinaryMask, Raster, load_image, save_image, save_mask
from scrollmat.pipeline import RunConfig, cmd_evaluate, cmd_features, cmd_fill, cmd_segment, fill_masks, load_manifest

PALETTE = np.array([[200, 30, 30], [30, 200, 30], [30, 30, 200], [220, 220, 40],
                    [40, 220, 220], [220, 40, 220], [120, 80, 20], [10, 10, 10]], np.uint8)


def stripe_image(h, w):
    return np.broadcast_to(PALETTE[np.arange(w) % 8], (h, w, 3)).copy()


def write_fragment(root, name, px, text=None, region=None, truth=None):
    d = root / name
    d.mkdir(parents=True, exist_ok=True)
    save_image(Raster(px), d / "image.png")
    row = {"image_path": f"{name}/image.png", "plate_id": name, "set": "color"}
    if region is not None:
        save_mask(BinaryMask(region, "fragment"), d / "mask.png")
        row["fragment_mask_path"] = f"{name}/mask.png"
    if text is not None:
        save_mask(BinaryMask(text, "text"), d / "text.png")
        row["text_mask_path"] = f"{name}/text.png"
    if truth is not None:
        save_image(Raster(truth), d / "truth.png")
        row["ground_truth_path"] = f"{name}/truth.png"
    return row


def write_manifest(root, rows, fmt="json"):
    if fmt == "json":
        p = root / "manifest.json"
        p.write_text(json.dumps({"records": rows}))
    else:
        p = root / "manifest.csv"
        keys = sorted({k for r in rows for k in r})
        with open(p, "w", newline="") as fh:
            w = csv.DictWriter(fh, keys)
            w.writeheader()
            w.writerows(rows)
    return p


@pytest.fixture
def two_fragments(tmp_path):
    """A constant parchment fragment and a striped papyrus fragment with text."""
    full = np.ones((300, 300), bool)
    text = np.zeros((300, 300), bool)
    text[100, 40:80] = True
    text[150:170, 200] = True
    truth = stripe_image(300, 300)
    px = truth.copy()
    px[text] = (30, 20, 20)
    rows = [
        dict(write_fragment(tmp_path, "plain", np.full((300, 300, 3), (190, 160, 120), np.uint8), region=full),
             material="parchment"),
        dict(write_fragment(tmp_path, "stripe", px, text=text, region=full, truth=truth), material="papyrus"),
    ]
    return tmp_path, rows


def cfg_for(tmp_path, manifest, **kw):
    return RunConfig(out=str(tmp_path / "run"), manifest=str(manifest), **kw)


def test_three_square_plate(tmp_path):
    px = np.zeros((400, 400, 3), np.uint8)
    for y, x in [(10, 10), (10, 200), (250, 120)]:
        px[y:y + 100, x:x + 100] = (140, 100, 60)
    rows = [dict(write_fragment(tmp_path, "plate1", px), material="papyrus")]
    idx = cmd_segment(cfg_for(tmp_path, write_manifest(tmp_path, rows), kmeans_k=2))
    assert len(idx) == 3
    dirs = [p for p in (tmp_path / "run" / "segment" / "color").iterdir() if p.is_dir()]
    assert len(dirs) == 3
    for d in dirs:
        assert load_image(d / "raster.png").shape == (100, 100)


def test_mask_skips_kmeans(two_fragments, caplog):
    root, rows = two_fragments
    with caplog.at_level(logging.INFO, logger="scrollmat"):
        cmd_segment(cfg_for(root, write_manifest(root, rows)))
    assert "fragment mask supplied, skipping k-means" in caplog.text
    assert "running k-means" not in caplog.text


def test_missing_image_names_row(two_fragments):
    root, rows = two_fragments
    rows[1]["image_path"] = "nowhere/image.png"
    with pytest.raises(ManifestError, match="row 1"):
        cmd_segment(cfg_for(root, write_manifest(root, rows)))


def test_manifest_validation(tmp_path):
    base = {"image_path": "a.png", "plate_id": "p", "set": "color", "material": "papyrus"}
    for bad in ({"material": "vellum"}, {"set": "infrared"}, {"plate_id": ""}):
        p = write_manifest(tmp_path, [dict(base, **bad)])
        with pytest.raises(ManifestError):
            load_manifest(p)
    p = write_manifest(tmp_path, [base, dict(base)])
    with pytest.raises(ManifestError, match="duplicate"):
        load_manifest(p)


def test_csv_manifest(two_fragments):
    root, rows = two_fragments
    recs = load_manifest(write_manifest(root, rows, "csv"))
    assert [r.plate_id for r in recs] == ["plain", "stripe"]
    assert recs[0].text_mask_path is None and recs[1].text_mask_path is not None


def test_fill_masks_closes_interior_gaps():
    region = np.ones((20, 20), bool)
    region[8:11, 8:11] = False  # interior hole
    region[0:3, 0:3] = False    # edge bite, stays outside
    fill, source, outline = fill_masks(BinaryMask(region, "fragment"), None)
    assert fill.bits.sum() == 9 and fill.bits[8:11, 8:11].all()
    assert not outline.bits[0:3, 0:3].any()
    assert not (fill.bits & source.bits).any()


def test_fill_stage(two_fragments):
    root, rows = two_fragments
    cfg = cfg_for(root, write_manifest(root, rows))
    cmd_segment(cfg)
    reports = {r["fragment_id"]: r for r in cmd_fill(cfg)}
    run = root / "run" / "fill" / "color"
    # constant fragment with no masks is copied through untouched
    assert reports["plain"]["fill_pixels"] == 0
    assert np.array_equal(load_image(run / "plain" / "filled.png").pixels, load_image(root / "plain" / "image.png").pixels)
    # striped fragment: text is replaced by the true stripes
    assert reports["stripe"]["status"] == "ok"
    assert reports["stripe"]["ground_truth_mismatch"] == 0.0
    assert reports["stripe"]["residual"]["fill_pixels"] == reports["stripe"]["fill_pixels"]
    assert (root / "run" / "fill" / "config.json").is_file()


def test_features_and_evaluate(two_fragments, tmp_path):
    root, rows = two_fragments
    small = np.full((200, 200, 3), (100, 90, 80), np.uint8)
    rows.append(dict(write_fragment(root, "tiny", small, region=np.ones((200, 200), bool)), material="parchment"))
    cfg = cfg_for(root, write_manifest(root, rows))
    cmd_segment(cfg)
    cmd_fill(cfg)
    res = cmd_features(cfg)
    assert res["records"] == 2 * 125
    assert [s["fragment_id"] for s in res["skipped"]] == ["tiny"]
    skipped = json.loads((root / "run" / "features" / "skipped.json").read_text())
    assert skipped["skipped"][0]["fragment_id"] == "tiny"

    lines = (root / "run" / "features" / "features.jsonl").read_text().splitlines()
    assert sum(json.loads(line)["fragment_id"] == "stripe" for line in lines) == 125

    reports = cmd_evaluate(cfg)
    assert len(reports) == 5
    out = root / "run" / "evaluate"
    assert (out / "report.txt").is_file() and (out / "color" / "grid_mean.json").is_file()
    for r in reports:
        for m in list(r.fragment_metrics.values()) + list(r.sample_metrics.values()):
            p, rc = m["precision"], m["recall"]
            expect = 0.0 if p + rc == 0 else 2 * p * rc / (p + rc)
            assert abs(m["f1"] - expect) < 0.005


def test_stages_idempotent(two_fragments):
    root, rows = two_fragments
    cfg = cfg_for(root, write_manifest(root, rows))
    outputs = []
    for _ in range(2):
        cmd_segment(cfg)
        cmd_fill(cfg)
        cmd_features(cfg)
        run = root / "run"
        outputs.append({str(p.relative_to(run)): p.read_bytes() for p in sorted(run.rglob("*")) if p.is_file()})
    assert outputs[0] == outputs[1]


def test_evaluate_missing_kinds(two_fragments):
    root, rows = two_fragments
    cfg = cfg_for(root, write_manifest(root, rows))
    cmd_segment(cfg)
    cmd_fill(cfg)
    cmd_features(RunConfig(out=cfg.out, manifest=cfg.manifest, fv=["grid_mean"]))
    store = root / "run" / "features" / "features.jsonl"
    kept = [line for line in store.read_text().splitlines() if '"kind": "grid_mean"' in line]
    store.write_text("\n".join(kept) + "\n")
    with pytest.raises(Exception, match="grid_sd"):
        cmd_evaluate(cfg)


def test_cli_run_and_errors(two_fragments, capsys):
    root, rows = two_fragments
    manifest = write_manifest(root, rows)
    assert main(["run", "--manifest", str(manifest), "--out", str(root / "cli"), "--fv", "mfv,sdfv"]) == 0
    out = capsys.readouterr().out
    assert "MFV" in out and "SDFV" in out
    assert sorted(p.name for p in (root / "cli" / "evaluate" / "color").iterdir()) == ["grid_mean.json", "grid_sd.json"]

    rows[0]["image_path"] = "gone.png"
    bad = write_manifest(root, rows)
    assert main(["segment", "--manifest", str(bad), "--out", str(root / "cli2")]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["command"] == "segment" and "row 0" in err["message"]


def test_cli_bad_fv():
    with pytest.raises(SystemExit):
        main(["features", "--fv", "bogus"])


def test_cli_synth(tmp_path, monkeypatch):
    import scrollmat.synth as synth

    corpus = synth.load_corpus()
    corpus["fragments"] = corpus["fragments"][:2]
    path = tmp_path / "c.json"
    path.write_text(json.dumps({**corpus, "fragments": [
        {"fragment_id": e["fragment_id"], "spec": e["spec"].__dict__} for e in corpus["fragments"]]}))
    assert main(["synth", "--corpus", str(path), "--out", str(tmp_path / "corp")]) == 0
    recs = load_manifest(tmp_path / "corp" / "manifest.json")
    assert len(recs) == 2 and all(r.fragment_mask_path.is_file() for r in recs)
