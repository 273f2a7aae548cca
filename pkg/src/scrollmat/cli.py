"""``scrollmat`` command line: segment | fill | features | evaluate | synth | run."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import IMAGE_SETS, __version__
from .errors import ScrollmatError
from .pipeline import RunConfig, cmd_evaluate, cmd_features, cmd_fill, cmd_segment, run_all
from .spectral import KINDS
from .synth import load_corpus, materialize

log = logging.getLogger("scrollmat")


def _kinds(value: str) -> list[str]:
    if value == "all":
        return list(KINDS)
    aliases = {"mfv": "grid_mean", "sdfv": "grid_sd"}
    kinds = [aliases.get(k.strip().lower(), k.strip()) for k in value.split(",") if k.strip()]
    bad = [k for k in kinds if k not in KINDS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown feature kind(s) {bad}; choose from {', '.join(KINDS)} or 'all'")
    return kinds


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="scrollmat-out", help="run output directory")
    common.add_argument("--manifest", help="CSV or JSON manifest of plate images")
    common.add_argument("--grid-n", type=int, default=7, help="grid cells per side of the log spectrum")
    common.add_argument("--samples", type=int, default=5, help="samples per side of the sampling lattice")
    common.add_argument("--patch", type=int, default=256, help="sample patch size in pixels")
    common.add_argument("--rings", type=int, default=6)
    common.add_argument("--bins", type=int, default=19)
    common.add_argument("--inpaint-patch", type=int, default=9)
    common.add_argument("--kmeans-k", type=int, default=3)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--fv", type=_kinds, default=list(KINDS),
                        help="comma-separated feature kinds (grid_mean, grid_sd, ring_mean, ring_sd, weighted_bin) or 'all'")
    common.add_argument("--set", dest="image_set", choices=IMAGE_SETS, help="restrict to one image set")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="scrollmat", description="Parchment/papyrus classification from fragment images.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("segment", parents=[common], help="isolate fragments from plate images")
    sub.add_parser("fill", parents=[common], help="fill text and damage inside each fragment")
    sub.add_parser("features", parents=[common], help="sample patches and compute feature vectors")
    sub.add_parser("evaluate", parents=[common], help="leave-one-fragment-out evaluation and reports")
    sub.add_parser("run", parents=[common], help="all four stages in order")
    sp = sub.add_parser("synth", parents=[common], help="materialize a synthetic corpus")
    sp.add_argument("--corpus", help="corpus spec JSON (defaults to the bundled corpus)")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        out=args.out,
        manifest=args.manifest,
        grid_n=args.grid_n,
        samples_per_side=args.samples,
        patch=args.patch,
        rings=args.rings,
        bins=args.bins,
        inpaint_patch=args.inpaint_patch,
        kmeans_k=args.kmeans_k,
        seed=args.seed,
        fv=args.fv,
        image_set=args.image_set,
        workers=args.workers,
    )


def _run(args: argparse.Namespace) -> dict:
    if args.command == "synth":
        manifest = materialize(load_corpus(args.corpus), args.out)
        return {"manifest": str(manifest)}
    cfg = config_from_args(args)
    if args.command == "segment":
        return {"fragments": len(cmd_segment(cfg))}
    if args.command == "fill":
        reports = cmd_fill(cfg)
        return {"filled": sum(r["status"] == "ok" for r in reports),
                "failed": sum(r["status"] != "ok" for r in reports)}
    if args.command == "features":
        res = cmd_features(cfg)
        return {"records": res["records"], "skipped": len(res["skipped"])}
    reports = cmd_evaluate(cfg) if args.command == "evaluate" else run_all(cfg)
    print((Path(cfg.out) / "evaluate" / "report.txt").read_text(encoding="utf-8"))
    return {f"{r.set}/{r.kind}": round(r.overall_accuracy, 1) for r in reports}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        summary = _run(args)
    except (ScrollmatError, ValueError, OSError) as exc:
        err = exc.to_dict() if isinstance(exc, ScrollmatError) else {"error": type(exc).__name__, "message": str(exc)}
        err["command"] = args.command
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 1
    log.info("%s done: %s", args.command, json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
