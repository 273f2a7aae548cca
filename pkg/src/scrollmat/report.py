"""Plain-text tables for evaluation reports."""
from __future__ import annotations

from . import IMAGE_SETS, MATERIALS
from .classify import EvaluationReport

KIND_TITLES = {
    "grid_mean": "Mean Feature Vector (MFV)",
    "grid_sd": "Standard Deviation Feature Vector (SDFV)",
    "ring_mean": "Mean Concentric Ring Feature Vector",
    "ring_sd": "Standard Deviation Concentric Ring Feature Vector",
    "weighted_bin": "Weighted Bin Feature Vector",
}
KIND_SHORT = {
    "grid_mean": "MFV",
    "grid_sd": "SDFV",
    "ring_mean": "Ring-mean",
    "ring_sd": "Ring-SD",
    "weighted_bin": "Weighted-bin",
}
SET_TITLES = {"color": "Color", "multispectral": "Multispectral"}


def _rule(width: int, ch: str = "=") -> str:
    return ch * width


def _ordered_sets(reports: list[EvaluationReport]) -> list[str]:
    present = {r.set for r in reports}
    return [s for s in IMAGE_SETS if s in present] + sorted(present - set(IMAGE_SETS))


def render_overall(reports: list[EvaluationReport]) -> str:
    kinds = [k for k in KIND_SHORT if any(r.kind == k for r in reports)]
    by = {(r.set, r.kind): r for r in reports}
    head = f"{'Image type':<16}" + "".join(f"{KIND_SHORT[k]:>14}" for k in kinds)
    lines = ["Classification Success (%)", _rule(len(head)), head, _rule(len(head))]
    for s in _ordered_sets(reports):
        cells = []
        for k in kinds:
            r = by.get((s, k))
            cells.append(f"{r.overall_accuracy:>14.1f}" if r else f"{'-':>14}")
        lines.append(f"{SET_TITLES.get(s, s):<16}" + "".join(cells))
    lines.append(_rule(len(head), "-"))
    return "\n".join(lines)


def render_confusion(reports: list[EvaluationReport], level: str = "fragment") -> str:
    """Row-percentage confusion matrices, one block per image set."""
    kind = reports[0].kind
    head = f"{'Image type':<16}{'True class':<12}{'Parchment':>12}{'Papyrus':>12}"
    title = f"Confusion Matrix (%) for the {KIND_SHORT[kind]}"
    if level == "sample":
        title += " (sample level)"
    lines = [title, _rule(len(head)), head, _rule(len(head))]
    for r in sorted(reports, key=lambda r: _ordered_sets(reports).index(r.set)):
        cm = r.fragment_confusion if level == "fragment" else r.sample_confusion
        for i, c in enumerate(MATERIALS):
            name = SET_TITLES.get(r.set, r.set) if i == 0 else ""
            lines.append(f"{name:<16}{c.capitalize():<12}{cm[i, 0]:>12.1f}{cm[i, 1]:>12.1f}")
        lines.append(_rule(len(head), "-"))
    return "\n".join(lines)


def render_prf(reports: list[EvaluationReport], level: str = "fragment") -> str:
    kind = reports[0].kind
    head = f"{'Image type':<16}{'Material':<12}{'Precision':>11}{'Recall':>9}{'F-score':>10}"
    lines = [
        f"Precision, Recall and F-score at the {level.capitalize()} Level",
        _rule(len(head)),
        KIND_TITLES[kind],
        head,
        _rule(len(head)),
    ]
    for r in sorted(reports, key=lambda r: _ordered_sets(reports).index(r.set)):
        metrics = r.fragment_metrics if level == "fragment" else r.sample_metrics
        for i, c in enumerate(MATERIALS):
            m = metrics[c]
            name = SET_TITLES.get(r.set, r.set) if i == 0 else ""
            lines.append(
                f"{name:<16}{c.capitalize():<12}{m['precision']:>11.2f}{m['recall']:>9.2f}{m['f1']:>10.2f}"
            )
        lines.append(_rule(len(head), "-"))
    return "\n".join(lines)


def render_beliefs(report: EvaluationReport) -> str:
    lines = [f"Per-fragment votes: {KIND_SHORT[report.kind]} / {SET_TITLES.get(report.set, report.set)}"]
    for f in report.fragments:
        mark = "ok " if f.predicted_label == f.true_label else "ERR"
        lines.append(
            f"  {mark} {f.fragment_id:<20} true={f.true_label:<10} pred={f.predicted_label:<10}"
            f" parchment={f.votes_parchment:>3} papyrus={f.votes_papyrus:>3} belief={f.belief:5.1f}%"
        )
    return "\n".join(lines)


def render_all(reports: list[EvaluationReport]) -> str:
    parts = [render_overall(reports)]
    for kind in KIND_SHORT:
        group = [r for r in reports if r.kind == kind]
        if not group:
            continue
        parts.append(render_confusion(group))
        parts.append(render_prf(group, "fragment"))
        parts.append(render_prf(group, "sample"))
    for r in reports:
        parts.append(render_beliefs(r))
    notes = sorted({flag for r in reports for flag in r.flags})
    if notes:
        parts.append("Notes:\n" + "\n".join(f"  - {n}" for n in notes))
    return "\n\n".join(parts) + "\n"
