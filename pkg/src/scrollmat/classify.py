"""Leave-one-fragment-out nearest-neighbour classification and its metrics."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numba
import numpy as np

from . import MATERIALS
from .errors import DegenerateEvaluationError, DictionaryError
from .spectral import FeatureVector

SAMPLES_PER_FRAGMENT = 25


class Dictionary:
    """Immutable store of labelled vectors of one kind from one image set."""

    def __init__(self, entries: list[FeatureVector], samples_per_fragment: int = SAMPLES_PER_FRAGMENT):
        if not entries:
            raise DictionaryError("dictionary needs at least one entry")
        kinds = {e.kind for e in entries}
        if len(kinds) != 1:
            raise DictionaryError(f"mixed feature kinds: {sorted(kinds)}")
        sets = {e.set for e in entries}
        if len(sets) != 1:
            raise DictionaryError(f"mixed image sets: {sorted(sets)}")
        dims = {len(e.values) for e in entries}
        if len(dims) != 1:
            raise DictionaryError(f"inconsistent vector lengths: {sorted(dims)}")

        by_fragment: dict[str, list[int]] = {}
        for i, e in enumerate(entries):
            by_fragment.setdefault(e.fragment_id, []).append(i)
        for fid, pos in by_fragment.items():
            if len(pos) != samples_per_fragment:
                raise DictionaryError(
                    f"fragment {fid!r} has {len(pos)} vectors, expected {samples_per_fragment}"
                )
            if len({entries[i].sample_index for i in pos}) != len(pos):
                raise DictionaryError(f"fragment {fid!r} has duplicate sample indices")
            if len({entries[i].label for i in pos}) != 1:
                raise DictionaryError(f"fragment {fid!r} has inconsistent labels")

        self.entries = tuple(entries)
        self.kind = entries[0].kind
        self.set = entries[0].set
        self.samples_per_fragment = samples_per_fragment
        self.by_fragment = {k: tuple(v) for k, v in by_fragment.items()}
        self._positions = {k: np.array(v, dtype=np.int64) for k, v in by_fragment.items()}
        self.matrix = np.stack([e.values for e in entries])
        self.matrix.setflags(write=False)
        self.fragment_ids = np.array([e.fragment_id for e in entries], dtype=object)
        # position of each entry in (fragment_id, sample_index) order; used for tie-breaks
        order = sorted(range(len(entries)), key=lambda i: (entries[i].fragment_id, entries[i].sample_index))
        self.rank = np.empty(len(entries), dtype=np.int64)
        self.rank[order] = np.arange(len(entries))

    def __len__(self) -> int:
        return len(self.entries)

    def label_of(self, fragment_id: str) -> str | None:
        return self.entries[self.by_fragment[fragment_id][0]].label

    def fragments(self) -> list[str]:
        return sorted(self.by_fragment)


def build_dictionary(vectors: list[FeatureVector], samples_per_fragment: int = SAMPLES_PER_FRAGMENT) -> Dictionary:
    return Dictionary(list(vectors), samples_per_fragment)


@numba.njit(cache=True)
def _sq_dists(matrix, queries):
    out = np.empty((queries.shape[0], matrix.shape[0]))
    for a in range(queries.shape[0]):
        for i in range(matrix.shape[0]):
            acc = 0.0
            for k in range(matrix.shape[1]):
                t = matrix[i, k] - queries[a, k]
                acc += t * t
            out[a, i] = acc
    return out


def _nearest_rows(d: Dictionary, queries: np.ndarray, excluded_fragment: str | None) -> tuple[np.ndarray, np.ndarray]:
    """Entry index and squared distance of the nearest match for each query row."""
    dist2 = _sq_dists(d.matrix, np.ascontiguousarray(queries, dtype=np.float64))
    if excluded_fragment in d._positions:
        dist2[:, d._positions[excluded_fragment]] = np.inf
    best = dist2.min(axis=1)
    if not np.isfinite(best).all():
        raise DictionaryError("no candidate entries left after exclusion")
    # among equal distances, the smallest (fragment_id, sample_index) wins
    ranks = np.where(dist2 == best[:, None], d.rank[None, :], len(d))
    return ranks.argmin(axis=1), best


def nearest_label(
    query: FeatureVector, d: Dictionary, excluded_fragment: str | None = None
) -> tuple[FeatureVector, str | None, float]:
    """Closest entry by Euclidean distance, skipping ``excluded_fragment``.

    Returns ``(entry, label, distance)``.  Equal distances resolve to the
    smallest ``(fragment_id, sample_index)``.
    """
    if query.kind != d.kind:
        raise DictionaryError(f"query kind {query.kind!r} does not match dictionary kind {d.kind!r}")
    q = np.asarray(query.values)
    if q.shape != (d.matrix.shape[1],):
        raise DictionaryError(f"query length {q.shape} does not match dictionary width {d.matrix.shape[1]}")
    idx, best = _nearest_rows(d, q[None, :], excluded_fragment)
    e = d.entries[int(idx[0])]
    return e, e.label, float(np.sqrt(best[0]))


@dataclass(frozen=True)
class SampleMatch:
    sample_index: int
    matched_fragment_id: str
    matched_sample_index: int
    matched_label: str
    distance: float


@dataclass
class FragmentResult:
    fragment_id: str
    true_label: str | None
    predicted_label: str
    votes: dict[str, int]
    belief: float
    per_sample_matches: list[SampleMatch]

    @property
    def votes_parchment(self) -> int:
        return self.votes.get("parchment", 0)

    @property
    def votes_papyrus(self) -> int:
        return self.votes.get("papyrus", 0)

    def to_dict(self) -> dict:
        return {
            "fragment_id": self.fragment_id,
            "true_label": self.true_label,
            "predicted_label": self.predicted_label,
            "votes_parchment": self.votes_parchment,
            "votes_papyrus": self.votes_papyrus,
            "belief": self.belief,
            "per_sample_matches": [vars(m) for m in self.per_sample_matches],
        }


def classify_fragment(d: Dictionary, fragment_id: str) -> FragmentResult:
    """Vote over the fragment's own samples, matched with the fragment held out.

    An even sample count can tie; the label of the single closest match wins then.
    """
    if fragment_id not in d.by_fragment:
        raise DictionaryError(f"fragment {fragment_id!r} not in dictionary")
    positions = sorted(d.by_fragment[fragment_id], key=lambda i: d.entries[i].sample_index)
    idx, best = _nearest_rows(d, d.matrix[positions], fragment_id)
    matches = []
    for i, j, b in zip(positions, idx, best):
        m = d.entries[int(j)]
        matches.append(SampleMatch(d.entries[i].sample_index, m.fragment_id, m.sample_index, m.label, float(np.sqrt(b))))

    votes = Counter(m.matched_label for m in matches)
    ranked = sorted(votes.items(), key=lambda kv: -kv[1])
    if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
        closest = min(matches, key=lambda m: (m.distance, m.matched_fragment_id, m.matched_sample_index))
        predicted = closest.matched_label
    else:
        predicted = ranked[0][0]
    belief = 100.0 * votes[predicted] / len(matches)
    return FragmentResult(fragment_id, d.label_of(fragment_id), predicted,
                          {k: votes.get(k, 0) for k in MATERIALS}, belief, matches)


# -- metrics --------------------------------------------------------------------

def f1(precision: float, recall: float) -> float:
    """Balanced F-score; 0 when precision and recall are both 0."""
    if not (0.0 <= precision <= 1.0 and 0.0 <= recall <= 1.0):
        raise ValueError(f"precision/recall out of [0, 1]: {precision}, {recall}")
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def confusion_counts(true: list[str], pred: list[str], classes=MATERIALS) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    idx = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(true, pred):
        cm[idx[t], idx[p]] += 1
    return cm


def row_percentages(cm: np.ndarray) -> np.ndarray:
    rows = cm.sum(axis=1, keepdims=True).astype(np.float64)
    out = np.zeros(cm.shape)
    np.divide(100.0 * cm, rows, out=out, where=rows > 0)
    return out


def class_metrics(cm: np.ndarray, classes=MATERIALS, flags: list[str] | None = None) -> dict[str, dict[str, float]]:
    out = {}
    for i, c in enumerate(classes):
        tp = cm[i, i]
        predicted = cm[:, i].sum()
        actual = cm[i, :].sum()
        if predicted == 0:
            precision = 0.0
            if flags is not None:
                flags.append(f"precision undefined for {c} (never predicted); reported as 0")
        else:
            precision = tp / predicted
        recall = tp / actual if actual else 0.0
        if precision == 0 and recall == 0 and flags is not None:
            flags.append(f"F1 undefined for {c} (precision = recall = 0); reported as 0")
        out[c] = {"precision": float(precision), "recall": float(recall), "f1": f1(float(precision), float(recall))}
    return out


def confusion_from_percentages(rows_pct, class_counts) -> np.ndarray:
    """Recover integer confusion counts from row percentages and class sizes."""
    rows_pct = np.asarray(rows_pct, dtype=np.float64)
    counts = np.asarray(class_counts, dtype=np.float64)[:, None]
    return np.rint(rows_pct / 100.0 * counts).astype(np.int64)


def accuracy_percent(cm: np.ndarray) -> float:
    return 100.0 * float(np.trace(cm)) / float(cm.sum())


@dataclass
class EvaluationReport:
    kind: str
    set: str
    fragments: list[FragmentResult]
    fragment_counts: np.ndarray
    sample_counts: np.ndarray
    fragment_metrics: dict
    sample_metrics: dict
    overall_accuracy: float
    sample_accuracy: float
    flags: list[str] = field(default_factory=list)

    @property
    def fragment_confusion(self) -> np.ndarray:
        return row_percentages(self.fragment_counts)

    @property
    def sample_confusion(self) -> np.ndarray:
        return row_percentages(self.sample_counts)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "set": self.set,
            "classes": list(MATERIALS),
            "overall_accuracy": self.overall_accuracy,
            "sample_accuracy": self.sample_accuracy,
            "fragment_level": {
                "confusion_counts": self.fragment_counts.tolist(),
                "confusion_percent": self.fragment_confusion.tolist(),
                "metrics": self.fragment_metrics,
            },
            "sample_level": {
                "confusion_counts": self.sample_counts.tolist(),
                "confusion_percent": self.sample_confusion.tolist(),
                "metrics": self.sample_metrics,
                "definition": "each sample is predicted as the label of its nearest dictionary entry",
            },
            "flags": list(self.flags),
            "fragments": [f.to_dict() for f in self.fragments],
        }


def loo_evaluate(d: Dictionary) -> EvaluationReport:
    """Hold out each fragment in turn and score fragment- and sample-level predictions."""
    fids = d.fragments()
    labels = {d.label_of(f) for f in fids}
    if len(fids) < 2:
        raise DegenerateEvaluationError("need at least two fragments")
    if labels != set(MATERIALS):
        raise DegenerateEvaluationError(f"both materials must be present, got {sorted(map(str, labels))}")

    results = [classify_fragment(d, f) for f in fids]
    frag_cm = confusion_counts([r.true_label for r in results], [r.predicted_label for r in results])
    samp_true, samp_pred = [], []
    for r in results:
        for m in r.per_sample_matches:
            samp_true.append(r.true_label)
            samp_pred.append(m.matched_label)
    samp_cm = confusion_counts(samp_true, samp_pred)

    flags = ["sample level: a sample's prediction is the label of its nearest match"]
    return EvaluationReport(
        kind=d.kind,
        set=d.set,
        fragments=results,
        fragment_counts=frag_cm,
        sample_counts=samp_cm,
        fragment_metrics=class_metrics(frag_cm, flags=flags),
        sample_metrics=class_metrics(samp_cm, flags=flags),
        overall_accuracy=accuracy_percent(frag_cm),
        sample_accuracy=accuracy_percent(samp_cm),
        flags=flags,
    )
