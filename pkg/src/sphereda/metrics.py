"""Open-set evaluation: nearest-prototype predictions, OS*/UNK/OS/HOS and AUROC."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidConfig, SingleClass
from .sphere import UNKNOWN, classify_many

MODES = ("open-set", "closed-set", "universal")


@dataclass(frozen=True)
class PredictionRecord:
    true_label: int      # known class index or UNKNOWN
    predicted: int
    score: float         # distance to nearest prototype; higher means more unknown


def hos(os_star, unk):
    """Harmonic mean of known-class accuracy and unknown accuracy."""
    if os_star + unk == 0:
        return 0.0
    return 2.0 * os_star * unk / (os_star + unk)


def os_score(os_star, unk, num_known):
    """Accuracy averaged over the known classes plus the unknown class."""
    if num_known < 1:
        raise InvalidConfig("num_known must be >= 1")
    return (num_known * os_star + unk) / (num_known + 1)


def auroc_scores(known_scores, unknown_scores):
    """Mann-Whitney AUROC with unknown as the positive class; ties count 0.5."""
    known = np.asarray(known_scores, dtype=np.float64)
    unknown = np.asarray(unknown_scores, dtype=np.float64)
    if len(known) == 0 or len(unknown) == 0:
        raise SingleClass("AUROC needs both known and unknown samples")
    scores = np.concatenate([unknown, known])
    # average ranks handle ties
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores))
    uniq, start, counts = np.unique(sorted_scores, return_index=True, return_counts=True)
    avg = start + (counts + 1) / 2.0
    ranks[order] = np.repeat(avg, counts)
    n_pos, n_neg = len(unknown), len(known)
    u = ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auroc(records):
    known = [r.score for r in records if r.true_label != UNKNOWN]
    unknown = [r.score for r in records if r.true_label == UNKNOWN]
    return auroc_scores(known, unknown)


def map_true_labels(labels, num_known):
    """Target classes outside the source label set become UNKNOWN."""
    labels = np.asarray(labels)
    return np.where((labels >= 0) & (labels < num_known), labels, UNKNOWN)


def evaluate_embeddings(z, true_labels, protos, alpha):
    """One PredictionRecord per row of ``z``."""
    pred, dmin, _ = classify_many(z, protos, alpha)
    return [PredictionRecord(int(t), int(p), float(s))
            for t, p, s in zip(true_labels, pred, dmin)]


def evaluate_target(params, sources, target, alpha=None, max_per_class=None):
    """Classify every target sample against source prototypes (threshold recomputed if omitted).

    Returns ``(records, protos, threshold_state)``.
    """
    from .train import embed, source_threshold

    protos, th = source_threshold(params, sources, max_per_class=max_per_class)
    if alpha is None:
        alpha = th.alpha
    num_known = max(protos.classes) + 1
    z = embed(params, target.features)
    records = evaluate_embeddings(z, map_true_labels(target.labels, num_known), protos, alpha)
    return records, protos, th


@dataclass
class MetricsReport:
    mode: str
    num_known: int
    per_class: dict                    # class -> accuracy (fraction)
    confusion: list                    # rows: true (known classes..., unknown); cols: predicted
    os_star: float
    unk: float | None = None
    os: float | None = None
    hos: float | None = None
    auroc: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["per_class"] = {str(k): v for k, v in self.per_class.items()}
        if self.mode == "closed-set":
            for key in ("unk", "os", "hos", "auroc"):
                d.pop(key)
            d["accuracy"] = self.os_star
        return d

    def percent(self):
        """Headline numbers rendered as percentages with one decimal."""
        keys = ["os_star"] if self.mode == "closed-set" else ["os_star", "unk", "os", "hos", "auroc"]
        return {k: round(100.0 * getattr(self, k), 1) for k in keys if getattr(self, k) is not None}

    def to_json(self):
        d = self.to_dict()
        d["percent"] = self.percent()
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


def confusion_matrix(records, num_known):
    """Rows and columns: known classes 0..C-1, then UNKNOWN as index C."""
    m = np.zeros((num_known + 1, num_known + 1), dtype=int)
    for r in records:
        t = num_known if r.true_label == UNKNOWN else r.true_label
        p = num_known if r.predicted == UNKNOWN else r.predicted
        m[t, p] += 1
    return m


def rates_from_confusion(conf):
    """Per-class accuracies of present known classes, OS* and UNK (None if no unknowns)."""
    conf = np.asarray(conf)
    c = conf.shape[0] - 1
    totals = conf.sum(axis=1)
    per_class = {y: conf[y, y] / totals[y] for y in range(c) if totals[y] > 0}
    os_star = float(np.mean(list(per_class.values()))) if per_class else 0.0
    unk = float(conf[c, c] / totals[c]) if totals[c] > 0 else None
    return per_class, os_star, unk


def build_report(records, num_known, mode="open-set", extra=None) -> MetricsReport:
    if mode not in MODES:
        raise InvalidConfig(f"mode must be one of {MODES}")
    conf = confusion_matrix(records, num_known)
    per_class, os_star, unk = rates_from_confusion(conf)
    report = MetricsReport(mode, num_known, {k: float(v) for k, v in per_class.items()},
                           conf.tolist(), os_star, extra=extra or {})
    if mode != "closed-set":
        unk = 0.0 if unk is None else unk
        report.unk = unk
        report.os = os_score(os_star, unk, len(per_class) or num_known)
        report.hos = hos(os_star, unk)
        try:
            report.auroc = auroc(records)
        except SingleClass:
            report.auroc = None
    return report


def reports_to_csv(rows, columns=None):
    """CSV text for a list of flat dicts (one per run)."""
    if not rows:
        return ""
    columns = columns or list(rows[0])
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def embedding_dump(rows):
    """CSV text: split,domain,true_label,pred_label,score,z0..z{d-1}.

    ``rows`` is an iterable of ``(split, domain, true_label, pred_label, score, z)``.
    """
    rows = list(rows)
    d = len(rows[0][5]) if rows else 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["split", "domain", "true_label", "pred_label", "score"] + [f"z{i}" for i in range(d)])
    for split, dom, t, p, s, z in rows:
        w.writerow([split, int(dom), int(t), int(p), repr(float(s))] + [repr(float(v)) for v in z])
    return buf.getvalue()


def label_oracle_hos(target, num_known):
    """Upper-bound reference that cheats with target labels.

    Target features are centred, projected on the sphere, and classified
    against prototypes built from the true known-class target samples, with
    the self-paced threshold computed on those same samples. A scenario whose
    oracle HOS is low is not separable enough to judge a learner on.
    """
    from .sphere import normalize, threshold_state

    truth = map_true_labels(target.labels, num_known)
    z = normalize(target.features - target.features.mean(axis=0))
    known = truth != UNKNOWN
    protos, th = threshold_state(z[known], truth[known])
    report = build_report(evaluate_embeddings(z, truth, protos, th.alpha), num_known)
    return report.hos
