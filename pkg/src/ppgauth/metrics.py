"""Classification and biometric verification metrics."""

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from ppgauth.errors import EmptyScores, LabelOutOfRange


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    counts: np.ndarray  # rows = true, cols = predicted

    @property
    def num_classes(self):
        return self.counts.shape[0]

    @property
    def normalized(self):
        rows = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        out = np.zeros(self.counts.shape)
        np.divide(self.counts, rows, out=out, where=rows > 0)
        return out


def confusion(pairs, num_classes=None):
    """Tally ``(true, predicted)`` pairs into an M x M matrix."""
    pairs = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
    if num_classes is None:
        num_classes = int(pairs.max()) + 1 if len(pairs) else 0
    if len(pairs) and (pairs.min() < 0 or pairs.max() >= num_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (pairs[:, 0], pairs[:, 1]), 1)
    return ConfusionMatrix(counts)


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


def classification_report(cm):
    """Per-class and macro precision/recall/F1.

    Zero denominators give 0 (e.g. precision of a class never predicted).
    Returns ``(per_class, macro)`` where ``macro`` is a dict of P/R/F1.
    """
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    pred_tot = counts.sum(axis=0)
    true_tot = counts.sum(axis=1)
    per_class = []
    for c in range(cm.num_classes):
        p = tp[c] / pred_tot[c] if pred_tot[c] > 0 else 0.0
        r = tp[c] / true_tot[c] if true_tot[c] > 0 else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        per_class.append(ClassScores(float(p), float(r), float(f), int(true_tot[c])))
    macro = {
        "precision": float(np.mean([s.precision for s in per_class])),
        "recall": float(np.mean([s.recall for s in per_class])),
        "f1": float(np.mean([s.f1 for s in per_class])),
    }
    return per_class, macro


# --------------------------------------------------------------------------
# verification scores
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScoreSet:
    genuine: np.ndarray
    imposter: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "genuine", np.asarray(self.genuine, dtype=np.float64).ravel())
        object.__setattr__(self, "imposter", np.asarray(self.imposter, dtype=np.float64).ravel())

    def check(self):
        if self.genuine.size == 0 or self.imposter.size == 0:
            raise EmptyScores("need at least one genuine and one imposter score")


def far_frr(scores, threshold):
    """Accept iff score >= threshold."""
    scores.check()
    far = float(np.mean(scores.imposter >= threshold))
    frr = float(np.mean(scores.genuine < threshold))
    return far, frr


def _counts_at(scores, thresholds):
    """Accepted-imposter and rejected-genuine counts at each threshold."""
    g = np.sort(scores.genuine)
    imp = np.sort(scores.imposter)
    accepted_imp = imp.size - np.searchsorted(imp, thresholds, side="left")
    rejected_gen = np.searchsorted(g, thresholds, side="left")
    return accepted_imp, rejected_gen


def _rates_at(scores, thresholds):
    """FAR/FRR at every threshold (accept iff score >= t)."""
    acc, rej = _counts_at(scores, thresholds)
    return acc / scores.imposter.size, rej / scores.genuine.size


def eer_candidates(scores):
    """Distinct observed scores, midpoints between neighbours, and one
    threshold above the maximum (where everything is rejected)."""
    u = np.unique(np.concatenate([scores.genuine, scores.imposter]))
    mids = (u[:-1] + u[1:]) / 2
    top = u[-1] + max(1.0, abs(u[-1])) * 1e-6
    return np.unique(np.concatenate([u, mids, [top]]))


def eer(scores):
    """Equal error rate and its threshold.

    FAR - FRR is non-increasing over the candidate thresholds and goes from
    positive to negative. If it hits zero on a candidate that point is
    returned; otherwise FAR and FRR are linearly interpolated between the two
    bracketing candidates and the crossing is returned.
    """
    scores.check()
    n_imp, n_gen = scores.imposter.size, scores.genuine.size
    thr = eer_candidates(scores)
    acc, rej = _counts_at(scores, thr)
    far, frr = acc / n_imp, rej / n_gen
    gap = acc * n_gen - rej * n_imp  # sign of far - frr, in exact integers
    zero = np.flatnonzero(gap == 0)
    if zero.size:
        k = zero[0]
        return float((far[k] + frr[k]) / 2), float(thr[k])
    k = int(np.flatnonzero(gap < 0)[0]) - 1
    lam = gap[k] / (gap[k] - gap[k + 1])
    rate = far[k] + lam * (far[k + 1] - far[k])
    return float(rate), float(thr[k] + lam * (thr[k + 1] - thr[k]))


def roc_curve(scores):
    """Thresholds (descending) with the FAR and TPR at each.

    The first point rejects everything (0, 0); the last accepts everything
    (1, 1).
    """
    scores.check()
    u = np.unique(np.concatenate([scores.genuine, scores.imposter]))[::-1]
    top = u[0] + max(1.0, abs(u[0])) * 1e-6
    thr = np.concatenate([[top], u])
    far, frr = _rates_at(scores, thr)
    return thr, far, 1.0 - frr


def roc_auc(scores):
    """Trapezoidal area under the ROC; returns ``(auc, [(far, tpr), ...])``."""
    _, far, tpr = roc_curve(scores)
    auc = float(np.sum(np.diff(far) * (tpr[1:] + tpr[:-1]) / 2))
    return auc, list(zip(far.tolist(), tpr.tolist()))


def build_scores(probs, labels):
    """Pooled one-vs-all trials.

    Window ``i`` contributes ``probs[i, labels[i]]`` as a genuine score and
    ``probs[i, c]`` for every other class ``c`` as an imposter score. Returns
    ``(pooled, per_class)`` where ``per_class[c]`` is the one-vs-all score set
    for class ``c``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, m = probs.shape
    is_true = np.zeros((n, m), dtype=bool)
    is_true[np.arange(n), labels] = True
    pooled = ScoreSet(probs[is_true], probs[~is_true])
    per_class = {c: ScoreSet(probs[is_true[:, c], c], probs[~is_true[:, c], c]) for c in range(m)}
    return pooled, per_class


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

@dataclass
class MetricsReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: list
    far: float
    frr: float
    eer: float
    eer_threshold: float
    operating_threshold: float
    per_class_auc: dict = field(default_factory=dict)
    confusion: list = field(default_factory=list)
    label_names: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def metrics_report(probs, labels, operating_threshold=0.8, label_names=()):
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    m = probs.shape[1]
    pred = np.argmax(probs, axis=1)
    cm = confusion(zip(labels, pred), m)
    per_class, macro = classification_report(cm)
    pooled, by_class = build_scores(probs, labels)
    far, frr = far_frr(pooled, operating_threshold)
    e, e_thr = eer(pooled)
    aucs = {}
    for c, ss in by_class.items():
        if ss.genuine.size and ss.imposter.size:
            aucs[str(c)] = roc_auc(ss)[0]
    return MetricsReport(
        accuracy=float(np.mean(pred == labels)),
        macro_precision=macro["precision"],
        macro_recall=macro["recall"],
        macro_f1=macro["f1"],
        per_class=[asdict(s) for s in per_class],
        far=far,
        frr=frr,
        eer=e,
        eer_threshold=e_thr,
        operating_threshold=operating_threshold,
        per_class_auc=aucs,
        confusion=cm.counts.tolist(),
        label_names=list(label_names),
    )


def write_roc_csvs(probs, labels, out_dir, prefix="roc_class"):
    """One ``threshold,far,tpr`` CSV per class; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    _, by_class = build_scores(probs, labels)
    paths = []
    for c, ss in by_class.items():
        if not (ss.genuine.size and ss.imposter.size):
            continue
        thr, far, tpr = roc_curve(ss)
        path = os.path.join(out_dir, f"{prefix}_{c}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "far", "tpr"])
            w.writerows(zip(thr.tolist(), far.tolist(), tpr.tolist()))
        paths.append(path)
    return paths
