"""Confusion-matrix scores, RMSE, mean IoU, ROC/AUC and report files."""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError

REPORT_COLUMNS = ("model", "accuracy", "recall", "precision", "f1", "auc")


class ConfusionMatrix:
    """K x K integer counts; rows are the true class, columns the prediction."""

    def __init__(self, counts):
        counts = np.asarray(counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise DimensionError(f"confusion matrix must be square, got shape {counts.shape}")
        if np.any(counts < 0) or not np.all(counts == np.floor(counts)):
            raise ParameterError("confusion counts must be nonnegative integers")
        self.counts = counts.astype(np.int64)

    @classmethod
    def from_labels(cls, y_true, y_pred, classes=None):
        y_true = np.asarray(y_true, dtype=np.int64).ravel()
        y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
        if y_true.shape != y_pred.shape:
            raise DimensionError(f"{y_true.size} labels but {y_pred.size} predictions")
        k = classes if classes is not None else int(max(y_true.max(initial=-1), y_pred.max(initial=-1)) + 1)
        counts = np.zeros((k, k), dtype=np.int64)
        np.add.at(counts, (y_true, y_pred), 1)
        return cls(counts)

    @property
    def classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def __repr__(self):
        return f"ConfusionMatrix({self.counts.tolist()})"


def _ratio(num, den, flag, flags):
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def classification_scores(cm, positive=1):
    """Accuracy, precision, recall and F1 with ``positive`` as the positive class.

    Accuracy is trace / total (the usual (TP+TN)/total for two classes);
    the other three are one-vs-rest.  A zero denominator yields 0 and adds
    a name to ``flags``.
    """
    if not isinstance(cm, ConfusionMatrix):
        cm = ConfusionMatrix(cm)
    total = cm.total
    if total == 0:
        raise ParameterError("confusion matrix is empty")
    if not 0 <= positive < cm.classes:
        raise ParameterError(f"positive class {positive} outside 0..{cm.classes - 1}")
    c = cm.counts
    tp = int(c[positive, positive])
    fp = int(c[:, positive].sum()) - tp
    fn = int(c[positive, :].sum()) - tp
    flags = []
    precision = _ratio(tp, tp + fp, "precision_undefined", flags)
    recall = _ratio(tp, tp + fn, "recall_undefined", flags)
    # 2PR / (P + R) rewritten over integers so the score is one rounded division
    f1 = _ratio(2 * tp, 2 * tp + fp + fn, "f1_undefined", flags) if tp else _ratio(0, 0, "f1_undefined", flags)
    return {
        "accuracy": int(np.trace(c)) / total,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "flags": flags,
    }


def macro_scores(cm):
    """Per-class scores averaged over classes (accuracy is trace / total)."""
    if not isinstance(cm, ConfusionMatrix):
        cm = ConfusionMatrix(cm)
    per = [classification_scores(cm, k) for k in range(cm.classes)]
    out = {key: float(np.mean([p[key] for p in per])) for key in ("precision", "recall", "f1")}
    out["accuracy"] = per[0]["accuracy"]
    out["flags"] = sorted({f"class{k}:{f}" for k, p in enumerate(per) for f in p["flags"]})
    return out


def rmse(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise DimensionError(f"shape {y_true.shape} does not match {y_pred.shape}")
    if y_true.size == 0:
        raise ParameterError("rmse of no samples")
    return float(np.sqrt(np.mean((y_true - y_pred) ** 2)))


def mean_iou(pred_masks, true_masks, threshold=0.5):
    """Mean over images of |pred & true| / |pred | true| after thresholding (``>= threshold``).

    The first axis indexes images.  Two empty masks count as IoU 1.
    """
    pred = np.asarray(pred_masks)
    true = np.asarray(true_masks)
    if pred.shape != true.shape:
        raise DimensionError(f"mask shapes differ: {pred.shape} vs {true.shape}")
    if not 0 < threshold < 1:
        raise ParameterError("threshold must lie in (0, 1)")
    if pred.ndim < 2:
        raise DimensionError("masks need at least two dimensions")
    if pred.ndim == 2:
        pred, true = pred[None], true[None]
    p = (pred >= threshold).reshape(len(pred), -1)
    t = (true >= threshold).reshape(len(true), -1)
    inter = np.sum(p & t, axis=1)
    union = np.sum(p | t, axis=1)
    iou = np.where(union == 0, 1.0, inter / np.maximum(union, 1))
    return float(iou.mean())


@dataclass(frozen=True)
class RocCurve:
    fpr: tuple
    tpr: tuple
    thresholds: tuple

    def points(self):
        return list(zip(self.fpr, self.tpr))


def roc_auc(scores, labels):
    """ROC points from a sweep over distinct scores (high to low) and the trapezoid AUC.

    Equal scores move the curve in a single step, so ties contribute half a
    pair each.  The area is accumulated in integers and divided once.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DimensionError(f"{scores.size} scores but {labels.size} labels")
    if not np.all((labels == 0) | (labels == 1)):
        raise ParameterError("labels must be 0 or 1")
    labels = labels.astype(np.int64)
    pos = int(labels.sum())
    neg = labels.size - pos
    if pos == 0 or neg == 0:
        raise ParameterError("ROC needs at least one positive and one negative")
    order = np.argsort(-scores, kind="stable")
    s, l = scores[order], labels[order]
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.r_[0, np.cumsum(l)[last]]
    fp = np.r_[0, np.cumsum(1 - l)[last]]
    area2 = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    curve = RocCurve(
        fpr=tuple(float(v) for v in fp / neg),
        tpr=tuple(float(v) for v in tp / pos),
        thresholds=(float("inf"),) + tuple(float(v) for v in s[last]),
    )
    return curve, area2 / (2 * pos * neg)


# ---------------------------------------------------------------------------
# reports


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, (list, tuple)):
        return ";".join(str(v) for v in value)
    if isinstance(value, (float, np.floating, int, np.integer)) and not isinstance(value, bool):
        return f"{float(value):.6f}"
    return str(value)


def report_table(rows):
    """Header and string cells: the fixed columns, then any extra keys in first-seen order."""
    extra = []
    for row in rows:
        extra += [k for k in row if k not in REPORT_COLUMNS and k not in extra]
    header = list(REPORT_COLUMNS) + extra
    return header, [[_cell(row.get(k)) for k in header] for row in rows]


def write_report(rows, path, format="text"):
    """Write metric rows (dicts) as CSV or as an aligned text table."""
    if format not in ("text", "csv"):
        raise ParameterError(f"report format must be 'text' or 'csv', got {format!r}")
    header, cells = report_table(rows)
    with open(path, "w", newline="") as fh:
        if format == "csv":
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(cells)
            return
        widths = [max([len(h)] + [len(r[i]) for r in cells]) for i, h in enumerate(header)]
        for line in [header] + cells:
            fh.write("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() + "\n")


def read_report_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
