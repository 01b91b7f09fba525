"""Confusion matrix, recalls and intersection-over-union.

Rows are ground truth, columns predictions; void pixels never count.  Per-class
values that are undefined (empty row for recall, empty union for IoU) are
reported as NaN and left out of the means.
"""

import csv
import json

import numpy as np


class ConfusionMatrix:
    def __init__(self, num_classes, counts=None):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64) if counts is None \
            else np.array(counts, dtype=np.int64)
        if self.counts.shape != (num_classes, num_classes):
            raise ValueError("confusion counts must be %dx%d" % (num_classes, num_classes))

    @property
    def total(self):
        return int(self.counts.sum())

    def accumulate(self, prediction, truth, void_id=255):
        prediction = np.asarray(prediction)
        truth = np.asarray(truth)
        if prediction.shape != truth.shape:
            raise ValueError("prediction %s and truth %s differ in shape" % (prediction.shape, truth.shape))
        ok = truth != void_id
        t = truth[ok].astype(np.int64)
        p = prediction[ok].astype(np.int64)
        C = self.num_classes
        if len(t) and (t.max() >= C or p.min() < 0 or p.max() >= C):
            raise ValueError("label outside [0, %d)" % C)
        self.counts += np.bincount(t * C + p, minlength=C * C).reshape(C, C)
        return self

    def merge(self, other):
        self.counts += other.counts
        return self

    def recalls(self):
        return recalls(self)

    def iou(self):
        return iou(self)


def accumulate(conf, prediction, truth, void_id=255):
    return conf.accumulate(prediction, truth, void_id)


def _check(conf):
    if conf.total == 0:
        raise ValueError("confusion matrix is empty")


def recalls(conf):
    """``(per_class, average, global)``; per-class entries are NaN for classes absent from the truth."""
    _check(conf)
    M = conf.counts
    rows = M.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        per = np.where(rows > 0, np.diag(M) / rows, np.nan)
    return per, float(np.nanmean(per)), float(np.trace(M) / M.sum())


def iou(conf):
    """``(per_class, mean)``; NaN where a class is neither present nor predicted."""
    _check(conf)
    M = conf.counts
    tp = np.diag(M)
    denom = M.sum(axis=0) + M.sum(axis=1) - tp
    with np.errstate(divide="ignore", invalid="ignore"):
        per = np.where(denom > 0, tp / denom, np.nan)
    return per, float(np.nanmean(per))


def summary(conf, class_names=None):
    per_r, avg, glob = recalls(conf)
    per_i, miou = iou(conf)
    names = class_names or [str(c) for c in range(conf.num_classes)]

    def clean(v):
        return None if np.isnan(v) else float(v)

    return {
        "classes": [{"name": n, "recall": clean(r), "iou": clean(i)} for n, r, i in zip(names, per_r, per_i)],
        "average_recall": avg,
        "global_recall": glob,
        "mean_iou": miou,
        "pixels": conf.total,
        "confusion": conf.counts.tolist(),
    }


def write_csv(conf, path, class_names=None):
    s = summary(conf, class_names)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "recall", "iou"])
        for row in s["classes"]:
            w.writerow([row["name"],
                        "" if row["recall"] is None else "%.6f" % row["recall"],
                        "" if row["iou"] is None else "%.6f" % row["iou"]])
        w.writerow(["average_recall", "%.6f" % s["average_recall"], ""])
        w.writerow(["global_recall", "%.6f" % s["global_recall"], ""])
        w.writerow(["mean_iou", "", "%.6f" % s["mean_iou"]])
    return s


def write_json(conf, path, class_names=None):
    s = summary(conf, class_names)
    with open(path, "w") as fh:
        json.dump(s, fh, indent=1)
    return s
