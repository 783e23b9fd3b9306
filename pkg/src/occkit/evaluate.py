"""Semantic occupancy metrics.

Predictions and labels are dense voxel grids of class ids over 18 classes:
index 0 is the catch-all "others" class, 1..16 are the named semantic
categories, and 17 marks empty space. Scoring is restricted to voxels the
cameras could actually observe via a visibility mask.
"""

from __future__ import annotations

import numpy as np

N_CLASSES = 18
OTHERS_CLASS = 0
EMPTY_CLASS = 17

CLASS_NAMES = ["others"] + [f"class_{i}" for i in range(1, 17)] + ["empty"]


def _check_labels(arr: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(arr)
    if a.dtype.kind not in "iu":
        raise ValueError(f"{name} must hold integer class ids, got {a.dtype}")
    if a.size and (a.min() < 0 or a.max() >= N_CLASSES):
        raise ValueError(
            f"{name} ids must lie in [0, {N_CLASSES - 1}], got "
            f"[{a.min()}, {a.max()}]"
        )
    return a


def confusion_matrix(
    pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None
) -> np.ndarray:
    """(N_CLASSES, N_CLASSES) counts, rows = ground truth, cols = prediction."""
    p = _check_labels(pred, "pred")
    g = _check_labels(gt, "gt")
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape}, gt {g.shape}")
    if mask is not None:
        m = np.asarray(mask)
        if m.shape != p.shape:
            raise ValueError(f"mask shape {m.shape} != label shape {p.shape}")
        p = p[m.astype(bool)]
        g = g[m.astype(bool)]
    joint = g.astype(np.int64) * N_CLASSES + p.astype(np.int64)
    counts = np.bincount(joint.ravel(), minlength=N_CLASSES * N_CLASSES)
    return counts.reshape(N_CLASSES, N_CLASSES)


def per_class_iou(
    pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None
) -> np.ndarray:
    """Intersection over union per class, NaN where a class never occurs.

    A class absent from both prediction and ground truth (within the mask)
    has an empty union; it is reported as NaN so averages can skip it.
    """
    cm = confusion_matrix(pred, gt, mask)
    inter = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - inter
    iou = np.full(N_CLASSES, np.nan)
    nz = union > 0
    iou[nz] = inter[nz] / union[nz]
    return iou


def miou(ious: np.ndarray, include_empty: bool = False) -> float:
    """Mean of the defined per-class IoUs.

    The empty class is excluded by default; NaN entries (classes absent from
    the scene) never count. Returns NaN if nothing is defined.
    """
    ious = np.asarray(ious, dtype=np.float64)
    if ious.shape != (N_CLASSES,):
        raise ValueError(f"expected {N_CLASSES} per-class IoUs, got {ious.shape}")
    sel = np.ones(N_CLASSES, dtype=bool)
    if not include_empty:
        sel[EMPTY_CLASS] = False
    chosen = ious[sel]
    if np.isnan(chosen).all():
        return float("nan")
    return float(np.nanmean(chosen))


def argmax_decode(logits: np.ndarray) -> np.ndarray:
    """Class ids from (N_CLASSES, ...) logits; ties go to the lower index."""
    if logits.shape[0] != N_CLASSES:
        raise ValueError(
            f"logits must have {N_CLASSES} leading channels, got {logits.shape[0]}"
        )
    return np.argmax(logits, axis=0).astype(np.uint8)
