"""Interpretability probes: class-activation heatmaps and frame importance.

The two quantitative questions the probes answer: which frames does an
attack spend its perturbation on, and do those frames coincide with the
ones the classifier actually relies on?  Frame reliance is measured
directly (replace one frame with the neutral padding frame, watch the
class score drop) and indirectly (gradient-weighted class activation
maps); rank correlations tie the three views together.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .models import Classifier


@dataclass
class HeatmapSequence:
    """Non-negative per-frame relevance maps, globally normalized to [0, 1]."""

    maps: np.ndarray   # (T, H, W) float64, max value 1 unless all-zero
    layer: str


@dataclass
class CorrelationStats:
    rho: float
    n: int


def _linear_resample(arr: np.ndarray, axis: int, new_len: int) -> np.ndarray:
    """Linear interpolation along one axis (endpoints aligned)."""
    old_len = arr.shape[axis]
    if old_len == new_len:
        return arr
    arr = np.moveaxis(arr, axis, 0)
    if old_len == 1:
        out = np.broadcast_to(arr, (new_len,) + arr.shape[1:]).copy()
        return np.moveaxis(out, 0, axis)
    pos = np.linspace(0.0, old_len - 1.0, new_len)
    left = np.floor(pos).astype(np.int64)
    right = np.minimum(left + 1, old_len - 1)
    frac = (pos - left).reshape((-1,) + (1,) * (arr.ndim - 1))
    out = arr[left] * (1.0 - frac) + arr[right] * frac
    return np.moveaxis(out, 0, axis)


def grad_cam(clf: Classifier, x: np.ndarray, cls: int, layer: str | None = None) -> HeatmapSequence:
    """Gradient-weighted class activation maps, one per input frame.

    Channel weights are the spatially pooled gradients of the class score
    at the chosen feature layer; the weighted channel sum passes through a
    ReLU, is resampled to the input frame geometry (linear along all three
    axes), and normalized so the global maximum is 1 (all-zero maps stay
    zero).
    """
    layer = layer or clf.arch.default_cam_layer
    _, feat, fgrad = clf.gradcam_parts(np.asarray(x, dtype=np.float32), int(cls), layer)
    feat = feat.astype(np.float64)      # (C, T', H', W')
    fgrad = fgrad.astype(np.float64)
    weights = fgrad.mean(axis=(1, 2, 3))
    cam = np.maximum(np.einsum("c,cthw->thw", weights, feat), 0.0)
    T, H, W = x.shape
    cam = _linear_resample(cam, 0, T)
    cam = _linear_resample(cam, 1, H)
    cam = _linear_resample(cam, 2, W)
    peak = cam.max()
    if peak > 0:
        cam = cam / peak
    return HeatmapSequence(maps=cam, layer=layer)


def frame_importance(clf: Classifier, x: np.ndarray, base: np.ndarray, cls: int) -> np.ndarray:
    """Per-frame class-score drop when that frame is replaced by ``base``.

    One batched forward evaluates all T substitutions plus the untouched
    baseline.  Frames already equal to the padding frame contribute
    exactly zero.
    """
    x = np.asarray(x)
    T = x.shape[0]
    if base.shape != x.shape[1:]:
        raise ValueError(f"padding frame shape {base.shape} does not match frames {x.shape[1:]}")
    batch = np.broadcast_to(x, (T + 1,) + x.shape).copy()
    basef = base.astype(x.dtype)
    already = np.zeros(T, dtype=bool)
    for i in range(T):
        if np.array_equal(x[i], basef):
            already[i] = True
        else:
            batch[i, i] = basef
    logits = clf.logits(batch.astype(np.float32))
    deltas = (logits[T, cls] - logits[:T, cls]).astype(np.float64)
    deltas[already] = 0.0
    return deltas


def perturbation_profile(x: np.ndarray, x_adv: np.ndarray) -> np.ndarray:
    """Per-frame L2 of the perturbation; squares sum to the full-tensor L2^2."""
    x, x_adv = np.asarray(x), np.asarray(x_adv)
    if x.shape != x_adv.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_adv.shape}")
    diff = (x_adv.astype(np.float64) - x.astype(np.float64)).reshape(x.shape[0], -1)
    return np.linalg.norm(diff, axis=1)


def _average_ranks(v: np.ndarray) -> np.ndarray:
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    sorted_v = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(a, b) -> CorrelationStats:
    """Rank correlation with average ranks for ties."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("spearman requires two equal-length 1-D sequences")
    if a.size < 3:
        raise ValueError(f"need at least 3 observations, got {a.size}")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise ValueError("rank correlation is undefined for a constant sequence")
    ra, rb = _average_ranks(a), _average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    rho = float((ra * rb).sum() / np.sqrt((ra * ra).sum() * (rb * rb).sum()))
    return CorrelationStats(rho=rho, n=int(a.size))


def aggregate_frames(vectors, statistic: str = "median", labels=None):
    """Per-frame-index summary curve with an interquartile band.

    ``vectors`` is an (N, T) stack (or list of equal-length vectors).
    With ``labels``, returns one summary per class as a dict.
    """
    arr = np.asarray([np.asarray(v, dtype=np.float64) for v in vectors])
    if arr.ndim != 2:
        raise ValueError("aggregate_frames requires equal-length vectors")
    if statistic not in ("median", "mean"):
        raise ValueError(f"unknown statistic {statistic!r}")
    if labels is not None:
        labels = np.asarray(labels)
        return {int(c): aggregate_frames(arr[labels == c], statistic)
                for c in np.unique(labels)}
    center = np.median(arr, axis=0) if statistic == "median" else arr.mean(axis=0)
    q1 = np.percentile(arr, 25.0, axis=0)
    q3 = np.percentile(arr, 75.0, axis=0)
    return {"center": center, "q1": q1, "q3": q3}


def curve_to_csv(curve: dict, path: str | Path, label: int | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not path.exists() or label is None
    mode = "w" if new else "a"
    with open(path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if new:
            header = ["frame_index", "median", "q1", "q3"]
            if label is not None:
                header.append("class")
            writer.writerow(header)
        for i in range(len(curve["center"])):
            row = [i, f"{curve['center'][i]:.10g}", f"{curve['q1'][i]:.10g}", f"{curve['q3'][i]:.10g}"]
            if label is not None:
                row.append(label)
            writer.writerow(row)


def heatmap_magnitudes(heat: HeatmapSequence) -> np.ndarray:
    """Mean normalized activation per frame."""
    return heat.maps.mean(axis=(1, 2))


def export_heatmap_images(heat: HeatmapSequence, directory: str | Path, prefix: str = "frame") -> list[Path]:
    """Write one 8-bit grayscale PNG per frame."""
    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(heat.maps):
        img = Image.fromarray(np.floor(frame * 255.0 + 0.5).astype(np.uint8), mode="L")
        p = directory / f"{prefix}_{i:03d}.png"
        img.save(p)
        paths.append(p)
    return paths
