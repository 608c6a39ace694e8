"""Depth-estimation error measures and windowed SSIM."""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields
from typing import TYPE_CHECKING, Callable, Iterable, List, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

if TYPE_CHECKING:
    from .model import ModelParams

THRESHOLD_BASE = 1.25
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    log10: float
    rmse: float
    sigma1: float
    sigma2: float
    sigma3: float
    ssim: float

    @classmethod
    def mean(cls, rows: Sequence["DepthMetrics"]) -> "DepthMetrics":
        if not rows:
            raise ValueError("cannot average an empty list of metrics")
        arr = np.array([astuple(r) for r in rows], dtype=np.float64)
        return cls(*(float(v) for v in arr.mean(axis=0)))


COLUMNS = [f.name for f in fields(DepthMetrics)]


def _check(pred, gt, need_positive_pred: bool = False):
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"prediction shape {p.shape} does not match ground truth {g.shape}")
    bad = np.argwhere(~(g > 0))
    if bad.size:
        raise ValueError(f"ground truth must be strictly positive; pixel {tuple(int(i) for i in bad[0])} is {g[tuple(bad[0])]}")
    if need_positive_pred:
        bad = np.argwhere(~(p > 0))
        if bad.size:
            raise ValueError(f"prediction must be strictly positive; pixel {tuple(int(i) for i in bad[0])} is {p[tuple(bad[0])]}")
    return p, g


def abs_rel(pred, gt) -> float:
    p, g = _check(pred, gt)
    return float(np.mean(np.abs(p - g) / g))


def sq_rel(pred, gt) -> float:
    p, g = _check(pred, gt)
    return float(np.mean((p - g) ** 2 / g))


def rmse(pred, gt) -> float:
    p, g = _check(pred, gt)
    return float(np.sqrt(np.mean((p - g) ** 2)))


def log10_err(pred, gt) -> float:
    p, g = _check(pred, gt, need_positive_pred=True)
    return float(np.mean(np.abs(np.log10(p) - np.log10(g))))


def threshold_acc(pred, gt, i: int) -> float:
    """Fraction of pixels with max(p/g, g/p) strictly below 1.25**i."""
    if i not in (1, 2, 3):
        raise ValueError(f"threshold index must be 1, 2 or 3, got {i}")
    p, g = _check(pred, gt, need_positive_pred=True)
    ratio = np.maximum(p / g, g / p)
    return float(np.mean(ratio < THRESHOLD_BASE**i))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _squeeze2d(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    while a.ndim > 2 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise ValueError(f"ssim needs a single-channel map, got shape {a.shape}")
    return a


def ssim(pred, gt, window_size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA, data_range: float = 1.0) -> float:
    """Mean SSIM over all valid (unpadded) Gaussian window placements."""
    x, y = _squeeze2d(pred), _squeeze2d(gt)
    if x.shape != y.shape:
        raise ValueError(f"ssim: shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape) < window_size:
        raise ValueError(f"ssim: image {x.shape} is smaller than the {window_size}x{window_size} window")
    w = gaussian_window(window_size, sigma)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    def filt(a):
        return np.einsum("ijkl,kl->ij", sliding_window_view(a, w.shape), w)

    mx, my = filt(x), filt(y)
    vx = filt(x * x) - mx * mx
    vy = filt(y * y) - my * my
    cxy = filt(x * y) - mx * my
    smap = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return float(smap.mean())


def compute_metrics(pred, gt, **ssim_kwargs) -> DepthMetrics:
    """All eight measures for one prediction/ground-truth pair."""
    return DepthMetrics(
        abs_rel=abs_rel(pred, gt),
        sq_rel=sq_rel(pred, gt),
        log10=log10_err(pred, gt),
        rmse=rmse(pred, gt),
        sigma1=threshold_acc(pred, gt, 1),
        sigma2=threshold_acc(pred, gt, 2),
        sigma3=threshold_acc(pred, gt, 3),
        ssim=ssim(pred, gt, **ssim_kwargs),
    )


def evaluate_maps(preds: Iterable[np.ndarray], gts: Iterable[np.ndarray]) -> DepthMetrics:
    """Uniform per-sample average of :func:`compute_metrics`."""
    rows = [compute_metrics(p, g) for p, g in zip(preds, gts)]
    return DepthMetrics.mean(rows)


def evaluate(model: Union["ModelParams", Callable], samples: Sequence) -> DepthMetrics:
    """Metrics of a model (or any ``sample -> depth map`` callable) on a test set."""
    if not samples:
        raise ValueError("test set is empty")
    if callable(model):
        preds = [model(s) for s in samples]
    else:
        from .train import predict

        preds = predict(model, samples)
    return evaluate_maps(preds, [s.gt_depth for s in samples])


def format_table(rows: Sequence[DepthMetrics], labels: Sequence[str] = ()) -> str:
    """Aligned plain-text table in the usual column order."""
    labels = list(labels) or [""] * len(rows)
    lw = max([len("method")] + [len(s) for s in labels])
    head = f"{'method':<{lw}}  " + "  ".join(f"{c:>8}" for c in COLUMNS)
    lines = [head, "-" * len(head)]
    for label, r in zip(labels, rows):
        lines.append(f"{label:<{lw}}  " + "  ".join(f"{v:>8.4f}" for v in astuple(r)))
    return "\n".join(lines)


def to_csv(rows: Sequence[DepthMetrics], labels: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method"] + COLUMNS)
    labels = list(labels) or [""] * len(rows)
    for label, r in zip(labels, rows):
        writer.writerow([label] + [repr(v) for v in astuple(r)])
    return buf.getvalue()


def from_csv(text: str) -> List[DepthMetrics]:
    reader = csv.DictReader(io.StringIO(text))
    return [DepthMetrics(*(float(row[c]) for c in COLUMNS)) for row in reader]
