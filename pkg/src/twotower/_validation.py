"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

from .data import StereoSample

# channel layout of a packed stereo batch
LEFT = slice(0, 3)
RIGHT = slice(3, 6)
CLUE = slice(6, 7)
PACKED_CHANNELS = 7


def check_stereo_batch(X, levels: Optional[int] = None) -> np.ndarray:
    """Validate a packed N x 7 x H x W batch (left RGB, right RGB, clue).

    A 6-channel batch (no clue) is accepted too. Values must be finite and
    inside [0, 1]; with ``levels`` the spatial size must divide by 2**levels.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4:
        raise ValueError(f"expected a 4-D N x C x H x W array, got {X.ndim}-D with shape {X.shape}")
    if X.shape[1] not in (6, PACKED_CHANNELS):
        raise ValueError(f"expected 7 channels (left RGB, right RGB, clue) or 6 without clue, got {X.shape[1]}")
    if X.shape[0] < 1:
        raise ValueError("empty batch")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains NaN or infinity")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError(f"input values must lie in [0, 1], got range [{X.min()}, {X.max()}]")
    if levels is not None:
        step = 2**levels
        for name, size in (("height", X.shape[2]), ("width", X.shape[3])):
            if size % step:
                raise ValueError(f"input {name} {size} is not divisible by 2**levels = {step}")
    return X


def check_depth_target(y, X: np.ndarray) -> np.ndarray:
    """Ground truth as N x 1 x H x W, strictly positive, matching ``X``."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 3:
        y = y[:, None]
    expected = (X.shape[0], 1, X.shape[2], X.shape[3])
    if y.shape != expected:
        raise ValueError(f"target shape {y.shape} does not match expected {expected}")
    if not np.all(np.isfinite(y)) or y.min() <= 0.0:
        raise ValueError("target depth must be finite and strictly positive")
    return y


def pack_samples(samples: Sequence[StereoSample]) -> Tuple[np.ndarray, np.ndarray]:
    """(X, y) arrays from a list of samples."""
    X = np.stack([np.concatenate([s.left, s.right, s.clue]) for s in samples])
    y = np.stack([s.gt_depth for s in samples])
    return X, y


def unpack_samples(X: np.ndarray, y: Optional[np.ndarray] = None) -> List[StereoSample]:
    out = []
    for i, x in enumerate(X):
        clue = x[CLUE] if x.shape[0] == PACKED_CHANNELS else np.full((1,) + x.shape[1:], 0.5)
        gt = y[i] if y is not None else np.ones((1,) + x.shape[1:])
        out.append(StereoSample(x[LEFT], x[RIGHT], gt, clue))
    return out
