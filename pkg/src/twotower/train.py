"""L1 loss, Adam, the training loop and the clue ablation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autograd import Tensor, absolute, backward, mean, no_grad, sub
from .data import StereoSample, split, stack
from .model import ModelConfig, ModelParams, build, forward


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    lr: float = 1e-3
    batch_size: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    clue_enabled: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr >= 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class OptimState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def l1_loss(pred: Tensor, gt) -> Tensor:
    """Mean absolute difference over every pixel of the batch."""
    gt = gt if isinstance(gt, Tensor) else Tensor(gt)
    return mean(absolute(sub(pred, gt)))


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: OptimState, config: TrainConfig) -> OptimState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for name in params:
        if name not in grads or grads[name] is None:
            raise KeyError(f"no gradient for parameter {name!r}")
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= config.lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps)
    return state


def _inputs(params: ModelParams, samples: Sequence[StereoSample]):
    left, right, gt, clue = stack(samples)
    return left, (clue if params.config.clue_enabled else None), right, gt


def predict(params: ModelParams, samples: Sequence[StereoSample], batch_size: int = 8) -> List[np.ndarray]:
    """Depth maps (1 x H x W each) without recording a graph."""
    out = []
    with no_grad():
        for i in range(0, len(samples), batch_size):
            left, clue, right, _ = _inputs(params, samples[i : i + batch_size])
            out.extend(forward(params, left, clue, right).data)
    return out


def mean_l1(params: ModelParams, samples: Sequence[StereoSample]) -> float:
    """Per-sample L1 averaged uniformly over ``samples``."""
    preds = predict(params, samples)
    return float(np.mean([np.mean(np.abs(p - s.gt_depth)) for p, s in zip(preds, samples)]))


@dataclass
class TrainResult:
    params: ModelParams  # after the last step
    best: ModelParams  # lowest validation loss seen at an epoch end
    curve: List[Tuple[int, float, float]]  # (step, train_loss, val_loss) per epoch
    step_losses: List[float]
    state: OptimState

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "train_loss", "val_loss"])
        for step, tr, va in self.curve:
            w.writerow([step, repr(tr), repr(va)])
        return buf.getvalue()


def train(
    params: ModelParams,
    train_set: Sequence[StereoSample],
    val_set: Sequence[StereoSample] = (),
    config: TrainConfig = TrainConfig(),
) -> TrainResult:
    """Mini-batch Adam on L1 loss; the input ``params`` are left untouched.

    Batches are reshuffled every epoch from ``config.seed``. The best
    checkpoint is chosen by validation L1 (train L1 when no validation set).
    """
    if config.clue_enabled != params.config.clue_enabled:
        raise ValueError(
            f"clue_enabled={config.clue_enabled} but the model has {params.config.in_primary} primary input channels"
        )
    if not train_set:
        raise ValueError("training set is empty")
    params.config.check_input_size(*train_set[0].size)
    params = params.copy()
    arrays = params.arrays()
    state = OptimState()
    rng = np.random.default_rng(config.seed)
    curve, step_losses = [], []
    best, best_loss = params.copy(), math.inf
    n = len(train_set)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            batch = [train_set[i] for i in order[start : start + config.batch_size]]
            left, clue, right, gt = _inputs(params, batch)
            loss = l1_loss(forward(params, left, clue, right), gt)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
            backward(loss)
            grads = {k: t.grad for k, t in params.tensors.items()}
            adam_step(arrays, grads, state, config)
            for t in params.tensors.values():
                t.grad = None
            step_losses.append(value)
            total += value * len(batch)
        train_loss = total / n
        val_loss = mean_l1(params, val_set) if val_set else train_loss
        curve.append((state.step, train_loss, val_loss))
        if val_loss < best_loss:
            best, best_loss = params.copy(), val_loss
    return TrainResult(params, best, curve, step_losses, state)


@dataclass(frozen=True)
class AblationRecord:
    seed: int
    clue_l1: float  # test L1 of the arm given the real clue
    baseline_l1: float  # test L1 of the constant-clue or no-clue arm


def with_constant_clue(samples: Sequence[StereoSample], value: float = 0.5) -> List[StereoSample]:
    return [replace(s, clue=np.full_like(s.clue, value)) for s in samples]


def ablate_clue(
    samples: Sequence[StereoSample],
    config: TrainConfig,
    seeds: Sequence[int],
    levels: int = 2,
    base_channels: int = 4,
    baseline: str = "constant",
    test_set: Optional[Sequence[StereoSample]] = None,
) -> List[AblationRecord]:
    """Train matched with-clue / baseline models per seed and compare test L1.

    ``baseline="constant"`` feeds a zero-information 0.5 clue through the
    same 4-channel network; ``baseline="none"`` drops the clue channel.
    Without an explicit ``test_set`` each seed uses its own 90:10 split.
    """
    if len(seeds) < 3:
        raise ValueError(f"need at least 3 seeds, got {len(seeds)}")
    if baseline not in ("constant", "none"):
        raise ValueError(f"baseline must be 'constant' or 'none', got {baseline!r}")
    records = []
    for seed in seeds:
        if test_set is None:
            train_set, test = split(list(samples), 0.9, seed)
        else:
            train_set, test = list(samples), list(test_set)
        cfg = replace(config, seed=seed, clue_enabled=True)
        arm = build(ModelConfig(levels, base_channels, in_primary=4), seed)
        clue_l1 = mean_l1(train(arm, train_set, (), cfg).params, test)
        if baseline == "constant":
            base = build(ModelConfig(levels, base_channels, in_primary=4), seed)
            res = train(base, with_constant_clue(train_set), (), cfg)
            base_l1 = mean_l1(res.params, with_constant_clue(test))
        else:
            base = build(ModelConfig(levels, base_channels, in_primary=3), seed)
            res = train(base, train_set, (), replace(cfg, clue_enabled=False))
            base_l1 = mean_l1(res.params, test)
        records.append(AblationRecord(seed, clue_l1, base_l1))
    return records
