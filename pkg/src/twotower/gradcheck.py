"""Central finite-difference checks of the analytic gradients."""

from __future__ import annotations

from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autograd as ag
from .autograd import Tensor, backward, no_grad
from .model import ModelConfig, build, forward


def grad_check(
    fn: Callable[..., Tensor],
    input_shapes: Sequence[Tuple[int, ...]],
    epsilon: float = 1e-5,
    seed: int = 0,
    inputs: Optional[Sequence[np.ndarray]] = None,
) -> float:
    """Max relative error between backprop and central differences.

    ``fn`` maps Tensors (one per shape) to a scalar Tensor. Inputs are drawn
    from a standard normal with ``seed`` unless given explicitly. The error
    for one coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if inputs is None:
        rng = np.random.default_rng(seed)
        inputs = [rng.standard_normal(s) for s in input_shapes]
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in inputs]
    backward(fn(*tensors))
    analytic = [t.grad if t.grad is not None else np.zeros(t.shape) for t in tensors]
    worst = 0.0
    with no_grad():
        for t, g in zip(tensors, analytic):
            flat = t.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + epsilon
                fp = fn(*tensors).item()
                flat[i] = orig - epsilon
                fm = fn(*tensors).item()
                flat[i] = orig
                numeric = (fp - fm) / (2 * epsilon)
                err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]))
                worst = max(worst, err)
    return worst


def _weighted(out: Tensor, seed: int) -> Tensor:
    # a random upstream gradient exercises every output position differently
    w = np.random.default_rng(seed + 10_000).standard_normal(out.shape)
    return ag.tsum(ag.mul(out, Tensor(w)))


def operator_cases(seed: int) -> Dict[str, Tuple[Callable[..., Tensor], List[Tuple[int, ...]]]]:
    """Randomized shapes (up to 2 x 4 x 8 x 8) for each differentiable operator."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 3))
    cin, cout = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    h = 2 * int(rng.integers(3, 5))
    w = 2 * int(rng.integers(3, 5))
    k = int(rng.choice([1, 3, 5]))
    pad = k // 2
    return {
        "conv2d": (
            lambda x, wt, b: _weighted(ag.conv2d(x, wt, b, pad=pad), seed),
            [(n, cin, h, w), (cout, cin, k, k), (cout,)],
        ),
        "conv_transpose2d": (
            lambda x, wt, b: _weighted(ag.conv_transpose2d(x, wt, b), seed),
            [(n, cin, h // 2, w // 2), (cin, cout, 4, 4), (cout,)],
        ),
        "maxpool2d": (lambda x: _weighted(ag.maxpool2d(x)[0], seed), [(n, cin, h, w)]),
        "elementwise_mul": (lambda a, b: _weighted(ag.mul(a, b), seed), [(n, cin, h, w)] * 2),
        "concat_channels": (
            lambda a, b: _weighted(ag.concat_channels(a, b), seed),
            [(n, cin, h, w), (n, cout, h, w)],
        ),
        "relu": (lambda x: _weighted(ag.relu(x), seed), [(n, cin, h, w)]),
        "sigmoid": (lambda x: _weighted(ag.sigmoid(x), seed), [(n, cin, h, w)]),
        "l1": (lambda a, b: ag.mean(ag.absolute(ag.sub(a, b))), [(n, 1, h, w)] * 2),
    }


def model_case(config: ModelConfig, seed: int, size: int = 8, batch: int = 1):
    """(fn, arrays) computing the L1 loss of a full forward pass w.r.t. all weights."""
    params = build(config, seed)
    names = list(params.tensors)
    rng = np.random.default_rng(seed + 1)
    # zero biases put dead units exactly on the relu kink and tie max-pool windows
    for name in names:
        if name.endswith(".bias"):
            params.tensors[name].data[:] = rng.uniform(-0.1, 0.1, size=params.tensors[name].shape)
    left = rng.random((batch, 3, size, size))
    right = rng.random((batch, 3, size, size))
    clue = rng.random((batch, 1, size, size)) if config.clue_enabled else None
    target = Tensor(rng.random((batch, 1, size, size)))

    def fn(*weights: Tensor) -> Tensor:
        params.tensors = dict(zip(names, weights))
        pred = forward(params, left, clue, right)
        return ag.mean(ag.absolute(ag.sub(pred, target)))

    return fn, [params.tensors[k].data.copy() for k in names]


def run_suite(
    seeds: Sequence[int] = range(10),
    epsilon: float = 1e-5,
    tolerance: float = 1e-5,
    model_config: Optional[ModelConfig] = None,
) -> List[Tuple[str, float, bool]]:
    """One (name, worst error over seeds, passed) row per operator plus the model."""
    model_config = model_config or ModelConfig(levels=2, base_channels=2)
    worst: Dict[str, float] = {}
    for seed in seeds:
        for name, (fn, shapes) in operator_cases(seed).items():
            err = grad_check(fn, shapes, epsilon, seed)
            worst[name] = max(worst.get(name, 0.0), err)
        fn, arrays = model_case(model_config, seed)
        err = grad_check(fn, [a.shape for a in arrays], epsilon, seed, inputs=arrays)
        worst["two_tower_unet"] = max(worst.get("two_tower_unet", 0.0), err)
    return [(name, err, err < tolerance) for name, err in worst.items()]
