"""Two-tower UNet: twin encoders, multiplicative skip fusion, one decoder."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .autograd import (
    ShapeError,
    Tensor,
    as_tensor,
    concat_channels,
    conv2d,
    conv_transpose2d,
    maxpool2d,
    mul,
    relu,
    sigmoid,
)

KERNEL = 5
PAD = 2


class ConfigError(ValueError):
    """Invalid model configuration or input geometry."""


class CheckpointError(ValueError):
    """Checkpoint file could not be parsed."""


@dataclass(frozen=True)
class ModelConfig:
    levels: int = 3
    base_channels: int = 8
    in_primary: int = 4
    in_secondary: int = 3
    out_channels: int = 1

    def __post_init__(self):
        if self.levels < 1:
            raise ConfigError(f"levels must be >= 1, got {self.levels}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.in_primary not in (3, 4):
            raise ConfigError(f"in_primary must be 4 (left + clue) or 3 (left only), got {self.in_primary}")
        if self.out_channels != 1:
            raise ConfigError("out_channels is fixed at 1")

    @property
    def clue_enabled(self) -> bool:
        return self.in_primary == 4

    def width(self, level: int) -> int:
        return self.base_channels * 2**level

    def check_input_size(self, height: int, width: int) -> None:
        step = 2**self.levels
        for name, size in (("height", height), ("width", width)):
            if size % step:
                raise ConfigError(f"input {name} {size} is not divisible by 2**levels = {step}")


def layer_shapes(config: ModelConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Ordered (name, shape) list of every learnable tensor."""
    L, k = config.levels, KERNEL
    shapes: List[Tuple[str, Tuple[int, ...]]] = []

    def block(prefix, cin, cout):
        shapes.extend(
            [
                (f"{prefix}.conv1.weight", (cout, cin, k, k)),
                (f"{prefix}.conv1.bias", (cout,)),
                (f"{prefix}.conv2.weight", (cout, cout, k, k)),
                (f"{prefix}.conv2.bias", (cout,)),
            ]
        )

    for tower, cin0, nblocks in (("primary", config.in_primary, L + 1), ("secondary", config.in_secondary, L)):
        cin = cin0
        for lvl in range(nblocks):
            block(f"{tower}.{lvl}", cin, config.width(lvl))
            cin = config.width(lvl)
    for lvl in reversed(range(L)):
        c = config.width(lvl)
        shapes.append((f"decoder.{lvl}.up.weight", (2 * c, c, 4, 4)))
        shapes.append((f"decoder.{lvl}.up.bias", (c,)))
        block(f"decoder.{lvl}", 2 * c, c)
    shapes.append(("head.weight", (config.out_channels, config.base_channels, 1, 1)))
    shapes.append(("head.bias", (config.out_channels,)))
    return shapes


@dataclass
class ModelParams:
    """All learnable tensors of one network, keyed by dotted layer name."""

    config: ModelConfig
    tensors: Dict[str, Tensor]
    seed: int = 0

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def arrays(self) -> Dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    def tower(self, name: str) -> List[Dict[str, Tensor]]:
        n = self.config.levels + 1 if name == "primary" else self.config.levels
        return [self._block(f"{name}.{lvl}") for lvl in range(n)]

    def _block(self, prefix: str) -> Dict[str, Tensor]:
        return {k[len(prefix) + 1 :]: t for k, t in self.tensors.items() if k.startswith(prefix + ".")}

    def blocks(self) -> Dict[str, Dict[str, Tensor]]:
        """Tensors grouped by layer block ("primary.0", "decoder.1", "head", ...)."""
        out: Dict[str, Dict[str, Tensor]] = {}
        for name, t in self.tensors.items():
            head, _, rest = name.rpartition(".")
            prefix, _, layer = head.rpartition(".")
            if name.startswith("head."):
                out.setdefault("head", {})[rest] = t
            else:
                out.setdefault(prefix, {})[f"{layer}.{rest}"] = t
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            {k: Tensor(t.data.copy(), requires_grad=t.requires_grad) for k, t in self.tensors.items()},
            self.seed,
        )


def build(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Fan-in scaled uniform weights, zero biases; one child stream per tensor."""
    shapes = layer_shapes(config)
    streams = np.random.SeedSequence(seed).spawn(len(shapes))
    tensors = {}
    for (name, shape), ss in zip(shapes, streams):
        if name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            if ".up." in name:
                # each transposed-conv output pixel sees a 2x2 patch of taps per input channel
                fan_in = shape[0] * 4
            else:
                fan_in = shape[1] * shape[2] * shape[3]
            bound = np.sqrt(6.0 / fan_in)
            data = np.random.default_rng(ss).uniform(-bound, bound, size=shape)
        tensors[name] = Tensor(data, requires_grad=True)
    return ModelParams(config, tensors, seed)


def param_count(params: ModelParams) -> Tuple[int, int]:
    """(trainable, total) scalar parameter counts."""
    total = sum(t.data.size for t in params.tensors.values())
    trainable = sum(t.data.size for t in params.tensors.values() if t.requires_grad)
    return trainable, total


def conv_block(block: Dict[str, Tensor], x: Tensor) -> Tensor:
    x = relu(conv2d(x, block["conv1.weight"], block["conv1.bias"], pad=PAD))
    return relu(conv2d(x, block["conv2.weight"], block["conv2.bias"], pad=PAD))


def encoder_forward(tower: Sequence[Dict[str, Tensor]], x: Tensor, levels: int) -> Tuple[List[Tensor], Optional[Tensor]]:
    """Run one contracting path.

    Each of the first ``levels`` blocks yields a skip tensor (taken before
    pooling). A tower with ``levels + 1`` blocks also returns its bottleneck;
    a tower with exactly ``levels`` blocks returns ``None`` for it.
    """
    step = 2**levels
    for axis, name in ((2, "height"), (3, "width")):
        if x.shape[axis] % step:
            raise ConfigError(f"input {name} {x.shape[axis]} is not divisible by 2**levels = {step}")
    skips = []
    for lvl in range(levels):
        x = conv_block(tower[lvl], x)
        skips.append(x)
        x, _ = maxpool2d(x)
    deepest = conv_block(tower[levels], x) if len(tower) > levels else None
    return skips, deepest


def fuse(primary_skips: Sequence[Tensor], secondary_skips: Sequence[Tensor]) -> List[Tensor]:
    """Level-wise elementwise product of the two towers' skip features."""
    if len(primary_skips) != len(secondary_skips):
        raise ShapeError(f"fuse: {len(primary_skips)} primary levels vs {len(secondary_skips)} secondary levels")
    return [mul(p, s) for p, s in zip(primary_skips, secondary_skips)]


def forward(params: ModelParams, left, clue, right) -> Tensor:
    """Predict normalized depth N x 1 x H x W in (0, 1).

    ``clue`` must be ``None`` when the model was configured without the clue
    channel.
    """
    cfg = params.config
    left, right = as_tensor(left), as_tensor(right)
    if left.shape != right.shape or len(left.shape) != 4 or left.shape[1] != 3:
        raise ShapeError(f"left {left.shape} and right {right.shape} must both be N x 3 x H x W")
    cfg.check_input_size(*left.shape[2:])
    if cfg.clue_enabled:
        if clue is None:
            raise ShapeError("model expects a depth clue but none was given")
        clue = as_tensor(clue)
        expected = (left.shape[0], 1, *left.shape[2:])
        if clue.shape != expected:
            raise ShapeError(f"clue shape {clue.shape} does not match expected {expected}")
        primary_in = concat_channels(left, clue)
    else:
        if clue is not None:
            raise ShapeError("model was built without a clue channel but a clue was given")
        primary_in = left

    L = cfg.levels
    blocks = params.blocks()
    p_skips, x = encoder_forward([blocks[f"primary.{i}"] for i in range(L + 1)], primary_in, L)
    s_skips, _ = encoder_forward([blocks[f"secondary.{i}"] for i in range(L)], right, L)
    fused = fuse(p_skips, s_skips)
    for lvl in reversed(range(L)):
        dec = blocks[f"decoder.{lvl}"]
        x = conv_transpose2d(x, dec["up.weight"], dec["up.bias"])
        x = concat_channels(x, fused[lvl])
        x = conv_block(dec, x)
    return sigmoid(conv2d(x, params["head.weight"], params["head.bias"], pad=0))


# --- checkpoint ------------------------------------------------------------
#
# Layout: ASCII header lines terminated by "END\n", then the raw tensors as
# little-endian float64 in header order.
#
#   TWOTOWER-CKPT 1
#   config {"levels": 3, ...}
#   seed 0
#   tensor <name> <d0>x<d1>x...
#   ...
#   END

_MAGIC = "TWOTOWER-CKPT 1"


def save_checkpoint(path, params: ModelParams) -> None:
    lines = [_MAGIC, "config " + json.dumps(asdict(params.config), sort_keys=True), f"seed {params.seed}"]
    for name, t in params.tensors.items():
        lines.append(f"tensor {name} {'x'.join(str(s) for s in t.shape)}")
    lines.append("END")
    header = ("\n".join(lines) + "\n").encode("ascii")
    payload = b"".join(np.ascontiguousarray(t.data, dtype="<f8").tobytes() for t in params.tensors.values())
    Path(path).write_bytes(header + payload)


def load_checkpoint(path) -> ModelParams:
    raw = Path(path).read_bytes()
    end = raw.find(b"\nEND\n")
    if not raw.startswith(_MAGIC.encode()) or end < 0:
        raise CheckpointError(f"{path}: not a checkpoint (missing magic or END marker)")
    try:
        lines = raw[:end].decode("ascii").split("\n")
        config = ModelConfig(**json.loads(lines[1].split(" ", 1)[1]))
        seed = int(lines[2].split(" ", 1)[1])
        entries = []
        for line in lines[3:]:
            tag, name, dims = line.split(" ")
            if tag != "tensor":
                raise ValueError(line)
            entries.append((name, tuple(int(d) for d in dims.split("x"))))
    except (ValueError, IndexError, TypeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed header ({exc})") from exc
    expected = layer_shapes(config)
    if entries != expected:
        raise CheckpointError(f"{path}: tensor list does not match config {config}")
    offset = end + len(b"\nEND\n")
    tensors = {}
    for name, shape in entries:
        nbytes = 8 * int(np.prod(shape))
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated payload at byte {offset} (tensor {name})")
        data = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape)
        tensors[name] = Tensor(data.astype(np.float64), requires_grad=True)
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes after payload")
    return ModelParams(config, tensors, seed)

