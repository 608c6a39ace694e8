"""Synthetic rectified stereo scenes, depth clues, splits and dataset files."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .imageio import read_pfm, read_ppm, write_pfm, write_ppm


@dataclass(frozen=True)
class Rect:
    """Axis-aligned textured plane; ``x``/``y`` are its left-view top-left corner."""

    x: int
    y: int
    width: int
    height: int
    depth: float
    texture_seed: int = 0


@dataclass(frozen=True)
class SceneSpec:
    height: int
    width: int
    background_depth: float
    bf: float
    rects: Tuple[Rect, ...] = ()

    def disparity(self, depth: float) -> int:
        return int(round(self.bf / depth))

    def validate(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError(f"image size must be positive, got {self.height}x{self.width}")
        limit = self.width / 4
        for label, z in [("background", self.background_depth)] + [(f"rect {i}", r.depth) for i, r in enumerate(self.rects)]:
            if not z > 0:
                raise ValueError(f"{label}: depth must be positive, got {z}")
            if self.disparity(z) >= limit:
                raise ValueError(f"{label}: disparity {self.disparity(z)} is not below W/4 = {limit}")
        for i, r in enumerate(self.rects):
            if r.width < 1 or r.height < 1 or r.x < 0 or r.y < 0 or r.x + r.width > self.width or r.y + r.height > self.height:
                raise ValueError(f"rect {i} {r} does not fit in a {self.height}x{self.width} image")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(
            height=d["height"],
            width=d["width"],
            background_depth=d["background_depth"],
            bf=d["bf"],
            rects=tuple(Rect(**r) for r in d["rects"]),
        )


@dataclass
class StereoSample:
    """One unit of training/evaluation data, all channel-first in [0, 1]."""

    left: np.ndarray  # 3 x H x W
    right: np.ndarray  # 3 x H x W
    gt_depth: np.ndarray  # 1 x H x W, in (0, 1]
    clue: np.ndarray  # 1 x H x W

    @property
    def size(self) -> Tuple[int, int]:
        return self.left.shape[1], self.left.shape[2]


@dataclass
class Rendering:
    """Rendered views plus the per-pixel bookkeeping used to check geometry."""

    left: np.ndarray
    right: np.ndarray
    depth: np.ndarray  # left-view Z-buffer, H x W
    left_ids: np.ndarray  # -1 for background, else rect index
    right_ids: np.ndarray
    disparities: List[int] = field(default_factory=list)


def value_noise(height: int, width: int, seed, cell: int = 4, detail: float = 0.4) -> np.ndarray:
    """3 x H x W texture: bilinear coarse noise plus per-pixel detail, in [0, 1]."""
    rng = np.random.default_rng(seed)
    gh, gw = height // cell + 2, width // cell + 2
    coarse = rng.random((3, gh, gw))
    yy, xx = np.mgrid[0:height, 0:width] / cell
    up = np.stack([ndimage.map_coordinates(c, [yy, xx], order=1) for c in coarse])
    fine = rng.random((3, height, width))
    return (1.0 - detail) * up + detail * fine


def _quantize(img: np.ndarray) -> np.ndarray:
    # images live on the 8-bit grid so they survive PPM round trips exactly
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def render(spec: SceneSpec, seed: int = 0) -> Rendering:
    spec.validate()
    H, W = spec.height, spec.width
    d_bg = spec.disparity(spec.background_depth)
    bg = _quantize(value_noise(H, W + d_bg, np.random.SeedSequence([seed, 0x5EED])))
    # left(x) = B(x), right(x) = B(x + d_bg), so left(x) = right(x - d_bg)
    left = bg[:, :, :W].copy()
    right = bg[:, :, d_bg : d_bg + W].copy()
    depth = np.full((H, W), float(spec.background_depth))
    left_ids = np.full((H, W), -1)
    right_ids = np.full((H, W), -1)
    disparities = []
    order = sorted(range(len(spec.rects)), key=lambda i: -spec.rects[i].depth)
    for i in order:
        r = spec.rects[i]
        d = spec.disparity(r.depth)
        tex = _quantize(value_noise(r.height, r.width, np.random.SeedSequence([seed, 1 + i, r.texture_seed])))
        rows = slice(r.y, r.y + r.height)
        left[:, rows, r.x : r.x + r.width] = tex
        depth[rows, r.x : r.x + r.width] = r.depth
        left_ids[rows, r.x : r.x + r.width] = i
        x0 = r.x - d
        lo, hi = max(x0, 0), min(x0 + r.width, W)
        if hi > lo:
            right[:, rows, lo:hi] = tex[:, :, lo - x0 : hi - x0]
            right_ids[rows, lo:hi] = i
    for r in spec.rects:
        disparities.append(spec.disparity(r.depth))
    return Rendering(left, right, depth, left_ids, right_ids, disparities)


def generate_scene(spec: SceneSpec, seed: int = 0, clue: Optional[np.ndarray] = None) -> StereoSample:
    """Render a stereo pair and its normalized depth ``Z_min / Z`` (near -> 1).

    The clue defaults to a degraded copy of the ground truth.
    """
    rend = render(spec, seed)
    gt = (rend.depth.min() / rend.depth)[None].astype(np.float32).astype(np.float64)
    if clue is None:
        clue = clue_degrade(gt, blur_radius=2, noise_sigma=0.05, seed=seed)
    return StereoSample(rend.left, rend.right, gt, clue)


def random_scene_spec(rng: np.random.Generator, height: int, width: int, max_rects: int = 4) -> SceneSpec:
    """Background plane plus 1..max_rects fronto-parallel rectangles."""
    z_near = 2.0
    bf = z_near * (width // 4 - 1) * 0.999
    bg_depth = float(rng.uniform(8.0, 12.0))
    rects = []
    for k in range(int(rng.integers(1, max_rects + 1))):
        w = int(rng.integers(max(1, width // 8), max(2, width // 2) + 1))
        h = int(rng.integers(max(1, height // 8), max(2, height // 2) + 1))
        x = int(rng.integers(0, width - w + 1))
        y = int(rng.integers(0, height - h + 1))
        z = float(rng.uniform(z_near, 0.9 * bg_depth))
        rects.append(Rect(x, y, w, h, round(z, 6), int(rng.integers(0, 2**31))))
    return SceneSpec(height, width, round(bg_depth, 6), round(bf, 6), tuple(rects))


# --- depth clues -----------------------------------------------------------


def _gray(img: np.ndarray) -> np.ndarray:
    return img.mean(axis=0) if img.ndim == 3 else img


def sad_costs(left: np.ndarray, right: np.ndarray, block: int, search: int) -> np.ndarray:
    """(search + 1) x H x W block sums of |left(x) - right(x - d)|, borders replicated."""
    L, R = _gray(left), _gray(right)
    H, W = L.shape
    r = block // 2
    costs = np.empty((search + 1, H, W))
    for d in range(search + 1):
        shifted = np.concatenate([np.repeat(R[:, :1], d, axis=1), R[:, : W - d]], axis=1)
        diff = np.pad(np.abs(L - shifted), r, mode="edge")
        costs[d] = sliding_window_view(diff, (block, block)).sum(axis=(-2, -1))
    return costs


def block_match_disparity(left, right, block: int = 5, search: int = 16, median: bool = True) -> np.ndarray:
    """Integer disparity per pixel minimizing SAD; ties go to the smaller shift."""
    if block < 3 or block % 2 == 0:
        raise ValueError(f"block must be odd and >= 3, got {block}")
    W = _gray(left).shape[1]
    if search < 0 or search >= W:
        raise ValueError(f"search range {search} must be in [0, W) with W = {W}")
    costs = sad_costs(left, right, block, search)
    disp = costs.argmin(axis=0)
    if median:
        disp = ndimage.median_filter(disp, size=3, mode="nearest")
    return disp


def clue_blockmatch(left, right, block: int = 5, search: int = 16) -> np.ndarray:
    """Block-matching disparity scaled to [0, 1] by the search range, 1 x H x W."""
    disp = block_match_disparity(left, right, block, search)
    return (disp / max(search, 1))[None].astype(np.float32).astype(np.float64)


def clue_degrade(gt_depth, blur_radius: int = 2, noise_sigma: float = 0.05, seed: int = 0) -> np.ndarray:
    """Box-blurred, noise-corrupted copy of the ground truth, clamped to [0, 1]."""
    gt = np.asarray(gt_depth, dtype=np.float64)
    out = gt
    if blur_radius > 0:
        out = ndimage.uniform_filter(gt, size=[1] * (gt.ndim - 2) + [2 * blur_radius + 1] * 2, mode="nearest")
    if noise_sigma > 0:
        out = out + np.random.default_rng(seed).normal(0.0, noise_sigma, size=gt.shape)
    return np.clip(out, 0.0, 1.0).astype(np.float32).astype(np.float64)


def split(samples: Sequence, ratio: float = 0.9, seed: int = 0) -> Tuple[list, list]:
    """Deterministic shuffled train/test partition."""
    if len(samples) < 10:
        raise ValueError(f"need at least 10 samples to split, got {len(samples)}")
    perm = np.random.default_rng(seed).permutation(len(samples))
    n_train = int(round(ratio * len(samples)))
    return [samples[i] for i in perm[:n_train]], [samples[i] for i in perm[n_train:]]


# --- dataset directory -----------------------------------------------------

SUBDIRS = ("left", "right", "depth", "clue")


def make_dataset(count: int, size: int, seed: int = 0, clue_mode: str = "degrade") -> Tuple[List[StereoSample], List[SceneSpec]]:
    """``count`` random square scenes; sample ``i`` uses seed stream ``(seed, i)``."""
    samples, specs = [], []
    for i in range(count):
        ss = np.random.SeedSequence([seed, i])
        spec = random_scene_spec(np.random.default_rng(ss), size, size)
        sample_seed = int(ss.generate_state(1)[0])
        sample = generate_scene(spec, sample_seed)
        if clue_mode == "blockmatch":
            sample.clue = clue_blockmatch(sample.left, sample.right, search=size // 4)
        elif clue_mode != "degrade":
            raise ValueError(f"unknown clue mode {clue_mode!r}")
        samples.append(sample)
        specs.append(spec)
    return samples, specs


def save_dataset(out_dir, samples: Sequence[StereoSample], specs: Optional[Sequence[SceneSpec]] = None, meta: Optional[dict] = None) -> Path:
    out = Path(out_dir)
    for sub in SUBDIRS:
        (out / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        name = f"{i:04d}"
        write_ppm(out / "left" / f"{name}.ppm", s.left)
        write_ppm(out / "right" / f"{name}.ppm", s.right)
        write_pfm(out / "depth" / f"{name}.pfm", s.gt_depth)
        write_pfm(out / "clue" / f"{name}.pfm", s.clue)
        entry = {"id": name}
        if specs is not None:
            entry["scene"] = specs[i].to_dict()
        entries.append(entry)
    manifest = {"count": len(samples), **(meta or {}), "samples": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def load_dataset(root) -> List[StereoSample]:
    root = Path(root)
    names = sorted(p.stem for p in (root / "left").glob("*.ppm"))
    samples = []
    for name in names:
        samples.append(
            StereoSample(
                read_ppm(root / "left" / f"{name}.ppm"),
                read_ppm(root / "right" / f"{name}.ppm"),
                read_pfm(root / "depth" / f"{name}.pfm"),
                read_pfm(root / "clue" / f"{name}.pfm"),
            )
        )
    return samples


def stack(samples: Sequence[StereoSample]) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Batch arrays (left, right, gt, clue), each N x C x H x W."""
    return (
        np.stack([s.left for s in samples]),
        np.stack([s.right for s in samples]),
        np.stack([s.gt_depth for s in samples]),
        np.stack([s.clue for s in samples]),
    )
