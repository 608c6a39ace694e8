"""Command-line entry point: gen-data, train, eval, infer, gradcheck, ablate."""

from __future__ import annotations

import argparse
import csv
import io
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import data as D
from .imageio import read_pfm, read_ppm, write_pfm, write_pgm
from .metrics import evaluate, evaluate_maps, format_table, to_csv
from .model import CheckpointError, ConfigError, ModelConfig, build, load_checkpoint, param_count, save_checkpoint
from .train import TrainConfig, ablate_clue, predict, train

CLUE_MODES = ("degrade", "blockmatch", "none")

# flag dest -> (type, default); flags override the --config file, which overrides these
DEFAULTS: Dict[str, tuple] = {
    "seed": (int, 0),
    "out": (str, None),
    "levels": (int, 3),
    "base_channels": (int, 8),
    "clue_mode": (str, "degrade"),
    "epochs": (int, 15),
    "lr": (float, 1e-3),
    "batch": (int, 4),
    "count": (int, 20),
    "size": (int, 64),
    "data": (str, None),
    "checkpoint": (str, None),
    "predictions": (str, None),
    "left": (str, None),
    "right": (str, None),
    "clue": (str, None),
    "seeds": (str, "0,1,2"),
    "baseline": (str, "constant"),
    "gradcheck_seeds": (int, 10),
}


class UsageError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--levels", type=int)
    p.add_argument("--base-channels", type=int, dest="base_channels")
    p.add_argument("--clue-mode", choices=CLUE_MODES, dest="clue_mode")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twotower", description="Two-tower UNet stereo depth estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic stereo dataset")
    _add_common(p)
    p.add_argument("--count", type=int)
    p.add_argument("--size", type=int)

    p = sub.add_parser("train", help="train on a dataset directory")
    _add_common(p)
    p.add_argument("--data")

    p = sub.add_parser("eval", help="evaluate a checkpoint (or saved predictions) on a dataset")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="directory of NNNN.pfm depth maps to score instead of a checkpoint")

    p = sub.add_parser("infer", help="predict depth for one stereo pair")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--left")
    p.add_argument("--right")
    p.add_argument("--clue", help="clue PFM; computed by block matching when omitted")

    p = sub.add_parser("gradcheck", help="finite-difference check of every operator and the model")
    _add_common(p)
    p.add_argument("--gradcheck-seeds", type=int, dest="gradcheck_seeds")

    p = sub.add_parser("ablate", help="with-clue vs baseline-clue training over several seeds")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--baseline", choices=("constant", "none"))
    return parser


def read_config_file(path) -> Dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(args: argparse.Namespace) -> Dict[str, object]:
    """Merge flags, config file and defaults into one flat RunConfig dict."""
    file_cfg = read_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = set(file_cfg) - set(DEFAULTS)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg: Dict[str, object] = {"command": args.command}
    for key, (typ, default) in DEFAULTS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
        elif key in file_cfg:
            try:
                cfg[key] = typ(file_cfg[key])
            except ValueError:
                raise UsageError(f"config key {key}: cannot parse {file_cfg[key]!r}") from None
        else:
            cfg[key] = default
    if cfg["clue_mode"] not in CLUE_MODES:
        raise UsageError(f"clue_mode must be one of {CLUE_MODES}")
    return cfg


def validate(cfg: Dict[str, object]) -> None:
    """Reject inconsistent settings before anything touches the disk."""
    cmd = cfg["command"]
    if cfg["levels"] < 1 or cfg["base_channels"] < 1:
        raise UsageError("--levels and --base-channels must be >= 1")
    if cfg["epochs"] < 1 or cfg["batch"] < 1 or cfg["lr"] < 0:
        raise UsageError("--epochs and --batch must be >= 1 and --lr >= 0")
    needs_out = {"gen-data", "train", "infer", "ablate"}
    if cmd in needs_out and not cfg["out"]:
        raise UsageError(f"{cmd} needs --out")
    if cmd == "gen-data":
        if cfg["clue_mode"] == "none":
            raise UsageError("gen-data writes a clue for every sample; --clue-mode none is not allowed here")
        if cfg["count"] < 0:
            raise UsageError("--count must be >= 0")
        if cfg["size"] < 8 or cfg["size"] % 2**cfg["levels"]:
            raise UsageError(f"--size {cfg['size']} must be >= 8 and divisible by 2**levels = {2 ** cfg['levels']}")
    if cmd in ("train", "eval", "ablate") and not cfg["data"]:
        raise UsageError(f"{cmd} needs --data")
    if cmd == "eval" and bool(cfg["checkpoint"]) == bool(cfg["predictions"]):
        raise UsageError("eval needs exactly one of --checkpoint or --predictions")
    if cmd == "infer" and not (cfg["checkpoint"] and cfg["left"] and cfg["right"]):
        raise UsageError("infer needs --checkpoint, --left and --right")
    if cmd == "ablate":
        seeds = _seeds(cfg["seeds"])
        if len(seeds) < 3:
            raise UsageError("ablate needs at least 3 seeds")
        if cfg["clue_mode"] == "none":
            raise UsageError("ablate compares clue arms; --clue-mode none is not allowed here")


def _seeds(text) -> List[int]:
    try:
        return [int(s) for s in str(text).split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {text!r}") from None


def write_run_config(out: Path, cfg: Dict[str, object]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    # readable back through --config
    lines = [f"# twotower {cfg['command']}"]
    lines += [f"{k}={v}" for k, v in sorted(cfg.items()) if k != "command" and v is not None]
    (out / "run.cfg").write_text("\n".join(lines) + "\n")


def _model_config(cfg) -> ModelConfig:
    return ModelConfig(cfg["levels"], cfg["base_channels"], in_primary=3 if cfg["clue_mode"] == "none" else 4)


def _train_config(cfg) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["epochs"], lr=cfg["lr"], batch_size=cfg["batch"], seed=cfg["seed"], clue_enabled=cfg["clue_mode"] != "none"
    )


def _load_data(cfg, clue_mode: str) -> List[D.StereoSample]:
    samples = D.load_dataset(cfg["data"])
    if clue_mode == "blockmatch":
        for s in samples:
            s.clue = D.clue_blockmatch(s.left, s.right, search=s.size[1] // 4)
    return samples


def cmd_gen_data(cfg) -> int:
    out = Path(cfg["out"])
    samples, specs = D.make_dataset(cfg["count"], cfg["size"], cfg["seed"], cfg["clue_mode"])
    D.save_dataset(out, samples, specs, meta={"seed": cfg["seed"], "size": cfg["size"], "clue_mode": cfg["clue_mode"]})
    write_run_config(out, cfg)
    print(f"wrote {len(samples)} samples to {out}")
    for i, spec in enumerate(specs):
        print(f"  {i:04d}: background Z={spec.background_depth}, Bf={spec.bf}, {len(spec.rects)} rects")
    return 0


def _check_dims(model_cfg: ModelConfig, samples, what: str) -> None:
    if not samples:
        raise UsageError(f"{what} contains no samples")
    h, w = samples[0].size
    step = 2**model_cfg.levels
    if h % step or w % step:
        raise UsageError(
            f"model with levels={model_cfg.levels} needs H, W divisible by {step}, but {what} has samples of {h}x{w}"
        )


def cmd_train(cfg) -> int:
    model_cfg = _model_config(cfg)
    samples = _load_data(cfg, cfg["clue_mode"])
    _check_dims(model_cfg, samples, cfg["data"])
    out = Path(cfg["out"])
    write_run_config(out, cfg)
    if len(samples) >= 10:
        train_set, test_set = D.split(samples, 0.9, cfg["seed"])
    else:
        train_set, test_set = samples, []
    params = build(model_cfg, cfg["seed"])
    trainable, total = param_count(params)
    print(f"model {model_cfg}: {trainable} trainable / {total} total parameters")
    result = train(params, train_set, test_set, _train_config(cfg))
    save_checkpoint(out / "checkpoint.ckpt", result.best)
    (out / "loss.csv").write_text(result.curve_csv())
    for step, tr, va in result.curve:
        print(f"step {step:6d}  train L1 {tr:.5f}  val L1 {va:.5f}")
    return 0


def cmd_eval(cfg) -> int:
    if cfg["predictions"]:
        samples = D.load_dataset(cfg["data"])
        names = sorted(p.stem for p in (Path(cfg["data"]) / "left").glob("*.ppm"))
        preds = []
        for name in names:
            path = Path(cfg["predictions"]) / f"{name}.pfm"
            if not path.exists():
                raise UsageError(f"missing prediction {path}")
            preds.append(read_pfm(path))
        for p, s in zip(preds, samples):
            if p.shape != s.gt_depth.shape:
                raise UsageError(f"prediction shape {p.shape} does not match dataset depth shape {s.gt_depth.shape}")
        metrics = evaluate_maps(preds, [s.gt_depth for s in samples])
        label = "predictions"
    else:
        params = load_checkpoint(cfg["checkpoint"])
        mode = cfg["clue_mode"] if params.config.clue_enabled else "none"
        if params.config.clue_enabled and cfg["clue_mode"] == "none":
            raise UsageError("checkpoint expects a clue channel but --clue-mode none was given")
        samples = _load_data(cfg, mode)
        _check_dims(params.config, samples, cfg["data"])
        metrics = evaluate(params, samples)
        label = "2T-UNet"
    print(format_table([metrics], [label]))
    if cfg["out"]:
        out = Path(cfg["out"])
        write_run_config(out, cfg)
        (out / "metrics.csv").write_text(to_csv([metrics], [label]))
        (out / "metrics.txt").write_text(format_table([metrics], [label]) + "\n")
    return 0


def cmd_infer(cfg) -> int:
    params = load_checkpoint(cfg["checkpoint"])
    left, right = read_ppm(cfg["left"]), read_ppm(cfg["right"])
    if left.shape != right.shape:
        raise UsageError(f"left {left.shape} and right {right.shape} differ in shape")
    h, w = left.shape[1:]
    step = 2**params.config.levels
    if h % step or w % step:
        raise UsageError(f"checkpoint (levels={params.config.levels}) needs H, W divisible by {step}; images are {h}x{w}")
    clue = None
    if params.config.clue_enabled:
        clue = read_pfm(cfg["clue"]) if cfg["clue"] else D.clue_blockmatch(left, right, search=w // 4)
        if clue.shape != (1, h, w):
            raise UsageError(f"clue shape {clue.shape} does not match images {(1, h, w)}")
    sample = D.StereoSample(left, right, np.ones((1, h, w)), clue if clue is not None else np.zeros((1, h, w)))
    out = Path(cfg["out"])
    write_run_config(out, cfg)
    t0 = time.perf_counter()
    (depth,) = predict(params, [sample])
    elapsed = time.perf_counter() - t0
    write_pfm(out / "depth.pfm", depth)
    write_pgm(out / "depth.pgm", depth)
    print(f"inference time: {elapsed:.3f} s ({h}x{w})")
    return 0


def cmd_gradcheck(cfg) -> int:
    from .gradcheck import run_suite

    rows = run_suite(seeds=range(cfg["gradcheck_seeds"]))
    width = max(len(r[0]) for r in rows)
    print(f"{'operator':<{width}}  {'max rel err':>12}  result")
    for name, err, ok in rows:
        print(f"{name:<{width}}  {err:>12.3e}  {'PASS' if ok else 'FAIL'}")
    if cfg["out"]:
        write_run_config(Path(cfg["out"]), cfg)
    return 0 if all(ok for _, _, ok in rows) else 1


def cmd_ablate(cfg) -> int:
    samples = _load_data(cfg, cfg["clue_mode"])
    _check_dims(_model_config(cfg), samples, cfg["data"])
    out = Path(cfg["out"])
    write_run_config(out, cfg)
    records = ablate_clue(
        samples,
        _train_config(cfg),
        _seeds(cfg["seeds"]),
        levels=cfg["levels"],
        base_channels=cfg["base_channels"],
        baseline=cfg["baseline"],
    )
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", "clue_test_l1", f"{cfg['baseline']}_test_l1"])
    for r in records:
        w.writerow([r.seed, repr(r.clue_l1), repr(r.baseline_l1)])
        print(f"seed {r.seed}: with clue {r.clue_l1:.5f}  {cfg['baseline']} {r.baseline_l1:.5f}")
    (out / "ablation.csv").write_text(buf.getvalue())
    print(f"mean: with clue {np.mean([r.clue_l1 for r in records]):.5f}  {cfg['baseline']} {np.mean([r.baseline_l1 for r in records]):.5f}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        validate(cfg)
        return COMMANDS[cfg["command"]](cfg)
    except (UsageError, ConfigError, CheckpointError, ValueError, OSError) as exc:
        print(f"twotower {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
