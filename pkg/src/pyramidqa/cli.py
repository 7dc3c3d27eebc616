"""Command line entry points: gen-data, train, eval, gradcheck.

Every RunConfig field doubles as a ``--flag`` on ``train`` and
``gradcheck`` (values go through the same coercion as config files), and
``--config`` loads a file first so flags override it.  Failures mapped
to exit codes: 1 usage/contract, 2 numeric, 3 file format.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from typing import Optional, Sequence

import numpy as np

from .config import FIELD_TYPES, RunConfig, _coerce, load_config
from .data.container import gen_dataset, load_dataset
from .errors import ContractError, PyramidError
from .evaluate import dump_attention, evaluate_split, metrics_from_outputs, predict_split
from .gradcheck import grad_check_groups
from .model import PyramidModel
from .rng import DOMAIN_CHECK, Rng
from .training import load_model_for_eval, train

GRADCHECK_TOLERANCE = 1e-4
# Batch statistics over two rows can have tiny variances, which makes the
# loss curvature huge; a smaller probe step keeps truncation error of the
# central differences well under the tolerance while staying above
# float64 rounding noise.
GRADCHECK_STEP = 1e-5


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, dest=f.name, default=None, metavar="V",
                            help=f"override {f.name}")


def _config_from_args(args: argparse.Namespace,
                      base: Optional[RunConfig] = None) -> RunConfig:
    if args.config:
        cfg = load_config(args.config, base)
    else:
        cfg = base if base is not None else RunConfig()
    for name, kind in FIELD_TYPES.items():
        raw = getattr(args, name, None)
        if raw is not None:
            setattr(cfg, name, _coerce(name, kind, str(raw)))
    return cfg.validate()


def _cmd_gen_data(args: argparse.Namespace) -> int:
    sizes = {}
    for split, n in (("train", args.train), ("val", args.val), ("test", args.test)):
        if n > 0:
            sizes[split] = n
    manifest = gen_dataset(args.task, args.out, args.seed, sizes,
                           args.question_len, check=not args.no_check)
    counts = ", ".join(f"{k}={v}" for k, v in manifest["sizes"].items())
    print(f"wrote {args.out}: task={manifest['task']} {counts} "
          f"vocab={len(manifest['vocab'])}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    result = train(cfg, args.data, args.out, resume=args.resume, log=print)
    print(f"done: epochs={result.epochs_run} best_val_loss="
          f"{result.best_val_loss:.10g} best_val_metric={result.best_val_metric:.10g}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    model = load_model_for_eval(args.ckpt)
    cfg = model.cfg
    _, splits = load_dataset(args.data)
    if args.split not in splits:
        raise ContractError(f"dataset has no split {args.split!r}")
    split = splits[args.split]
    outputs = predict_split(model, split, cfg)
    metrics = metrics_from_outputs(outputs, split.labels, cfg)
    if args.dump_attention:
        dump_attention(model, split, cfg, sys.stdout)
    for key in sorted(metrics):
        print(f"{key}\t{metrics[key]:.10g}")
    return 0


def probe_config(task: str = "open_ended") -> RunConfig:
    """Smallest config the pyramid supports; float64 for clean probes."""
    return RunConfig(task=task, levels=2, d_model=8, heads=2, time_steps=4,
                     frame_hw=8, enc_channels=(4, 4, 4), vocab_size=16,
                     question_len=4, num_candidates=2, batch_size=2,
                     float_width=64, augment=False)


def _gradcheck_batch(cfg: RunConfig, rng: Rng):
    b = cfg.batch_size
    frames = rng.uniform(0.0, 1.0, (b, cfg.time_steps, cfg.frame_hw, cfg.frame_hw, 3),
                         dtype=np.float64)
    shape = (b, cfg.num_candidates, cfg.question_len) if cfg.task == "multi_choice" \
        else (b, cfg.question_len)
    tokens = np.asarray(rng.integers(0, cfg.vocab_size, shape), dtype=np.int64)
    if cfg.task == "open_ended":
        labels = np.asarray(rng.integers(0, cfg.n_outputs(), b), dtype=np.int64)
    elif cfg.task == "count":
        labels = rng.uniform(float(cfg.count_lo), float(cfg.count_hi), b)
    else:
        labels = np.asarray(rng.integers(0, cfg.num_candidates, b), dtype=np.int64)
    return frames, tokens, labels


def run_gradcheck(cfg: RunConfig, tolerance: float = GRADCHECK_TOLERANCE,
                  log=print) -> float:
    """Finite-difference check of every parameter group; returns max error."""
    if cfg.float_width != 64:
        raise ContractError("gradient checking needs float_width = 64")
    model = PyramidModel(cfg)
    rng = Rng(cfg.seed, DOMAIN_CHECK)
    frames, tokens, labels = _gradcheck_batch(cfg, rng)
    errors = grad_check_groups(model.loss_closure(frames, tokens, labels),
                               model.params, step=GRADCHECK_STEP)
    worst = 0.0
    for name in sorted(errors):
        err = errors[name]
        worst = max(worst, err)
        status = "ok" if err < tolerance else "FAIL"
        log(f"{name}\t{err:.3e}\t{status}")
    log(f"max\t{worst:.3e}")
    return worst


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    base = RunConfig(float_width=64) if args.full_size else probe_config()
    cfg = _config_from_args(args, base)
    worst = run_gradcheck(cfg, args.tolerance)
    if worst >= args.tolerance:
        raise ContractError(
            f"gradient check failed: max error {worst:.3e} >= {args.tolerance}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pyramidqa",
                                     description="pyramidal video question answering")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    g.add_argument("--task", required=True,
                   choices=("open_ended", "count", "multi_choice"))
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--train", type=int, default=1024)
    g.add_argument("--val", type=int, default=256)
    g.add_argument("--test", type=int, default=256)
    g.add_argument("--question-len", type=int, default=10)
    g.add_argument("--no-check", action="store_true",
                   help="skip pixel-level label verification")
    g.set_defaults(func=_cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", action="store_true",
                   help="continue from <out>/last.ckpt")
    _add_config_flags(t)
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--dump-attention", action="store_true")
    e.set_defaults(func=_cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient check")
    c.add_argument("--tolerance", type=float, default=GRADCHECK_TOLERANCE)
    c.add_argument("--full-size", action="store_true",
                   help="use the config defaults instead of the tiny probe model")
    _add_config_flags(c)
    c.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PyramidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
