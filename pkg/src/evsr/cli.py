"""Command-line entry point.

One tool, seven subcommands: synth, stack, augment, train, eval, infer,
verify. Run configuration comes from defaults, overridden by --config FILE,
overridden by repeatable --opt key=value flags (and --seed as a shorthand
for --opt seed=N).

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 resource
ceiling, 4 numerical failure. Failures print one line to stderr:
``ERROR category=<category>: <message>``.

The env var RMF_THREADS caps numpy's internal parallelism; it is applied
before numpy is first imported, which is why the heavyweight imports in
this module all live inside the command functions.
"""

from __future__ import annotations

import argparse
import os
import sys


def _cap_threads() -> None:
    n = os.environ.get("RMF_THREADS", "").strip()
    if not n:
        return
    if not n.isdigit() or int(n) < 1:
        print(f"ERROR category=config_error: RMF_THREADS must be a positive "
              f"integer, got {n!r}", file=sys.stderr)
        raise SystemExit(1)
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ[var] = n


class _Parser(argparse.ArgumentParser):
    """argparse, but usage errors exit 1 to match the exit-code contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"ERROR category=usage: {message}\n")


def _add_config_flags(p) -> None:
    p.add_argument("--config", metavar="FILE", default=None,
                   help="run-config file of key = value lines")
    p.add_argument("--opt", metavar="KEY=VALUE", action="append", default=[],
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, default=None,
                   help="shorthand for --opt seed=N")


def _load_config(args):
    from .config import RunConfig
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    cfg.apply_overrides(args.opt)
    if args.seed is not None:
        cfg.set("seed", args.seed)
    return cfg


def build_parser() -> _Parser:
    parser = _Parser(prog="evsr",
                     description="Event-stream super-resolution toolbox")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="synthesize a toy event stream")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output event file")
    p.add_argument("--format", choices=("text", "binary"), default="binary")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stack", help="window a stream and dump count images")
    _add_config_flags(p)
    p.add_argument("--in", dest="input", required=True, help="event file")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_stack)

    p = sub.add_parser("augment", help="apply one augmentation to a stream")
    _add_config_flags(p)
    p.add_argument("--in", dest="input", required=True, help="event file")
    p.add_argument("--out", required=True, help="output event file")
    p.add_argument("--format", choices=("text", "binary"), default="binary")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train on synthesized (or given) streams")
    _add_config_flags(p)
    p.add_argument("--in", dest="inputs", action="append", default=[],
                   help="train on this event file instead of synthesized "
                        "scenes (repeatable)")
    p.add_argument("--checkpoint", default="checkpoint.rmf1")
    p.add_argument("--log", default="loss_log.txt")
    p.add_argument("--quiet", action="store_true",
                   help="suppress per-step progress lines")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint against bicubic")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="inputs", action="append", default=[],
                   help="evaluate on this event file (repeatable)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="super-resolve a stream with a checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True, help="LR event file")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("verify", help="run the built-in self-check suites")
    _add_config_flags(p)
    p.add_argument("--fast", action="store_true",
                   help="fewer randomized cases (smoke run)")
    p.set_defaults(func=cmd_verify)

    return parser


# -- commands -----------------------------------------------------------------


def cmd_synth(args) -> int:
    from .eventio import write_events_binary, write_events_text
    from .rng import derive_seed
    from .toydata import synth_toy_stream

    cfg = _load_config(args)
    spec = cfg.to_scene_spec(seed=derive_seed(cfg.get("seed"), "synth"))
    stream = synth_toy_stream(spec)
    writer = write_events_binary if args.format == "binary" else write_events_text
    writer(args.out, stream)
    dur = (stream.t_last - stream.t_first) if len(stream) else 0
    print(f"synth events={len(stream)} duration_us={dur} "
          f"geometry={stream.width}x{stream.height} pattern={spec.pattern} "
          f"out={args.out}")
    return 0


def _dump_window(out_dir: str, index: int, tag: str, image) -> None:
    from .eventio import write_count_image_binary, write_count_image_pgm
    base = os.path.join(out_dir, f"window{index:04d}.{tag}")
    write_count_image_pgm(base + ".pgm", image)
    write_count_image_binary(base + ".eci", image)


def cmd_stack(args) -> int:
    from .eventio import read_events
    from .events import make_event_frame, partition_windows, stack_count_image

    cfg = _load_config(args)
    stream = read_events(args.input)
    policy = cfg.to_window_policy()
    os.makedirs(args.out_dir, exist_ok=True)
    windows = partition_windows(stream, policy)
    for i, win in enumerate(windows):
        sub = stream.slice(win.start, win.stop)
        _dump_window(args.out_dir, i, "pos", stack_count_image(sub, "positive"))
        _dump_window(args.out_dir, i, "neg", stack_count_image(sub, "negative"))
        _dump_window(args.out_dir, i, "frame", make_event_frame(sub))
        print(f"window={i} t_start={win.t_start} t_end={win.t_end} "
              f"events={win.stop - win.start}")
    print(f"stack windows={len(windows)} out_dir={args.out_dir}")
    return 0


def cmd_augment(args) -> int:
    from .augment import augment
    from .eventio import read_events, write_events_binary, write_events_text

    cfg = _load_config(args)
    stream = read_events(args.input)
    spec = cfg.to_augment_spec()
    out = augment(stream, spec)
    writer = write_events_binary if args.format == "binary" else write_events_text
    writer(args.out, out)
    print(f"augment method={spec.method} seed={spec.seed} "
          f"events_in={len(stream)} events_out={len(out)} out={args.out}")
    return 0


def _dataset_items(cfg, paths, label: str, count_key: str):
    """Sequence sources from files, or freshly synthesized scenes."""
    from .eventio import read_events
    from .rng import derive_seed
    from .train import TrainItem, make_toy_items

    policy = cfg.to_window_policy()
    factor = cfg.get("model.scale")
    if paths:
        return [TrainItem(stream=read_events(p), factor=factor, policy=policy)
                for p in paths]
    scene = cfg.to_scene_spec()
    return make_toy_items(cfg.get(count_key), factor, scene, policy,
                          seed=derive_seed(cfg.get("seed"), label))


def cmd_train(args) -> int:
    from .train import train

    cfg = _load_config(args)
    mcfg = cfg.to_model_config()
    items = _dataset_items(cfg, args.inputs, "data.train", "data.train_items")
    tcfg = cfg.to_train_config(checkpoint_path=args.checkpoint, log_path=args.log)

    progress = None
    if not args.quiet:
        def progress(step, loss, wall_ms):
            print(f"step={step} loss={loss:.9e} wall_ms={wall_ms:.1f}")

    result = train(items, mcfg, tcfg, progress=progress)
    print(f"train steps={tcfg.steps} final_loss={result.losses[-1]:.9e} "
          f"checkpoint={args.checkpoint} log={args.log}")
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .train import evaluate

    cfg = _load_config(args)
    params, mcfg, _ = load_checkpoint(args.checkpoint)
    items = _dataset_items(cfg, args.inputs, "data.eval", "data.eval_items")
    report = evaluate(params, mcfg, items,
                      sequence_length=cfg.get("train.sequence_length"),
                      bn_mode=cfg.get("eval.bn_mode"))
    for rec in report.per_sequence:
        print(f"sequence item={rec['item']} scale={rec['scale']} "
              f"model_mse={rec['model_mse']:.9e} "
              f"bicubic_mse={rec['bicubic_mse']:.9e}")
    for line in report.lines():
        print(line)
    return 0


def cmd_infer(args) -> int:
    import numpy as np

    from .checkpoint import load_checkpoint
    from .eventio import read_events
    from .events import (EventCountImage, make_event_frame, partition_windows,
                         stack_count_image)
    from .model import RecurrentState, rmfnet_step
    from .tensor import Tensor, no_grad

    cfg = _load_config(args)
    params, mcfg, _ = load_checkpoint(args.checkpoint)
    stream = read_events(args.input)
    policy = cfg.to_window_policy()
    seq_len = cfg.get("train.sequence_length")
    windows = partition_windows(stream, policy)
    os.makedirs(args.out_dir, exist_ok=True)

    state = None
    with no_grad():
        for i, win in enumerate(windows):
            if i % seq_len == 0:  # match the training regime: fresh state per sequence
                state = RecurrentState.zeros(mcfg, stream.height, stream.width)
            sub = stream.slice(win.start, win.stop)
            pos = stack_count_image(sub, "positive").counts.astype(np.float32)
            neg = stack_count_image(sub, "negative").counts.astype(np.float32)
            frame = make_event_frame(sub).counts.astype(np.float32)
            scale = max(1.0, pos.max(), neg.max(), frame.max()) \
                if mcfg.normalize_input else 1.0
            o_t, state = rmfnet_step(
                Tensor(pos[None] / scale), Tensor(neg[None] / scale),
                Tensor(frame[None] / scale), state, params, mcfg, training=False)
            # back to count space: undo the input normalization and round
            est = np.maximum(0.0, o_t.data) * scale
            counts = np.rint(est).astype(np.int64)
            _dump_window(args.out_dir, i, "sr_pos",
                         EventCountImage(counts[0], "positive"))
            _dump_window(args.out_dir, i, "sr_neg",
                         EventCountImage(counts[1], "negative"))
            print(f"window={i} events={win.stop - win.start} "
                  f"sr_mass={int(counts.sum())}")
    print(f"infer windows={len(windows)} scale={mcfg.scale} out_dir={args.out_dir}")
    return 0


def cmd_verify(args) -> int:
    from .errors import NumericalError
    from .verify import run_all

    cases = 200 if args.fast else 1000
    seeds = 2000 if args.fast else 10000
    results = run_all(conservation_cases=cases, freq_seeds=seeds)
    failed = []
    for suite in results:
        status = "pass" if suite.passed else "FAIL"
        print(f"suite={suite.name} status={status}")
        for line in suite.details:
            print(f"  {line}")
        if not suite.passed:
            failed.append(suite.name)
    if failed:
        raise NumericalError(f"verify failed: {', '.join(failed)}")
    print("verify: all suites passed")
    return 0


def main(argv=None) -> int:
    _cap_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    from .errors import EvsrError
    try:
        return args.func(args)
    except EvsrError as e:
        print(f"ERROR category={e.category}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"ERROR category=data_error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
