"""Training and evaluation over windowed event sequences.

One training step draws a batch of sequence sources, optionally applies a
freshly-seeded augmentation to each source's HR stream, re-windows it (so
input and target stay paired), runs the recurrent model over the T windows
of the first resulting sequence, and backpropagates the summed per-step
MSE. The recurrent state is carried with gradients inside a sequence and
reset to zero between sequences.

Determinism: every random choice (item order, per-step augmentation seeds,
init) is derived from TrainConfig.seed via labeled streams, so identical
configs give bit-identical parameters and loss logs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .augment import AugmentSpec, augment
from .baseline import bicubic_baseline
from .checkpoint import save_checkpoint
from .errors import ConfigError, DataError, NumericalError
from .events import EventStream, WindowPolicy, build_sequence
from .model import (ModelConfig, ModelParams, init_params, rmfnet_step,
                    sequence_loss, window_tensors, RecurrentState)
from .rng import derive_seed, make_rng
from .tensor import mse, no_grad, scale
from .toydata import PATTERNS, ToySceneSpec, synth_toy_stream


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    steps: int = 200
    sequence_length: int = 9
    batch_size: int = 1
    augment_spec: AugmentSpec | None = None
    eval_interval: int = 0  # 0: checkpoint only at the end
    checkpoint_path: str = ""
    log_path: str = ""
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.sequence_length < 1:
            raise ConfigError(f"sequence length must be >= 1, "
                              f"got {self.sequence_length}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        return self


@dataclass
class TrainItem:
    """One sequence source: an HR stream plus how to window and downsample it."""

    stream: EventStream
    factor: int
    policy: WindowPolicy


def item_sequence(item: TrainItem, length: int,
                  aug: AugmentSpec | None = None):
    """First full sequence from the (optionally augmented) stream, or None."""
    stream = item.stream if aug is None else augment(item.stream, aug)
    seqs = build_sequence(stream, item.factor, item.policy, length)
    return seqs[0] if seqs else None


class Adam:
    """Adam with bias correction; iterates parameters in sorted-name order."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: ModelParams) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name in params.names():
            tens = params.tensors[name]
            if tens.grad is None:
                continue
            g = tens.grad
            if name not in self.m:
                self.m[name] = np.zeros_like(tens.data)
                self.v[name] = np.zeros_like(tens.data)
            self.m[name] += (1.0 - self.beta1) * (g - self.m[name])
            self.v[name] += (1.0 - self.beta2) * (g * g - self.v[name])
            mhat = self.m[name] / b1c
            vhat = self.v[name] / b2c
            tens.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _first_bad_param(params: ModelParams) -> str:
    for name in params.names():
        t = params.tensors[name]
        if not np.all(np.isfinite(t.data)):
            return name
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            return name
    return "<none: loss path only>"


@dataclass
class TrainResult:
    params: ModelParams
    losses: list
    log_lines: list


def train(items, model_config: ModelConfig, config: TrainConfig,
          params: ModelParams | None = None, progress=None) -> TrainResult:
    """Run the optimization loop; returns final parameters and loss curve.

    Log lines hold (step, loss, lr) only; wall-clock timing goes to the
    optional progress callback so log files stay bit-identical across runs.

    Pass ``params`` to continue from earlier parameters. Optimizer moment
    estimates always start fresh, so chained calls behave as warm
    restarts; on small datasets a few restarted phases routinely fit far
    faster than one long run.
    """
    config.validate()
    model_config.validate()
    if not items:
        raise DataError("training needs at least one sequence source")
    for i, item in enumerate(items):
        if item_sequence(item, config.sequence_length) is None:
            raise DataError(
                f"item {i} cannot produce a full sequence of "
                f"{config.sequence_length} windows")

    if params is None:
        params = init_params(model_config, seed=derive_seed(config.seed, "init"))
    opt = Adam(lr=config.learning_rate)
    order_rng = make_rng(config.seed, "train.order")
    aug = config.augment_spec
    if aug is not None and aug.method == "none":
        aug = None

    losses, log_lines = [], []
    for step in range(1, config.steps + 1):
        t0 = time.perf_counter()
        params.zero_grad()
        step_loss = 0.0
        for b in range(config.batch_size):
            idx = int(order_rng.integers(0, len(items)))
            item = items[idx]
            seq = None
            if aug is not None:
                aug_seed = derive_seed(config.seed, f"train.aug.s{step}.b{b}")
                seq = item_sequence(item, config.sequence_length,
                                    replace(aug, seed=aug_seed))
            if seq is None:
                seq = item_sequence(item, config.sequence_length)
            loss = sequence_loss(seq, params, model_config, training=True)
            if config.batch_size > 1:
                loss = scale(loss, 1.0 / config.batch_size)
            loss.backward()
            step_loss += loss.item()

        if not np.isfinite(step_loss):
            raise NumericalError(
                f"non-finite loss at step {step} "
                f"(first bad parameter: {_first_bad_param(params)})")
        opt.step(params)

        losses.append(step_loss)
        log_lines.append(f"step={step} loss={step_loss:.9e} lr={config.learning_rate:g}")
        if progress is not None:
            progress(step, step_loss, (time.perf_counter() - t0) * 1000.0)
        if (config.eval_interval and config.checkpoint_path
                and step % config.eval_interval == 0 and step < config.steps):
            save_checkpoint(config.checkpoint_path, params, model_config)

    if config.checkpoint_path:
        save_checkpoint(config.checkpoint_path, params, model_config)
    if config.log_path:
        with open(config.log_path, "w") as f:
            f.write("\n".join(log_lines) + "\n")
    return TrainResult(params=params, losses=losses, log_lines=log_lines)


# -- evaluation ---------------------------------------------------------------


@dataclass
class EvalReport:
    """Model-vs-baseline MSE, per scale and per sequence."""

    per_scale: dict = field(default_factory=dict)
    per_sequence: list = field(default_factory=list)
    wall_ms_per_step: float = 0.0

    def lines(self) -> list:
        out = []
        for r in sorted(self.per_scale):
            e = self.per_scale[r]
            out.append(f"eval scale={r} model_mse={e['model_mse']:.9e} "
                       f"bicubic_mse={e['bicubic_mse']:.9e} "
                       f"windows={e['windows']}")
        out.append(f"eval wall_ms_per_step={self.wall_ms_per_step:.3f}")
        return out


def evaluate(params: ModelParams, model_config: ModelConfig, items,
             sequence_length: int = 9, bn_mode: str = "batch") -> EvalReport:
    """Mean per-window MSE of the model and of the bicubic baseline on the
    same normalized targets. The model runs recurrently over each sequence
    with zeroed initial state and no gradients.

    bn_mode "batch" re-normalizes per window, exactly the statistics
    training saw; it is the default because the recurrent feedback loop is
    only guaranteed stable under those statistics (averaged running stats
    let state magnitudes drift and, on briefly-trained models, diverge
    geometrically across windows). "running" uses the accumulated buffers
    and leaves all state untouched.
    """
    if bn_mode not in ("running", "batch"):
        raise ConfigError(f"bn_mode must be 'running' or 'batch', got {bn_mode!r}")
    training = bn_mode == "batch"
    report = EvalReport()
    totals = {}
    steps = 0
    t_total = 0.0
    for i, item in enumerate(items):
        seq = item_sequence(item, sequence_length)
        if seq is None:
            raise DataError(f"eval item {i} cannot fill a sequence of "
                            f"{sequence_length} windows")
        r = item.factor
        lh, lw = seq[0].lr_pos.counts.shape
        model_se, bicubic_se = 0.0, 0.0
        with no_grad():
            state = RecurrentState.zeros(model_config, lh, lw)
            for win in seq:
                wt = window_tensors(win, model_config)
                t0 = time.perf_counter()
                o_t, state = rmfnet_step(wt.p, wt.n, wt.f, state, params,
                                         model_config, training=training)
                t_total += time.perf_counter() - t0
                steps += 1
                model_se += mse(o_t, wt.target).item()
                base = bicubic_baseline(win.lr_pos, win.lr_neg, r).data
                bicubic_se += float(np.mean(
                    (base / wt.hr_scale - wt.target.data) ** 2))
        n = len(seq)
        report.per_sequence.append({
            "item": i, "scale": r,
            "model_mse": model_se / n, "bicubic_mse": bicubic_se / n,
        })
        agg = totals.setdefault(r, [0.0, 0.0, 0])
        agg[0] += model_se
        agg[1] += bicubic_se
        agg[2] += n
    for r, (ms, bs, n) in totals.items():
        report.per_scale[r] = {"model_mse": ms / n, "bicubic_mse": bs / n,
                               "windows": n}
    report.wall_ms_per_step = (t_total / steps * 1000.0) if steps else 0.0
    return report


# -- toy dataset assembly -----------------------------------------------------


def make_toy_items(count: int, factor: int, scene: ToySceneSpec,
                   policy: WindowPolicy, seed: int = 0) -> list:
    """Synthesize ``count`` sequence sources, cycling patterns and varying
    velocity a little so the set is not degenerate."""
    items = []
    for i in range(count):
        spec = replace(
            scene,
            pattern=PATTERNS[i % len(PATTERNS)],
            velocity=scene.velocity * (1.0 + 0.2 * (i % 4)),
            seed=derive_seed(seed, f"toy.item{i}"),
        )
        items.append(TrainItem(stream=synth_toy_stream(spec), factor=factor,
                               policy=policy))
    return items
