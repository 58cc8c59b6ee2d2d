"""The recurrent multi-branch super-resolution network.

Per time step the network sees three low-resolution count planes (positive
p_t, negative n_t, all-event frame f_t) plus the carried state (previous
hidden map h and previous output O). Pipeline:

  input conv per branch -> enhancement features from (f_t, O, h) ->
  attention-gated fusion into each branch -> num_blocks x [residual block
  per branch, then cross-branch exchange] -> concat -> fusion conv ->
  head conv to 2*r*r channels -> pixel shuffle -> O_t [2, rH, rW]
  (and a state conv producing h_t).

The two branches are structurally symmetric: identical shapes, separate
parameters. Ablation axes: a single-branch variant, and "lateral"
replacements (concat + 1x1 conv) for either the fusion attention or the
exchange attention.

Parameter names (checkpoint keys) are documented in the README; every
learnable tensor lives in ModelParams.tensors under a dotted path and every
batch-norm running-stat pair in ModelParams.bn under its layer path.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ResourceError
from .events import SequenceWindow
from .rng import make_rng
from .tensor import (BNState, Tensor, batchnorm2d, broadcast_add, concat_channels,
                     conv2d, global_avg_pool, kaiming_uniform, matmul, mse, mul,
                     pixel_shuffle, relu, reshape, sigmoid, softmax, space_to_depth,
                     transpose)

BRANCH_MODES = ("multi", "single")
FFM_MODES = ("ffm", "lateral")
FEM_MODES = ("fem", "lateral")
GATE_FNS = ("sigmoid", "softmax")


@dataclass(frozen=True)
class ModelConfig:
    scale: int = 2
    channels: int = 16
    num_blocks: int = 2
    attn_ratio: float = 0.125
    branch_mode: str = "multi"
    ffm_mode: str = "ffm"
    fem_mode: str = "fem"
    fem_gate_fn: str = "sigmoid"
    normalize_input: bool = True
    max_attention_positions: int = 4096

    def validate(self) -> "ModelConfig":
        if self.scale < 1 or self.scale & (self.scale - 1):
            raise ConfigError(f"scale must be a power of two, got {self.scale}")
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if self.num_blocks < 1:
            raise ConfigError(f"num_blocks must be >= 1, got {self.num_blocks}")
        c1 = self.channels * self.attn_ratio
        if abs(c1 - round(c1)) > 1e-9 or round(c1) < 1:
            raise ConfigError(
                f"channels*attn_ratio must be a positive integer, "
                f"got {self.channels}*{self.attn_ratio}={c1}")
        if self.branch_mode not in BRANCH_MODES:
            raise ConfigError(f"branch_mode must be one of {BRANCH_MODES}")
        if self.ffm_mode not in FFM_MODES:
            raise ConfigError(f"ffm_mode must be one of {FFM_MODES}")
        if self.fem_mode not in FEM_MODES:
            raise ConfigError(f"fem_mode must be one of {FEM_MODES}")
        if self.fem_gate_fn not in GATE_FNS:
            raise ConfigError(f"fem_gate_fn must be one of {GATE_FNS}")
        return self

    @property
    def attn_channels(self) -> int:
        return int(round(self.channels * self.attn_ratio))

    @property
    def branches(self) -> tuple:
        return ("main",) if self.branch_mode == "single" else ("pos", "neg")


# Table-style ablation variants, weakest to strongest.
VARIANTS = {
    "A": dict(branch_mode="single", ffm_mode="lateral", fem_mode="lateral"),
    "B": dict(branch_mode="multi", ffm_mode="lateral", fem_mode="lateral"),
    "C": dict(branch_mode="multi", ffm_mode="lateral", fem_mode="fem"),
    "D": dict(branch_mode="multi", ffm_mode="ffm", fem_mode="lateral"),
    "E": dict(branch_mode="multi", ffm_mode="ffm", fem_mode="fem"),
}


def variant_config(name: str, base: ModelConfig | None = None) -> ModelConfig:
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}, expected one of {sorted(VARIANTS)}")
    base = base if base is not None else ModelConfig()
    return replace(base, **VARIANTS[name]).validate()


@dataclass
class ModelParams:
    """All learnable tensors plus batch-norm running statistics."""

    tensors: dict = field(default_factory=dict)
    bn: dict = field(default_factory=dict)

    def names(self) -> list:
        return sorted(self.tensors)

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None


@dataclass
class RecurrentState:
    """Carried pair: hidden map h [C,H,W] and previous output o [2,rH,rW]."""

    h: Tensor
    o: Tensor

    @staticmethod
    def zeros(config: ModelConfig, h: int, w: int, dtype=np.float32) -> "RecurrentState":
        r = config.scale
        return RecurrentState(
            h=Tensor(np.zeros((config.channels, h, w), dtype=dtype)),
            o=Tensor(np.zeros((2, r * h, r * w), dtype=dtype)),
        )

    def detach(self) -> "RecurrentState":
        return RecurrentState(h=self.h.detach(), o=self.o.detach())


def _add_conv(p: ModelParams, name: str, c_in: int, c_out: int, k: int,
              seed: int, dtype) -> None:
    rng = make_rng(seed, f"init.{name}.weight")
    p.tensors[f"{name}.weight"] = Tensor(
        kaiming_uniform(rng, (c_out, c_in, k, k), c_in * k * k, dtype),
        requires_grad=True)
    p.tensors[f"{name}.bias"] = Tensor(np.zeros(c_out, dtype=dtype),
                                       requires_grad=True)


def _add_bn(p: ModelParams, name: str, c: int, dtype) -> None:
    p.tensors[f"{name}.gamma"] = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
    p.tensors[f"{name}.beta"] = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
    p.bn[name] = BNState.create(c, dtype)


def _add_basic_block(p: ModelParams, name: str, c_in: int, c_out: int,
                     seed: int, dtype) -> None:
    _add_conv(p, f"{name}.conv", c_in, c_out, 3, seed, dtype)
    _add_bn(p, f"{name}.bn", c_out, dtype)


def _add_attention_mlp(p: ModelParams, name: str, c: int, seed: int, dtype) -> None:
    _add_conv(p, f"{name}.conv1", c, c, 1, seed, dtype)
    _add_bn(p, f"{name}.bn1", c, dtype)
    _add_conv(p, f"{name}.conv2", c, c, 1, seed, dtype)
    _add_bn(p, f"{name}.bn2", c, dtype)


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Fresh parameters. Each tensor gets its own labeled RNG stream keyed
    by its dotted name, so adding or removing layers never shifts the init
    of unrelated ones."""
    config.validate()
    c, r, b = config.channels, config.scale, config.num_blocks
    c1 = config.attn_channels
    p = ModelParams()

    if config.branch_mode == "single":
        _add_conv(p, "branch.main.input", 2, c, 3, seed, dtype)
    else:
        _add_conv(p, "branch.pos.input", 1, c, 3, seed, dtype)
        _add_conv(p, "branch.neg.input", 1, c, 3, seed, dtype)

    _add_conv(p, "enh.frame", 1, c, 3, seed, dtype)
    _add_conv(p, "enh.state_o", 2 * r * r, c, 1, seed, dtype)
    _add_conv(p, "enh.fuse", 3 * c, c, 3, seed, dtype)

    for br in config.branches:
        if config.ffm_mode == "ffm":
            _add_basic_block(p, f"ffm.{br}.fuse", 2 * c, c, seed, dtype)
            _add_attention_mlp(p, f"ffm.{br}.loc", c, seed, dtype)
            _add_attention_mlp(p, f"ffm.{br}.glo", c, seed, dtype)
        else:
            _add_conv(p, f"ffm.{br}.lateral", 2 * c, c, 1, seed, dtype)

    for i in range(b):
        for br in config.branches:
            _add_conv(p, f"branch.{br}.block{i}.conv1", c, c, 3, seed, dtype)
            _add_conv(p, f"branch.{br}.block{i}.conv2", c, c, 3, seed, dtype)
        if config.branch_mode == "single":
            continue  # nothing to exchange with one branch
        if config.fem_mode == "fem":
            for br in config.branches:
                _add_basic_block(p, f"fem{i}.gate.{br}.basic", c, c, seed, dtype)
                _add_conv(p, f"fem{i}.gate.{br}.weight_conv", c, c, 3, seed, dtype)
                _add_conv(p, f"fem{i}.gate.{br}.bias_conv", c, c, 3, seed, dtype)
                _add_conv(p, f"fem{i}.attn.{br}.v", c, c, 1, seed, dtype)
                _add_conv(p, f"fem{i}.attn.{br}.q", c, c1, 1, seed, dtype)
                _add_conv(p, f"fem{i}.attn.{br}.k", c, c1, 1, seed, dtype)
        else:
            for br in config.branches:
                _add_conv(p, f"fem{i}.lateral.{br}", 2 * c, c, 1, seed, dtype)

    fuse_in = c if config.branch_mode == "single" else 2 * c
    _add_conv(p, "fuse.conv", fuse_in, c, 3, seed, dtype)
    _add_conv(p, "head.conv", c, 2 * r * r, 3, seed, dtype)
    _add_conv(p, "state.conv", c, c, 3, seed, dtype)
    return p


# -- forward building blocks -------------------------------------------------


def _conv(x: Tensor, p: ModelParams, name: str) -> Tensor:
    return conv2d(x, p.tensors[f"{name}.weight"], p.tensors[f"{name}.bias"])


def _bn(x: Tensor, p: ModelParams, name: str, training: bool) -> Tensor:
    return batchnorm2d(x, p.tensors[f"{name}.gamma"], p.tensors[f"{name}.beta"],
                       p.bn[name], training=training)


def basic_block(x: Tensor, p: ModelParams, name: str, training: bool) -> Tensor:
    """Conv3x3 -> BN -> ReLU."""
    return relu(_bn(_conv(x, p, f"{name}.conv"), p, f"{name}.bn", training))


def attention_mlp(x: Tensor, p: ModelParams, name: str, training: bool) -> Tensor:
    """BN(Conv1x1(ReLU(BN(Conv1x1(x))))), channel-preserving."""
    a = _bn(_conv(x, p, f"{name}.conv1"), p, f"{name}.bn1", training)
    return _bn(_conv(relu(a), p, f"{name}.conv2"), p, f"{name}.bn2", training)


def ffm_forward(f_branch: Tensor, f_enh: Tensor, p: ModelParams, branch: str,
                training: bool = True) -> Tensor:
    """Attention-gated injection of enhancement features into a branch.

    F_fuse from a basic block over the concat; a local (per-position) and a
    global (pooled) attention map of the same functional form; the branch
    keeps its identity path and receives F_fuse scaled by the fused gate.
    """
    if f_branch.shape != f_enh.shape:
        raise ConfigError(
            f"ffm shape mismatch {f_branch.shape} vs {f_enh.shape}")
    prefix = f"ffm.{branch}"
    f_fuse = basic_block(concat_channels(f_branch, f_enh), p, f"{prefix}.fuse",
                         training)
    a_loc = attention_mlp(f_fuse, p, f"{prefix}.loc", training)
    a_glo = attention_mlp(global_avg_pool(f_fuse), p, f"{prefix}.glo", training)
    gate = sigmoid(broadcast_add(a_glo, a_loc))
    return f_branch + mul(f_fuse, gate)


def lateral_fuse(a: Tensor, b: Tensor, p: ModelParams, name: str) -> Tensor:
    """Ablation substitute for the attention modules: concat + 1x1 conv."""
    return _conv(concat_channels(a, b), p, name)


def fem_gate(f_in: Tensor, p: ModelParams, prefix: str,
             training: bool = True) -> Tensor:
    """Self-modulation: F~ = BasicBlock(F); out = Conv_w(F~) * F~ + Conv_b(F~)."""
    ft = basic_block(f_in, p, f"{prefix}.basic", training)
    w = _conv(ft, p, f"{prefix}.weight_conv")
    b = _conv(ft, p, f"{prefix}.bias_conv")
    return mul(w, ft) + b


def fem_cross_attention(f_self: Tensor, f_other: Tensor, p: ModelParams,
                        prefix: str, gate_fn: str = "sigmoid",
                        max_positions: int = 4096) -> Tensor:
    """Non-local exchange: values from self, queries/keys from the other
    branch; the position-by-position map is gated and applied to V, and the
    result is added residually to f_self.

    The map is (H*W)x(H*W); inputs beyond max_positions are refused.
    """
    c, h, w = f_self.shape
    hw = h * w
    if hw > max_positions:
        raise ResourceError(
            f"attention map would be {hw}x{hw} (H*W={hw} > ceiling {max_positions})")
    c1 = p.tensors[f"{prefix}.q.weight"].shape[0]
    v = reshape(_conv(f_self, p, f"{prefix}.v"), (c, hw))
    q = reshape(_conv(f_other, p, f"{prefix}.q"), (c1, hw))
    k = reshape(_conv(f_other, p, f"{prefix}.k"), (c1, hw))
    m = matmul(transpose(q), k)
    if gate_fn == "sigmoid":
        m = sigmoid(m)
    elif gate_fn == "softmax":
        m = softmax(m, axis=1)  # each row of the map sums to one
    else:
        raise ConfigError(f"unknown fem gate {gate_fn!r}")
    attended = reshape(matmul(v, m), (c, h, w))
    return f_self + attended


def fem_forward(f_pos: Tensor, f_neg: Tensor, p: ModelParams, index: int,
                config: ModelConfig, training: bool = True):
    """Gate each branch, then exchange through two symmetric attention calls."""
    g_pos = fem_gate(f_pos, p, f"fem{index}.gate.pos", training)
    g_neg = fem_gate(f_neg, p, f"fem{index}.gate.neg", training)
    out_pos = fem_cross_attention(g_pos, g_neg, p, f"fem{index}.attn.pos",
                                  config.fem_gate_fn,
                                  config.max_attention_positions)
    out_neg = fem_cross_attention(g_neg, g_pos, p, f"fem{index}.attn.neg",
                                  config.fem_gate_fn,
                                  config.max_attention_positions)
    return out_pos, out_neg


def residual_block(f: Tensor, p: ModelParams, prefix: str) -> Tensor:
    """f + Conv3x3(ReLU(Conv3x3(f)))."""
    return f + _conv(relu(_conv(f, p, f"{prefix}.conv1")), p, f"{prefix}.conv2")


def build_enhancement(f_t: Tensor, state: RecurrentState, p: ModelParams,
                      config: ModelConfig, training: bool = True) -> Tensor:
    """Fuse the event frame with the carried state into [C,H,W] features.

    The previous output (at r-times resolution) is folded back to the LR
    grid losslessly via space_to_depth, then projected to C channels.
    """
    r = config.scale
    frame = _conv(f_t, p, "enh.frame")
    prev_o = _conv(space_to_depth(state.o, r), p, "enh.state_o")
    fused = _conv(concat_channels(frame, state.h, prev_o), p, "enh.fuse")
    return relu(fused)


def rmfnet_step(p_t: Tensor, n_t: Tensor, f_t: Tensor, state: RecurrentState,
                p: ModelParams, config: ModelConfig, training: bool = True):
    """One recurrent step: (p_t, n_t, f_t, state) -> (O_t, new state)."""
    if p_t.shape != n_t.shape or p_t.shape != f_t.shape or p_t.shape[0] != 1:
        raise ConfigError(
            f"inputs must be [1,H,W] alike, got {p_t.shape}/{n_t.shape}/{f_t.shape}")
    _, h, w = p_t.shape
    r, c = config.scale, config.channels
    if state.h.shape != (c, h, w) or state.o.shape != (2, r * h, r * w):
        raise ConfigError(
            f"state shapes {state.h.shape}/{state.o.shape} inconsistent with "
            f"input {h}x{w}, C={c}, r={r}")

    f_enh = build_enhancement(f_t, state, p, config, training)

    if config.branch_mode == "single":
        feats = [_conv(concat_channels(p_t, n_t), p, "branch.main.input")]
    else:
        feats = [_conv(p_t, p, "branch.pos.input"),
                 _conv(n_t, p, "branch.neg.input")]

    branches = config.branches
    for bi, br in enumerate(branches):
        if config.ffm_mode == "ffm":
            feats[bi] = ffm_forward(feats[bi], f_enh, p, br, training)
        else:
            feats[bi] = lateral_fuse(feats[bi], f_enh, p, f"ffm.{br}.lateral")

    for i in range(config.num_blocks):
        for bi, br in enumerate(branches):
            feats[bi] = residual_block(feats[bi], p, f"branch.{br}.block{i}")
        if config.branch_mode == "single":
            continue
        if config.fem_mode == "fem":
            feats[0], feats[1] = fem_forward(feats[0], feats[1], p, i,
                                             config, training)
        else:
            feats[0], feats[1] = (
                lateral_fuse(feats[0], feats[1], p, f"fem{i}.lateral.pos"),
                lateral_fuse(feats[1], feats[0], p, f"fem{i}.lateral.neg"),
            )

    merged = feats[0] if len(feats) == 1 else concat_channels(*feats)
    fused = _conv(merged, p, "fuse.conv")
    o_t = pixel_shuffle(_conv(fused, p, "head.conv"), r)
    h_t = _conv(fused, p, "state.conv")
    return o_t, RecurrentState(h=h_t, o=o_t)


# -- loss over a sequence ----------------------------------------------------


@dataclass
class WindowTensors:
    """Float planes for one window, optionally max-normalized.

    The three LR planes share one scale (their joint max) and the stacked
    HR target has its own, so both sides are O(1) regardless of count
    magnitude. Scales are >= 1, so empty windows pass through unchanged.
    """

    p: Tensor
    n: Tensor
    f: Tensor
    target: Tensor
    lr_scale: float
    hr_scale: float


def window_tensors(win: SequenceWindow, config: ModelConfig,
                   dtype=np.float32) -> WindowTensors:
    lp = win.lr_pos.counts.astype(dtype)
    ln = win.lr_neg.counts.astype(dtype)
    lf = win.lr_frame.counts.astype(dtype)
    hp = win.hr_pos.counts.astype(dtype)
    hn = win.hr_neg.counts.astype(dtype)
    if config.normalize_input:
        lr_scale = float(max(1.0, lp.max(), ln.max(), lf.max()))
        hr_scale = float(max(1.0, hp.max(), hn.max()))
    else:
        lr_scale = hr_scale = 1.0
    return WindowTensors(
        p=Tensor((lp / lr_scale)[None]),
        n=Tensor((ln / lr_scale)[None]),
        f=Tensor((lf / lr_scale)[None]),
        target=Tensor(np.stack([hp, hn]) / hr_scale),
        lr_scale=lr_scale,
        hr_scale=hr_scale,
    )


def sequence_loss(windows, p: ModelParams, config: ModelConfig,
                  training: bool = True) -> Tensor:
    """Sum over the sequence of per-step MSE against the stacked HR target.

    State starts at zero and is carried with gradients across all steps, so
    backward() runs truncated-to-the-sequence backprop through time.
    """
    if not windows:
        raise ConfigError("sequence_loss needs at least one window")
    first = windows[0]
    if first.scale != config.scale:
        raise ConfigError(
            f"window scale {first.scale} != model scale {config.scale}")
    lh, lw = first.lr_pos.counts.shape
    dtype = next(iter(p.tensors.values())).dtype
    state = RecurrentState.zeros(config, lh, lw, dtype=dtype)
    total = None
    for win in windows:
        if win.lr_pos.counts.shape != (lh, lw):
            raise ConfigError("windows in one sequence must share geometry")
        wt = window_tensors(win, config, dtype=dtype)
        o_t, state = rmfnet_step(wt.p, wt.n, wt.f, state, p, config, training)
        step_loss = mse(o_t, wt.target)
        total = step_loss if total is None else total + step_loss
    return total
