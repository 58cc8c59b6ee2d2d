"""Flat, typed run configuration.

One key/value namespace covers scene synthesis, data windowing, the model,
training and augmentation. Files are plain ``key = value`` lines (``#``
comments and blank lines allowed). Every key has a documented default;
unknown keys and ill-typed values are rejected; parse -> serialize -> parse
is lossless.
"""

from __future__ import annotations

from dataclasses import dataclass

from .augment import AugmentSpec, METHODS
from .errors import ConfigError
from .events import WindowPolicy
from .model import (BRANCH_MODES, FEM_MODES, FFM_MODES, GATE_FNS, ModelConfig)
from .toydata import PATTERNS, ToySceneSpec
from .train import TrainConfig


@dataclass(frozen=True)
class ConfigKey:
    name: str
    kind: str  # int | float | str | bool
    default: object
    help: str
    choices: tuple = ()


_KEYS = [
    ConfigKey("seed", "int", 0, "root seed; every command splits it by labeled streams"),
    ConfigKey("scene.width", "int", 32, "HR sensor width for synthesized scenes"),
    ConfigKey("scene.height", "int", 32, "HR sensor height"),
    ConfigKey("scene.pattern", "str", "moving_bar", "scene pattern", PATTERNS),
    ConfigKey("scene.velocity", "float", 1.0, "pattern speed in pixels per millisecond"),
    ConfigKey("scene.duration_us", "int", 60000, "scene duration in microseconds"),
    ConfigKey("scene.events_per_edge_crossing", "float", 2.0,
              "mean events per (edge, row) column crossing"),
    ConfigKey("scene.noise_rate", "float", 0.0,
              "background noise events per pixel per second"),
    ConfigKey("data.window_policy", "str", "fixed_count", "how streams are windowed",
              ("fixed_count", "fixed_duration")),
    ConfigKey("data.window_count", "int", 2048, "events per fixed-count window"),
    ConfigKey("data.window_duration_us", "int", 10000,
              "microseconds per fixed-duration window"),
    ConfigKey("data.train_items", "int", 8, "synthesized training sequence sources"),
    ConfigKey("data.eval_items", "int", 4, "synthesized held-out sequence sources"),
    ConfigKey("model.scale", "int", 2, "super-resolution factor r"),
    ConfigKey("model.channels", "int", 16, "base channel count C"),
    ConfigKey("model.num_blocks", "int", 2, "residual blocks per branch"),
    ConfigKey("model.attn_ratio", "float", 0.125,
              "exchange-attention channel ratio C1/C"),
    ConfigKey("model.branch_mode", "str", "multi", "branch layout", BRANCH_MODES),
    ConfigKey("model.ffm_mode", "str", "ffm", "fusion module or lateral conv", FFM_MODES),
    ConfigKey("model.fem_mode", "str", "fem", "exchange module or lateral conv",
              FEM_MODES),
    ConfigKey("model.fem_gate_fn", "str", "sigmoid", "attention-map gate", GATE_FNS),
    ConfigKey("model.normalize_input", "bool", True,
              "divide count planes by their per-window max"),
    ConfigKey("model.max_attention_positions", "int", 4096,
              "refuse exchange attention when H*W exceeds this"),
    ConfigKey("train.learning_rate", "float", 1e-3, "Adam learning rate"),
    ConfigKey("train.steps", "int", 200, "optimization steps"),
    ConfigKey("train.sequence_length", "int", 9, "windows per training sequence T"),
    ConfigKey("train.batch_size", "int", 1, "sequences per optimization step"),
    ConfigKey("train.eval_interval", "int", 0,
              "checkpoint every N steps (0: only at the end)"),
    ConfigKey("eval.bn_mode", "str", "batch",
              "batch-norm statistics at eval time; batch matches training "
              "and keeps the recurrence stable", ("batch", "running")),
    ConfigKey("augment.method", "str", "none", "augmentation applied during training",
              METHODS),
    ConfigKey("augment.seed", "int", 0,
              "seed for the standalone augment command (training derives its own)"),
    ConfigKey("augment.ratio_max", "float", 0.2, "drop_by_time: max interval ratio"),
    ConfigKey("augment.drop_prob", "float", 0.1, "random drop probability"),
    ConfigKey("augment.noise_ratio", "float", 0.05,
              "noise events inserted as a fraction of stream size"),
    ConfigKey("augment.area_ratio", "float", 0.05, "drop_by_area: rectangle area ratio"),
    ConfigKey("augment.scale_min", "float", 0.7, "random_resized_crop: min area scale"),
]

REGISTRY = {k.name: k for k in _KEYS}

_AUGMENT_PARAM_KEYS = ("ratio_max", "drop_prob", "noise_ratio", "area_ratio",
                       "scale_min")


def _parse_value(key: ConfigKey, raw: str):
    raw = raw.strip()
    try:
        if key.kind == "int":
            v = int(raw)
        elif key.kind == "float":
            v = float(raw)
        elif key.kind == "bool":
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError
            v = low == "true"
        else:
            v = raw
    except ValueError:
        raise ConfigError(f"config key {key.name}: cannot parse {raw!r} as {key.kind}")
    if key.choices and v not in key.choices:
        raise ConfigError(
            f"config key {key.name}: {v!r} not one of {list(key.choices)}")
    return v


def _format_value(key: ConfigKey, v) -> str:
    if key.kind == "bool":
        return "true" if v else "false"
    return repr(v) if key.kind == "float" else str(v)


class RunConfig:
    """Explicitly-set keys over the registry defaults."""

    def __init__(self, values: dict | None = None):
        self.values = {}
        if values:
            for k, v in values.items():
                self.set(k, v)

    def get(self, name: str):
        if name not in REGISTRY:
            raise ConfigError(f"unknown config key {name!r}")
        return self.values.get(name, REGISTRY[name].default)

    def set(self, name: str, value) -> None:
        if name not in REGISTRY:
            raise ConfigError(f"unknown config key {name!r}")
        key = REGISTRY[name]
        if isinstance(value, str):
            value = _parse_value(key, value)
        else:
            expect = {"int": int, "float": (int, float), "bool": bool, "str": str}
            if not isinstance(value, expect[key.kind]) or (
                    key.kind == "int" and isinstance(value, bool)):
                raise ConfigError(
                    f"config key {name}: {value!r} is not of type {key.kind}")
            if key.kind == "float":
                value = float(value)
            if key.choices and value not in key.choices:
                raise ConfigError(
                    f"config key {name}: {value!r} not one of {list(key.choices)}")
        self.values[name] = value

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        cfg = cls()
        for lineno, line in enumerate(text.splitlines(), start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"config line {lineno}: expected 'key = value', "
                                  f"got {line!r}")
            name, raw = body.split("=", 1)
            cfg.set(name.strip(), raw.strip())
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path) as f:
                return cls.parse(f.read())
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}")

    def serialize(self) -> str:
        lines = [f"{n} = {_format_value(REGISTRY[n], self.values[n])}"
                 for n in sorted(self.values)]
        return "\n".join(lines) + ("\n" if lines else "")

    def apply_overrides(self, pairs) -> None:
        """CLI --opt key=value entries; highest precedence."""
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"--opt expects key=value, got {pair!r}")
            name, raw = pair.split("=", 1)
            self.set(name.strip(), raw.strip())

    # -- builders ---------------------------------------------------------

    def to_scene_spec(self, seed: int | None = None) -> ToySceneSpec:
        return ToySceneSpec(
            width=self.get("scene.width"),
            height=self.get("scene.height"),
            pattern=self.get("scene.pattern"),
            velocity=self.get("scene.velocity"),
            duration_us=self.get("scene.duration_us"),
            events_per_edge_crossing=self.get("scene.events_per_edge_crossing"),
            noise_rate=self.get("scene.noise_rate"),
            seed=self.get("seed") if seed is None else seed,
        ).validate()

    def to_window_policy(self) -> WindowPolicy:
        if self.get("data.window_policy") == "fixed_count":
            return WindowPolicy.fixed_count(self.get("data.window_count"))
        return WindowPolicy.fixed_duration(self.get("data.window_duration_us"))

    def to_model_config(self) -> ModelConfig:
        return ModelConfig(
            scale=self.get("model.scale"),
            channels=self.get("model.channels"),
            num_blocks=self.get("model.num_blocks"),
            attn_ratio=self.get("model.attn_ratio"),
            branch_mode=self.get("model.branch_mode"),
            ffm_mode=self.get("model.ffm_mode"),
            fem_mode=self.get("model.fem_mode"),
            fem_gate_fn=self.get("model.fem_gate_fn"),
            normalize_input=self.get("model.normalize_input"),
            max_attention_positions=self.get("model.max_attention_positions"),
        ).validate()

    def to_augment_spec(self, seed: int | None = None) -> AugmentSpec:
        params = {k: self.get(f"augment.{k}") for k in _AUGMENT_PARAM_KEYS}
        return AugmentSpec(
            method=self.get("augment.method"),
            seed=self.get("augment.seed") if seed is None else seed,
            params=params,
        )

    def to_train_config(self, checkpoint_path: str = "",
                        log_path: str = "") -> TrainConfig:
        aug = None
        if self.get("augment.method") != "none":
            aug = self.to_augment_spec()
        return TrainConfig(
            learning_rate=self.get("train.learning_rate"),
            steps=self.get("train.steps"),
            sequence_length=self.get("train.sequence_length"),
            batch_size=self.get("train.batch_size"),
            augment_spec=aug,
            eval_interval=self.get("train.eval_interval"),
            checkpoint_path=checkpoint_path,
            log_path=log_path,
            seed=self.get("seed"),
        ).validate()


def default_config_text() -> str:
    """All keys at their defaults, with help comments: a starter file."""
    lines = []
    for k in _KEYS:
        lines.append(f"# {k.help}" + (f" (one of: {', '.join(map(str, k.choices))})"
                                      if k.choices else ""))
        lines.append(f"{k.name} = {_format_value(k, k.default)}")
    return "\n".join(lines) + "\n"
