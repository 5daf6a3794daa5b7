"""Training configuration, ablation variants, and the frozen-config format.

Configs serialize to a flat ``key = value`` text file whose keys are exactly
the :class:`TrainConfig` field names; command-line flags override file
values. Every run writes its resolved config back out so results can be
reproduced bit-for-bit from the frozen copy.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .data import BEHAVIOR_NAMES, NUM_BEHAVIORS

ACTIVATIONS = ("identity", "relu", "leaky-relu", "tanh")
ACG_MODES = ("mean", "sum", "sym")
# neighborhood modes: "off" drops propagation entirely, "nodes" propagates
# node representations only, "full" adds edge-context updates and
# behavior attention
NEIGHBORHOOD_MODES = ("off", "nodes", "full")
# negative-weight modes: constant per item vs. frequency/intensity based
WEIGHTING_MODES = ("uniform", "intensity")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # model shape
    embed_dim: int = 64
    num_layers: int = 4
    num_behaviors: int = NUM_BEHAVIORS
    activation: str = "leaky-relu"
    acg: str = "mean"
    per_layer_wbeh: bool = False
    edge_self_loop: bool = False

    # negative-weight strategy
    neg_budget: float = 1.0  # total negative weight per behavior, in (0, 1]
    freq_exponent: float = 0.5  # flattens/sharpens the frequency skew, in (0, 1)
    ref_behavior: str = "view"
    uniform_neg_weight: float = 0.01
    wint_through_gradient: bool = False
    ref_denominator: bool = False

    # multi-task objective; lambdas follow (view, add, purchase) order.
    # The default split is a placeholder, not a tuned value.
    lambdas: tuple = (1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0)
    reg_weight: float = 1e-4

    # optimization
    lr: float = 1e-3
    epochs: int = 200
    patience: int = 10  # 0 disables early stopping
    clip_norm: float = 5.0
    chunk_size: int = 0  # 0 = single chunk; >0 splits the positive-edge sums
    seed: int = 0

    # ablation axes
    neighborhood: str = "full"
    weighting: str = "intensity"

    # evaluation
    eval_ks: tuple = (10, 50, 100)
    eval_every: int = 1
    exclude_valid: bool = False

    def validate(self) -> "TrainConfig":
        if self.embed_dim <= 0:
            raise ConfigError("embed_dim must be positive")
        if self.num_layers < 0:
            raise ConfigError("num_layers must be >= 0")
        if self.num_behaviors != NUM_BEHAVIORS:
            raise ConfigError(f"num_behaviors is fixed at {NUM_BEHAVIORS}")
        if not 0.0 < self.neg_budget <= 1.0:
            raise ConfigError("neg_budget must lie in (0, 1]")
        if not 0.0 < self.freq_exponent < 1.0:
            raise ConfigError("freq_exponent must lie in (0, 1)")
        if self.ref_behavior not in BEHAVIOR_NAMES:
            raise ConfigError(f"ref_behavior must be one of {BEHAVIOR_NAMES}")
        if len(self.lambdas) != NUM_BEHAVIORS:
            raise ConfigError(f"lambdas needs {NUM_BEHAVIORS} entries")
        if any(l < 0 for l in self.lambdas):
            raise ConfigError("lambdas must be non-negative")
        if not any(l > 0 for l in self.lambdas):
            raise ConfigError("at least one lambda must be positive")
        if self.reg_weight < 0:
            raise ConfigError("reg_weight must be non-negative")
        if self.uniform_neg_weight < 0:
            raise ConfigError("uniform_neg_weight must be non-negative")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        if self.acg not in ACG_MODES:
            raise ConfigError(f"acg must be one of {ACG_MODES}")
        if self.neighborhood not in NEIGHBORHOOD_MODES:
            raise ConfigError(f"neighborhood must be one of {NEIGHBORHOOD_MODES}")
        if self.weighting not in WEIGHTING_MODES:
            raise ConfigError(f"weighting must be one of {WEIGHTING_MODES}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 0 or self.patience < 0 or self.chunk_size < 0:
            raise ConfigError("epochs, patience and chunk_size must be >= 0")
        if self.eval_every <= 0:
            raise ConfigError("eval_every must be positive")
        if not self.eval_ks or any(k <= 0 for k in self.eval_ks):
            raise ConfigError("eval_ks must be positive")
        return self

    # ablation axes map onto structural switches:
    @property
    def effective_layers(self) -> int:
        return 0 if self.neighborhood == "off" else self.num_layers

    @property
    def edge_update_enabled(self) -> bool:
        return self.neighborhood == "full"

    @property
    def attention_enabled(self) -> bool:
        return self.neighborhood == "full"

    @property
    def ref_behavior_index(self) -> int:
        return BEHAVIOR_NAMES.index(self.ref_behavior)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                rendered = ",".join(repr(x) for x in value)
            elif isinstance(value, bool):
                rendered = "true" if value else "false"
            elif isinstance(value, float):
                rendered = repr(value)
            else:
                rendered = str(value)
            lines.append(f"{f.name} = {rendered}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, _, rendered = line.partition("=")
            values[key.strip()] = rendered.strip()
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        default = cls()
        for key, rendered in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _parse_value(rendered, getattr(default, key), key)
        return cls(**kwargs).validate()

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def override(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs).validate()


def _parse_value(rendered, default_value, key: str):
    if isinstance(rendered, (int, float, bool, tuple, list)):
        if isinstance(rendered, list):
            return tuple(rendered)
        return rendered
    text = str(rendered)
    if isinstance(default_value, bool):
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    if isinstance(default_value, tuple):
        elem = default_value[0]
        parts = [p for p in text.split(",") if p.strip()]
        caster = int if isinstance(elem, int) else float
        try:
            return tuple(caster(p.strip()) for p in parts)
        except ValueError:
            raise ConfigError(f"{key}: bad list value {text!r}") from None
    if isinstance(default_value, int):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {text!r}") from None
    if isinstance(default_value, float):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {text!r}") from None
    return text


@dataclass(frozen=True)
class VariantSpec:
    """One cell of the ablation grid: a neighborhood mode plus a weighting mode."""

    neighborhood: str
    weighting: str

    def __post_init__(self):
        if self.neighborhood not in NEIGHBORHOOD_MODES:
            raise ConfigError(f"neighborhood must be one of {NEIGHBORHOOD_MODES}")
        if self.weighting not in WEIGHTING_MODES:
            raise ConfigError(f"weighting must be one of {WEIGHTING_MODES}")

    @property
    def name(self) -> str:
        return f"{self.neighborhood}+{self.weighting}"

    def apply(self, cfg: TrainConfig) -> TrainConfig:
        return cfg.override(neighborhood=self.neighborhood, weighting=self.weighting)


def all_variants() -> list[VariantSpec]:
    """The full 3x2 ablation grid, uniform weighting rows first."""
    return [
        VariantSpec(nb, wt)
        for wt in WEIGHTING_MODES
        for nb in NEIGHBORHOOD_MODES
    ]
