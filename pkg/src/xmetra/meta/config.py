from dataclasses import dataclass, field, replace
from enum import Enum

from xmetra.autodiff import OptimizerKind, OptimizerState
from xmetra.episodes import EpisodeSpec, Shortfall, Stage
from xmetra.exceptions import ConfigError


class BaselineKind(str, Enum):
    PRE = "PRE"
    MONO = "MONO"
    FT = "FT"
    FT_WITH_EN = "FT_WITH_EN"
    X_METRA = "X_METRA"
    X_METRA_ADA = "X_METRA_ADA"

    @property
    def is_meta(self):
        return self in (BaselineKind.X_METRA, BaselineKind.X_METRA_ADA)


@dataclass(frozen=True)
class Convergence:
    """Stop once the windowed mean loss fails to improve by ``min_delta`` for ``patience`` windows."""

    window: int = 50
    patience: int = 5
    min_delta: float = 1e-4
    enabled: bool = True


@dataclass(frozen=True)
class MetaConfig:
    n: int = 5
    alpha: float = 1e-3
    beta: float = 1e-2
    task_batch_size: int = 4
    total_tasks: int = 2500
    stage: Stage = Stage.META_TRAIN
    dev_split_fraction: float = 0.75
    outer_optimizer: OptimizerKind = OptimizerKind.ADAM
    weight_decay: float = 1e-3
    convergence: Convergence = field(default_factory=Convergence)
    frozen_blocks: frozenset = frozenset()
    k: int = 6
    q: int = 6
    shortfall: Shortfall = Shortfall.ERROR
    eval_every: int = 100
    inner_dropout: bool = True

    def __post_init__(self):
        object.__setattr__(self, "stage", Stage(self.stage))
        object.__setattr__(self, "outer_optimizer", OptimizerKind(self.outer_optimizer))
        object.__setattr__(self, "shortfall", Shortfall(self.shortfall))
        object.__setattr__(self, "frozen_blocks", frozenset(int(b) for b in self.frozen_blocks))
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if not (self.alpha > 0 and self.beta > 0):
            raise ConfigError("alpha and beta must be positive")
        if self.task_batch_size < 1:
            raise ConfigError("task_batch_size must be >= 1")
        if self.total_tasks < 0:
            raise ConfigError("total_tasks must be non-negative")
        if not 0.0 < self.dev_split_fraction <= 1.0:
            raise ConfigError(f"dev_split_fraction must lie in (0, 1], got {self.dev_split_fraction}")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")

    @classmethod
    def for_mtod(cls, **overrides):
        return cls(**{"n": 5, "alpha": 1e-3, "beta": 1e-2, "dev_split_fraction": 0.75, **overrides})

    @classmethod
    def for_qa(cls, **overrides):
        return cls(**{"n": 5, "alpha": 3e-5, "beta": 3e-5, "dev_split_fraction": 0.60, **overrides})

    @property
    def episode_spec(self):
        return EpisodeSpec(self.k, self.q, shortfall=self.shortfall)

    def outer_state(self):
        return OptimizerState(self.outer_optimizer, self.beta, weight_decay=self.weight_decay)

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class TrainConfig:
    """Plain mini-batch training used by PRE, MONO, FT and FT w/EN."""

    learning_rate: float = 1e-3
    batch_size: int = 32
    max_steps: int = 2000
    weight_decay: float = 1e-3
    convergence: Convergence = field(default_factory=Convergence)
    eval_every: int = 100

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ConfigError("batch_size must be >= 1 and max_steps >= 0")

    def optimizer(self):
        return OptimizerState(OptimizerKind.ADAM, self.learning_rate, weight_decay=self.weight_decay)
