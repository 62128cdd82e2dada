"""
Run configuration

Defaults <- config file (JSON or YAML) <- command-line overrides. Every key
has a default; keys that are not part of the tree are rejected.
"""

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from utils.config_loader import ConfigLoader

from .errors import ConfigError
from .pipeline import DEFAULT_N_SHOTS, DEFAULT_QUANTILE, TrainConfig
from .synthbench import (
    ADAPT_LR,
    BenchConfig,
    DomainSpec,
    default_source_spec,
    default_target_spec,
    default_train_config,
)
from .vae import CoreConfig


@dataclass(frozen=True)
class AdaptConfig:
    """Phase-2 overrides of the training settings"""
    epochs: int = 100
    n_shots: int = DEFAULT_N_SHOTS
    lr: float = ADAPT_LR


@dataclass(frozen=True)
class PathsConfig:
    out_dir: str = "out"
    log_file: Optional[str] = None


@dataclass(frozen=True)
class RunConfig:
    core: CoreConfig = field(default_factory=CoreConfig)
    train: TrainConfig = field(default_factory=default_train_config)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    threshold_q: float = DEFAULT_QUANTILE
    source_split: float = 0.8
    source: DomainSpec = field(default_factory=default_source_spec)
    target: DomainSpec = field(default_factory=default_target_spec)
    seeds: List[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    workers: int = 1
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        if not 0 < self.threshold_q <= 1:
            raise ConfigError(f"threshold_q must lie in (0, 1], got {self.threshold_q}")
        if not 0 < self.source_split <= 1:
            raise ConfigError(f"source_split must lie in (0, 1], got {self.source_split}")
        if not self.seeds:
            raise ConfigError("seeds must name at least one seed")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.adapt.epochs < 1 or self.adapt.n_shots < 1 or not self.adapt.lr > 0:
            raise ConfigError(f"invalid adapt settings: {asdict(self.adapt)}")

    @property
    def seed(self) -> int:
        return self.train.seed

    def adapt_train_config(self) -> TrainConfig:
        """Phase-1 settings with the phase-2 epochs and learning rate"""
        return replace(self.train, epochs=self.adapt.epochs, lr=self.adapt.lr)

    def bench_config(self) -> BenchConfig:
        return BenchConfig(
            core=self.core,
            train=self.train,
            adapt=self.adapt_train_config(),
            n_shots=self.adapt.n_shots,
            threshold_q=self.threshold_q,
            source_split=self.source_split,
            workers=self.workers,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'core': self.core.to_dict(),
            'train': self.train.to_dict(),
            'adapt': asdict(self.adapt),
            'threshold_q': self.threshold_q,
            'source_split': self.source_split,
            'source': self.source.to_dict(),
            'target': self.target.to_dict(),
            'seeds': list(self.seeds),
            'workers': self.workers,
            'paths': asdict(self.paths),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunConfig':
        """Build from a complete or partial tree; missing keys take defaults"""
        unknown = ConfigLoader.unknown_keys(data, DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
        tree = ConfigLoader().merge_configs([DEFAULTS, data])
        try:
            return cls(
                core=CoreConfig.from_dict(tree['core']),
                train=TrainConfig.from_dict(tree['train']),
                adapt=AdaptConfig(**tree['adapt']),
                threshold_q=float(tree['threshold_q']),
                source_split=float(tree['source_split']),
                source=DomainSpec.from_dict(tree['source']),
                target=DomainSpec.from_dict(tree['target']),
                seeds=[int(s) for s in tree['seeds']],
                workers=int(tree['workers']),
                paths=PathsConfig(**tree['paths']),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid configuration: {e}")


DEFAULTS: Dict[str, Any] = RunConfig().to_dict()


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None
) -> RunConfig:
    """
    Resolve the effective configuration

    Args:
        path: Optional JSON/YAML document
        overrides: Dotted keys (e.g. "train.epochs") that win over the file

    Returns:
        Validated RunConfig
    """
    tree: Dict[str, Any] = {}
    if path is not None:
        try:
            tree = ConfigLoader().load(str(path), required=True, cache=False)
        except FileNotFoundError as e:
            raise ConfigError(str(e))
        except ValueError as e:
            raise ConfigError(f"cannot read config {path}: {e}")

    for key, value in (overrides or {}).items():
        if value is not None:
            ConfigLoader.set(key, value, tree)
    return RunConfig.from_dict(tree)
