"""
Synthbench - synthetic two-domain flows and the model comparison harness

Benign traffic per receiver follows an AR(1) process around a seasonal
level. Anomalies overwrite contiguous runs of flows (burst, scan, exfil).
The benchmark trains CTAL-VAE and the VAE/AE baselines on the source,
adapts them on a few target windows and scores the rest.
"""

import asyncio
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence as SequenceT, Tuple, Union

import numpy as np
import pandas as pd

from utils.file_manager import FileManager
from utils.logger import LoggerContext, get_logger, log_performance

from .adaptors import SOURCE, TARGET
from .checkpoint import ModelBundle, ModelKind
from .errors import DataValidationError
from .flow_model import (
    FeatureSchema,
    FlowRecord,
    Label,
    Normalizer,
    Sequence,
    build_sequences,
    fit_normalizer,
    label_sequences,
)
from .objectives import ContrastiveConfig
from .pipeline import (
    DEFAULT_N_SHOTS,
    DEFAULT_QUANTILE,
    Metrics,
    TrainConfig,
    adapt_target,
    classify,
    evaluate,
    fit_threshold,
    score,
    select_shots,
    split_sequences,
    train_source,
)
from .vae import CoreConfig

logger = get_logger("ctalvae.synthbench")

ANOMALY_TYPES = ("burst", "scan", "exfil")
MODEL_KINDS = tuple(kind.value for kind in ModelKind)
SEED_STRIDE = 1000

# Shipped run profile; few-shot adaptation takes one optimizer step per epoch
ADAPT_LR = 0.01
BENCH_MARGIN = 1.0
BENCH_NOISE_SIGMA = 0.3


@dataclass(frozen=True)
class AnomalySpec:
    """Injected attack runs"""
    fraction: float = 0.0
    types: Tuple[str, ...] = ANOMALY_TYPES
    magnitude: float = 4.0
    run_length: int = 10

    def __post_init__(self):
        object.__setattr__(self, 'types', tuple(self.types))
        if not 0 <= self.fraction < 1:
            raise DataValidationError(f"anomaly fraction must lie in [0, 1), got {self.fraction}")
        unknown = [t for t in self.types if t not in ANOMALY_TYPES]
        if unknown or not self.types:
            raise DataValidationError(f"anomaly types must be a non-empty subset of {ANOMALY_TYPES}, got {self.types}")
        if not self.magnitude > 0:
            raise DataValidationError(f"anomaly magnitude must be positive, got {self.magnitude}")
        if self.run_length < 1:
            raise DataValidationError(f"run_length must be >= 1, got {self.run_length}")


@dataclass(frozen=True)
class DomainSpec:
    """
    Generator settings of one domain

    Per-receiver regime parameters are drawn around ar_coef, level and
    noise_scale. Anomalies never touch the first warmup_flows flows of a
    receiver.
    """
    name: str = SOURCE
    feature_dim: int = 12
    receivers: int = 8
    flows_per_receiver: int = 750
    ar_coef: float = 0.8
    level: float = 5.0
    noise_scale: float = 0.5
    seasonal_period: int = 24
    address_prefix: str = "10.1.0"
    anomaly: AnomalySpec = field(default_factory=AnomalySpec)
    warmup_flows: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.feature_dim < 2:
            raise DataValidationError(f"feature_dim must be >= 2, got {self.feature_dim}")
        if self.receivers < 1 or self.flows_per_receiver < 1:
            raise DataValidationError("receivers and flows_per_receiver must be positive")
        if not 0 <= self.ar_coef < 1:
            raise DataValidationError(f"ar_coef must lie in [0, 1), got {self.ar_coef}")
        if not self.level > 0 or not self.noise_scale > 0:
            raise DataValidationError("level and noise_scale must be positive")
        if self.seasonal_period < 2:
            raise DataValidationError(f"seasonal_period must be >= 2, got {self.seasonal_period}")
        if self.warmup_flows < 0:
            raise DataValidationError(f"warmup_flows must be >= 0, got {self.warmup_flows}")

    @property
    def n_flows(self) -> int:
        return self.receivers * self.flows_per_receiver

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['anomaly']['types'] = list(self.anomaly.types)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DomainSpec':
        data = dict(data)
        if 'anomaly' in data:
            data['anomaly'] = AnomalySpec(**data['anomaly'])
        return cls(**data)


def default_source_spec() -> DomainSpec:
    return DomainSpec()


def default_target_spec() -> DomainSpec:
    return DomainSpec(
        name=TARGET,
        feature_dim=8,
        receivers=6,
        flows_per_receiver=667,
        ar_coef=0.6,
        level=3.0,
        noise_scale=0.7,
        seasonal_period=16,
        address_prefix="10.2.0",
        anomaly=AnomalySpec(fraction=0.07),
        seed=1,
    )


def default_train_config() -> TrainConfig:
    """Source-phase settings of the shipped run profile"""
    return TrainConfig(contrastive=ContrastiveConfig(margin=BENCH_MARGIN, noise_sigma=BENCH_NOISE_SIGMA))


def default_adapt_config() -> TrainConfig:
    return replace(default_train_config(), lr=ADAPT_LR)


def seeded_spec(spec: DomainSpec, seed: int) -> DomainSpec:
    """Spec for one benchmark seed; distinct domains keep distinct streams"""
    return replace(spec, seed=spec.seed + SEED_STRIDE * seed)


def domain_schema(spec: DomainSpec) -> FeatureSchema:
    """Feature names: rate, port-spread proxy and volume columns"""
    rate, spread, volume = _feature_groups(spec.feature_dim)
    names = [f"rate{i}" for i in range(len(rate))]
    names += [f"spread{i}" for i in range(len(spread))]
    names += [f"bytes{i}" for i in range(len(volume))]
    return FeatureSchema(tuple(names))


def _feature_groups(dim: int) -> Tuple[range, range, range]:
    third = max(1, dim // 3)
    return range(0, third), range(third, dim - third), range(dim - third, dim)


def _place_runs(spec: DomainSpec, rng: np.random.Generator) -> List[Tuple[int, int, int, str]]:
    """Non-overlapping (receiver, start, length, type) runs covering exactly round(fraction * n) flows"""
    anomaly = spec.anomaly
    target = int(round(anomaly.fraction * spec.n_flows))
    if target == 0:
        return []
    eligible = spec.flows_per_receiver - spec.warmup_flows
    if eligible * spec.receivers < target:
        raise DataValidationError(
            f"cannot place {target} anomalous flows after {spec.warmup_flows} warm-up flows per receiver"
        )

    taken = np.zeros((spec.receivers, spec.flows_per_receiver), dtype=bool)
    taken[:, :spec.warmup_flows] = True
    runs = []
    placed = attempts = 0
    while placed < target:
        length = min(anomaly.run_length, target - placed, eligible)
        receiver = int(rng.integers(spec.receivers))
        start = int(rng.integers(spec.warmup_flows, spec.flows_per_receiver - length + 1))
        attempts += 1
        if taken[receiver, start:start + length].any():
            if attempts < 100 * max(target, 1):
                continue
            # crowded domain: fall back to the first free flow
            receiver, start = (int(v) for v in np.argwhere(~taken)[0])
            length = 1
        taken[receiver, start:start + length] = True
        runs.append((receiver, start, length, str(rng.choice(anomaly.types))))
        placed += length
    return runs


def generate_domain(spec: DomainSpec) -> Tuple[List[FlowRecord], List[Label]]:
    """
    Generate flows and per-flow ground truth

    Output is ordered by timestamp and depends only on the spec.
    """
    rng = np.random.default_rng(spec.seed)
    R, F, D = spec.receivers, spec.flows_per_receiver, spec.feature_dim
    rate, spread, volume = _feature_groups(D)

    levels = rng.uniform(-spec.level, spec.level, size=(R, D))
    phi = np.clip(spec.ar_coef + rng.uniform(-0.1, 0.1, size=R), 0.0, 0.98)
    noise = spec.noise_scale * rng.uniform(0.5, 1.5, size=R)
    amplitude = 0.3 * spec.level * rng.uniform(0.0, 1.0, size=(R, D))
    phase = rng.uniform(0.0, 2 * np.pi, size=(R, D))
    mixing = np.eye(D) + 0.3 * rng.standard_normal((D, D)) / np.sqrt(D)

    t = np.arange(F)
    values = np.empty((R, F, D))
    for r in range(R):
        shocks = rng.standard_normal((F, D)) * noise[r]
        ar = np.empty((F, D))
        ar[0] = shocks[0] / np.sqrt(1 - phi[r] ** 2)
        for i in range(1, F):
            ar[i] = phi[r] * ar[i - 1] + shocks[i]
        season = amplitude[r] * np.sin(2 * np.pi * t[:, None] / spec.seasonal_period + phase[r])
        values[r] = levels[r] + season + ar @ mixing.T

    labels = np.zeros((R, F), dtype=bool)
    sources = rng.integers(1, 255, size=(R, F))
    attacker = np.zeros((R, F), dtype=bool)
    for receiver, start, length, kind in _place_runs(spec, rng):
        rows = slice(start, start + length)
        scale = spec.anomaly.magnitude * noise[receiver] / np.sqrt(1 - phi[receiver] ** 2)
        if kind == "burst":
            values[receiver, rows, rate.start:rate.stop] += scale * (1.0 + rng.random((length, len(rate))))
        elif kind == "scan":
            cols = spread if len(spread) else range(D)
            values[receiver, rows, cols.start:cols.stop] = (
                levels[receiver, cols.start:cols.stop] + scale * rng.standard_normal((length, len(cols)))
            )
            attacker[receiver, rows] = True
        else:
            values[receiver, rows, volume.start:volume.stop] += 0.75 * scale
        labels[receiver, rows] = True

    flows, truth = [], []
    for i in range(F):
        for r in range(R):
            src = f"203.0.113.{sources[r, i]}" if attacker[r, i] else f"172.16.{r}.{sources[r, i]}"
            flows.append(FlowRecord(
                ts=float(i) + r / R,
                src=src,
                dst=f"{spec.address_prefix}.{r + 1}",
                features=tuple(float(v) for v in values[r, i]),
            ))
            truth.append(Label.ANOMALOUS if labels[r, i] else Label.BENIGN)

    logger.debug(f"Generated {len(flows)} {spec.name} flows, {int(labels.sum())} anomalous")
    return flows, truth


def train_baseline(
    kind: Union[str, ModelKind],
    sequences: SequenceT[Sequence],
    cfg: TrainConfig,
    seed: int,
    core: Optional[CoreConfig] = None,
    normalizer: Optional[Normalizer] = None,
    schema: Optional[FeatureSchema] = None
) -> ModelBundle:
    """Source training of the AE (MSE only, deterministic latent) or plain VAE (MSE + KL)"""
    kind = ModelKind(kind)
    if kind is ModelKind.CTAL_VAE:
        raise DataValidationError("train_baseline accepts only 'ae' or 'vae'")
    return train_source(sequences, cfg, seed, core, kind, normalizer, schema)


@dataclass(frozen=True)
class BenchConfig:
    """Everything but the domain specs and seeds that a benchmark run needs"""
    core: CoreConfig = field(default_factory=CoreConfig)
    train: TrainConfig = field(default_factory=default_train_config)
    adapt: TrainConfig = field(default_factory=default_adapt_config)
    n_shots: int = DEFAULT_N_SHOTS
    threshold_q: float = DEFAULT_QUANTILE
    source_split: float = 0.8
    workers: int = 1

    def to_dict(self) -> Dict[str, Any]:
        return {
            'core': self.core.to_dict(),
            'train': self.train.to_dict(),
            'adapt': self.adapt.to_dict(),
            'n_shots': self.n_shots,
            'threshold_q': self.threshold_q,
            'source_split': self.source_split,
            'workers': self.workers,
        }


@dataclass
class BenchReport:
    """Per-seed metrics of every model, their medians and the config echo"""
    seeds: List[int]
    results: Dict[str, List[Metrics]]
    medians: Dict[str, Dict[str, float]]
    config: Dict[str, Any]
    runtime: float = 0.0

    def __post_init__(self):
        if not self.seeds:
            raise DataValidationError("a benchmark report needs at least one seed")
        if set(self.results) != set(MODEL_KINDS):
            raise DataValidationError(f"report models must be exactly {MODEL_KINDS}, got {sorted(self.results)}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'seeds': list(self.seeds),
            'results': {k: [m.to_dict() for m in v] for k, v in self.results.items()},
            'medians': self.medians,
            'config': self.config,
            'runtime': self.runtime,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'BenchReport':
        return cls(
            seeds=list(data['seeds']),
            results={k: [Metrics.from_dict(m) for m in v] for k, v in data['results'].items()},
            medians=data['medians'],
            config=data['config'],
            runtime=data.get('runtime', 0.0),
        )


def _window_key(seq: Sequence) -> Tuple[str, float]:
    return seq.receiver, seq.start_ts


def run_seed(source_spec: DomainSpec, target_spec: DomainSpec, cfg: BenchConfig, seed: int) -> Dict[str, Metrics]:
    """
    One benchmark replicate

    Ground-truth labels are only read once the predictions exist.
    """
    T = cfg.core.T
    source_spec, target_spec = seeded_spec(source_spec, seed), seeded_spec(target_spec, seed)
    source_flows, _ = generate_domain(source_spec)
    target_flows, target_truth = generate_domain(target_spec)

    source_norm = fit_normalizer(source_flows)
    source_train, source_held = split_sequences(build_sequences(source_flows, source_norm, T), cfg.source_split, seed)

    raw_shots = select_shots(build_sequences(target_flows, Normalizer.identity(target_spec.feature_dim), T), cfg.n_shots)
    target_norm = fit_normalizer([target_flows[i] for seq in raw_shots for i in seq.flow_ids])
    target_seqs = build_sequences(target_flows, target_norm, T)
    shot_keys = {_window_key(s) for s in raw_shots}
    shots = [s for s in target_seqs if _window_key(s) in shot_keys]
    test = [s for s in target_seqs if _window_key(s) not in shot_keys]

    source_schema, target_schema = domain_schema(source_spec), domain_schema(target_spec)
    results: Dict[str, Metrics] = {}
    for kind in ModelKind:
        with LoggerContext(logger, seed=seed, kind=kind.value):
            if kind is ModelKind.CTAL_VAE:
                bundle = train_source(source_train, cfg.train, seed, cfg.core, kind, source_norm, source_schema)
            else:
                bundle = train_baseline(kind, source_train, cfg.train, seed, cfg.core, source_norm, source_schema)
            if source_held:
                bundle.thresholds[SOURCE] = fit_threshold(score(bundle, SOURCE, source_held), cfg.threshold_q)

            adapted = adapt_target(
                bundle, shots, cfg.adapt, seed, TARGET, target_norm, target_schema, cfg.n_shots, cfg.threshold_q
            )
            predicted = classify(score(adapted, TARGET, test), adapted.thresholds[TARGET])
            metrics = evaluate(predicted, label_sequences(test, target_truth))
            logger.info(f"Seed {seed} {kind.value}: {metrics.to_dict()}")
            results[kind.value] = metrics
    return results


async def _run_parallel(source_spec, target_spec, cfg: BenchConfig, seeds: List[int]) -> List[Dict[str, Metrics]]:
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        return await asyncio.gather(*[
            loop.run_in_executor(pool, run_seed, source_spec, target_spec, cfg, seed)
            for seed in seeds
        ])


@log_performance(logger)
def run_benchmark(
    source_spec: DomainSpec,
    target_spec: DomainSpec,
    cfg: BenchConfig,
    seeds: SequenceT[int]
) -> BenchReport:
    """
    Run every seed and aggregate medians

    Seeds run in worker processes when cfg.workers > 1; results are merged
    by seed position either way.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise DataValidationError("run_benchmark needs at least one seed")

    started = time.perf_counter()
    if cfg.workers > 1 and len(seeds) > 1:
        per_seed = asyncio.run(_run_parallel(source_spec, target_spec, cfg, seeds))
    else:
        per_seed = [run_seed(source_spec, target_spec, cfg, seed) for seed in seeds]

    results = {kind: [r[kind] for r in per_seed] for kind in MODEL_KINDS}
    medians = {
        kind: {
            metric: float(np.median([getattr(m, metric) for m in metrics]))
            for metric in ('accuracy', 'mcc', 'sensitivity')
        }
        for kind, metrics in results.items()
    }
    config = {
        'source': source_spec.to_dict(),
        'target': target_spec.to_dict(),
        'seeds': seeds,
        **cfg.to_dict(),
    }
    return BenchReport(seeds, results, medians, config, time.perf_counter() - started)


def emit_report(report: BenchReport, directory: Union[str, Path]) -> List[Path]:
    """Write report.json and metrics.csv (model, seed, accuracy, mcc, sensitivity)"""
    files = FileManager(directory)
    files.create_directory()
    rows = [
        {'model': kind, 'seed': seed, 'accuracy': m.accuracy, 'mcc': m.mcc, 'sensitivity': m.sensitivity}
        for kind in MODEL_KINDS
        for seed, m in zip(report.seeds, report.results[kind])
    ]
    frame = pd.DataFrame(rows, columns=['model', 'seed', 'accuracy', 'mcc', 'sensitivity'])
    written = [
        files.write_json('report.json', report.to_dict()),
        files.write_text('metrics.csv', frame.to_csv(index=False, lineterminator='\n')),
    ]
    logger.info(f"Wrote benchmark report to {files.base_path}")
    return written
