"""
Shared fixtures: tiny cores, hand-made flows and small synthetic domains
"""

import json
from dataclasses import replace

import numpy as np
import pytest

from ctalvae.adaptors import SOURCE, TARGET, DomainId, init_adaptor_pair
from ctalvae.checkpoint import ModelKind
from ctalvae.flow_model import FlowRecord, Sequence
from ctalvae.net_core import ParameterStore
from ctalvae.objectives import ContrastiveConfig, LossWeights
from ctalvae.pipeline import TrainConfig, new_bundle
from ctalvae.synthbench import AnomalySpec, BenchConfig, DomainSpec
from ctalvae.vae import CoreConfig, init_core


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_core():
    return CoreConfig(core_dim=5, hidden=4, latent=2, T=3)


@pytest.fixture
def tiny_store(tiny_core, rng):
    store = ParameterStore()
    init_core(store, tiny_core, rng)
    return store


def make_flows(counts, dim=2, seed=0, start=0.0):
    """Interleaved flows; counts maps receiver -> number of flows"""
    gen = np.random.default_rng(seed)
    flows = []
    t = start
    remaining = dict(counts)
    while any(remaining.values()):
        for receiver in sorted(remaining):
            if remaining[receiver]:
                flows.append(FlowRecord(t, "172.16.0.9", receiver, tuple(gen.normal(size=dim).tolist())))
                remaining[receiver] -= 1
                t += 1.0
    return flows


def make_sequence(receiver, T, dim, length=None, seed=0, start_ts=0.0):
    gen = np.random.default_rng(seed)
    length = T if length is None else length
    data = np.zeros((T, dim))
    data[:length] = gen.normal(size=(length, dim))
    mask = np.arange(T) < length
    return Sequence(receiver, start_ts, data, mask, tuple(range(length)))


@pytest.fixture
def tiny_sequences(tiny_core):
    """Eight windows of a 3-feature domain spread over four receivers"""
    return [
        make_sequence(f"10.1.0.{i % 4 + 1}", tiny_core.T, 3, length=tiny_core.T - (i % 2), seed=i, start_ts=float(i))
        for i in range(8)
    ]


@pytest.fixture
def tiny_train_config():
    return TrainConfig(
        epochs=3,
        lr=0.01,
        batch_size=4,
        seed=7,
        weights=LossWeights(),
        contrastive=ContrastiveConfig(margin=0.5, noise_sigma=0.05),
    )


@pytest.fixture
def tiny_bundle(tiny_core):
    return new_bundle(tiny_core, ModelKind.CTAL_VAE, SOURCE, 3, seed=0)


@pytest.fixture
def identity_pair_store():
    """Core plus identity adaptors in core space (domain_dim == core_dim)"""
    core = CoreConfig(core_dim=3, hidden=16, latent=4, T=5)
    gen = np.random.default_rng(3)
    store = ParameterStore()
    init_core(store, core, gen)
    pair = init_adaptor_pair(store, DomainId(SOURCE), core.core_dim, core.core_dim, gen, identity=True)
    return core, store, pair


@pytest.fixture
def small_source_spec():
    return DomainSpec(name=SOURCE, feature_dim=4, receivers=3, flows_per_receiver=60, warmup_flows=10, seed=0)


@pytest.fixture
def small_target_spec():
    return DomainSpec(
        name=TARGET, feature_dim=3, receivers=3, flows_per_receiver=60, warmup_flows=10,
        address_prefix="10.2.0", anomaly=AnomalySpec(fraction=0.1, run_length=5), seed=1,
    )


@pytest.fixture
def small_bench_config():
    train = TrainConfig(epochs=2, lr=0.01, batch_size=8, seed=7)
    return BenchConfig(
        core=CoreConfig(core_dim=4, hidden=4, latent=2, T=10),
        train=train,
        adapt=replace(train, epochs=2),
        n_shots=2,
        threshold_q=0.99,
        source_split=0.8,
        workers=1,
    )


@pytest.fixture
def small_config_file(tmp_path):
    """Partial run configuration for fast end-to-end CLI runs"""
    tree = {
        "core": {"core_dim": 4, "hidden": 4, "latent": 2, "T": 10},
        "train": {"epochs": 2, "batch_size": 8, "lr": 0.01},
        "adapt": {"epochs": 2, "n_shots": 2},
        "source": {"feature_dim": 4, "receivers": 3, "flows_per_receiver": 60, "warmup_flows": 10},
        "target": {
            "feature_dim": 3, "receivers": 3, "flows_per_receiver": 60, "warmup_flows": 10,
            "anomaly": {"fraction": 0.1, "run_length": 5},
        },
        "seeds": [1, 2],
    }
    path = tmp_path / "small.json"
    path.write_text(json.dumps(tree))
    return path
