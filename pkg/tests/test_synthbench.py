from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from ctalvae.adaptors import SOURCE, TARGET
from ctalvae.checkpoint import ModelKind
from ctalvae.config import RunConfig
from ctalvae.errors import DataValidationError
from ctalvae.flow_model import Label, build_sequences, fit_normalizer, label_sequences
from ctalvae.pipeline import Metrics, TrainConfig, adapt_target, score, select_shots, train_source
from ctalvae.synthbench import (
    MODEL_KINDS,
    AnomalySpec,
    BenchConfig,
    BenchReport,
    DomainSpec,
    default_source_spec,
    default_target_spec,
    domain_schema,
    emit_report,
    generate_domain,
    run_benchmark,
    seeded_spec,
    train_baseline,
)
from ctalvae.vae import CoreConfig


class TestGenerateDomain:

    def test_deterministic(self, small_target_spec):
        flows_a, labels_a = generate_domain(small_target_spec)
        flows_b, labels_b = generate_domain(small_target_spec)
        assert flows_a == flows_b
        assert labels_a == labels_b

    def test_shape_and_order(self, small_source_spec):
        flows, labels = generate_domain(small_source_spec)

        assert len(flows) == len(labels) == small_source_spec.n_flows
        assert all(len(f.features) == small_source_spec.feature_dim for f in flows)
        assert [f.ts for f in flows] == sorted(f.ts for f in flows)
        assert {f.dst for f in flows} == {"10.1.0.1", "10.1.0.2", "10.1.0.3"}

    def test_no_anomalies_by_default(self, small_source_spec):
        _, labels = generate_domain(small_source_spec)
        assert set(labels) == {Label.BENIGN}

    def test_exact_anomaly_count(self):
        spec = DomainSpec(receivers=10, flows_per_receiver=1000, anomaly=AnomalySpec(fraction=0.07), seed=3)
        _, labels = generate_domain(spec)
        assert len(labels) == 10_000
        assert labels.count(Label.ANOMALOUS) == 700

    def test_warmup_flows_stay_benign(self, small_target_spec):
        flows, labels = generate_domain(small_target_spec)
        seen = {}
        for flow, label in zip(flows, labels):
            seen[flow.dst] = seen.get(flow.dst, 0) + 1
            if seen[flow.dst] <= small_target_spec.warmup_flows:
                assert label is Label.BENIGN

    def test_scan_sources_only_on_anomalies(self):
        spec = replace(default_target_spec(), flows_per_receiver=200,
                       anomaly=AnomalySpec(fraction=0.1, types=("scan",)))
        flows, labels = generate_domain(spec)
        external = [label for flow, label in zip(flows, labels) if flow.src.startswith("203.0.113.")]
        assert external
        assert set(external) == {Label.ANOMALOUS}

    def test_bursts_are_large(self):
        spec = replace(default_source_spec(), flows_per_receiver=200,
                       anomaly=AnomalySpec(fraction=0.1, types=("burst",)))
        flows, labels = generate_domain(spec)
        benign = replace(spec, anomaly=AnomalySpec())
        clean, _ = generate_domain(benign)
        shifted = [f.features[0] - c.features[0] for f, c, l in zip(flows, clean, labels) if l is Label.ANOMALOUS]
        assert min(shifted) > 0

    def test_too_many_anomalies_for_warmup(self):
        spec = DomainSpec(receivers=1, flows_per_receiver=40, warmup_flows=39, anomaly=AnomalySpec(fraction=0.5))
        with pytest.raises(DataValidationError):
            generate_domain(spec)


class TestSpecs:

    def test_default_schema(self):
        assert domain_schema(default_source_spec()).names == (
            "rate0", "rate1", "rate2", "rate3",
            "spread0", "spread1", "spread2", "spread3",
            "bytes0", "bytes1", "bytes2", "bytes3",
        )
        assert domain_schema(default_target_spec()).dim == 8

    def test_seeded_spec_offsets(self):
        assert seeded_spec(default_target_spec(), 3).seed == 1 + 3000

    def test_round_trip_dict(self, small_target_spec):
        assert DomainSpec.from_dict(small_target_spec.to_dict()) == small_target_spec

    @pytest.mark.parametrize("kwargs", [{"fraction": 1.0}, {"types": ("ddos",)}, {"run_length": 0}])
    def test_invalid_anomaly_spec(self, kwargs):
        with pytest.raises(DataValidationError):
            AnomalySpec(**kwargs)


def test_train_baseline_rejects_ctal(tiny_sequences, tiny_train_config, tiny_core):
    with pytest.raises(DataValidationError):
        train_baseline("ctal_vae", tiny_sequences, tiny_train_config, 0, tiny_core)
    bundle = train_baseline("ae", tiny_sequences, tiny_train_config, 0, tiny_core)
    assert bundle.kind is ModelKind.AE


class TestBenchmark:

    @pytest.fixture
    def report(self, small_source_spec, small_target_spec, small_bench_config):
        return run_benchmark(small_source_spec, small_target_spec, small_bench_config, [1, 2])

    def test_every_model_every_seed(self, report):
        assert report.seeds == [1, 2]
        assert set(report.results) == set(MODEL_KINDS)
        for kind in MODEL_KINDS:
            assert len(report.results[kind]) == 2
            for m in report.results[kind]:
                assert 0.0 <= m.accuracy <= 1.0
                assert -1.0 <= m.mcc <= 1.0
            assert set(report.medians[kind]) == {"accuracy", "mcc", "sensitivity"}

    def test_deterministic_apart_from_runtime(self, report, small_source_spec, small_target_spec, small_bench_config):
        again = run_benchmark(small_source_spec, small_target_spec, small_bench_config, [1, 2])
        first, second = report.to_dict(), again.to_dict()
        first.pop("runtime")
        second.pop("runtime")
        assert first == second

    def test_config_echo(self, report, small_bench_config):
        assert report.config["n_shots"] == small_bench_config.n_shots
        assert report.config["target"]["feature_dim"] == 3
        assert report.config["seeds"] == [1, 2]

    def test_report_round_trip(self, report):
        assert BenchReport.from_dict(report.to_dict()).to_dict() == report.to_dict()

    def test_emit_report(self, report, tmp_path):
        written = emit_report(report, tmp_path / "bench")

        assert [p.name for p in written] == ["report.json", "metrics.csv"]
        frame = pd.read_csv(tmp_path / "bench" / "metrics.csv")
        assert list(frame.columns) == ["model", "seed", "accuracy", "mcc", "sensitivity"]
        assert len(frame) == 3 * len(report.seeds)
        for row in frame.itertuples():
            m = report.results[row.model][report.seeds.index(row.seed)]
            assert row.mcc == pytest.approx(m.mcc, abs=1e-6)
            assert row.accuracy == pytest.approx(m.accuracy, abs=1e-6)

    def test_empty_seed_list(self, small_source_spec, small_target_spec, small_bench_config):
        with pytest.raises(DataValidationError):
            run_benchmark(small_source_spec, small_target_spec, small_bench_config, [])


def test_report_requires_all_models():
    metrics = Metrics(1.0, 0.0, 0.0, 0, 1, 0, 0)
    with pytest.raises(DataValidationError):
        BenchReport([1], {"ae": [metrics]}, {}, {})


@pytest.mark.slow
def test_burst_windows_score_above_benign():
    spec = replace(default_source_spec(), flows_per_receiver=300,
                   anomaly=AnomalySpec(fraction=0.05, types=("burst",)), seed=7)
    flows, labels = generate_domain(spec)
    norm = fit_normalizer(flows)
    sequences = build_sequences(flows, norm, 30)
    truth = label_sequences(sequences, labels)
    benign = [s for s, t in zip(sequences, truth) if t is Label.BENIGN]
    bundle = train_source(benign, TrainConfig(epochs=30, seed=7), seed=7,
                          core=CoreConfig(core_dim=12, hidden=16, latent=4, T=30))

    scores = score(bundle, SOURCE, sequences)

    anomalous = [s for s, t in zip(scores, truth) if t is Label.ANOMALOUS]
    normal = [s for s, t in zip(scores, truth) if t is Label.BENIGN]
    assert np.median(anomalous) > np.median(normal)


@pytest.mark.slow
def test_adaptation_lowers_benign_target_error():
    core = CoreConfig(core_dim=8, hidden=16, latent=4, T=30)
    cfg = TrainConfig(epochs=30, seed=7)
    gains = []
    for seed in range(1, 6):
        source = seeded_spec(replace(default_source_spec(), flows_per_receiver=300), seed)
        target = seeded_spec(replace(default_target_spec(), flows_per_receiver=300, anomaly=AnomalySpec()), seed)
        source_flows, _ = generate_domain(source)
        target_flows, _ = generate_domain(target)
        bundle = train_source(build_sequences(source_flows, fit_normalizer(source_flows), 30), cfg, seed, core)

        windows = build_sequences(target_flows, fit_normalizer(target_flows), 30)
        shots = select_shots(windows)
        held = [w for w in windows if all(w is not s for s in shots)]
        before = adapt_target(bundle, shots, replace(cfg, epochs=1, lr=1e-12), seed)
        after = adapt_target(bundle, shots, replace(cfg, epochs=100), seed)
        gains.append(np.mean(score(before, TARGET, held)) - np.mean(score(after, TARGET, held)))

    assert np.median(gains) > 0


@pytest.mark.slow
def test_default_benchmark_ordering():
    cfg = replace(RunConfig().bench_config(), workers=4)
    report = run_benchmark(default_source_spec(), default_target_spec(), cfg, [1, 2, 3, 4, 5])

    for metric in ("accuracy", "mcc", "sensitivity"):
        median = {kind: report.medians[kind][metric] for kind in MODEL_KINDS}
        assert median["ctal_vae"] >= median["vae"] >= median["ae"], metric
    assert report.runtime < 600

