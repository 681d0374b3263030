"""Round loop, aggregation, baselines, and end-to-end determinism."""
import math

import numpy as np
import pytest

from fedpsd.config import ExperimentConfig
from fedpsd.data import class_prior, synth_generate
from fedpsd.engine import (
    aggregate,
    build_federation,
    local_train_baseline,
    lr_schedule,
    run_experiment,
    run_round,
    sample_clients,
)
from fedpsd.nn import ContractViolation, forward, init_model, top1_accuracy
from fedpsd.psd import local_train_fedpsd


class TestSampleClients:
    def test_full_participation(self):
        assert sorted(sample_clients(7, 1.0, 0, seed=0)) == list(range(7))

    def test_ten_percent_of_hundred(self):
        ids = sample_clients(100, 0.1, 3, seed=1)
        assert len(ids) == 10 and len(set(ids)) == 10
        assert all(0 <= c < 100 for c in ids)

    def test_ceil_rounding(self):
        assert len(sample_clients(10, 0.25, 0, seed=0)) == 3

    def test_keyed_by_seed_and_round(self):
        a = sample_clients(50, 0.2, 4, seed=9)
        assert a == sample_clients(50, 0.2, 4, seed=9)
        assert a != sample_clients(50, 0.2, 5, seed=9) or a != sample_clients(50, 0.2, 4, seed=10)

    def test_fraction_domain(self):
        with pytest.raises(ContractViolation):
            sample_clients(10, 0.0, 0, seed=0)


class TestAggregate:
    def test_single_client_identity(self):
        model = init_model([3, 4, 2], seed=0)
        out = aggregate([(model, 17)])
        for a, b in zip(out.arrays(), model.arrays()):
            assert np.array_equal(a, b)

    def test_weighted_scalar_mean(self):
        zero = init_model([2, 1], seed=0)
        four = init_model([2, 1], seed=0)
        zero.weights[0][:] = 0.0
        zero.biases[0][:] = 0.0
        four.weights[0][:] = 4.0
        four.biases[0][:] = 4.0
        out = aggregate([(zero, 1), (four, 3)])
        assert np.allclose(out.weights[0], 3.0, atol=1e-15)
        assert np.allclose(out.biases[0], 3.0, atol=1e-15)

    def test_matches_straight_line_oracle(self):
        rng = np.random.default_rng(2)
        for trial in range(20):
            k = int(rng.integers(1, 8))
            models = [init_model([3, 4, 2], seed=100 * trial + j) for j in range(k)]
            counts = [int(rng.integers(1, 50)) for _ in range(k)]
            out = aggregate(list(zip(models, counts)))
            n = sum(counts)
            for arr_i, got in enumerate(out.arrays()):
                # Different summation order: accumulate n_k * w, divide once.
                acc = np.zeros_like(got)
                for m, c in zip(models, counts):
                    acc = acc + c * m.arrays()[arr_i]
                assert np.abs(got - acc / n).max() < 1e-12

    def test_shape_mismatch_names_client(self):
        a = init_model([3, 4, 2], seed=0)
        b = init_model([3, 5, 2], seed=0)
        with pytest.raises(ContractViolation, match="client 42"):
            aggregate([(a, 10), (b, 10)], client_ids=[7, 42])

    def test_empty_rejected(self):
        with pytest.raises(ContractViolation):
            aggregate([])


class TestLrSchedule:
    def test_values(self):
        assert lr_schedule(0.01, 0) == 0.01
        assert lr_schedule(0.01, 1) == pytest.approx(0.0099, abs=1e-15)
        direct = 0.01 * math.pow(0.99, 200)
        assert lr_schedule(0.01, 200) == pytest.approx(direct, abs=1e-18)
        assert lr_schedule(0.01, 200) == pytest.approx(0.00134, abs=1e-5)

    def test_negative_round(self):
        with pytest.raises(ContractViolation):
            lr_schedule(0.01, -1)


def _one_client(seed=0, classes=2, per_class=40, spread=0.1):
    ds = synth_generate(classes, 8, per_class, seed=seed, spread=spread)
    return ds


class TestLocalBaseline:
    def test_lr_zero_returns_global(self):
        ds = _one_client()
        model = init_model([8, 6, 2], seed=0)
        cfg = ExperimentConfig(epochs=2, batch_size=16, seed=0)
        params, _ = local_train_baseline(model, ds.features, ds.labels, 0, 0, 0.0, cfg)
        for a, b in zip(params.arrays(), model.arrays()):
            assert np.array_equal(a, b)

    def test_fedprox_pull_toward_global(self):
        ds = _one_client(seed=1)
        model = init_model([8, 6, 2], seed=1)
        # mu large but stable: lr * mu must stay below 2 or the proximal
        # pull itself oscillates and diverges.
        avg_cfg = ExperimentConfig(algorithm="fedavg", epochs=3, batch_size=16, seed=2, momentum=0.0)
        prox_cfg = ExperimentConfig(
            algorithm="fedprox", prox_mu=10.0, epochs=3, batch_size=16, seed=2, momentum=0.0
        )
        p_avg, _ = local_train_baseline(model, ds.features, ds.labels, 0, 0, 0.05, avg_cfg)
        p_prox, _ = local_train_baseline(model, ds.features, ds.labels, 0, 0, 0.05, prox_cfg)

        def dist(p):
            return sum(float(((a - b) ** 2).sum()) for a, b in zip(p.arrays(), model.arrays()))

        assert dist(p_prox) < dist(p_avg)

    def test_separable_client_converges(self):
        ds = _one_client(seed=3)
        model = init_model([8, 6, 2], seed=3)
        cfg = ExperimentConfig(epochs=20, batch_size=16, seed=0)
        params, losses = local_train_baseline(model, ds.features, ds.labels, 0, 0, 0.05, cfg)
        acc = top1_accuracy(forward(params, ds.features), ds.labels)
        assert acc >= 0.95
        assert losses[-1] < losses[0]

    def test_all_flags_off_fedpsd_is_fedavg_bit_exact(self):
        ds = synth_generate(4, 8, 30, seed=5, spread=0.3)
        prior = class_prior(ds.labels, 4, epsilon=1.0)
        model = init_model([8, 6, 4], seed=5)
        base = dict(epochs=3, batch_size=16, seed=11, t_total=10)
        avg_cfg = ExperimentConfig(algorithm="fedavg", **base)
        off_cfg = ExperimentConfig(algorithm="fedpsd", rhpk=False, psd=False, cll=False, **base)
        p_avg, l_avg = local_train_baseline(model, ds.features, ds.labels, 3, 2, 0.04, avg_cfg)
        p_off, _, l_off = local_train_fedpsd(
            model, ds.features, ds.labels, prior, None, 3, 2, 0.04, off_cfg
        )
        assert l_avg == l_off
        for a, b in zip(p_avg.arrays(), p_off.arrays()):
            assert np.array_equal(a, b)


def _small_cfg(**overrides):
    base = dict(
        dataset="synthetic", synth_classes=4, synth_dim=8, synth_per_class=30,
        synth_test_per_class=15, synth_spread=0.25, partition="sharding",
        shards_per_client=2, num_clients=6, fraction=0.5, t_total=5, epochs=2,
        batch_size=16, test_budget=20, sweep_every=0, seed=0,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestRunRound:
    def test_single_client_round_is_identity(self):
        cfg = _small_cfg(num_clients=1, fraction=1.0, shards_per_client=4)
        from fedpsd.engine import _load_dataset_pair

        train, test = _load_dataset_pair(cfg)
        server, clients = build_federation(cfg, train, test)
        run_round(server, clients, train, test, cfg)
        only = clients[0]
        for a, b in zip(server.global_params.arrays(), only.last_params.arrays()):
            assert np.array_equal(a, b)

    def test_report_contents(self):
        cfg = _small_cfg()
        from fedpsd.engine import _load_dataset_pair

        train, test = _load_dataset_pair(cfg)
        server, clients = build_federation(cfg, train, test)
        report = run_round(server, clients, train, test, cfg)
        assert len(report.sampled) == math.ceil(cfg.fraction * cfg.num_clients)
        assert server.round == 1
        assert all(0.0 <= a <= 1.0 for a in report.client_accuracies)
        # recompute each participant's accuracy from its stored parameters
        for cid, reported in zip(report.sampled, report.client_accuracies):
            cl = clients[cid]
            idx = cl.partition.test_indices
            again = top1_accuracy(forward(cl.last_params, test.features[idx]), test.labels[idx])
            assert again == reported
        assert report.avg_client_top1 == pytest.approx(
            sum(report.client_accuracies) / len(report.client_accuracies), abs=1e-15
        )


class TestRunExperiment:
    def test_single_round_series(self):
        series = run_experiment(_small_cfg(t_total=1))
        assert len(series.rounds) == 1
        assert series.rounds[0].round == 1

    def test_identical_seeds_identical_series(self):
        a = run_experiment(_small_cfg())
        b = run_experiment(_small_cfg())
        assert a.rounds == b.rounds

    def test_worker_count_does_not_change_results(self):
        serial = run_experiment(_small_cfg(algorithm="fedpsd"))
        threaded = run_experiment(_small_cfg(algorithm="fedpsd", workers=4))
        assert serial.rounds == threaded.rounds

    def test_iid_fedavg_converges(self):
        cfg = _small_cfg(
            partition="dirichlet", dirichlet_alpha=1e6, synth_per_class=50,
            t_total=30, synth_spread=0.2,
        )
        series = run_experiment(cfg)
        assert series.rounds[-1].server_top1 >= 0.9

    def test_sweep_schedule(self):
        series = run_experiment(_small_cfg(t_total=4, sweep_every=2))
        assert [s.round for s in series.sweeps] == [2, 4]
        assert all(0.0 <= s.all_client_top1 <= 1.0 for s in series.sweeps)

    def test_fedpsd_off_matches_fedavg_end_to_end(self):
        avg = run_experiment(_small_cfg(algorithm="fedavg"))
        off = run_experiment(
            _small_cfg(algorithm="fedpsd", rhpk=False, psd=False, cll=False)
        )
        assert avg.rounds == off.rounds

    def test_mnist_requires_directory(self):
        with pytest.raises(ContractViolation, match="mnist_dir"):
            run_experiment(_small_cfg(dataset="mnist"))
