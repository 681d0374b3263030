"""Config parsing/echo and metrics CSV round-trips."""
import numpy as np
import pytest

from fedpsd.config import ConfigError, ExperimentConfig, echo_config, parse_config
from fedpsd.metrics import (
    CSV_HEADER,
    MetricsSeries,
    RoundRecord,
    SweepRecord,
    emit_metrics,
    emit_sweeps,
    load_metrics,
    rounds_to_target,
)


class TestParseConfig:
    def test_empty_gives_defaults(self):
        cfg = parse_config("")
        assert cfg == ExperimentConfig()
        assert cfg.num_clients == 100
        assert cfg.fraction == 0.1
        assert cfg.epochs == 5
        assert cfg.t_total == 200
        assert cfg.batch_size == 50
        assert cfg.base_lr == 0.01
        assert cfg.lr_decay == 0.99
        assert cfg.momentum == 0.9
        assert cfg.weight_decay == 1e-5

    def test_basic_keys(self):
        cfg = parse_config("partition = sharding\nS = 2\nalgorithm = fedpsd\nhidden = 64,32\n")
        assert cfg.partition == "sharding"
        assert cfg.shards_per_client == 2
        assert cfg.algorithm == "fedpsd"
        assert cfg.hidden == (64, 32)

    def test_comments_and_sections(self):
        text = """
        # top comment
        [data]
        dataset = synthetic  # trailing comment
        [federation]
        K = 12
        """
        cfg = parse_config(text)
        assert cfg.num_clients == 12

    def test_negative_shards_rejected_with_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config("K = 10\nS = -1\n")

    def test_unknown_key_rejected_with_line(self):
        with pytest.raises(ConfigError, match="line 3.*mystery"):
            parse_config("K = 10\nC = 0.5\nmystery = 4\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config("K = 10\nK = 20\n")

    def test_type_error_cites_line(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config("K = ten\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config("just some words\n")

    def test_fraction_domain(self):
        with pytest.raises(ConfigError):
            parse_config("C = 0\n")
        with pytest.raises(ConfigError):
            parse_config("C = 1.2\n")
        assert parse_config("C = 1\n").fraction == 1.0

    def test_bool_spellings(self):
        assert parse_config("rhpk = false\n").rhpk is False
        assert parse_config("rhpk = 1\n").rhpk is True
        with pytest.raises(ConfigError):
            parse_config("rhpk = maybe\n")

    def test_echo_round_trip(self):
        cfg = ExperimentConfig(
            algorithm="fedpsd", num_clients=17, fraction=0.33, base_lr=0.007,
            hidden=(40, 20), rhpk=False, synth_spread=0.62, seed=4,
        )
        assert parse_config(echo_config(cfg)) == cfg

    def test_echo_round_trip_defaults(self):
        assert parse_config(echo_config(ExperimentConfig())) == ExperimentConfig()


def _series():
    rounds = [
        RoundRecord(1, 0.1, 0.2, 2.5, (0, 3)),
        RoundRecord(2, 0.5, 0.4, 1.25, (1, 2)),
        RoundRecord(3, 0.6, 0.55, 0.75, (0, 1)),
    ]
    return MetricsSeries(rounds=rounds, sweeps=[SweepRecord(2, 0.45)])


class TestMetrics:
    def test_emit_single_round(self, tmp_path):
        path = tmp_path / "m.csv"
        emit_metrics(MetricsSeries(rounds=[RoundRecord(1, 0.5, 0.25, 1.0, (4,))]), path)
        lines = path.read_text().splitlines()
        assert lines == [CSV_HEADER, "1,0.500000,0.250000,1.000000,4"]

    def test_round_trip(self, tmp_path):
        path = tmp_path / "m.csv"
        series = _series()
        emit_metrics(series, path)
        back = load_metrics(path)
        assert len(back.rounds) == 3
        for a, b in zip(back.rounds, series.rounds):
            assert a.round == b.round
            assert a.avg_client_top1 == pytest.approx(b.avg_client_top1, abs=1e-6)
            assert a.server_top1 == pytest.approx(b.server_top1, abs=1e-6)
            assert a.mean_local_loss == pytest.approx(b.mean_local_loss, abs=1e-6)
            assert a.sampled == b.sampled

    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        emit_metrics(_series(), a)
        emit_metrics(_series(), b)
        assert a.read_bytes() == b.read_bytes()

    def test_emit_sweeps(self, tmp_path):
        path = tmp_path / "s.csv"
        emit_sweeps(_series(), path)
        assert path.read_text().splitlines() == ["round,all_client_top1", "2,0.450000"]

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("nope\n1,2,3,4,5\n")
        with pytest.raises(ValueError, match="header"):
            load_metrics(path)

    def test_final_smoothing(self):
        rounds = [RoundRecord(i + 1, 0.1 * i, 0.0, 0.0, ()) for i in range(10)]
        series = MetricsSeries(rounds=rounds)
        assert series.final_avg_client_top1(window=5) == pytest.approx(np.mean([0.5, 0.6, 0.7, 0.8, 0.9]))
        assert MetricsSeries(rounds=rounds[:2]).final_avg_client_top1() == pytest.approx(0.05)


class TestRoundsToTarget:
    def test_first_crossing(self):
        assert rounds_to_target(_series(), 0.5, "client") == 2

    def test_never_reached(self):
        assert rounds_to_target(_series(), 0.99, "client") is None

    def test_zero_target(self):
        assert rounds_to_target(_series(), 0.0, "client") == 1

    def test_server_metric(self):
        assert rounds_to_target(_series(), 0.5, "server") == 3

    def test_domain(self):
        with pytest.raises(ValueError):
            rounds_to_target(_series(), 1.5, "client")
        with pytest.raises(ValueError):
            rounds_to_target(_series(), 0.5, "loss")
