"""Experiment front-end.

Three subcommands:

  run <config> [--seed N] [--out DIR]   train once, stream metrics.csv
  ablate <config> [--out DIR]           the four component-flag rows
  summarize <csv> --target ACC          first round reaching a target

``run`` echoes the parsed config before any metric line and appends to
metrics.csv row by row with a flush after each, so a live run can be
tailed. Re-running the emitted ``config.txt`` with the same seed
reproduces metrics.csv byte for byte.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path

from .config import ConfigError, ExperimentConfig, echo_config, parse_config
from .engine import run_experiment
from .metrics import (
    CSV_HEADER,
    SWEEP_HEADER,
    MetricsSeries,
    format_round,
    load_metrics,
    rounds_to_target,
)

# Component rows in the order the flags were introduced: history fusion
# first, then progressive self-distillation, then the calibrated loss.
ABLATION_ROWS: tuple[tuple[str, bool, bool, bool], ...] = (
    ("baseline", False, False, False),
    ("rhpk", True, False, False),
    ("rhpk_psd", True, True, False),
    ("fedpsd", True, True, True),
)

ABLATION_HEADER = "row,rhpk,psd,cll,final_avg_client_top1,delta_vs_baseline"


@dataclass(frozen=True)
class AblationRow:
    """One flag combination and its 5-round-smoothed final accuracy."""

    name: str
    rhpk: bool
    psd: bool
    cll: bool
    final_avg_client_top1: float
    delta_vs_baseline: float
    series: MetricsSeries


def _flag(value: bool) -> str:
    return "true" if value else "false"


def format_ablation_row(row: AblationRow) -> str:
    return (
        f"{row.name},{_flag(row.rhpk)},{_flag(row.psd)},{_flag(row.cll)},"
        f"{row.final_avg_client_top1:.6f},{row.delta_vs_baseline:+.6f}"
    )


def run_ablation(cfg: ExperimentConfig, out_dir=None, log=None) -> list[AblationRow]:
    """Run the four component rows and report each one's gain over row 1.

    All rows share the config's seed, so the partition, the client
    sampling sequence, and the batch order are identical across rows;
    only the flag set differs. The baseline row trains exactly like
    fedavg. With ``out_dir`` set, each row's per-round CSV lands in
    ``<name>_metrics.csv`` and the summary table in ``ablation.csv``.
    """
    if cfg.algorithm != "fedpsd":
        raise ConfigError(
            f"ablation requires algorithm = fedpsd, got {cfg.algorithm!r}"
        )
    rows: list[AblationRow] = []
    baseline_final = 0.0
    for name, rhpk, psd, cll in ABLATION_ROWS:
        row_cfg = dataclasses.replace(cfg, rhpk=rhpk, psd=psd, cll=cll)
        series = run_experiment(row_cfg)
        final = series.final_avg_client_top1()
        if name == "baseline":
            baseline_final = final
        row = AblationRow(name, rhpk, psd, cll, final, final - baseline_final, series)
        rows.append(row)
        if log is not None:
            log(format_ablation_row(row))
        if out_dir is not None:
            _emit_series(series, Path(out_dir) / f"{name}_metrics.csv")
    if out_dir is not None:
        path = Path(out_dir) / "ablation.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(ABLATION_HEADER + "\n")
            for row in rows:
                fh.write(format_ablation_row(row) + "\n")
    return rows


def _emit_series(series: MetricsSeries, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for record in series.rounds:
            fh.write(format_round(record) + "\n")


def _cmd_run(args, stdout) -> int:
    text = Path(args.config).read_text(encoding="utf-8")
    cfg = parse_config(text)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    echo = echo_config(cfg)
    stdout.write(echo)
    stdout.flush()
    (out_dir / "config.txt").write_text(echo, encoding="utf-8", newline="\n")

    metrics_path = out_dir / "metrics.csv"
    sweeps_path = out_dir / "sweeps.csv"
    with open(metrics_path, "w", encoding="utf-8", newline="\n") as mfh, open(
        sweeps_path, "w", encoding="utf-8", newline="\n"
    ) as sfh:
        mfh.write(CSV_HEADER + "\n")
        mfh.flush()
        sfh.write(SWEEP_HEADER + "\n")
        sfh.flush()

        def on_round(record):
            line = format_round(record)
            mfh.write(line + "\n")
            mfh.flush()
            stdout.write(line + "\n")
            stdout.flush()

        def on_sweep(sweep):
            sfh.write(f"{sweep.round},{sweep.all_client_top1:.6f}\n")
            sfh.flush()

        series = run_experiment(cfg, round_callback=on_round, sweep_callback=on_sweep)

    stdout.write(
        f"final avg_client_top1 {series.final_avg_client_top1():.6f} "
        f"server_top1 {series.final_server_top1():.6f} "
        f"({metrics_path})\n"
    )
    return 0


def _cmd_ablate(args, stdout) -> int:
    text = Path(args.config).read_text(encoding="utf-8")
    cfg = parse_config(text)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stdout.write(ABLATION_HEADER + "\n")
    stdout.flush()

    def log(line):
        stdout.write(line + "\n")
        stdout.flush()

    run_ablation(cfg, out_dir=out_dir, log=log)
    return 0


def _cmd_summarize(args, stdout) -> int:
    series = load_metrics(args.csv)
    reached = rounds_to_target(series, args.target, args.metric)
    stdout.write("N/A\n" if reached is None else f"{reached}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedpsd", description="Deterministic federated-learning experiments."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train one experiment from a config file")
    p_run.add_argument("config", help="path to a key = value config file")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", default=".", help="directory for metrics.csv, sweeps.csv, config.txt")
    p_run.set_defaults(func=_cmd_run)

    p_ablate = sub.add_parser("ablate", help="run the four component-flag combinations")
    p_ablate.add_argument("config", help="config file; algorithm must be fedpsd")
    p_ablate.add_argument("--out", default=".", help="directory for per-row CSVs and ablation.csv")
    p_ablate.set_defaults(func=_cmd_ablate)

    p_sum = sub.add_parser("summarize", help="first round that reaches a target accuracy")
    p_sum.add_argument("csv", help="a metrics.csv produced by run")
    p_sum.add_argument("--target", type=float, required=True, help="target top-1 accuracy in [0, 1]")
    p_sum.add_argument("--metric", choices=("client", "server"), default="client")
    p_sum.set_defaults(func=_cmd_summarize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    stdout = sys.stdout
    try:
        return args.func(args, stdout)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
