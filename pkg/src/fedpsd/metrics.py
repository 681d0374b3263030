"""Metrics records, CSV emission, and the rounds-to-target summary."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CSV_HEADER = "round,avg_client_top1,server_top1,mean_local_loss,sampled"
SWEEP_HEADER = "round,all_client_top1"


@dataclass(frozen=True)
class RoundRecord:
    """One communication round; ``round`` is 1-indexed."""

    round: int
    avg_client_top1: float
    server_top1: float
    mean_local_loss: float
    sampled: tuple[int, ...]


@dataclass(frozen=True)
class SweepRecord:
    """Periodic evaluation over every client, participants or not."""

    round: int
    all_client_top1: float


@dataclass
class MetricsSeries:
    rounds: list[RoundRecord]
    sweeps: list[SweepRecord] = field(default_factory=list)

    def final_avg_client_top1(self, window: int = 5) -> float:
        """Mean of the last ``window`` rounds; the reported headline number."""
        tail = self.rounds[-window:]
        return float(np.mean([r.avg_client_top1 for r in tail]))

    def final_server_top1(self, window: int = 5) -> float:
        tail = self.rounds[-window:]
        return float(np.mean([r.server_top1 for r in tail]))


def format_round(record: RoundRecord) -> str:
    ids = ";".join(str(c) for c in record.sampled)
    return (
        f"{record.round},{record.avg_client_top1:.6f},{record.server_top1:.6f},"
        f"{record.mean_local_loss:.6f},{ids}"
    )


def emit_metrics(series: MetricsSeries, path) -> None:
    """Write the per-round CSV: 6-decimal floats, sampled ids ;-joined."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for record in series.rounds:
            fh.write(format_round(record) + "\n")


def emit_sweeps(series: MetricsSeries, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SWEEP_HEADER + "\n")
        for sweep in series.sweeps:
            fh.write(f"{sweep.round},{sweep.all_client_top1:.6f}\n")


def load_metrics(path) -> MetricsSeries:
    """Parse a CSV produced by emit_metrics (sweeps are not stored there)."""
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: not a metrics CSV (unexpected header)")
    rounds = []
    for line in lines[1:]:
        r, avg, server, loss, sampled = line.split(",")
        ids = tuple(int(c) for c in sampled.split(";")) if sampled else ()
        rounds.append(
            RoundRecord(int(r), float(avg), float(server), float(loss), ids)
        )
    return MetricsSeries(rounds=rounds)


def rounds_to_target(
    series: MetricsSeries, target_acc: float, metric: str = "client"
) -> int | None:
    """First 1-indexed round whose accuracy reaches target_acc, else None.

    ``metric`` picks the column: "client" for avg_client_top1, "server"
    for server_top1. None mirrors the usual N/A convention for targets
    a method never attains.
    """
    if not 0.0 <= target_acc <= 1.0:
        raise ValueError(f"target accuracy must be in [0, 1], got {target_acc}")
    if metric not in ("client", "server"):
        raise ValueError(f"metric must be 'client' or 'server', got {metric!r}")
    for record in series.rounds:
        value = record.avg_client_top1 if metric == "client" else record.server_top1
        if value >= target_acc:
            return record.round
    return None
