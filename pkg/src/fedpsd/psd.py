"""Progressive self-distillation with fused labels and calibrated loss.

A client's local objective is the sum of a (possibly prior-calibrated)
cross-entropy and a KL distillation term against a fused soft label:
the convex combination of a teacher probability vector and the one-hot
ground truth, weighted by a linearly growing schedule over rounds.

Teachers come from two places. In the first local epoch the teacher is
the client's stored history: the softmax outputs recorded after its
previous participation. In later epochs the teacher is the previous
epoch's own (detached) outputs. Disabling the corresponding flags
removes each term; with everything off the trainer degenerates to the
plain FedAvg local update, bit for bit.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .config import LOCAL_SHUFFLE_STREAM, ExperimentConfig
from .nn import (
    ContractViolation,
    ModelParams,
    _backprop_from_acts,
    _forward_cached,
    forward,
    init_optimizer,
    one_hot,
    sgd_step,
    softmax,
    softmax_ce,
)

_HISTORY_HEADER = struct.Struct("<4q")  # client_id, recorded_round, n_k, num_classes


@dataclass
class ClientHistory:
    """Per-sample softmax outputs from a client's last participation.

    ``probs`` has one row per local train sample, aligned to the order
    of the client's train_indices. This is the only thing a client
    retains between rounds: n_k * L floats, never a model copy.
    """

    probs: np.ndarray
    recorded_round: int

    def __post_init__(self) -> None:
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2:
            raise ContractViolation(f"history probs must be 2-D, got {self.probs.shape}")
        if self.probs.min() < 0.0:
            raise ContractViolation("history rows must be probability vectors")
        sums = self.probs.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-9:
            raise ContractViolation("history rows must sum to 1 within 1e-9")

    def to_bytes(self, client_id: int) -> bytes:
        n, l = self.probs.shape
        header = _HISTORY_HEADER.pack(client_id, self.recorded_round, n, l)
        return header + self.probs.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> tuple[int, "ClientHistory"]:
        if len(data) < _HISTORY_HEADER.size:
            raise ValueError(f"truncated history record at byte offset {len(data)}")
        client_id, recorded_round, n, l = _HISTORY_HEADER.unpack_from(data, 0)
        need = _HISTORY_HEADER.size + n * l * 8
        if len(data) != need:
            raise ValueError(
                f"history record ends at byte offset {len(data)}, expected {need}"
            )
        probs = np.frombuffer(data, dtype="<f8", offset=_HISTORY_HEADER.size)
        return int(client_id), cls(probs.reshape(n, l).copy(), int(recorded_round))


@dataclass(frozen=True)
class FusionLabel:
    """A fused soft target: alpha * teacher + (1 - alpha) * one-hot truth."""

    probs: np.ndarray
    alpha: float
    source: str  # "history" for first-epoch teachers, "previous-epoch" after


@dataclass(frozen=True)
class PSDConfig:
    """The three component switches (one ablation-table row) plus schedule length."""

    enable_rhpk: bool = True
    enable_psd: bool = True
    enable_cll: bool = True
    t_total: int = 200

    @classmethod
    def from_experiment(cls, cfg: ExperimentConfig) -> "PSDConfig":
        return cls(cfg.rhpk, cfg.psd, cfg.cll, cfg.t_total)


def alpha_schedule(round_t: int, t_total: int) -> float:
    """Linear fusion weight t / t_total, clamped to 1 past the end."""
    if t_total < 1:
        raise ContractViolation(f"t_total must be >= 1, got {t_total}")
    if round_t < 0:
        raise ContractViolation(f"round must be >= 0, got {round_t}")
    if round_t > t_total:
        warnings.warn(
            f"round {round_t} exceeds t_total {t_total}; clamping fusion weight to 1",
            stacklevel=2,
        )
        return 1.0
    return round_t / t_total


def _check_teacher_rows(rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.min() < 0.0 or np.abs(rows.sum(axis=-1) - 1.0).max() > 1e-9:
        raise ContractViolation("teacher rows must be probability vectors")
    return rows


def fuse_labels(teacher: np.ndarray, truth: np.ndarray, alpha: float,
                source: str = "history") -> FusionLabel:
    """Convex combination alpha * teacher + (1 - alpha) * truth.

    ``truth`` must be exactly one-hot; for alpha < 0.5 the fused label
    keeps the ground-truth class as its argmax, since its floor
    (1 - alpha) beats any alpha-scaled teacher entry.
    """
    teacher = _check_teacher_rows(np.asarray(teacher, dtype=np.float64))
    truth = np.asarray(truth, dtype=np.float64)
    if teacher.ndim != 1 or truth.shape != teacher.shape:
        raise ContractViolation(
            f"teacher {teacher.shape} and truth {truth.shape} must be matching vectors"
        )
    if not np.isin(truth, (0.0, 1.0)).all() or truth.sum() != 1.0:
        raise ContractViolation("truth must be one-hot")
    if not 0.0 <= alpha <= 1.0:
        raise ContractViolation(f"alpha must be in [0, 1], got {alpha}")
    if source not in ("history", "previous-epoch"):
        raise ContractViolation(f"unknown fusion source {source!r}")
    if alpha == 0.0:
        fused = truth.copy()
    elif alpha == 1.0:
        fused = teacher.copy()
    else:
        fused = alpha * teacher + (1.0 - alpha) * truth
    return FusionLabel(probs=fused, alpha=alpha, source=source)


def _prior_probs(prior) -> np.ndarray:
    probs = np.asarray(getattr(prior, "probabilities", prior), dtype=np.float64)
    if probs.ndim != 1 or probs.min() <= 0.0:
        raise ContractViolation("prior must be a strictly positive vector; smooth it first")
    return probs


def calibrated_ce_loss(logits: np.ndarray, labels, prior) -> tuple[float, np.ndarray]:
    """Cross-entropy of the prior-shifted logits.

    The training softmax sees f + ln P, so locally frequent classes
    must beat their prior instead of merely winning the raw logits;
    gradient is softmax(f + ln P) - onehot, batch-meaned. Accepts a
    single logit vector or a (B, L) batch.
    """
    probs = _prior_probs(prior)
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    batch = logits[None, :] if single else logits
    label_arr = np.atleast_1d(np.asarray(labels))
    loss, dlogits = softmax_ce(batch + np.log(probs), label_arr)
    return loss, (dlogits[0] if single else dlogits)


def balanced_prediction(logits: np.ndarray, prior):
    """Argmax of prior-corrected scores f - ln P (ties to the lowest class).

    Equivalent to ranking classes by softmax(f)[y] / P(y).
    """
    probs = _prior_probs(prior)
    logits = np.asarray(logits, dtype=np.float64)
    adjusted = logits - np.log(probs)
    if logits.ndim == 1:
        return int(np.argmax(adjusted))
    return np.argmax(adjusted, axis=-1)


def _kd_rows(teacher_rows: np.ndarray, logits: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Batch-mean KL(teacher || softmax(logits)), its logit gradient, and
    the student probabilities (reused by the epoch cache)."""
    b = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(log_p)
    t = teacher_rows
    neg_entropy = np.where(t > 0.0, t * np.log(np.where(t > 0.0, t, 1.0)), 0.0).sum(axis=1)
    cross = -(t * log_p).sum(axis=1)
    loss = float((neg_entropy + cross).mean())
    dlogits = (probs - t) / b
    return loss, dlogits, probs


def psd_kd_loss(teacher, student_logits: np.ndarray) -> tuple[float, np.ndarray]:
    """KL(teacher || softmax(student_logits)) with its logit gradient.

    ``teacher`` may be a FusionLabel, a probability vector, or a batch
    of rows; student probabilities use the plain softmax (calibration
    never touches the distillation term).
    """
    rows = teacher.probs if isinstance(teacher, FusionLabel) else teacher
    rows = _check_teacher_rows(rows)
    logits = np.asarray(student_logits, dtype=np.float64)
    single = logits.ndim == 1
    if single:
        logits = logits[None, :]
        rows = rows[None, :] if rows.ndim == 1 else rows
    if rows.shape != logits.shape:
        raise ContractViolation(
            f"teacher shape {rows.shape} does not match logits shape {logits.shape}"
        )
    loss, dlogits, _ = _kd_rows(rows, logits)
    return loss, (dlogits[0] if single else dlogits)


def local_train_fedpsd(
    global_params: ModelParams,
    features: np.ndarray,
    labels: np.ndarray,
    prior,
    history: ClientHistory | None,
    client_id: int,
    round_t: int,
    lr: float,
    cfg: ExperimentConfig,
) -> tuple[ModelParams, ClientHistory, list[float]]:
    """One client's local update: E epochs of SGD on CE + distillation.

    Epoch 1 distills toward the fused history teacher when available
    (and the history flag is on); later epochs distill toward the
    fused outputs cached during the previous epoch. After the last
    epoch the trained model's softmax outputs over the full local set
    become the new history. Returns (params, history, per-batch losses).
    """
    n = labels.shape[0]
    num_classes = global_params.num_classes
    alpha = alpha_schedule(round_t, cfg.t_total)
    params = global_params.copy()
    opt = init_optimizer(params, lr, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, LOCAL_SHUFFLE_STREAM, round_t, client_id])

    onehots = one_hot(labels, num_classes)
    log_prior = np.log(_prior_probs(prior)) if cfg.cll else None
    if history is not None and history.probs.shape != (n, num_classes):
        raise ContractViolation(
            f"client {client_id} history shape {history.probs.shape} does not match "
            f"({n}, {num_classes}); partitions must stay fixed across rounds"
        )
    cache = np.empty((n, num_classes)) if cfg.psd and not cfg.psd_fresh_teacher else None

    losses: list[float] = []
    for epoch in range(cfg.epochs):
        if epoch == 0:
            if cfg.rhpk and history is not None:
                teacher = alpha * history.probs + (1.0 - alpha) * onehots
            elif cfg.kd_epoch1_fallback:
                teacher = onehots
            else:
                teacher = None
        elif cfg.psd:
            source = softmax(forward(params, features)) if cfg.psd_fresh_teacher else cache
            teacher = alpha * source + (1.0 - alpha) * onehots
        else:
            teacher = None
        # The cache written during this epoch feeds the next one.
        fill_cache = cache is not None and epoch < cfg.epochs - 1

        perm = rng.permutation(n)
        for batch_no, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start : start + cfg.batch_size]
            x = features[idx]
            logits, acts = _forward_cached(params, x)
            if cfg.cll:
                loss, dlogits = softmax_ce(logits + log_prior, labels[idx])
            else:
                loss, dlogits = softmax_ce(logits, labels[idx])
            probs = None
            if teacher is not None:
                kd_loss, kd_grad, probs = _kd_rows(teacher[idx], logits)
                loss = loss + kd_loss
                dlogits = dlogits + kd_grad
            if fill_cache:
                cache[idx] = softmax(logits) if probs is None else probs
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss at round {round_t}, client {client_id}, "
                    f"epoch {epoch + 1}, batch {batch_no + 1}"
                )
            grads = _backprop_from_acts(params, acts, dlogits, logits.shape)
            try:
                params, opt = sgd_step(params, grads, opt)
            except FloatingPointError as exc:
                raise FloatingPointError(
                    f"{exc} at round {round_t}, client {client_id}, "
                    f"epoch {epoch + 1}, batch {batch_no + 1}"
                ) from exc
            losses.append(loss)

    new_history = ClientHistory(softmax(forward(params, features)), recorded_round=round_t)
    return params, new_history, losses
