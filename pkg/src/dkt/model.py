"""The knowledge-tracing head: interaction encoding, unrolled forward and
backward passes over padded batches, masked BCE-with-logits loss, and the
accuracy/AUC metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import cells
from .numeric import DTYPE, Rng, ShapeError, sigmoid


class SequenceTooShort(ValueError):
    pass


class EmptyBatchError(ValueError):
    pass


class EmptyMetricError(ValueError):
    pass


class UndefinedAUCError(ValueError):
    """AUC requested for records that contain only one class."""


class DktModel:
    """Recurrent cell over one-hot interactions with a per-skill logit head.

    Input dimension is ``2 * num_skills`` and output dimension ``num_skills``.
    """

    def __init__(self, arch: str, num_skills: int, hidden_size: int, params: cells.CellParams | None = None, rng: Rng | None = None):
        if num_skills < 1 or hidden_size < 1:
            raise ShapeError("num_skills and hidden_size must be positive")
        self.arch = arch
        self.num_skills = num_skills
        self.hidden_size = hidden_size
        if params is None:
            params = cells.make_params(arch, 2 * num_skills, hidden_size, num_skills, rng)
        if (params.arch, params.input_dim, params.hidden_dim, params.output_dim) != (
            arch,
            2 * num_skills,
            hidden_size,
            num_skills,
        ):
            raise ShapeError("parameters do not match the model configuration")
        self.params = params

    @property
    def input_dim(self) -> int:
        return 2 * self.num_skills

    def copy(self) -> "DktModel":
        return DktModel(self.arch, self.num_skills, self.hidden_size, self.params.copy())


def encode_interaction(q: int, c: int, num_skills: int) -> np.ndarray:
    """One-hot vector of length ``2Q`` with the 1 at ``q + Q*c``."""
    if not 0 <= q < num_skills:
        raise ValueError(f"skill id {q} outside [0, {num_skills})")
    if c not in (0, 1):
        raise ValueError(f"correctness must be 0 or 1, got {c}")
    out = np.zeros(2 * num_skills, dtype=DTYPE)
    out[q + num_skills * c] = 1.0
    return out


def encode_batch(questions: np.ndarray, corrects: np.ndarray, num_skills: int) -> np.ndarray:
    """Time-major one-hot inputs ``(T, B, 2Q)`` for ``(B, T)`` id arrays."""
    questions = np.asarray(questions)
    if questions.size and (questions.min() < 0 or questions.max() >= num_skills):
        raise ValueError(f"skill ids must lie in [0, {num_skills})")
    B, T = questions.shape
    idx = (questions + num_skills * np.asarray(corrects)).T
    x = np.zeros((T, B, 2 * num_skills), dtype=DTYPE)
    np.put_along_axis(x, idx[..., None], 1.0, axis=-1)
    return x


@dataclass
class ForwardPass:
    logits: np.ndarray  # (B, T-1, Q)
    hidden: np.ndarray  # (T-1, B, H)
    caches: list


def forward_batch(model: DktModel, questions, corrects) -> ForwardPass:
    """Unroll over a ``(B, T)`` batch; logits row ``t`` scores interaction ``t+1``.

    Only steps ``0..T-2`` run, since the final interaction has nothing to
    predict.  Hidden and cell states start at zero.
    """
    questions = np.asarray(questions)
    if questions.ndim != 2 or questions.shape[1] < 2:
        raise SequenceTooShort(f"need sequences of length >= 2, got shape {questions.shape}")
    p = model.params
    x = encode_batch(questions, corrects, model.num_skills)
    steps, B = x.shape[0] - 1, x.shape[1]
    h = np.zeros((B, model.hidden_size), dtype=DTYPE)
    c = np.zeros_like(h)
    hidden = np.empty((steps, B, model.hidden_size), dtype=DTYPE)
    caches = []
    for t in range(steps):
        if model.arch == "lstm":
            h, c, cache = cells.lstm_forward(x[t], h, c, p)
        elif model.arch == "gru":
            h, cache = cells.gru_forward(x[t], h, p)
        else:
            h, cache = cells.rnn_forward(x[t], h, p)
        hidden[t] = h
        caches.append(cache)
    logits = cells.output_forward(hidden, p).transpose(1, 0, 2)
    return ForwardPass(logits, hidden, caches)


def backward_batch(model: DktModel, fp: ForwardPass, d_logits: np.ndarray) -> None:
    """BPTT from ``d_logits`` (same shape as ``fp.logits``) into ``model.params.grads``."""
    p = model.params
    d_y = np.ascontiguousarray(np.asarray(d_logits, dtype=DTYPE).transpose(1, 0, 2))
    steps, B, H = fp.hidden.shape
    d_hidden = cells.output_backward(fp.hidden.reshape(-1, H), d_y.reshape(-1, d_y.shape[-1]), p)
    d_hidden = d_hidden.reshape(steps, B, H)
    d_h_next = np.zeros((B, H), dtype=DTYPE)
    d_c_next = np.zeros((B, H), dtype=DTYPE) if model.arch == "lstm" else None
    for t in range(steps - 1, -1, -1):
        _, d_h_next, d_c_next = cells.cell_backward(fp.caches[t], d_hidden[t] + d_h_next, d_c_next, p)


def forward_sequence(seq, model: DktModel):
    """Logits ``(T-1, Q)`` and per-step caches for one interaction sequence."""
    questions = np.asarray(seq.questions)[None, :]
    corrects = np.asarray(seq.corrects)[None, :]
    if questions.shape[1] < 2:
        raise SequenceTooShort(f"sequence {getattr(seq, 'student_id', '?')} has {questions.shape[1]} interactions")
    fp = forward_batch(model, questions, corrects)
    return fp.logits[0], fp.caches


def _bce_terms(logits, targets, next_q, mask):
    logits = np.asarray(logits, dtype=DTYPE)
    next_q = np.asarray(next_q)
    y = np.asarray(targets, dtype=DTYPE)
    mask = np.asarray(mask).astype(bool)
    if logits.shape[:-1] != next_q.shape or y.shape != next_q.shape or mask.shape != next_q.shape:
        raise ShapeError(
            f"logits {logits.shape} need positions {logits.shape[:-1]}; got targets {y.shape}, "
            f"next_q {next_q.shape}, mask {mask.shape}"
        )
    z = np.take_along_axis(logits, next_q[..., None], axis=-1)[..., 0]
    z = np.where(mask, z, 0.0)
    return z, y, mask


def masked_bce_loss(logits, targets, next_q, mask):
    """Mean BCE-with-logits over valid positions and its gradient.

    Position ``k`` scores column ``next_q[k]`` of ``logits[k]``; entries
    with ``mask == 0`` contribute nothing, whatever their values.
    """
    z, y, mask = _bce_terms(logits, targets, next_q, mask)
    count = int(mask.sum())
    if count == 0:
        raise EmptyBatchError("no valid positions in batch")
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    loss = float(np.where(mask, per, 0.0).sum() / count)
    d_sel = np.where(mask, sigmoid(z) - y, 0.0) / count
    d_logits = np.zeros(np.shape(logits), dtype=DTYPE)
    np.put_along_axis(d_logits, np.asarray(next_q)[..., None], d_sel[..., None], axis=-1)
    return loss, d_logits


def batch_targets(questions, corrects, mask):
    """Next-step ``(next_q, targets, valid)`` arrays of shape ``(B, T-1)``."""
    return np.asarray(questions)[:, 1:], np.asarray(corrects)[:, 1:], np.asarray(mask)[:, 1:].astype(bool)


def valid_predictions(logits, next_q, targets, valid):
    """Probabilities and targets at valid positions, flattened."""
    z, y, mask = _bce_terms(logits, targets, next_q, valid)
    return sigmoid(z[mask]), y[mask].astype(np.int64)


@dataclass(frozen=True)
class PredictionRecord:
    probability: float
    target: int
    valid: bool = True


def _records_to_arrays(records: Sequence[PredictionRecord]):
    probs = np.array([r.probability for r in records if r.valid], dtype=DTYPE)
    targets = np.array([r.target for r in records if r.valid], dtype=np.int64)
    return probs, targets


def accuracy_scores(probs, targets) -> float:
    probs = np.asarray(probs, dtype=DTYPE)
    targets = np.asarray(targets)
    if probs.size == 0:
        raise EmptyMetricError("accuracy of an empty prediction set")
    return float(np.mean((probs >= 0.5) == (targets == 1)))


def auc_scores(probs, targets) -> float:
    """Mann-Whitney AUC with midranks for ties."""
    probs = np.asarray(probs, dtype=DTYPE)
    pos = np.asarray(targets) == 1
    n = probs.size
    if n == 0:
        raise EmptyMetricError("AUC of an empty prediction set")
    n_pos = int(pos.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError(f"AUC undefined with {n_pos} positives and {n_neg} negatives")
    order = np.argsort(probs, kind="mergesort")
    s = probs[order]
    bounds = np.concatenate(([0], np.flatnonzero(np.diff(s)) + 1, [n]))
    starts, ends = bounds[:-1], bounds[1:]
    # 1-based midrank of each tie group
    ranks = np.empty(n, dtype=DTYPE)
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(records: Sequence[PredictionRecord]) -> float:
    """Fraction of valid records where ``probability >= 0.5`` matches the target."""
    return accuracy_scores(*_records_to_arrays(records))


def auc(records: Sequence[PredictionRecord]) -> float:
    return auc_scores(*_records_to_arrays(records))
