"""Interaction sequences: the three-line text format, a synthetic generator,
student-level splitting and padded mini-batches."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .numeric import STREAM_SPLIT, STREAM_SYNTH, Rng

log = logging.getLogger(__name__)

DEFAULT_MAX_LEN = 200


class DatasetError(ValueError):
    """Malformed dataset file; the message carries the offending line number."""

    def __init__(self, message: str, line: int | None = None, record: int | None = None):
        where = []
        if record is not None:
            where.append(f"record {record}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.record = record


@dataclass
class InteractionSequence:
    student_id: str
    questions: list[int]
    corrects: list[int]

    def __post_init__(self):
        if len(self.questions) != len(self.corrects):
            raise ValueError(
                f"student {self.student_id}: {len(self.questions)} questions vs {len(self.corrects)} answers"
            )

    def __len__(self) -> int:
        return len(self.questions)


@dataclass(frozen=True)
class Batch:
    """``(B, T_max)`` integer arrays; ``mask`` is 1 on each row's real prefix."""

    questions: np.ndarray
    corrects: np.ndarray
    mask: np.ndarray
    student_ids: tuple[str, ...] = ()

    @property
    def size(self) -> int:
        return self.questions.shape[0]

    @property
    def max_len(self) -> int:
        return self.questions.shape[1]


@dataclass(frozen=True)
class SynthConfig:
    num_students: int = 4000
    num_skills: int = 50
    seq_len: int = 50
    ability_sd: float = 1.0
    difficulty_sd: float = 1.0
    learn_rate_gamma: float = 0.5
    seed: int = 42

    def __post_init__(self):
        if min(self.num_students, self.num_skills, self.seq_len) < 1:
            raise ValueError("num_students, num_skills and seq_len must be >= 1")
        if self.ability_sd <= 0 or self.difficulty_sd <= 0:
            raise ValueError("ability_sd and difficulty_sd must be positive")


def _parse_ints(text: str, line_no: int, record: int) -> list[int]:
    tokens = [t.strip() for t in text.split(",")]
    tokens = [t for t in tokens if t]
    try:
        return [int(t) for t in tokens]
    except ValueError:
        bad = next(t for t in tokens if not t.lstrip("-").isdigit())
        raise DatasetError(f"non-integer token {bad!r}", line_no, record) from None


def parse_dataset(text: str) -> tuple[list[InteractionSequence], int]:
    """Parse concatenated ``T / questions / corrects`` records.

    Returns the sequences and the inferred skill count ``1 + max id``.
    """
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    while lines and not lines[-1].strip():
        lines.pop()
    if len(lines) % 3:
        raise DatasetError(f"{len(lines)} lines is not a whole number of 3-line records", len(lines))
    seqs = []
    max_q = -1
    for k in range(0, len(lines), 3):
        rec = k // 3
        head = lines[k].strip()
        try:
            n = int(head)
        except ValueError:
            raise DatasetError(f"expected a sequence length, got {head!r}", k + 1, rec) from None
        if n < 0:
            raise DatasetError(f"negative sequence length {n}", k + 1, rec)
        qs = _parse_ints(lines[k + 1], k + 2, rec)
        cs = _parse_ints(lines[k + 2], k + 3, rec)
        if len(qs) != n:
            raise DatasetError(f"declared length {n} but {len(qs)} question ids", k + 2, rec)
        if len(cs) != n:
            raise DatasetError(f"declared length {n} but {len(cs)} correctness values", k + 3, rec)
        if any(q < 0 for q in qs):
            raise DatasetError("negative question id", k + 2, rec)
        if any(c not in (0, 1) for c in cs):
            raise DatasetError("correctness values must be 0 or 1", k + 3, rec)
        if qs:
            max_q = max(max_q, max(qs))
        seqs.append(InteractionSequence(str(rec), qs, cs))
    return seqs, max_q + 1


def load_dataset(path: str | os.PathLike) -> tuple[list[InteractionSequence], int]:
    with open(path, "r", encoding="ascii", newline="") as fh:
        text = fh.read()
    seqs, q = parse_dataset(text)
    if not seqs:
        log.warning("dataset %s is empty", path)
    return seqs, q


def format_dataset(sequences: Iterable[InteractionSequence]) -> str:
    parts = []
    for s in sequences:
        parts.append(f"{len(s)}\n{','.join(map(str, s.questions))}\n{','.join(map(str, s.corrects))}\n")
    return "".join(parts)


def save_dataset(sequences: Iterable[InteractionSequence], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_dataset(sequences))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def gen_synthetic(cfg: SynthConfig) -> list[InteractionSequence]:
    """Students with latent ability answer uniformly drawn skills.

    ``P(correct) = sigmoid(ability - difficulty[q] + gamma * prior_practice[q])``.
    """
    rng = Rng(cfg.seed, STREAM_SYNTH)
    difficulty = rng.normal(0.0, cfg.difficulty_sd, size=cfg.num_skills).tolist()
    seqs = []
    for sid in range(cfg.num_students):
        srng = rng.sub(sid)
        ability = float(srng.normal(0.0, cfg.ability_sd))
        qs = srng.integers(0, cfg.num_skills, size=cfg.seq_len).tolist()
        u = srng.random(size=cfg.seq_len).tolist()
        practice = [0] * cfg.num_skills
        cs = [0] * cfg.seq_len
        for t, q in enumerate(qs):
            p = _sigmoid(ability - difficulty[q] + cfg.learn_rate_gamma * practice[q])
            cs[t] = 1 if u[t] < p else 0
            practice[q] += 1
        seqs.append(InteractionSequence(str(sid), qs, cs))
    return seqs


def split_long(sequences: Iterable[InteractionSequence], max_len: int = DEFAULT_MAX_LEN) -> list[InteractionSequence]:
    """Cut sequences longer than ``max_len`` into consecutive chunks."""
    if max_len < 2:
        raise ValueError("max_len must be at least 2")
    out = []
    for s in sequences:
        if len(s) <= max_len:
            out.append(s)
            continue
        for k, start in enumerate(range(0, len(s), max_len)):
            out.append(
                InteractionSequence(
                    f"{s.student_id}#{k}",
                    s.questions[start : start + max_len],
                    s.corrects[start : start + max_len],
                )
            )
    return out


def usable(sequences: Iterable[InteractionSequence]) -> list[InteractionSequence]:
    """Sequences long enough to yield at least one prediction."""
    return [s for s in sequences if len(s) >= 2]


def train_test_split(sequences: Sequence[InteractionSequence], test_fraction: float, seed: int):
    """Split whole students; the test side gets ``ceil(n * test_fraction)``, capped to leave one for training."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    n = len(sequences)
    if n < 2:
        raise ValueError(f"need at least 2 sequences to split, got {n}")
    n_test = min(max(1, math.ceil(round(n * test_fraction, 9))), n - 1)
    order = Rng(seed, STREAM_SPLIT).permutation(n)
    test_idx = set(order[:n_test].tolist())
    train = [s for k, s in enumerate(sequences) if k not in test_idx]
    test = [s for k, s in enumerate(sequences) if k in test_idx]
    return train, test


def pad_batch(sequences: Sequence[InteractionSequence]) -> Batch:
    t_max = max(len(s) for s in sequences)
    B = len(sequences)
    q = np.zeros((B, t_max), dtype=np.int64)
    c = np.zeros((B, t_max), dtype=np.int64)
    m = np.zeros((B, t_max), dtype=np.int64)
    for k, s in enumerate(sequences):
        n = len(s)
        q[k, :n] = s.questions
        c[k, :n] = s.corrects
        m[k, :n] = 1
    return Batch(q, c, m, tuple(s.student_id for s in sequences))


def make_batches(sequences: Sequence[InteractionSequence], batch_size: int, rng: Rng | None = None) -> list[Batch]:
    """Shuffle with ``rng`` (keep order when ``None``) and pad each batch to its own max length."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(len(sequences)) if rng is not None else np.arange(len(sequences))
    return [
        pad_batch([sequences[k] for k in order[start : start + batch_size]])
        for start in range(0, len(sequences), batch_size)
    ]
