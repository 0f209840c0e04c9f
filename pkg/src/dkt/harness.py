"""Training loop, evaluation, the one-epoch optimizer benchmark and the
end-to-end gradient check."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import cells, data, model as dkt, optim
from .numeric import STREAM_INIT, STREAM_SHUFFLE, Rng

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    arch: str = "lstm"
    optimizer: str = "adam"
    lr: float | None = None  # None -> optimizer default
    weight_decay: float | None = None
    epochs: int = 20
    batch_size: int = 32
    hidden_size: int = 100
    seed: int = 42
    clip: float | None = 5.0  # None disables clipping
    test_fraction: float = 0.2
    max_len: int = data.DEFAULT_MAX_LEN
    num_skills: int | None = None  # lower bound on Q; the larger of this and the data's applies
    data_path: str | None = None
    test_path: str | None = None
    synth: data.SynthConfig | None = field(default_factory=data.SynthConfig)

    def __post_init__(self):
        if self.arch not in cells.ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.optimizer not in optim.OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.hidden_size < 1:
            raise ValueError("epochs, batch_size and hidden_size must be >= 1")
        if self.clip is not None and self.clip <= 0:
            raise ValueError("clip must be positive or None")
        if self.data_path is None and self.synth is None:
            raise ValueError("need a data_path or a synthetic config")

    def hyperparams(self) -> optim.Hyperparams:
        return optim.default_hyperparams(self.optimizer, eta=self.lr, weight_decay=self.weight_decay)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hyperparams"] = asdict(self.hyperparams())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = {k: v for k, v in d.items() if k != "hyperparams"}
        if d.get("synth") is not None:
            d["synth"] = data.SynthConfig(**d["synth"])
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    test_accuracy: float
    test_auc: float
    wall_time_s: float
    test_loss: float = float("nan")

    def summary(self) -> str:
        return (
            f"epoch={self.epoch} loss={self.train_loss:.6f} train_acc={self.train_accuracy:.6f} "
            f"test_acc={self.test_accuracy:.6f} test_auc={self.test_auc:.6f} time_s={self.wall_time_s:.3f}"
        )


@dataclass(frozen=True)
class EpochStats:
    loss: float
    accuracy: float
    wall_time_s: float


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    auc: float  # nan when the split holds a single class
    loss: float

    @property
    def auc_defined(self) -> bool:
        return not math.isnan(self.auc)


@dataclass
class Prepared:
    train: list[data.InteractionSequence]
    test: list[data.InteractionSequence]
    num_skills: int


def prepare_data(cfg: TrainConfig) -> Prepared:
    """Load or generate, chunk long sequences, drop length-1 ones and split by student."""
    if cfg.data_path is not None:
        seqs, q = data.load_dataset(cfg.data_path)
        if cfg.test_path is not None:
            test, q_test = data.load_dataset(cfg.test_path)
            q = max(q, q_test)
            train = seqs
        else:
            train, test = data.train_test_split(seqs, cfg.test_fraction, cfg.seed)
    else:
        synth = replace(cfg.synth, seed=cfg.seed)
        seqs = data.gen_synthetic(synth)
        q = synth.num_skills
        train, test = data.train_test_split(seqs, cfg.test_fraction, cfg.seed)
    if cfg.num_skills is not None:
        q = max(q, cfg.num_skills)
    train = data.usable(data.split_long(train, cfg.max_len))
    test = data.usable(data.split_long(test, cfg.max_len))
    if not train or not test:
        raise ValueError("train and test splits each need a sequence of length >= 2")
    return Prepared(train, test, q)


def init_model(cfg: TrainConfig, num_skills: int) -> dkt.DktModel:
    return dkt.DktModel(cfg.arch, num_skills, cfg.hidden_size, rng=Rng(cfg.seed, STREAM_INIT))


def epoch_batches(train, batch_size: int, seed: int, epoch: int) -> list[data.Batch]:
    return data.make_batches(train, batch_size, Rng(seed, STREAM_SHUFFLE).sub(epoch))


def _batch_loss(model: dkt.DktModel, batch: data.Batch):
    next_q, targets, valid = dkt.batch_targets(batch.questions, batch.corrects, batch.mask)
    fp = dkt.forward_batch(model, batch.questions, batch.corrects)
    loss, d_logits = dkt.masked_bce_loss(fp.logits, targets, next_q, valid)
    return fp, loss, d_logits, (next_q, targets, valid)


def train_epoch(
    model: dkt.DktModel,
    state: optim.OptimizerState,
    hyper: optim.Hyperparams,
    batches: Sequence[data.Batch],
    clip: float | None = 5.0,
) -> EpochStats:
    """One pass: forward, masked loss, BPTT, clip, optimizer step per batch.

    Loss and accuracy are pooled over every valid prediction, measured
    before each batch's update.
    """
    p = model.params
    loss_sum = 0.0
    n_valid = 0
    n_correct = 0
    start = time.perf_counter()
    for k, batch in enumerate(batches):
        fp, loss, d_logits, (next_q, targets, valid) = _batch_loss(model, batch)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss} at batch {k}")
        count = int(valid.sum())
        probs, y = dkt.valid_predictions(fp.logits, next_q, targets, valid)
        n_correct += int(np.sum((probs >= 0.5) == (y == 1)))
        loss_sum += loss * count
        n_valid += count
        p.zero_grad()
        dkt.backward_batch(model, fp, d_logits)
        if clip is not None:
            optim.clip_global_norm(p.grads, clip)
        optim.step(p.values, p.grads, state, hyper)
    wall = time.perf_counter() - start
    if n_valid == 0:
        raise dkt.EmptyBatchError("epoch contained no valid predictions")
    return EpochStats(loss_sum / n_valid, n_correct / n_valid, wall)


def predict(model: dkt.DktModel, batches: Sequence[data.Batch]):
    """Pooled ``(probabilities, targets, mean loss)`` over valid positions."""
    probs, ys = [], []
    loss_sum = 0.0
    n_valid = 0
    for batch in batches:
        fp, loss, _, (next_q, targets, valid) = _batch_loss(model, batch)
        count = int(valid.sum())
        loss_sum += loss * count
        n_valid += count
        pr, y = dkt.valid_predictions(fp.logits, next_q, targets, valid)
        probs.append(pr)
        ys.append(y)
    if n_valid == 0:
        raise dkt.EmptyBatchError("no valid predictions to evaluate")
    return np.concatenate(probs), np.concatenate(ys), loss_sum / n_valid


def evaluate(model: dkt.DktModel, batches: Sequence[data.Batch]) -> EvalResult:
    probs, ys, loss = predict(model, batches)
    try:
        auc = dkt.auc_scores(probs, ys)
    except dkt.UndefinedAUCError:
        log.warning("AUC undefined: evaluation split has a single class")
        auc = float("nan")
    return EvalResult(dkt.accuracy_scores(probs, ys), auc, loss)


def run_training(
    cfg: TrainConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
    prepared: Prepared | None = None,
    model: dkt.DktModel | None = None,
) -> list[EpochRecord]:
    prepared = prepared or prepare_data(cfg)
    model = model or init_model(cfg, prepared.num_skills)
    hyper = cfg.hyperparams()
    state = optim.OptimizerState(cfg.optimizer)
    test_batches = data.make_batches(prepared.test, cfg.batch_size)
    records = []
    for epoch in range(1, cfg.epochs + 1):
        batches = epoch_batches(prepared.train, cfg.batch_size, cfg.seed, epoch)
        stats = train_epoch(model, state, hyper, batches, cfg.clip)
        ev = evaluate(model, test_batches)
        rec = EpochRecord(epoch, stats.loss, stats.accuracy, ev.accuracy, ev.auc, stats.wall_time_s, ev.loss)
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return records


@dataclass
class BenchRow:
    optimizer: str
    error: float
    accuracy: float
    time_s: float
    test_accuracy: float = float("nan")
    test_auc: float = float("nan")


def _bench_one(cfg: TrainConfig, name: str, prepared: Prepared, init: dkt.DktModel, lr: float | None) -> BenchRow:
    run_cfg = replace(cfg, optimizer=name, lr=lr, epochs=1)
    model = init.copy()
    state = optim.OptimizerState(name)
    batches = epoch_batches(prepared.train, cfg.batch_size, cfg.seed, 1)
    stats = train_epoch(model, state, run_cfg.hyperparams(), batches, cfg.clip)
    ev = evaluate(model, data.make_batches(prepared.test, cfg.batch_size))
    return BenchRow(name, stats.loss, stats.accuracy, stats.wall_time_s, ev.accuracy, ev.auc)


def bench_optimizers(
    cfg: TrainConfig,
    optimizers: Sequence[str] = optim.OPTIMIZERS,
    lrs: dict[str, float] | None = None,
    jobs: int = 1,
    sequential_timing: bool = True,
    prepared: Prepared | None = None,
) -> list[BenchRow]:
    """One epoch per optimizer from a shared initial model and batch order.

    ``lrs`` maps optimizer name to learning rate; missing entries use the
    optimizer's default.  With ``jobs > 1`` rows run in worker processes and,
    if ``sequential_timing`` is set, are then re-timed one after another.
    """
    for name in optimizers:
        if name not in optim.OPTIMIZERS:
            raise ValueError(f"unknown optimizer {name!r}")
    lrs = lrs or {}
    prepared = prepared or prepare_data(cfg)
    init = init_model(cfg, prepared.num_skills)
    if jobs <= 1:
        return [_bench_one(cfg, name, prepared, init, lrs.get(name)) for name in optimizers]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_bench_one, cfg, name, prepared, init, lrs.get(name)) for name in optimizers]
        rows = [f.result() for f in futures]
    if sequential_timing:
        for row in rows:
            row.time_s = _bench_one(cfg, row.optimizer, prepared, init, lrs.get(row.optimizer)).time_s
    return rows


# Gradient check -----------------------------------------------------------


@dataclass
class GradcheckRow:
    block: str
    max_rel_error: float
    passed: bool


@dataclass
class GradcheckReport:
    arch: str
    tolerance: float
    rows: list[GradcheckRow]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failing(self) -> list[str]:
        return [r.block for r in self.rows if not r.passed]


def gradcheck_instance(seed: int, num_skills: int = 4, seq_len: int = 5):
    """Three seeded students of lengths ``T, T, T-2`` padded into one batch."""
    rng = Rng(seed, 5).sub(0)
    seqs = []
    for k, n in enumerate((seq_len, seq_len, max(2, seq_len - 2))):
        qs = rng.integers(0, num_skills, size=n).tolist()
        cs = rng.integers(0, 2, size=n).tolist()
        seqs.append(data.InteractionSequence(str(k), qs, cs))
    return data.pad_batch(seqs)


def run_gradcheck(
    arch: str,
    seed: int = 42,
    tolerance: float = 1e-4,
    eps: float = 1e-5,
    num_skills: int = 4,
    hidden_size: int = 3,
    seq_len: int = 5,
    backward: Callable | None = None,
) -> GradcheckReport:
    """Compare BPTT gradients of the masked BCE loss against central differences.

    ``backward`` replaces :func:`dkt.model.backward_batch`, which lets tests
    confirm that a corrupted backward pass is caught.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    backward = backward or dkt.backward_batch
    m = dkt.DktModel(arch, num_skills, hidden_size, rng=Rng(seed, STREAM_INIT))
    batch = gradcheck_instance(seed, num_skills, seq_len)
    next_q, targets, valid = dkt.batch_targets(batch.questions, batch.corrects, batch.mask)

    def loss_fn(_p) -> float:
        fp = dkt.forward_batch(m, batch.questions, batch.corrects)
        return dkt.masked_bce_loss(fp.logits, targets, next_q, valid)[0]

    p = m.params
    p.zero_grad()
    fp = dkt.forward_batch(m, batch.questions, batch.corrects)
    _, d_logits = dkt.masked_bce_loss(fp.logits, targets, next_q, valid)
    backward(m, fp, d_logits)
    numeric = cells.finite_diff_grad(loss_fn, p, eps)
    analytic_blocks = p.grad_blocks()
    numeric_blocks = p.split(numeric)
    rows = []
    for name, a in analytic_blocks.items():
        err = float(np.max(cells.relative_error(a, numeric_blocks[name])))
        rows.append(GradcheckRow(name, err, err <= tolerance))
    return GradcheckReport(arch, tolerance, rows)


# Baselines ------------------------------------------------------------------


def skill_frequency_baseline(train, test):
    """Predict each next answer by its skill's correct rate in the training split.

    Unseen skills fall back to the overall training correct rate.  Returns
    ``(probabilities, targets)`` for every next-step position of ``test``.
    """
    totals: dict[int, int] = {}
    rights: dict[int, int] = {}
    for s in train:
        for q, c in zip(s.questions[1:], s.corrects[1:]):
            totals[q] = totals.get(q, 0) + 1
            rights[q] = rights.get(q, 0) + c
    overall = sum(rights.values()) / max(1, sum(totals.values()))
    probs, ys = [], []
    for s in test:
        for q, c in zip(s.questions[1:], s.corrects[1:]):
            probs.append(rights[q] / totals[q] if q in totals else overall)
            ys.append(c)
    return np.array(probs), np.array(ys)


def constant_baseline_accuracy(targets) -> float:
    """Accuracy of always predicting the majority class."""
    t = np.asarray(targets)
    rate = float(np.mean(t == 1))
    return max(rate, 1.0 - rate)
