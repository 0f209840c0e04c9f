import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dkt import cells, data, model as dkt
from dkt.numeric import Rng

LN2 = math.log(2.0)


def brute_force_auc(probs, targets):
    pos = [p for p, t in zip(probs, targets) if t == 1]
    neg = [p for p, t in zip(probs, targets) if t == 0]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in product(pos, neg))
    return wins / (len(pos) * len(neg))


def recs(probs, targets):
    return [dkt.PredictionRecord(p, t) for p, t in zip(probs, targets)]


# encoding --------------------------------------------------------------------


def test_encode_examples():
    v = dkt.encode_interaction(0, 0, 3)
    assert v[0] == 1 and v.sum() == 1 and v.shape == (6,)
    assert np.flatnonzero(dkt.encode_interaction(2, 1, 5)).tolist() == [7]


@given(st.integers(1, 30).flatmap(lambda q: st.tuples(st.just(q), st.integers(0, q - 1), st.integers(0, 1))))
def test_encode_is_one_hot(args):
    q_count, q, c = args
    v = dkt.encode_interaction(q, c, q_count)
    assert v.sum() == 1 and v[q + q_count * c] == 1


def test_encode_rejects_out_of_range():
    with pytest.raises(ValueError):
        dkt.encode_interaction(3, 0, 3)


def test_encode_batch_matches_single():
    qs = np.array([[0, 2, 1]])
    cs = np.array([[1, 0, 1]])
    x = dkt.encode_batch(qs, cs, 3)
    for t in range(3):
        np.testing.assert_array_equal(x[t, 0], dkt.encode_interaction(qs[0, t], cs[0, t], 3))


# forward ---------------------------------------------------------------------


def seq(qs, cs):
    return data.InteractionSequence("s", list(qs), list(cs))


@pytest.mark.parametrize("arch", cells.ARCHITECTURES)
def test_zero_model_logits(arch):
    m = dkt.DktModel(arch, 4, 3)
    logits, _ = dkt.forward_sequence(seq([0, 1, 2, 3], [1, 0, 1, 1]), m)
    assert logits.shape == (3, 4)
    np.testing.assert_array_equal(logits, 0.0)


def test_two_interactions_one_row():
    m = dkt.DktModel("gru", 3, 2, rng=Rng(1))
    logits, caches = dkt.forward_sequence(seq([0, 1], [1, 0]), m)
    assert logits.shape == (1, 3) and len(caches) == 1


def test_too_short():
    with pytest.raises(dkt.SequenceTooShort):
        dkt.forward_sequence(seq([0], [1]), dkt.DktModel("rnn", 2, 2))


def test_forward_deterministic():
    s = seq([0, 1, 2, 1, 0], [1, 1, 0, 0, 1])
    a, _ = dkt.forward_sequence(s, dkt.DktModel("lstm", 3, 4, rng=Rng(9)))
    b, _ = dkt.forward_sequence(s, dkt.DktModel("lstm", 3, 4, rng=Rng(9)))
    assert a.tobytes() == b.tobytes()


def test_row_t_uses_output_equation():
    m = dkt.DktModel("rnn", 3, 4, rng=Rng(2))
    s = seq([0, 2, 1], [1, 0, 1])
    logits, caches = dkt.forward_sequence(s, m)
    h = np.zeros(4)
    for t in range(2):
        h, _ = cells.rnn_forward(dkt.encode_interaction(s.questions[t], s.corrects[t], 3), h, m.params)
        np.testing.assert_allclose(logits[t], m.params.values["w_hy"] @ h + m.params.values["b_y"], rtol=1e-14)


# loss ------------------------------------------------------------------------


def test_bce_at_zero_logit():
    logits = np.zeros((1, 1, 2))
    for y in (0, 1):
        loss, d = dkt.masked_bce_loss(logits, [[y]], [[1]], [[1]])
        assert abs(loss - LN2) <= 1e-12
        assert d[0, 0, 1] == (0.5 if y == 0 else -0.5)
        assert d[0, 0, 0] == 0.0


def test_bce_gradient_scaled_by_count():
    logits = np.zeros((1, 4, 2))
    _, d = dkt.masked_bce_loss(logits, [[0, 0, 0, 0]], [[0, 1, 0, 1]], [[1, 1, 1, 1]])
    assert d[0, 0, 0] == pytest.approx(0.5 / 4)


def test_bce_stable_for_large_logits():
    logits = np.array([[[800.0], [-800.0]]])
    loss, d = dkt.masked_bce_loss(logits, [[0, 1]], [[0, 0]], [[1, 1]])
    assert loss == pytest.approx(800.0)
    assert np.all(np.isfinite(d))


def test_masked_positions_are_inert(rng):
    logits = rng.normal(size=(2, 3, 4))
    targets = np.array([[1, 0, 1], [0, 1, 0]])
    next_q = np.array([[0, 1, 2], [3, 0, 1]])
    mask = np.array([[1, 1, 0], [1, 0, 0]])
    loss, d = dkt.masked_bce_loss(logits, targets, next_q, mask)
    garbage = logits.copy()
    garbage[0, 2] = np.inf
    garbage[1, 1:] = np.nan
    tq = next_q.copy()
    tq[1, 1:] = 2
    t3 = targets.copy()
    t3[mask == 0] = 1 - t3[mask == 0]
    loss3, d3 = dkt.masked_bce_loss(garbage, t3, tq, mask)
    assert loss3 == loss
    np.testing.assert_array_equal(d3, d)
    assert np.all(d[0, 2] == 0) and np.all(d[1, 1:] == 0)


def test_bce_empty_batch():
    with pytest.raises(dkt.EmptyBatchError):
        dkt.masked_bce_loss(np.zeros((1, 2, 2)), [[1, 1]], [[0, 0]], [[0, 0]])


def test_bce_matches_naive_formula(rng):
    z = rng.normal(scale=3, size=(1, 50, 1))
    y = rng.integers(0, 2, size=(1, 50))
    loss, _ = dkt.masked_bce_loss(z, y, np.zeros((1, 50), int), np.ones((1, 50)))
    p = 1 / (1 + np.exp(-z[0, :, 0]))
    naive = -np.mean(y[0] * np.log(p) + (1 - y[0]) * np.log(1 - p))
    assert loss == pytest.approx(naive, rel=1e-12)


def test_full_model_gradient_matches_finite_differences():
    # Q=4, H=3, T=5 through cells and the masked loss
    for arch in cells.ARCHITECTURES:
        m = dkt.DktModel(arch, 4, 3, rng=Rng(17, 1))
        r = Rng(17, 2)
        qs = r.integers(0, 4, size=(2, 5))
        cs = r.integers(0, 2, size=(2, 5))
        mask = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]])
        next_q, targets, valid = dkt.batch_targets(qs, cs, mask)

        def loss_fn(_p):
            return dkt.masked_bce_loss(dkt.forward_batch(m, qs, cs).logits, targets, next_q, valid)[0]

        m.params.zero_grad()
        fp = dkt.forward_batch(m, qs, cs)
        _, d = dkt.masked_bce_loss(fp.logits, targets, next_q, valid)
        dkt.backward_batch(m, fp, d)
        numeric = cells.finite_diff_grad(loss_fn, m.params)
        for name, g in m.params.grads.items():
            assert cells.relative_error(g, numeric[name]).max() < 1e-4, (arch, name)


def test_sgd_descent_on_toy_dataset():
    seqs = data.gen_synthetic(data.SynthConfig(num_students=10, num_skills=4, seq_len=8, seed=3))
    batch = data.pad_batch(seqs)
    m = dkt.DktModel("lstm", 4, 5, rng=Rng(3, 1))
    next_q, targets, valid = dkt.batch_targets(batch.questions, batch.corrects, batch.mask)
    losses = []
    for _ in range(21):
        fp = dkt.forward_batch(m, batch.questions, batch.corrects)
        loss, d = dkt.masked_bce_loss(fp.logits, targets, next_q, valid)
        losses.append(loss)
        m.params.zero_grad()
        dkt.backward_batch(m, fp, d)
        for name, v in m.params.values.items():
            v -= 0.1 * m.params.grads[name]
    assert all(b < a for a, b in zip(losses, losses[1:]))


# metrics -----------------------------------------------------------------------


def test_accuracy_examples():
    assert dkt.accuracy(recs([0.9, 0.2], [1, 0])) == 1.0
    assert dkt.accuracy(recs([0.6, 0.4], [1, 1])) == 0.5
    assert dkt.accuracy(recs([0.5], [1])) == 1.0


def test_invalid_records_excluded():
    rs = recs([0.9, 0.2], [1, 0]) + [dkt.PredictionRecord(0.9, 0, valid=False)]
    assert dkt.accuracy(rs) == 1.0
    assert dkt.auc(rs) == 1.0


def test_empty_metrics():
    with pytest.raises(dkt.EmptyMetricError):
        dkt.accuracy([])
    with pytest.raises(dkt.EmptyMetricError):
        dkt.auc([dkt.PredictionRecord(0.3, 1, valid=False)])


def test_auc_examples():
    assert dkt.auc(recs([0.9, 0.1], [1, 0])) == 1.0
    assert dkt.auc(recs([0.4] * 6, [1, 0, 1, 0, 0, 1])) == 0.5
    probs, targets = [0.8, 0.7, 0.3], [1, 0, 1]
    assert brute_force_auc(probs, targets) == 0.5
    assert dkt.auc(recs(probs, targets)) == 0.5


def test_auc_single_class_is_distinct_error():
    with pytest.raises(dkt.UndefinedAUCError):
        dkt.auc(recs([0.2, 0.7], [1, 1]))
    assert not issubclass(dkt.UndefinedAUCError, dkt.EmptyMetricError)


def random_instance(seed):
    """Up to 200 predictions, half the time on a coarse grid to force ties."""
    r = Rng(seed, 7)
    n = int(r.integers(2, 201))
    probs = r.random(n)
    if r.random() < 0.5:
        probs = np.round(probs * 4) / 4
    targets = r.integers(0, 2, size=n)
    targets[0], targets[1] = 0, 1
    return probs, targets


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32))
def test_auc_rank_matches_brute_force(seed):
    probs, targets = random_instance(seed)
    assert abs(dkt.auc_scores(probs, targets) - brute_force_auc(probs, targets)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32))
def test_auc_invariant_under_monotone_transform(seed):
    probs, targets = random_instance(seed)
    base = dkt.auc_scores(probs, targets)
    assert dkt.auc_scores(np.exp(3 * probs) - 7, targets) == pytest.approx(base, abs=1e-12)
    assert dkt.auc_scores(np.log1p(probs), targets) == pytest.approx(base, abs=1e-12)
