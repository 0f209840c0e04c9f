import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dkt import data, harness, model as dkt
from dkt.data import DatasetError, InteractionSequence, SynthConfig
from dkt.numeric import Rng


def test_parse_single_record():
    seqs, q = data.parse_dataset("3\n0,1,2\n1,0,1\n")
    assert len(seqs) == 1 and len(seqs[0]) == 3 and q >= 3
    assert seqs[0].questions == [0, 1, 2] and seqs[0].corrects == [1, 0, 1]


def test_crlf_and_trailing_blank_lines():
    seqs, q = data.parse_dataset("2\r\n4,1\r\n0,1\r\n1\r\n0\r\n1\r\n\r\n\n")
    assert [len(s) for s in seqs] == [2, 1] and q == 5


def test_empty_file_warns(tmp_path, caplog):
    path = tmp_path / "empty.txt"
    path.write_text("")
    with caplog.at_level(logging.WARNING):
        seqs, q = data.load_dataset(path)
    assert seqs == [] and q == 0
    assert "empty" in caplog.text


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        ("2\n0,1,2\n1,0\n", 2, "declared length 2"),
        ("2\n0,1\n1,x\n", 3, "non-integer"),
        ("2\n0,1\n1,2\n", 3, "0 or 1"),
        ("3\n0,1,2\n1,0,1\nfoo\n1\n1\n", 4, "sequence length"),
        ("3\n0,1,2\n", 2, "3-line"),
    ],
)
def test_parse_errors_report_lines(text, line, fragment):
    with pytest.raises(DatasetError) as info:
        data.parse_dataset(text)
    assert info.value.line == line
    assert fragment in str(info.value)
    assert f"line {line}" in str(info.value)


seq_strategy = st.lists(
    st.integers(1, 12).flatmap(
        lambda n: st.tuples(st.lists(st.integers(0, 30), min_size=n, max_size=n), st.lists(st.integers(0, 1), min_size=n, max_size=n))
    ),
    max_size=8,
)


@settings(max_examples=50)
@given(seq_strategy)
def test_round_trip(records):
    seqs = [InteractionSequence(str(k), q, c) for k, (q, c) in enumerate(records)]
    again, _ = data.parse_dataset(data.format_dataset(seqs))
    assert [(s.questions, s.corrects) for s in again] == records


def test_save_load_file(tmp_path):
    seqs = data.gen_synthetic(SynthConfig(num_students=5, num_skills=4, seq_len=6, seed=1))
    path = tmp_path / "d.txt"
    data.save_dataset(seqs, path)
    back, q = data.load_dataset(path)
    assert [s.questions for s in back] == [s.questions for s in seqs]
    assert q <= 4


def test_synthetic_deterministic():
    cfg = SynthConfig(num_students=30, num_skills=6, seq_len=10, seed=5)
    a, b = data.gen_synthetic(cfg), data.gen_synthetic(cfg)
    assert data.format_dataset(a) == data.format_dataset(b)
    c = data.gen_synthetic(SynthConfig(num_students=30, num_skills=6, seq_len=10, seed=6))
    assert data.format_dataset(a) != data.format_dataset(c)


def test_synthetic_large_gamma_repeats_are_correct():
    cfg = SynthConfig(num_students=300, num_skills=10, seq_len=30, learn_rate_gamma=50.0, seed=8)
    repeats = wrong = 0
    for s in data.gen_synthetic(cfg):
        seen = set()
        for q, c in zip(s.questions, s.corrects):
            if q in seen:
                repeats += 1
                wrong += c == 0
            seen.add(q)
    assert repeats > 1000
    assert wrong / repeats < 1e-3


def test_synthetic_neutral_rate_is_half():
    cfg = SynthConfig(num_students=2000, num_skills=5, seq_len=50, ability_sd=1e-9, difficulty_sd=1e-9, learn_rate_gamma=0.0, seed=2)
    cs = np.concatenate([s.corrects for s in data.gen_synthetic(cfg)])
    assert cs.size == 100_000
    assert abs(cs.mean() - 0.5) < 0.02


def test_synth_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(num_students=0)
    with pytest.raises(ValueError):
        SynthConfig(ability_sd=0.0)


def test_split_sizes_and_disjoint():
    seqs = [InteractionSequence(str(k), [0, 1], [1, 0]) for k in range(10)]
    train, test = data.train_test_split(seqs, 0.2, seed=3)
    assert len(train) == 8 and len(test) == 2
    ids_train = {s.student_id for s in train}
    ids_test = {s.student_id for s in test}
    assert not ids_train & ids_test
    assert ids_train | ids_test == {str(k) for k in range(10)}
    again = data.train_test_split(seqs, 0.2, seed=3)
    assert [s.student_id for s in again[1]] == [s.student_id for s in test]


def test_split_errors():
    one = [InteractionSequence("a", [0], [1])]
    with pytest.raises(ValueError):
        data.train_test_split(one, 0.5, 1)
    with pytest.raises(ValueError):
        data.train_test_split(one * 3, 1.0, 1)


def test_batches_pad_and_mask():
    seqs = [InteractionSequence("a", [1, 2, 3, 1, 2], [1, 1, 0, 0, 1]), InteractionSequence("b", [3, 3, 3], [1, 1, 1])]
    (batch,) = data.make_batches(seqs, 2)
    assert batch.max_len == 5
    assert batch.mask[1].tolist() == [1, 1, 1, 0, 0]
    assert batch.questions[1, 3:].tolist() == [0, 0] and batch.corrects[1, 3:].tolist() == [0, 0]


def test_batch_size_one_never_pads():
    seqs = data.gen_synthetic(SynthConfig(num_students=7, num_skills=3, seq_len=4, seed=1))
    seqs = [InteractionSequence(s.student_id, s.questions[: 2 + k % 3], s.corrects[: 2 + k % 3]) for k, s in enumerate(seqs)]
    for b in data.make_batches(seqs, 1, Rng(1)):
        assert b.mask.all()


@given(st.lists(st.integers(1, 15), min_size=1, max_size=40), st.integers(1, 9), st.integers(0, 1000))
def test_mask_conservation_and_prefix(lengths, batch_size, seed):
    seqs = [InteractionSequence(str(k), [0] * n, [1] * n) for k, n in enumerate(lengths)]
    batches = data.make_batches(seqs, batch_size, Rng(seed))
    assert sum(int(b.mask.sum()) for b in batches) == sum(lengths)
    for b in batches:
        for row in b.mask:
            n = int(row.sum())
            assert row[:n].all() and not row[n:].any()


def test_shuffle_depends_on_rng():
    seqs = [InteractionSequence(str(k), [0, 1], [0, 1]) for k in range(20)]
    a = data.make_batches(seqs, 5, Rng(1, 2).sub(1))
    b = data.make_batches(seqs, 5, Rng(1, 2).sub(1))
    c = data.make_batches(seqs, 5, Rng(1, 2).sub(2))
    assert [x.student_ids for x in a] == [x.student_ids for x in b]
    assert [x.student_ids for x in a] != [x.student_ids for x in c]


def test_split_long_chunks():
    s = InteractionSequence("s", list(range(5)), [1, 0, 1, 0, 1])
    chunks = data.split_long([s], max_len=2)
    assert [c.questions for c in chunks] == [[0, 1], [2, 3], [4]]
    assert data.usable(chunks) == chunks[:2]


def test_frequency_baseline_finds_signal():
    seqs = data.gen_synthetic(SynthConfig(num_students=600, num_skills=20, seq_len=30, learn_rate_gamma=0.5, seed=4))
    train, test = data.train_test_split(seqs, 0.25, 4)
    probs, ys = harness.skill_frequency_baseline(train, test)
    assert dkt.auc_scores(probs, ys) > 0.5
