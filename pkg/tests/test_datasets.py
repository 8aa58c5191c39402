import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_sequence
from visbeam.datasets import (
    DataIntegrityError,
    DataParseError,
    DataSequence,
    SplitSpec,
    is_labels_only,
    make_model_input,
    make_samples,
    read_jsonl,
    select,
    sliding_window,
    split_by_sequence,
    stack_inputs,
    write_jsonl,
)


@pytest.mark.parametrize("length, window, stride, expected", [
    (13, 13, 1, 1),
    (20, 13, 1, 8),
    (12, 13, 1, 0),
    (20, 13, 3, 3),
])
def test_sliding_window_counts(rng, length, window, stride, expected):
    seq = random_sequence(rng, "s", length)
    samples = sliding_window(seq, window, stride)
    assert len(samples) == expected
    for s in samples:
        assert len(s) == window


def test_sliding_window_preserves_order_and_source(rng):
    seq = random_sequence(rng, "abc", 20)
    samples = sliding_window(seq)
    for n, s in enumerate(samples):
        assert s.source_sequence == "abc" and s.start == n
        np.testing.assert_array_equal(s.beams, seq.beams[n:n + 13])
        np.testing.assert_array_equal(s.bboxes, seq.bboxes[n:n + 13])


def test_samples_never_mix_sequences(rng):
    seqs = [random_sequence(rng, f"s{i}", int(rng.integers(5, 30))) for i in range(10)]
    by_id = {s.sequence_id: s for s in seqs}
    for sample in make_samples(seqs):
        src = by_id[sample.source_sequence]
        np.testing.assert_array_equal(sample.bboxes, src.bboxes[sample.start:sample.start + 13])


def test_split_sizes_ten_sequences(rng):
    seqs = [random_sequence(rng, f"s{i}", 13) for i in range(10)]
    tr, va, te = split_by_sequence(seqs, SplitSpec(0.7, 0.2, 0.1, seed=3))
    assert (len(tr), len(va), len(te)) == (7, 2, 1)


@settings(max_examples=60)
@given(st.integers(1, 60), st.integers(0, 1000), st.randoms(use_true_random=False))
def test_split_is_an_order_invariant_partition(n, seed, shuffler):
    ids = [f"seq{i:03d}" for i in range(n)]
    spec = SplitSpec(seed=seed)
    tr, va, te = split_by_sequence(ids, spec)
    assert set(tr) | set(va) | set(te) == set(ids)
    assert len(tr) + len(va) + len(te) == n
    assert not (set(tr) & set(va) or set(tr) & set(te) or set(va) & set(te))
    shuffled = list(ids)
    shuffler.shuffle(shuffled)
    assert split_by_sequence(shuffled, spec) == (tr, va, te)


def test_split_same_seed_same_assignment():
    ids = [f"x{i}" for i in range(25)]
    assert split_by_sequence(ids, SplitSpec(seed=7)) == split_by_sequence(ids, SplitSpec(seed=7))
    assert split_by_sequence(ids, SplitSpec(seed=7)) != split_by_sequence(ids, SplitSpec(seed=8))


def test_split_errors():
    with pytest.raises(ValueError):
        split_by_sequence([])
    with pytest.raises(ValueError):
        SplitSpec(0.7, 0.2, 0.2)


def test_model_input_default_window(rng):
    sample = sliding_window(random_sequence(rng, "s", 13))[0]
    vis = make_model_input(sample, 8, 5, "vision")
    assert vis.observation.shape == (8, 4)
    np.testing.assert_array_equal(vis.targets, sample.beams[8:13])
    base = make_model_input(sample, 8, 5, "baseline")
    np.testing.assert_array_equal(base.observation, sample.beams[:8])
    assert vis.powers.shape == (5, 8)


def test_model_input_last_step_target(rng):
    sample = sliding_window(random_sequence(rng, "s", 13))[0]
    mi = make_model_input(sample, 12, 1)
    assert mi.targets.tolist() == [sample.beams[12]]


def test_model_input_window_overflow(rng):
    sample = sliding_window(random_sequence(rng, "s", 13))[0]
    with pytest.raises(ValueError):
        make_model_input(sample, 8, 6)
    with pytest.raises(ValueError):
        make_model_input(sample, 8, 5, "radar")


def test_stack_inputs_shapes(rng):
    samples = make_samples([random_sequence(rng, "a", 15), random_sequence(rng, "b", 14, labels_only=True)])
    obs, targets, powers = stack_inputs(samples, 8, 5, "vision")
    assert obs.shape == (5, 8, 4) and targets.shape == (5, 5)
    assert powers is None  # one labels-only sample disables powers


def test_jsonl_round_trip(tmp_path, rng):
    seqs = [random_sequence(rng, f"s{i}", 15 + i, 16) for i in range(3)]
    write_jsonl(seqs, tmp_path / "d.jsonl")
    assert read_jsonl(tmp_path / "d.jsonl") == seqs
    write_jsonl(seqs, tmp_path / "d.jsonl.gz")
    assert read_jsonl(tmp_path / "d.jsonl.gz") == seqs


finite = st.floats(0, 1, allow_nan=False)


@st.composite
def sequences(draw):
    n_beams = draw(st.integers(1, 6))
    n = draw(st.integers(1, 4))
    out = []
    for k in range(n):
        length = draw(st.integers(1, 5))
        bboxes = draw(st.lists(st.lists(finite, min_size=4, max_size=4), min_size=length, max_size=length))
        if draw(st.booleans()):
            powers = np.array(draw(st.lists(
                st.lists(st.floats(0, 1e6), min_size=n_beams, max_size=n_beams),
                min_size=length, max_size=length))).reshape(length, n_beams)
            beams = np.argmax(powers, axis=1)
        else:
            powers = None
            beams = draw(st.lists(st.integers(0, n_beams - 1), min_size=length, max_size=length))
        out.append(DataSequence(f"id{k}", np.array(bboxes).reshape(length, 4), beams, powers))
    return out


@settings(max_examples=40, deadline=None)
@given(sequences())
def test_jsonl_round_trip_property(tmp_path_factory, seqs):
    path = tmp_path_factory.mktemp("rt") / "d.jsonl"
    write_jsonl(seqs, path)
    assert read_jsonl(path) == seqs


def _write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")


def test_read_rejects_argmax_mismatch(tmp_path):
    rec = {"sequence_id": "bad", "steps": [
        {"bbox": [0.5, 0.5, 0.1, 0.1], "powers": [1.0, 3.0, 2.0], "beam": 1},
        {"bbox": [0.5, 0.5, 0.1, 0.1], "powers": [1.0, 3.0, 2.0], "beam": 2},
    ]}
    _write_lines(tmp_path / "d.jsonl", [rec])
    with pytest.raises(DataIntegrityError, match="bad step 1"):
        read_jsonl(tmp_path / "d.jsonl")


def test_read_reports_malformed_line_number(tmp_path):
    good = {"sequence_id": "a", "steps": [{"bbox": [0.5, 0.5, 0.1, 0.1], "beam": 0}]}
    (tmp_path / "d.jsonl").write_text(json.dumps(good) + "\n{not json\n", encoding="utf-8")
    with pytest.raises(DataParseError, match="line 2"):
        read_jsonl(tmp_path / "d.jsonl")
    _write_lines(tmp_path / "e.jsonl", [good, {"sequence_id": "b"}])
    with pytest.raises(DataParseError, match="line 2"):
        read_jsonl(tmp_path / "e.jsonl")


def test_read_rejects_inconsistent_codebook_sizes(tmp_path, rng):
    write_jsonl([random_sequence(rng, "a", 3, 4), random_sequence(rng, "b", 3, 5)], tmp_path / "d.jsonl")
    with pytest.raises(DataIntegrityError):
        read_jsonl(tmp_path / "d.jsonl")


def test_one_based_ingestion(tmp_path):
    rec = {"sequence_id": "ds", "steps": [{"bbox": [0.5, 0.5, 0.1, 0.1], "beam": 64},
                                          {"bbox": [0.5, 0.5, 0.1, 0.1], "beam": 1}]}
    _write_lines(tmp_path / "d.jsonl", [rec])
    seq, = read_jsonl(tmp_path / "d.jsonl", index_base=1, num_beams=64)
    assert seq.beams.tolist() == [63, 0]
    assert seq.labels_only and is_labels_only([seq])
    with pytest.raises(DataIntegrityError):
        read_jsonl(tmp_path / "d.jsonl", index_base=0, num_beams=64)


def test_empty_sequence_rejected():
    with pytest.raises(DataIntegrityError):
        DataSequence("e", np.zeros((0, 4)), [])


def test_select_by_ids(rng):
    seqs = [random_sequence(rng, f"s{i}", 3) for i in range(4)]
    assert [s.sequence_id for s in select(seqs, ["s2", "s0"])] == ["s0", "s2"]
