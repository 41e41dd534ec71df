import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unlearnlab import attack, baselines, data, nn
from unlearnlab.data import (CLASS_REMOVAL, PairedIterator, SplitError, SplitSpec,
                             generate_synthetic, make_split)


@pytest.fixture(scope="module")
def bundle():
    return generate_synthetic(5, 20, 200, 0.3, 0.15, seed=3)


def test_same_seed_gives_identical_bytes():
    a = generate_synthetic(seed=9)
    b = generate_synthetic(seed=9)
    for name in ("train", "validation", "test"):
        assert getattr(a, name).inputs.tobytes() == getattr(b, name).inputs.tobytes()
        assert getattr(a, name).labels.tobytes() == getattr(b, name).labels.tobytes()
    assert generate_synthetic(seed=10).train.inputs.tobytes() != a.train.inputs.tobytes()


@pytest.mark.parametrize("frac", [0.0, 0.15, 0.33])
def test_exact_number_of_noisy_train_labels(frac):
    b = generate_synthetic(4, 10, 125, 0.3, frac, seed=1)
    flipped = int(np.sum(b.train.labels != b.clean_labels["train"]))
    assert flipped == round(frac * 500)


def test_clean_eval_splits_when_requested():
    b = generate_synthetic(seed=2, noisy_eval=False)
    np.testing.assert_array_equal(b.test.labels, b.clean_labels["test"])
    np.testing.assert_array_equal(b.validation.labels, b.clean_labels["validation"])


@pytest.mark.parametrize("kwargs", [{"cluster_spread": 0.0}, {"n_classes": 1},
                                    {"n_per_class": 5}, {"label_noise_fraction": 1.0}])
def test_generator_rejects_bad_parameters(kwargs):
    with pytest.raises(ValueError):
        generate_synthetic(**kwargs)


def test_random_split_sizes(bundle):
    s = make_split(bundle, SplitSpec(forget_fraction=0.30, seed=0))
    assert (s.n_forget, s.n_retain) == (300, 700)


def test_class_split(bundle):
    s = make_split(bundle, SplitSpec(CLASS_REMOVAL, None, 1, seed=0))
    assert np.all(s.forget.labels == 1)
    assert not np.any(s.retain.labels == 1)
    assert s.n_forget == int(np.sum(bundle.train.labels == 1))


def test_seeds_give_different_equal_sized_splits(bundle):
    a = make_split(bundle, SplitSpec(forget_fraction=0.15, seed=0))
    b = make_split(bundle, SplitSpec(forget_fraction=0.15, seed=1))
    assert a.n_forget == b.n_forget == 150
    assert not np.array_equal(a.forget_idx, b.forget_idx)


@pytest.mark.parametrize("spec", [
    SplitSpec(forget_fraction=0.0001),
    SplitSpec(forget_fraction=0.9999),
    SplitSpec(CLASS_REMOVAL, None, 7),
])
def test_degenerate_splits_raise(bundle, spec):
    with pytest.raises(SplitError):
        make_split(bundle, spec)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), frac=st.floats(0.01, 0.95))
def test_partition_property(bundle, seed, frac):
    s = make_split(bundle, SplitSpec(forget_fraction=frac, seed=seed))
    both = np.concatenate([s.forget_idx, s.retain_idx])
    np.testing.assert_array_equal(np.sort(both), np.arange(len(bundle.train)))
    assert s.n_forget == round(frac * len(bundle.train))
    # Each side keeps the original train order.
    assert np.all(np.diff(s.forget_idx) > 0) and np.all(np.diff(s.retain_idx) > 0)
    np.testing.assert_array_equal(s.forget.inputs, bundle.train.inputs[s.forget_idx])


def test_retain_exhausted_after_nine_forget_epochs():
    it = PairedIterator(100, 900, 50, seed=0)
    assert it.steps_per_epoch == 2
    for _ in range(9):
        assert len(list(it.epoch())) == 2
    assert (it.retain_cursor, it.retain_passes) == (900, 0)
    next(iter(it.epoch()))
    assert it.retain_passes == 1


def test_any_18_aligned_steps_cover_retain_once():
    it = PairedIterator(100, 900, 50, seed=4)
    stream = [r for _ in range(27) for _, r in it.epoch()]
    for start in range(0, len(stream) - 17, 18):
        seen = np.concatenate(stream[start:start + 18])
        np.testing.assert_array_equal(np.sort(seen), np.arange(900))


def test_equal_sizes_reshuffle_at_every_epoch_boundary():
    it = PairedIterator(120, 120, 32, seed=1)
    for k in range(5):
        retain = np.concatenate([r for _, r in it.epoch()])
        np.testing.assert_array_equal(np.sort(retain), np.arange(120))
        assert it.retain_cursor == 120 and it.retain_passes == k


def test_partial_final_batch_is_paired_with_equal_size():
    it = PairedIterator(70, 300, 32, seed=0)
    sizes = [(len(f), len(r)) for f, r in it.epoch()]
    assert sizes == [(32, 32), (32, 32), (6, 6)]


@settings(max_examples=30, deadline=None)
@given(nf=st.integers(5, 60), nr=st.integers(5, 200), bs=st.integers(1, 5), seed=st.integers(0, 99))
def test_retain_coverage_property(nf, nr, bs, seed):
    it = PairedIterator(nf, nr, bs, seed)
    stream = np.concatenate([r for _ in range(3 * (nr // nf + 1)) for _, r in it.epoch()])
    for p in range(len(stream) // nr):
        np.testing.assert_array_equal(np.sort(stream[p * nr:(p + 1) * nr]), np.arange(nr))


def test_forget_epoch_covers_forget_set_once():
    it = PairedIterator(77, 500, 10, seed=2)
    f = np.concatenate([fi for fi, _ in it.epoch()])
    np.testing.assert_array_equal(np.sort(f), np.arange(77))


def test_iterator_is_a_pure_function_of_seed():
    def stream():
        it = PairedIterator(30, 80, 7, seed=5)
        return [(f.tolist(), r.tolist()) for _ in range(4) for f, r in it.epoch()]

    assert stream() == stream()


def test_retain_epochs_mirror_paired_stream():
    paired = PairedIterator(40, 150, 16, seed=8)
    lone = PairedIterator(40, 150, 16, seed=8)
    pe, re_ = paired.epochs(), lone.retain_epochs()
    for _ in range(6):
        want = [r.tolist() for _, r in next(pe)]
        assert [r.tolist() for r in next(re_)] == want


@pytest.mark.parametrize("bs", [0, -1, 41])
def test_iterator_rejects_bad_batch_size(bs):
    with pytest.raises(ValueError):
        PairedIterator(40, 150, bs, seed=0)


def test_paired_epochs_yield_batches(bundle):
    s = make_split(bundle, SplitSpec(forget_fraction=0.1, seed=0))
    epoch = next(data.paired_epochs(s.forget, s.retain, 32, seed=0))
    assert len(epoch) == 4
    assert all(isinstance(f, nn.Batch) and len(f) == len(r) for f, r in epoch)


def test_csv_bundle_round_trip(tmp_path, bundle):
    for name in ("train", "validation", "test"):
        b = getattr(bundle, name)
        arr = np.column_stack([b.inputs, b.labels])
        header = ",".join([f"x{i}" for i in range(b.inputs.shape[1])] + ["label"])
        np.savetxt(tmp_path / f"{name}.csv", arr, delimiter=",", header=header, comments="",
                   fmt=["%.17g"] * b.inputs.shape[1] + ["%d"])
    loaded = data.load_csv_bundle(tmp_path / "train.csv", tmp_path / "validation.csv",
                                  tmp_path / "test.csv")
    np.testing.assert_array_equal(loaded.train.inputs, bundle.train.inputs)
    np.testing.assert_array_equal(loaded.test.labels, bundle.test.labels)
    assert (loaded.n_classes, loaded.in_dim) == (5, 20)


@pytest.mark.slow
def test_noise_free_separated_task_leaks_little():
    b = generate_synthetic(5, 20, 200, 0.15, 0.0, seed=0)
    model = baselines.pretrain(b, baselines.TrainConfig(), seed=0).params
    acc = 100 * np.mean(nn.predict(model, b.test.inputs) == b.test.labels)
    s = make_split(b, SplitSpec(forget_fraction=0.15, seed=0))
    rep = attack.evaluate_mia(model, s.forget, b.test, seed=0)
    assert acc > 95.0
    assert rep.gap_l < 5.0
