import numpy as np
import pytest

from protossm.data import (Dataset, SyntheticSpec, gen_synthetic, limit_per_class, read_cifar10,
                           read_cifar100, standardize, task_view, to_cifar_bytes)
from protossm.errors import DataError, FormatError, ParameterError
from protossm.rng import XorShiftRng, splitmix64


def cifar10_record(label, pixels):
    return bytes([label]) + bytes(pixels)


def test_cifar10_fixture_record():
    ds = read_cifar10(cifar10_record(7, [255] * 3072))
    assert ds.labels.tolist() == [7]
    assert ds.inputs.shape == (1, 3072) and np.all(ds.inputs == 1.0)
    assert ds.num_classes == 10


def test_cifar10_empty_and_index():
    assert len(read_cifar10(b"")) == 0
    ds = read_cifar10(cifar10_record(0, [0] * 3072) + cifar10_record(9, [1] * 3072))
    assert ds.per_class == {0: [0], 9: [1]}


def test_cifar10_errors():
    with pytest.raises(FormatError):
        read_cifar10(bytes(3072))
    with pytest.raises(FormatError, match="record 1"):
        read_cifar10(cifar10_record(1, [0] * 3072) + cifar10_record(10, [0] * 3072))


def test_cifar10_channel_planar_layout():
    pixels = np.zeros(3072, dtype=np.uint8)
    pixels[1024 + 32 * 2 + 5] = 51  # green plane, row 2, column 5
    ds = read_cifar10(cifar10_record(3, pixels))
    img = ds.inputs[0].reshape(3, 32, 32)
    assert img[1, 2, 5] == pytest.approx(0.2)
    assert np.count_nonzero(img) == 1


def test_cifar10_lossless_requantization():
    raw = np.random.default_rng(0).integers(0, 256, size=(4, 3072), dtype=np.uint8)
    labels = np.array([[1], [4], [9], [0]], dtype=np.uint8)
    blob = np.hstack([labels, raw]).tobytes()
    ds = read_cifar10(blob)
    assert np.array_equal(np.rint(ds.inputs * 255).astype(np.uint8), raw)


def test_cifar100_granularity():
    rec = bytes([3, 42]) + bytes(3072)
    assert read_cifar100(rec).labels.tolist() == [42]
    assert read_cifar100(rec, "coarse").labels.tolist() == [3]
    assert read_cifar100(rec, "coarse").num_classes == 20
    with pytest.raises(FormatError, match="record 0"):
        read_cifar100(bytes([3, 100]) + bytes(3072))
    with pytest.raises(FormatError):
        read_cifar100(bytes([20, 1]) + bytes(3072))
    with pytest.raises(FormatError):
        read_cifar100(bytes(3073))


def test_synthetic_is_deterministic():
    spec = SyntheticSpec(3, 5, 20, 4.0, 1.0, seed=11)
    (a_tr, a_te), (b_tr, b_te) = gen_synthetic(spec), gen_synthetic(spec)
    assert a_tr.inputs.tobytes() == b_tr.inputs.tobytes()
    assert a_te.inputs.tobytes() == b_te.inputs.tobytes()
    assert len(a_tr) == 48 and len(a_te) == 12
    other, _ = gen_synthetic(SyntheticSpec(3, 5, 20, 4.0, 1.0, seed=12))
    assert other.inputs.tobytes() != a_tr.inputs.tobytes()


def test_synthetic_degenerate_noise():
    spec = SyntheticSpec(4, 6, 10, 3.0, 1e-9, seed=2)
    tr, te = gen_synthetic(spec)
    for ds in (tr, te):
        for k, idx in ds.per_class.items():
            x = ds.inputs[idx]
            assert np.max(np.abs(x - x.mean(axis=0))) < 1e-7


def test_synthetic_mean_separation():
    spec = SyntheticSpec(10, 16, 10, 5.0, 1e-9, seed=0)
    tr, _ = gen_synthetic(spec)
    means = np.array([tr.inputs[tr.per_class[k]].mean(axis=0) for k in range(10)])
    gaps = [np.linalg.norm(means[i] - means[j]) for i in range(10) for j in range(i + 1, 10)]
    assert min(gaps) >= 5.0 - 1e-6


def test_synthetic_nearest_mean_oracle():
    tr, te = gen_synthetic(SyntheticSpec(2, 16, 200, 10.0, 1.0, seed=4))
    means = np.array([tr.inputs[tr.per_class[k]].mean(axis=0) for k in range(2)])
    dist = ((te.inputs[:, None, :] - means[None]) ** 2).sum(axis=2)
    assert np.mean(dist.argmin(axis=1) == te.labels) >= 0.99


def test_synthetic_validation():
    with pytest.raises(ParameterError):
        SyntheticSpec(2, 4, 10, separation=0.0)
    with pytest.raises(ParameterError):
        SyntheticSpec(2, 4, 10, stddev=-1.0)


def test_task_view():
    tr, _ = gen_synthetic(SyntheticSpec(4, 3, 10, 3.0, 1.0, seed=0))
    full = task_view(tr, [0, 1, 2, 3], seed=5)
    assert sorted(full) == list(range(len(tr)))
    only3 = task_view(tr, [3], seed=5)
    assert sorted(only3) == tr.per_class[3]
    assert task_view(tr, [0, 2], seed=9) == task_view(tr, [0, 2], seed=9)
    a, b = set(task_view(tr, [0, 1], 1)), set(task_view(tr, [2, 3], 1))
    assert not a & b and len(a | b) == len(tr)
    with pytest.raises(DataError, match="7"):
        task_view(tr, [7], 0)


def test_export_roundtrip():
    tr, te = gen_synthetic(SyntheticSpec(2, 3072, 10, 5.0, 1.0, seed=3))
    both = Dataset(np.vstack([tr.inputs, te.inputs]), np.concatenate([tr.labels, te.labels]), 2)
    blob = to_cifar_bytes(both)
    assert len(blob) == 20 * 3073
    back = read_cifar10(blob)
    assert np.array_equal(back.labels, both.labels)
    assert to_cifar_bytes(read_cifar10(blob)) == blob


def test_export_cifar100_layout():
    ds = Dataset(np.full((2, 3072), 0.5), [42, 7], 100)
    back = read_cifar100(to_cifar_bytes(ds))
    assert back.labels.tolist() == [42, 7]


def test_standardize_and_limit():
    tr, te = gen_synthetic(SyntheticSpec(3, 4, 20, 3.0, 2.0, seed=1))
    s_tr, s_te = standardize(tr, te)
    assert np.allclose(s_tr.inputs.mean(axis=0), 0) and np.allclose(s_tr.inputs.std(axis=0), 1)
    assert s_te.inputs.shape == te.inputs.shape
    small = limit_per_class(tr, 5)
    assert {k: len(v) for k, v in small.per_class.items()} == {0: 5, 1: 5, 2: 5}


def test_rng_reference_values():
    # SplitMix64 reference output for seed 0 (Vigna's splitmix64.c)
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    r1, r2 = XorShiftRng(42), XorShiftRng(42)
    assert [r1.next_u64() for _ in range(5)] == [r2.next_u64() for _ in range(5)]
    rng = XorShiftRng(1)
    assert all(0 <= rng.random() < 1 for _ in range(1000))
    assert sorted(rng.permutation(10)) == list(range(10))
    draws = rng.sample(20, 7)
    assert len(set(draws)) == 7 and all(0 <= d < 20 for d in draws)


def test_rng_normals_have_unit_moments():
    z = XorShiftRng(3).standard_normal(20000)
    assert abs(z.mean()) < 0.03 and abs(z.std() - 1) < 0.03


def test_rng_integers_uniform():
    rng = XorShiftRng(9)
    counts = np.bincount([rng.integers(6) for _ in range(60000)], minlength=6)
    assert np.all(np.abs(counts - 10000) < 5 * np.sqrt(10000 * 5 / 6))
