import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protossm.feedback import feedback_csv_row, feedback_matrix, feedback_signal, refresh
from protossm.numerics import cosine_sim
from protossm.prototypes import PrototypeBank


def bank_from(protos, seen=None):
    protos = np.asarray(protos, dtype=float)
    bank = PrototypeBank(*protos.shape)
    bank.protos[...] = protos
    bank.seen[...] = True if seen is None else seen
    bank.protos[~bank.seen] = 0.0
    return bank


def brute_force(F, seen, m, rows="first"):
    """Enumerate every distinct seen pair, sort by (-f_ij, i, j), average rows."""
    live = [k for k in range(len(seen)) if seen[k]]
    pairs = sorted(itertools.combinations(live, 2), key=lambda p: (-F[p[0], p[1]], p[0], p[1]))[:m]
    if not pairs:
        return [], np.zeros(len(seen))
    picked = [i for i, _ in pairs] if rows == "first" else [k for p in pairs for k in p]
    return pairs, sum(F[i] for i in picked) / len(picked)


def test_matrix_examples():
    assert np.array_equal(feedback_matrix(bank_from(np.eye(3))), np.eye(3))
    F = feedback_matrix(bank_from([[1.0, 2.0], [1.0, 2.0], [3.0, -1.0]]))
    assert F[0, 1] == pytest.approx(1.0, abs=1e-15)
    F = feedback_matrix(bank_from([[1.0, 0.0], [1 / math.sqrt(2), 1 / math.sqrt(2)]]))
    assert F[0, 1] == pytest.approx(0.7071067811865476, abs=1e-15)


def test_matrix_matches_cosine_and_zeroes_unseen():
    rng = np.random.default_rng(0)
    seen = np.array([True, False, True, True])
    bank = bank_from(rng.normal(size=(4, 3)), seen)
    F = feedback_matrix(bank)
    assert np.all(F[1] == 0) and np.all(F[:, 1] == 0)
    for i, j in itertools.product([0, 2, 3], repeat=2):
        ref = 1.0 if i == j else float(cosine_sim(bank.protos[i], bank.protos[j]))
        assert F[i, j] == pytest.approx(ref, abs=1e-14)


def test_empty_bank():
    st_ = refresh(PrototypeBank(4, 3), m=2)
    assert not st_.F.any() and not st_.signal.any() and st_.top_pairs == []


def test_one_seen_class_gives_zero_signal():
    bank = bank_from(np.eye(3), [False, True, False])
    pairs, signal = feedback_signal(feedback_matrix(bank), bank.seen, 3)
    assert pairs == [] and signal.tolist() == [0.0, 0.0, 0.0]


def test_identity_ties_pick_lexicographic_first():
    pairs, signal = feedback_signal(np.eye(3), [True] * 3, 1)
    assert pairs == [(0, 1)]
    assert signal.tolist() == [1.0, 0.0, 0.0]


def test_dominant_pair():
    F = np.array([[1.0, 0.9, 0.1], [0.9, 1.0, 0.2], [0.1, 0.2, 1.0]])
    pairs, signal = feedback_signal(F, [True] * 3, 1)
    assert pairs == [(0, 1)] and signal.tolist() == F[0].tolist()


def test_normalizes_by_pairs_taken():
    F = np.array([[1.0, 0.4], [0.4, 1.0]])
    pairs, signal = feedback_signal(F, [True, True], 5)
    assert pairs == [(0, 1)] and signal.tolist() == [1.0, 0.4]


def test_both_rows_option():
    F = np.array([[1.0, 0.9, 0.1], [0.9, 1.0, 0.2], [0.1, 0.2, 1.0]])
    _, signal = feedback_signal(F, [True] * 3, 1, rows="both")
    assert signal == pytest.approx((F[0] + F[1]) / 2)


def test_merged_pair_enters_selection():
    rng = np.random.default_rng(3)
    protos = np.linalg.qr(rng.normal(size=(6, 6)))[0][:5]
    protos[4] = protos[1] + 0.05 * protos[4]  # pull class 4 onto class 1
    bank = bank_from(protos)
    state = refresh(bank, m=1)
    expected, _ = brute_force(state.F, bank.seen, 1)
    assert state.top_pairs == expected == [(1, 4)]


def test_refresh_is_pure():
    bank = bank_from(np.random.default_rng(4).normal(size=(5, 3)))
    a, b = refresh(bank, 2), refresh(bank, 2)
    assert np.array_equal(a.F, b.F) and a.top_pairs == b.top_pairs
    assert np.array_equal(a.signal, b.signal)


@pytest.mark.parametrize("seed", range(20))
def test_all_pairs_when_m_large(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(2, 7))
    bank = bank_from(rng.normal(size=(K, 4)))
    F = feedback_matrix(bank)
    pairs, signal = feedback_signal(F, bank.seen, K * (K - 1) // 2)
    assert sorted(pairs) == list(itertools.combinations(range(K), 2))
    assert np.allclose(signal, np.mean([F[i] for i, _ in pairs], axis=0), atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 15))
def test_selection_matches_brute_force(seed, K, m):
    rng = np.random.default_rng(seed)
    seen = rng.random(K) < 0.8
    bank = bank_from(rng.normal(size=(K, 3)), seen)
    F = feedback_matrix(bank)
    assert np.max(np.abs(F - F.T)) <= 1e-12
    assert np.all(np.abs(F) <= 1.0)
    pairs, signal = feedback_signal(F, bank.seen, m)
    ref_pairs, ref_signal = brute_force(F, bank.seen, m)
    assert pairs == ref_pairs
    assert np.allclose(signal, ref_signal, atol=1e-15, rtol=0)
    assert np.all(np.abs(signal) <= 1.0)
    assert all(i < j and seen[i] and seen[j] for i, j in pairs)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6))
def test_permutation_equivariance(seed, K):
    rng = np.random.default_rng(seed)
    protos = rng.normal(size=(K, 4))
    perm = rng.permutation(K)  # new label perm[k] for old label k
    bank = bank_from(protos)
    moved = np.empty_like(protos)
    moved[perm] = protos
    s1 = refresh(bank, 1)
    s2 = refresh(bank_from(moved), 1, rows="both")
    s1b = refresh(bank, 1, rows="both")
    (i, j), = s1.top_pairs
    assert tuple(sorted((perm[i], perm[j]))) == s2.top_pairs[0]
    assert np.allclose(s2.signal[perm], s1b.signal, atol=1e-14)


def test_csv_row():
    state = refresh(bank_from(np.eye(3)), m=1)
    assert feedback_csv_row(7, state) == "7,0-1,1.0,0.0,0.0"
