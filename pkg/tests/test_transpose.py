import numpy as np
import pytest
from hypothesis import given, strategies as st

from xbarlife.transpose import (BankLayout, FlatMatrix, apply_cycles, bank_slot, collision_count,
                                permutation_cycles, read_transposed, round_trip, stream_matrix,
                                transpose_check, transposed_index, write_transaction)


def oracle(n, m):
    return np.arange(n * m).reshape(n, m).T.ravel().tolist()


def test_two_by_four_cycles():
    assert permutation_cycles(2, 4) == [(0,), (1, 2, 4), (3, 6, 5), (7,)]


def test_index_endpoints_fixed():
    for n, m in [(3, 5), (7, 2), (1, 9)]:
        assert transposed_index(0, n, m) == 0
        assert transposed_index(n * m - 1, n, m) == n * m - 1


def test_one_by_one():
    r = transpose_check(1, 1, 1)
    assert r["ok"] and r["cycles"] == [[0]]


@given(st.integers(1, 40), st.integers(1, 40))
def test_cycles_reproduce_transpose(n, m):
    assert apply_cycles(list(range(n * m)), permutation_cycles(n, m)) == oracle(n, m)


@given(st.integers(1, 20), st.integers(1, 20), st.integers(1, 16))
def test_transaction_model_round_trip(n, m, banks):
    assert read_transposed(stream_matrix(FlatMatrix(n, m, list(range(n * m))), banks)).data == oracle(n, m)


def test_vectorised_round_trip_all_small_shapes():
    for n in range(1, 33):
        for m in range(1, 33):
            assert round_trip(np.arange(n * m), n, m).tolist() == oracle(n, m)


def test_swap_counted_when_lane_differs_from_bank():
    # 3x2 over two banks: a10 and a11 trade lanes
    layout = BankLayout(3, 2, 2)
    write_transaction([(0, "a00"), (1, "a01")], layout)
    before = layout.stats.swaps
    write_transaction([(2, "a10"), (3, "a11")], layout)
    assert layout.stats.swaps - before == 2
    assert bank_slot(2, 3, 2, 2) == (1, 0) and bank_slot(3, 3, 2, 2) == (0, 2)


def test_collisions_become_micro_transactions():
    layout = stream_matrix(FlatMatrix(4, 2, list(range(8))), 2)
    assert layout.stats.collisions > 0
    assert layout.stats.micro_transactions == layout.stats.collisions
    assert collision_count(4, 2, 2) == layout.stats.micro_transactions
    assert read_transposed(layout).data == oracle(4, 2)


def test_collision_count_extremes():
    # a single row maps to consecutive banks
    assert collision_count(1, 16) == 0
    # square power-of-two tile: every row lands in one bank
    assert collision_count(16, 16) == 16 * 15


def test_incomplete_layout_named():
    layout = BankLayout(2, 2, 2)
    write_transaction([(0, 1)], layout)
    with pytest.raises(ValueError, match="missing"):
        read_transposed(layout)


def test_oversized_transaction_rejected():
    with pytest.raises(ValueError):
        write_transaction([(i, i) for i in range(5)], BankLayout(4, 4, 4))
