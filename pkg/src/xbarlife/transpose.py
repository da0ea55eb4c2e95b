"""In-situ transposition through a bank group.

A matrix streamed row by row is scattered over ``num_banks`` one-element-wide
banks so that reading entry by entry, bank by bank, yields the transpose.
Element ``alpha`` of an ``N x M`` row-major matrix belongs at position
``P(alpha)`` of the flattened transpose, stored at bank ``P mod banks`` and
entry ``P // banks``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

DEFAULT_BANKS = 16


def _check(alpha: int, n: int, m: int) -> None:
    if n < 1 or m < 1:
        raise ValueError("matrix dimensions must be >= 1")
    if not 0 <= alpha < n * m:
        raise IndexError(f"flat index {alpha} outside [0, {n * m})")


def transposed_index(alpha: int, n: int, m: int) -> int:
    """Position of row-major element ``alpha`` of an ``n x m`` matrix in its
    flattened transpose."""
    _check(alpha, n, m)
    last = n * m - 1
    if alpha == last:
        return last
    return (n * alpha) % last


def transposed_indices(n: int, m: int) -> np.ndarray:
    last = n * m - 1
    a = np.arange(n * m, dtype=np.int64)
    if last == 0:
        return a
    p = (n * a) % last
    p[last] = last
    return p


def permutation_cycles(n: int, m: int) -> list[tuple[int, ...]]:
    """Orbits of :func:`transposed_index`, each led by its smallest index."""
    if n < 1 or m < 1:
        raise ValueError("matrix dimensions must be >= 1")
    perm = transposed_indices(n, m)
    seen = np.zeros(n * m, dtype=bool)
    cycles = []
    for start in range(n * m):
        if seen[start]:
            continue
        cyc = []
        i = start
        while not seen[i]:
            seen[i] = True
            cyc.append(i)
            i = int(perm[i])
        cycles.append(tuple(cyc))
    return cycles


def apply_cycles(data: Sequence, cycles: list[tuple[int, ...]]) -> list:
    """Permute a flat array in place, one cycle at a time."""
    out = list(data)
    for cyc in cycles:
        if len(cyc) < 2:
            continue
        # element at cyc[k] moves to cyc[k+1]
        carry = out[cyc[-1]]
        for k in range(len(cyc) - 1, 0, -1):
            out[cyc[k]] = out[cyc[k - 1]]
        out[cyc[0]] = carry
    return out


def bank_slot(alpha: int, n: int, m: int, num_banks: int = DEFAULT_BANKS) -> tuple[int, int]:
    if num_banks < 1:
        raise ValueError("num_banks must be >= 1")
    return divmod(transposed_index(alpha, n, m), num_banks)[::-1]


@dataclass
class FlatMatrix:
    rows: int
    cols: int
    data: list

    def __post_init__(self):
        if len(self.data) != self.rows * self.cols:
            raise ValueError(f"data length {len(self.data)} != {self.rows}x{self.cols}")

    def transpose(self) -> "FlatMatrix":
        a = np.asarray(self.data, dtype=object).reshape(self.rows, self.cols)
        return FlatMatrix(self.cols, self.rows, a.T.reshape(-1).tolist())


@dataclass
class TransposeStats:
    transactions: int = 0
    micro_transactions: int = 0  # follow-ups caused by bank collisions
    swaps: int = 0
    collisions: int = 0
    permutations: list = field(default_factory=list)


@dataclass
class BankLayout:
    """Bank group contents for one ``rows x cols`` source matrix."""

    rows: int
    cols: int
    num_banks: int = DEFAULT_BANKS
    banks: list = field(default_factory=list)
    stats: TransposeStats = field(default_factory=TransposeStats)

    def __post_init__(self):
        if self.num_banks < 1:
            raise ValueError("num_banks must be >= 1")
        if not self.banks:
            self.banks = [dict() for _ in range(self.num_banks)]

    @property
    def entries(self) -> int:
        return -(-self.rows * self.cols // self.num_banks)


def write_transaction(elements: Sequence[tuple[int, Any]], layout: BankLayout) -> BankLayout:
    """Store one NoC transaction of ``(alpha, value)`` pairs.

    The swapping register routes lane ``k`` to bank ``id(alpha_k)``. Elements
    whose bank is already claimed in this transaction wait for a follow-up
    micro-transaction.
    """
    if len(elements) > layout.num_banks:
        raise ValueError(f"transaction of {len(elements)} exceeds {layout.num_banks} banks")
    st = layout.stats
    st.transactions += 1
    pending = list(enumerate(elements))
    first = True
    while pending:
        if not first:
            st.micro_transactions += 1
        claimed: dict[int, tuple[int, int, Any]] = {}
        deferred = []
        for lane, (alpha, value) in pending:
            bid, entry = bank_slot(alpha, layout.rows, layout.cols, layout.num_banks)
            if bid in claimed:
                deferred.append((lane, (alpha, value)))
                st.collisions += 1
                continue
            claimed[bid] = (lane, entry, value)
        perm = []
        for bid, (lane, entry, value) in sorted(claimed.items()):
            layout.banks[bid][entry] = value
            perm.append((lane, bid))
            if lane != bid:
                st.swaps += 1
        st.permutations.append(perm)
        pending = deferred
        first = False
    return layout


def read_transposed(layout: BankLayout) -> FlatMatrix:
    """Read entries in order across banks; the result is ``cols x rows``."""
    total = layout.rows * layout.cols
    out = []
    missing = []
    for t in range(total):
        entry, bid = divmod(t, layout.num_banks)
        bank = layout.banks[bid]
        if entry not in bank:
            missing.append((bid, entry))
            continue
        out.append(bank[entry])
    if missing:
        raise ValueError(f"bank layout incomplete, missing (bank, entry) slots: {missing}")
    return FlatMatrix(layout.cols, layout.rows, out)


def stream_matrix(mat: FlatMatrix, num_banks: int = DEFAULT_BANKS) -> BankLayout:
    """Write a matrix row by row, each row split into ``num_banks``-wide transactions."""
    layout = BankLayout(mat.rows, mat.cols, num_banks)
    for r in range(mat.rows):
        base = r * mat.cols
        for start in range(0, mat.cols, num_banks):
            stop = min(mat.cols, start + num_banks)
            write_transaction([(base + c, mat.data[base + c]) for c in range(start, stop)], layout)
    return layout


def transpose_check(n: int, m: int, num_banks: int = DEFAULT_BANKS, values=None) -> dict:
    """Round-trip an ``n x m`` matrix through the bank group and compare with ``.T``."""
    data = list(range(n * m)) if values is None else list(values)
    mat = FlatMatrix(n, m, data)
    layout = stream_matrix(mat, num_banks)
    got = read_transposed(layout)
    want = mat.transpose()
    cycles = permutation_cycles(n, m)
    via_cycles = apply_cycles(data, cycles)
    return {
        "n": n,
        "m": m,
        "banks": num_banks,
        "cycles": [list(c) for c in cycles],
        "transactions": layout.stats.transactions,
        "collisions": layout.stats.collisions,
        "extra_micro_transactions": layout.stats.micro_transactions,
        "swaps": layout.stats.swaps,
        "ok": got.data == want.data and via_cycles == want.data,
    }


def collision_count(n: int, m: int, num_banks: int = DEFAULT_BANKS) -> int:
    """Extra micro-transactions needed to stream an ``n x m`` matrix (no data)."""
    p = transposed_indices(n, m) % num_banks
    extra = 0
    for r in range(n):
        for start in range(0, m, num_banks):
            ids = p[r * m + start: r * m + min(m, start + num_banks)]
            counts = np.bincount(ids, minlength=num_banks)
            extra += int(counts.max()) - 1
    return extra


def bank_layout(n: int, m: int, num_banks: int = DEFAULT_BANKS) -> tuple[np.ndarray, np.ndarray]:
    """Bank id and entry of every row-major element, vectorised."""
    p = transposed_indices(n, m)
    return p % num_banks, p // num_banks


def round_trip(data, n: int, m: int, num_banks: int = DEFAULT_BANKS) -> np.ndarray:
    """Scatter ``data`` into the bank group and read it back entry by entry."""
    data = np.asarray(data).reshape(-1)
    bid, entry = bank_layout(n, m, num_banks)
    banks = np.zeros((-(-n * m // num_banks), num_banks), dtype=data.dtype)
    filled = np.zeros(banks.shape, dtype=bool)
    banks[entry, bid] = data
    filled[entry, bid] = True
    if not filled.reshape(-1)[: n * m].all():
        raise ValueError("bank layout incomplete")
    return banks.reshape(-1)[: n * m]
