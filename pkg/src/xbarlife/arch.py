"""Accelerator configuration and mutable crossbar wear state."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from typing import Iterable, NamedTuple

import numpy as np

from . import rng


@dataclass(frozen=True)
class AcceleratorConfig:
    num_pes: int = 64
    apu_rows_per_pe: int = 6
    apu_cols_per_pe: int = 4
    xbar_rows: int = 128
    xbar_cols: int = 128
    cell_bits: int = 2
    adc_per_apu: int = 16
    pe_buffer_bytes: int = 1536
    gbuffer_bytes: int = 8 * 1024 * 1024
    freq_hz: float = 1e9
    xbar_compute_cycles: int = 96
    row_write_cycles: int = 6000
    mm_bandwidth_bytes_per_s: float = 19.2e9
    utilization: float = 0.25
    elementwise_cycles_per_token: int = 0
    reconfig_penalty_cycles: int = 0
    endurance_mean: float = 2.5e9
    endurance_cov: float = 0.2

    def __post_init__(self):
        counts = ("num_pes", "apu_rows_per_pe", "apu_cols_per_pe", "xbar_rows", "xbar_cols",
                  "adc_per_apu", "xbar_compute_cycles", "row_write_cycles")
        for name in counts:
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.cell_bits not in (1, 2, 4):
            raise ValueError("cell_bits must be 1, 2 or 4")
        if self.freq_hz <= 0 or self.mm_bandwidth_bytes_per_s <= 0 or self.gbuffer_bytes <= 0:
            raise ValueError("frequency, bandwidth and gbuffer size must be positive")
        if not 0 < self.utilization <= 1:
            raise ValueError("utilization must be in (0, 1]")
        if self.elementwise_cycles_per_token < 0 or self.reconfig_penalty_cycles < 0:
            raise ValueError("cycle costs must be >= 0")
        if self.endurance_mean <= 0 or self.endurance_cov < 0:
            raise ValueError("endurance mean must be > 0 and cov >= 0")

    @classmethod
    def scaled(cls, **overrides) -> "AcceleratorConfig":
        """Desk-scale profile: 4 PEs of 2x2 APUs with 32x32 crossbars, endurance 1e4."""
        base = dict(
            num_pes=4, apu_rows_per_pe=2, apu_cols_per_pe=2, xbar_rows=32, xbar_cols=32,
            gbuffer_bytes=16 * 1024, endurance_mean=1e4, endurance_cov=0.2,
        )
        base.update(overrides)
        return cls(**base)

    @property
    def num_apus(self) -> int:
        return self.num_pes * self.apu_rows_per_pe * self.apu_cols_per_pe

    @property
    def cells_per_apu(self) -> int:
        return self.xbar_rows * self.xbar_cols

    @property
    def num_cells(self) -> int:
        return self.num_apus * self.cells_per_apu

    @property
    def bytes_per_cycle(self) -> float:
        return self.mm_bandwidth_bytes_per_s / self.freq_hz

    def apu_index(self, pe: int, apu_row: int, apu_col: int) -> int:
        return (pe * self.apu_rows_per_pe + apu_row) * self.apu_cols_per_pe + apu_col

    def apu_coords(self, index: int) -> tuple[int, int, int]:
        pe, rest = divmod(index, self.apu_rows_per_pe * self.apu_cols_per_pe)
        r, c = divmod(rest, self.apu_cols_per_pe)
        return pe, r, c

    def endurance_model(self, seed: int) -> "EnduranceModel":
        return EnduranceModel(self.endurance_mean, self.endurance_cov, seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AcceleratorConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_(self, **kw) -> "AcceleratorConfig":
        return replace(self, **kw)


class CellAddress(NamedTuple):
    pe: int
    apu_row: int
    apu_col: int
    row: int
    col: int

    @property
    def apu(self) -> tuple[int, int, int]:
        return (self.pe, self.apu_row, self.apu_col)


@dataclass(frozen=True)
class EnduranceModel:
    mean: float
    cov: float
    seed: int = 0

    def __post_init__(self):
        if self.mean <= 0:
            raise ValueError("endurance mean must be > 0")
        if self.cov < 0:
            raise ValueError("endurance cov must be >= 0")


def sample_endurance_array(model: EnduranceModel, pe, apu_row, apu_col, row, col) -> np.ndarray:
    """Vectorised writes-to-failure for broadcast address arrays.

    Normal(mean, cov * mean) truncated below at one write; each value depends
    only on ``(seed, address)``.
    """
    if model.cov == 0:
        shape = np.broadcast_shapes(*(np.shape(x) for x in (pe, apu_row, apu_col, row, col)))
        return np.full(shape, float(model.mean))
    z = rng.normal(model.seed, rng.TAG_ENDURANCE, pe, apu_row, apu_col, row, col)
    return np.maximum(1.0, model.mean * (1.0 + model.cov * z))


def sample_endurance(addr: CellAddress, model: EnduranceModel) -> float:
    return float(sample_endurance_array(model, *(np.array([v]) for v in addr))[0])


class ColumnMaskError(RuntimeError):
    """Raised when a write targets a retired column."""


class CrossbarState:
    """Per-cell write counters and column masks, with endurance limits drawn lazily.

    Arrays are indexed ``[apu, row, col]`` with ``apu`` the flat index from
    :meth:`AcceleratorConfig.apu_index`.
    """

    def __init__(self, config: AcceleratorConfig, endurance: EnduranceModel):
        self.config = config
        self.endurance = endurance
        A, R, C = config.num_apus, config.xbar_rows, config.xbar_cols
        self.write_count = np.zeros((A, R, C), dtype=np.int64)
        self.faulted = np.zeros((A, R, C), dtype=bool)
        self.column_mask = np.zeros((A, C), dtype=bool)
        self._limits = np.zeros((A, R, C), dtype=np.float64)
        self._ready = np.zeros(A, dtype=bool)

    # endurance limits are generated on first touch and cached
    def ensure_limits(self, apus: Iterable[int]) -> None:
        todo = [a for a in set(int(x) for x in apus) if not self._ready[a]]
        if not todo:
            return
        R, C = self.config.xbar_rows, self.config.xbar_cols
        for a in sorted(todo):
            pe, r, c = self.config.apu_coords(a)
            rows = np.arange(R)[:, None]
            cols = np.arange(C)[None, :]
            self._limits[a] = sample_endurance_array(self.endurance, pe, r, c, rows, cols)
            self._ready[a] = True

    def endurance_limit(self, pe: int, apu_row: int, apu_col: int) -> np.ndarray:
        a = self.config.apu_index(pe, apu_row, apu_col)
        self.ensure_limits([a])
        return self._limits[a]

    def limits_flat(self, flat_idx: np.ndarray) -> np.ndarray:
        self.ensure_limits(np.unique(flat_idx // self.config.cells_per_apu))
        return self._limits.reshape(-1)[flat_idx]

    def addr_of_flat(self, flat: int) -> CellAddress:
        a, rc = divmod(int(flat), self.config.cells_per_apu)
        row, col = divmod(rc, self.config.xbar_cols)
        return CellAddress(*self.config.apu_coords(a), row, col)

    def flat_of_addr(self, addr: CellAddress) -> int:
        a = self.config.apu_index(addr.pe, addr.apu_row, addr.apu_col)
        return (a * self.config.xbar_rows + addr.row) * self.config.xbar_cols + addr.col

    def record_row_write(self, pe: int, apu_row: int, apu_col: int, physical_row: int,
                         active_cols: Iterable[int]) -> list[CellAddress]:
        """One P&V row-write session: +1 on each active cell of the row.

        Returns the cells that reached their endurance limit for the first time.
        """
        cols = np.asarray(sorted(set(int(c) for c in active_cols)), dtype=np.int64)
        if not 0 <= physical_row < self.config.xbar_rows:
            raise IndexError(f"row {physical_row} out of range")
        if cols.size == 0:
            return []
        a = self.config.apu_index(pe, apu_row, apu_col)
        if self.column_mask[a, cols].any():
            bad = cols[self.column_mask[a, cols]].tolist()
            raise ColumnMaskError(f"write to retired column(s) {bad} of APU {(pe, apu_row, apu_col)}")
        self.ensure_limits([a])
        self.write_count[a, physical_row, cols] += 1
        hit = (self.write_count[a, physical_row, cols] >= self._limits[a, physical_row, cols]) \
            & ~self.faulted[a, physical_row, cols]
        new = cols[hit]
        self.faulted[a, physical_row, new] = True
        return [CellAddress(pe, apu_row, apu_col, physical_row, int(c)) for c in new]

    def apply_increments(self, flat_idx: np.ndarray, inc: np.ndarray) -> list[int]:
        """Bulk counterpart of :meth:`record_row_write` used by the engine.

        ``flat_idx`` must be unique. Returns flat indices of new faults.
        """
        sel = inc > 0
        idx, inc = flat_idx[sel], inc[sel]
        if idx.size == 0:
            return []
        wc = self.write_count.reshape(-1)
        wc[idx] += inc
        lim = self.limits_flat(idx)
        fl = self.faulted.reshape(-1)
        new = idx[(wc[idx] >= lim) & ~fl[idx]]
        fl[new] = True
        return sorted(int(i) for i in new)

    def retire_columns(self, faults: Iterable[CellAddress]) -> int:
        """Mask every column holding one of ``faults``; idempotent."""
        newly = 0
        for f in faults:
            a = self.config.apu_index(f.pe, f.apu_row, f.apu_col)
            if not self.column_mask[a, f.col]:
                self.column_mask[a, f.col] = True
                newly += 1
        return newly

    def usable_columns(self, pe: int, apu_row: int, apu_col: int) -> np.ndarray:
        a = self.config.apu_index(pe, apu_row, apu_col)
        return np.flatnonzero(~self.column_mask[a])

    def usable_width(self, pe: int, apu_row: int, apu_col: int) -> int:
        a = self.config.apu_index(pe, apu_row, apu_col)
        return int(self.config.xbar_cols - self.column_mask[a].sum())

    @property
    def retired_columns(self) -> int:
        return int(self.column_mask.sum())

    @property
    def total_writes(self) -> int:
        return int(self.write_count.sum())

    def snapshot(self, bins: int = 16) -> dict:
        """Masked-column lists and write-count histograms per crossbar."""
        out = []
        for a in range(self.config.num_apus):
            wc = self.write_count[a]
            if not wc.any() and not self.column_mask[a].any():
                continue
            hist, edges = np.histogram(wc, bins=bins)
            out.append({
                "apu": list(self.config.apu_coords(a)),
                "masked_columns": np.flatnonzero(self.column_mask[a]).tolist(),
                "faulty_cells": int(self.faulted[a].sum()),
                "write_hist": {"counts": hist.tolist(), "edges": [float(e) for e in edges]},
            })
        return {"config_digest": self.config.digest(), "crossbars": out}


class WearCounters:
    """Host-side per-PE-row usage counters; only ever increase."""

    def __init__(self, config: AcceleratorConfig):
        self.pe_row_writes = np.zeros((config.num_pes, config.apu_rows_per_pe), dtype=np.int64)

    def pe_level(self, pe: int) -> int:
        return int(self.pe_row_writes[pe].max())

    def add(self, pe_rows: Iterable[tuple[int, int]], amount: int) -> None:
        if amount < 0:
            raise ValueError("wear counters are non-decreasing")
        for pe, r in set(pe_rows):
            self.pe_row_writes[pe, r] += amount

    def copy(self) -> "WearCounters":
        w = WearCounters.__new__(WearCounters)
        w.pe_row_writes = self.pe_row_writes.copy()
        return w
