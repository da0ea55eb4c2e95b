"""Offline binding and scheduling.

Layers are bound greedily in topological order. A layer's kernels (output
neurons) run down crossbar columns: each weight takes ``weight_bits /
cell_bits`` adjacent columns, and a kernel longer than the crossbar spans
several PE rows stacked vertically (``vertical_span``). Within one stack
every APU column is trimmed to the narrowest member so partial sums line up.
When the free PE rows cannot hold every kernel at once, the layer runs in
several waves over the same resources.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .arch import AcceleratorConfig, CrossbarState, WearCounters
from .transpose import DEFAULT_BANKS, collision_count
from .workload import Layer, LayerKind, NetworkGraph, dynamic_operands

PeRow = tuple[int, int]
Apu = tuple[int, int, int]


class PlanInfeasible(RuntimeError):
    pass


class BatchSize(NamedTuple):
    batch_size: int
    overflow: bool
    peak_bytes_per_inference: int


def activation_bytes(layer: Layer, activation_bits: int) -> int:
    return math.ceil(layer.tokens * layer.out_dim * activation_bits / 8)


def peak_activation_bytes(g: NetworkGraph, activation_bits: int = 8) -> int:
    """Peak bytes of live layer outputs for one inference.

    An output stays live from the step that produces it until its last
    consumer has run; a sink is live only at its own step.
    """
    order = g.topological_order()
    step = {l.id: i for i, l in enumerate(order)}
    sizes = [activation_bytes(l, activation_bits) for l in order]
    last = [max((step[c] for c in g.consumers(l.id)), default=i) for i, l in enumerate(order)]
    live = np.zeros(len(order) + 1, dtype=np.int64)
    for i in range(len(order)):
        live[i] += sizes[i]
        live[last[i] + 1] -= sizes[i]
    return int(np.cumsum(live)[:-1].max()) if order else 0


def compute_batch_size(g: NetworkGraph, gbuffer_bytes: float, activation_bits: int = 8,
                       cap: int = 64) -> BatchSize:
    """Largest batch whose live partial results fit in the global buffer."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    peak = peak_activation_bytes(g, activation_bits)
    if peak == 0 or math.isinf(gbuffer_bytes):
        return BatchSize(cap, False, peak)
    b = 0
    # iterative search, mirroring the offline procedure
    while b < cap and (b + 1) * peak <= gbuffer_bytes:
        b += 1
    if b == 0:
        return BatchSize(1, True, peak)
    return BatchSize(b, False, peak)


@dataclass(frozen=True)
class ColumnRange:
    apu: Apu
    columns: tuple[int, ...]
    stack_pos: int = 0
    rows_used: int = 0
    kernel_base: int = 0

    @property
    def start_col(self) -> int:
        return self.columns[0] if self.columns else 0

    @property
    def width(self) -> int:
        return len(self.columns)

    def to_dict(self) -> dict:
        return {"apu": list(self.apu), "columns": list(self.columns), "stack_pos": self.stack_pos,
                "rows_used": self.rows_used, "kernel_base": self.kernel_base}

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnRange":
        return cls(tuple(d["apu"]), tuple(d["columns"]), d["stack_pos"], d["rows_used"], d["kernel_base"])


@dataclass(frozen=True)
class LayerBinding:
    layer: int
    pe_rows: tuple[PeRow, ...]
    column_ranges: tuple[ColumnRange, ...]
    vertical_span: int
    waves: int
    capacity: int
    cells_per_weight: int
    in_dim: int
    out_dim: int

    @property
    def apus(self) -> list[Apu]:
        return sorted({cr.apu for cr in self.column_ranges})

    @property
    def apus_wide(self) -> int:
        return sum(1 for cr in self.column_ranges if cr.stack_pos == 0)

    def kernels(self, cr: ColumnRange) -> int:
        return cr.width // self.cells_per_weight

    def active_kernels(self, cr: ColumnRange, wave: int) -> range:
        """Global kernel indices hosted by ``cr`` during ``wave``."""
        lo = wave * self.capacity + cr.kernel_base
        hi = min(lo + self.kernels(cr), self.out_dim)
        return range(lo, max(lo, hi))

    def row_writes_per_pass(self) -> int:
        """Row-write sessions needed to load every kernel once (all waves)."""
        return sum(cr.rows_used for w in range(self.waves) for cr in self.column_ranges
                   if len(self.active_kernels(cr, w)))

    def to_dict(self) -> dict:
        return {
            "layer": self.layer, "pe_rows": [list(p) for p in self.pe_rows],
            "column_ranges": [cr.to_dict() for cr in self.column_ranges],
            "vertical_span": self.vertical_span, "waves": self.waves, "capacity": self.capacity,
            "cells_per_weight": self.cells_per_weight, "in_dim": self.in_dim, "out_dim": self.out_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayerBinding":
        return cls(d["layer"], tuple(tuple(p) for p in d["pe_rows"]),
                   tuple(ColumnRange.from_dict(c) for c in d["column_ranges"]),
                   d["vertical_span"], d["waves"], d["capacity"], d["cells_per_weight"],
                   d["in_dim"], d["out_dim"])


@dataclass
class BindingPlan:
    bindings: dict[int, LayerBinding]
    batch_size: int = 1
    generation: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def pe_rows_used(self) -> list[PeRow]:
        return sorted({pr for b in self.bindings.values() for pr in b.pe_rows})

    def bound_columns(self, apu: Apu) -> set[int]:
        return {c for b in self.bindings.values() for cr in b.column_ranges if cr.apu == apu
                for c in cr.columns}

    def apus_used(self) -> list[Apu]:
        return sorted({a for b in self.bindings.values() for a in b.apus})

    def to_dict(self) -> dict:
        return {"batch_size": self.batch_size, "generation": self.generation,
                "bindings": [self.bindings[k].to_dict() for k in sorted(self.bindings)]}

    @classmethod
    def from_dict(cls, d: dict) -> "BindingPlan":
        bs = {b["layer"]: LayerBinding.from_dict(b) for b in d["bindings"]}
        return cls(bs, d["batch_size"], d.get("generation", 0))


def pe_row_order(config: AcceleratorConfig, wear: WearCounters | None, wear_aware: bool) -> list[PeRow]:
    """PE rows in binding priority order.

    Wear-aware: PEs by their most-worn row, then rows by their own counter;
    ties go to the lower index.
    """
    pes = range(config.num_pes)
    rows = range(config.apu_rows_per_pe)
    if not wear_aware or wear is None:
        return [(p, r) for p in pes for r in rows]
    w = wear.pe_row_writes
    out = []
    for p in sorted(pes, key=lambda p: (int(w[p].max()), p)):
        out.extend((p, r) for r in sorted(rows, key=lambda r: (int(w[p, r]), r)))
    return out


def _form_stacks(pool: list[PeRow], span: int, rows_per_pe: int) -> list[tuple[PeRow, ...]]:
    if span > rows_per_pe:
        return [tuple(pool[i:i + span]) for i in range(0, len(pool) - span + 1, span)]
    by_pe: dict[int, list[PeRow]] = {}
    for pr in pool:
        by_pe.setdefault(pr[0], []).append(pr)
    stacks, rest = [], []
    for rows in by_pe.values():
        k = len(rows) // span * span
        stacks.extend(tuple(rows[i:i + span]) for i in range(0, k, span))
        rest.extend(rows[k:])
    stacks.extend(tuple(rest[i:i + span]) for i in range(0, len(rest) - span + 1, span))
    return stacks


def _bind_layer(layer: Layer, pool: list[PeRow], config: AcceleratorConfig,
                usable: dict[Apu, np.ndarray]) -> LayerBinding | None:
    R = config.xbar_rows
    cpw = layer.weight_bits // config.cell_bits
    span = math.ceil(layer.in_dim / R)
    need = layer.out_dim
    ranges: list[ColumnRange] = []
    rows_taken: list[PeRow] = []
    base = 0
    for stack in _form_stacks(pool, span, config.apu_rows_per_pe):
        if base >= need:
            break
        used_stack = False
        for c in range(config.apu_cols_per_pe):
            if base >= need:
                break
            width = min(len(usable[(p, r, c)]) for p, r in stack)
            k = min(width // cpw, need - base)
            if k <= 0:
                continue
            for s, (p, r) in enumerate(stack):
                cols = tuple(int(x) for x in usable[(p, r, c)][:k * cpw])
                rows_used = min(R, layer.in_dim - s * R)
                ranges.append(ColumnRange((p, r, c), cols, s, rows_used, base))
            base += k
            used_stack = True
        if used_stack:
            rows_taken.extend(stack)
    if base == 0:
        return None
    return LayerBinding(
        layer=layer.id, pe_rows=tuple(rows_taken), column_ranges=tuple(ranges),
        vertical_span=span, waves=math.ceil(need / base), capacity=base,
        cells_per_weight=cpw, in_dim=layer.in_dim, out_dim=layer.out_dim,
    )


def _usable_map(config: AcceleratorConfig, state: CrossbarState | None) -> dict[Apu, np.ndarray]:
    out = {}
    C = config.xbar_cols
    for a in range(config.num_apus):
        apu = config.apu_coords(a)
        out[apu] = np.arange(C) if state is None else np.flatnonzero(~state.column_mask[a])
    return out


def bind(g: NetworkGraph, config: AcceleratorConfig, state: CrossbarState | None = None,
         wear: WearCounters | None = None, batch_size: int = 1, wear_aware: bool = True,
         generation: int = 0) -> BindingPlan:
    """Assign every weight-bearing layer to PE rows, APUs and crossbar columns.

    Consecutive weight layers get disjoint PE rows where possible so the next
    layer's weights can be written while the current one computes.
    """
    usable = _usable_map(config, state)
    if not any(len(v) for v in usable.values()):
        raise PlanInfeasible("no usable crossbar column left")
    for l in g.weight_layers:
        if l.weight_bits % config.cell_bits:
            raise ValueError(f"layer {l.id}: cell_bits does not divide weight_bits")
    order = pe_row_order(config, wear, wear_aware)
    bindings: dict[int, LayerBinding] = {}
    prev: set[PeRow] = set()
    for layer in g.topological_order():
        if not layer.kind.has_weights:
            continue
        b = _bind_layer(layer, [pr for pr in order if pr not in prev], config, usable)
        if b is None and prev:
            b = _bind_layer(layer, order, config, usable)
        if b is None:
            raise PlanInfeasible(f"layer {layer.id} ({layer.name or layer.kind.value}) cannot be placed")
        bindings[layer.id] = b
        prev = set(b.pe_rows)
    return BindingPlan(bindings, batch_size, generation)


def reassign_spare_column(binding: LayerBinding, apu: Apu, fault_col: int, state: CrossbarState,
                          plan: BindingPlan | None = None) -> LayerBinding | None:
    """Swap a faulty bound column for a free one on the same crossbar.

    Returns the binding unchanged when ``fault_col`` is not bound by it, the
    patched binding when a spare exists, and ``None`` when the crossbar has no
    unmasked unbound column left (a full re-bind is then required).
    """
    apu = tuple(apu)
    hits = [i for i, cr in enumerate(binding.column_ranges) if cr.apu == apu and fault_col in cr.columns]
    if not hits:
        return binding
    bound = plan.bound_columns(apu) if plan is not None else {
        c for cr in binding.column_ranges if cr.apu == apu for c in cr.columns}
    spares = [int(c) for c in state.usable_columns(*apu) if c not in bound and c != fault_col]
    if not spares:
        return None
    spare = spares[0]
    ranges = list(binding.column_ranges)
    for i in hits:
        cr = ranges[i]
        cols = tuple(spare if c == fault_col else c for c in cr.columns)
        ranges[i] = ColumnRange(cr.apu, cols, cr.stack_pos, cr.rows_used, cr.kernel_base)
    return LayerBinding(binding.layer, binding.pe_rows, tuple(ranges), binding.vertical_span,
                        binding.waves, binding.capacity, binding.cells_per_weight,
                        binding.in_dim, binding.out_dim)


@dataclass
class Task:
    id: int
    kind: str  # Write | Compute | Transfer
    layer: int
    wave: int = 0
    inference: int | None = None  # None: whole batch
    resources: tuple[PeRow, ...] = ()
    rows: int = 0
    cells: int = 0
    vectors: int = 0
    cycles: int = 0
    sfu: bool = False  # elementwise stage, no crossbar
    depends_on: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["resources"] = [list(r) for r in self.resources]
        d["depends_on"] = list(self.depends_on)
        return d


@dataclass
class Schedule:
    tasks: list[Task] = field(default_factory=list)
    batch_size: int = 1

    def to_dict(self) -> dict:
        return {"batch_size": self.batch_size, "tasks": [t.to_dict() for t in self.tasks]}

    def writes(self) -> list[Task]:
        return [t for t in self.tasks if t.kind == "Write"]


@lru_cache(maxsize=256)
def _transfer_cycles(rows: int, cols: int, banks: int) -> int:
    return collision_count(rows, cols, banks)


def _wave_cells(b: LayerBinding, wave: int) -> tuple[int, int]:
    rows = cells = 0
    for cr in b.column_ranges:
        k = len(b.active_kernels(cr, wave))
        if k:
            rows = max(rows, cr.rows_used)
            cells += cr.rows_used * k * b.cells_per_weight
    return rows, cells


def schedule(plan: BindingPlan, g: NetworkGraph, num_banks: int = DEFAULT_BANKS) -> Schedule:
    """Emit the per-batch task graph.

    Weight writes are issued one layer at a time in compute order, each as
    soon as its PE rows are released; all ``B`` inferences of a static layer
    run on one weight residency, whereas a dynamic matmul rewrites its operand
    once per inference.
    """
    B = plan.batch_size
    tasks: list[Task] = []

    def add(**kw) -> int:
        kw["depends_on"] = tuple(sorted(d for d in kw.get("depends_on", ()) if d is not None))
        tasks.append(Task(id=len(tasks), **kw))
        return len(tasks) - 1

    last_user: dict[PeRow, int] = {}
    last_write: int | None = None
    done: dict[int, list[int]] = {}
    for layer in g.topological_order():
        prod = [t for p in g.producers(layer.id) for t in done[p]]
        if not layer.kind.has_weights:
            done[layer.id] = [add(kind="Compute", layer=layer.id, vectors=B * layer.tokens, sfu=True,
                                  depends_on=prod)]
            continue
        b = plan.bindings[layer.id]
        res = b.pe_rows
        if layer.kind is LayerKind.DYNAMIC_MATMUL:
            wp, ap = dynamic_operands(g, layer.id)
            op_deps = list(done[wp])
            if layer.transposed_operand:
                cyc = _transfer_cycles(layer.out_dim, layer.in_dim, num_banks)
                op_deps.append(add(kind="Transfer", layer=layer.id, cycles=cyc, depends_on=done[wp]))
            act_deps = done[ap]
            passes = [(i, w) for i in range(B) for w in range(b.waves)]
            vectors = layer.tokens
        else:
            op_deps, act_deps = [], prod
            passes = [(None, w) for w in range(b.waves)]
            vectors = B * layer.tokens
        prev_c = None
        for inf, w in passes:
            rows, cells = _wave_cells(b, w)
            rel = {last_user[r] for r in res if r in last_user}
            wt = add(kind="Write", layer=layer.id, wave=w, inference=inf, resources=res, rows=rows,
                     cells=cells, depends_on=[*rel, last_write, prev_c, *op_deps])
            prev_c = add(kind="Compute", layer=layer.id, wave=w, inference=inf, resources=res,
                         vectors=vectors, depends_on=[wt, *act_deps])
            for r in res:
                last_user[r] = prev_c
            last_write = wt
        done[layer.id] = [prev_c]
    return Schedule(tasks, B)


def task_duration(t: Task, config: AcceleratorConfig) -> int:
    if t.kind == "Write":
        fetch = math.ceil(t.cells * config.cell_bits / 8 / config.bytes_per_cycle)
        return max(t.rows * config.row_write_cycles, fetch)
    if t.kind == "Transfer":
        return t.cycles
    per = config.elementwise_cycles_per_token if t.sfu else config.xbar_compute_cycles
    return t.vectors * per


def task_times(sched: Schedule, config: AcceleratorConfig) -> dict[int, tuple[int, int]]:
    """Earliest start/finish of every task along the dependency graph."""
    times: dict[int, tuple[int, int]] = {}
    for t in sched.tasks:
        start = max((times[d][1] for d in t.depends_on), default=0)
        times[t.id] = (start, start + task_duration(t, config))
    return times


def write_events(plan: BindingPlan, g: NetworkGraph) -> dict[int, int]:
    """Row-write sessions per batch for each weight layer."""
    out = {}
    for lid, b in plan.bindings.items():
        per = b.row_writes_per_pass()
        out[lid] = per * (plan.batch_size if g.layer(lid).kind is LayerKind.DYNAMIC_MATMUL else 1)
    return out
