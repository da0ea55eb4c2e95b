"""Lifespan simulation loop.

Time advances one batch at a time. Per-batch latency comes from the schedule's
critical path, and cell wear changes only at weight writes. Chunks of batches
are expanded into cell-level write events at once. The first batch in which
any cell reaches its endurance limit is located exactly, so results do not
depend on the chunk size.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import rng
from .arch import AcceleratorConfig, CrossbarState, WearCounters
from .faults import Decision, FaultLedger, FaultToleranceProfile, assess
from .scheduler import (BindingPlan, PlanInfeasible, Schedule, bind, compute_batch_size,
                        schedule, task_times)
from .wear_leveling import WlPolicy, update_pe_row_counters
from .workload import GraphError, LayerKind, NetworkGraph, validate_graph

THROUGHPUT_FLOOR = "ThroughputFloor"
FIRST_FAULT = "FirstFault"
MAX_INFERENCES = "MaxInferences"
PLAN_INFEASIBLE = "PlanInfeasible"

_MAX_EVENTS_PER_CHUNK = 2_000_000
_MAX_CHUNK = 1024


@dataclass(frozen=True)
class SimPolicy:
    theta: float = 0.4
    fault_handling: bool = False
    approximation: bool = False
    wl: WlPolicy = field(default_factory=WlPolicy)
    batching: bool = False
    batch_cap: int = 64
    max_inferences: int = 10_000_000
    seed: int = 0
    activation_bits: int = 8
    label: str = ""

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError("theta must be in (0, 1)")
        if self.max_inferences < 1 or self.batch_cap < 1:
            raise ValueError("max_inferences and batch_cap must be >= 1")
        if isinstance(self.wl, dict):
            object.__setattr__(self, "wl", WlPolicy.from_dict(self.wl))

    def with_(self, **kw) -> "SimPolicy":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["wl"] = self.wl.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimPolicy":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown policy keys: {sorted(unknown)}")
        if "wl" in d:
            d["wl"] = WlPolicy.from_dict(d["wl"])
        return cls(**d)

    @classmethod
    def ladder(cls, **common) -> list["SimPolicy"]:
        """Cumulative optimisation steps, baseline first."""
        wl_on = WlPolicy.all_on(common.pop("update_prob", WlPolicy().update_prob))
        base = cls(**common)
        return [
            base.with_(label="baseline"),
            base.with_(label="+fault_handling", fault_handling=True),
            base.with_(label="+wear_leveling", fault_handling=True, wl=wl_on),
            base.with_(label="+batching", fault_handling=True, wl=wl_on, batching=True),
            base.with_(label="+approximation", fault_handling=True, wl=wl_on, batching=True,
                       approximation=True),
        ]


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def workload_digest(g: NetworkGraph) -> str:
    return _digest(g.to_dict())


@dataclass
class SimReport:
    lifespan_inferences: int
    lifespan_days: float
    peak_throughput: float
    throughput_series: list[tuple[int, float]]
    retired_columns_series: list[tuple[int, int]]
    reconfigurations: int
    inferences_per_reconfig: float
    write_events_total: int
    static_row_writes: int
    dynamic_row_writes: int
    faults_detected: int
    stop_reason: str
    batch_size: int
    seed: int
    label: str = ""
    config_digest: str = ""
    workload_digest: str = ""
    profile_digest: str = ""
    policy: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["throughput_series"] = [[int(n), float(t)] for n, t in self.throughput_series]
        d["retired_columns_series"] = [[int(n), int(c)] for n, c in self.retired_columns_series]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SimReport":
        d = dict(d)
        d["throughput_series"] = [(int(n), float(t)) for n, t in d["throughput_series"]]
        d["retired_columns_series"] = [(int(n), int(c)) for n, c in d["retired_columns_series"]]
        return cls(**d)


def inference_latency(sched: Schedule, config: AcceleratorConfig) -> int:
    """Critical-path makespan of one batch, in cycles."""
    times = task_times(sched, config)
    return max((f for _, f in times.values()), default=0)


class _Unit(NamedTuple):
    dynamic: bool
    apu: np.ndarray
    row: np.ndarray
    col: np.ndarray
    off: np.ndarray
    widx: np.ndarray
    sessions: int


def _units(plan: BindingPlan, g: NetworkGraph, config: AcceleratorConfig) -> list[_Unit]:
    """Cell-level write template of every weight layer: one write of all its waves."""
    R = config.xbar_rows
    out = []
    for lid in sorted(plan.bindings):
        b = plan.bindings[lid]
        cpw = b.cells_per_weight
        parts = []
        sessions = 0
        for w in range(b.waves):
            for cr in b.column_ranges:
                ks = b.active_kernels(cr, w)
                if not len(ks):
                    continue
                cols = np.asarray(cr.columns[:len(ks) * cpw], dtype=np.int64)
                rows = np.arange(cr.rows_used, dtype=np.int64)
                rr, jj = np.meshgrid(rows, np.arange(cols.size), indexing="ij")
                rr, jj = rr.ravel(), jj.ravel()
                kernel = ks.start + jj // cpw
                weight = kernel * b.in_dim + cr.stack_pos * R + rr
                apu = config.apu_index(*cr.apu)
                parts.append((np.full(rr.size, apu), rr, cols[jj], jj % cpw, (lid << 40) + weight))
                sessions += cr.rows_used
        if not parts:
            continue
        cat = [np.concatenate(p) for p in zip(*parts)]
        out.append(_Unit(g.layer(lid).kind is LayerKind.DYNAMIC_MATMUL, *cat, sessions))
    return out


class _WriteProgram:
    def __init__(self, plan: BindingPlan, g: NetworkGraph, config: AcceleratorConfig, policy: SimPolicy):
        self.config = config
        self.wl = policy.wl
        self.seed = policy.seed
        self.B = plan.batch_size
        self.units = _units(plan, g, config)
        self.probs = np.asarray(policy.wl.update_prob, dtype=np.float64)
        for b in plan.bindings.values():
            policy.wl.check_groups(b.cells_per_weight)
        self.static_sessions = sum(u.sessions for u in self.units if not u.dynamic)
        self.dynamic_sessions = sum(u.sessions for u in self.units if u.dynamic) * self.B
        per_batch = sum(u.row.size * (self.B if u.dynamic else 1) for u in self.units)
        self.max_chunk = max(1, _MAX_EVENTS_PER_CHUNK // max(1, per_batch))

    def _expand(self, u: _Unit, epochs: np.ndarray, batch_of: np.ndarray):
        R, C = self.config.xbar_rows, self.config.xbar_cols
        groups = self.probs.size
        e = epochs[:, None]
        row = (u.row + e) % R if self.wl.row_shift else np.broadcast_to(u.row, (e.size, u.row.size))
        grp = (u.off + e) % groups if self.wl.bit_rotation else np.broadcast_to(u.off, (e.size, u.off.size))
        p = self.probs[grp]
        if self.wl.deterministic:
            hit = p >= 1.0
        else:
            hit = rng.uniform(self.seed, rng.TAG_GROUP_UPDATE, e, u.widx, grp) < p
        flat = (u.apu * R + row) * C + u.col
        return flat[hit], np.broadcast_to(batch_of[:, None], hit.shape)[hit]

    def events(self, batch0: int, inf0: int, k: int) -> tuple[np.ndarray, np.ndarray]:
        flats, ks = [], []
        kb = np.arange(k, dtype=np.int64)
        kd = np.arange(k * self.B, dtype=np.int64)
        for u in self.units:
            if u.dynamic:
                f, b = self._expand(u, inf0 + kd, kd // self.B)
            else:
                f, b = self._expand(u, batch0 + kb, kb)
            flats.append(f)
            ks.append(b)
        if not flats:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        return np.concatenate(flats), np.concatenate(ks)

    def advance(self, state: CrossbarState, batch0: int, inf0: int, k: int) -> tuple[int, list[int]]:
        """Apply up to ``k`` batches, stopping after the first one that wears out a cell.

        Returns ``(batches applied, new fault flat indices)``.
        """
        flats, ks = self.events(batch0, inf0, k)
        if flats.size == 0:
            return k, []
        order = np.lexsort((ks, flats))
        f, kk = flats[order], ks[order]
        head = np.r_[True, f[1:] != f[:-1]]
        first = np.maximum.accumulate(np.where(head, np.arange(f.size), 0))
        rank = np.arange(f.size) - first + 1
        wc = state.write_count.reshape(-1)
        dead = state.faulted.reshape(-1)
        cross = (wc[f] + rank >= state.limits_flat(f)) & ~dead[f]
        done = k
        if cross.any():
            kstar = int(kk[cross].min())
            done = kstar + 1
            f = f[kk <= kstar]
        uniq, cnt = np.unique(f, return_counts=True)
        return done, state.apply_increments(uniq, cnt)


def run(g: NetworkGraph, config: AcceleratorConfig, policy: SimPolicy,
        profile: FaultToleranceProfile | None = None) -> SimReport:
    """Serve inferences until the accelerator can no longer hold its throughput."""
    return run_with_state(g, config, policy, profile)[0]


def run_with_state(g: NetworkGraph, config: AcceleratorConfig, policy: SimPolicy,
                   profile: FaultToleranceProfile | None = None) -> tuple[SimReport, CrossbarState]:
    errs = validate_graph(g)
    if errs:
        raise GraphError("; ".join(errs))
    if policy.approximation and policy.fault_handling and profile is None:
        raise ValueError("approximation requires a fault tolerance profile")
    approx = policy.approximation and policy.fault_handling
    prof = profile if approx else FaultToleranceProfile.zeros()

    state = CrossbarState(config, config.endurance_model(policy.seed))
    wear = WearCounters(config)
    ledger = FaultLedger()
    B = compute_batch_size(g, config.gbuffer_bytes, policy.activation_bits,
                           policy.batch_cap).batch_size if policy.batching else 1
    wear_aware = policy.wl.wear_aware_binding

    plan = bind(g, config, state, wear, B, wear_aware)
    prog = _WriteProgram(plan, g, config, policy)
    lat = inference_latency(schedule(plan, g), config)
    tput = B * config.freq_hz / lat if lat else float("inf")
    peak = tput

    n = batch = since_request = reconfigs = 0
    busy = 0.0
    static_rw = dynamic_rw = 0
    tseries = [(0, tput)]
    rseries = [(0, 0)]
    max_batches = max(1, policy.max_inferences // B)
    chunk = 1
    stop = None
    while stop is None:
        left = max_batches - batch
        if left <= 0:
            stop = MAX_INFERENCES
            break
        done, new = prog.advance(state, batch, n, min(chunk, left, prog.max_chunk))
        batch += done
        n += done * B
        since_request += done * B
        busy += done * lat
        static_rw += done * prog.static_sessions
        dynamic_rw += done * prog.dynamic_sessions
        if not new:
            chunk = min(chunk * 2, _MAX_CHUNK)
            continue
        chunk = 1
        # Request stage
        update_pe_row_counters(wear, plan, since_request)
        since_request = 0
        ledger.detect_on_write((state.addr_of_flat(i) for i in new), n, plan)
        if not policy.fault_handling:
            stop = FIRST_FAULT
            break
        if assess(ledger, prof) is Decision.KEEP:
            continue
        state.retire_columns(ledger.retire_all())
        rseries.append((n, state.retired_columns))
        try:
            plan = bind(g, config, state, wear, B, wear_aware, generation=plan.generation + 1)
        except PlanInfeasible:
            stop = PLAN_INFEASIBLE
            break
        ledger.recount(plan)
        lat = inference_latency(schedule(plan, g), config)
        tput = B * config.freq_hz / lat if lat else float("inf")
        tseries.append((n, tput))
        if tput < (1 - policy.theta) * peak:
            stop = THROUGHPUT_FLOOR
            break
        reconfigs += 1
        busy += config.reconfig_penalty_cycles
        prog = _WriteProgram(plan, g, config, policy)

    seconds = busy / config.freq_hz
    report = SimReport(
        lifespan_inferences=n,
        lifespan_days=seconds / (86400.0 * config.utilization),
        peak_throughput=peak,
        throughput_series=tseries,
        retired_columns_series=rseries,
        reconfigurations=reconfigs,
        inferences_per_reconfig=n / (reconfigs + 1),
        write_events_total=state.total_writes,
        static_row_writes=static_rw,
        dynamic_row_writes=dynamic_rw,
        faults_detected=len(ledger),
        stop_reason=stop,
        batch_size=B,
        seed=policy.seed,
        label=policy.label,
        config_digest=config.digest(),
        workload_digest=workload_digest(g),
        profile_digest=_digest(prof.to_dict()),
        policy=policy.to_dict(),
    )
    return report, state


class CompareError(ValueError):
    pass


def compare(reports: Sequence[SimReport]) -> list[dict]:
    """Lifespan and configuration-reuse ratios against the first report."""
    if len(reports) < 1:
        raise CompareError("nothing to compare")
    ref = reports[0]
    for r in reports[1:]:
        for key in ("config_digest", "workload_digest", "seed"):
            if getattr(r, key) != getattr(ref, key):
                raise CompareError(f"report {r.label or '?'} differs from {ref.label or '?'} in {key}")
    rows = []
    for r in reports:
        rows.append({
            "label": r.label,
            "lifespan_inferences": r.lifespan_inferences,
            "lifespan_ratio": r.lifespan_inferences / ref.lifespan_inferences if ref.lifespan_inferences else float("nan"),
            "inferences_per_reconfig": r.inferences_per_reconfig,
            "reconfig_ratio": (r.inferences_per_reconfig / ref.inferences_per_reconfig
                               if ref.inferences_per_reconfig else float("nan")),
            "stop_reason": r.stop_reason,
        })
    return rows
