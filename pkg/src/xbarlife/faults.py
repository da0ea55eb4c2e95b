"""Wear-out faults: ledger, layer impact, tolerance thresholds, retire decisions."""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Protocol

import numpy as np

from . import rng
from .arch import CellAddress
from .workload import NetworkGraph


class FaultRecord(NamedTuple):
    addr: CellAddress
    detected_at_inference: int
    retired: bool = False


class Notification(NamedTuple):
    new: list[CellAddress]
    pause: bool


def affected_layers(addr: CellAddress, plan) -> list[tuple[int, int]]:
    """Layers whose bound columns include the faulty cell's column, each +1.

    Every layer time-sharing the crossbar column counts, whichever logical
    weight currently sits on the cell.
    """
    apu = (addr.pe, addr.apu_row, addr.apu_col)
    out = []
    for lid in sorted(plan.bindings):
        b = plan.bindings[lid]
        if any(cr.apu == apu and addr.col in cr.columns for cr in b.column_ranges):
            out.append((lid, 1))
    return out


class FaultLedger:
    def __init__(self):
        self.faults: list[FaultRecord] = []
        self._seen: set[CellAddress] = set()
        self.per_layer_counts: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self.faults)

    def detect_on_write(self, new_faults: Iterable[CellAddress], inference: int = 0,
                        plan=None) -> Notification:
        """Append first-time faults; one pause request covers the whole batch."""
        fresh = []
        for a in new_faults:
            a = CellAddress(*a)
            if a in self._seen:
                continue
            self._seen.add(a)
            self.faults.append(FaultRecord(a, inference))
            fresh.append(a)
            if plan is not None:
                for lid, d in affected_layers(a, plan):
                    self.per_layer_counts[lid] = self.per_layer_counts.get(lid, 0) + d
        return Notification(fresh, bool(fresh))

    def unretired(self) -> list[CellAddress]:
        return [f.addr for f in self.faults if not f.retired]

    def recount(self, plan) -> dict[int, int]:
        counts: dict[int, int] = {}
        for a in self.unretired():
            for lid, d in affected_layers(a, plan):
                counts[lid] = counts.get(lid, 0) + d
        self.per_layer_counts = counts
        return counts

    def retire_all(self) -> list[CellAddress]:
        addrs = self.unretired()
        self.faults = [f._replace(retired=True) for f in self.faults]
        self.per_layer_counts = {}
        return addrs


@dataclass
class FaultToleranceProfile:
    per_layer_threshold: dict[int, int] = field(default_factory=dict)
    acc_loss_limit: float = 0.01
    step: int = 1
    trials: int = 0
    seed: int = 0
    baseline_accuracy: float | None = None
    loss_curve: list[tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        self.per_layer_threshold = {int(k): int(v) for k, v in self.per_layer_threshold.items()}
        if any(v < 0 for v in self.per_layer_threshold.values()):
            raise ValueError("thresholds must be >= 0")

    def threshold(self, layer_id: int) -> int:
        return self.per_layer_threshold.get(layer_id, 0)

    @classmethod
    def uniform(cls, g: NetworkGraph, value: int, **kw) -> "FaultToleranceProfile":
        return cls({l.id: value for l in g.weight_layers}, **kw)

    @classmethod
    def zeros(cls, g: NetworkGraph | None = None) -> "FaultToleranceProfile":
        return cls({} if g is None else {l.id: 0 for l in g.weight_layers})

    def to_dict(self) -> dict:
        return {
            "per_layer_threshold": {str(k): v for k, v in sorted(self.per_layer_threshold.items())},
            "acc_loss_limit": self.acc_loss_limit, "step": self.step, "trials": self.trials,
            "seed": self.seed, "baseline_accuracy": self.baseline_accuracy,
            "loss_curve": [list(p) for p in self.loss_curve],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FaultToleranceProfile":
        return cls(
            per_layer_threshold=d.get("per_layer_threshold", {}),
            acc_loss_limit=float(d.get("acc_loss_limit", 0.01)),
            step=int(d.get("step", 1)), trials=int(d.get("trials", 0)), seed=int(d.get("seed", 0)),
            baseline_accuracy=d.get("baseline_accuracy"),
            loss_curve=[(int(f), float(l)) for f, l in d.get("loss_curve", [])],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class Decision(str, enum.Enum):
    KEEP = "KeepConfig"
    RETIRE_ALL = "RetireAll"


def assess(counts: Mapping[int, int] | FaultLedger, profile: FaultToleranceProfile) -> Decision:
    """Retire everything once any layer carries more faults than it tolerates."""
    if isinstance(counts, FaultLedger):
        counts = counts.per_layer_counts
    for lid, n in counts.items():
        if n > profile.threshold(lid):
            return Decision.RETIRE_ALL
    return Decision.KEEP


class Evaluator(Protocol):
    layer_ids: list[int]
    max_faults: int

    def evaluate(self, fault_counts: Mapping[int, int], seed: int) -> float: ...


def stuck_at(q: np.ndarray, idx: np.ndarray, group: np.ndarray, value: np.ndarray, cell_bits: int = 2) -> None:
    """Force the ``cell_bits``-wide slice ``group`` of int8 weights to ``value``."""
    u = q.reshape(-1).view(np.uint8)
    shift = (group * cell_bits).astype(np.uint8)
    mask = (((1 << cell_bits) - 1) << shift).astype(np.uint8)
    for i, m, s, v in zip(idx, mask, shift, value):
        u[i] = (u[i] & ~m) | ((np.uint8(v) << s) & m)


class ToyEvaluator:
    """Small quantised MLP on a synthetic classification task.

    ``evaluate`` injects stuck-at faults into random weights and random cell
    groups per layer and returns test accuracy. With no faults it returns the
    quantised baseline accuracy exactly.
    """

    def __init__(self, hidden=(32, 32), n_samples: int = 3000, n_features: int = 16,
                 n_classes: int = 4, seed: int = 0, weight_bits: int = 8, cell_bits: int = 2):
        from sklearn.datasets import make_classification
        from sklearn.exceptions import ConvergenceWarning
        from sklearn.model_selection import train_test_split
        from sklearn.neural_network import MLPClassifier

        if weight_bits != 8:
            raise ValueError("toy evaluator quantises to int8")
        self.cell_bits = cell_bits
        self.groups = weight_bits // cell_bits
        X, y = make_classification(
            n_samples=n_samples, n_features=n_features, n_informative=n_features // 2,
            n_redundant=0, n_classes=n_classes, n_clusters_per_class=1, class_sep=2.0,
            random_state=seed,
        )
        X_tr, self.X_test, y_tr, self.y_test = train_test_split(X, y, test_size=0.5, random_state=seed)
        mlp = MLPClassifier(hidden_layer_sizes=hidden, random_state=seed, max_iter=500)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            mlp.fit(X_tr, y_tr)
        self.scales = [float(np.abs(w).max()) / 127.0 for w in mlp.coefs_]
        self.qweights = [np.clip(np.rint(w / s), -127, 127).astype(np.int8)
                         for w, s in zip(mlp.coefs_, self.scales)]
        self.biases = [b.copy() for b in mlp.intercepts_]
        self.layer_ids = list(range(len(self.qweights)))
        self.max_faults = min(w.size for w in self.qweights)
        self.baseline_accuracy = self._accuracy(self.qweights)

    def _accuracy(self, qweights) -> float:
        h = self.X_test
        last = len(qweights) - 1
        for i, (q, s, b) in enumerate(zip(qweights, self.scales, self.biases)):
            h = h @ (q.astype(np.float64) * s) + b
            if i < last:
                h = np.maximum(h, 0.0)
        return float(np.mean(h.argmax(axis=1) == self.y_test))

    def evaluate(self, fault_counts: Mapping[int, int], seed: int) -> float:
        gen = np.random.default_rng(seed)
        qs = [q.copy() for q in self.qweights]
        for lid in self.layer_ids:
            n = int(fault_counts.get(lid, 0))
            if n <= 0:
                continue
            q = qs[lid]
            idx = gen.choice(q.size, size=min(n, q.size), replace=False)
            group = gen.integers(0, self.groups, size=idx.size)
            value = gen.integers(0, 1 << self.cell_bits, size=idx.size)
            stuck_at(q, idx, group, value, self.cell_bits)
        return self._accuracy(qs)


def trial_seed(seed: int, faults: int, trial: int) -> int:
    return int(rng.hash_keys(seed, rng.TAG_FAULT_INJECT, np.array([faults]), np.array([trial]))[0])


def mean_loss(ev: Evaluator, baseline: float, faults: int, trials: int, seed: int) -> float:
    counts = {lid: faults for lid in ev.layer_ids}
    accs = [ev.evaluate(counts, trial_seed(seed, faults, t)) for t in range(trials)]
    return float(baseline - np.mean(accs))


def estimate_thresholds(g: NetworkGraph, ev: Evaluator, limit: float = 0.01, step: int = 1,
                        trials: int = 32, seed: int = 0, max_faults: int | None = None) -> FaultToleranceProfile:
    """Raise the per-layer fault count uniformly until mean accuracy loss
    exceeds ``limit``; the last count that stayed within it is the threshold."""
    if step < 1 or trials < 1:
        raise ValueError("step and trials must be >= 1")
    baseline = ev.evaluate({lid: 0 for lid in ev.layer_ids}, trial_seed(seed, 0, 0))
    if baseline is None or not np.isfinite(baseline):
        raise ValueError("evaluator returned no baseline accuracy")
    upper = ev.max_faults if max_faults is None else max_faults
    best, curve, f = 0, [], 0
    while f <= upper:
        loss = mean_loss(ev, baseline, f, trials, seed)
        curve.append((f, loss))
        if loss > limit:
            break
        best = f
        f += step
    return FaultToleranceProfile(
        {l.id: best for l in g.weight_layers}, acc_loss_limit=limit, step=step, trials=trials,
        seed=seed, baseline_accuracy=baseline, loss_curve=curve,
    )
