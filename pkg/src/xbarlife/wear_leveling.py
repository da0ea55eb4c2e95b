"""Crossbar-level wear leveling and PE-row usage bookkeeping.

Two remappings act on every weight-write event:

* bit-group rotation: the cell holding bit group ``g`` moves one position
  down (mod the number of groups) per write epoch, so the LSB group that
  sits in cell 0 at epoch 0 sits in cell ``groups - 1`` at epoch 1;
* row shift: logical row ``r`` lands on physical row ``(epoch + r) mod R``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import rng

DEFAULT_UPDATE_PROB = (0.9, 0.6, 0.4, 0.2)


@dataclass(frozen=True)
class WlPolicy:
    bit_rotation: bool = False
    row_shift: bool = False
    wear_aware_binding: bool = False
    # LSB group first
    update_prob: tuple[float, ...] = DEFAULT_UPDATE_PROB

    def __post_init__(self):
        object.__setattr__(self, "update_prob", tuple(float(p) for p in self.update_prob))
        if not self.update_prob:
            raise ValueError("update_prob must not be empty")
        if any(not 0.0 <= p <= 1.0 for p in self.update_prob):
            raise ValueError("update probabilities must lie in [0, 1]")

    @classmethod
    def all_on(cls, update_prob=DEFAULT_UPDATE_PROB) -> "WlPolicy":
        return cls(True, True, True, update_prob)

    @property
    def enabled(self) -> bool:
        return self.bit_rotation or self.row_shift or self.wear_aware_binding

    @property
    def deterministic(self) -> bool:
        return all(p in (0.0, 1.0) for p in self.update_prob)

    def check_groups(self, groups: int) -> None:
        if len(self.update_prob) != groups:
            raise ValueError(
                f"update_prob has {len(self.update_prob)} entries, weights use {groups} cells"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["update_prob"] = list(self.update_prob)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WlPolicy":
        return cls(**{**d, "update_prob": tuple(d.get("update_prob", DEFAULT_UPDATE_PROB))})


def bit_group_cell(inference_idx, group_idx, groups: int, enabled: bool = True):
    """Physical cell offset (within a weight's cell group) of bit group ``group_idx``."""
    if np.any(np.asarray(group_idx) >= groups) or np.any(np.asarray(group_idx) < 0):
        raise IndexError("group index out of range")
    if not enabled:
        return group_idx
    return (group_idx - inference_idx) % groups


def start_row(inference_idx, rows_used: int, xbar_rows: int, enabled: bool = True):
    if rows_used > xbar_rows:
        raise ValueError(f"rows_used={rows_used} exceeds crossbar rows {xbar_rows}")
    if not enabled:
        return 0 * inference_idx
    return inference_idx % xbar_rows


def physical_row(logical_row, start, xbar_rows: int):
    return (start + logical_row) % xbar_rows


def logical_row(phys_row, start, xbar_rows: int):
    return (phys_row - start) % xbar_rows


def logical_group(cell_offset, inference_idx, groups: int, enabled: bool = True):
    """Inverse of :func:`bit_group_cell`: which bit group a cell holds; the
    readout order follows this mapping."""
    if not enabled:
        return cell_offset
    return (cell_offset + inference_idx) % groups


def group_update_draws(inference_idx, weight_idx, group_idx, seed: int) -> np.ndarray:
    return rng.uniform(seed, rng.TAG_GROUP_UPDATE, inference_idx, weight_idx, group_idx)


def sample_group_update(inference_idx: int, weight_idx: int, group_idx: int,
                        policy: WlPolicy, seed: int) -> bool:
    """Whether bit group ``group_idx`` of a weight changes at this write epoch."""
    p = policy.update_prob[group_idx]
    if p >= 1.0:
        return True
    if p <= 0.0:
        return False
    u = group_update_draws(np.array([inference_idx]), np.array([weight_idx]), np.array([group_idx]), seed)
    return bool(u[0] < p)


def update_mask(inference_idx, weight_idx, group_idx, prob: np.ndarray, seed: int) -> np.ndarray:
    """Vectorised :func:`sample_group_update`; ``prob`` is indexed by group."""
    p = np.asarray(prob)[group_idx]
    return group_update_draws(inference_idx, weight_idx, group_idx, seed) < p


def update_pe_row_counters(wear, plan, inferences_executed: int):
    """Request-stage update: every PE row used by ``plan`` gains the inferences
    executed under it."""
    if inferences_executed < 0:
        raise ValueError("inferences_executed must be >= 0")
    if inferences_executed:
        wear.add(plan.pe_rows_used(), inferences_executed)
    return wear
