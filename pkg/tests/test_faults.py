import json
import random

import numpy as np
import pytest

from xbarlife.arch import AcceleratorConfig, CellAddress, CrossbarState
from xbarlife.faults import (Decision, FaultLedger, FaultToleranceProfile, affected_layers, assess,
                             estimate_thresholds, mean_loss, stuck_at, trial_seed)
from xbarlife.scheduler import BindingPlan, ColumnRange, LayerBinding, bind
from xbarlife.workload import Layer, LayerKind, build_encoder_block, chain


def _binding(lid, apu, cols):
    return LayerBinding(lid, ((apu[0], apu[1]),), (ColumnRange(apu, tuple(cols), 0, 8, 0),),
                        1, 1, len(cols) // 4, 4, 8, len(cols) // 4)


def shared_plan():
    # two layers time-share columns 0..7 of one crossbar
    return BindingPlan({0: _binding(0, (0, 0, 0), range(8)), 5: _binding(5, (0, 0, 0), range(4, 12))})


def test_first_fault_pauses_and_duplicates_ignored():
    led = FaultLedger()
    a = CellAddress(0, 0, 0, 1, 2)
    n = led.detect_on_write([a], 10)
    assert len(led) == 1 and n.pause
    n = led.detect_on_write([a], 11)
    assert len(led) == 1 and not n.pause


def test_simultaneous_faults_single_pause():
    led = FaultLedger()
    n = led.detect_on_write([CellAddress(0, 0, 0, 3, c) for c in range(3)], 4)
    assert len(led) == 3 and len(n.new) == 3 and n.pause is True


def test_time_shared_column_hits_both_layers():
    assert affected_layers(CellAddress(0, 0, 0, 2, 5), shared_plan()) == [(0, 1), (5, 1)]
    assert affected_layers(CellAddress(0, 0, 0, 2, 1), shared_plan()) == [(0, 1)]
    assert affected_layers(CellAddress(0, 0, 0, 2, 20), shared_plan()) == []
    assert affected_layers(CellAddress(1, 0, 0, 2, 5), shared_plan()) == []


def test_two_faults_one_layer_count_two():
    led = FaultLedger()
    led.detect_on_write([CellAddress(0, 0, 0, 0, 1), CellAddress(0, 0, 0, 7, 2)], 0, shared_plan())
    assert led.per_layer_counts == {0: 2}


def test_assess_strict_threshold():
    prof = FaultToleranceProfile({0: 10})
    assert assess({0: 11}, prof) is Decision.RETIRE_ALL
    assert assess({0: 10}, prof) is Decision.KEEP
    assert assess({0: 1}, FaultToleranceProfile.zeros()) is Decision.RETIRE_ALL


def test_assess_order_independent():
    faults = [CellAddress(0, 0, 0, r, c) for r in range(3) for c in (1, 5, 9)]
    prof = FaultToleranceProfile({0: 5, 5: 5})
    out = set()
    for s in range(5):
        random.Random(s).shuffle(faults)
        led = FaultLedger()
        for f in faults:
            led.detect_on_write([f], 0, shared_plan())
        out.add((tuple(sorted(led.per_layer_counts.items())), assess(led, prof)))
    assert len(out) == 1


def test_retire_and_rebind_clears_counts():
    cfg = AcceleratorConfig.scaled()
    st = CrossbarState(cfg, cfg.endurance_model(0))
    g = build_encoder_block(16, 32, 2, 8)
    plan = bind(g, cfg, st)
    b = next(iter(plan.bindings.values()))
    cr = b.column_ranges[0]
    led = FaultLedger()
    led.detect_on_write([CellAddress(*cr.apu, 0, cr.columns[0]), CellAddress(*cr.apu, 1, cr.columns[3])], 5, plan)
    assert sum(led.per_layer_counts.values()) >= 2
    st.retire_columns(led.retire_all())
    assert all(f.retired for f in led.faults) and len(led) == 2
    assert led.recount(bind(g, cfg, st, generation=1)) == {}


def test_profile_json_round_trip():
    p = FaultToleranceProfile({1: 4, 3: 2}, 0.02, step=2, trials=8, seed=3, baseline_accuracy=0.9,
                              loss_curve=[(0, 0.0), (2, 0.01)])
    assert FaultToleranceProfile.from_dict(json.loads(p.to_json())) == p
    with pytest.raises(ValueError):
        FaultToleranceProfile({0: -1})


def test_stuck_at_forces_one_group():
    q = np.array([0, -1, 0x55], dtype=np.int8)
    stuck_at(q, np.array([0, 1, 2]), np.array([0, 3, 1]), np.array([3, 0, 0]))
    assert q.view(np.uint8).tolist() == [0b11, 0b00111111, 0b01010001]


def test_zero_faults_give_baseline_exactly(toy_evaluator):
    ev = toy_evaluator
    assert ev.evaluate({}, 123) == ev.baseline_accuracy
    assert ev.evaluate({i: 0 for i in ev.layer_ids}, 9) == ev.baseline_accuracy
    assert ev.baseline_accuracy > 0.9


def test_faults_degrade_accuracy(toy_evaluator):
    ev = toy_evaluator
    many = np.mean([ev.evaluate({i: 100 for i in ev.layer_ids}, s) for s in range(8)])
    assert many < ev.baseline_accuracy


def test_limit_one_hits_search_bound(toy_evaluator):
    g = build_encoder_block(8, 16, 2, 4)
    p = estimate_thresholds(g, toy_evaluator, limit=1.0, step=16, trials=2, seed=0, max_faults=64)
    assert set(p.per_layer_threshold.values()) == {64}


def test_estimator_deterministic_and_uniform(toy_evaluator):
    g = build_encoder_block(8, 16, 2, 4)
    a = estimate_thresholds(g, toy_evaluator, 0.01, 2, 8, seed=5)
    b = estimate_thresholds(g, toy_evaluator, 0.01, 2, 8, seed=5)
    assert a == b
    assert set(a.per_layer_threshold) == {l.id for l in g.weight_layers}
    assert len(set(a.per_layer_threshold.values())) == 1
    assert a.loss_curve[0] == (0, 0.0)


def test_estimator_rejects_bad_args(toy_evaluator):
    g = chain([Layer(0, LayerKind.STATIC_FC, 4, 4, 1)])
    with pytest.raises(ValueError):
        estimate_thresholds(g, toy_evaluator, step=0)
    with pytest.raises(ValueError):
        estimate_thresholds(g, toy_evaluator, trials=0)


def test_estimator_needs_baseline():
    class Broken:
        layer_ids = [0]
        max_faults = 4

        def evaluate(self, counts, seed):
            return float("nan")

    with pytest.raises(ValueError):
        estimate_thresholds(chain([Layer(0, LayerKind.STATIC_FC, 4, 4, 1)]), Broken())


def test_trial_seeds_distinct():
    seeds = {trial_seed(0, f, t) for f in range(4) for t in range(8)}
    assert len(seeds) == 32


def test_mean_loss_zero_at_zero(toy_evaluator):
    assert mean_loss(toy_evaluator, toy_evaluator.baseline_accuracy, 0, 4, 1) == 0.0
