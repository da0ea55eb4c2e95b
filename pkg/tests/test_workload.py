import pytest
from hypothesis import given, strategies as st

from xbarlife.workload import (GraphError, Layer, LayerKind, NetworkGraph, build_encoder_block,
                               build_encoder_stack, build_workload, chain, dynamic_operands,
                               validate_graph, weight_footprint)


def kinds(g):
    out = {}
    for l in g.layers:
        out[l.kind] = out.get(l.kind, 0) + 1
    return out


def test_small_block_layer_inventory():
    g = build_encoder_block(d_model=8, d_ff=16, heads=2, seq_len=4)
    k = kinds(g)
    assert k[LayerKind.STATIC_FC] == 6
    # two matmul kinds (score, attention x V), emitted once per head
    assert k[LayerKind.DYNAMIC_MATMUL] == 2 * 2
    scores = [l for l in g.layers if l.kind is LayerKind.DYNAMIC_MATMUL and l.transposed_operand]
    assert len(scores) == 2
    for s in scores:
        assert (s.tokens, s.out_dim) == (4, 4)
    assert validate_graph(g) == []


def test_score_takes_key_as_crossbar_operand():
    g = build_encoder_block(8, 16, 2, 4)
    by_name = {l.name: l.id for l in g.layers}
    w, a = dynamic_operands(g, by_name["score0"])
    assert (w, a) == (by_name["k"], by_name["q"])
    w, a = dynamic_operands(g, by_name["attnv0"])
    assert (w, a) == (by_name["v"], by_name["softmax0"])


def test_minimal_block_is_valid():
    assert validate_graph(build_encoder_block(1, 1, 1, 1)) == []


def test_heads_must_divide_model_width():
    with pytest.raises(GraphError):
        build_encoder_block(10, 16, 3, 4)


def test_twelve_block_stack_scales_linearly():
    one = build_encoder_block(8, 16, 2, 4)
    twelve = build_encoder_stack(12, 8, 16, 2, 4)
    assert len(twelve.layers) == 12 * len(one.layers)
    assert kinds(twelve)[LayerKind.STATIC_FC] == 72
    assert validate_graph(twelve) == []


def test_cycle_reported():
    a = Layer(0, LayerKind.STATIC_FC, 4, 4, 1)
    b = Layer(1, LayerKind.STATIC_FC, 4, 4, 1)
    g = NetworkGraph((a, b), ((0, 1), (1, 0)))
    errs = validate_graph(g)
    assert any("not a DAG" in e for e in errs)
    with pytest.raises(GraphError):
        g.topological_order()


def test_matmul_dim_mismatch_names_both_producers():
    g = build_encoder_block(8, 16, 2, 4)
    layers = list(g.layers)
    sid = next(l.id for l in layers if l.name == "score0")
    layers[sid] = Layer(sid, LayerKind.DYNAMIC_MATMUL, 4, 5, 4, transposed_operand=True, name="score0")
    bad = NetworkGraph(tuple(layers), g.edges)
    errs = validate_graph(bad)
    prods = bad.producers(sid)
    assert any(str(prods[0]) in e and str(prods[1]) in e and "mismatch" in e for e in errs)


def test_topological_order_stable():
    g1 = build_encoder_stack(2, 16, 32, 4, 8)
    g2 = build_encoder_stack(2, 16, 32, 4, 8)
    assert [l.id for l in g1.topological_order()] == [l.id for l in g2.topological_order()]
    pos = {l.id: i for i, l in enumerate(g1.topological_order())}
    assert all(pos[p] < pos[c] for p, c in g1.edges)


def test_footprint_examples():
    assert weight_footprint(Layer(0, LayerKind.STATIC_FC, 512, 64, 1), 2) == 131072
    assert weight_footprint(Layer(0, LayerKind.ELEMENTWISE, 512, 512, 1), 2) == 0
    assert weight_footprint(Layer(0, LayerKind.STATIC_FC, 1, 1, 1), 2) == 4
    with pytest.raises(ValueError):
        weight_footprint(Layer(0, LayerKind.STATIC_FC, 4, 4, 1), 3)


@given(st.integers(1, 300), st.integers(1, 300), st.sampled_from([1, 2, 4]))
def test_footprint_linear(i, o, cb):
    l = Layer(0, LayerKind.STATIC_FC, i, o, 1)
    assert weight_footprint(l, cb) == i * o * (8 // cb)


def test_json_round_trip():
    g = build_encoder_block(8, 16, 2, 4)
    assert NetworkGraph.from_json(g.to_json()) == g


def test_build_workload_directive_and_inline():
    g = build_workload({"builder": "encoder", "blocks": 2, "d_model": 8, "d_ff": 16, "heads": 2, "seq_len": 4})
    assert len(g.layers) == 2 * len(build_encoder_block(8, 16, 2, 4).layers)
    inline = build_workload(chain([Layer(0, LayerKind.STATIC_FC, 3, 3, 1)]).to_dict())
    assert len(inline.layers) == 1
    with pytest.raises(GraphError):
        build_workload({"builder": "rnn", "d_model": 1, "d_ff": 1, "heads": 1, "seq_len": 1})
