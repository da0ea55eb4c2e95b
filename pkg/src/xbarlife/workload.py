"""DNN workloads as layer dependency graphs.

Convolutions are expressed in their im2col-equivalent FC shape: ``in_dim`` is
the kernel volume and ``tokens`` the number of windows.
"""

from __future__ import annotations

import enum
import heapq
import json
from dataclasses import asdict, dataclass, field
from graphlib import CycleError, TopologicalSorter
from typing import Iterable


class LayerKind(str, enum.Enum):
    STATIC_FC = "StaticFC"
    STATIC_CONV = "StaticConv"
    DYNAMIC_MATMUL = "DynamicMatMul"
    ELEMENTWISE = "Elementwise"

    @property
    def is_static(self) -> bool:
        return self in (LayerKind.STATIC_FC, LayerKind.STATIC_CONV)

    @property
    def has_weights(self) -> bool:
        return self is not LayerKind.ELEMENTWISE


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Layer:
    id: int
    kind: LayerKind
    in_dim: int
    out_dim: int
    tokens: int
    weight_bits: int = 8
    transposed_operand: bool = False
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d


@dataclass(frozen=True)
class NetworkGraph:
    layers: tuple[Layer, ...]
    edges: tuple[tuple[int, int], ...]
    name: str = "network"
    _by_id: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "edges", tuple((int(p), int(c)) for p, c in self.edges))
        object.__setattr__(self, "_by_id", {l.id: l for l in self.layers})

    def layer(self, layer_id: int) -> Layer:
        return self._by_id[layer_id]

    def producers(self, layer_id: int) -> list[int]:
        return [p for p, c in self.edges if c == layer_id]

    def consumers(self, layer_id: int) -> list[int]:
        return [c for p, c in self.edges if p == layer_id]

    def topological_order(self) -> list[Layer]:
        """Kahn order, ties broken by position in ``layers`` (stable)."""
        pos = {l.id: i for i, l in enumerate(self.layers)}
        indeg = {l.id: 0 for l in self.layers}
        for _, c in self.edges:
            indeg[c] += 1
        ready = [pos[i] for i, d in indeg.items() if d == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            lid = self.layers[heapq.heappop(ready)].id
            order.append(self._by_id[lid])
            for c in self.consumers(lid):
                indeg[c] -= 1
                if indeg[c] == 0:
                    heapq.heappush(ready, pos[c])
        if len(order) != len(self.layers):
            raise GraphError("graph has a cycle")
        return order

    @property
    def weight_layers(self) -> list[Layer]:
        return [l for l in self.layers if l.kind.has_weights]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "layers": [
                {
                    "id": l.id,
                    "kind": l.kind.value,
                    "in_dim": l.in_dim,
                    "out_dim": l.out_dim,
                    "tokens": l.tokens,
                    "weight_bits": l.weight_bits,
                    "transposed_operand": l.transposed_operand,
                    **({"name": l.name} if l.name else {}),
                }
                for l in self.layers
            ],
            "edges": [[p, c] for p, c in self.edges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkGraph":
        layers = [
            Layer(
                id=int(x["id"]),
                kind=LayerKind(x["kind"]),
                in_dim=int(x["in_dim"]),
                out_dim=int(x["out_dim"]),
                tokens=int(x.get("tokens", x.get("tokens_or_windows", 1))),
                weight_bits=int(x.get("weight_bits", 8)),
                transposed_operand=bool(x.get("transposed_operand", False)),
                name=x.get("name", ""),
            )
            for x in d["layers"]
        ]
        return cls(tuple(layers), tuple((p, c) for p, c in d.get("edges", [])), d.get("name", "network"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "NetworkGraph":
        return cls.from_dict(json.loads(text))


def _operand_roles(layer: Layer, w: Layer, a: Layer) -> bool:
    """True if ``w`` can supply the crossbar operand and ``a`` the streamed one."""
    if layer.transposed_operand:
        w_ok = w.tokens == layer.out_dim and w.out_dim % layer.in_dim == 0
    else:
        w_ok = w.tokens == layer.in_dim and w.out_dim % layer.out_dim == 0
    a_ok = a.tokens == layer.tokens and a.out_dim % layer.in_dim == 0
    return w_ok and a_ok


def dynamic_operands(g: NetworkGraph, layer_id: int) -> tuple[int, int]:
    """Return ``(weight_producer, activation_producer)`` of a dynamic matmul.

    When shapes allow either assignment, the second producer edge is taken as
    the crossbar operand.
    """
    layer = g.layer(layer_id)
    prods = g.producers(layer_id)
    if len(prods) != 2:
        raise GraphError(f"dynamic matmul {layer_id} needs 2 producers, has {len(prods)}")
    p0, p1 = (g.layer(p) for p in prods)
    if _operand_roles(layer, p1, p0):
        return p1.id, p0.id
    if _operand_roles(layer, p0, p1):
        return p0.id, p1.id
    raise GraphError(
        f"dynamic matmul {layer_id} operand dims do not match producers {p0.id} and {p1.id}"
    )


def validate_graph(g: NetworkGraph) -> list[str]:
    """Collect every invariant violation; an empty list means the graph is valid."""
    problems: list[str] = []
    ids = [l.id for l in g.layers]
    if len(set(ids)) != len(ids):
        problems.append("duplicate layer ids")
    known = set(ids)
    for l in g.layers:
        for fld in ("in_dim", "out_dim", "tokens"):
            if getattr(l, fld) < 1:
                problems.append(f"layer {l.id}: {fld} must be >= 1")
        if l.weight_bits < 1:
            problems.append(f"layer {l.id}: weight_bits must be >= 1")
    for p, c in g.edges:
        if p not in known or c not in known:
            problems.append(f"edge ({p}, {c}) references an unknown layer")
    if any("unknown layer" in p for p in problems):
        return problems
    try:
        TopologicalSorter({l.id: g.producers(l.id) for l in g.layers}).prepare()
    except CycleError as exc:
        cyc = exc.args[1] if len(exc.args) > 1 else []
        problems.append(f"not a DAG: cycle through layers {list(cyc)}")
    for l in g.layers:
        if l.kind is not LayerKind.DYNAMIC_MATMUL:
            continue
        prods = g.producers(l.id)
        if len(prods) != 2 or len(set(prods)) != 2:
            problems.append(
                f"dynamic matmul {l.id} must have exactly one producer per operand, got {prods}"
            )
            continue
        try:
            dynamic_operands(g, l.id)
        except GraphError:
            problems.append(
                f"dynamic matmul {l.id}: operand dims mismatch with layers {prods[0]} and {prods[1]}"
            )
    return problems


def weight_footprint(layer: Layer, cell_bits: int) -> int:
    """ReRAM cells needed to hold the layer's weights."""
    if layer.weight_bits % cell_bits:
        raise ValueError(f"cell_bits={cell_bits} does not divide weight_bits={layer.weight_bits}")
    if not layer.kind.has_weights:
        return 0
    return layer.in_dim * layer.out_dim * (layer.weight_bits // cell_bits)


class _Builder:
    def __init__(self, name: str, weight_bits: int = 8):
        self.name = name
        self.weight_bits = weight_bits
        self.layers: list[Layer] = []
        self.edges: list[tuple[int, int]] = []

    def add(self, kind, in_dim, out_dim, tokens, name, inputs=(), transposed=False) -> int:
        lid = len(self.layers)
        self.layers.append(
            Layer(lid, LayerKind(kind), in_dim, out_dim, tokens, self.weight_bits, transposed, name)
        )
        self.edges.extend((p, lid) for p in inputs)
        return lid

    def graph(self) -> NetworkGraph:
        return NetworkGraph(tuple(self.layers), tuple(self.edges), self.name)


def _attention_block(b: _Builder, prefix, d_model, d_ff, heads, seq_len, x=None) -> int:
    if min(d_model, d_ff, heads, seq_len) < 1:
        raise GraphError("block dimensions must all be >= 1")
    if d_model % heads:
        raise GraphError(f"d_model={d_model} is not divisible by heads={heads}")
    d_head = d_model // heads
    fc, mm, ew = LayerKind.STATIC_FC, LayerKind.DYNAMIC_MATMUL, LayerKind.ELEMENTWISE
    src = () if x is None else (x,)
    q = b.add(fc, d_model, d_model, seq_len, f"{prefix}q", src)
    k = b.add(fc, d_model, d_model, seq_len, f"{prefix}k", src)
    v = b.add(fc, d_model, d_model, seq_len, f"{prefix}v", src)
    head_outs = []
    for h in range(heads):
        # crossbar operand is K_h^T: d_head rows, one column group per key
        s = b.add(mm, d_head, seq_len, seq_len, f"{prefix}score{h}", (q, k), transposed=True)
        # softmax, scaling and dropout share one zero-crossbar-cost stage
        p = b.add(ew, seq_len, seq_len, seq_len, f"{prefix}softmax{h}", (s,))
        head_outs.append(b.add(mm, seq_len, d_head, seq_len, f"{prefix}attnv{h}", (p, v)))
    o = b.add(fc, d_model, d_model, seq_len, f"{prefix}out", head_outs)
    n1 = b.add(ew, d_model, d_model, seq_len, f"{prefix}addnorm1", (o,) + src)
    f1 = b.add(fc, d_model, d_ff, seq_len, f"{prefix}ffn1", (n1,))
    act = b.add(ew, d_ff, d_ff, seq_len, f"{prefix}act", (f1,))
    f2 = b.add(fc, d_ff, d_model, seq_len, f"{prefix}ffn2", (act,))
    return b.add(ew, d_model, d_model, seq_len, f"{prefix}addnorm2", (f2, n1))


def build_encoder_block(d_model: int, d_ff: int, heads: int, seq_len: int, weight_bits: int = 8) -> NetworkGraph:
    """One encoder block: Q/K/V FCs, per-head score and attention-value matmuls,
    output FC and a two-layer FFN, with softmax/norm/activation stages between."""
    b = _Builder("encoder", weight_bits)
    _attention_block(b, "", d_model, d_ff, heads, seq_len)
    return b.graph()


def build_encoder_stack(
    blocks: int, d_model: int, d_ff: int, heads: int, seq_len: int,
    weight_bits: int = 8, name: str = "encoder_stack",
) -> NetworkGraph:
    if blocks < 1:
        raise GraphError("blocks must be >= 1")
    b = _Builder(name, weight_bits)
    x = None
    for i in range(blocks):
        x = _attention_block(b, f"b{i}.", d_model, d_ff, heads, seq_len, x)
    return b.graph()


def build_decoder_stack(
    blocks: int, d_model: int, d_ff: int, heads: int, seq_len: int, weight_bits: int = 8,
) -> NetworkGraph:
    # Causal masking changes values, not shapes or dependencies.
    return build_encoder_stack(blocks, d_model, d_ff, heads, seq_len, weight_bits, name="decoder_stack")


def build_workload(directive: dict) -> NetworkGraph:
    """Build a graph from a builder directive or an inline graph dict."""
    if "layers" in directive:
        return NetworkGraph.from_dict(directive)
    if "graph" in directive:
        return NetworkGraph.from_dict(directive["graph"])
    kind = directive.get("builder", "encoder")
    args = {k: int(directive[k]) for k in ("d_model", "d_ff", "heads", "seq_len")}
    wb = int(directive.get("weight_bits", 8))
    blocks = int(directive.get("blocks", 1))
    if kind == "encoder":
        return build_encoder_stack(blocks, weight_bits=wb, **args)
    if kind == "decoder":
        return build_decoder_stack(blocks, weight_bits=wb, **args)
    raise GraphError(f"unknown workload builder {kind!r}")


def chain(layers: Iterable[Layer], name: str = "chain") -> NetworkGraph:
    """Linear graph over ``layers`` in the given order."""
    layers = tuple(layers)
    edges = tuple((a.id, b.id) for a, b in zip(layers, layers[1:]))
    return NetworkGraph(layers, edges, name)
