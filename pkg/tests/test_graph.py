import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tilegraph.graph import (
    Graph,
    Kernel,
    Net,
    Port,
    dumps_graph,
    engine_demand,
    kernel_count,
    load_graph,
    dump_graph,
    loads_graph,
    validate_graph,
)
from tilegraph.ops import GemmParams, build_gemm_subgraph, graph_from_block

sys.path.insert(0, __file__.rsplit("/", 1)[0])
from graphgen import random_chain  # noqa: E402


def single_gemm() -> Graph:
    return graph_from_block(build_gemm_subgraph(GemmParams(M=1, K=8, N=8), sid="G"))


def codes(g):
    return {f.code for f in validate_graph(g)}


def test_single_gemm_is_valid():
    g = single_gemm()
    assert kernel_count(g) == engine_demand(g) == 1
    assert validate_graph(g) == []
    assert {n.kind for n in g.nets.values()} == {"external_in", "external_out"}


def test_local_memory_overflow():
    g = single_gemm()
    k = next(iter(g.kernels.values()))
    k.weight_bytes, k.scratch_bytes = 70000, 0
    assert "local-memory" in codes(g)


def test_cycle_detected():
    g = Graph()
    for kid in "ab":
        g.add_kernel(Kernel(kid, "silu", inputs={"in": (4,)}, out_shape=(4,)))
    g.add_net(Net("a->b", "stream", [Port("a", "out")], [Port("b", "in.0")], 8, 1, (4,)))
    g.add_net(Net("b->a", "stream", [Port("b", "out")], [Port("a", "in.0")], 8, 1, (4,)))
    assert "cycle" in codes(g)


def test_empty_graph():
    assert engine_demand(Graph()) == 0
    assert validate_graph(Graph()) == []


def test_net_invariants():
    g = single_gemm()
    kid = next(iter(g.kernels))
    g.add_net(Net("bad", "cascade", [Port(kid, "out")], [], 0))
    found = codes(g)
    assert {"cascade-fanout", "payload"} <= found


def test_external_in_with_producer_flagged():
    g = single_gemm()
    n = next(n for n in g.nets.values() if n.kind == "external_in")
    n.producers = [Port(next(iter(g.kernels)), "out")]
    assert "external-in" in codes(g)


def test_duplicate_ids_rejected():
    g = single_gemm()
    with pytest.raises(ValueError):
        g.add_kernel(next(iter(g.kernels.values())))
    with pytest.raises(ValueError):
        g.add_kernel(Kernel("x", "softmax"))


def test_file_round_trip(tmp_path):
    g = single_gemm()
    dump_graph(g, tmp_path / "g.json", with_constants=True)
    h = load_graph(tmp_path / "g.json")
    assert dumps_graph(h) == dumps_graph(g)
    for k, v in g.constants.items():
        assert np.array_equal(h.constants[k], v)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_serialization_round_trip(seed):
    g, _ = random_chain(seed)
    text = dumps_graph(g)
    h = loads_graph(text)
    assert dumps_graph(h) == text
    assert h.topo_order() == g.topo_order()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_topological_order_respects_edges(seed):
    g, _ = random_chain(seed)
    pos = {k: i for i, k in enumerate(g.topo_order())}
    assert len(pos) == len(g.kernels)
    for src, dsts in g.kernel_edges().items():
        for d in dsts:
            assert pos[src] < pos[d]
