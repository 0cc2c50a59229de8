import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tilegraph.arch import ArchSpec
from tilegraph.cronet import build_cronet
from tilegraph.cronet.model import layer_infos, load_config
from tilegraph.fusion import fuse_l1
from tilegraph.numerics import round_to, silu
from tilegraph.ops import (
    ConvParams,
    GemmParams,
    PartitionError,
    PoolParams,
    RnnParams,
    build_conv_subgraph,
    build_gemm_subgraph,
    build_rnn_subgraph,
    build_simple_subgraph,
    graph_from_block,
)
from tilegraph.ops.reference import adaptive_avgpool_ref, conv_ref, gemm_ref, maxpool2d_ref, rnn_ref
from tilegraph.sim import execute

sys.path.insert(0, __file__.rsplit("/", 1)[0])
from oracles import conv_loops, gemm_loops, rel_close  # noqa: E402

ARCH = ArchSpec()


def run_block(blk, feeds, etype="fp32"):
    return execute(graph_from_block(blk), feeds, etype)["y"]


def ops_of(blk):
    kinds = [k.op_kind for k in blk.kernels.values()] if isinstance(blk.kernels, dict) else [k.op_kind for k in blk.kernels]
    return kinds


def test_conv_single_kernel():
    p = ConvParams(2, (6, 6), 2, 4, (3, 3), padding=1)
    blk = build_conv_subgraph(p, ARCH, w=np.ones(p.weight_shape))
    assert len(blk.kernels) == 1


def test_conv_split_2x4_matches_reference():
    r = np.random.default_rng(3)
    p = ConvParams(2, (8, 8), 4, 8, (3, 3), padding=1, partition=(2, 4))
    w = r.standard_normal(p.weight_shape).astype(np.float32)
    blk = build_conv_subgraph(p, ARCH, w=w)
    kinds = ops_of(blk)
    assert kinds.count("conv2d") == 8 and kinds.count("adder") == 4
    x = r.standard_normal(p.input_tensor_shape).astype(np.float32)
    y = run_block(blk, {"x": x})
    assert rel_close(y, conv_ref(x, p, w), 1e-5)
    assert rel_close(y, conv_loops(x, w, padding=1), 1e-5)


@settings(max_examples=20, deadline=None)
@given(
    st.sampled_from([1, 2, 4]), st.sampled_from([1, 2, 4]), st.integers(1, 3), st.booleans(),
    st.booleans(), st.integers(0, 999),
)
def test_conv_partitions_match_reference(si, so, k, bias, act, seed):
    r = np.random.default_rng(seed)
    p = ConvParams(2, (5, 6), 4, 4, (k, k), padding=k // 2, has_bias=bias, fuse_silu=act, partition=(si, so))
    w = r.standard_normal(p.weight_shape).astype(np.float32)
    b = r.standard_normal(4).astype(np.float32) if bias else None
    x = r.standard_normal(p.input_tensor_shape).astype(np.float32)
    y = run_block(build_conv_subgraph(p, ARCH, w=w, b=b), {"x": x})
    assert rel_close(y, conv_ref(x, p, w, b), 1e-5)


def test_b2_block_has_40_kernels_and_matches():
    info = next(i for i in layer_infos(load_config("30x20")) if i.name == "B2")
    p = info.params
    r = np.random.default_rng(0)
    w = (r.standard_normal(p.weight_shape) * 0.1).astype(np.float32)
    blk = build_conv_subgraph(p, ARCH, w=w)
    assert len(blk.kernels) == 40
    x = r.standard_normal(p.input_tensor_shape).astype(np.float32)
    assert rel_close(run_block(blk, {"x": x}), conv_ref(x, p, w), 1e-5)


def test_conv_overflow_names_smallest_split():
    p = ConvParams(2, (20, 30), 64, 64, (3, 3), padding=1)
    with pytest.raises(PartitionError, match=r"smallest feasible split is \(\d+, \d+\)"):
        build_conv_subgraph(p, ARCH)


@pytest.mark.parametrize("etype", ["fp32", "bf16", "int8"])
def test_fused_silu_bit_exact(etype):
    r = np.random.default_rng(9)
    p = ConvParams(2, (6, 7), 2, 4, (3, 3), padding=1, fuse_silu=True, partition=(2, 2))
    q = ConvParams(2, (6, 7), 2, 4, (3, 3), padding=1, fuse_silu=False, partition=(2, 2))
    w = r.standard_normal(p.weight_shape).astype(np.float32)
    x = r.standard_normal(p.input_tensor_shape).astype(np.float32)
    fused = run_block(build_conv_subgraph(p, ARCH, w=w, fused=True), {"x": x}, etype)
    # the unfused form keeps silu as its own kernel; L1 folds it back
    g = graph_from_block(build_conv_subgraph(p, ARCH, w=w, fused=False))
    assert np.array_equal(execute(g, {"x": x}, etype)["y"], fused)
    assert np.array_equal(execute(fuse_l1(g), {"x": x}, etype)["y"], fused)
    if etype == "fp32":
        plain = run_block(build_conv_subgraph(q, ARCH, w=w), {"x": x}, etype)
        assert np.array_equal(silu(plain), fused)


def test_gemm_chain_without_tree():
    blk = build_gemm_subgraph(GemmParams(1, 64, 16), ARCH, w=np.ones((64, 16)))
    kinds = ops_of(blk)
    assert len(blk.kernels) == 8 and "adder" not in kinds


def test_gemm_four_clusters_three_adders():
    blk = build_gemm_subgraph(GemmParams(1, 256, 16, k_clusters=4), ARCH, w=np.ones((256, 16)))
    assert ops_of(blk).count("adder") == 3


def test_gemm_cascade_limit():
    with pytest.raises(PartitionError, match="304"):
        build_gemm_subgraph(GemmParams(1, 2432, 8), ARCH)
    blk = build_gemm_subgraph(GemmParams(1, 2432, 8, k_clusters=8), ARCH)
    assert blk.info["cascade_len"] == 38


# K=1024 is 128 tiles, beyond one or two 38-long cascades
@pytest.mark.parametrize("K,kc", [(256, 1), (256, 2), (256, 4), (256, 8), (1024, 4), (1024, 8)])
def test_gemm_cluster_invariance(K, kc):
    r = np.random.default_rng(1)
    a = r.standard_normal((1, K)).astype(np.float32)
    w = r.standard_normal((K, 200)).astype(np.float32)
    p = GemmParams(1, K, 200, k_clusters=kc)
    oracle = gemm_loops(a, w)
    blk = build_gemm_subgraph(p, ARCH, w=w)
    assert rel_close(run_block(blk, {"a": a}), oracle, 1e-5)
    assert rel_close(run_block(blk, {"a": a}, "bf16"), gemm_loops(round_to(a, "bf16"), round_to(w, "bf16")), 1e-2)
    assert rel_close(run_block(blk, {"a": a}, "bf16"), oracle, 1e-2)


def test_gemm_bias_and_epilogue():
    r = np.random.default_rng(5)
    p = GemmParams(2, 40, 12, has_bias=True, fuse_epilogue="silu")
    a, w, b = r.standard_normal((2, 40)), r.standard_normal((40, 12)), r.standard_normal(12)
    y = run_block(build_gemm_subgraph(p, ARCH, w=w, bias=b), {"a": a.astype(np.float32)})
    assert rel_close(y, gemm_ref(a.astype(np.float32), w.astype(np.float32), p, b.astype(np.float32)), 1e-5)


def test_simple_widths():
    blk = build_simple_subgraph("silu", {"shape": (4, 8)}, 1, ARCH)
    assert len(blk.kernels) == 1
    infos = {i.name: i for i in layer_infos(load_config("30x20"))}
    b3 = infos["B3"]
    assert len(build_simple_subgraph(b3.spec.op, b3.params, tuple(b3.spec.get("width")), ARCH).kernels) == 40
    g = build_cronet("30x20", ARCH, fuse=False)
    mul = next(s for s in g.subgraphs if s.id == "MUL")
    assert len(mul.kernels) == 11


@pytest.mark.parametrize("width", [1, 2, (2, 3)])
def test_maxpool_block(width):
    r = np.random.default_rng(2)
    p = PoolParams("max", 2, (8, 6), channels=4, kernel=2, stride=2, frames=2)
    x = r.standard_normal(p.input_tensor_shape).astype(np.float32)
    y = run_block(build_simple_subgraph("maxpool2d", p, width, ARCH), {"x": x})
    assert np.array_equal(y, maxpool2d_ref(x, p))


@pytest.mark.parametrize("width", [1, 4])
def test_aap_block(width):
    r = np.random.default_rng(4)
    p = PoolParams("adaptive_avg", 2, (10, 15), channels=8, out_shape=(2, 4))
    x = r.standard_normal(p.input_tensor_shape).astype(np.float32)
    y = run_block(build_simple_subgraph("aap2d", p, width, ARCH), {"x": x})
    assert rel_close(y, adaptive_avgpool_ref(x, p), 1e-6)


def test_binary_block():
    r = np.random.default_rng(6)
    a, b = r.standard_normal((2, 3, 5)).astype(np.float32), r.standard_normal((2, 3, 5)).astype(np.float32)
    blk = build_simple_subgraph("mul", {"shape": (2, 3, 5)}, (1, 3), ARCH)
    assert np.array_equal(run_block(blk, {"a": a, "b": b}), a * b)


@pytest.mark.parametrize("seq", [1, 3, 10])
def test_rnn_block(seq):
    r = np.random.default_rng(seq)
    ws = [r.standard_normal(s).astype(np.float32) * 0.3 for s in [(6, 5), (6, 6), 6, 6]]
    p = RnnParams(5, 6, seq, *ws)
    x = r.standard_normal((seq, 5)).astype(np.float32)
    y = run_block(build_rnn_subgraph(p, ARCH), {"x": x})
    assert y.shape == (1, 6)
    assert rel_close(y, rnn_ref(x, p)[-1:], 1e-5)
