"""Acceptance suite: one PASS/FAIL line per criterion.

Runs under pytest (lines are printed straight to the terminal) or as a
script: ``python tests/test_acceptance.py``.
"""

import itertools
import sys
import tempfile
import time
from decimal import Decimal

import numpy as np
import pytest

from tilegraph.arch import ArchSpec
from tilegraph.characterize import characterize
from tilegraph.cli import main as cli_main
from tilegraph.cronet import build_cronet, case_inputs, init_weights, layer_infos, load_config, make_case, reference_forward
from tilegraph.fusion import fuse_all
from tilegraph.graph import EXTERNAL, dumps_graph
from tilegraph.ops import (
    ConvParams,
    GemmParams,
    PoolParams,
    RnnParams,
    build_conv_subgraph,
    build_gemm_subgraph,
    build_rnn_subgraph,
    build_simple_subgraph,
    graph_from_block,
)
from tilegraph.ops.reference import adaptive_avgpool_ref, gemm_ref
from tilegraph.numerics import round_to
from tilegraph.place import place_custom, place_naive, route_check
from tilegraph.sim import error_metrics, estimate_latency, execute, members_latency, resource_report, run, traffic_report

sys.path.insert(0, __file__.rsplit("/", 1)[0])
from graphgen import random_chain  # noqa: E402
from oracles import aap_loops, conv_loops, gemm_loops, maxpool_loops, rel_close, rnn_step  # noqa: E402

ARCH = ArchSpec()
SIZES = ("30x10", "30x20", "60x20")
ETYPES = ("fp32", "bf16", "int8")

# published values
PARAMS = {"T1": "288", "T2": "9K", "T4": "192K", "T5": "102K", "B1": "144", "B2": "4.6K", "B5": "6.1K", "B6": "2.5K", "B7": "102K"}
TOTAL_MACS = {"30x10": 27.6e6, "30x20": 53.5e6, "60x20": 105.8e6}
TOTAL_MEM = {"30x10": 1.3e6, "30x20": 1.7e6, "60x20": 2.5e6}
ENGINES = {
    "trunk": [16, 24, 8, 23, 11],
    "branch": [5, 40, 40, 5, 28, 1, 11],
    "join": [11],
}

RESULTS: list[str] = []  # shown in the terminal summary by conftest.py


def report(num: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {title} | {detail}".rstrip()
    RESULTS.append(line)
    print(line)


def shown_as(n: int, text: str) -> bool:
    unit = {"K": 1000, "M": 10**6}.get(text[-1], 1)
    digits = Decimal(text.rstrip("KM"))
    return abs(Decimal(n) / unit - digits) <= Decimal(10) ** digits.as_tuple().exponent / 2


# --------------------------------------------------------------------------


def test_1_characterization():
    t = time.perf_counter()
    reps = {s: characterize(load_config(s)) for s in SIZES}
    dt = time.perf_counter() - t
    bad = []
    for s, r in reps.items():
        bad += [f"{s}:{l.name} params" for l in r.layers if not shown_as(l.parameter_count, PARAMS[l.name])]
        if [l.name for l in r.layers] != list(PARAMS):
            bad.append(f"{s}: rows")
        if not shown_as(r.parameter_count, "419K"):
            bad.append(f"{s}: total params")
        if abs(r.macs / TOTAL_MACS[s] - 1) > 0.10:
            bad.append(f"{s}: MACs")
        if abs(r.total_bytes / TOTAL_MEM[s] - 1) > 0.15:
            bad.append(f"{s}: memory")
    ok = not bad and dt < 1.0
    detail = ", ".join(
        f"{s} {r.parameter_count} params {r.macs / 1e6:.2f}M MACs ({r.macs / TOTAL_MACS[s] - 1:+.1%}) "
        f"{r.total_bytes / 1e6:.2f}MB ({r.total_bytes / TOTAL_MEM[s] - 1:+.1%})"
        for s, r in reps.items()
    )
    report(1, "characterization fidelity", ok, f"{detail}; {dt:.3f}s {bad or ''}")
    assert ok, bad


def test_2_resources():
    bad, dts = [], []
    for s in SIZES:
        t = time.perf_counter()
        g = build_cronet(s, ARCH)
        rep = resource_report(g, None, ARCH)
        dts.append(time.perf_counter() - t)
        per = rep["engines_per_subgraph"]
        nets = {s_.id: s_.network for s_ in g.subgraphs}
        got = {n: [per[sid] for sid in per if nets[sid] == n] for n in ENGINES}
        if got != ENGINES:
            bad.append(f"{s}: {got}")
        if (rep["engines"], rep["memtiles"], rep["gmio"]) != (223, 11, 17):
            bad.append(f"{s}: totals {rep['engines']}/{rep['memtiles']}/{rep['gmio']}")
        if rep["utilization_pct"] != {"engines": 73, "memtiles": 14, "gmio": 35}:
            bad.append(f"{s}: utilization {rep['utilization_pct']}")
    ok = not bad and max(dts) < 5.0
    report(2, "resource fidelity", ok, f"223/11/17, 73%/14%/35% at all sizes; slowest {max(dts):.2f}s {bad or ''}")
    assert ok, bad


def _io_only(g) -> bool:
    ins = {n.name for n in g.external_nets("external_in")}
    outs = {n.name for n in g.external_nets("external_out")}
    return ins == set(g.meta["inputs"]) and outs == set(g.meta["outputs"])


def test_3_fusion_equivalence():
    t = time.perf_counter()
    n_graphs, bad = 200, []
    for seed in range(n_graphs):
        g, inputs = random_chain(seed)
        f = fuse_all(g, ARCH)
        for e in ETYPES:
            if not np.array_equal(execute(g, inputs, e)["y"], execute(f, inputs, e)["y"]):
                bad.append((seed, e))
        if not _io_only(f) or traffic_report(run(f, inputs, "bf16", ARCH))["intermediate_dram_bytes"] != 0:
            bad.append((seed, "io"))
    for s in SIZES:
        g = build_cronet(s, ARCH, fuse=False)
        f = fuse_all(g, ARCH)
        feeds = case_inputs(make_case(load_config(s), 0))
        for e in ETYPES:
            if not np.array_equal(execute(g, feeds, e)["U"], execute(f, feeds, e)["U"]):
                bad.append((s, e))
        tr = traffic_report(run(f, feeds, "bf16", ARCH))
        if not _io_only(f) or tr["intermediate_dram_bytes"] != 0:
            bad.append((s, "io"))
        if any(n.kind in EXTERNAL and n.producers and n.consumers for n in f.nets.values()):
            bad.append((s, "internal external"))
    dt = time.perf_counter() - t
    ok = not bad and dt < 120
    report(3, "fusion equivalence", ok, f"{n_graphs} random graphs + CRONet x3 sizes x {len(ETYPES)} etypes bit-identical; {dt:.1f}s {bad[:5] or ''}")
    assert ok, bad[:5]


def _run(blk, feeds, etype="fp32"):
    return execute(graph_from_block(blk), feeds, etype)["y"]


def test_4_operator_oracles():
    t = time.perf_counter()
    rng = np.random.default_rng(11)
    bad, checks = [], 0

    def check(name, ok):
        nonlocal checks
        checks += 1
        if not ok:
            bad.append(name)

    # partitioned convolutions, 2-D and 3-D
    for (si, so), fs in itertools.product([(1, 1), (2, 1), (1, 4), (2, 4), (4, 2)], [1, 2]):
        p = ConvParams(2, (6, 7), 4, 8, (3, 3), padding=1, partition=(si, so), frames=2, frame_splits=fs, has_bias=True)
        w = rng.standard_normal(p.weight_shape).astype(np.float32)
        b = rng.standard_normal(8).astype(np.float32)
        x = rng.standard_normal(p.input_tensor_shape).astype(np.float32)
        blk = build_conv_subgraph(p, ARCH, w=w, b=b)
        ref = np.stack([conv_loops(x[f], w, b, 1, 1) for f in range(2)])
        check(f"conv2d {si},{so},{fs} fp32", rel_close(_run(blk, {"x": x}), ref, 1e-5))
        ref_bf = np.stack([conv_loops(round_to(x[f], "bf16"), round_to(w, "bf16"), round_to(b, "bf16"), 1, 1) for f in range(2)])
        check(f"conv2d {si},{so},{fs} bf16", rel_close(_run(blk, {"x": x}, "bf16"), ref_bf, 1e-2))
    for si, so in [(1, 1), (2, 2), (1, 4)]:
        p = ConvParams(3, (3, 5, 6), 2, 4, (2, 3, 3), padding=(1, 1, 1), partition=(si, so))
        w = rng.standard_normal(p.weight_shape).astype(np.float32)
        x = rng.standard_normal(p.input_tensor_shape).astype(np.float32)
        check(f"conv3d {si},{so}", rel_close(_run(build_conv_subgraph(p, ARCH, w=w), {"x": x}), conv_loops(x, w, None, 1, 1), 1e-5))

    # GEMM K-slicing invariance
    for K, kcs in ((256, (1, 2, 4, 8)), (1024, (4, 8))):
        a = rng.standard_normal((1, K)).astype(np.float32)
        w = rng.standard_normal((K, 200)).astype(np.float32)
        oracle = gemm_loops(a, w)
        oracle_bf = gemm_loops(round_to(a, "bf16"), round_to(w, "bf16"))
        for kc in kcs:
            blk = build_gemm_subgraph(GemmParams(1, K, 200, k_clusters=kc), ARCH, w=w)
            check(f"gemm K={K} kc={kc} fp32", rel_close(_run(blk, {"a": a}), oracle, 1e-5))
            check(f"gemm K={K} kc={kc} bf16", rel_close(_run(blk, {"a": a}, "bf16"), oracle_bf, 1e-2))
    a = rng.standard_normal((1, 1024)).astype(np.float32)
    w = rng.standard_normal((1024, 200)).astype(np.float32)
    for kc in (1, 2, 4, 8):
        check(f"gemm_ref kc={kc}", rel_close(gemm_ref(a, w, GemmParams(1, 1024, 200, k_clusters=kc)), gemm_loops(a, w), 1e-5))

    # pooling
    p = PoolParams("max", 2, (8, 6), channels=4, kernel=2, stride=2, frames=2)
    x = rng.standard_normal(p.input_tensor_shape).astype(np.float32)
    for width in (1, 2, (2, 2)):
        check(f"maxpool {width}", np.array_equal(_run(build_simple_subgraph("maxpool2d", p, width, ARCH), {"x": x}), maxpool_loops(x, 2, 2)))
    for n_in in range(1, 17):
        x = rng.standard_normal((1, 1, n_in)).astype(np.float32)
        for n_out in range(1, n_in + 1):
            pp = PoolParams("adaptive_avg", 2, (1, n_in), out_shape=(1, n_out))
            check(f"aap1d {n_in}->{n_out}", rel_close(adaptive_avgpool_ref(x, pp), aap_loops(x, (1, n_out)), 1e-5))
    for dims in (2, 3):
        r = np.random.default_rng(dims)
        for _ in range(25):
            sp = tuple(int(v) for v in r.integers(1, 10, dims))
            out = tuple(int(r.integers(1, n + 1)) for n in sp)
            pp = PoolParams("adaptive_avg", dims, sp, channels=2, out_shape=out)
            x = r.standard_normal((2, *sp)).astype(np.float32)
            oracle = aap_loops(x, out)
            check(f"aap{dims}d {sp}->{out}", rel_close(adaptive_avgpool_ref(x, pp), oracle, 1e-5))
            check(f"aap{dims}d block {sp}->{out}", rel_close(_run(build_simple_subgraph(f"aap{dims}d", pp, 2, ARCH), {"x": x}), oracle, 1e-5))

    # unrolled RNN against the FP64 step oracle (exact tanh in the oracle,
    # so the tolerance is the deployed tanh approximation's bound)
    ws = [rng.standard_normal(s).astype(np.float32) * 0.3 for s in [(6, 5), (6, 6), 6, 6]]
    rp = RnnParams(5, 6, 4, *ws)
    x = rng.standard_normal((4, 5)).astype(np.float32)
    h = np.zeros(6)
    for step in range(4):
        h = rnn_step(x[step], h, *ws)
    check("rnn", np.max(np.abs(_run(build_rnn_subgraph(rp, ARCH), {"x": x})[0] - h)) < 5e-3)

    dt = time.perf_counter() - t
    ok = not bad and dt < 120
    report(4, "operator oracles", ok, f"{checks} checks at fp32 1e-5 / bf16 1e-2; {dt:.1f}s {bad[:5] or ''}")
    assert ok, bad[:5]


def test_5_placement():
    g = build_cronet("30x20", ARCH)
    t = time.perf_counter()
    pc = place_custom(g, ARCH)
    dt = time.perf_counter() - t
    rc, rn = route_check(g, pc, ARCH), route_check(g, place_naive(g, ARCH), ARCH)
    ok = rc.feasible and not rn.feasible and dt < 10
    report(
        5,
        "placement routing",
        ok,
        f"custom feasible={rc.feasible} wirelength {rc.total_wirelength}; naive feasible={rn.feasible} "
        f"with {len(rn.overflows)} overflows; custom {dt:.2f}s",
    )
    assert ok


def test_6_precision():
    m = load_config("30x20")
    case = make_case(m, 0)
    g = build_cronet("30x20", ARCH, seed=0)
    feeds = case_inputs(case)
    y32 = execute(g, feeds, "fp32")["U"]
    same = np.array_equal(y32, reference_forward(m, case, "fp32", init_weights(m, 0)))
    e_bf = error_metrics(execute(g, feeds, "bf16")["U"], y32)["rel_l2"]
    e_i8 = error_metrics(execute(g, feeds, "int8")["U"], y32)["rel_l2"]
    ok = same and e_bf <= 1e-2 and e_i8 > e_bf
    report(6, "precision ordering", ok, f"BF16 rel L2 {e_bf:.2e} (<= 1e-2), INT8 {e_i8:.2e}; FP32 graph == oracle: {same}")
    assert ok


def test_7_cost_model():
    g = build_cronet("30x20", ARCH)
    p = place_custom(g, ARCH)
    lat = estimate_latency(g, p, ARCH)
    top = max(lat.breakdown, key=lat.breakdown.get)
    net = {s.id: s.network for s in g.subgraphs}
    by = {n: [k for k, v in g.kernels.items() if net[v.subgraph] == n] for n in ("trunk", "branch")}
    lt, lb = (members_latency(g, by[n], p, ARCH) for n in ("trunk", "branch"))
    ok = top == "B2" and lat.cycles <= lt + lb + members_latency(g, [k for k in g.kernels if net[g.kernels[k].subgraph] == "join"], p, ARCH)
    ok = ok and max(lt, lb) <= lat.cycles
    report(
        7,
        "cost-model ordering",
        ok,
        f"top share {top} {lat.breakdown[top]:.1%}; total {lat.cycles:.0f} cycles vs trunk {lt:.0f} + branch {lb:.0f}",
    )
    assert ok


def _pipeline(seed: int) -> tuple[str, str, str]:
    g = build_cronet("30x20", ARCH, seed=seed)
    p = place_custom(g, ARCH, seed=seed)
    rep = route_check(g, p, ARCH)
    lat = estimate_latency(g, p, ARCH)
    return dumps_graph(g), repr(p.to_dict()), repr((rep.to_dict(), lat.cycles, sorted(lat.breakdown.items())))


def test_8_determinism():
    a, b = _pipeline(7), _pipeline(7)
    outs = []
    with tempfile.TemporaryDirectory() as d:
        for i in range(2):
            path = f"{d}/report{i}.json"
            code = cli_main(["report", "--size", "30x10", "--seed", "7", "--out", path])
            outs.append((code, open(path).read()))
    ok = a == b and outs[0] == outs[1] and outs[0][0] == 0 and len(outs[0][1]) > 0
    report(8, "determinism", ok, f"graph dump, placement and reports byte-identical across two seeded runs ({len(a[0])} byte dump)")
    assert ok


if __name__ == "__main__":
    failures = 0
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                fn()
            except AssertionError:
                failures += 1
    sys.exit(1 if failures else 0)
