"""Numeric error of BF16 and INT8 against FP32, and the modeled latency
breakdown per layer with the trunk and branch pipelines running side by side."""

from tilegraph.arch import ArchSpec
from tilegraph.cronet import build_cronet, case_inputs, load_config, make_case
from tilegraph.place import place_custom
from tilegraph.sim import error_metrics, estimate_latency, execute, members_latency

arch = ArchSpec()
for size in ("30x10", "30x20", "60x20"):
    g = build_cronet(size, arch, seed=0)
    feeds = case_inputs(make_case(load_config(size), 0))
    y = {e: execute(g, feeds, e)["U"] for e in ("fp32", "bf16", "int8")}
    errs = {e: error_metrics(y[e], y["fp32"])["rel_l2"] for e in ("bf16", "int8")}
    print(f"{size}: rel L2 vs FP32  bf16 {errs['bf16']:.2e}  int8 {errs['int8']:.2e}")

g = build_cronet("30x20", arch)
p = place_custom(g, arch)
lat = estimate_latency(g, p, arch)
print()
print(f"30x20 latency: {lat.cycles:.0f} cycles = {lat.seconds * 1e6:.1f} us at {arch.clock_hz / 1e9:.2f} GHz")
for sid, share in sorted(lat.breakdown.items(), key=lambda kv: -kv[1]):
    print(f"  {sid:4} {share:6.1%} {'#' * round(share * 60)}")

net = {s.id: s.network for s in g.subgraphs}
for name in ("trunk", "branch"):
    cyc = members_latency(g, [k for k, v in g.kernels.items() if net[v.subgraph] == name], p, arch)
    print(f"{name:6} alone: {cyc:.0f} cycles")
