"""Build the unfused CRONet graph and apply the three fusion levels one at a
time, watching kernels, net kinds and memory tiles change while the output
stays bit-identical."""

from collections import Counter

import numpy as np

from tilegraph.arch import ArchSpec
from tilegraph.cronet import build_cronet, case_inputs, load_config, make_case
from tilegraph.fusion import fuse_l1, fuse_l2, fuse_l3
from tilegraph.sim import execute, memtile_ids, run, traffic_report

arch = ArchSpec()
size = "30x20"
feeds = case_inputs(make_case(load_config(size), 0))

g = build_cronet(size, arch, fuse=False)
ref = execute(g, feeds, "bf16")["U"]


def show(tag, g):
    kinds = Counter(n.kind for n in g.nets.values())
    same = np.array_equal(execute(g, feeds, "bf16")["U"], ref)
    print(f"{tag:9} kernels={len(g.kernels):3}  memtiles={len(memtile_ids(g)):2}  nets={dict(sorted(kinds.items()))}  same output: {same}")


show("unfused", g)
print(f"          the unfused graph wants more engines than the array has ({arch.num_engines})")
g = fuse_l1(g)
show("+L1", g)
g = fuse_l2(g, arch)
show("+L2", g)
g = fuse_l3(g, arch)
show("+L3", g)

tr = traffic_report(run(g, feeds, "bf16", arch))
print()
print("DRAM read", tr["dram_read_bytes"], "bytes, write", tr["dram_write_bytes"], "bytes, intermediate", tr["intermediate_dram_bytes"])
print("on-chip bytes by net kind:", tr["on_chip_bytes"])
