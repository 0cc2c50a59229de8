"""Place CRONet with the row-major baseline and with the locality-driven
placer, route both, and write text and SVG array maps."""

import sys
from pathlib import Path

from tilegraph.arch import ArchSpec
from tilegraph.cronet import build_cronet
from tilegraph.place import congestion_cost, place_custom, place_naive, route_check, svg_map, text_map

out = Path(sys.argv[1] if len(sys.argv) > 1 else "placement_maps")
out.mkdir(exist_ok=True)
arch = ArchSpec()
g = build_cronet("30x20", arch)

for name, p in (("naive", place_naive(g, arch)), ("custom", place_custom(g, arch, seed=0))):
    rep = route_check(g, p, arch)
    worst = sorted(rep.overflows, key=lambda o: -o[1])[:3]
    print(f"{name:6} routable={rep.feasible!s:5} wirelength={rep.total_wirelength:4} overflows={len(rep.overflows):2} "
          f"cost={congestion_cost(rep):.0f}")
    for edge, demand, cap in worst:
        print(f"        {edge}: {demand} channels on a {cap}-channel edge")
    (out / f"{name}.txt").write_text(text_map(g, p, arch))
    (out / f"{name}.svg").write_text(svg_map(g, p, arch))

print()
print(text_map(g, place_custom(g, arch), arch))
print("maps written to", out.resolve())
