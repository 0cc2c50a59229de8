"""Per-layer parameters, MACs and memory for the three shipped CRONet sizes,
next to the published totals."""

from tilegraph.characterize import characterize, render_table
from tilegraph.cronet import load_config

PUBLISHED = {"30x10": (27.6e6, 1.3e6), "30x20": (53.5e6, 1.7e6), "60x20": (105.8e6, 2.5e6)}

for size, (macs, mem) in PUBLISHED.items():
    rep = characterize(load_config(size), "bf16")
    print(render_table(rep))
    print(f"  MACs {rep.macs / macs - 1:+.1%} vs published, memory {rep.total_bytes / mem - 1:+.1%}")
    # pooling layers carry no weights or MACs, so the table leaves them out
    print("  untabulated:", ", ".join(f"{l.name} ({l.op})" for l in rep.untabulated))
    print()
