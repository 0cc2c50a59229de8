"""Fusion passes.

L1 folds elementwise kernels into the kernel that feeds them. L2 turns
inter-layer memtile nets into direct engine-to-engine streams when the data
fits the consumer and needs no re-layout. L3 packs whatever is left onto
memory tiles, first-fit under capacity and port budgets.

Each pass returns a new graph and records itself in ``g.meta["passes"]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from tilegraph.arch import ArchSpec
from tilegraph.graph import ELEMENTWISE_UNARY, Graph, Net, refresh_boundaries
from tilegraph.ops.kernels import unary_as_epilogue


class FusionOrderError(RuntimeError):
    pass


class StagingError(RuntimeError):
    """More memory tiles are needed than the array has."""

    def __init__(self, needed: int, available: int, demand: dict):
        self.needed, self.available, self.demand = needed, available, demand
        lines = ", ".join(f"{k}: {v}" for k, v in demand.items())
        super().__init__(f"staging needs {needed} memory tiles, array has {available} ({lines})")


def _mark(g: Graph, name: str) -> None:
    passes = g.meta.setdefault("passes", [])
    if name not in passes:
        passes.append(name)


def passes_applied(g: Graph) -> list[str]:
    return list(g.meta.get("passes", []))


# --------------------------------------------------------------------------
# L1


def _absorbable(g: Graph, kid: str, outs: dict, ins: dict) -> str | None:
    """Host kernel id if ``kid`` can fold into its producer, else None."""
    k = g.kernels[kid]
    if k.op_kind not in ELEMENTWISE_UNARY:
        return None
    nets_in = ins.get(kid, [])
    if len(nets_in) != 1:
        return None
    n = nets_in[0]
    if n.kind in ("external_in", "external_out") or len(n.producers) != 1 or len(n.consumers) != 1:
        return None
    if n.precision != "data":
        return None
    c = n.consumers[0]
    host = n.producers[0].kernel
    if tuple(g.kernels[host].out_shape) != tuple(k.inputs[c.buffer]):
        return None
    if c.src is not None and c.src != [[0, s] for s in k.inputs[c.buffer]] or c.flat:
        return None
    if len(outs.get(host, [])) != 1:  # fan-out blocks fusion
        return None
    return host


def fuse_l1(g: Graph) -> Graph:
    """Fold single-consumer elementwise kernels into their producers. A
    layer whose kernels are all folded disappears; ``meta["absorbed"]``
    records which layer took it over."""
    g = g.copy()
    absorbed_into: dict[str, str] = {}
    while True:
        outs: dict[str, list[Net]] = {}
        ins: dict[str, list[Net]] = {}
        for n in g.nets.values():
            for p in n.producers:
                outs.setdefault(p.kernel, []).append(n)
            for p in n.consumers:
                ins.setdefault(p.kernel, []).append(n)
        victim = host = None
        for kid in g.topo_order():
            host = _absorbable(g, kid, outs, ins)
            if host is not None:
                victim = kid
                break
        if victim is None:
            break
        k = g.kernels.pop(victim)
        hk = g.kernels[host]
        hk.fused_epilogues = list(hk.fused_epilogues) + [unary_as_epilogue(k)] + list(k.fused_epilogues)
        del g.nets[ins[victim][0].id]
        for n in outs.get(victim, []):
            for p in n.producers:
                if p.kernel == victim:
                    p.kernel = host
        for s in g.subgraphs:
            if victim in s.kernels:
                s.kernels.remove(victim)
                absorbed_into[s.id] = g.kernels[host].subgraph
    empty = {s.id for s in g.subgraphs if not s.kernels}
    if empty:
        g.subgraphs = [s for s in g.subgraphs if s.id not in empty]
        record = g.meta.setdefault("absorbed", {})
        for sid in sorted(empty):
            host = absorbed_into[sid]
            while host in record:
                host = record[host]
            record[sid] = host
    refresh_boundaries(g)
    _mark(g, "l1")
    return g


# --------------------------------------------------------------------------
# L2


def spare_local_memory(g: Graph, kid: str, arch: ArchSpec) -> int:
    k = g.kernels[kid]
    return arch.aie_local_mem - k.weight_bytes - k.scratch_bytes


def streamable(g: Graph, n: Net, arch: ArchSpec) -> bool:
    if n.reshape or n.kind != "memtile" or n.memtile_ids:
        return False
    return all(2 * n.payload_bytes <= spare_local_memory(g, c.kernel, arch) for c in n.consumers)


def memtile_demand(g: Graph) -> int:
    """Nets that still need staging."""
    return sum(1 for n in g.nets.values() if n.kind == "memtile")


def fuse_l2(g: Graph, arch: ArchSpec | None = None) -> Graph:
    arch = arch or ArchSpec()
    if "l1" not in passes_applied(g):
        raise FusionOrderError("L2 needs L1 first: run fuse_l1")
    g = g.copy()
    for n in g.nets.values():
        if streamable(g, n, arch):
            n.kind = "stream"
    _mark(g, "l2")
    return g


# --------------------------------------------------------------------------
# L3


@dataclass
class _Tile:
    id: int
    boundary: tuple
    in_ports: int = 0
    out_ports: int = 0
    nbytes: int = 0

    def fits(self, i: int, o: int, b: int, arch: ArchSpec) -> bool:
        return (
            self.in_ports + i <= arch.memtile_in_ports
            and self.out_ports + o <= arch.memtile_out_ports
            and self.nbytes + b <= arch.memtile_capacity
        )

    def take(self, i: int, o: int, b: int) -> None:
        self.in_ports += i
        self.out_ports += o
        self.nbytes += b


def staging_demand(n: Net) -> tuple[int, int, int]:
    """(input ports, output ports, bytes) a net needs on memory tiles.

    Consumers reading the same box share one output port (multicast). An
    external input uses one input port per distinct slice it is fetched in.
    """
    out_ports = len({repr(c.src) for c in n.consumers})
    in_ports = len(n.producers) if n.producers else out_ports
    return in_ports, out_ports, n.total_bytes


def _needs_staging(n: Net) -> bool:
    if n.memtile_ids:
        return False
    if n.kind == "memtile":
        return True
    return n.kind == "external_in" and n.reshape


def _boundary(g: Graph, n: Net) -> tuple:
    sg = g.subgraph_of()
    src = sg[n.producers[0].kernel] if n.producers else f"<{n.name or n.id}>"
    return src, tuple(sorted({sg[c.kernel] for c in n.consumers}))


def fuse_l3(g: Graph, arch: ArchSpec | None = None) -> Graph:
    arch = arch or ArchSpec()
    g = g.copy()
    used = {m for n in g.nets.values() for m in n.memtile_ids}
    next_id = max(used, default=-1) + 1
    tiles: list[_Tile] = []
    demand: dict[str, int] = {}
    for n in g.nets.values():
        if not _needs_staging(n):
            continue
        i, o, b = staging_demand(n)
        bnd = _boundary(g, n)
        key = f"{bnd[0]}->{','.join(bnd[1])}"
        parts = max(
            math.ceil(i / arch.memtile_in_ports),
            math.ceil(o / arch.memtile_out_ports),
            math.ceil(b / arch.memtile_capacity),
        )
        if parts == 1:
            tile = next((t for t in tiles if t.boundary == bnd and t.fits(i, o, b, arch)), None)
            if tile is None:
                tile = _Tile(next_id, bnd)
                next_id += 1
                tiles.append(tile)
            tile.take(i, o, b)
            ids = [tile.id]
        else:
            # oversized: spread evenly over dedicated tiles
            ids = []
            for j in range(parts):
                t = _Tile(next_id, bnd)
                next_id += 1
                t.take(
                    math.ceil(i / parts) if j < i % parts or i % parts == 0 else i // parts,
                    math.ceil(o / parts) if j < o % parts or o % parts == 0 else o // parts,
                    math.ceil(b / parts),
                )
                tiles.append(t)
                ids.append(t.id)
        n.memtile_ids = ids
        if n.kind != "external_in":
            n.kind = "memtile"
        demand[key] = len({m for t in tiles if t.boundary == bnd for m in [t.id]})
    total = len(used) + len(tiles)
    if total > arch.memtile_total:
        raise StagingError(total, arch.memtile_total, demand)
    _mark(g, "l3")
    return g


def fuse_all(g: Graph, arch: ArchSpec | None = None) -> Graph:
    arch = arch or ArchSpec()
    return fuse_l3(fuse_l2(fuse_l1(g), arch), arch)
