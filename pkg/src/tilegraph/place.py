"""Placement of kernels onto the engine grid and a capacity routing check.

``place_custom`` follows the locality principle: each layer gets a
rectangular region next to the layers feeding it, kernels sit near their
producers inside the region, and a seeded swap search lowers the
congestion cost. ``place_naive`` fills the grid row by row in declaration
order. Both keep cascade chains on consecutive columns of one row.

``route_check`` routes every stream net X-then-Y (multicast nets share
edges) and counts channels per directed grid edge.
"""

from __future__ import annotations

import math
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from tilegraph.arch import ArchSpec
from tilegraph.fusion import staging_demand
from tilegraph.graph import Graph, Net

Coord = tuple[int, int]  # (column, row)
PENALTY = 1000
ROUTED = ("stream", "local_buffer")


class PlacementError(RuntimeError):
    pass


@dataclass
class Placement:
    coords: dict  # kernel id -> (column, row)
    memtile_binding: dict = field(default_factory=dict)  # net id -> [memtile ids]
    gmio_binding: dict = field(default_factory=dict)  # external net id -> [channel ids]
    strategy: str = ""
    regions: dict = field(default_factory=dict)  # subgraph id -> (col, row, width, height)

    def distance(self, a: str, b: str) -> int:
        (x1, y1), (x2, y2) = self.coords[a], self.coords[b]
        return abs(x1 - x2) + abs(y1 - y2)

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "coords": {k: list(v) for k, v in sorted(self.coords.items())},
            "regions": {k: list(v) for k, v in sorted(self.regions.items())},
            "memtile_binding": {k: list(v) for k, v in sorted(self.memtile_binding.items())},
            "gmio_binding": {k: list(v) for k, v in sorted(self.gmio_binding.items())},
        }


@dataclass
class RouteReport:
    feasible: bool
    edge_loads: dict  # ((c, r), (c2, r2)) -> channels
    overflows: list  # (edge, demand, capacity)
    total_wirelength: int
    memtile_ports: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "total_wirelength": self.total_wirelength,
            "max_edge_load": max(self.edge_loads.values(), default=0),
            "overflows": [[_edge_str(e), d, c] for e, d, c in self.overflows],
            "memtile_ports": {str(k): v for k, v in sorted(self.memtile_ports.items())},
        }


def _edge_str(e) -> str:
    if isinstance(e[0], str):
        return ":".join(str(x) for x in e)
    (a, b), (c, d) = e
    return f"{a},{b}->{c},{d}"


# --------------------------------------------------------------------------
# routing


def xy_path(a: Coord, b: Coord) -> list:
    """Directed grid edges from a to b, columns first."""
    (x, y), (x2, y2) = a, b
    edges = []
    step = 1 if x2 > x else -1
    while x != x2:
        edges.append(((x, y), (x + step, y)))
        x += step
    step = 1 if y2 > y else -1
    while y != y2:
        edges.append(((x, y), (x, y + step)))
        y += step
    return edges


def _net_edges(n: Net, coords: dict) -> set:
    src = coords[n.producers[0].kernel]
    edges = set()
    for c in n.consumers:
        edges.update(xy_path(src, coords[c.kernel]))
    return edges


def _routed_nets(g: Graph) -> list[Net]:
    return [n for n in g.nets.values() if n.kind in ROUTED and n.producers]


def _memtile_ports(g: Graph) -> dict:
    use: dict = defaultdict(lambda: [0, 0])
    for n in g.nets.values():
        if not n.memtile_ids:
            continue
        i, o, _ = staging_demand(n)
        k = len(n.memtile_ids)
        for j, m in enumerate(n.memtile_ids):
            use[m][0] += i // k + (j < i % k)
            use[m][1] += o // k + (j < o % k)
    return {m: tuple(v) for m, v in use.items()}


def route_check(g: Graph, p: Placement, arch: ArchSpec | None = None) -> RouteReport:
    arch = arch or ArchSpec()
    cap = arch.stream_channels_per_edge
    loads: Counter = Counter()
    wl = 0
    for n in _routed_nets(g):
        e = _net_edges(n, p.coords)
        loads.update(e)
        wl += len(e)
    over = [(e, d, cap) for e, d in sorted(loads.items()) if d > cap]
    ports = _memtile_ports(g)
    for m, (i, o) in sorted(ports.items()):
        if i > arch.memtile_in_ports:
            over.append((("memtile", m, "in"), i, arch.memtile_in_ports))
        if o > arch.memtile_out_ports:
            over.append((("memtile", m, "out"), o, arch.memtile_out_ports))
    return RouteReport(not over, dict(loads), over, wl, ports)


def congestion_cost(report: RouteReport, penalty: float = PENALTY) -> float:
    return report.total_wirelength + penalty * sum(d - c for _, d, c in report.overflows)


# --------------------------------------------------------------------------
# shared helpers


def cascade_chains(g: Graph) -> list[list[str]]:
    """Maximal cascade chains, head first."""
    nxt, has_prev = {}, set()
    for n in g.nets.values():
        if n.kind == "cascade":
            a, b = n.producers[0].kernel, n.consumers[0].kernel
            nxt[a] = b
            has_prev.add(b)
    chains = []
    for k in g.kernels:
        if k in nxt and k not in has_prev:
            chain = [k]
            while chain[-1] in nxt:
                chain.append(nxt[chain[-1]])
            chains.append(chain)
    return chains


def _check_capacity(g: Graph, arch: ArchSpec) -> list[list[str]]:
    if len(g.kernels) > arch.num_engines:
        raise PlacementError(f"{len(g.kernels)} kernels exceed {arch.num_engines} engines")
    chains = cascade_chains(g)
    for c in chains:
        if len(c) > min(arch.cascade_max_length, arch.columns):
            raise PlacementError(f"cascade chain of {len(c)} starting at {c[0]} cannot fit one row")
    return chains


def _bind_io(g: Graph, p: Placement, arch: ArchSpec) -> None:
    """Memtile ids come from staging; GMIO channels are dealt round-robin."""
    p.memtile_binding = {n.id: list(n.memtile_ids) for n in g.nets.values() if n.memtile_ids}
    ch = 0
    for n in sorted(g.external_nets(), key=lambda n: n.id):
        ends = n.consumers if n.kind == "external_in" else n.producers
        k = len({repr(e.src if n.kind == "external_in" else e.dst) for e in ends}) or 1
        p.gmio_binding[n.id] = [(ch + i) % arch.gmio_total for i in range(k)]
        ch += k


# --------------------------------------------------------------------------
# naive


def place_naive(g: Graph, arch: ArchSpec | None = None) -> Placement:
    arch = arch or ArchSpec()
    chains = _check_capacity(g, arch)
    head = {c[0]: c for c in chains}
    member = {k for c in chains for k in c[1:]}
    coords = {}
    pos = 0
    for kid in g.kernels:
        if kid in member:
            continue
        group = head.get(kid, [kid])
        col = pos % arch.columns
        if col + len(group) > arch.columns:
            pos += arch.columns - col
        for k in group:
            coords[k] = (pos % arch.columns, pos // arch.columns)
            pos += 1
        if pos > arch.num_engines:
            raise PlacementError("row padding for cascade chains leaves too few engines")
    p = Placement(coords, strategy="naive")
    _bind_io(g, p, arch)
    return p


# --------------------------------------------------------------------------
# custom


def _rows_for(chains: list[int], w: int) -> int | None:
    """Rows first-fit decreasing needs to hold the chains at width w."""
    rows: list[int] = []
    for c in sorted(chains, reverse=True):
        if c > w:
            return None
        for i, free in enumerate(rows):
            if free >= c:
                rows[i] -= c
                break
        else:
            rows.append(w - c)
    return len(rows)


SHAPE_RULES = {
    "compact": lambda s: (s[0] * s[1], abs(s[0] - s[1])),
    "wide": lambda s: (s[1], s[0]),
    "tall": lambda s: (-s[1], s[0]),
}


def _region_shapes(n: int, chains: list[int], arch: ArchSpec, rule: str = "compact") -> list[tuple[int, int]]:
    shapes = set()
    longest = max(chains, default=1)
    for w in range(longest, arch.columns + 1):
        need = _rows_for(chains, w)
        h = max(math.ceil(n / w), need or 0)
        if need is not None and h <= arch.rows:
            shapes.add((w, h))
    # keep the narrowest width for each height
    best: dict[int, tuple] = {}
    for w, h in sorted(shapes):
        best.setdefault(h, (w, h))
    return sorted(best.values(), key=SHAPE_RULES[rule])


def _region_groups(g: Graph, cap: int) -> dict:
    """Layers whose kernels take more routed inputs from one producer layer
    than a single edge carries share that producer's rectangle, so each such
    kernel can be surrounded by its sources."""
    sg_of = g.subgraph_of()
    fan = Counter()
    for n in g.nets.values():
        if n.kind in ROUTED and n.producers:
            s = sg_of[n.producers[0].kernel]
            for c in n.consumers:
                if sg_of[c.kernel] != s:
                    fan[s, c.kernel] += 1
    group = {sg.id: sg.id for sg in g.subgraphs}

    def root(s):
        while group[s] != s:
            s = group[s]
        return s

    for (q, k), f in sorted(fan.items()):
        if f > cap:
            a, b = root(q), root(sg_of[k])
            if a != b:
                group[b] = a
    return {s: root(s) for s in group}


def _region_graph(g: Graph, group: dict):
    """Region order, predecessors, and routed link statistics between regions."""
    sg_of = {k: group[s] for k, s in g.subgraph_of().items()}
    preds = defaultdict(set)
    links = Counter()  # routed connections between region pairs
    fan = Counter()
    feeds = defaultdict(list)  # region -> (producer kernel, consumers reached) per routed net
    for n in g.nets.values():
        if not n.producers:
            continue
        src = n.producers[0].kernel
        s = sg_of[src]
        into = Counter()
        for c in n.consumers:
            t = sg_of[c.kernel]
            if t == s:
                continue
            preds[t].add(s)
            if n.kind in ROUTED:
                links[s, t] += 1
                fan[s, c.kernel] += 1
                into[t] += 1
        for t, m in into.items():
            feeds[t].append((src, m))
    fanin = Counter()
    for (q, k), f in fan.items():
        fanin[q, sg_of[k]] = max(fanin[q, sg_of[k]], f)
    order = []
    for kid in g.topo_order():
        if sg_of[kid] not in order:
            order.append(sg_of[kid])
    return sg_of, order, preds, links, fanin, feeds


def _span(a: int, lo: int, hi: int) -> int:
    """Edges a path tree from ``a`` needs to cover [lo, hi] on one axis."""
    return max(a, hi) - min(a, lo)


def _tree_to_rect(c: Coord, x: int, y: int, w: int, h: int) -> int:
    """Edges in the union of columns-first paths from c to every cell of a
    rectangle: one run along c's row plus one vertical run per column."""
    return _span(c[0], x, x + w - 1) + w * _span(c[1], y, y + h - 1)


def _cut_excess(a: tuple, b: tuple, links: int, fanin: int, cap: int) -> int:
    """Channels by which routes from region a into region b are bound to
    overflow: the facing span limits the total, and with columns-first
    routing a consumer stacked above or below its producers takes every
    route through a single edge."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    span_x = min(ax + aw, bx + bw) - max(ax, bx)
    span_y = min(ay + ah, by + bh) - max(ay, by)
    facing = max(span_x, span_y, 1)
    per_kernel = cap if span_y <= 0 else 3 * cap
    return max(0, links - facing * cap) + max(0, fanin - per_kernel)


class _Router:
    """Incremental channel demand for swap evaluation."""

    def __init__(self, g: Graph, coords: dict, cap: int):
        self.cap = cap
        self.coords = coords
        self.nets = _routed_nets(g)
        self.by_kernel = defaultdict(list)
        for i, n in enumerate(self.nets):
            for k in {n.producers[0].kernel, *(c.kernel for c in n.consumers)}:
                self.by_kernel[k].append(i)
        self.edges = [_net_edges(n, coords) for n in self.nets]
        self.load = Counter()
        for e in self.edges:
            self.load.update(e)
        self.wl = sum(len(e) for e in self.edges)
        self.over = sum(max(0, d - cap) for d in self.load.values())

    def cost(self) -> float:
        return self.wl + PENALTY * self.over

    def move(self, moves: dict) -> float:
        """Apply {kernel: coord}; returns the cost change."""
        before = self.cost()
        touched = sorted({i for k in moves for i in self.by_kernel[k]})
        for k, c in moves.items():
            self.coords[k] = c
        for i in touched:
            old, new = self.edges[i], _net_edges(self.nets[i], self.coords)
            for e in old - new:
                d = self.load[e]
                self.over -= d > self.cap
                self.load[e] = d - 1
            for e in new - old:
                d = self.load[e] + 1
                self.load[e] = d
                self.over += d > self.cap
            self.wl += len(new) - len(old)
            self.edges[i] = new
        return self.cost() - before


def place_custom(g: Graph, arch: ArchSpec | None = None, seed: int = 0, sweeps: int = 40) -> Placement:
    """Greedy region packing under each shape rule, refined by swaps; the
    candidate with the lowest congestion cost wins (ties go to the earlier
    rule)."""
    arch = arch or ArchSpec()
    chains = _check_capacity(g, arch)
    group = _region_groups(g, arch.stream_channels_per_edge)
    best = None
    for rule in SHAPE_RULES:
        try:
            p = _candidate(g, arch, chains, group, rule, seed, sweeps)
        except PlacementError:
            continue
        cost = congestion_cost(route_check(g, p, arch))
        if best is None or cost < best[0]:
            best = (cost, p)
    if best is None:
        p = place_naive(g, arch)
        p.strategy = "custom-fallback"
    else:
        p = best[1]
    _bind_io(g, p, arch)
    return p


def _candidate(g, arch, chains, group, rule, seed, sweeps) -> Placement:
    """Regions in topological order. Each rectangle goes where the kernels
    feeding it over routed nets are closest without overloading the
    boundary; its kernels are placed before the next region is chosen."""
    sg_of, order, preds, links, fanin, feeds = _region_graph(g, group)
    cap = arch.stream_channels_per_edge
    lengths = defaultdict(list)
    region_chains = defaultdict(list)
    for c in sorted(chains, key=len, reverse=True):
        lengths[sg_of[c[0]]].append(len(c))
        region_chains[sg_of[c[0]]].append(c)
    members = defaultdict(list)
    for kid in g.topo_order():
        members[sg_of[kid]].append(kid)
    chain_of = {k: c for c in chains for k in c}
    neigh = defaultdict(set)
    for n in g.nets.values():
        ends = [p.kernel for p in n.producers] + [c.kernel for c in n.consumers]
        for a in ends:
            neigh[a].update(e for e in ends if e != a)

    coords: dict = {}
    used: set = set()
    regions: dict = {}

    def score(k, c, origin):
        placed = [coords[q] for q in neigh[k] if q in coords]
        if not placed:
            return abs(c[0] - origin[0]) + abs(c[1] - origin[1])
        return sum(abs(c[0] - a) + abs(c[1] - b) for a, b in placed)

    def choose_rect(s):
        best = None
        n_s = len(members[s])
        anchors = [(coords[k], m / n_s) for k, m in feeds[s] if k in coords]
        centers = [(r[0] + r[2] / 2, r[1] + r[3] / 2) for q, r in regions.items() if q in preds[s]]
        for w, h in _region_shapes(n_s, lengths[s], arch, rule):
            waste = w * h - n_s
            for x in range(arch.columns - w + 1):
                for y in range(arch.rows - h + 1):
                    if any((i, j) in used for i in range(x, x + w) for j in range(y, y + h)):
                        continue
                    if anchors:
                        d = sum(f * _tree_to_rect(a, x, y, w, h) for a, f in anchors)
                    elif centers:
                        cx, cy = x + w / 2, y + h / 2
                        d = sum(abs(cx - a) + abs(cy - b) for a, b in centers) / len(centers)
                    else:
                        d = x + y  # sources start at the corner
                    cut = sum(_cut_excess(regions[q], (x, y, w, h), links[q, s], fanin[q, s], cap) for q in preds[s] if q in regions)
                    key = (PENALTY * cut + d + 0.5 * waste, x, y, w)
                    if best is None or key < best[0]:
                        best = (key, (x, y, w, h))
        if best is None:
            raise PlacementError(f"no free rectangle holds region {s}")
        return best[1]

    def runs(rect, chain):
        """Row-end-aligned runs: the leftmost free stretch of each row."""
        x0, y0, w, h = rect
        for y in range(y0, y0 + h):
            x = next((i for i in range(x0, x0 + w) if (i, y) not in used), None)
            if x is not None and x + len(chain) <= x0 + w:
                yield [(x + i, y) for i in range(len(chain))]

    def place_chains(s, scored):
        taken = []
        origin = regions[s][:2]
        for chain in region_chains[s]:
            options = list(runs(regions[s], chain))
            if not options:
                return taken, False
            if scored:
                run = min(options, key=lambda r: (score(chain[0], r[0], origin) + score(chain[-1], r[-1], origin), r[0]))
            else:
                run = options[0]
            for k, c in zip(chain, run):
                coords[k] = c
                used.add(c)
                taken.append(k)
        return taken, True

    for s in order:
        regions[s] = rect = choose_rect(s)
        taken, ok = place_chains(s, True)
        if not ok:
            # the scored choice fragmented the rows; first-fit always fits
            for k in taken:
                used.discard(coords.pop(k))
            if not place_chains(s, False)[1]:
                raise PlacementError(f"no row in region {s} holds its cascade chains")
        x, y, w, h = rect
        cells = [(x + i, y + j) for j in range(h) for i in range(w)]
        for kid in members[s]:
            if kid in coords:
                continue
            c = min((c for c in cells if c not in used), key=lambda c: (score(kid, c, rect[:2]), c))
            coords[kid] = c
            used.add(c)

    cells = {s: [(x + i, y + j) for j in range(h) for i in range(w)] for s, (x, y, w, h) in regions.items()}
    _improve(g, coords, cells, chain_of, sg_of, arch, seed, sweeps)
    return Placement(coords, strategy="custom", regions={sg.id: regions[group[sg.id]] for sg in g.subgraphs if group[sg.id] in regions})


def _improve(g, coords, cells, chain_of, sg_of, arch, seed, sweeps) -> None:
    """Seeded swaps, or moves into free cells, inside each region; stops
    after a sweep without any gain."""
    rng = random.Random(seed)
    router = _Router(g, coords, arch.stream_channels_per_edge)
    if not router.nets:
        return
    at = {c: k for k, c in coords.items()}
    movable = [k for k in g.kernels if k not in chain_of and router.by_kernel[k]]
    for _ in range(sweeps):
        improved = False
        for k in movable:
            target = rng.choice(cells[sg_of[k]])
            other = at.get(target)
            if other == k or other in chain_of:
                continue
            here = coords[k]
            moves = {k: target} if other is None else {k: target, other: here}
            if router.move(moves) < 0:
                improved = True
                at.pop(here, None)
                at[target] = k
                if other is not None:
                    at[here] = other
            else:
                router.move({k: here} if other is None else {k: here, other: target})
        if not improved:
            break


# --------------------------------------------------------------------------
# maps


def text_map(g: Graph, p: Placement, arch: ArchSpec | None = None) -> str:
    arch = arch or ArchSpec()
    sg_of = g.subgraph_of()
    width = max([len(s) for s in sg_of.values()] + [2])
    grid = [["." * width] * arch.columns for _ in range(arch.rows)]
    for k, (c, r) in p.coords.items():
        grid[r][c] = sg_of[k].ljust(width)
    return "\n".join(" ".join(row) for row in grid) + "\n"


_PALETTE = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"]


def svg_map(g: Graph, p: Placement, arch: ArchSpec | None = None, cell: int = 24) -> str:
    arch = arch or ArchSpec()
    sg_of = g.subgraph_of()
    colors = {s.id: _PALETTE[i % len(_PALETTE)] for i, s in enumerate(g.subgraphs)}
    w, h = arch.columns * cell, arch.rows * cell
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-size="7" font-family="monospace">']
    for r in range(arch.rows):
        for c in range(arch.columns):
            out.append(f'<rect x="{c * cell}" y="{r * cell}" width="{cell}" height="{cell}" fill="#f4f4f4" stroke="#ccc"/>')
    for k, (c, r) in sorted(p.coords.items()):
        s = sg_of[k]
        out.append(
            f'<rect x="{c * cell + 1}" y="{r * cell + 1}" width="{cell - 2}" height="{cell - 2}" fill="{colors[s]}">'
            f"<title>{k}</title></rect>"
        )
        out.append(f'<text x="{c * cell + 3}" y="{r * cell + cell // 2 + 3}">{s}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
