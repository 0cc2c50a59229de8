"""Dataflow IR: kernels, typed nets and layer-level subgraphs.

A net carries one logical tensor. Consumer ports read a box of it (``src``)
into a box of one of the kernel's input buffers (``dst``). Boxes are lists of
``[lo, hi)`` pairs per axis, or a single pair over the flattened tensor when
``flat`` is set. External outputs are the one place where several kernels
write into the same net; each producer port's ``dst`` says where.
"""

from __future__ import annotations

import copy
import json
from collections import defaultdict, deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from tilegraph.arch import ArchSpec

OP_KINDS = (
    "conv2d", "conv3d", "gemm", "maxpool2d", "aap2d", "aap3d",
    "silu", "tanh", "bias", "scale", "add_tanh", "add", "mul", "adder",
)
ELEMENTWISE_UNARY = ("silu", "tanh", "bias", "scale")
EPILOGUE_OPS = ("silu", "tanh", "add_const", "mul_const")
NET_KINDS = ("local_buffer", "stream", "cascade", "memtile", "external_in", "external_out")
EXTERNAL = ("external_in", "external_out")

Box = list  # [[lo, hi], ...]


@dataclass
class Port:
    kernel: str
    port: str
    buffer: str = "in"
    src: Box | None = None
    dst: Box | None = None
    flat: bool = False

    @staticmethod
    def from_dict(d: dict) -> "Port":
        return Port(**d)


@dataclass
class Kernel:
    id: str
    op_kind: str
    params: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)  # buffer name -> shape
    out_shape: tuple = ()
    weight_bytes: int = 0
    scratch_bytes: int = 0
    macs: int = 0
    fused_epilogues: list = field(default_factory=list)
    subgraph: str = ""

    @staticmethod
    def from_dict(d: dict) -> "Kernel":
        d = dict(d)
        d["inputs"] = {k: tuple(v) for k, v in d.get("inputs", {}).items()}
        d["out_shape"] = tuple(d.get("out_shape", ()))
        return Kernel(**d)


@dataclass
class Net:
    id: str
    kind: str
    producers: list = field(default_factory=list)
    consumers: list = field(default_factory=list)
    payload_bytes: int = 1
    firings: int = 1
    shape: tuple = ()
    precision: str = "data"  # "acc" nets carry float32 partial sums
    reshape: bool = False
    memtile_ids: list = field(default_factory=list)
    name: str = ""

    @property
    def producer(self) -> Port | None:
        return self.producers[0] if self.producers else None

    @property
    def total_bytes(self) -> int:
        return self.payload_bytes * self.firings

    @staticmethod
    def from_dict(d: dict) -> "Net":
        d = dict(d)
        d["producers"] = [Port.from_dict(p) for p in d.get("producers", [])]
        d["consumers"] = [Port.from_dict(p) for p in d.get("consumers", [])]
        d["shape"] = tuple(d.get("shape", ()))
        return Net(**d)


@dataclass
class Subgraph:
    id: str
    layer_name: str
    kernels: list = field(default_factory=list)
    network: str = ""
    boundary_in: list = field(default_factory=list)
    boundary_out: list = field(default_factory=list)
    in_layout: str = ""
    out_layout: str = ""


@dataclass
class Graph:
    kernels: dict = field(default_factory=dict)
    nets: dict = field(default_factory=dict)
    subgraphs: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    # shapes of constants named by a loaded dump whose arrays were not loaded
    constant_shapes: dict = field(default_factory=dict, repr=False)

    # -- construction ------------------------------------------------------
    def add_kernel(self, k: Kernel) -> Kernel:
        if k.id in self.kernels:
            raise ValueError(f"duplicate kernel id {k.id}")
        if k.op_kind not in OP_KINDS:
            raise ValueError(f"unknown op kind {k.op_kind}")
        self.kernels[k.id] = k
        return k

    def add_net(self, n: Net) -> Net:
        if n.id in self.nets:
            raise ValueError(f"duplicate net id {n.id}")
        if n.kind not in NET_KINDS:
            raise ValueError(f"unknown net kind {n.kind}")
        self.nets[n.id] = n
        return n

    def subgraph(self, sid: str) -> Subgraph:
        for s in self.subgraphs:
            if s.id == sid:
                return s
        raise KeyError(sid)

    def copy(self) -> "Graph":
        """Structural deep copy; constant arrays are shared (never mutated)."""
        g = Graph(
            kernels=copy.deepcopy(self.kernels),
            nets=copy.deepcopy(self.nets),
            subgraphs=copy.deepcopy(self.subgraphs),
            constants=dict(self.constants),
            meta=copy.deepcopy(self.meta),
            constant_shapes=dict(self.constant_shapes),
        )
        return g

    # -- queries -----------------------------------------------------------
    def external_nets(self, kind: str | None = None) -> list[Net]:
        kinds = (kind,) if kind else EXTERNAL
        return [n for n in self.nets.values() if n.kind in kinds]

    def nets_from(self, kid: str) -> list[Net]:
        return [n for n in self.nets.values() if any(p.kernel == kid for p in n.producers)]

    def nets_into(self, kid: str) -> list[Net]:
        return [n for n in self.nets.values() if any(p.kernel == kid for p in n.consumers)]

    def kernel_edges(self) -> dict[str, set[str]]:
        succ: dict[str, set[str]] = {k: set() for k in self.kernels}
        for n in self.nets.values():
            for p in n.producers:
                for c in n.consumers:
                    if p.kernel in succ:
                        succ[p.kernel].add(c.kernel)
        return succ

    def topo_order(self) -> list[str]:
        """Deterministic Kahn order (ties broken by insertion order)."""
        succ = self.kernel_edges()
        indeg = {k: 0 for k in self.kernels}
        for k, ss in succ.items():
            for s in ss:
                if s in indeg:
                    indeg[s] += 1
        rank = {k: i for i, k in enumerate(self.kernels)}
        import heapq

        heap = [(rank[k], k) for k, d in indeg.items() if d == 0]
        heapq.heapify(heap)
        order = []
        while heap:
            _, k = heapq.heappop(heap)
            order.append(k)
            for s in sorted(succ[k], key=rank.__getitem__):
                indeg[s] -= 1
                if indeg[s] == 0:
                    heapq.heappush(heap, (rank[s], s))
        if len(order) != len(self.kernels):
            raise ValueError("graph has a cycle")
        return order

    def subgraph_of(self) -> dict[str, str]:
        return {k.id: k.subgraph for k in self.kernels.values()}

    # -- serialisation -----------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return {
            "meta": self.meta,
            "subgraphs": [asdict(s) for s in self.subgraphs],
            "kernels": [_plain(asdict(k)) for k in self.kernels.values()],
            "nets": [_plain(asdict(n)) for n in self.nets.values()],
            "constants": dict(
                sorted({**self.constant_shapes, **{k: list(np.shape(v)) for k, v in self.constants.items()}}.items())
            ),
        }

    @staticmethod
    def from_dict(d: dict) -> "Graph":
        g = Graph(meta=copy.deepcopy(d.get("meta", {})))
        for s in d.get("subgraphs", []):
            g.subgraphs.append(Subgraph(**s))
        for k in d.get("kernels", []):
            g.add_kernel(Kernel.from_dict(k))
        for n in d.get("nets", []):
            g.add_net(Net.from_dict(n))
        g.constant_shapes = {k: list(v) for k, v in d.get("constants", {}).items()}
        return g


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def dumps_graph(g: Graph) -> str:
    return json.dumps(g.to_dict(), indent=1, sort_keys=True)


def loads_graph(text: str) -> Graph:
    return Graph.from_dict(json.loads(text))


def dump_graph(g: Graph, path: str | Path, with_constants: bool = False) -> None:
    path = Path(path)
    path.write_text(dumps_graph(g))
    if with_constants and g.constants:
        np.savez(path.with_suffix(".npz"), **g.constants)


def load_graph(path: str | Path) -> Graph:
    path = Path(path)
    g = loads_graph(path.read_text())
    npz = path.with_suffix(".npz")
    if npz.exists():
        with np.load(npz) as data:
            g.constants = {k: data[k] for k in data.files}
    return g


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Finding:
    code: str
    where: str
    message: str

    def __str__(self) -> str:
        return f"[{self.code}] {self.where}: {self.message}"


def validate_graph(g: Graph, arch: ArchSpec | None = None) -> list[Finding]:
    """Check every IR invariant; returns findings (empty means valid)."""
    arch = arch or ArchSpec()
    out: list[Finding] = []
    add = lambda code, where, msg: out.append(Finding(code, where, msg))  # noqa: E731

    port_uses: dict[tuple[str, str], int] = defaultdict(int)
    produced: dict[str, int] = defaultdict(int)
    for n in g.nets.values():
        if n.kind not in NET_KINDS:
            add("net-kind", n.id, f"unknown kind {n.kind}")
        if n.payload_bytes <= 0:
            add("payload", n.id, "payload_bytes must be positive")
        if n.kind == "cascade" and len(n.consumers) != 1:
            add("cascade-fanout", n.id, f"cascade net has {len(n.consumers)} consumers")
        if n.kind == "external_in":
            if n.producers:
                add("external-in", n.id, "external_in net has a producer kernel")
        elif n.kind == "external_out":
            if n.consumers:
                add("external-out", n.id, "external_out net has consumer kernels")
            if not n.producers:
                add("external-out", n.id, "external_out net has no producers")
        elif len(n.producers) != 1:
            add("producer", n.id, f"internal net needs exactly one producer, has {len(n.producers)}")
        if n.memtile_ids and n.kind not in ("memtile", "external_in"):
            add("memtile-binding", n.id, f"{n.kind} net carries a memtile binding")
        for p in n.producers:
            if p.kernel not in g.kernels:
                add("dangling", n.id, f"unknown producer kernel {p.kernel}")
            else:
                produced[p.kernel] += 1
        for p in n.consumers:
            if p.kernel not in g.kernels:
                add("dangling", n.id, f"unknown consumer kernel {p.kernel}")
            port_uses[(p.kernel, p.port)] += 1

    for (kid, port), cnt in port_uses.items():
        if cnt != 1:
            add("port", kid, f"port {port} connected to {cnt} nets")
    for k in g.kernels.values():
        if k.op_kind not in OP_KINDS:
            add("op-kind", k.id, f"unknown op kind {k.op_kind}")
        if produced.get(k.id, 0) == 0:
            add("port", k.id, "output port not connected")
        for ep in k.fused_epilogues:
            if ep.get("op") not in EPILOGUE_OPS:
                add("epilogue", k.id, f"non-elementwise epilogue {ep.get('op')}")
        if k.weight_bytes + k.scratch_bytes > arch.aie_local_mem:
            add(
                "local-memory",
                k.id,
                f"weights {k.weight_bytes} + scratch {k.scratch_bytes} exceed {arch.aie_local_mem} bytes",
            )

    sg_of = g.subgraph_of()
    for s in g.subgraphs:
        if not s.kernels:
            add("subgraph", s.id, "subgraph has no kernels")
        members = set(s.kernels)
        for nid in list(s.boundary_in) + list(s.boundary_out):
            n = g.nets.get(nid)
            if n is None:
                add("subgraph", s.id, f"unknown boundary net {nid}")
                continue
            ends = {p.kernel for p in n.producers + n.consumers}
            if n.kind not in EXTERNAL and (ends <= members or not ends & members):
                add("subgraph", s.id, f"boundary net {nid} does not cross the boundary")
    for kid, sid in sg_of.items():
        if sid and not any(s.id == sid for s in g.subgraphs):
            add("subgraph", kid, f"kernel references unknown subgraph {sid}")

    try:
        g.topo_order()
    except ValueError:
        add("cycle", "graph", "kernel connectivity is not a DAG")
    return out


def kernel_count(g: Graph) -> int:
    return len(g.kernels)


def engine_demand(g: Graph) -> int:
    """One kernel per engine; no time-sharing."""
    return len(g.kernels)


def subgraph_nets(g: Graph) -> Iterable[tuple[Net, str, list[str]]]:
    """Yield (net, producer subgraph, consumer subgraphs) for internal nets."""
    sg_of = g.subgraph_of()
    for n in g.nets.values():
        if n.kind in EXTERNAL or not n.producers:
            continue
        src = sg_of[n.producers[0].kernel]
        dsts = sorted({sg_of[c.kernel] for c in n.consumers})
        yield n, src, dsts


def refresh_boundaries(g: Graph) -> None:
    """Recompute subgraph boundary lists from net endpoints."""
    sg_of = g.subgraph_of()
    bin_: dict[str, list[str]] = defaultdict(list)
    bout: dict[str, list[str]] = defaultdict(list)
    for n in g.nets.values():
        srcs = {sg_of[p.kernel] for p in n.producers}
        dsts = {sg_of[p.kernel] for p in n.consumers}
        for s in dsts:
            if n.kind == "external_in" or srcs - {s}:
                bin_[s].append(n.id)
        for s in srcs:
            if n.kind == "external_out" or dsts - {s}:
                bout[s].append(n.id)
    for s in g.subgraphs:
        s.kernels = [k for k in s.kernels if k in g.kernels]
        s.boundary_in = bin_.get(s.id, [])
        s.boundary_out = bout.get(s.id, [])
