"""Functional executor and analytical cost model.

``execute`` fires kernels in topological order with operands rounded to the
element type and FP32 accumulation. Each fused epilogue stage is rounded
exactly as a standalone elementwise kernel would round its output, so fused
and unfused graphs produce identical bits.

The cost model is a longest-path estimate: a kernel's weight is the larger of
its compute cycles and its inbound transfer cycles (transfers overlap compute
under double buffering).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from tilegraph.arch import ArchSpec
from tilegraph.graph import EXTERNAL, Graph, Kernel, Net
from tilegraph.numerics import EType, as_etype, round_to
from tilegraph.ops.kernels import KERNEL_FUNCS, WEIGHT_PARAMS, apply_epilogue


class ExecError(ValueError):
    pass


# --------------------------------------------------------------------------
# executor


def _read(value: np.ndarray, port) -> np.ndarray:
    if port.src is None:
        return value
    if port.flat:
        lo, hi = port.src[0]
        return value.reshape(-1)[lo:hi]
    return value[tuple(slice(lo, hi) for lo, hi in port.src)]


def _write(buf: np.ndarray, port, data: np.ndarray) -> None:
    if port.dst is None:
        buf[...] = data.reshape(buf.shape)
    elif port.flat:
        lo, hi = port.dst[0]
        buf.reshape(-1)[lo:hi] = data.reshape(-1)
    else:
        buf[tuple(slice(lo, hi) for lo, hi in port.dst)] = data


def _check_inputs(g: Graph, inputs: dict) -> dict:
    ext = {n.name or n.id: n for n in g.external_nets("external_in")}
    missing = sorted(set(ext) - set(inputs))
    if missing:
        raise ExecError(f"missing inputs: {', '.join(missing)}")
    out = {}
    for name, n in ext.items():
        a = np.asarray(inputs[name], np.float32)
        if a.shape != tuple(n.shape):
            raise ExecError(f"input {name} has shape {a.shape}, expected {tuple(n.shape)}")
        out[name] = a
    return out


def _fired_macs(k: Kernel, bufs: dict, kc: dict, out: np.ndarray) -> int:
    """MACs actually performed by one firing, from the operand shapes."""
    if k.op_kind in ("conv2d", "conv3d"):
        w = kc[k.params["w"]]
        return out.size * math.prod(w.shape[1:])
    if k.op_kind == "gemm":
        return bufs["a"].size * out.shape[-1]
    return 0


def execute(g: Graph, inputs: dict, etype: EType | str = "fp32", stats: dict | None = None) -> dict[str, np.ndarray]:
    """Run the graph; returns the external outputs by name. If ``stats`` is
    given, ``stats["macs"]`` receives the MACs counted while firing."""
    e = as_etype(etype)
    feeds = {k: round_to(v, e) for k, v in _check_inputs(g, inputs).items()}
    weights: dict[str, np.ndarray] = {}
    consts = g.constants
    data: dict[str, np.ndarray] = {}  # rounded kernel outputs
    raw: dict[str, np.ndarray] = {}  # FP32 outputs for partial-sum nets

    into: dict[str, list[Net]] = {k: [] for k in g.kernels}
    for n in g.nets.values():
        for c in n.consumers:
            into[c.kernel].append(n)

    for kid in g.topo_order():
        k = g.kernels[kid]
        fn = KERNEL_FUNCS.get(k.op_kind)
        if fn is None:
            raise ExecError(f"{kid}: op {k.op_kind} has no executor")
        bufs = {b: np.zeros(shape, np.float32) for b, shape in k.inputs.items()}
        for n in into[kid]:
            if n.kind == "external_in":
                value = feeds[n.name or n.id]
            else:
                src = n.producers[0].kernel
                value = raw[src] if n.precision == "acc" else data[src]
            for c in n.consumers:
                if c.kernel == kid:
                    _write(bufs[c.buffer], c, _read(value, c))
        kc = dict(consts)
        for pname in WEIGHT_PARAMS:
            key = k.params.get(pname)
            if key is not None:
                if key not in weights:
                    if key not in consts:
                        raise ExecError(f"{kid}: constant {key} is missing")
                    weights[key] = round_to(consts[key], e)
                kc[key] = weights[key]
        out = np.asarray(fn(bufs, k.params, kc), np.float32)
        if stats is not None:
            stats["macs"] = stats.get("macs", 0) + _fired_macs(k, bufs, kc, out)
        if out.shape != tuple(k.out_shape):
            raise ExecError(f"{kid}: produced {out.shape}, declared {tuple(k.out_shape)}")
        raw[kid] = out
        y = round_to(out, e)
        for ep in k.fused_epilogues:
            y = round_to(apply_epilogue(y, ep, consts), e)
        data[kid] = y

    result = {}
    for n in g.external_nets("external_out"):
        buf = np.zeros(n.shape, np.float32)
        for p in n.producers:
            _write(buf, p, _read(data[p.kernel], p))
        result[n.name or n.id] = buf
    return result


# --------------------------------------------------------------------------
# cost model

POOL_KINDS = ("maxpool2d", "aap2d", "aap3d")


def _default_eff() -> dict:
    # conv2d is set lower than conv3d: the 2-D kernels work on short rows
    # with few input channels, so vector lanes stay poorly filled
    return {
        "gemm": 0.85,
        "conv3d": 0.6,
        "conv2d": 0.15,
        "maxpool2d": 0.4,
        "aap2d": 0.4,
        "aap3d": 0.4,
        "silu": 0.9,
        "tanh": 0.9,
        "bias": 0.9,
        "scale": 0.9,
        "add": 0.9,
        "add_tanh": 0.9,
        "mul": 0.9,
        "adder": 0.9,
    }


def _default_rates() -> dict:
    return {
        "stream": 4.0,
        "local_buffer": 32.0,
        "cascade": 32.0,
        "memtile": 4.0,
        "external_in": 4.0,
        "external_out": 4.0,
    }


@dataclass
class CostModel:
    efficiency: dict = field(default_factory=_default_eff)
    bytes_per_cycle: dict = field(default_factory=_default_rates)
    hop_cycles: float = 1.0

    def __post_init__(self):
        for k, v in self.efficiency.items():
            if not 0 < v <= 1:
                raise ValueError(f"efficiency for {k} must be in (0, 1]")
        for k, v in self.bytes_per_cycle.items():
            if v <= 0:
                raise ValueError(f"rate for {k} must be positive")

    @staticmethod
    def ops(k: Kernel) -> int:
        """MACs for conv/GEMM, element operations otherwise."""
        if k.macs:
            return int(k.macs)
        if k.op_kind in POOL_KINDS:
            return sum(math.prod(s) for s in k.inputs.values())
        return math.prod(k.out_shape)

    def compute_cycles(self, k: Kernel, etype: EType | str = "bf16", arch: ArchSpec | None = None) -> float:
        arch = arch or ArchSpec()
        rate = arch.macs_for(as_etype(etype).value)
        eff = self.efficiency.get(k.op_kind, 1.0)
        cyc = math.ceil(self.ops(k) / rate) / eff
        if k.fused_epilogues:
            n = math.prod(k.out_shape) * len(k.fused_epilogues)
            cyc += math.ceil(n / rate) / self.efficiency.get("silu", 0.9)
        return cyc

    def transfer_cycles(self, n: Net, nbytes: int | None = None) -> float:
        """Cycles to move ``nbytes`` (default: the net's bytes per inference)."""
        nbytes = n.total_bytes if nbytes is None else nbytes
        return nbytes / self.bytes_per_cycle.get(n.kind, 4.0)


def _port_bytes(n: Net, port, etype: EType) -> int:
    elems = math.prod(n.shape) if port.src is None else math.prod(hi - lo for lo, hi in port.src)
    width = 4 if n.precision == "acc" else etype.nbytes
    return elems * width


def kernel_weights(g: Graph, cm: CostModel, arch: ArchSpec, etype="bf16", placement=None) -> dict[str, float]:
    e = as_etype(etype)
    inbound: dict[str, float] = {k: 0.0 for k in g.kernels}
    for n in g.nets.values():
        for c in n.consumers:
            t = cm.transfer_cycles(n, _port_bytes(n, c, e))
            if placement is not None and n.producers and n.kind not in EXTERNAL:
                t += cm.hop_cycles * placement.distance(n.producers[0].kernel, c.kernel)
            inbound[c.kernel] = max(inbound[c.kernel], t)
    return {kid: max(cm.compute_cycles(k, e, arch), inbound[kid]) for kid, k in g.kernels.items()}


def _longest(g: Graph, w: dict, members: set | None = None) -> tuple[float, dict, dict]:
    order = [k for k in g.topo_order() if members is None or k in members]
    preds: dict[str, set] = {k: set() for k in order}
    for src, dsts in g.kernel_edges().items():
        for d in dsts:
            if d in preds and (members is None or src in members):
                preds[d].add(src)
    start, end = {}, {}
    for k in order:
        start[k] = max((end[p] for p in preds[k]), default=0.0)
        end[k] = start[k] + w[k]
    return max(end.values(), default=0.0), start, end


@dataclass
class Latency:
    cycles: float
    seconds: float
    breakdown: dict  # subgraph id -> share of the summed per-subgraph latencies
    subgraph_cycles: dict


def estimate_latency(g: Graph, p=None, arch: ArchSpec | None = None, cm: CostModel | None = None, etype="bf16") -> Latency:
    arch = arch or ArchSpec()
    cm = cm or CostModel()
    if p is not None:
        missing = [k for k in g.kernels if k not in p.coords]
        if missing:
            raise ExecError(f"{len(missing)} kernels are unplaced, e.g. {missing[0]}")
    w = kernel_weights(g, cm, arch, etype, p)
    total, _, _ = _longest(g, w)
    per = {}
    for s in g.subgraphs:
        per[s.id] = _longest(g, w, set(s.kernels))[0]
    denom = sum(per.values()) or 1.0
    return Latency(total, total / arch.clock_hz, {k: v / denom for k, v in per.items()}, per)


def members_latency(g: Graph, members, p=None, arch: ArchSpec | None = None, cm: CostModel | None = None, etype="bf16") -> float:
    """Longest path through ``members`` alone, e.g. one sub-network."""
    arch = arch or ArchSpec()
    w = kernel_weights(g, cm or CostModel(), arch, etype, p)
    return _longest(g, w, set(members))[0]


# --------------------------------------------------------------------------
# reports


@dataclass
class ExecTrace:
    outputs: dict
    events: list  # (kernel, start_cycle, end_cycle)
    net_bytes: dict
    net_kinds: dict
    dram_read_bytes: int
    dram_write_bytes: int
    macs: int = 0  # counted during execution


def _net_bytes(n: Net, etype: EType) -> int:
    width = 4 if n.precision == "acc" else etype.nbytes
    return math.prod(n.shape) * width


def run(g: Graph, inputs: dict, etype="fp32", arch: ArchSpec | None = None, cm: CostModel | None = None) -> ExecTrace:
    """``execute`` plus modeled fire events and byte counts."""
    e = as_etype(etype)
    arch = arch or ArchSpec()
    stats: dict = {}
    outputs = execute(g, inputs, e, stats)
    w = kernel_weights(g, cm or CostModel(), arch, e)
    _, start, end = _longest(g, w)
    events = [(k, start[k], end[k]) for k in g.topo_order()]
    nb = {n.id: _net_bytes(n, e) for n in g.nets.values()}
    kinds = {n.id: n.kind for n in g.nets.values()}
    rd = sum(nb[n.id] for n in g.external_nets("external_in"))
    wr = sum(nb[n.id] for n in g.external_nets("external_out"))
    return ExecTrace(outputs, events, nb, kinds, rd, wr, stats.get("macs", 0))


def traffic_report(trace: ExecTrace) -> dict:
    on_chip: dict[str, int] = {}
    dram = 0
    for nid, b in trace.net_bytes.items():
        kind = trace.net_kinds[nid]
        if kind not in EXTERNAL:
            on_chip[kind] = on_chip.get(kind, 0) + b
        else:
            dram += b
    return {
        "dram_read_bytes": trace.dram_read_bytes,
        "dram_write_bytes": trace.dram_write_bytes,
        # DRAM-facing bytes beyond the model inputs and outputs
        "intermediate_dram_bytes": dram - trace.dram_read_bytes - trace.dram_write_bytes,
        "on_chip_bytes": dict(sorted(on_chip.items())),
    }


def gmio_channels(g: Graph) -> int:
    """Distinct DRAM slices: identical reads share one broadcast channel."""
    count = 0
    for n in g.external_nets("external_in"):
        count += len({_key(c.src) for c in n.consumers}) or 1
    for n in g.external_nets("external_out"):
        count += len({_key(p.dst) for p in n.producers}) or 1
    return count


def _key(box) -> str:
    return repr(box)


def memtile_ids(g: Graph) -> set:
    return {m for n in g.nets.values() for m in n.memtile_ids}


def _pct(x: int, total: int) -> int:
    return int(math.floor(100 * x / total + 0.5)) if total else 0


def resource_report(g: Graph, p=None, arch: ArchSpec | None = None) -> dict:
    arch = arch or ArchSpec()
    per = {s.id: len(s.kernels) for s in g.subgraphs}
    engines = len(g.kernels)
    mts = len(memtile_ids(g))
    gm = gmio_channels(g) if g.nets else 0
    return {
        "engines_per_subgraph": per,
        "engines": engines,
        "memtiles": mts,
        "gmio": gm,
        "utilization_pct": {
            "engines": _pct(engines, arch.num_engines),
            "memtiles": _pct(mts, arch.memtile_total),
            "gmio": _pct(gm, arch.gmio_total),
        },
        "placed": p is not None,
    }


def error_metrics(y, ref) -> dict:
    """Relative L2 and max-abs error of ``y`` against ``ref`` (float64)."""
    a = np.asarray(y, np.float64)
    b = np.asarray(ref, np.float64)
    if a.shape != b.shape:
        raise ExecError(f"cannot compare shapes {a.shape} and {b.shape}")
    denom = float(np.linalg.norm(b))
    diff = float(np.linalg.norm(a - b))
    return {
        "rel_l2": diff / denom if denom else diff,
        "max_abs": float(np.max(np.abs(a - b))) if a.size else 0.0,
    }
