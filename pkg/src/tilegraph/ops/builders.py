"""Subgraph builders: scale each operator across engines.

A builder returns a :class:`Block` holding the kernels and intra-layer nets
of one layer, plus two interface lists: which box of each logical input every
kernel buffer needs (``in_reqs``) and which box of the logical output every
output kernel produces (``out_pieces``). :func:`connect` turns those into
nets.

Builders emit L1-fused kernels by default (``fused=True``); with
``fused=False`` every elementwise epilogue becomes its own kernel, which is
what the fusion passes start from.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from tilegraph.arch import ArchSpec
from tilegraph.graph import Graph, Kernel, Net, Port, Subgraph
from tilegraph.ops.reference import (
    ConvParams,
    GemmParams,
    PoolParams,
    RnnParams,
    ShapeError,
    split_bounds,
)

DATA_BYTES = 2  # bf16 storage on the device
ACC_BYTES = 4


class PartitionError(ValueError):
    """A shard does not fit an engine, or a cascade chain is too long."""


# --------------------------------------------------------------------------
# boxes


def full_box(shape) -> list:
    return [[0, int(n)] for n in shape]


def box_shape(box) -> tuple:
    return tuple(hi - lo for lo, hi in box)


def intersect(a, b):
    out = [[max(x0, y0), min(x1, y1)] for (x0, x1), (y0, y1) in zip(a, b)]
    return out if all(lo < hi for lo, hi in out) else None


def flat_interval(box, shape) -> tuple[int, int]:
    """C-order flat range of ``box``; raises if the box is not contiguous."""
    ext = box_shape(box)
    partial = [i for i, (e, n) in enumerate(zip(ext, shape)) if e != n]
    if partial:
        first = partial[0]
        if any(e != 1 for e in ext[:first]) or any(e != n for e, n in zip(ext[first + 1:], shape[first + 1:])):
            raise ShapeError(f"box {box} is not contiguous in {shape}")
    lo = int(np.ravel_multi_index(tuple(b[0] for b in box), shape)) if len(shape) else 0
    return lo, lo + math.prod(ext)


def firings_of(shape) -> int:
    """Firings per inference: spatial tensors stream one row per firing."""
    return int(shape[-2]) if len(shape) >= 3 else 1


def scratch_bytes(buffers: list[tuple[tuple, int, int]], out_shape, out_bytes: int) -> int:
    """Double-buffered per-firing windows. ``buffers`` holds (shape, bytes/elem, rows)."""
    total = 0
    for shape, nbytes, rows in buffers:
        f = firings_of(shape)
        total += math.ceil(math.prod(shape) * nbytes / f) * min(rows, f)
    total += math.ceil(math.prod(out_shape) * out_bytes / firings_of(out_shape))
    return 2 * total


# --------------------------------------------------------------------------
# blocks


@dataclass
class Req:
    kernel: str
    buffer: str
    box: list  # in logical-input coordinates
    dst: list  # in buffer coordinates


@dataclass
class Piece:
    kernel: str
    box: list  # in logical-output coordinates


@dataclass
class Block:
    subgraph: Subgraph
    kind: str
    kernels: list = field(default_factory=list)
    nets: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    in_shapes: dict = field(default_factory=dict)
    in_reqs: dict = field(default_factory=dict)
    out_shape: tuple = ()
    out_pieces: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def id(self) -> str:
        return self.subgraph.id

    def kernel(self, kid: str) -> Kernel:
        for k in self.kernels:
            if k.id == kid:
                return k
        raise KeyError(kid)

    def add(self, k: Kernel) -> Kernel:
        k.subgraph = self.id
        self.kernels.append(k)
        self.subgraph.kernels.append(k.id)
        return k

    def net(self, kind: str, src: str, dst: str, buffer: str, shape, precision: str = "data") -> Net:
        port = f"{buffer}.0"
        nbytes = ACC_BYTES if precision == "acc" else DATA_BYTES
        total = math.prod(shape) * nbytes
        f = firings_of(shape)
        n = Net(
            id=f"{src}->{dst}",
            kind=kind,
            producers=[Port(src, "out")],
            consumers=[Port(dst, port, buffer, full_box(shape), full_box(shape))],
            payload_bytes=max(1, math.ceil(total / f)),
            firings=f,
            shape=tuple(shape),
            precision=precision,
        )
        self.nets.append(n)
        return n

    def require(self, name: str, kernel: str, buffer: str, box, dst=None) -> None:
        dst = dst if dst is not None else full_box(box_shape(box))
        self.in_reqs.setdefault(name, []).append(Req(kernel, buffer, [list(b) for b in box], dst))


def _new_block(sid: str, layer_name: str, kind: str, network: str = "") -> Block:
    return Block(Subgraph(id=sid, layer_name=layer_name or sid, network=network), kind)


def _finish(block: Block, root: str, ops: list[dict], fused: bool) -> str:
    """Attach elementwise ops after ``root``: as epilogues, or as kernels."""
    if not ops:
        return root
    rk = block.kernel(root)
    if fused:
        rk.fused_epilogues.extend(dict(o) for o in ops)
        return root
    prev = rk
    for o in ops:
        kind = {"silu": "silu", "tanh": "tanh", "add_const": "bias", "mul_const": "scale"}[o["op"]]
        params = {"const": o["const"]} if "const" in o else {}
        shape = prev.out_shape
        k = block.add(
            Kernel(
                id=f"{root}.{kind}",
                op_kind=kind,
                params=params,
                inputs={"in": shape},
                out_shape=shape,
                scratch_bytes=scratch_bytes([(shape, DATA_BYTES, 1)], shape, DATA_BYTES),
            )
        )
        block.net("local_buffer", prev.id, k.id, "in", shape)
        prev = k
    return prev.id


def _adder_tree(block: Block, leaves: list[str], shape, prefix: str) -> str:
    level = list(leaves)
    n = 0
    while len(level) > 1:
        nxt = []
        for a, b in zip(level[0::2], level[1::2]):
            kid = f"{prefix}.add{n}"
            n += 1
            block.add(
                Kernel(
                    id=kid,
                    op_kind="adder",
                    inputs={"in0": shape, "in1": shape},
                    out_shape=shape,
                    scratch_bytes=scratch_bytes([(shape, ACC_BYTES, 1)] * 2, shape, ACC_BYTES),
                )
            )
            block.net("stream", a, kid, "in0", shape, "acc")
            block.net("stream", b, kid, "in1", shape, "acc")
            nxt.append(kid)
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def _check_fit(k: Kernel, arch: ArchSpec) -> bool:
    return k.weight_bytes + k.scratch_bytes <= arch.aie_local_mem


# --------------------------------------------------------------------------
# convolution


def _conv_kernel_footprint(p: ConvParams, si: int, so: int, fs: int) -> int:
    ci, co = p.c_in // si, p.c_out // so
    lead = (max(p.frames, 1) // fs,) if p.frames else ()
    in_shape = lead + (ci,) + tuple(p.in_shape)
    out_shape = lead + (co,) + tuple(p.out_shape)
    w = co * ci * p.kernel_volume * DATA_BYTES
    out_b = ACC_BYTES if si > 1 else DATA_BYTES
    return w + scratch_bytes([(in_shape, DATA_BYTES, p.kernel[-2])], out_shape, out_b)


def smallest_conv_split(p: ConvParams, arch: ArchSpec) -> tuple[int, int] | None:
    best = None
    for si in _divisors(p.c_in):
        for so in _divisors(p.c_out):
            if _conv_kernel_footprint(p, si, so, p.frame_splits) <= arch.aie_local_mem:
                cand = (si * so + (si - 1) * so, si, so)
                if best is None or cand < best:
                    best = cand
    return None if best is None else (best[1], best[2])


def _divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


def build_conv_subgraph(
    p: ConvParams,
    arch: ArchSpec | None = None,
    *,
    w=None,
    b=None,
    sid: str = "conv",
    layer_name: str = "",
    network: str = "",
    fused: bool = True,
) -> Block:
    arch = arch or ArchSpec()
    w = np.zeros(p.weight_shape, np.float32) if w is None else np.asarray(w, np.float32)
    if w.shape != p.weight_shape:
        raise ShapeError(f"conv weights {w.shape} do not match {p.weight_shape}")
    si, so = p.partition
    fs = p.frame_splits
    if _conv_kernel_footprint(p, si, so, fs) > arch.aie_local_mem:
        best = smallest_conv_split(p, arch)
        hint = f"; smallest feasible split is {best}" if best else "; no channel split fits"
        raise PartitionError(f"{sid}: conv shard with partition {p.partition} exceeds local memory{hint}")

    kind = f"conv{p.dims}d"
    blk = _new_block(sid, layer_name, "conv", network)
    blk.info = {"in_splits": si, "out_splits": so, "frame_splits": fs, "dims": p.dims}
    ci, co = p.c_in // si, p.c_out // so
    nf = max(p.frames, 1) // fs
    lead = (nf,) if p.frames else ()
    in_buf = lead + (ci,) + tuple(p.in_shape)
    out_part = lead + (co,) + tuple(p.out_shape)
    blk.in_shapes["x"] = p.input_tensor_shape
    blk.out_shape = p.output_tensor_shape
    spatial_in = full_box(p.in_shape)
    spatial_out = full_box(p.out_shape)
    out_bytes = ACC_BYTES if si > 1 else DATA_BYTES

    for f in range(fs):
        fbox = [[f * nf, (f + 1) * nf]] if p.frames else []
        for o in range(so):
            leaves = []
            for i in range(si):
                kid = f"{sid}.k{f}_{i}_{o}"
                wkey = f"{kid}.w"
                blk.constants[wkey] = np.ascontiguousarray(w[o * co:(o + 1) * co, i * ci:(i + 1) * ci])
                blk.add(
                    Kernel(
                        id=kid,
                        op_kind=kind,
                        params={"w": wkey, "stride": list(p.stride), "padding": list(p.padding)},
                        inputs={"in": in_buf},
                        out_shape=out_part,
                        weight_bytes=co * ci * p.kernel_volume * DATA_BYTES,
                        scratch_bytes=scratch_bytes([(in_buf, DATA_BYTES, p.kernel[-2])], out_part, out_bytes),
                        macs=nf * math.prod(p.out_shape) * co * ci * p.kernel_volume,
                    )
                )
                blk.require("x", kid, "in", fbox + [[i * ci, (i + 1) * ci]] + spatial_in)
                leaves.append(kid)
            root = _adder_tree(blk, leaves, out_part, f"{sid}.r{f}_{o}") if si > 1 else leaves[0]
            ops = []
            if p.has_bias and b is not None:
                bkey = f"{sid}.b{o}"
                blk.constants[bkey] = np.asarray(b, np.float32)[o * co:(o + 1) * co].reshape((co,) + (1,) * p.dims)
                ops.append({"op": "add_const", "const": bkey})
            if p.fuse_silu:
                ops.append({"op": "silu"})
            last = _finish(blk, root, ops, fused)
            blk.out_pieces.append(Piece(last, fbox + [[o * co, (o + 1) * co]] + spatial_out))
    return blk


# --------------------------------------------------------------------------
# GEMM


def build_gemm_subgraph(
    p: GemmParams,
    arch: ArchSpec | None = None,
    *,
    w=None,
    bias=None,
    sid: str = "gemm",
    layer_name: str = "",
    network: str = "",
    fused: bool = True,
) -> Block:
    arch = arch or ArchSpec()
    if p.cascade_len > arch.cascade_max_length:
        raise PartitionError(
            f"{sid}: cascade chain of {p.cascade_len} kernels exceeds the {arch.cascade_max_length}-column "
            f"limit; slice K across more clusters (k_clusters >= {math.ceil(p.k_tiles / arch.cascade_max_length)})"
        )
    w = np.zeros((p.K, p.N), np.float32) if w is None else np.asarray(w, np.float32)
    if w.shape != (p.K, p.N):
        raise ShapeError(f"GEMM weights {w.shape} do not match ({p.K}, {p.N})")
    blk = _new_block(sid, layer_name, "gemm", network)
    blk.info = {"k_clusters": p.k_clusters, "cascade_len": p.cascade_len}
    blk.in_shapes["a"] = (p.M, p.K)
    blk.out_shape = (p.M, p.N)
    out = (p.M, p.N)
    leaves = []
    for c, chain in enumerate(p.k_slices()):
        prev = None
        for j, (lo, hi) in enumerate(chain):
            kid = f"{sid}.g{c}_{j}"
            wkey = f"{kid}.w"
            blk.constants[wkey] = np.ascontiguousarray(w[lo:hi])
            inputs = {"a": (p.M, hi - lo)}
            bufs = [((p.M, hi - lo), DATA_BYTES, 1)]
            if prev is not None:
                inputs["cas"] = out
                bufs.append((out, ACC_BYTES, 1))
            k = blk.add(
                Kernel(
                    id=kid,
                    op_kind="gemm",
                    params={"w": wkey, "k_range": [lo, hi]},
                    inputs=inputs,
                    out_shape=out,
                    weight_bytes=(hi - lo) * p.N * DATA_BYTES,
                    scratch_bytes=scratch_bytes(bufs, out, ACC_BYTES),
                    macs=p.M * (hi - lo) * p.N,
                )
            )
            blk.require("a", kid, "a", [[0, p.M], [lo, hi]])
            if prev is not None:
                blk.net("cascade", prev, kid, "cas", out, "acc")
            prev = k.id
        leaves.append(prev)
    root = _adder_tree(blk, leaves, out, f"{sid}.tree") if len(leaves) > 1 else leaves[0]
    ops = []
    if bias is not None:
        bkey = f"{sid}.bias"
        blk.constants[bkey] = np.asarray(bias, np.float32).reshape(p.N)
        ops.append({"op": "add_const", "const": bkey})
    if p.fuse_epilogue:
        ops.append({"op": p.fuse_epilogue})
    last = _finish(blk, root, ops, fused)
    blk.out_pieces.append(Piece(last, full_box(out)))
    return blk


# --------------------------------------------------------------------------
# pooling and elementwise


def _shard_boxes(shape, splits) -> list[list]:
    splits = (splits,) if isinstance(splits, int) else tuple(splits)
    if len(splits) > len(shape):
        raise ShapeError("more split axes than tensor axes")
    axes = []
    for n, s in zip(shape, splits):
        b = split_bounds(n, s)
        axes.append([[b[i], b[i + 1]] for i in range(s)])
    tail = full_box(shape[len(splits):])
    return [list(combo) + tail for combo in itertools.product(*axes)]


BINARY = ("mul", "add", "add_tanh")
UNARY = ("silu", "tanh")
POOLS = ("maxpool2d", "aap2d", "aap3d")


def build_simple_subgraph(
    op_kind: str,
    params,
    width=1,
    arch: ArchSpec | None = None,
    *,
    sid: str | None = None,
    layer_name: str = "",
    network: str = "",
) -> Block:
    """Shard a pooling or elementwise operator across ``width`` kernels.

    ``width`` is an int (split the leading axis) or a tuple of splits over the
    leading axes. Pooling ``params`` is a PoolParams; elementwise ops take
    ``{"shape": ...}``.
    """
    arch = arch or ArchSpec()
    sid = sid or op_kind
    blk = _new_block(sid, layer_name, "pool" if op_kind in POOLS else "eltwise", network)
    if op_kind in POOLS:
        p: PoolParams = params
        want = {"maxpool2d": ("max", 2), "aap2d": ("adaptive_avg", 2), "aap3d": ("adaptive_avg", 3)}[op_kind]
        if (p.kind, p.dims) != want:
            raise ShapeError(f"{op_kind} needs a {want[0]} {want[1]}-D PoolParams")
        in_shape, out_shape = p.input_tensor_shape, p.output_tensor_shape
        kparams = (
            {"kernel": list(p.kernel), "stride": list(p.stride), "padding": list(p.padding)}
            if p.kind == "max"
            else {"out_shape": list(p.out_shape)}
        )
        rows = p.kernel[-2] if p.kind == "max" else max(1, -(-p.in_shape[-2] // p.out_shape[-2]) + 1)
        names = ("x",)
    elif op_kind in UNARY + BINARY:
        in_shape = out_shape = tuple(params["shape"])
        kparams = {}
        rows = 1
        names = ("a", "b") if op_kind in BINARY else ("x",)
    else:
        raise ShapeError(f"build_simple_subgraph does not handle {op_kind}")

    nsplit = 1 if isinstance(width, int) else len(width)
    for name in names:
        blk.in_shapes[name] = in_shape
    blk.out_shape = out_shape
    blk.info = {"width": width}
    for n, box in enumerate(_shard_boxes(in_shape, width)):
        lead = box[:nsplit]
        ibuf = box_shape(box)
        obox = lead + full_box(out_shape[nsplit:])
        obuf = box_shape(obox)
        kid = f"{sid}.s{n}"
        bufnames = ("in0", "in1") if op_kind in BINARY else ("in",)
        k = Kernel(
            id=kid,
            op_kind=op_kind,
            params=dict(kparams),
            inputs={b: ibuf for b in bufnames},
            out_shape=obuf,
            scratch_bytes=scratch_bytes([(ibuf, DATA_BYTES, rows)] * len(bufnames), obuf, DATA_BYTES),
        )
        if not _check_fit(k, arch):
            raise PartitionError(f"{sid}: shard {ibuf} exceeds local memory; increase width")
        blk.add(k)
        for name, b in zip(names, bufnames):
            blk.require(name, kid, b, box)
        blk.out_pieces.append(Piece(kid, obox))
    return blk


# --------------------------------------------------------------------------
# RNN


def build_rnn_subgraph(
    p: RnnParams,
    arch: ArchSpec | None = None,
    *,
    sid: str = "rnn",
    layer_name: str = "",
    network: str = "",
    fused: bool = True,
    zero_state: bool = True,
    outputs: str = "last",
) -> Block:
    """Fully unrolled RNN: per step an input GEMM, a recurrent GEMM and an add
    kernel carrying tanh. With a zero initial state the first step is a lone
    GEMM with bias and tanh epilogues."""
    arch = arch or ArchSpec()
    if outputs not in ("last", "all"):
        raise ValueError("outputs must be 'last' or 'all'")
    H, I, T = p.hidden_size, p.input_size, p.seq_len
    blk = _new_block(sid, layer_name, "rnn", network)
    blk.info = {"seq_len": T, "zero_state": zero_state}
    blk.in_shapes["x"] = (T, I)
    if not zero_state:
        blk.in_shapes["h0"] = (1, H)
    blk.out_shape = (1, H) if outputs == "last" else (T, H)
    vec = (1, H)
    blk.constants[f"{sid}.w_ih"] = np.ascontiguousarray(np.asarray(p.w_ih, np.float32).T)
    blk.constants[f"{sid}.w_hh"] = np.ascontiguousarray(np.asarray(p.w_hh, np.float32).T)
    blk.constants[f"{sid}.bias"] = (np.asarray(p.b_ih, np.float32) + np.asarray(p.b_hh, np.float32)).astype(np.float32)

    def gemm(kid, K, wkey):
        return blk.add(
            Kernel(
                id=kid,
                op_kind="gemm",
                params={"w": wkey, "k_range": [0, K]},
                inputs={"a": (1, K)},
                out_shape=vec,
                weight_bytes=K * H * DATA_BYTES,
                scratch_bytes=scratch_bytes([((1, K), DATA_BYTES, 1)], vec, DATA_BYTES),
                macs=K * H,
            )
        )

    h_prev = None
    for t in range(T):
        ih = gemm(f"{sid}.t{t}.ih", I, f"{sid}.w_ih")
        blk.require("x", ih.id, "a", [[t, t + 1], [0, I]])
        bias_ops = [{"op": "add_const", "const": f"{sid}.bias"}]
        if t == 0 and zero_state:
            h = _finish(blk, ih.id, bias_ops + [{"op": "tanh"}], fused)
        else:
            x_end = _finish(blk, ih.id, bias_ops, fused)
            hh = gemm(f"{sid}.t{t}.hh", H, f"{sid}.w_hh")
            if h_prev is None:
                blk.require("h0", hh.id, "a", full_box(vec))
            else:
                blk.net("stream", h_prev, hh.id, "a", vec)
            add = blk.add(
                Kernel(
                    id=f"{sid}.t{t}.add",
                    op_kind="add",
                    inputs={"in0": vec, "in1": vec},
                    out_shape=vec,
                    scratch_bytes=scratch_bytes([(vec, DATA_BYTES, 1)] * 2, vec, DATA_BYTES),
                )
            )
            blk.net("stream", x_end, add.id, "in0", vec)
            blk.net("stream", hh.id, add.id, "in1", vec)
            h = _finish(blk, add.id, [{"op": "tanh"}], fused)
        if outputs == "all":
            blk.out_pieces.append(Piece(h, [[t, t + 1], [0, H]]))
        h_prev = h
    if outputs == "last":
        blk.out_pieces.append(Piece(h_prev, full_box(vec)))
    return blk


# --------------------------------------------------------------------------
# wiring


def add_block(g: Graph, blk: Block) -> None:
    g.subgraphs.append(blk.subgraph)
    for k in blk.kernels:
        g.add_kernel(k)
    for n in blk.nets:
        g.add_net(n)
    g.constants.update(blk.constants)


def _port_name(taken: set, kid: str, buffer: str) -> str:
    i = 0
    while (kid, f"{buffer}.{i}") in taken:
        i += 1
    taken.add((kid, f"{buffer}.{i}"))
    return f"{buffer}.{i}"


def _taken_ports(g: Graph) -> set:
    return {(c.kernel, c.port) for n in g.nets.values() for c in n.consumers}


def _consumer_ports(g: Graph, reqs: list[Req], piece_box, shape_src, shape_dst, flat: bool, used: set) -> list[Port]:
    ports = []
    for r in reqs:
        if flat:
            plo, phi = flat_interval(piece_box, shape_src)
            rlo, rhi = flat_interval(r.box, shape_dst)
            lo, hi = max(plo, rlo), min(phi, rhi)
            if lo >= hi:
                continue
            dlo = flat_interval(r.dst, _buf_shape(g, r))[0]
            src = [[lo - plo, hi - plo]]
            dst = [[dlo + lo - rlo, dlo + hi - rlo]]
        else:
            inter = intersect(piece_box, r.box)
            if inter is None:
                continue
            src = [[a - p0, b - p0] for (a, b), (p0, _) in zip(inter, piece_box)]
            dst = [[d0 + a - r0, d0 + b - r0] for (a, b), (r0, _), (d0, _) in zip(inter, r.box, r.dst)]
        name = _port_name(used, r.kernel, r.buffer)
        ports.append(Port(r.kernel, name, r.buffer, src, dst, flat))
    return ports


def _buf_shape(g: Graph, r: Req) -> tuple:
    return tuple(g.kernels[r.kernel].inputs[r.buffer])


def connect(
    g: Graph,
    src: Block,
    dst: Block,
    input_name: str | None = None,
    *,
    kind: str = "memtile",
    reshape: bool = False,
) -> list[Net]:
    """One net per output piece of ``src``, consumed by every overlapping
    buffer requirement of ``dst``. Shapes that differ but hold the same
    element count are matched in flattened order."""
    input_name = input_name or next(iter(dst.in_reqs))
    shape_dst = dst.in_shapes[input_name]
    shape_src = src.out_shape
    if shape_src != shape_dst:
        if math.prod(shape_src) != math.prod(shape_dst):
            raise ShapeError(f"cannot connect {src.id} {shape_src} to {dst.id}.{input_name} {shape_dst}")
        flat = True
    else:
        flat = False
    used = _taken_ports(g)
    nets = []
    for piece in src.out_pieces:
        ports = _consumer_ports(g, dst.in_reqs[input_name], piece.box, shape_src, shape_dst, flat, used)
        if not ports:
            continue
        shape = box_shape(piece.box)
        f = firings_of(shape)
        total = math.prod(shape) * DATA_BYTES
        n = Net(
            id=f"{piece.kernel}=>{dst.id}.{input_name}",
            kind=kind,
            producers=[Port(piece.kernel, "out")],
            consumers=ports,
            payload_bytes=max(1, math.ceil(total / f)),
            firings=f,
            shape=shape,
            reshape=reshape,
        )
        nets.append(g.add_net(n))
    return nets


def connect_input(g: Graph, name: str, dst: Block, input_name: str | None = None, shape=None) -> Net:
    """External input tensor ``name`` feeding ``dst`` (one GMIO channel per distinct slice)."""
    input_name = input_name or next(iter(dst.in_reqs))
    shape = tuple(shape or dst.in_shapes[input_name])
    shape_dst = dst.in_shapes[input_name]
    flat = shape != shape_dst
    used = _taken_ports(g)
    ports = _consumer_ports(g, dst.in_reqs[input_name], full_box(shape), shape, shape_dst, flat, used)
    f = firings_of(shape)
    total = math.prod(shape) * DATA_BYTES
    n = Net(
        id=f"{name}=>{dst.id}.{input_name}",
        kind="external_in",
        consumers=ports,
        payload_bytes=max(1, math.ceil(total / f)),
        firings=f,
        shape=shape,
        name=name,
    )
    return g.add_net(n)


def connect_output(g: Graph, name: str, src: Block) -> Net:
    shape = tuple(src.out_shape)
    f = firings_of(shape)
    total = math.prod(shape) * DATA_BYTES
    prods = [Port(p.kernel, "out", "out", None, [list(b) for b in p.box]) for p in src.out_pieces]
    n = Net(
        id=f"{src.id}=>{name}",
        kind="external_out",
        producers=prods,
        payload_bytes=max(1, math.ceil(total / f)),
        firings=f,
        shape=shape,
        name=name,
    )
    return g.add_net(n)


def graph_from_block(blk: Block, outputs: str = "y") -> Graph:
    """Stand-alone graph: each logical input becomes an external input."""
    g = Graph(meta={"inputs": {k: list(v) for k, v in blk.in_shapes.items()}, "outputs": {outputs: list(blk.out_shape)}})
    add_block(g, blk)
    for name in blk.in_shapes:
        connect_input(g, name, blk, name)
    connect_output(g, outputs, blk)
    from tilegraph.graph import refresh_boundaries

    refresh_boundaries(g)
    return g


def boundary_reshape(src: Block, dst: Block, input_name: str | None = None) -> bool:
    """Whether data crossing src -> dst needs a layout change on the way.

    * conv -> conv when the producer's output-channel shards do not match the
      consumer's input-channel groups;
    * GEMM -> GEMM: MMUL output tiles must be re-tiled into A-operand tiles;
    * anything -> RNN: the sequence is re-ordered into per-step feeds and
      held for the unrolled steps.
    """
    if dst.kind == "rnn":
        return True
    if src.kind == "conv" and dst.kind == "conv":
        return src.info["out_splits"] != dst.info["in_splits"] or src.info["frame_splits"] != dst.info["frame_splits"]
    if src.kind == "gemm" and dst.kind == "gemm":
        return True
    return False
