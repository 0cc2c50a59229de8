"""Reference (golden) semantics for every operator.

The arithmetic primitives at the top (``conv_core``, ``mmul_tiled``,
``adaptive_avg``...) are shared with the per-kernel functions the executor
runs, so a partitioned subgraph and its reference differ only in how work is
split, never in the per-element arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from tilegraph.numerics import silu, tanh_approx

MMUL_TILE = (8, 8, 4)


class ShapeError(ValueError):
    pass


def _tuple(v, n: int) -> tuple[int, ...]:
    if isinstance(v, int):
        return (v,) * n
    t = tuple(int(x) for x in v)
    if len(t) != n:
        raise ShapeError(f"expected {n} values, got {t}")
    return t


def conv_out_dim(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


# --------------------------------------------------------------------------
# parameter records


@dataclass
class ConvParams:
    dims: int
    in_shape: tuple
    c_in: int
    c_out: int
    kernel: tuple
    stride: tuple | int = 1
    padding: tuple | int = 0
    has_bias: bool = False
    fuse_silu: bool = False
    partition: tuple = (1, 1)  # (in_channel_splits, out_channel_splits)
    frames: int = 0  # leading frame/batch axis length, 0 = none
    frame_splits: int = 1

    def __post_init__(self) -> None:
        if self.dims not in (2, 3):
            raise ShapeError("conv dims must be 2 or 3")
        self.in_shape = _tuple(self.in_shape, self.dims)
        self.kernel = _tuple(self.kernel, self.dims)
        self.stride = _tuple(self.stride, self.dims)
        self.padding = _tuple(self.padding, self.dims)
        self.partition = tuple(self.partition)
        for o in self.out_shape:
            if o < 1:
                raise ShapeError(f"non-positive conv output shape {self.out_shape}")
        si, so = self.partition
        if self.c_in % si or self.c_out % so:
            raise ShapeError(f"partition {self.partition} does not divide channels ({self.c_in}, {self.c_out})")
        if self.frame_splits > 1 and (self.frames < 1 or self.frames % self.frame_splits):
            raise ShapeError("frame_splits must divide frames")

    @property
    def out_shape(self) -> tuple:
        return tuple(
            conv_out_dim(n, k, s, p)
            for n, k, s, p in zip(self.in_shape, self.kernel, self.stride, self.padding)
        )

    @property
    def kernel_volume(self) -> int:
        return math.prod(self.kernel)

    @property
    def weight_shape(self) -> tuple:
        return (self.c_out, self.c_in) + tuple(self.kernel)

    @property
    def param_count(self) -> int:
        return self.c_out * self.c_in * self.kernel_volume + (self.c_out if self.has_bias else 0)

    @property
    def input_tensor_shape(self) -> tuple:
        lead = (self.frames,) if self.frames else ()
        return lead + (self.c_in,) + tuple(self.in_shape)

    @property
    def output_tensor_shape(self) -> tuple:
        lead = (self.frames,) if self.frames else ()
        return lead + (self.c_out,) + tuple(self.out_shape)

    @property
    def macs(self) -> int:
        return max(self.frames, 1) * math.prod(self.out_shape) * self.c_out * self.kernel_volume * self.c_in


@dataclass
class GemmParams:
    M: int
    K: int
    N: int
    k_clusters: int = 1
    cascade_len: int | None = None
    fuse_epilogue: str | None = None  # "silu" | "tanh" | None
    has_bias: bool = False
    weights_resident: bool = True
    tile: tuple = MMUL_TILE

    def __post_init__(self) -> None:
        if min(self.M, self.K, self.N, self.k_clusters) < 1:
            raise ShapeError("GEMM dimensions and k_clusters must be positive")
        if self.fuse_epilogue not in (None, "none", "silu", "tanh"):
            raise ShapeError(f"unknown GEMM epilogue {self.fuse_epilogue}")
        if self.fuse_epilogue == "none":
            self.fuse_epilogue = None
        if self.k_clusters > self.k_tiles:
            raise ShapeError(f"k_clusters={self.k_clusters} exceeds {self.k_tiles} K tiles")
        if self.cascade_len is None:
            self.cascade_len = math.ceil(self.k_tiles / self.k_clusters)
        if self.k_clusters * self.cascade_len > self.k_tiles:
            # more kernels than K tiles would leave idle engines
            raise ShapeError(
                f"{self.k_clusters}x{self.cascade_len} kernels exceed {self.k_tiles} K tiles"
            )

    @property
    def k_tiles(self) -> int:
        return math.ceil(self.K / self.tile[1])

    @property
    def param_count(self) -> int:
        return self.K * self.N + (self.N if self.has_bias else 0)

    @property
    def macs(self) -> int:
        return self.M * self.K * self.N

    def k_slices(self) -> list[list[tuple[int, int]]]:
        """K row ranges per (cluster, chain position); tiles spread as evenly as possible."""
        tk = self.tile[1]
        n_kern = self.k_clusters * self.cascade_len
        bounds = split_bounds(self.k_tiles, n_kern)
        ranges = [(bounds[i] * tk, min(bounds[i + 1] * tk, self.K)) for i in range(n_kern)]
        return [ranges[c * self.cascade_len:(c + 1) * self.cascade_len] for c in range(self.k_clusters)]


@dataclass
class PoolParams:
    kind: str  # "max" | "adaptive_avg"
    dims: int
    in_shape: tuple
    channels: int = 1
    out_shape: tuple | None = None
    kernel: tuple | int | None = None
    stride: tuple | int | None = None
    padding: tuple | int = 0
    frames: int = 0

    def __post_init__(self) -> None:
        self.in_shape = _tuple(self.in_shape, self.dims)
        if self.kind == "max":
            if self.kernel is None:
                raise ShapeError("max pooling needs a kernel size")
            self.kernel = _tuple(self.kernel, self.dims)
            self.stride = _tuple(self.stride if self.stride is not None else self.kernel, self.dims)
            self.padding = _tuple(self.padding, self.dims)
            out = tuple(
                conv_out_dim(n, k, s, p)
                for n, k, s, p in zip(self.in_shape, self.kernel, self.stride, self.padding)
            )
            if min(out) < 1:
                raise ShapeError("pooling window exceeds padded input")
            self.out_shape = out
        elif self.kind == "adaptive_avg":
            if self.out_shape is None:
                raise ShapeError("adaptive pooling needs an output shape")
            self.out_shape = _tuple(self.out_shape, self.dims)
            for o, i in zip(self.out_shape, self.in_shape):
                if not 1 <= o <= i:
                    raise ShapeError(f"adaptive output {self.out_shape} exceeds input {self.in_shape}")
        else:
            raise ShapeError(f"unknown pooling kind {self.kind}")

    @property
    def input_tensor_shape(self) -> tuple:
        lead = (self.frames,) if self.frames else ()
        return lead + (self.channels,) + tuple(self.in_shape)

    @property
    def output_tensor_shape(self) -> tuple:
        lead = (self.frames,) if self.frames else ()
        return lead + (self.channels,) + tuple(self.out_shape)


@dataclass
class RnnParams:
    input_size: int
    hidden_size: int
    seq_len: int
    w_ih: np.ndarray = field(repr=False, default=None)
    w_hh: np.ndarray = field(repr=False, default=None)
    b_ih: np.ndarray = field(repr=False, default=None)
    b_hh: np.ndarray = field(repr=False, default=None)

    def __post_init__(self) -> None:
        if self.seq_len < 1:
            raise ShapeError("seq_len must be >= 1")
        h, i = self.hidden_size, self.input_size
        if self.w_ih is None:
            self.w_ih = np.zeros((h, i), np.float32)
        if self.w_hh is None:
            self.w_hh = np.zeros((h, h), np.float32)
        if self.b_ih is None:
            self.b_ih = np.zeros(h, np.float32)
        if self.b_hh is None:
            self.b_hh = np.zeros(h, np.float32)
        for name, arr, shape in (
            ("w_ih", self.w_ih, (h, i)),
            ("w_hh", self.w_hh, (h, h)),
            ("b_ih", self.b_ih, (h,)),
            ("b_hh", self.b_hh, (h,)),
        ):
            if np.shape(arr) != shape:
                raise ShapeError(f"{name} has shape {np.shape(arr)}, expected {shape}")

    @property
    def param_count(self) -> int:
        h, i = self.hidden_size, self.input_size
        return h * i + h * h + 2 * h

    @property
    def macs(self) -> int:
        h, i = self.hidden_size, self.input_size
        return self.seq_len * (h * i + h * h)


def split_bounds(n: int, parts: int) -> list[int]:
    """Boundaries splitting ``n`` items into ``parts`` contiguous, near-equal runs."""
    if parts < 1 or parts > max(n, 1):
        raise ShapeError(f"cannot split {n} items into {parts} parts")
    return [(i * n) // parts for i in range(parts + 1)]


# --------------------------------------------------------------------------
# arithmetic primitives (shared with kernels)


def conv_core(x: np.ndarray, w: np.ndarray, stride: Sequence[int], padding: Sequence[int]) -> np.ndarray:
    """Cross-correlation of x (..., C_in, *S) with w (C_out, C_in, *K); float32 result."""
    d = w.ndim - 2
    # contiguous copies keep BLAS on one code path whatever the caller's layout
    x = np.ascontiguousarray(x, np.float32)
    w = np.ascontiguousarray(w, np.float32)
    if x.shape[-d - 1] != w.shape[1]:
        raise ShapeError(f"input has {x.shape[-d - 1]} channels, weights expect {w.shape[1]}")
    pad = [(0, 0)] * (x.ndim - d) + [(p, p) for p in padding]
    xp = np.pad(x, pad)
    ks = w.shape[2:]
    win = sliding_window_view(xp, ks, axis=tuple(range(x.ndim - d, x.ndim)))
    sl = (Ellipsis,) + tuple(slice(None, None, s) for s in stride) + (slice(None),) * d
    win = win[sl]
    # win: (..., C_in, *O, *K)
    lead = x.ndim - d - 1
    c_axis = lead
    k_axes = tuple(range(win.ndim - d, win.ndim))
    out = np.tensordot(win, w, axes=((c_axis,) + k_axes, (1,) + tuple(range(2, 2 + d))))
    # out: (..., *O, C_out) -> (..., C_out, *O)
    out = np.moveaxis(out, -1, lead)
    return np.ascontiguousarray(out, dtype=np.float32)


def mmul_tiled(a: np.ndarray, w: np.ndarray, acc: np.ndarray | None = None, tk: int = MMUL_TILE[1]) -> np.ndarray:
    """acc + a @ w, accumulated one 8-deep K step at a time in float32."""
    # contiguous operands keep BLAS on one code path whatever the caller's layout
    a = np.ascontiguousarray(a, np.float32)
    w = np.ascontiguousarray(w, np.float32)
    if a.shape[1] != w.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {w.shape}")
    out = np.zeros((a.shape[0], w.shape[1]), np.float32) if acc is None else np.array(acc, np.float32)
    for k0 in range(0, a.shape[1], tk):
        out += a[:, k0:k0 + tk] @ w[k0:k0 + tk]
    return out


def gemm_tile_count(M: int, K: int, N: int, tile: tuple = MMUL_TILE) -> int:
    tm, tk, tn = tile
    return math.ceil(M / tm) * math.ceil(K / tk) * math.ceil(N / tn)


def adder_tree(parts: list[np.ndarray]) -> np.ndarray:
    """Balanced binary reduction, pairing neighbours level by level."""
    level = [np.asarray(p, np.float32) for p in parts]
    while len(level) > 1:
        nxt = [level[i] + level[i + 1] for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def adaptive_window(i: int, n_in: int, n_out: int) -> tuple[int, int]:
    return (i * n_in) // n_out, -((-(i + 1) * n_in) // n_out)


def adaptive_avg(x: np.ndarray, out_shape: Sequence[int]) -> np.ndarray:
    x = np.asarray(x, np.float32)
    d = len(out_shape)
    res = x
    for ax_off, n_out in enumerate(out_shape):
        axis = x.ndim - d + ax_off
        n_in = res.shape[axis]
        pieces = []
        for i in range(n_out):
            lo, hi = adaptive_window(i, n_in, n_out)
            sl = [slice(None)] * res.ndim
            sl[axis] = slice(lo, hi)
            pieces.append(res[tuple(sl)].sum(axis=axis, keepdims=True, dtype=np.float32) / np.float32(hi - lo))
        res = np.concatenate(pieces, axis=axis).astype(np.float32)
    return res


def max_pool(x: np.ndarray, kernel: Sequence[int], stride: Sequence[int], padding: Sequence[int]) -> np.ndarray:
    x = np.asarray(x, np.float32)
    d = len(kernel)
    pad = [(0, 0)] * (x.ndim - d) + [(p, p) for p in padding]
    xp = np.pad(x, pad, constant_values=-np.inf)
    win = sliding_window_view(xp, tuple(kernel), axis=tuple(range(x.ndim - d, x.ndim)))
    sl = (Ellipsis,) + tuple(slice(None, None, s) for s in stride) + (slice(None),) * d
    return win[sl].max(axis=tuple(range(-d, 0))).astype(np.float32)


# --------------------------------------------------------------------------
# reference operators


def conv_ref(x, p: ConvParams, w, b=None) -> np.ndarray:
    x = np.asarray(x, np.float32)
    if x.shape != p.input_tensor_shape:
        raise ShapeError(f"conv input {x.shape} does not match {p.input_tensor_shape}")
    if np.shape(w) != p.weight_shape:
        raise ShapeError(f"conv weights {np.shape(w)} do not match {p.weight_shape}")
    # evaluate shard by shard, as the partitioned subgraph does: BLAS may
    # take a different path for a different output-channel count
    si, so = p.partition
    ci, co = p.c_in // si, p.c_out // so
    fs = p.frame_splits if p.frames else 1
    nf = max(p.frames, 1) // fs
    lead = 1 if p.frames else 0
    chan = lambda lo, hi: (slice(None),) * lead + (slice(lo, hi),)  # noqa: E731
    frames = []
    for f in range(fs):
        xf = x[f * nf:(f + 1) * nf] if p.frames else x
        groups = []
        for o in range(so):
            parts = [
                conv_core(xf[chan(i * ci, (i + 1) * ci)], w[o * co:(o + 1) * co, i * ci:(i + 1) * ci], p.stride, p.padding)
                for i in range(si)
            ]
            groups.append(adder_tree(parts))
        frames.append(np.concatenate(groups, axis=lead))
    out = np.concatenate(frames, axis=0) if p.frames else frames[0]
    if b is not None:
        bb = np.asarray(b, np.float32).reshape((-1,) + (1,) * p.dims)
        out = (out + bb).astype(np.float32)
    if p.fuse_silu:
        out = silu(out)
    return out


def gemm_ref(a, w, p: GemmParams, bias=None) -> np.ndarray:
    """Tiled product with K sliced into clusters of cascaded kernels and a
    balanced adder tree over the cluster partials."""
    a = np.asarray(a, np.float32)
    w = np.asarray(w, np.float32)
    if a.shape != (p.M, p.K) or w.shape != (p.K, p.N):
        raise ShapeError(f"GEMM operands {a.shape} @ {w.shape} do not match M,K,N={p.M},{p.K},{p.N}")
    partials = []
    for chain in p.k_slices():
        acc = None
        for lo, hi in chain:
            acc = mmul_tiled(a[:, lo:hi], w[lo:hi], acc)
        partials.append(acc)
    out = adder_tree(partials)
    if bias is not None:
        out = (out + np.asarray(bias, np.float32)).astype(np.float32)
    if p.fuse_epilogue == "silu":
        out = silu(out)
    elif p.fuse_epilogue == "tanh":
        out = tanh_approx(out)
    return out


def maxpool2d_ref(x, p: PoolParams) -> np.ndarray:
    if p.kind != "max" or p.dims != 2:
        raise ShapeError("maxpool2d_ref needs a 2-D max PoolParams")
    return max_pool(x, p.kernel, p.stride, p.padding)


def adaptive_avgpool_ref(x, p: PoolParams) -> np.ndarray:
    if p.kind != "adaptive_avg":
        raise ShapeError("adaptive_avgpool_ref needs an adaptive_avg PoolParams")
    x = np.asarray(x)
    for o, i in zip(p.out_shape, x.shape[-p.dims:]):
        if o > i:
            raise ShapeError("adaptive output larger than input")
    return adaptive_avg(x, p.out_shape)


def rnn_ref(x_seq, p: RnnParams, h0=None, act: Callable = tanh_approx) -> np.ndarray:
    """All hidden states h_t = act(W_ih x_t + b_ih + W_hh h_{t-1} + b_hh)."""
    x_seq = np.asarray(x_seq, np.float32)
    if x_seq.shape != (p.seq_len, p.input_size):
        raise ShapeError(f"RNN input {x_seq.shape} does not match ({p.seq_len}, {p.input_size})")
    h = np.zeros(p.hidden_size, np.float32) if h0 is None else np.asarray(h0, np.float32).reshape(-1)
    if h.shape != (p.hidden_size,):
        raise ShapeError("h0 has the wrong size")
    w_ih_t = np.asarray(p.w_ih, np.float32).T
    w_hh_t = np.asarray(p.w_hh, np.float32).T
    bias = (np.asarray(p.b_ih, np.float32) + np.asarray(p.b_hh, np.float32)).astype(np.float32)
    out = []
    for t in range(p.seq_len):
        pre_x = (mmul_tiled(x_seq[t:t + 1], w_ih_t) + bias).astype(np.float32)
        pre_h = mmul_tiled(h[None, :], w_hh_t)
        h = act((pre_x + pre_h).astype(np.float32))[0]
        out.append(h)
    return np.stack(out).astype(np.float32)
