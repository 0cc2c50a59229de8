"""Per-kernel compute functions run by the executor.

Each takes the kernel's assembled input buffers (already rounded to the
operand element type) and its constants, and returns the float32 result
before epilogues.
"""

from __future__ import annotations

import numpy as np

from tilegraph.numerics import silu, tanh_approx
from tilegraph.ops.reference import adaptive_avg, conv_core, max_pool, mmul_tiled


def _conv(bufs, params, consts):
    return conv_core(bufs["in"], consts[params["w"]], params["stride"], params["padding"])


def _gemm(bufs, params, consts):
    return mmul_tiled(bufs["a"], consts[params["w"]], bufs.get("cas"))


def _sum2(bufs, params, consts):
    return (bufs["in0"] + bufs["in1"]).astype(np.float32)


def _mul(bufs, params, consts):
    return (bufs["in0"] * bufs["in1"]).astype(np.float32)


def _add_tanh(bufs, params, consts):
    return tanh_approx((bufs["in0"] + bufs["in1"]).astype(np.float32))


def _maxpool(bufs, params, consts):
    return max_pool(bufs["in"], params["kernel"], params["stride"], params["padding"])


def _aap(bufs, params, consts):
    return adaptive_avg(bufs["in"], params["out_shape"])


def _silu(bufs, params, consts):
    return silu(bufs["in"])


def _tanh(bufs, params, consts):
    return tanh_approx(bufs["in"])


def _bias(bufs, params, consts):
    return (bufs["in"] + consts[params["const"]]).astype(np.float32)


def _scale(bufs, params, consts):
    return (bufs["in"] * consts[params["const"]]).astype(np.float32)


KERNEL_FUNCS = {
    "conv2d": _conv,
    "conv3d": _conv,
    "gemm": _gemm,
    "adder": _sum2,
    "add": _sum2,
    "mul": _mul,
    "add_tanh": _add_tanh,
    "maxpool2d": _maxpool,
    "aap2d": _aap,
    "aap3d": _aap,
    "silu": _silu,
    "tanh": _tanh,
    "bias": _bias,
    "scale": _scale,
}

# weight-like constants that are rounded to the operand type
WEIGHT_PARAMS = ("w",)


def apply_epilogue(x: np.ndarray, ep: dict, consts: dict) -> np.ndarray:
    op = ep["op"]
    if op == "silu":
        return silu(x)
    if op == "tanh":
        return tanh_approx(x)
    if op == "add_const":
        return (x + consts[ep["const"]]).astype(np.float32)
    if op == "mul_const":
        return (x * consts[ep["const"]]).astype(np.float32)
    raise ValueError(f"unknown epilogue {op}")


def unary_as_epilogue(kernel) -> dict:
    """Epilogue record equivalent to a standalone elementwise kernel."""
    kind = kernel.op_kind
    if kind in ("silu", "tanh"):
        return {"op": kind}
    if kind == "bias":
        return {"op": "add_const", "const": kernel.params["const"]}
    if kind == "scale":
        return {"op": "mul_const", "const": kernel.params["const"]}
    raise ValueError(f"{kind} is not an elementwise unary op")
