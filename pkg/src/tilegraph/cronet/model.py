"""CRONet model configuration, synthetic weights and the reference forward pass."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from tilegraph.numerics import EType, as_etype, round_to
from tilegraph.ops.reference import (
    ConvParams,
    GemmParams,
    PoolParams,
    RnnParams,
    ShapeError,
    adaptive_avgpool_ref,
    conv_ref,
    gemm_ref,
    maxpool2d_ref,
    rnn_ref,
)

SIZES = {"30x10": (10, 30), "30x20": (20, 30), "60x20": (20, 60)}  # tag -> (H, W)


def parse_size(tag: str) -> str:
    tag = str(tag).lower().replace("×", "x").replace(" ", "")
    if tag not in SIZES:
        raise ValueError(f"unknown size {tag!r}; choose one of {', '.join(SIZES)}")
    return tag


@dataclass(frozen=True)
class LayerSpec:
    name: str
    op: str  # conv2d | conv3d | maxpool2d | aap2d | aap3d | rnn | linear
    cfg: dict = field(default_factory=dict)

    def get(self, key, default=None):
        return self.cfg.get(key, default)


@dataclass(frozen=True)
class ModelConfig:
    name: str
    size: str
    x_shape: tuple  # (frames, 1, H, W)
    f_shape: tuple  # (1, depth, H, W)
    trunk: tuple
    branch: tuple
    join_width: int = 11
    version: int = 1
    notes: str = ""

    @property
    def layers(self) -> tuple:
        return tuple(self.trunk) + tuple(self.branch)

    @property
    def hw(self) -> tuple[int, int]:
        return SIZES[self.size]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "size": self.size,
            "x_shape": list(self.x_shape),
            "f_shape": list(self.f_shape),
            "trunk": [{"name": l.name, "op": l.op, **l.cfg} for l in self.trunk],
            "branch": [{"name": l.name, "op": l.op, **l.cfg} for l in self.branch],
            "join_width": self.join_width,
            "notes": self.notes,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        def layers(items):
            out = []
            for it in items:
                it = dict(it)
                out.append(LayerSpec(it.pop("name"), it.pop("op"), it))
            return tuple(out)

        m = ModelConfig(
            name=d.get("name", "cronet"),
            size=parse_size(d["size"]),
            x_shape=tuple(d["x_shape"]),
            f_shape=tuple(d["f_shape"]),
            trunk=layers(d["trunk"]),
            branch=layers(d["branch"]),
            join_width=int(d.get("join_width", 11)),
            version=int(d.get("version", 1)),
            notes=d.get("notes", ""),
        )
        check_model(m)
        return m


def asset_path(size: str) -> Path:
    return Path(str(resources.files("tilegraph.cronet") / "assets" / f"cronet_{parse_size(size)}.json"))


def load_config(size: str = "30x20", path: str | Path | None = None) -> ModelConfig:
    p = Path(path) if path else asset_path(size)
    return ModelConfig.from_dict(json.loads(p.read_text()))


# --------------------------------------------------------------------------
# shapes


@dataclass
class LayerInfo:
    spec: LayerSpec
    network: str
    params: object  # ConvParams | PoolParams | GemmParams | RnnParams
    in_shape: tuple
    out_shape: tuple
    has_bias: bool
    act: str | None

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def param_count(self) -> int:
        p = self.params
        if isinstance(p, ConvParams):
            return p.param_count
        if isinstance(p, GemmParams):
            return p.K * p.N + (p.N if self.has_bias else 0)
        if isinstance(p, RnnParams):
            h, i = p.hidden_size, p.input_size
            return h * i + h * h + (2 * h if self.has_bias else 0)
        return 0

    @property
    def macs(self) -> int:
        p = self.params
        if isinstance(p, (ConvParams, GemmParams, RnnParams)):
            return p.macs
        return 0


def _layer_info(spec: LayerSpec, network: str, shape: tuple) -> LayerInfo:
    op = spec.op
    act = spec.get("act")
    bias = bool(spec.get("bias", False))
    if op in ("conv2d", "conv3d"):
        dims = 2 if op == "conv2d" else 3
        frames = shape[0] if dims == 2 and len(shape) == 4 else 0
        c_in = shape[-dims - 1]
        p = ConvParams(
            dims=dims,
            in_shape=tuple(shape[-dims:]),
            c_in=c_in,
            c_out=spec.get("c_out"),
            kernel=tuple(spec.get("kernel")),
            stride=tuple(spec.get("stride", [1] * dims)),
            padding=tuple(spec.get("padding", [0] * dims)),
            has_bias=bias,
            fuse_silu=act == "silu",
            partition=tuple(spec.get("partition", [1, 1])),
            frames=frames,
            frame_splits=spec.get("frame_splits", 1),
        )
        return LayerInfo(spec, network, p, p.input_tensor_shape, p.output_tensor_shape, bias, act)
    if op in ("maxpool2d", "aap2d", "aap3d"):
        dims = 3 if op == "aap3d" else 2
        frames = shape[0] if len(shape) == dims + 2 else 0
        if op == "maxpool2d":
            k = tuple(spec.get("kernel"))
            s = tuple(spec.get("stride", k))
            p = PoolParams("max", dims, tuple(shape[-dims:]), shape[-dims - 1], None, k, s, 0, frames)
        else:
            out = tuple(spec.get("out_shape"))
            p = PoolParams("adaptive_avg", dims, tuple(shape[-dims:]), shape[-dims - 1], out, frames=frames)
        return LayerInfo(spec, network, p, p.input_tensor_shape, p.output_tensor_shape, False, None)
    if op == "rnn":
        seq = shape[0]
        i = math.prod(shape[1:])
        h = spec.get("hidden")
        p = RnnParams(i, h, seq)
        return LayerInfo(spec, network, p, tuple(shape), (1, h), bias, "tanh")
    if op == "linear":
        k = math.prod(shape)
        p = GemmParams(
            M=1,
            K=k,
            N=spec.get("out"),
            k_clusters=spec.get("k_clusters", 1),
            cascade_len=spec.get("cascade_len"),
            fuse_epilogue=act,
            has_bias=bias,
        )
        return LayerInfo(spec, network, p, tuple(shape), (1, p.N), bias, act)
    raise ShapeError(f"layer {spec.name}: unknown op {op}")


def layer_infos(m: ModelConfig) -> list[LayerInfo]:
    out = []
    for network, layers, shape in (("trunk", m.trunk, m.f_shape), ("branch", m.branch, m.x_shape)):
        shape = tuple(shape)
        for spec in layers:
            info = _layer_info(spec, network, shape)
            out.append(info)
            shape = info.out_shape
    return out


TRUNK_OPS = ("conv3d", "conv3d", "aap3d", "linear", "linear")
BRANCH_OPS = ("conv2d", "conv2d", "maxpool2d", "aap2d", "rnn", "linear", "linear")


def check_model(m: ModelConfig) -> None:
    if tuple(l.op for l in m.trunk) != TRUNK_OPS:
        raise ShapeError(f"trunk layers must be {TRUNK_OPS}")
    if tuple(l.op for l in m.branch) != BRANCH_OPS:
        raise ShapeError(f"branch layers must be {BRANCH_OPS}")
    H, W = m.hw
    if tuple(m.x_shape[-2:]) != (H, W) or tuple(m.f_shape[-2:]) != (H, W):
        raise ShapeError(f"inputs must be {H}x{W} for size {m.size}")
    infos = layer_infos(m)
    t_out = [i for i in infos if i.network == "trunk"][-1].out_shape
    b_out = [i for i in infos if i.network == "branch"][-1].out_shape
    if t_out != b_out:
        raise ShapeError(f"trunk output {t_out} and branch output {b_out} cannot be multiplied")


def output_shape(m: ModelConfig) -> tuple:
    return layer_infos(m)[len(m.trunk) - 1].out_shape


# --------------------------------------------------------------------------
# weights and inputs


def init_weights(m: ModelConfig, seed: int = 0) -> dict[str, dict[str, np.ndarray]]:
    """Fixed-seed synthetic weights.

    Conv and linear layers use He-uniform bounds sqrt(6 / fan_in) so the signal
    keeps its scale through the SiLU stack; the RNN uses +-1/sqrt(hidden).
    """
    rng = np.random.default_rng(seed)
    out = {}
    for info in layer_infos(m):
        p = info.params
        if isinstance(p, ConvParams):
            bound = math.sqrt(6.0 / (p.c_in * p.kernel_volume))
            w = {"w": rng.uniform(-bound, bound, p.weight_shape)}
            if info.has_bias:
                w["b"] = rng.uniform(-bound, bound, p.c_out)
        elif isinstance(p, GemmParams):
            bound = math.sqrt(6.0 / p.K)
            w = {"w": rng.uniform(-bound, bound, (p.K, p.N))}
            if info.has_bias:
                w["b"] = rng.uniform(-bound, bound, p.N)
        elif isinstance(p, RnnParams):
            bound = 1.0 / math.sqrt(p.hidden_size)
            h, i = p.hidden_size, p.input_size
            w = {
                "w_ih": rng.uniform(-bound, bound, (h, i)),
                "w_hh": rng.uniform(-bound, bound, (h, h)),
            }
            if info.has_bias:
                w["b_ih"] = rng.uniform(-bound, bound, h)
                w["b_hh"] = rng.uniform(-bound, bound, h)
        else:
            continue
        out[info.name] = {k: v.astype(np.float32) for k, v in w.items()}
    return out


def zero_weights(m: ModelConfig) -> dict:
    return {k: {n: np.zeros_like(a) for n, a in v.items()} for k, v in init_weights(m, 0).items()}


@dataclass
class MaterialCase:
    size: str
    X: np.ndarray  # material-density history, one frame per warm-up iteration
    F: np.ndarray  # load configuration
    u_shape: tuple

    def __post_init__(self):
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.F))):
            raise ValueError("X and F must be finite")


def make_case(m: ModelConfig, seed: int = 0) -> MaterialCase:
    """Synthetic inputs: densities in [0, 1], a sparse load pattern in F."""
    rng = np.random.default_rng(seed + 1)
    X = rng.uniform(0.0, 1.0, m.x_shape).astype(np.float32)
    F = np.zeros(m.f_shape, np.float32)
    flat = F.reshape(-1)
    idx = rng.choice(flat.size, size=max(1, flat.size // 20), replace=False)
    flat[idx] = rng.uniform(-1.0, 1.0, idx.size).astype(np.float32)
    return MaterialCase(m.size, X, F, output_shape(m))


def rnn_params(info: LayerInfo, w: dict) -> RnnParams:
    p = info.params
    h = p.hidden_size
    zeros = np.zeros(h, np.float32)
    return RnnParams(
        p.input_size, h, p.seq_len, w["w_ih"], w["w_hh"], w.get("b_ih", zeros), w.get("b_hh", zeros)
    )


# --------------------------------------------------------------------------
# reference forward pass


def _apply(info: LayerInfo, x: np.ndarray, w: dict | None, e: EType) -> np.ndarray:
    p = info.params
    rw = (lambda a: round_to(a, e)) if e is not EType.FP32 else (lambda a: a)
    if isinstance(p, ConvParams):
        return conv_ref(x, p, rw(w["w"]), w.get("b"))
    if isinstance(p, GemmParams):
        return gemm_ref(x.reshape(1, -1), rw(w["w"]), p, w.get("b"))
    if isinstance(p, RnnParams):
        rp = rnn_params(info, w)
        rp = RnnParams(rp.input_size, rp.hidden_size, rp.seq_len, rw(rp.w_ih), rw(rp.w_hh), rp.b_ih, rp.b_hh)
        return rnn_ref(x.reshape(p.seq_len, -1), rp)[-1:]
    if p.kind == "max":
        return maxpool2d_ref(x, p)
    return adaptive_avgpool_ref(x, p)


def reference_forward(m: ModelConfig, case: MaterialCase, etype: EType | str = "fp32", weights: dict | None = None) -> np.ndarray:
    """Layer-by-layer composition of the reference operators.

    Weights and layer outputs are rounded to ``etype``; FP32 is exact.
    """
    e = as_etype(etype)
    weights = init_weights(m, 0) if weights is None else weights
    if case.X.shape != tuple(m.x_shape) or case.F.shape != tuple(m.f_shape):
        raise ShapeError(f"case shapes {case.X.shape}, {case.F.shape} do not match the model")
    outs = {}
    infos = layer_infos(m)
    for network, x in (("trunk", case.F), ("branch", case.X)):
        y = round_to(np.asarray(x, np.float32), e)
        for info in (i for i in infos if i.network == network):
            y = round_to(_apply(info, y.reshape(info.in_shape), weights.get(info.name), e), e)
        outs[network] = y
    return round_to(outs["trunk"] * outs["branch"], e)
