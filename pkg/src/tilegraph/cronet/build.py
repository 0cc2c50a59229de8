"""Wire BranchNet and TrunkNet into one dataflow graph."""

from __future__ import annotations

from tilegraph.arch import ArchSpec
from tilegraph.fusion import StagingError, fuse_all
from tilegraph.graph import Graph, refresh_boundaries
from tilegraph.ops.builders import (
    PartitionError,
    add_block,
    boundary_reshape,
    build_conv_subgraph,
    build_gemm_subgraph,
    build_rnn_subgraph,
    build_simple_subgraph,
    connect,
    connect_input,
    connect_output,
)
from tilegraph.ops.reference import ConvParams, GemmParams, RnnParams
from tilegraph.cronet.model import ModelConfig, init_weights, layer_infos, load_config, output_shape, rnn_params

TITLES = {"trunk": "TrunkNet", "branch": "BranchNet"}


class CapacityError(RuntimeError):
    """The model does not fit the array with its default partitions."""


def _block(info, w: dict | None, arch: ArchSpec):
    spec, p = info.spec, info.params
    title = f"{TITLES[info.network]} {spec.op.upper()}"
    kw = dict(sid=spec.name, layer_name=title, network=info.network)
    if isinstance(p, ConvParams):
        return build_conv_subgraph(p, arch, w=w["w"], b=w.get("b"), fused=False, **kw)
    if isinstance(p, GemmParams):
        return build_gemm_subgraph(p, arch, w=w["w"], bias=w.get("b"), fused=False, **kw)
    if isinstance(p, RnnParams):
        return build_rnn_subgraph(rnn_params(info, w), arch, fused=False, **kw)
    return build_simple_subgraph(spec.op, p, spec.get("width", 1), arch, **kw)


def minimal_arch_report(g: Graph, arch: ArchSpec) -> str:
    need = len(g.kernels)
    rows = -(-need // arch.columns)
    return (
        f"model needs {need} engines, array has {arch.num_engines} "
        f"({arch.columns}x{arch.rows}); at {arch.columns} columns it needs >= {rows} rows"
    )


def build_cronet(
    size: str = "30x20",
    arch: ArchSpec | None = None,
    *,
    fuse: bool = True,
    weights: dict | None = None,
    seed: int = 0,
    model: ModelConfig | None = None,
) -> Graph:
    """Both sub-networks as parallel pipelines joined by an elementwise multiply.

    Every layer boundary starts as a memory-tile net; ``fuse`` runs L1, L2
    and L3, which is how the deployed graph is obtained.
    """
    arch = arch or ArchSpec()
    model = model or load_config(size)
    weights = init_weights(model, seed) if weights is None else weights
    g = Graph(
        meta={
            "model": model.name,
            "size": model.size,
            "seed": seed,
            "inputs": {"F": list(model.f_shape), "X": list(model.x_shape)},
            "outputs": {"U": list(output_shape(model))},
        }
    )
    blocks = {"trunk": [], "branch": []}
    try:
        for info in layer_infos(model):
            blk = _block(info, weights.get(info.name), arch)
            add_block(g, blk)
            blocks[info.network].append(blk)
        join = build_simple_subgraph(
            "mul", {"shape": output_shape(model)}, (1, model.join_width), arch, sid="MUL", layer_name="Mul", network="join"
        )
    except PartitionError as exc:
        raise CapacityError(f"default partitions do not fit this array: {exc}") from exc
    add_block(g, join)

    for name, net in (("F", "trunk"), ("X", "branch")):
        # inputs are staged on a memory tile for halo padding and fan-out
        connect_input(g, name, blocks[net][0]).reshape = True
    for net in ("trunk", "branch"):
        seq = blocks[net]
        for a, b in zip(seq, seq[1:]):
            connect(g, a, b, kind="memtile", reshape=boundary_reshape(a, b))
    connect(g, blocks["trunk"][-1], join, "a", kind="memtile")
    connect(g, blocks["branch"][-1], join, "b", kind="memtile")
    connect_output(g, "U", join)
    refresh_boundaries(g)

    if fuse:
        try:
            g = fuse_all(g, arch)
        except StagingError as exc:
            raise CapacityError(str(exc)) from exc
        if len(g.kernels) > arch.num_engines:
            raise CapacityError(minimal_arch_report(g, arch))
    return g


def case_inputs(case) -> dict:
    return {"F": case.F, "X": case.X}
