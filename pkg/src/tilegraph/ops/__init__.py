from tilegraph.ops.builders import (
    Block,
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
    graph_from_block,
)
from tilegraph.ops.reference import ConvParams, GemmParams, PoolParams, RnnParams, ShapeError

__all__ = [
    "Block",
    "ConvParams",
    "GemmParams",
    "PartitionError",
    "PoolParams",
    "RnnParams",
    "ShapeError",
    "add_block",
    "boundary_reshape",
    "build_conv_subgraph",
    "build_gemm_subgraph",
    "build_rnn_subgraph",
    "build_simple_subgraph",
    "connect",
    "connect_input",
    "connect_output",
    "graph_from_block",
]
