"""Compiler and simulator for mapping CNN/RNN inference graphs onto a tiled
vector-engine array."""

from tilegraph.arch import ArchSpec, load_arch, tile_neighbors
from tilegraph.graph import Graph, Kernel, Net, Port, Subgraph

__all__ = [
    "ArchSpec",
    "Graph",
    "Kernel",
    "Net",
    "Port",
    "Subgraph",
    "load_arch",
    "tile_neighbors",
]

__version__ = "0.1.0"
