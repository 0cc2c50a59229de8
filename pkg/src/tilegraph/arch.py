"""Target array description: grid geometry, per-tile memory, ports and rates."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

Coord = tuple[int, int]


class ArchError(ValueError):
    """Raised for malformed or inconsistent architecture descriptions."""


def _default_macs() -> dict[str, int]:
    return {"bf16": 128, "int8": 256, "fp32": 32}


@dataclass(frozen=True)
class ArchSpec:
    """Tiled array description.

    Defaults describe a VE2802-class device: a 38x8 engine grid with 64 KB of
    local data memory per engine. ``memtile_total`` and ``gmio_total`` are not
    published; 76 and 48 reproduce the reported 14% / 35% utilisations.
    """

    columns: int = 38
    rows: int = 8
    aie_local_mem: int = 65536
    aie_mem_banks: int = 4
    memtile_capacity: int = 524288
    memtile_banks: int = 16
    memtile_in_ports: int = 6
    memtile_out_ports: int = 6
    memtile_total: int = 76
    gmio_total: int = 48
    cascade_max_length: int = 38
    macs_per_cycle: Mapping[str, int] = field(default_factory=_default_macs)
    stream_channels_per_edge: int = 6
    clock_hz: float = 1.25e9

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            if f.name == "macs_per_cycle":
                continue
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ArchError(f"{f.name}: expected a number, got {v!r}")
            if v <= 0:
                raise ArchError(f"{f.name}: must be positive, got {v}")
        if self.cascade_max_length > self.columns:
            raise ArchError(
                f"cascade_max_length: {self.cascade_max_length} exceeds columns ({self.columns})"
            )
        macs = {str(k).lower(): v for k, v in dict(self.macs_per_cycle).items()}
        for k, v in macs.items():
            if not isinstance(v, int) or v <= 0:
                raise ArchError(f"macs_per_cycle[{k}]: must be a positive integer")
        if "bf16" not in macs:
            raise ArchError("macs_per_cycle: missing bf16 entry")
        object.__setattr__(self, "macs_per_cycle", macs)

    @property
    def num_engines(self) -> int:
        return self.columns * self.rows

    def in_grid(self, tile: Coord) -> bool:
        c, r = tile
        return 0 <= c < self.columns and 0 <= r < self.rows

    def macs_for(self, etype: str) -> int:
        return self.macs_per_cycle.get(etype.lower(), self.macs_per_cycle["bf16"])

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["macs_per_cycle"] = dict(self.macs_per_cycle)
        return d


def load_arch(document: str | Mapping[str, Any] | None = None) -> ArchSpec:
    """Build an ArchSpec from a JSON string, a mapping, or ``None`` (defaults).

    Unknown keys are rejected so typos do not silently fall back to defaults.
    """
    if document is None:
        data: dict[str, Any] = {}
    elif isinstance(document, Mapping):
        data = dict(document)
    else:
        text = document.strip()
        if not text:
            data = {}
        else:
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ArchError(f"cannot parse architecture document: {exc}") from exc
        if not isinstance(data, dict):
            raise ArchError("architecture document must be a JSON object")
    known = {f.name for f in dataclasses.fields(ArchSpec)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ArchError(f"unknown architecture field(s): {', '.join(unknown)}")
    return ArchSpec(**data)


def load_arch_file(path: str | os.PathLike | None = None) -> ArchSpec:
    """Read an architecture file; falls back to ``$TILEGRAPH_ARCH`` then defaults."""
    if path is None:
        path = os.environ.get("TILEGRAPH_ARCH")
        if not path:
            return ArchSpec()
    p = Path(path)
    if not p.exists():
        raise ArchError(f"architecture file not found: {p}")
    return load_arch(p.read_text())


def tile_neighbors(arch: ArchSpec, tile: Coord) -> set[Coord]:
    if not arch.in_grid(tile):
        raise ArchError(f"tile {tile} outside {arch.columns}x{arch.rows} grid")
    c, r = tile
    cand = [(c - 1, r), (c + 1, r), (c, r - 1), (c, r + 1)]
    return {t for t in cand if arch.in_grid(t)}


def manhattan(a: Coord, b: Coord) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])
