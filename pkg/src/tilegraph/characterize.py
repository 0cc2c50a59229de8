"""Per-layer compute and memory accounting for a model configuration."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from tilegraph.numerics import as_etype


@dataclass
class LayerChar:
    name: str
    network: str
    op: str
    parameter_count: int
    macs: int
    weight_bytes: int
    activation_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.weight_bytes + self.activation_bytes


@dataclass
class CharReport:
    model: str
    size: str
    etype: str
    layers: list = field(default_factory=list)  # parameterized layers
    untabulated: list = field(default_factory=list)  # pooling: no weights, no MACs

    @property
    def parameter_count(self) -> int:
        return sum(l.parameter_count for l in self.layers)

    @property
    def macs(self) -> int:
        return sum(l.macs for l in self.layers)

    @property
    def weight_bytes(self) -> int:
        return sum(l.weight_bytes for l in self.layers)

    @property
    def activation_bytes(self) -> int:
        return sum(l.activation_bytes for l in self.layers)

    @property
    def total_bytes(self) -> int:
        return self.weight_bytes + self.activation_bytes

    def to_dict(self) -> dict:
        rows = []
        for l in self.layers:
            d = asdict(l)
            d["total_bytes"] = l.total_bytes
            rows.append(d)
        return {
            "model": self.model,
            "size": self.size,
            "etype": self.etype,
            "layers": rows,
            "untabulated": [dict(asdict(l), total_bytes=l.total_bytes) for l in self.untabulated],
            "totals": {
                "parameter_count": self.parameter_count,
                "macs": self.macs,
                "weight_bytes": self.weight_bytes,
                "activation_bytes": self.activation_bytes,
                "total_bytes": self.total_bytes,
            },
        }


def characterize(model, etype="bf16") -> CharReport:
    from tilegraph.cronet.model import layer_infos

    e = as_etype(etype)
    rep = CharReport(model.name, model.size, e.value)
    for info in layer_infos(model):
        row = LayerChar(
            name=info.name,
            network=info.network,
            op=info.spec.op,
            parameter_count=info.param_count,
            macs=info.macs,
            weight_bytes=info.param_count * e.nbytes,
            activation_bytes=(math.prod(info.in_shape) + math.prod(info.out_shape)) * e.nbytes,
        )
        (rep.layers if info.param_count else rep.untabulated).append(row)
    return rep


def _si(n: float, unit: str = "") -> str:
    for div, suf in ((1e6, "M"), (1e3, "K")):
        if n >= div:
            return f"{n / div:.1f}{suf}{unit}"
    return f"{n:.0f}{unit}"


def render_table(rep: CharReport) -> str:
    lines = [f"{rep.model} {rep.size} ({rep.etype})", f"{'network':8} {'layer':6} {'op':8} {'params':>8} {'MACs':>8} {'A+W':>9}"]
    for l in rep.layers:
        lines.append(
            f"{l.network:8} {l.name:6} {l.op:8} {_si(l.parameter_count):>8} {_si(l.macs):>8} {_si(l.total_bytes, 'B'):>9}"
        )
    lines.append(f"{'':8} {'total':6} {'':8} {_si(rep.parameter_count):>8} {_si(rep.macs):>8} {_si(rep.total_bytes, 'B'):>9}")
    return "\n".join(lines)
