"""Reverse-fit CRONet hyperparameters to published per-layer aggregates.

Targets are parameter counts and MAC counts as printed (for example "9K" or
"12.6M"). A count matches a printed value when it rounds to it at the
printed precision. MACs must land within a tolerance for every size.

The search is restricted to configurations that can also be deployed with
the default engine partitions (see ``DEPLOYMENT``), so the winner is both a
faithful fit and buildable.
"""

from __future__ import annotations

import bisect
import itertools
import json
import math
import re
from dataclasses import dataclass, field
from decimal import Decimal
from functools import lru_cache
from importlib import resources
from pathlib import Path

from tilegraph.cronet.model import SIZES, ModelConfig

UNITS = {"": 1, "K": 10**3, "M": 10**6, "B": 1, "KB": 10**3, "MB": 10**6}

# per-layer engine partitions; they fix several divisibility constraints
DEPLOYMENT = {
    "T1": {"partition": [1, 16]},
    "T2": {"partition": [2, 8]},
    "T3": {"width": 8},
    "T4": {"k_clusters": 4, "cascade_len": 5},
    "T5": {"k_clusters": 1, "cascade_len": 11},
    "B1": {"frame_splits": 5},
    "B2": {"partition": [1, 8], "frame_splits": 5},
    "B3": {"width": [5, 8]},
    "B4": {"width": 5},
    "B6": {"k_clusters": 1, "cascade_len": 1},
    "B7": {"k_clusters": 1, "cascade_len": 11},
}
JOIN_WIDTH = 11
RNN_ENGINES = 28  # one kernel for the first step, three for every later one
MAXPOOL = {"kernel": [2, 2], "stride": [2, 2]}


@lru_cache(maxsize=None)
def parse_display(text: str) -> tuple[Decimal, Decimal]:
    """'4.6K' -> (Decimal('4.6'), unit). The unit is an integer multiplier."""
    m = re.fullmatch(r"\s*([0-9]+(?:\.[0-9]+)?)\s*([KM]?B?)\s*", str(text))
    if not m:
        raise ValueError(f"cannot parse {text!r}")
    return Decimal(m.group(1)), Decimal(UNITS[m.group(2)])


def display_value(text: str) -> float:
    v, u = parse_display(text)
    return float(v * u)


@lru_cache(maxsize=None)
def display_range(text: str) -> tuple[int, int]:
    """Inclusive integer range that rounds (half up) to ``text``."""
    v, u = parse_display(text)
    exp = v.as_tuple().exponent
    half = Decimal(5) * Decimal(10) ** (exp - 1)
    lo = math.ceil((v - half) * u)
    hi = math.ceil((v + half) * u) - 1
    return lo, hi


def display_matches(n: int, text: str) -> bool:
    lo, hi = display_range(text)
    return lo <= n <= hi


def rel_err(n: float, text: str) -> float:
    return abs(n / _value(text) - 1.0)


@lru_cache(maxsize=None)
def _value(text: str) -> float:
    return display_value(text)


def _count_range(text: str, per: int) -> range:
    lo, hi = display_range(text)
    return range(max(1, math.ceil(lo / per)), hi // per + 1)


# --------------------------------------------------------------------------
# per-block candidates


def _out(n: int, k: int, p: int) -> int:
    return n + 2 * p - k + 1


@dataclass
class ConvFit:
    c_out: int
    kernel: tuple
    padding: tuple
    bias: bool
    out: dict  # size -> spatial output shape
    macs: dict  # size -> MACs
    err: float


def _conv_candidates(name, dims, c_in, in_shapes, table, sizes, out_div, c_max=64):
    target = table["params"][name]
    res = []
    for kernel in itertools.product(range(1, 5), repeat=dims):
        kv = math.prod(kernel)
        for bias in (False, True):
            for c_out in _count_range(target, kv * c_in + bias):
                if c_out > c_max or c_out % out_div or not display_matches(c_out * (kv * c_in + bias), target):
                    continue
                if c_out & (c_out - 1):  # conventional power-of-two widths
                    continue
                pads = [range(0, k // 2 + 1) for k in kernel]
                for pad in itertools.product(*pads):
                    outs, macs, err = {}, {}, 0.0
                    for s in sizes:
                        lead, spatial = in_shapes[s]
                        o = tuple(_out(n, k, p) for n, k, p in zip(spatial, kernel, pad))
                        if min(o) < 1:
                            break
                        outs[s] = o
                        macs[s] = lead * math.prod(o) * c_out * kv * c_in
                        err = max(err, rel_err(macs[s], table["macs"][s][name]))
                    else:
                        res.append(ConvFit(c_out, kernel, pad, bias, outs, macs, err))
    return res


@dataclass
class FitResult:
    config: dict  # size -> ModelConfig
    score: float  # worst per-layer MAC error
    report: dict = field(default_factory=dict)
    candidates: int = 0


@lru_cache(maxsize=None)
def _linear_fit(K: int, target: str, min_n: int = 1) -> tuple:
    """(N, bias) with N*(K+bias) printed as ``target``."""
    out = []
    for bias in (False, True):
        for n in _count_range(target, K + bias):
            if n >= min_n and display_matches(n * (K + bias), target):
                out.append((n, bias))
    return tuple(out)


def fit_config_to_table(table: dict | None = None, tol: float = 0.10, mem_tol: float = 0.15, keep: int = 5) -> FitResult:
    table = table or load_table()
    sizes = [s for s in SIZES if s in table["macs"]]
    hw = {s: SIZES[s] for s in sizes}
    results = []
    n_seen = 0

    # TrunkNet convolutions; input depth is part of the fit
    trunk = []
    for depth in range(1, 5):
        t1s = _conv_candidates("T1", 3, 1, {s: (1, (depth,) + hw[s]) for s in sizes}, table, sizes, 16)
        for t1 in t1s:
            if t1.err > tol or t1.c_out % DEPLOYMENT["T2"]["partition"][0]:
                continue
            t2s = _conv_candidates("T2", 3, t1.c_out, {s: (1, t1.out[s]) for s in sizes}, table, sizes, 8)
            for t2 in t2s:
                if t2.err <= tol:
                    trunk.append((max(t1.err, t2.err), depth, t1, t2))
    # BranchNet convolutions; the frame count is the RNN sequence length
    seq = (RNN_ENGINES - 1) // 3 + 1
    branch = []
    b1s = _conv_candidates("B1", 2, 1, {s: (seq, hw[s]) for s in sizes}, table, sizes, 1)
    for b1 in b1s:
        if b1.err > tol:
            continue
        b2s = _conv_candidates("B2", 2, b1.c_out, {s: (seq, b1.out[s]) for s in sizes}, table, sizes, 8)
        for b2 in b2s:
            if b2.err <= tol:
                branch.append((max(b1.err, b2.err), b1, b2))
    trunk.sort(key=lambda t: (t[0], _conv_key(t[2]), _conv_key(t[3])))
    branch.sort(key=lambda t: (t[0], _conv_key(t[1]), _conv_key(t[2])))

    # keep the best conv pair per coupling key (what the dense layers see)
    best_trunk = {}
    for t in trunk:
        key = (t[3].c_out, min(t[3].out.values()))
        best_trunk.setdefault(key, t)
    best_branch = {}
    for b in branch:
        pooled = min(tuple(n // 2 for n in o) for o in b[2].out.values())
        best_branch.setdefault((b[2].c_out, pooled), b)

    mt = table["macs"]
    first = sizes[0]
    # dense tails of each network, enumerated separately and joined on the
    # shared output width P (trunk side) and the B6 width M (branch side)
    # options with equal join key and parameter sum differ only in score and
    # closeness, so only the best of each group can win
    trunk_opts: dict[tuple, tuple] = {}
    for (c2, d2), tr in best_trunk.items():
        for a3 in itertools.product(*(range(1, n + 1) for n in d2)):
            K = c2 * math.prod(a3)
            if math.ceil(K / 8) < DEPLOYMENT["T4"]["k_clusters"] * DEPLOYMENT["T4"]["cascade_len"]:
                continue
            for n1, bias4 in _linear_fit(K, table["params"]["T4"]):
                if math.ceil(n1 / 8) < DEPLOYMENT["T5"]["cascade_len"]:
                    continue
                e4 = rel_err(K * n1, mt[first]["T4"])
                for p, bias5 in _linear_fit(n1, table["params"]["T5"], JOIN_WIDTH):
                    e5 = rel_err(n1 * p, mt[first]["T5"])
                    part = dict(depth=tr[1], t1=tr[2], t2=tr[3], a3=a3, n1=n1, bias4=bias4, p=p, bias5=bias5)
                    tsum, tclose = _partial(part, ("T1", "T2", "T4", "T5"), table)
                    pen = _aspect_penalty(a3, d2)
                    key = (p, tsum, n1, bias4, bias5)
                    _keep(trunk_opts, key, (pen, round(max(tr[0], e4, e5), 2), tclose), part)
    branch_opts: dict[tuple, tuple] = {}
    for (c2b, pooled), br in best_branch.items():
        for a2 in itertools.product(*(range(1, n + 1) for n in pooled)):
            rin = c2b * math.prod(a2)
            for hid in range(1, 65):
                for rb in (False, True):
                    if not display_matches(hid * rin + hid * hid + 2 * hid * rb, table["params"]["B5"]):
                        continue
                    e_r = rel_err(seq * (hid * rin + hid * hid), mt[first]["B5"])
                    if e_r > tol:
                        continue
                    for m, bias6 in _linear_fit(hid, table["params"]["B6"], 8 * DEPLOYMENT["B7"]["cascade_len"] - 7):
                        e6 = rel_err(hid * m, mt[first]["B6"])
                        part = dict(b1=br[1], b2=br[2], a2=a2, hid=hid, rb=rb, m=m, bias6=bias6, seq=seq)
                        bsum, bclose = _partial(part, ("B1", "B2", "B5", "B6"), table)
                        pen = _aspect_penalty(a2, pooled)
                        key = (m, bsum, rb, bias6)
                        _keep(branch_opts, key, (pen, round(max(br[0], e_r, e6), 2), bclose), part)
    by_m: dict[int, list] = {}
    for (m, bsum, rb, bias6), (rank, part) in sorted(branch_opts.items()):
        by_m.setdefault(m, []).append((bsum, rank, part))
    sums = {m: [b[0] for b in v] for m, v in by_m.items()}
    total_lo, total_hi = display_range(table["params"]["total"])
    for (p, tsum, n1, bias4, bias5), ((tpen, et, tclose), tpart) in sorted(trunk_opts.items()):
        for bias7 in (False, True):
            for m in _count_range(table["params"]["B7"], p):
                m -= bias7
                n7 = p * (m + bias7)
                if m not in by_m or not display_matches(n7, table["params"]["B7"]):
                    continue
                close7 = rel_err(n7, table["params"]["B7"])
                e7 = rel_err(m * p, mt[first]["B7"])
                lo = bisect.bisect_left(sums[m], total_lo - tsum - n7)
                hi = bisect.bisect_right(sums[m], total_hi - tsum - n7)
                for bsum, (bpen, eb, bclose), bpart in by_m[m][lo:hi]:
                    n_seen += 1
                    score = max(et, eb, round(e7, 2))
                    if score > tol:
                        continue
                    # structural prior: mirrored dense widths, one bias convention
                    flags = {bias4, bias5, bpart["rb"], bpart["bias6"], bias7}
                    pen = tpen + bpen + (n1 != m) + (len(flags) > 1)
                    rank = (pen, score, round(tclose + bclose + close7, 6))
                    results.append((rank, len(results), {**tpart, **bpart, "bias7": bias7}))
    if not results:
        raise LookupError("no configuration matches the table; nearest trunk/branch conv fits: "
                          f"{[t[0] for t in trunk[:3]]}, {[b[0] for b in branch[:3]]}")
    results.sort(key=lambda r: (r[0], r[1]))
    for rank, _, cfg in results:
        configs = {s: to_model_config(cfg, s) for s in sizes}
        if all(memory_error(configs[s], table["memory"][s]["total"]) <= mem_tol for s in sizes if "memory" in table):
            break
    else:
        raise LookupError("no parameter/MAC fit also matches the memory totals")
    report = _report(configs, table, [r[0] for r in results[:keep]], n_seen)
    report["rank"] = list(rank)
    return FitResult(configs, rank[1], report, len(results))


def memory_error(m: ModelConfig, target: str) -> float:
    """Relative error of the tabulated-layer memory total (BF16)."""
    from tilegraph.characterize import characterize

    return rel_err(characterize(m, "bf16").total_bytes, target)


def _conv_key(c: ConvFit) -> tuple:
    return (c.bias, c.c_out, c.kernel, c.padding)


def _aspect_penalty(out: tuple, src: tuple) -> int:
    """Pooled outputs should keep the input's aspect ratio within 2x."""
    pen = 0
    for i in range(len(out) - 1):
        r = (out[i] / out[i + 1]) / (src[i] / src[i + 1])
        pen += not 0.5 <= r <= 2.0
    return pen


def _keep(opts: dict, key: tuple, rank: tuple, part: dict) -> None:
    if key not in opts or rank < opts[key][0]:
        opts[key] = (rank, part)


def _partial(part: dict, names: tuple, table: dict) -> tuple[int, float]:
    """(parameter sum, closeness) of one network's layers."""
    counts = _layer_params(part, names)
    return sum(counts.values()), sum(rel_err(v, table["params"][k]) for k, v in counts.items())


def _layer_params(cfg: dict, names: tuple = ("T1", "T2", "T4", "T5", "B1", "B2", "B5", "B6", "B7")) -> dict:
    out = {}
    if "t1" in cfg:
        t1, t2 = cfg["t1"], cfg["t2"]
        K = t2.c_out * math.prod(cfg["a3"])
        n1, p = cfg["n1"], cfg["p"]
        out["T1"] = t1.c_out * math.prod(t1.kernel) + t1.bias * t1.c_out
        out["T2"] = t2.c_out * (t1.c_out * math.prod(t2.kernel) + t2.bias)
        out["T4"] = n1 * (K + cfg["bias4"])
        out["T5"] = p * (n1 + cfg["bias5"])
    if "b1" in cfg:
        b1, b2 = cfg["b1"], cfg["b2"]
        rin = b2.c_out * math.prod(cfg["a2"])
        hid, m = cfg["hid"], cfg["m"]
        out["B1"] = b1.c_out * (math.prod(b1.kernel) + b1.bias)
        out["B2"] = b2.c_out * (b1.c_out * math.prod(b2.kernel) + b2.bias)
        out["B5"] = hid * rin + hid * hid + 2 * hid * cfg["rb"]
        out["B6"] = m * (hid + cfg["bias6"])
        if "p" in cfg and "bias7" in cfg:
            out["B7"] = cfg["p"] * (m + cfg["bias7"])
    return {k: v for k, v in out.items() if k in names}


def to_model_config(cfg: dict, size: str) -> ModelConfig:
    H, W = SIZES[size]
    t1, t2, b1, b2 = cfg["t1"], cfg["t2"], cfg["b1"], cfg["b2"]
    conv = lambda c, name, act="silu": {  # noqa: E731
        "c_out": c.c_out, "kernel": list(c.kernel), "padding": list(c.padding), "bias": c.bias, "act": act,
        **DEPLOYMENT.get(name, {}),
    }
    d = {
        "name": "cronet",
        "version": 1,
        "size": size,
        "x_shape": [cfg["seq"], 1, H, W],
        "f_shape": [1, cfg["depth"], H, W],
        "trunk": [
            {"name": "T1", "op": "conv3d", **conv(t1, "T1")},
            {"name": "T2", "op": "conv3d", **conv(t2, "T2")},
            {"name": "T3", "op": "aap3d", "out_shape": list(cfg["a3"]), **DEPLOYMENT["T3"]},
            {"name": "T4", "op": "linear", "out": cfg["n1"], "bias": cfg["bias4"], "act": "silu", **DEPLOYMENT["T4"]},
            {"name": "T5", "op": "linear", "out": cfg["p"], "bias": cfg["bias5"], "act": None, **DEPLOYMENT["T5"]},
        ],
        "branch": [
            {"name": "B1", "op": "conv2d", **conv(b1, "B1")},
            {"name": "B2", "op": "conv2d", **conv(b2, "B2")},
            {"name": "B3", "op": "maxpool2d", **MAXPOOL, **DEPLOYMENT["B3"]},
            {"name": "B4", "op": "aap2d", "out_shape": list(cfg["a2"]), **DEPLOYMENT["B4"]},
            {"name": "B5", "op": "rnn", "hidden": cfg["hid"], "bias": cfg["rb"]},
            {"name": "B6", "op": "linear", "out": cfg["m"], "bias": cfg["bias6"], "act": "silu", **DEPLOYMENT["B6"]},
            {"name": "B7", "op": "linear", "out": cfg["p"], "bias": cfg["bias7"], "act": None, **DEPLOYMENT["B7"]},
        ],
        "join_width": JOIN_WIDTH,
        "notes": "hyperparameters reverse-fitted to published per-layer parameter and MAC counts",
    }
    return ModelConfig.from_dict(d)


def _report(configs: dict, table: dict, top: list, n_seen: int) -> dict:
    from tilegraph.cronet.model import layer_infos

    rows = {}
    for size, m in configs.items():
        for info in layer_infos(m):
            if info.name not in table["params"]:
                continue
            r = rows.setdefault(info.name, {"params": info.param_count, "params_target": table["params"][info.name]})
            r["params_match"] = display_matches(info.param_count, table["params"][info.name])
            r.setdefault("macs", {})[size] = info.macs
            r.setdefault("macs_err", {})[size] = round(rel_err(info.macs, table["macs"][size][info.name]), 4)
    return {
        "layers": rows,
        "total_params": sum(r["params"] for r in rows.values()),
        "candidates_examined": n_seen,
        "top_ranks": [list(t) for t in top],
    }


def load_table(path: str | Path | None = None) -> dict:
    p = Path(path) if path else Path(str(resources.files("tilegraph.cronet") / "assets" / "targets.json"))
    return json.loads(p.read_text())


def write_assets(result: FitResult, directory: str | Path) -> list[Path]:
    directory = Path(directory)
    out = []
    for size, m in result.config.items():
        p = directory / f"cronet_{size}.json"
        p.write_text(json.dumps(m.to_dict(), indent=1) + "\n")
        out.append(p)
    rp = directory / "fit_report.json"
    rp.write_text(json.dumps(result.report, indent=1, sort_keys=True) + "\n")
    out.append(rp)
    return out
