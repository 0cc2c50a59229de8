"""``tilegraph`` command line: every subcommand builds what it needs from the
shipped model config and prints a JSON report with sorted keys.

Exit codes: 0 success, 1 error (diagnostic on stderr), 2 usage error,
3 the placement does not route.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from tilegraph.arch import ArchError, load_arch_file
from tilegraph.characterize import characterize, render_table
from tilegraph.cronet import (
    CapacityError,
    build_cronet,
    case_inputs,
    init_weights,
    load_config,
    make_case,
    reference_forward,
)
from tilegraph.cronet.fit import fit_config_to_table, load_table, write_assets
from tilegraph.fusion import passes_applied
from tilegraph.graph import dump_graph, validate_graph
from tilegraph.place import (
    PlacementError,
    congestion_cost,
    place_custom,
    place_naive,
    route_check,
    svg_map,
    text_map,
)
from tilegraph.sim import error_metrics, estimate_latency, execute, resource_report, run, traffic_report

EXIT_UNROUTABLE = 3


def _emit(obj, args) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _model(args):
    """The shipped config for --size, or a config file given as --model."""
    if args.model == "cronet":
        return load_config(args.size)
    return load_config(args.size, path=args.model)


def _graph(args, fuse: bool = True):
    arch = load_arch_file(args.arch)
    g = build_cronet(args.size, arch, fuse=fuse, seed=args.seed, model=_model(args))
    if args.emit_graph:
        dump_graph(g, args.emit_graph)
    return g, arch


def _place(g, arch, args):
    if args.strategy == "naive":
        p = place_naive(g, arch)
    else:
        p = place_custom(g, arch, seed=args.seed)
    if args.emit_map:
        path = Path(args.emit_map)
        path.write_text(svg_map(g, p, arch) if path.suffix == ".svg" else text_map(g, p, arch))
    return p


def _route_summary(rep) -> dict:
    d = rep.to_dict()
    d["congestion_cost"] = congestion_cost(rep)
    return d


def _latency(g, arch, p=None, etype="bf16") -> dict:
    lat = estimate_latency(g, p, arch, etype=etype)
    return {
        "cycles": lat.cycles,
        "seconds": lat.seconds,
        "breakdown": dict(sorted(lat.breakdown.items())),
        "subgraph_cycles": dict(sorted(lat.subgraph_cycles.items())),
    }


# --------------------------------------------------------------------------
# subcommands


def cmd_characterize(args) -> int:
    rep = characterize(_model(args), args.etype)
    if args.table:
        sys.stdout.write(render_table(rep) + "\n")
        return 0
    _emit(rep.to_dict(), args)
    return 0


def cmd_build(args) -> int:
    g, arch = _graph(args, fuse=False)
    findings = validate_graph(g, arch)
    _emit({"size": args.size, "findings": [str(f) for f in findings], "resources": resource_report(g, None, arch)}, args)
    return 1 if findings else 0


def cmd_fuse(args) -> int:
    g, arch = _graph(args)
    kinds: dict[str, int] = {}
    for n in g.nets.values():
        kinds[n.kind] = kinds.get(n.kind, 0) + 1
    _emit(
        {
            "size": args.size,
            "passes": passes_applied(g),
            "net_kinds": dict(sorted(kinds.items())),
            "external_nets": sorted(n.name for n in g.external_nets()),
            "resources": resource_report(g, None, arch),
        },
        args,
    )
    return 0


def cmd_place(args) -> int:
    g, arch = _graph(args)
    t = time.perf_counter()
    p = _place(g, arch, args)
    elapsed = time.perf_counter() - t
    rep = route_check(g, p, arch)
    out = {"size": args.size, "strategy": p.strategy, "placement": p.to_dict(), "route": _route_summary(rep)}
    if args.timing:
        out["seconds"] = elapsed
    _emit(out, args)
    return 0 if rep.feasible else EXIT_UNROUTABLE


def cmd_route(args) -> int:
    g, arch = _graph(args)
    p = _place(g, arch, args)
    rep = route_check(g, p, arch)
    loads = sorted(rep.edge_loads.values())
    out = {
        "size": args.size,
        "strategy": p.strategy,
        "route": _route_summary(rep),
        "routed_edges": len(loads),
        "edge_load_histogram": {str(v): loads.count(v) for v in sorted(set(loads))},
    }
    _emit(out, args)
    return 0 if rep.feasible else EXIT_UNROUTABLE


def cmd_simulate(args) -> int:
    g, arch = _graph(args)
    m = _model(args)
    case = make_case(m, args.seed)
    feeds = case_inputs(case)
    trace = run(g, feeds, args.etype, arch)
    y = trace.outputs["U"]
    out = {
        "size": args.size,
        "etype": args.etype,
        "latency": _latency(g, arch, None, args.etype),
        "traffic": traffic_report(trace),
        "output_shape": list(y.shape),
    }
    if args.compare:
        ref = execute(g, feeds, args.compare)["U"]
        out["compare"] = {"against": args.compare, **error_metrics(y, ref)}
        # the graph must agree with the layer-by-layer oracle in the reference precision
        oracle = reference_forward(m, case, args.compare, init_weights(m, args.seed))
        out["compare"]["reference_forward"] = error_metrics(ref, oracle)
    _emit(out, args)
    return 0


def cmd_report(args) -> int:
    g, arch = _graph(args)
    p = _place(g, arch, args)
    rep = route_check(g, p, arch)
    out = {
        "size": args.size,
        "characterization": characterize(_model(args), args.etype).to_dict(),
        "resources": resource_report(g, p, arch),
        "route": _route_summary(rep),
        "latency": _latency(g, arch, p, args.etype),
    }
    _emit(out, args)
    return 0 if rep.feasible else EXIT_UNROUTABLE


def cmd_fit(args) -> int:
    result = fit_config_to_table(load_table(args.table))
    if args.write_assets:
        write_assets(result, args.write_assets)
    _emit(result.report, args)
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="fixes weights, inputs and placement search")
    common.add_argument("--arch", default=None, help="architecture JSON (default: $TILEGRAPH_ARCH or built-in)")
    common.add_argument("--model", default="cronet", help="'cronet' (shipped configs) or a model config JSON file")
    common.add_argument("--size", default="30x20", choices=["30x10", "30x20", "60x20"])
    common.add_argument("--etype", default="bf16", choices=["fp32", "bf16", "int8"])
    common.add_argument("--emit-graph", default=None, metavar="FILE", help="write the graph dump")
    common.add_argument("--emit-map", default=None, metavar="FILE", help="write the array map (.svg or text)")
    common.add_argument("--out", default=None, metavar="FILE", help="write the JSON report here instead of stdout")

    ap = argparse.ArgumentParser(prog="tilegraph", description="Map CRONet onto a tiled engine array and model it.")
    sub = ap.add_subparsers(dest="command", required=True)
    c = sub.add_parser("characterize", parents=[common], help="per-layer parameters, MACs and memory")
    c.add_argument("--table", action="store_true", help="print a rendered table instead of JSON")
    c.set_defaults(func=cmd_characterize)
    sub.add_parser("build", parents=[common], help="unfused graph, validation and resources").set_defaults(func=cmd_build)
    sub.add_parser("fuse", parents=[common], help="fused graph and net kinds").set_defaults(func=cmd_fuse)
    for name, func, text in (
        ("place", cmd_place, "placement and route summary"),
        ("route", cmd_route, "route report for a placement"),
        ("report", cmd_report, "characterization, resources, routing and latency"),
    ):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--strategy", default="custom", choices=["custom", "naive"])
        if name == "place":
            s.add_argument("--timing", action="store_true", help="include wall time (breaks byte-identical output)")
        s.set_defaults(func=func)
    s = sub.add_parser("simulate", parents=[common], help="execute, compare precisions, latency and traffic")
    s.add_argument("--compare", default=None, choices=["fp32", "bf16", "int8"])
    s.set_defaults(func=cmd_simulate)
    f = sub.add_parser("fit", parents=[common], help="refit the model configs to the characterization table")
    f.add_argument("--table", default=None, help="table JSON (default: shipped)")
    f.add_argument("--write-assets", default=None, metavar="DIR")
    f.set_defaults(func=cmd_fit)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ArchError, CapacityError, PlacementError, OSError, LookupError, ValueError) as exc:
        print(f"tilegraph: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
