"""Command line front end.

Every command prints a report (text by default, or ``--format json|csv``)
and, with ``--out DIR``, also writes it there together with any fields it
produced. Exit status: 0 success, 2 a checked tolerance was violated,
1 runtime error, 64 usage error.
"""

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import constructions as cons
from . import geometry as geo
from . import operators as ops
from . import space
from .errors import MetspaceError
from .fields import GridChart, ScalarField
from .rmf import read_field, write_field
from .suites import SUITES

SCHEMA_VERSION = 1
EXIT_OK, EXIT_ERROR, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2, 64

ANCHORS = {
    "dl": ["extended distance: log of the best two-sided comparison constant"],
    "geodesic": ["path t -> g0[B^t., B^t.] between metrics at finite distance"],
    "midpoint": ["midpoint halves the extended distance"],
    "smooth": ["mollification of metric fields and the smooth closure"],
    "distance": ["length distance as a shortest path over the grid"],
    "measure": ["volume density sqrt(det g)"],
    "laplacian": ["weak-form Laplacian of a rough metric"],
    "heat": ["heat flow generated by the Laplacian"],
    "varadhan": ["small-time heat kernel asymptotics -4t log p -> d^2"],
    "poincare": ["Poincare constants on metric balls and their propagation"],
    "construct": ["explicit example metrics"],
    "verify": ["property suites"],
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_chart(text):
    """``DIM,SHAPE[,SPACING[,ORIGIN[,PERIODIC]]]`` with per-axis values joined by ``x``.

    Missing spacing covers the unit cube; e.g. ``2,65x65`` or
    ``1,513,0.001953125,0,0``.
    """
    parts = text.split(",")
    if not 2 <= len(parts) <= 5:
        raise UsageError(f"--chart: expected DIM,SHAPE[,SPACING[,ORIGIN[,PERIODIC]]], got {text!r}")
    try:
        dim = int(parts[0])

        def axis_list(s, conv):
            vals = [conv(v) for v in s.split("x")]
            if len(vals) == 1:
                vals *= dim
            if len(vals) != dim:
                raise ValueError(f"{s!r} does not have {dim} entries")
            return vals

        shape = axis_list(parts[1], int)
        spacing = axis_list(parts[2], float) if len(parts) > 2 else [1.0 / (s - 1) for s in shape]
        origin = axis_list(parts[3], float) if len(parts) > 3 else [0.0] * dim
        periodic = axis_list(parts[4], lambda v: bool(int(v))) if len(parts) > 4 else [False] * dim
        return GridChart(origin, spacing, shape, periodic)
    except ValueError as exc:
        raise UsageError(f"--chart: {exc}") from exc


def _floats(text, flag):
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError as exc:
        raise UsageError(f"{flag}: not a comma separated list of numbers: {text!r}") from exc


def _pairs(text):
    out = []
    for tok in text.split(","):
        a, sep, b = tok.partition(":")
        if not sep:
            raise UsageError(f"--pairs: expected X:Y items, got {tok!r}")
        try:
            out.append((int(a), int(b)))
        except ValueError as exc:
            raise UsageError(f"--pairs: bad node index in {tok!r}") from exc
    return out


class Report:
    def __init__(self, command, config):
        self.command = command
        self.config = config
        self.results = []
        self.violations = []

    def add(self, **row):
        self.results.append({k: _jsonable(v) for k, v in row.items()})

    def violate(self, name):
        self.violations.append(name)

    def as_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "config": self.config,
            "anchors": ANCHORS.get(self.command, []),
            "results": self.results,
            "violations": self.violations,
        }

    def render(self, fmt):
        if fmt == "json":
            return json.dumps(self.as_dict(), sort_keys=True, indent=2) + "\n"
        if fmt == "csv":
            keys = sorted({k for r in self.results for k in r})
            buf = io.StringIO()
            w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
            w.writeheader()
            for r in self.results:
                w.writerow({k: json.dumps(v) if isinstance(v, (list, dict)) else v for k, v in r.items()})
            return buf.getvalue()
        lines = [f"# {self.command}: {'; '.join(ANCHORS.get(self.command, []))}"]
        for r in self.results:
            lines.append("  ".join(f"{k}={_fmt(v)}" for k, v in r.items()))
        for v in self.violations:
            lines.append(f"VIOLATION {v}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return "inf" if np.isinf(v) else f"{v:.6f}"
    return json.dumps(v) if isinstance(v, (list, dict)) else str(v)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, float) and not np.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    return v


def _outdir(args):
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    return args.out


def _save(args, field, name):
    out = _outdir(args)
    if out:
        path = os.path.join(out, name)
        write_field(field, path)
        return path
    return None


def cmd_dl(args, rep):
    g, h = read_field(args.a), read_field(args.b)
    D = space.dl(g, h)
    rep.add(dl=D.value, closeness_constant=float(np.exp(D.value)), argmax_node=D.argmax_node)


def cmd_geodesic(args, rep):
    g0, g1 = read_field(args.g0), read_field(args.g1)
    path = space.geodesic(g0, g1)
    D = space.dl(g0, g1).value
    for t in _floats(args.t, "--t"):
        gt = path.eval(t)
        saved = _save(args, gt, f"geodesic_t{t:g}.rmf")
        rep.add(t=t, dl_from_g0=space.dl(g0, gt).value, dl_to_g1=space.dl(gt, g1).value, dl_total=D, file=saved)


def cmd_midpoint(args, rep):
    g0, g1 = read_field(args.g0), read_field(args.g1)
    m = space.midpoint(g0, g1)
    D = space.dl(g0, g1).value
    a, b = space.dl(g0, m).value, space.dl(m, g1).value
    rep.add(dl=D, dl_g0_mid=a, dl_mid_g1=b, file=_save(args, m, "midpoint.rmf"))
    if max(abs(a - 0.5 * D), abs(b - 0.5 * D)) > 1e-9:
        rep.violate("midpoint equalities within 1e-9")


def cmd_smooth(args, rep):
    g = read_field(args.field)
    eps = _floats(args.eps, "--eps") if args.eps else space_ladder(g.chart, args.ladder)
    for e in eps:
        ge = space.smooth_approx(g, e)
        rep.add(epsilon=e, dl=space.dl(ge, g).value)
    _save(args, ge, "smoothed.rmf")


def space_ladder(chart, count):
    from .suites import epsilon_ladder

    return epsilon_ladder(chart, count)


def cmd_distance(args, rep):
    g = read_field(args.field)
    order = args.stencil_order
    if args.pairs:
        pairs = _pairs(args.pairs)
        if args.compare:
            h = read_field(args.compare)
            res = geo.distance_comparability_check(g, h, pairs, order, args.tol_stencil)
            for x, y, dg, dh, ratio in res.rows:
                rep.add(x=x, y=y, d_g=dg, d_h=dh, ratio=ratio)
            if not res.ok:
                rep.violate("distance comparability bound")
            return
        maps = geo.distance_maps(g, {x for x, _ in pairs}, order)
        for x, y in pairs:
            rep.add(x=x, y=y, d_g=float(maps[x].values[y]))
    else:
        dmap = geo.distance_map(g, args.source, order)
        saved = _save(args, dmap.to_scalar_field(), f"distance_{args.source}.rmf")
        finite = dmap.values[np.isfinite(dmap.values)]
        rep.add(source=args.source, max_distance=float(finite.max()), file=saved)


def cmd_measure(args, rep):
    g = read_field(args.field)
    region = None
    if args.box:
        lo_hi = _floats(args.box, "--box")
        d = g.dim
        if len(lo_hi) != 2 * d:
            raise UsageError(f"--box needs {2 * d} numbers (lower then upper corner)")
        x = g.chart.coords()
        region = np.all((x >= np.array(lo_hi[:d])) & (x <= np.array(lo_hi[d:])), axis=1)
    rep.add(volume=geo.measure(g, region).volume)


def cmd_laplacian(args, rep):
    g = read_field(args.field)
    op = ops.assemble_laplacian(g, bc=args.bc)
    S = op.stiffness
    asym = float(abs(S - S.T).max()) if S.nnz else 0.0
    rows = float(np.max(np.abs(np.asarray(S.sum(axis=1)).ravel())))
    rep.add(dofs=op.n, nnz=int(S.nnz), max_asymmetry=asym, max_row_sum=rows, total_mass=float(op.mass.sum()))
    if asym > 1e-12 * abs(S).max():
        rep.violate("stiffness symmetry")


def cmd_heat(args, rep):
    g = read_field(args.field)
    op = ops.assemble_laplacian(g)
    times = _floats(args.times, "--times")
    run = ops.heat_run(op, args.source, times, dt=args.dt)
    heat = run.total_heat()
    for t, f, q in zip(run.times, run.fields, heat):
        rep.add(t=t, total_heat=float(q), file=_save(args, f, f"heat_t{t:g}.rmf"))
    if np.ptp(heat) > 1e-9:
        rep.violate("heat conservation")


def cmd_varadhan(args, rep):
    g = read_field(args.field)
    op = ops.assemble_laplacian(g)
    times = _floats(args.times, "--times")
    run = ops.heat_run(op, args.source, times, dt=args.dt)
    est = ops.varadhan_estimate(run, args.target)
    d = geo.distance(g, args.source, args.target, args.stencil_order)
    for t, e in zip(est.times, est.estimates):
        rep.add(t=t, minus_4t_log_rho=e, d_squared=d * d, ratio=e / (d * d))
    rep.add(t=0.0, minus_4t_log_rho=est.extrapolated, d_squared=d * d, ratio=est.extrapolated / (d * d))


def cmd_poincare(args, rep):
    g = read_field(args.field)
    ref = read_field(args.reference) if args.reference else None
    D = space.dl(g, ref).value if ref is not None else None
    for r in _floats(args.radii, "--radii"):
        C = ops.poincare_measure(g, args.center, r)
        row = {"r": r, "C1_measured": C}
        if ref is not None:
            Ch = ops.poincare_measure(ref, args.center, r)
            row["C1_propagated"] = ops.poincare_propagate(Ch, 1.0, 1.0, D, g.dim, 2, 2)[0]
            if C > row["C1_propagated"]:
                rep.violate(f"propagated bound at r={r:g}")
        rep.add(**row)


def cmd_construct(args, rep):
    name = args.name
    chart = parse_chart(args.chart) if args.chart else None
    if name == "nonapprox":
        chart = chart or GridChart.box([-2, -2], [2, 2], (64, 64))
        g = cons.nonapprox_metric(chart, args.jump, args.radius)
        rep.add(name=name, file=_save(args, g, "nonapprox.rmf"), jump=args.jump)
    elif name == "sturm":
        chart = chart or GridChart.box([0.0] * 4, [1.0] * 4, (7,) * 4)
        net = cons.build_network(chart, m_max=args.m_max, seed=args.seed)
        g, gp = cons.sturm_pair(net, args.alpha)
        info = cons.sturm_report(net, g, gp, seed=args.seed)
        rep.add(
            name=name,
            files=[_save(args, g, "pair_g.rmf"), _save(args, gp, "pair_gprime.rmf")],
            max_det_deviation=info["max_det_deviation"],
            curves=len(net.curves),
            min_distance_ratio=info["min_ratio"],
            max_distance_ratio=info["max_ratio"],
            log2_epsilon_required=cons.tube_budget(net)["log2_epsilon_required"],
        )
        if info["max_det_deviation"] > 1e-14:
            rep.violate("determinant equality")
        if not info["ok"]:
            rep.violate("distance sandwich")
    elif name == "unbounded":
        radii = np.arange(1, args.count + 1, dtype=float)
        E = space.dl_exhaustion(cons.flat_generator, cons.unbounded_conformal(radii), radii)
        rep.add(name=name, dl=E.value, certificate=E.certificate, per_radius=[v for _, v in E.per_radius])
    elif name == "graph":
        chart = chart or GridChart.box([-1, -1], [1, 1], (33, 33))
        g, stats = cons.lipschitz_graph_suite(args.function, chart, seed=args.seed)
        rep.add(name=name, file=_save(args, g, f"graph_{args.function}.rmf"), **stats)
        if stats["mask_fraction"] > stats["mask_cap"]:
            rep.violate("mask fraction cap")
    else:
        raise UsageError(f"construct: unknown construction {name!r}")


def cmd_verify(args, rep):
    names = list(SUITES) if args.suite == "all" else [args.suite]
    for name in names:
        if name not in SUITES:
            raise UsageError(f"verify: unknown suite {name!r}; choose from {', '.join(SUITES)} or all")
        res = SUITES[name](seed=args.seed)
        checks = {k: {a: b for a, b in v.items() if a != "seconds"} for k, v in res.checks.items()}
        rep.add(suite=name, anchor=res.anchor, passed=res.passed, checks=checks)
        for v in res.violations:
            rep.violate(f"{name}: {v}")


COMMANDS = {
    "dl": cmd_dl,
    "geodesic": cmd_geodesic,
    "midpoint": cmd_midpoint,
    "smooth": cmd_smooth,
    "distance": cmd_distance,
    "measure": cmd_measure,
    "laplacian": cmd_laplacian,
    "heat": cmd_heat,
    "varadhan": cmd_varadhan,
    "poincare": cmd_poincare,
    "construct": cmd_construct,
    "verify": cmd_verify,
}


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--chart", help="DIM,SHAPE[,SPACING[,ORIGIN[,PERIODIC]]], axis values joined by 'x'")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tol-stencil", type=float, default=None, help="relative distance slack")
    common.add_argument("--out", help="directory for reports and fields")
    common.add_argument("--format", choices=("text", "json", "csv"), default="text")

    p = _Parser(prog="metspace", description="Rough metric fields on grids.", parents=[common])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    s = add("dl", "extended distance between two fields")
    s.add_argument("a")
    s.add_argument("b")
    for name in ("geodesic", "midpoint"):
        s = add(name, f"{name} between two fields")
        s.add_argument("g0")
        s.add_argument("g1")
        if name == "geodesic":
            s.add_argument("--t", default="0.25,0.5,0.75")
    s = add("smooth", "mollify a field along an epsilon ladder")
    s.add_argument("field")
    s.add_argument("--eps")
    s.add_argument("--ladder", type=int, default=5)
    s = add("distance", "shortest-path distances")
    s.add_argument("field")
    s.add_argument("--source", type=int, default=0)
    s.add_argument("--pairs")
    s.add_argument("--compare", help="second field for the comparability check")
    s.add_argument("--stencil-order", type=int, default=geo.DEFAULT_STENCIL_ORDER)
    s = add("measure", "volume of the chart or a coordinate box")
    s.add_argument("field")
    s.add_argument("--box")
    s = add("laplacian", "assemble the Laplacian and report its structure")
    s.add_argument("field")
    s.add_argument("--bc", choices=("neumann", "dirichlet"), default="neumann")
    for name in ("heat", "varadhan"):
        s = add(name, "heat flow from a point source" if name == "heat" else "small-time distance estimate")
        s.add_argument("field")
        s.add_argument("--source", type=int, required=True)
        s.add_argument("--times", required=True)
        s.add_argument("--dt", type=float)
        if name == "varadhan":
            s.add_argument("--target", type=int, required=True)
            s.add_argument("--stencil-order", type=int, default=geo.DEFAULT_STENCIL_ORDER)
    s = add("poincare", "measured (and propagated) Poincare constants")
    s.add_argument("field")
    s.add_argument("--center", type=int, required=True)
    s.add_argument("--radii", required=True)
    s.add_argument("--reference")
    s = add("construct", "build a named example")
    s.add_argument("name", choices=("nonapprox", "sturm", "unbounded", "graph"))
    s.add_argument("--m-max", type=int, default=8)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--jump", type=float, default=100.0)
    s.add_argument("--radius", type=float, default=1.0)
    s.add_argument("--count", type=int, default=150)
    s.add_argument(
        "--function", default="cone",
        choices=("zero", "linear", "cone", "sawtooth", "rational_cones", "plane_creases"),
    )
    s = add("verify", "run a property suite")
    s.add_argument("suite", help=f"one of {', '.join(SUITES)} or all")
    return p


def _config(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("out",)}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("missing command")
        rep = Report(args.command, _config(args))
        COMMANDS[args.command](args, rep)
    except UsageError as exc:
        print(f"metspace: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MetspaceError, OSError) as exc:
        print(f"metspace: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    text = rep.render(args.format)
    sys.stdout.write(text)
    out = _outdir(args)
    if out:
        ext = {"json": "json", "csv": "csv", "text": "txt"}[args.format]
        with open(os.path.join(out, f"report.{ext}"), "w") as fh:
            fh.write(text)
    return EXIT_VIOLATION if rep.violations else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
