"""Command line driver: ``cutdarcy run | rates | dump-mesh``."""
import argparse
import csv
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .config import apply_override, load_config
from .errors import ConfigError, CutDarcyError, InsufficientData
from .forms import Discretization
from .geometry import write_polygons
from .verify import convergence_rates, run as run_one

EXIT_OK, EXIT_CONFIG, EXIT_SINGULAR, EXIT_IO = 0, 1, 2, 3

HEADER = ["study", "method", "element", "bc", "case", "n", "h", "hcut_ratio", "gamma",
          "tau_d", "tau_0", "tau_al", "delta", "dofs", "err_u_L2", "err_p_L2",
          "err_divu_L2", "err_divu_Linf", "cond1", "status"]
GROUP_KEYS = ["study", "method", "element", "bc", "case", "hcut_ratio", "gamma",
              "tau_d", "tau_0", "tau_al", "delta"]
RATE_KEYS = ["err_u_L2", "err_p_L2", "err_divu_L2"]


def _f(x):
    return "%.17g" % x


def report_row(rep):
    p = rep.params.effective()
    return [p.study, p.method, p.element, p.bc, p.case, str(p.n), _f(rep.h), _f(p.hcut_ratio),
            _f(p.gamma), _f(p.tau_d), _f(p.tau_0), _f(p.tau_al), _f(p.delta), str(rep.dofs),
            _f(rep.err_u_L2), _f(rep.err_p_L2), _f(rep.err_divu_L2), _f(rep.err_divu_Linf),
            _f(rep.cond1), rep.status]


def emit_csv(reports, path):
    """Write the report table; ``path`` may be a file name or an open text stream."""
    rows = [HEADER] + [report_row(r) for r in reports]
    if hasattr(path, "write"):
        csv.writer(path, lineterminator="\n").writerows(rows)
        return
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def n_threads():
    try:
        return max(1, int(os.environ.get("CUTDARCY_THREADS", "1")))
    except ValueError:
        return 1


def run_all(runs, threads=1):
    if threads <= 1 or len(runs) <= 1:
        return [run_one(r) for r in runs]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        # map keeps sweep order regardless of completion order
        return list(ex.map(run_one, runs))


def group_rates(rows):
    """Least-squares rates per run group; rows are dicts read from the CSV."""
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in GROUP_KEYS), []).append(r)
    out = []
    for key, items in groups.items():
        items = [r for r in items if r["status"] == "ok"]
        hs = [float(r["h"]) for r in items]
        rates = {}
        for q in RATE_KEYS:
            try:
                rates[q] = convergence_rates(hs, [float(r[q]) for r in items])[0]
            except InsufficientData:
                rates[q] = math.nan
        out.append((dict(zip(GROUP_KEYS, key)), len(items), rates))
    return out


def format_rates(rates):
    lines = []
    for key, count, r in rates:
        label = " ".join(f"{k}={key[k]}" for k in ("method", "element", "bc", "case", "hcut_ratio",
                                                      "gamma", "tau_d"))
        vals = " ".join(f"{q}={r[q]:.3f}" for q in RATE_KEYS)
        lines.append(f"{label} runs={count} {vals}")
    return "\n".join(lines)


def cmd_run(args):
    spec = load_config(args.config)
    for item in args.override or []:
        apply_override(spec, item)
    out = args.out or spec.output
    if not out:
        raise ConfigError("no output path: give --out or set [output] path")
    if not os.path.isabs(out) and not args.out:
        out = os.path.join(os.path.dirname(os.path.abspath(args.config)), out)
    reports = run_all(spec.runs(), n_threads())
    try:
        d = os.path.dirname(os.path.abspath(out))
        os.makedirs(d, exist_ok=True)
        emit_csv(reports, out)
    except OSError as exc:
        print(f"error: cannot write {out}: {exc}", file=sys.stderr)
        return EXIT_IO
    if spec.study != "Single":
        rows = [dict(zip(HEADER, report_row(r))) for r in reports]
        text = format_rates([g for g in group_rates(rows) if g[1] >= 3])
        if text:
            print(text, file=sys.stderr)
    if any(r.status != "ok" for r in reports):
        return EXIT_SINGULAR
    return EXIT_OK


def cmd_rates(args):
    try:
        with open(args.csv, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        print(f"error: cannot read {args.csv}: {exc}", file=sys.stderr)
        return EXIT_IO
    print(format_rates(group_rates(rows)))
    return EXIT_OK


def cmd_dump_mesh(args):
    from .mesh import write_mesh_csv
    from .verify import build_geometry
    spec = load_config(args.config)
    for item in args.override or []:
        apply_override(spec, item)
    params = spec.runs()[0]
    mesh, dom = build_geometry(params)
    disc = Discretization(mesh, dom, params.element, delta=params.delta, n_sub=params.n_sub)
    try:
        agg = disc.agg
    except CutDarcyError:
        agg = None
    try:
        if args.out:
            with open(args.out, "w") as fh:
                write_mesh_csv(mesh, disc.cls, agg, fh)
        else:
            write_mesh_csv(mesh, disc.cls, agg, sys.stdout)
        if args.polygons:
            write_polygons([disc.cls.polygons[c] for c in sorted(disc.cls.polygons)], args.polygons)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="cutdarcy", description="Unfitted mixed Darcy experiments")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config and write a CSV")
    r.add_argument("config")
    r.add_argument("--out")
    r.add_argument("--override", action="append", metavar="KEY=VALUE")
    r.set_defaults(func=cmd_run)
    q = sub.add_parser("rates", help="convergence rates from a results CSV")
    q.add_argument("csv")
    q.set_defaults(func=cmd_rates)
    d = sub.add_parser("dump-mesh", help="write cell tags/aggregates of the first run")
    d.add_argument("config")
    d.add_argument("--out")
    d.add_argument("--polygons", help="also dump clipped polygons to this file")
    d.add_argument("--override", action="append", metavar="KEY=VALUE")
    d.set_defaults(func=cmd_dump_mesh)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if args.command != "rates" else EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
