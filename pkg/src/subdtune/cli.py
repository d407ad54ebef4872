"""Command line: ``subdtune {tune,spectrum,solve,convergence,decompose}``.

Options come from flags and, optionally, a ``key = value`` file given with
``--config``; flags win. Keys are flag names without dashes (``levels``,
``load``, ``out``...). Exit codes: 0 success, 1 I/O, 2 infeasible input or
failed precondition, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from importlib import resources

import numpy as np

from . import __version__
from . import plate as P
from .mesh import MeshError, WeightAssignment, load_mesh
from .report import (
    CONVERGENCE_COLUMNS, DECISION_COLUMNS, SPECTRUM_COLUMNS, file_hash, loglog_svg,
    metadata, write_csv, write_svg,
)
from .spectral import SpectralError, default_weights, eigensystem_for, smoothness_report, spectrum_rows
from .tuner import WEIGHT_COLUMNS, InfeasibleError, read_weight_table, tune, weight_rows

log = logging.getLogger("subdtune")

EXIT_OK, EXIT_IO, EXIT_PRECONDITION, EXIT_NUMERICAL = 0, 1, 2, 3
SOLUTION_COLUMNS = ("vertex_id", "x", "y", "w")

DEFAULTS = {"quadrature": 4, "load": "uniform", "level": 3, "levels": "1:5",
            "policy": "auto", "policies": "cc,auto", "out": "."}
COMMAND_DEFAULTS = {"tune": {"shape": "both", "lambda_range": "0.45:0.75",
                             "step": 0.005, "tol": 1e-4}}


class UsageError(ValueError):
    """Bad option values; reported with exit code 2."""


# ---------------------------------------------------------------- options

def _parser():
    p = argparse.ArgumentParser(prog="subdtune", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"subdtune {__version__}")
    p.add_argument("--config", help="key = value file; command-line flags override it")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tune", help="optimise cup/saddle weights for a valence")
    t.add_argument("--valence", type=int, nargs="+")
    t.add_argument("--shape", choices=("cup", "saddle", "both"))
    t.add_argument("--lambda-range", dest="lambda_range", help="search interval lo:hi")
    t.add_argument("--step", type=float, help="grid step of the coarse lambda scan")
    t.add_argument("--tol", type=float, help="golden-section tolerance in lambda")
    t.add_argument("--quadrature", type=int)
    t.add_argument("--out", help="weight table CSV (rows are merged into an existing file)")

    s = sub.add_parser("spectrum", help="eigenvalues and smoothness conditions")
    s.add_argument("--valence", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--gamma", type=float)
    s.add_argument("--shape", choices=("cup", "saddle"), help="take weights from the table")
    s.add_argument("--weights", help="weight table CSV (default: the shipped table)")
    s.add_argument("--out", help="output directory")

    for name, helptext in (("solve", "solve the plate at one level"),
                           ("convergence", "errors over a range of levels"),
                           ("decompose", "cup/saddle ratio at each valence >= 5 vertex")):
        c = sub.add_parser(name, help=helptext)
        c.add_argument("--mesh", help="OBJ file, or the name of a shipped mesh")
        c.add_argument("--load", choices=("uniform", "sinusoidal"))
        c.add_argument("--weights", help="weight table CSV (default: the shipped table)")
        c.add_argument("--quadrature", type=int)
        c.add_argument("--out", help="output directory")
        if name == "convergence":
            c.add_argument("--levels", help="inclusive range lo:hi or a comma list")
            c.add_argument("--policies", help="comma list from cc, cup, saddle, auto")
        else:
            c.add_argument("--level", type=int)
            c.add_argument("--policy", choices=("cc", "cup", "saddle", "auto"))
        if name == "decompose":
            c.add_argument("--solution", help="solution CSV written by 'solve'")
    return p


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for no, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{no}: expected key = value")
            k, v = (x.strip() for x in line.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def resolve(args):
    """Merge flags over the config file over built-in defaults."""
    cfg = read_config(args.config) if args.config else {}
    defaults = {**DEFAULTS, **COMMAND_DEFAULTS.get(args.command, {})}
    opts = {}
    for key, value in vars(args).items():
        if value is None and key in cfg:
            value = cfg[key]
        if value is None:
            value = defaults.get(key)
        opts[key] = value
    unknown = set(cfg) - set(opts)
    if unknown:
        raise UsageError(f"unknown config keys for '{args.command}': {', '.join(sorted(unknown))}")
    return argparse.Namespace(**opts)


def parse_levels(text):
    text = str(text).strip()
    try:
        if ":" in text:
            lo, hi = (int(x) for x in text.split(":"))
            levels = list(range(lo, hi + 1))
        else:
            levels = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad level range '{text}'") from exc
    if not levels or min(levels) < 0 or max(levels) > 6:
        raise UsageError("levels must lie within 0..6")
    return levels


def _int(value, name, lo, hi):
    try:
        v = int(value)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{name} must be an integer") from exc
    if not lo <= v <= hi:
        raise UsageError(f"{name} must lie within {lo}..{hi}")
    return v


def mesh_path(name):
    if name is None:
        raise UsageError("--mesh is required")
    if os.path.exists(name) or os.sep in name:
        return name
    shipped = resources.files("subdtune") / "data" / name
    return str(shipped) if shipped.is_file() else name


def weight_table(path):
    if path is None:
        return P.WeightTable.default(), _shipped_table_path()
    return P.WeightTable.read(path), path


def _shipped_table_path():
    return str(resources.files("subdtune") / "data" / P._TABLE_FILE)


def _out(opts, name):
    os.makedirs(opts.out, exist_ok=True)
    return os.path.join(opts.out, name)


# ---------------------------------------------------------------- commands

def cmd_tune(opts):
    valences = opts.valence if isinstance(opts.valence, list) else \
        [int(x) for x in str(opts.valence or "").replace(",", " ").split()]
    if not valences:
        raise UsageError("--valence is required")
    for v in valences:
        if v == 4:
            raise UsageError("regular valence not tunable")
        if v < 3:
            raise UsageError(f"valence {v} is not a valid interior valence")
        if v == 3:
            raise UsageError("valence 3 keeps the classic weights (subdominant pair below 1/2)")
    shapes = ("cup", "saddle") if opts.shape == "both" else (opts.shape,)
    try:
        lo, hi = (float(x) for x in str(opts.lambda_range).split(":"))
    except ValueError as exc:
        raise UsageError(f"bad lambda range '{opts.lambda_range}'") from exc
    q = _int(opts.quadrature, "quadrature", 2, 8)
    results = []
    for v in valences:
        for s in shapes:
            t = tune(v, s, lo, hi, float(opts.step), float(opts.tol), q)
            results.append(t)
            print(f"{v},{s},{t.alpha:.7f},{t.beta:.7f},{t.gamma:.7f},{t.lam:.4f}  "
                  f"(relative energy error {t.error:.4e})")
    out = opts.out if opts.out.endswith(".csv") else _out(opts, "weights.csv")
    table = read_weight_table(out) if os.path.exists(out) else {}
    for t in results:
        table[(t.valence, t.shape)] = t
    rows = weight_rows(sorted(table.values(), key=lambda t: (t.valence, t.shape)))
    meta = metadata(quadrature=q, lambda_range=f"{lo}:{hi}", step=opts.step, tol=opts.tol)
    write_csv(out, WEIGHT_COLUMNS, rows, meta)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_spectrum(opts):
    if opts.valence is None:
        raise UsageError("--valence is required")
    v = _int(opts.valence, "valence", 3, 32)
    table_path = "none"
    if opts.shape:
        table, table_path = weight_table(opts.weights)
        table.tune_missing = False
        try:
            w = table.get(v, opts.shape)
        except KeyError as exc:
            raise UsageError(str(exc.args[0])) from exc
    else:
        a0, b0, g0 = default_weights(v)
        w = (float(opts.alpha if opts.alpha is not None else a0),
             float(opts.beta if opts.beta is not None else b0),
             float(opts.gamma if opts.gamma is not None else g0))
    if min(w) <= 0:
        raise UsageError("weights must be positive")
    E = eigensystem_for(v, tuple(w))
    rows = [{"j": j, "lambda": repr(lam), "frequency_m": m} for j, lam, m in spectrum_rows(E)]
    out = _out(opts, f"spectrum_v{v}.csv")
    meta = metadata(file_hash(table_path) if table_path != "none" else "none",
                    valence=v, alpha=repr(w[0]), beta=repr(w[1]), gamma=repr(w[2]))
    write_csv(out, SPECTRUM_COLUMNS, rows, meta)
    for r in rows[:6]:
        print(f"  j={r['j']:<3} lambda={float(r['lambda']):.6f}  m={r['frequency_m']}")
    print(smoothness_report(E).summary())
    print(f"wrote {out} ({len(rows)} eigenvalues)")
    return EXIT_OK


def _problem(opts, policy="cc"):
    path = mesh_path(opts.mesh)
    mesh = load_mesh(path)
    q = _int(opts.quadrature, "quadrature", 2, 8)
    return P.PlateProblem(mesh, P.Load(opts.load), policy=policy, quadrature=q), path


def _decision_rows(decisions):
    return [d.row() for d in decisions]


def cmd_solve(opts):
    level = _int(opts.level, "level", 0, 6)
    problem, path = _problem(opts, opts.policy)
    table, tpath = weight_table(opts.weights)
    res = P.solve_policy(problem, level, table)
    sol = res.solution
    err = P.error_norms(sol)
    meta = metadata(file_hash(tpath), problem.quadrature, mesh=os.path.basename(path),
                    load=opts.load, level=level, policy=opts.policy,
                    ev_weights=format_weights(sol.weights))
    xy = sol.disc.mesh.vertices[:, :2]
    rows = [{"vertex_id": i + 1, "x": repr(float(x)), "y": repr(float(y)), "w": repr(float(w))}
            for i, ((x, y), w) in enumerate(zip(xy, sol.w))]
    out = _out(opts, "solution.csv")
    write_csv(out, SOLUTION_COLUMNS, rows, meta)
    print(f"level {level}, {sol.n_dofs} unknowns, policy {opts.policy}")
    print(f"relative L2 error {err.l2:.6e}, relative energy error {err.energy:.6e}")
    if res.decisions:
        dout = _out(opts, "decisions.csv")
        write_csv(dout, DECISION_COLUMNS, _decision_rows(res.decisions), meta)
        _print_decisions(res.decisions)
        print(f"wrote {dout}")
    print(f"wrote {out}")
    return EXIT_OK


def _print_decisions(decisions):
    for d in decisions:
        print(f"  vertex {d.ev + 1} (valence {d.valence}): R = {d.R:.4g} -> {d.shape}")


def format_weights(wa):
    """Compact ``id:alpha/beta/gamma`` list (1-based ids) for a metadata line."""
    items = [f"{vid + 1}:{a!r}/{b!r}/{g!r}" for vid, (a, b, g) in sorted(wa.items())]
    return ",".join(items) or "classic"


def parse_weights(text):
    if not text or text == "classic":
        return WeightAssignment()
    out = {}
    try:
        for item in text.split(","):
            vid, triple = item.split(":")
            out[int(vid) - 1] = tuple(float(x) for x in triple.split("/"))
    except ValueError as exc:
        raise UsageError(f"bad ev_weights entry '{text}'") from exc
    return WeightAssignment(out)


def read_solution(path):
    """``(meta, w)`` from a solution CSV written by ``solve``."""
    with open(path, newline="") as fh:
        lines = fh.readlines()
    meta = {}
    if lines and lines[0].startswith("#"):
        for item in lines[0][1:].split():
            if "=" in item:
                k, v = item.split("=", 1)
                meta[k] = v
    body = [ln for ln in lines if not ln.startswith("#")]
    reader = csv.DictReader(body)
    if set(SOLUTION_COLUMNS) - set(reader.fieldnames or ()):
        raise UsageError(f"{path} is not a solution file")
    w = np.array([float(r["w"]) for r in reader])
    return meta, w


def cmd_decompose(opts):
    problem, path = _problem(opts, "cc")
    table, tpath = weight_table(opts.weights)
    if opts.solution:
        meta, w = read_solution(opts.solution)
        if "level" not in meta:
            raise UsageError(f"{opts.solution} lacks the level in its metadata line")
        level = _int(meta["level"], "level", 0, 6)
        policy = meta.get("policy", "cc")
        disc = P.discretisation(problem.mesh, level)
        if len(w) != disc.mesh.n_vertices:
            raise UsageError(f"{opts.solution} has {len(w)} values; the level-{level} mesh "
                             f"has {disc.mesh.n_vertices} vertices")
        sol = P.FESolution(level, disc, parse_weights(meta.get("ev_weights")), w[disc.free], problem)
    else:
        level = _int(opts.level, "level", 0, 6)
        # the first pass of the automatic pipeline: cup weights everywhere
        policy = "cup" if opts.policy == "auto" else opts.policy
        sol = P.solve_policy(P.replace(problem, policy=policy), level, table).solution
    decisions = [P.decompose(sol, i.ev) for i in sol.disc.evs if i.valence >= 5]
    if not decisions:
        raise UsageError("mesh has no extraordinary vertex of valence 5 or more")
    meta = metadata(file_hash(tpath), problem.quadrature, mesh=os.path.basename(path),
                    load=opts.load, level=level, policy=policy, level_factor="l=0")
    out = _out(opts, "decisions.csv")
    write_csv(out, DECISION_COLUMNS, _decision_rows(decisions), meta)
    _print_decisions(decisions)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_convergence(opts):
    levels = parse_levels(opts.levels)
    policies = [p.strip() for p in str(opts.policies).split(",") if p.strip()]
    bad = set(policies) - {"cc", "cup", "saddle", "auto"}
    if bad or not policies:
        raise UsageError(f"unknown policies: {', '.join(sorted(bad)) or '(none)'}")
    problem, path = _problem(opts)
    table, tpath = weight_table(opts.weights)
    reports = P.convergence_study(problem, levels, policies, table)
    rows = [r for lev_i in range(len(levels)) for rep in reports.values()
            for r in [rep.rows()[lev_i]]]
    meta = metadata(file_hash(tpath), problem.quadrature, mesh=os.path.basename(path),
                    load=opts.load, levels=f"{levels[0]}:{levels[-1]}")
    out = _out(opts, "convergence.csv")
    write_csv(out, CONVERGENCE_COLUMNS, rows, meta)
    for norm, attr in (("energy", "energy"), ("l2", "l2")):
        series = {p: (rep.n_dofs, getattr(rep, attr)) for p, rep in reports.items()}
        svg = loglog_svg(series, f"{opts.load} load, {os.path.basename(path)}",
                         "degrees of freedom", f"relative {norm} error")
        write_svg(_out(opts, f"convergence_{norm}.svg"), svg)
    for r in rows:
        print(f"  level {r['level']} {r['policy']:>6}: dofs {r['n_dofs']:>7}  "
              f"L2 {float(r['l2_rel']):.4e}  energy {float(r['energy_rel']):.4e}")
    print(f"wrote {out}")
    return EXIT_OK


COMMANDS = {"tune": cmd_tune, "spectrum": cmd_spectrum, "solve": cmd_solve,
            "convergence": cmd_convergence, "decompose": cmd_decompose}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve(args)
        return COMMANDS[opts.command](opts)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (P.NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, MeshError, InfeasibleError, SpectralError, ValueError, KeyError) as exc:
        msg = exc.args[0] if exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
