"""Command-line front end: ``magnetolab <subcommand> ...``.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys as _sys
from fractions import Fraction

import numpy as np

from . import complexes, contact, flow, linearization, mapverify
from .config import BUILTINS, ConfigError, load_json, load_system, parse_json, system_to_dict
from .geometry import GeometryError, PhasePoint

log = logging.getLogger("magnetolab")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(ConfigError):
    pass


# output helpers -----------------------------------------------------------------

def jsonable(x):
    """Plain JSON types; non-finite floats become the strings "inf", "-inf", "nan"."""
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if hasattr(x, "to_json"):
        return jsonable(x.to_json())
    return x


def dumps(obj):
    return json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def emit(text, path=None):
    if path in (None, "-"):
        _sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def floats(text, n=None, what="value"):
    try:
        vals = [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"cannot parse {what} {text!r}") from None
    if n is not None and len(vals) != n:
        raise UsageError(f"{what} needs {n} comma-separated numbers, got {len(vals)}")
    return vals


def json_arg(text):
    """Inline JSON if it looks like JSON, else a file path."""
    t = text.strip()
    if t[:1] in "[{":
        return parse_json(t, "<argument>")
    return load_json(text)


# subcommands -----------------------------------------------------------------------

def cmd_simulate(a):
    sys = load_system(a.system, a.s)
    q1, q2, v1, v2 = floats(a.init, 4, "--init")
    if a.time < 0:
        raise UsageError("--time must be non-negative")
    p0 = PhasePoint.make(sys.surface, a.chart, [q1, q2], [v1, v2])
    traj = flow.integrate(sys, p0, a.time, tol=a.tol, out_dt=a.dt)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "chart", "q1", "q2", "v1", "v2", "rho"])
    for i in range(len(traj.t)):
        w.writerow([repr(float(traj.t[i])), int(traj.chart[i]),
                    *(repr(float(x)) for x in traj.q[i]),
                    *(repr(float(x)) for x in traj.v[i]), repr(float(traj.rho[i]))])
    emit(buf.getvalue(), a.out)
    return EXIT_OK


def cmd_orbits(a):
    sys = load_system(a.system, a.s)
    section = {"axis": a.axis, "value": a.value, "chart": a.chart, "speed": a.speed}
    nu, nth = (int(x) for x in floats(a.grid, 2, "--grid"))
    orbits = flow.find_closed_orbits(sys, section, grid=(nu, nth), tol=a.tol, t_max=a.t_max,
                                     u_range=tuple(floats(a.u_range, 2, "--u-range")))
    emit(dumps([o.to_json() for o in orbits]), a.out)
    return EXIT_OK


def _load_orbit(sys, ref, select):
    doc = json_arg(ref)
    if isinstance(doc, list):
        if not doc:
            raise UsageError("orbit file is empty")
        if not 0 <= select < len(doc):
            raise UsageError(f"--select {select} out of range (0..{len(doc) - 1})")
        doc = doc[select]
    try:
        return flow.ClosedOrbit.from_json(sys, doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed orbit record: {exc}") from None


def cmd_index(a):
    sys = load_system(a.system, a.s)
    orbit = _load_orbit(sys, a.orbit, a.select)
    path = linearization.linearized_flow(sys, orbit)
    data = linearization.index_data(path, a.iterates)
    out = {"mu_bar": data.mu, "type": data.kind,
           "table": linearization.index_table(data, a.iterates)}
    if data.delta is not None:
        out["delta_tilde"] = data.delta
    emit(dumps(out), a.out)
    return EXIT_OK


def cmd_certify(a):
    s_list = floats(a.s, what="--s") if a.s is not None else [None]
    a_list = floats(a.a, what="--a")
    certs = []
    for s in s_list:
        sys = load_system(a.system, s)
        for av in a_list:
            certs.append(contact.certify(sys, sys.s, av, grid=a.grid))
    if len(certs) == 1:
        out = certs[0].to_json()
    else:
        out = {"kind": "certificate-grid", "s": s_list if s_list != [None] else [certs[0].s],
               "a": a_list, "certificates": [c.to_json() for c in certs]}
    emit(dumps(out), a.out)
    return EXIT_OK if all(c.positive for c in certs) else EXIT_FAIL


def cmd_sbounds(a):
    if a.system is not None:
        sys = load_system(a.system)
        nb, mf = contact.data_bounds(sys)
    else:
        if a.norm_beta is None or a.min_f is None:
            raise UsageError("give --system or both --norm-beta and --min-f")
        nb, mf = a.norm_beta, a.min_f
    s_minus, s_plus = contact.s_bounds(nb, mf)
    emit(dumps({"norm_beta": nb, "min_f": mf, "s_minus": s_minus, "s_plus": s_plus}), a.out)
    return EXIT_OK


def cmd_r0(a):
    sys = load_system(a.system)
    res = contact.estimate_r0(sys, m=a.basis, grid=a.grid, n_loops=a.loops)
    emit(dumps(res), a.out)
    return EXIT_OK


def cmd_ql_torus(a):
    spec = contact.QLTorusSpec(tuple(floats(a.center, 2, "--center")), a.radius, a.width,
                               a.sharpness)
    sys, delta = contact.build_ql_torus(spec, s=a.s)
    doc = system_to_dict(sys)
    doc["meta"] = {"delta": delta.to_json(), "epsilon": spec.epsilon}
    emit(dumps(doc), a.out)
    return EXIT_OK


def _parse_target(text):
    target = {}
    for part in text.split(","):
        if not part.strip():
            continue
        try:
            k, v = part.split(":")
            target[int(k)] = int(v)
        except ValueError:
            raise UsageError(f"target entries look like degree:dim, got {part!r}") from None
    return target


def _table_from_args(a):
    if a.orbits is None:
        raise UsageError("--orbits is required for this check")
    doc = json_arg(a.orbits)
    if not isinstance(doc, list):
        raise ConfigError("--orbits must hold a JSON array of orbit records")
    try:
        recs = [complexes.OrbitRecord.from_json(d) for d in doc]
    except flow.ArityError as exc:
        raise ConfigError(str(exc)) from None
    return complexes.build_table(recs, cutoff=a.cutoff, k_max=a.k_max, morse=a.morse)


def cmd_complex(a):
    check = a.check
    if check.startswith("mb="):
        seq = [int(x) for x in check[3:].split(",") if x.strip()]
        counts = complexes.mb_e1_counts(seq, equivariant=a.equivariant)
        lo = 2 - 2 * len(seq)
        rep = complexes.acyclicity_feasible(counts, complete=(lo, math.inf))
        rep.update(check="mb", a=seq, equivariant=a.equivariant)
        emit(dumps(rep), a.out)
        return EXIT_OK
    table = _table_from_args(a)
    if check == "acyclic":
        rep = complexes.acyclicity_feasible(table)
    elif check.startswith("target="):
        rep = complexes.acyclicity_feasible(table, _parse_target(check[7:]))
    elif check.startswith("bv="):
        scen = json_arg(check[3:])
        rep = complexes.bv_obstruction(table, scen, search=not a.no_search)
        ok, wit = complexes.delta_injective_top(table)
        rep["delta_injective_top"] = {"holds": ok, **wit}
    elif check == "delta":
        ok, wit = complexes.delta_injective_top(table, a.degree)
        rep = {"holds": ok, **wit}
    else:
        raise UsageError(f"unknown check {check!r}")
    rep["check"] = check.split("=")[0]
    rep["table"] = table.to_json()
    emit(dumps(rep), a.out)
    return EXIT_OK


def cmd_verify_appendix(a):
    s_vals = floats(a.s, what="--s")
    if any(s <= 0 for s in s_vals):
        raise UsageError("--s values must be positive")
    res = mapverify.verify_appendix(s_vals, samples=a.samples, seed=a.seed)
    res["tolerance"] = a.tolerance
    res["passed"] = bool(res["max_residual"] < a.tolerance)
    emit(dumps(res), a.out)
    return EXIT_OK if res["passed"] else EXIT_FAIL


def cmd_plot(a):
    from . import plotting
    svg = plotting.render(a.results, a.kind)
    emit(svg, a.out)
    return EXIT_OK


# parser ------------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="magnetolab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)
    systems = f"built-in name ({', '.join(sorted(BUILTINS))}) or JSON file"

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(fn=fn)
        sp.add_argument("--out", default=None, help="output path (default stdout)")
        sp.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    sp = add("simulate", cmd_simulate, "integrate one trajectory to CSV")
    sp.add_argument("--system", required=True, help=systems)
    sp.add_argument("--s", type=float, default=None, help="override the field strength")
    sp.add_argument("--init", required=True, help="q1,q2,v1,v2")
    sp.add_argument("--chart", type=int, default=0)
    sp.add_argument("--time", type=float, required=True)
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--dt", type=float, default=0.0, help="dense output step (0: solver steps)")

    sp = add("orbits", cmd_orbits, "search closed orbits through a section")
    sp.add_argument("--system", required=True, help=systems)
    sp.add_argument("--s", type=float, default=None)
    sp.add_argument("--axis", type=int, default=1)
    sp.add_argument("--value", type=float, default=0.0)
    sp.add_argument("--chart", type=int, default=0)
    sp.add_argument("--speed", type=float, default=1.0)
    sp.add_argument("--grid", default="4,8", help="seeds along the section,angles")
    sp.add_argument("--u-range", default="0,1")
    sp.add_argument("--t-max", type=float, default=10.0)
    sp.add_argument("--tol", type=float, default=1e-9)

    sp = add("index", cmd_index, "index data of a closed orbit and its iterates")
    sp.add_argument("--system", required=True, help=systems)
    sp.add_argument("--s", type=float, default=None)
    sp.add_argument("--orbit", required=True, help="ClosedOrbit JSON (file or inline)")
    sp.add_argument("--select", type=int, default=0, help="entry of an orbit array")
    sp.add_argument("--iterates", type=int, default=8)

    sp = add("certify", cmd_certify, "certify positivity of the contact value")
    sp.add_argument("--system", required=True, help=systems)
    sp.add_argument("--s", default=None, help="field strength(s), comma-separated")
    sp.add_argument("--a", default="0", help="shift(s), comma-separated")
    sp.add_argument("--grid", type=int, default=16)

    sp = add("sbounds", cmd_sbounds, "contact thresholds s_- and s_+")
    sp.add_argument("--norm-beta", type=float, default=None)
    sp.add_argument("--min-f", type=float, default=None)
    sp.add_argument("--system", default=None, help="estimate the data from a system instead")

    sp = add("r0", cmd_r0, "bracket the primitive norm r0")
    sp.add_argument("--system", default="ql-torus", help=systems)
    sp.add_argument("--basis", type=int, default=12)
    sp.add_argument("--grid", type=int, default=96)
    sp.add_argument("--loops", type=int, default=12)

    sp = add("ql-torus", cmd_ql_torus, "write a QL-magnetic torus system")
    sp.add_argument("--radius", type=float, default=0.25)
    sp.add_argument("--width", type=float, default=0.2)
    sp.add_argument("--center", default="0.5,0.5")
    sp.add_argument("--sharpness", type=float, default=0.3)
    sp.add_argument("--s", type=float, default=1.0)

    sp = add("complex", cmd_complex, "generator tables and feasibility checks")
    sp.add_argument("--orbits", default=None, help="JSON array of orbit records")
    sp.add_argument("--cutoff", type=float, default=None)
    sp.add_argument("--k-max", type=int, default=None)
    sp.add_argument("--morse", default="none")
    sp.add_argument("--check", required=True,
                    help="acyclic | target=deg:dim,... | bv=<scenario json> | mb=a1,a2,... | delta")
    sp.add_argument("--degree", type=int, default=2)
    sp.add_argument("--equivariant", action="store_true")
    sp.add_argument("--no-search", action="store_true", help="skip completion enumeration")

    sp = add("verify-appendix", cmd_verify_appendix, "check the sphere map identities")
    sp.add_argument("--s", default="0.1,1,10")
    sp.add_argument("--samples", type=int, default=1000)
    sp.add_argument("--tolerance", type=float, default=1e-8)

    sp = add("plot", cmd_plot, "render a results file as SVG")
    sp.add_argument("results")
    sp.add_argument("--kind", required=True, choices=["trajectory", "certificate", "grading"])
    return p


def run(argv=None):
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.fn(a)
    except linearization.FrameError as exc:
        print(f"numerical failure [linearization]: FrameError: {exc}", file=_sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, GeometryError) as exc:
        print(f"configuration error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except flow.ArityError as exc:
        print(f"configuration error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except (flow.StiffnessError, linearization.DegeneracyError, contact.NotExactError,
            ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        mod = type(exc).__module__.rsplit(".", 1)[-1]
        print(f"numerical failure [{mod}]: {type(exc).__name__}: {exc}", file=_sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"configuration error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG


def main():
    _sys.exit(run())


if __name__ == "__main__":
    main()
