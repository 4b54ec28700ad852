"""Scenario-driven command line front end.

Scenario files are plain text, one dotted ``section.key = value`` per line,
``#`` starting a comment.  Example::

    problem.n = 2
    problem.k = 1
    problem.p = 3
    geometry.instance = circle
    geometry.radius = stationary
    geometry.grid = 64
    potential.model = gaussian
    run.I = 4
    run.eps = 0.05

Any key can be overridden by an environment variable CONC_<SECTION>_<KEY>
(for example CONC_RUN_I=3); CONC_OUT, CONC_THREADS and CONC_SEED set the
defaults of the matching flags.

Exit status: 0 on success, 2 when a check fails (a rejected scenario, a
non-admissible eps, a failed criterion), 1 on any other error.
"""

import argparse
import csv
import json
import math
import os
import pathlib
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import ConcentrateError, ParseError, ResonantEpsilon

COMMANDS = ("ground-state", "spectrum", "geometry-check", "stationary", "jacobi", "gap-scan",
            "build-ansatz", "residual-scan", "error-scan", "solve", "validate")


# ---- scenario parsing --------------------------------------------------------------------
def _float_list(text):
    parts = [p for p in text.replace(";", ",").split(",") if p.strip()]
    if not parts:
        raise ValueError("empty list")
    return [float(p) for p in parts]


def _float_or_word(*words):
    def conv(text):
        t = text.strip().lower()
        return t if t in words else float(text)
    return conv


def _positive(conv):
    def check(text):
        v = conv(text)
        if v <= 0:
            raise ValueError("must be positive")
        return v
    return check


# key -> (converter, default); a default of REQUIRED marks a required key
REQUIRED = object()
SCHEMA = {
    "problem.n": (int, REQUIRED),
    "problem.k": (int, 1),
    "problem.p": (float, REQUIRED),
    "geometry.instance": (str, REQUIRED),
    "geometry.radius": (_float_or_word("stationary"), "stationary"),
    "geometry.period": (_positive(float), 2 * math.pi),
    "geometry.kappa": (float, 0.0),
    "geometry.grid": (_positive(int), 64),
    "potential.model": (str, "constant"),
    "potential.c": (float, None),
    "potential.region_radius": (_positive(float), 10.0),
    "run.I": (int, 3),
    "run.eps": (_float_list, [0.05]),
    "run.delta": (_float_or_word("auto"), "auto"),
    "run.lambda": (_positive(float), 10.0),
    "run.tol_fp": (_positive(float), 1e-10),
    "run.tol_final": (_positive(float), 1e-6),
    "run.max_iter": (_positive(int), 60),
    "run.dt": (_positive(float), 0.02),
    "run.out": (str, "out"),
}


def parse_scenario(text, source="<scenario>", environ=None):
    """Parse scenario text into a flat dict of typed values (env overrides applied)."""
    raw = {}
    where = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0]
        if not body.strip():
            continue
        if "=" not in body:
            col = len(body) - len(body.lstrip()) + 1
            raise ParseError(f"{source}:{lineno}:{col}: expected 'section.key = value'",
                             {"line": lineno, "column": col})
        key_part, value_part = body.split("=", 1)
        key = key_part.strip()
        col = len(key_part) - len(key_part.lstrip()) + 1
        if key not in SCHEMA:
            raise ParseError(f"{source}:{lineno}:{col}: unknown key '{key}'",
                             {"line": lineno, "column": col, "key": key})
        vcol = len(key_part) + 2 + len(value_part) - len(value_part.lstrip())
        raw[key] = value_part.strip()
        where[key] = (lineno, vcol)
    env = os.environ if environ is None else environ
    for key in SCHEMA:
        name = "CONC_" + key.replace(".", "_").upper()
        if name in env:
            raw[key] = env[name]
            where[key] = (0, 1)
    out = {}
    for key, (conv, default) in SCHEMA.items():
        if key not in raw:
            if default is REQUIRED:
                raise ParseError(f"{source}: missing required key '{key}'", {"key": key})
            out[key] = default
            continue
        try:
            out[key] = conv(raw[key])
        except ValueError as exc:
            line, col = where[key]
            loc = f"{source}:{line}:{col}" if line else f"environment CONC_{key.replace('.', '_').upper()}"
            raise ParseError(f"{loc}: bad value {raw[key]!r} for '{key}' ({exc})",
                             {"line": line, "column": col, "key": key}) from None
    return out


def load_scenario(path, environ=None):
    p = pathlib.Path(path)
    return parse_scenario(p.read_text(), str(p), environ)


# ---- derived objects ----------------------------------------------------------------------
def validate_scenario(sc):
    """Derived quantities and the verdict for a parsed scenario."""
    from .profile import critical_exponent
    n, k, p = sc["problem.n"], sc["problem.k"], sc["problem.p"]
    N = n - k
    crit = critical_exponent(N) if N >= 1 else math.inf
    reasons = []
    if k != 1:
        reasons.append(f"k = {k}: only curves (k = 1) are supported")
    if N not in (1, 2, 3):
        reasons.append(f"N = {N} unsupported (N must be 1, 2 or 3)")
    if not p > 1:
        reasons.append("p must exceed 1")
    elif p >= crit:
        reasons.append(f"p = {p} is not subcritical for N = {N} (needs p < {crit})")
    if sc["geometry.instance"] not in ("line", "circle", "great_circle"):
        reasons.append(f"unknown geometry instance {sc['geometry.instance']!r}")
    if sc["potential.model"] not in ("constant", "gaussian", "polynomial"):
        reasons.append(f"unknown potential model {sc['potential.model']!r}")
    sigma = (p + 1) / (p - 1) - N / 2 if p > 1 else math.nan
    margin = crit - p if math.isfinite(crit) else math.inf
    return {"n": n, "k": k, "N": N, "p": p, "sigma": sigma, "critical_exponent": crit,
            "subcritical_margin": margin, "accepted": not reasons, "reasons": reasons}


def make_potential(sc):
    from .potential import PotentialModel
    kw = {"p": sc["problem.p"], "n": sc["problem.n"], "k": sc["problem.k"],
          "region_radius": sc["potential.region_radius"]}
    if sc["potential.c"] is not None:
        kw["c"] = sc["potential.c"]
    elif sc["potential.model"] == "constant":
        kw["c"] = 1.0
    return PotentialModel(sc["potential.model"], **kw)


def make_chart(sc, potential=None, grid=None):
    from .geom import AmbientSpace, build_chart
    from .k_ops import find_stationary_radius
    kind = sc["geometry.instance"]
    G = grid or sc["geometry.grid"]
    kappa = sc["geometry.kappa"]
    if kind == "great_circle" and kappa == 0:
        kappa = 1.0
    amb = AmbientSpace(sc["problem.n"], kappa)
    if kind == "circle":
        R = sc["geometry.radius"]
        if R == "stationary":
            R = find_stationary_radius(potential or make_potential(sc))
        return build_chart(amb, kind, R, n_grid=G)
    if kind == "line":
        return build_chart(amb, kind, period=sc["geometry.period"], n_grid=G)
    return build_chart(amb, kind, n_grid=G)


def _delta(sc):
    return None if sc["run.delta"] == "auto" else sc["run.delta"]


def _limit(sc):
    from .profile import LimitProblem
    return LimitProblem(sc["problem.n"] - sc["problem.k"], sc["problem.p"])


# ---- output helpers ------------------------------------------------------------------------
def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, data):
    pathlib.Path(path).write_text(json.dumps(_jsonable(data), indent=2) + "\n")


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _map(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---- commands -------------------------------------------------------------------------------
def cmd_validate(sc, out, opts):
    rep = validate_scenario(sc)
    write_json(out / "validate.json", rep)
    for key in ("N", "sigma", "critical_exponent", "subcritical_margin", "accepted"):
        print(f"{key} = {rep[key]}")
    for r in rep["reasons"]:
        print(f"rejected: {r}")
    return 0 if rep["accepted"] else 2


def cmd_ground_state(sc, out, opts):
    from .profile import sigma_identity_check, solve_ground_state, write_profile_csv
    t0 = time.perf_counter()
    prof = solve_ground_state(_limit(sc))
    elapsed = time.perf_counter() - t0
    write_profile_csv(prof, out / "ground_state.csv")
    ident = sigma_identity_check(prof)
    write_rows(out / "ground_state_summary.csv", ["N", "p", "w(0)", "sigma_identity_rel_error"],
               [[prof.N, float(prof.p), float(prof.center_value), float(ident["rel_error"])]])
    write_json(out / "ground_state.json", {"N": prof.N, "p": prof.p, "w(0)": prof.center_value,
                                           "sigma_identity": ident, "runtime_s": elapsed})
    print(f"w(0) = {prof.center_value!r}")
    return 0


def cmd_spectrum(sc, out, opts):
    from .linop import LinearizedOperator, SpecialSolutions, a_term_identity_check, apply_L0
    from .profile import solve_ground_state
    prof = solve_ground_state(_limit(sc))
    op = LinearizedOperator(prof)
    sp_ = SpecialSolutions(op)
    kern = float(np.max(np.abs(apply_L0(op, prof.wp, 1))))
    rep = {"lambda0": op.lambda0, "c0": op.c0, "kernel_residual": kern,
           "a_term_identity": a_term_identity_check(op, sp_)}
    write_rows(out / "spectrum_Z.csv", ["r", "Z", "kernel"],
               [[float(a), float(b), float(c)] for a, b, c in zip(prof.r, op.Z, prof.wp)])
    write_json(out / "spectrum.json", rep)
    print(f"lambda0 = {op.lambda0!r}")
    return 0


def cmd_geometry_check(sc, out, opts):
    from .geom import error_class_bound_check, write_chart_json
    chart = make_chart(sc, grid=16)
    rep = error_class_bound_check(chart)
    write_chart_json(out / "chart.json", chart)
    rows = [[e, rep["discrepancy"]["metric"][i], rep["discrepancy"]["logdet"][i],
             rep["discrepancy"]["laplacian"][i]] for i, e in enumerate(rep["eps"])]
    write_rows(out / "geometry_check.csv", ["epsilon", "metric", "logdet", "laplacian"], rows)
    write_json(out / "geometry_check.json", rep)
    q = rep["q"]["laplacian"]
    print(f"laplacian expansion order = {q}")
    return 0 if q >= 2.9 else 2


def cmd_stationary(sc, out, opts):
    from .k_ops import find_stationary_radius, stationary_residual, tol_stat
    from .potential import restrict_to_chart
    pot = make_potential(sc)
    chart = make_chart(sc, pot)
    res = stationary_residual(chart, restrict_to_chart(pot, chart, tube_radius=0), tol_stat(pot))
    rep = {"instance": chart.kind, "residual_sup": res["sup"], "stationary": res["stationary"]}
    if chart.kind == "circle":
        rep["radius"] = chart.radius
        rep["r_star_energy"] = find_stationary_radius(pot)
        rep["r_star_residual"] = find_stationary_radius(pot, method="residual")
    write_rows(out / "stationary.csv", ["y", "residual"],
               [[float(y), float(r)] for y, r in zip(chart.y_grid, res["residual"][:, 0])])
    write_json(out / "stationary.json", rep)
    print(f"stationary = {rep['stationary']} (sup residual {res['sup']!r})")
    return 0 if res["stationary"] else 2


def cmd_jacobi(sc, out, opts):
    from .k_ops import (assemble_jacobi, nondegeneracy_check, quadratic_form, write_jacobi_csv)
    from .potential import restrict_to_chart
    pot = make_potential(sc)
    chart = make_chart(sc, pot)
    J = assemble_jacobi(chart, restrict_to_chart(pot, chart, tube_radius=0), strict=False)
    rng = np.random.default_rng(opts.seed)
    y = chart.y_grid
    errs = []
    for _ in range(10):
        Phi = sum(rng.normal() * np.cos(m * 2 * np.pi * y / chart.period + rng.uniform(0, 2 * np.pi))
                  for m in range(min(6, y.size // 4 + 1)))[:, None] * np.ones((1, chart.N))
        qf = quadratic_form(J, Phi)
        ref = J.inner(J.apply(Phi), Phi)
        errs.append(abs(qf - ref) / max(abs(ref), 1e-300))
    mn = nondegeneracy_check(J)
    write_jacobi_csv(out / "jacobi.csv", J)
    write_json(out / "jacobi.json", {"min_abs_eigenvalue": mn, "form_rel_errors": errs,
                                     "nondegenerate": mn > 1e-6})
    print(f"min |eigenvalue| = {mn!r}; max form error {max(errs):.2e}")
    return 0


def cmd_gap_scan(sc, out, opts):
    from .k_ops import GapOperator, gap_scan, write_gap_csv
    from .linop import LinearizedOperator
    from .potential import restrict_to_chart
    from .profile import solve_ground_state
    pot = make_potential(sc)
    chart = make_chart(sc, pot)
    lam0 = LinearizedOperator(solve_ground_state(_limit(sc))).lambda0
    mu = restrict_to_chart(pot, chart, tube_radius=0).mu
    mu = float(mu[0]) if np.ptp(mu) == 0 else mu
    rows = sum(_map(lambda e: gap_scan(chart.period, lam0, mu, [e],
                                       n_modes=max(256, chart.y_grid.size)),
                    list(sc["run.eps"]), opts.threads), [])
    write_gap_csv(out / "gap_scan.csv", rows)
    res = GapOperator(1.0, lam0, chart.period, mu).resonances(5) if np.ndim(mu) == 0 else []
    write_json(out / "gap_scan.json", {"lambda0": lam0, "resonances": res, "rows": rows})
    for r in rows:
        print(f"eps = {r['epsilon']!r}: dist = {r['dist_to_spectrum']:.3e} "
              f"{'admissible' if r['admissible'] else 'resonant'}")
    return 0


def _stretched(sc, pot=None, grid=None):
    from .ansatz import make_problem
    pot = pot or make_potential(sc)
    return make_problem(make_chart(sc, pot, grid), pot, dt=sc["run.dt"])


def cmd_build_ansatz(sc, out, opts):
    from .ansatz import build_ansatz
    P = _stretched(sc)
    ans = build_ansatz(P, sc["run.I"])
    header = ["t"] + [f"w{l}" for l in range(1, ans.I + 1)]
    rows = [[float(P.t[i])] + [float(ans.w[l][0, i]) for l in range(1, ans.I + 1)]
            for i in range(P.t.size)]
    write_rows(out / "ansatz_w.csv", header, rows)
    rep = {"I": ans.I, "Phi": [p for p in ans.Phi], "decay_rates": ans.decay_rate(),
           "order1_defect": float(np.max(np.abs(ans.reports["order1_defect"]))),
           "section_iterations": ans.reports["section_iterations"]}
    write_json(out / "ansatz.json", rep)
    print(f"decay rates = {rep['decay_rates']}")
    return 0


def cmd_residual_scan(sc, out, opts):
    from .ansatz import build_ansatz, residual_scan
    from .ansatz.reduce import write_residual_scan
    P = _stretched(sc)
    eps = list(sc["run.eps"])
    orders = list(range(1, sc["run.I"] + 1))
    scans = _map(lambda I: residual_scan(build_ansatz(P, I), eps), orders, opts.threads)
    rows = [r for s in scans for r in s["rows"]]
    write_residual_scan(out / "residual_scan.csv", rows)
    exps = {I: s["exponent"] for I, s in zip(orders, scans)}
    ok = all(exps[I] >= I + 1 - 0.2 for I in orders)
    write_json(out / "residual_scan.json", {"exponents": exps, "ok": ok})
    for I in orders:
        print(f"I = {I}: exponent {exps[I]:.3f}")
    return 0 if ok else 2


def cmd_error_scan(sc, out, opts):
    from .ansatz import error_scan
    from .ansatz.reduce import write_error_components
    pot = make_potential(sc)
    chart = make_chart(sc, pot)
    rep = error_scan(chart, pot, list(sc["run.eps"]), sc["run.I"], _delta(sc), dt=sc["run.dt"])
    write_error_components(out / "error_components.csv", rep["rows"])
    write_json(out / "error_scan.json", {"exponents": rep["exponents"], "expected": rep["expected"]})
    for k, v in rep["exponents"].items():
        print(f"{k}: exponent {v:.3f} (expected {rep['expected'][k]})")
    return 0


def cmd_solve(sc, out, opts):
    from .ansatz import solve_reduced_system
    from .ansatz.reduce import write_fixedpoint_trace, write_solution
    pot = make_potential(sc)
    chart = make_chart(sc, pot)
    status = 0
    for eps in sc["run.eps"]:
        sub = out / f"eps_{eps:g}" if len(sc["run.eps"]) > 1 else out
        sub.mkdir(parents=True, exist_ok=True)
        try:
            res = solve_reduced_system(chart, pot, eps, I=sc["run.I"], lam=sc["run.lambda"],
                                       delta=_delta(sc), tol_fp=sc["run.tol_fp"],
                                       tol_final=sc["run.tol_final"],
                                       max_iter=sc["run.max_iter"], dt=sc["run.dt"])
        except ResonantEpsilon as exc:
            print(f"eps = {eps}: {exc}")
            status = 2
            continue
        write_fixedpoint_trace(sub / "fixedpoint_trace.csv", res["trace"])
        write_solution(sub, res, opts.scenario_name)
        write_json(sub / "solve_report.json", res["report"])
        rep = res["report"]
        print(f"eps = {eps}: converged = {rep['converged']} in {rep['iterations']} iterations, "
              f"residual {rep['final_residual']:.3e}, positive = {rep['positive']}, "
              f"lambda needed {rep['lambda_needed']:.3g}")
        if not (rep["converged"] and rep["residual_ok"] and rep["positive"]):
            status = 2
    return status


HANDLERS = {"validate": cmd_validate, "ground-state": cmd_ground_state,
            "spectrum": cmd_spectrum, "geometry-check": cmd_geometry_check,
            "stationary": cmd_stationary, "jacobi": cmd_jacobi, "gap-scan": cmd_gap_scan,
            "build-ansatz": cmd_build_ansatz, "residual-scan": cmd_residual_scan,
            "error-scan": cmd_error_scan, "solve": cmd_solve}


# ---- figures (optional) -----------------------------------------------------------------------
def make_figures(out):
    """Plot every CSV in ``out`` (first column against the numeric rest)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    for path in sorted(pathlib.Path(out).rglob("*.csv")):
        try:
            data = np.genfromtxt(path, delimiter=",", names=True)
        except ValueError:
            continue
        names = data.dtype.names or ()
        if data.size < 2 or len(names) < 2:
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        x = data[names[0]]
        for nm in names[1:]:
            y = data[nm]
            if np.all(np.isfinite(y)):
                ax.plot(x, y, label=nm)
        pos = [data[nm] for nm in names[1:] if np.all(data[nm] > 0)]
        if pos and max(np.max(y) / np.min(y) for y in pos) > 1e3:
            ax.set_yscale("log")
        ax.set_xlabel(names[0])
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(path.with_suffix(".png"), dpi=110)
        plt.close(fig)


# ---- entry point ----------------------------------------------------------------------------------
def build_parser():
    ap = argparse.ArgumentParser(prog="concentrate", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("scenario_pos", nargs="?", help="scenario file (alternative to --scenario)")
    ap.add_argument("--scenario", help="scenario file")
    ap.add_argument("--out", default=os.environ.get("CONC_OUT"), help="output directory")
    ap.add_argument("--threads", type=int, default=int(os.environ.get("CONC_THREADS", "1")),
                    help="workers for independent eps-scan points")
    ap.add_argument("--seed", type=int, default=int(os.environ.get("CONC_SEED", "0")),
                    help="seed for randomised checks")
    ap.add_argument("--figures", action="store_true", help="also render PNGs (needs matplotlib)")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    path = args.scenario or args.scenario_pos
    if path is None:
        print("error: a scenario file is required (--scenario PATH)", file=sys.stderr)
        return 1
    try:
        sc = load_scenario(path)
        out = pathlib.Path(args.out or sc["run.out"])
        out.mkdir(parents=True, exist_ok=True)
        args.scenario_name = pathlib.Path(path).stem
        if args.command != "validate":
            rep = validate_scenario(sc)
            if not rep["accepted"]:
                for r in rep["reasons"]:
                    print(f"rejected: {r}", file=sys.stderr)
                return 2
        status = HANDLERS[args.command](sc, out, args)
        if args.figures:
            make_figures(out)
        return status
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 1
    except ConcentrateError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
