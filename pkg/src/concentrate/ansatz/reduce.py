"""Gluing split, projections and the reduced fixed point on a working frame.

Everything is written in v-units (u = h v) on the frame grid, where the
equation reads F(v) = Llin v - v^p = 0 with Llin the linear part of the
stretched operator.  For the global approximation W and a correction
phi = eta_{3 delta} phi_star + phi_flat:

    E      = F(W)
    N(phi) = -[(W + phi)^p - W^p - p W^(p-1) phi]
    C      = Llin(eta_{3 delta} phi_star) - eta_{3 delta} Llin phi_star
    [.]    = E + N(phi) - p W^(p-1) phi_flat
    outer  : Llin phi_flat = (1 - eta_delta) Nout,
             Nout = -C - (1 - eta_{delta/2}) [.]
    inner  : Lstar phi_star = M,
             M = eta_delta [.] + eta_{6 delta} (Llin - Lmodel) phi_star
                 + p (w0^(p-1) - W^(p-1)) phi_star
    Lstar  = -(L0 - mu^-2 eps^2 d_ybar^2)

The kernel and Z projections of M give the equations for the free normal
section (through mu^-1 eps^(I+1) J) and for e (through eps mu^-2 K_eps);
both are updated by the corresponding Newton step, which is the reduced
fixed point map written with the remainders M_eps1 and M_eps2.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ..errors import (DegenerateOperator, NonPositiveCoercivity, NotContracting,
                      ResonantEpsilon, SolverDivergence)
from ..k_ops import GapOperator, invert_jacobi
from ..util import loglog_slope
from .build import AnsatzExpansion, build_ansatz
from .glue import ansatz_on_frame, assemble_global, decay_fit, make_frame
from .line import _solve_rows, signed_power
from .norms import e_norm, outer_norm, section_norm, weighted_norm
from .stretched import linear_part

LAMBDA = 10.0
TOL_FP = 1e-10
TOL_FINAL = 1e-6
ROUNDOFF = 1e-12   # size of M below which updates are rounding noise
GAP_C = 0.5
RHO_SCALING = 0.25
ERROR_EPS = (0.04, 0.02, 0.01)


@dataclass
class ReducedState:
    phi_flat: np.ndarray
    phi_star: np.ndarray
    Phi_tilde: np.ndarray
    e: np.ndarray
    norms: dict = field(default_factory=dict)

    @classmethod
    def zero(cls, G, T):
        return cls(np.zeros((G, T)), np.zeros((G, T)), np.zeros(G), np.zeros(G))


class ReducedSystem:
    """Discrete reduced system for one (frame, I, lambda)."""

    def __init__(self, frame, I, lam=LAMBDA, gap_c=GAP_C, check_gap=True):
        self.frame = frame
        self.P = frame.problem
        self.I = int(I)
        self.lam = float(lam)
        P = self.P
        self.eps = frame.eps
        self.eta = {ell: frame.eta(ell) for ell in (0.25, 0.5, 1, 3, 6)}
        self.gap = GapOperator(self.eps, P.line.lambda0, P.L, P.mu, n_modes=P.G)
        self.gap_distance = self.gap.dist_to_spectrum()
        if check_gap and self.gap_distance < gap_c * self.eps:
            raise ResonantEpsilon(f"eps = {self.eps} is not admissible "
                                  f"(dist = {self.gap_distance:.3e} < {gap_c} eps)",
                                  {"eps": self.eps, "dist_to_spectrum": self.gap_distance})
        V = P.V_exact(frame.x, self.eps)
        if np.min(V) <= 0:
            raise NonPositiveCoercivity("V must stay positive on the frame", float(np.min(V)))
        self.k = 2 * np.pi / P.L * np.arange(P.G // 2 + 1)
        # the stretched operator differentiates twice with the first-order
        # spectral derivative, which drops the Nyquist mode
        self.k2_curve = self.k ** 2
        if P.G % 2 == 0:
            self.k2_curve[-1] = 0.0
        self._outer = {}
        self._inner = {}
        self._ans_cache = {}

    # ---- pieces -------------------------------------------------------------------
    @property
    def Phi_f(self):
        return self.frame.Phi_array()

    def Llin(self, f):
        return linear_part(self.P, f, self.Phi_f, self.eps)

    def Lmodel(self, f):
        P = self.P
        return -P.line.d2(f) + f - self.eps ** 2 * P.dy(f, 2) / P.mu ** 2

    def extension(self, f):
        """eta_{6 delta} (Llin - Lmodel) f: the part of the linearisation outside the model."""
        return self.eta[6] * (self.Llin(f) - self.Lmodel(f))

    def _coefficients(self):
        P, eps = self.P, self.eps
        x = self.frame.x
        q = eps * P.kappa * x
        return eps * P.kappa / (P.mu * (1 + q)), 1.0 / (1 + q) ** 2, P.V_exact(x, eps)

    def ansatz(self, e, Phi_tilde):
        """Order-I expansion for this e, with Phi_{I-1} = Phi_{I-1,0}(e) + Phi_tilde."""
        key = e.tobytes()
        if key not in self._ans_cache:
            self._ans_cache = {key: build_ansatz(self.P, self.I + 1, e)}
        full = self._ans_cache[key]
        I = self.I
        u_phi = full.reports["u_phi"]
        w = list(full.w[: I + 1])
        w[I] = full.w[I] + Phi_tilde[:, None] * u_phi
        Phi = [p.copy() for p in full.Phi[:I]]
        Phi[I - 1] = Phi[I - 1] + Phi_tilde
        return AnsatzExpansion(problem=self.P, I=I, w=w, Phi=Phi, e=e.copy(),
                               reports={"Phi_I_minus_1_0": full.Phi[I - 1].copy(),
                                        "u_phi": u_phi})

    def fields(self, st):
        P, p = self.P, self.P.p
        ans = self.ansatz(st.e, st.Phi_tilde)
        v = ansatz_on_frame(self.frame, ans)
        W = self.eta[3] * v
        E = P.residual(W, self.Phi_f, self.eps)
        phi = self.eta[3] * st.phi_star + st.phi_flat
        Wp1 = p * np.abs(W) ** (p - 1)
        N = -(signed_power(W + phi, p) - signed_power(W, p) - Wp1 * phi)
        C = self.Llin(self.eta[3] * st.phi_star) - self.eta[3] * self.Llin(st.phi_star)
        bracket = E + N - Wp1 * st.phi_flat
        Nout = -C - (1 - self.eta[0.5]) * bracket
        w0p = p * np.abs(P.line.w0[None, :]) ** (p - 1)
        M = self.eta[1] * bracket + self.extension(st.phi_star) + (w0p - Wp1) * st.phi_star
        return {"ansatz": ans, "v": v, "W": W, "E": E, "N_out": Nout, "M": M}

    # ---- linear solves ------------------------------------------------------------------
    def _outer_lu(self, m):
        if m not in self._outer:
            P, eps, mu = self.P, self.eps, self.P.mu
            A, B, V = self._coefficients()
            diag = (B * eps ** 2 * self.k2_curve[m] + V) / mu ** 2
            M = -P.line.D2 - sp.diags(A) @ P.line.D1 + sp.diags(diag)
            self._outer[m] = splu(M.tocsc())
        return self._outer[m]

    def _modewise(self, f, solver):
        fh = np.fft.rfft(f, axis=0)
        out = np.empty_like(fh)
        for m in range(fh.shape[0]):
            re_im = np.vstack([fh[m].real, fh[m].imag])
            s = solver(m, re_im)
            out[m] = s[0] + 1j * s[1]
        return np.fft.irfft(out, n=f.shape[0], axis=0)

    def coercive_solve(self, rhs, cut=True):
        """phi_flat with Llin phi_flat = (1 - eta_delta) rhs."""
        g = (1 - self.eta[1]) * rhs if cut else rhs
        sol = self._modewise(g, lambda m, b: self._outer_lu(m).solve(b.T).T)
        if not np.all(np.isfinite(sol)):
            raise SolverDivergence("outer solve produced non-finite values", None)
        return sol

    def model_linear_solve(self, rhs):
        """phi_star with Lstar phi_star = rhs and Pi[phi_star] = 0 (needs Pi[rhs] = 0)."""
        P = self.P
        shift = (self.eps * self.k / P.mu) ** 2
        rhs = np.asarray(rhs)
        scale = np.max(np.abs(rhs)) * rhs.shape[0]
        return self._modewise(-rhs, lambda m, b: P.line.solve_model(b, shift[m], scale=scale))

    def _inner_lu(self, m):
        if m not in self._inner:
            P, eps, mu = self.P, self.eps, self.P.mu
            line = P.line
            A, B, V = self._coefficients()
            eta = self.eta[6][0]
            ext = eta * ((B * self.k2_curve[m] - self.k[m] ** 2) * (eps / mu) ** 2
                         + V / mu ** 2 - 1)
            op = (line.L0 + sp.diags((eps * self.k[m] / mu) ** 2 + ext)
                  - sp.diags(eta * A) @ line.D1)
            Bc = np.column_stack([line.kernel, line.Z])
            self._inner[m] = splu(sp.bmat([[op, Bc], [Bc.T, None]], format="csc"))
        return self._inner[m]

    def inner_solve(self, rest):
        """phi_star with Pi[phi_star] = 0 and Pi^perp[Lstar phi_star - ext(phi_star) - rest] = 0.

        The extension term is kept on the left (it is mode-diagonal), so the
        remaining right-hand side ``rest`` carries only the explicit parts of M.
        """
        n = self.P.line.size
        return self._modewise(-np.asarray(rest),
                              lambda m, b: _solve_rows(self._inner_lu(m), b, n))

    def model_min_singular(self):
        """Smallest |eigenvalue| of L0 + shift_m on the Pi-orthogonal space, over modes."""
        from scipy.linalg import eig_banded
        P = self.P
        vals = eig_banded(P.line._band(P.line.L0), lower=True, eigvals_only=True)
        rest = vals[2:]
        shift = (self.eps * self.k / P.mu) ** 2
        return float(min(np.min(np.abs(rest + s)) for s in shift))

    # ---- reduced equations -----------------------------------------------------------------
    def remainders(self, st, M):
        """M_eps1 and M_eps2 of the current state (kernel and Z parts of M)."""
        P, I, eps = self.P, self.I, self.eps
        Jt = P.jacobi.apply(st.Phi_tilde[:, None])[:, 0]
        M1 = eps ** (I + 1) * Jt - P.mu * P.line.proj_kernel(M)
        M2 = eps * self.gap.apply(st.e) - P.mu ** 2 * P.line.proj_Z(M)
        return M1, M2

    def invert_J(self, rhs):
        try:
            return invert_jacobi(self.P.jacobi, rhs[:, None])[0][:, 0]
        except DegenerateOperator:
            return invert_jacobi(self.P.jacobi, rhs[:, None], quotient=True)[0][:, 0]

    def step(self, st):
        """One sweep: phi_flat, then phi_star, then Phi_tilde and e (Gauss-Seidel order)."""
        F = self.fields(st)
        phib = self.coercive_solve(F["N_out"])
        st1 = ReducedState(phib, st.phi_star, st.Phi_tilde, st.e)
        F = self.fields(st1)
        rest = F["M"] - self.extension(st.phi_star)
        phis = self.inner_solve(self.P.line.proj_perp(rest))
        st2 = ReducedState(phib, phis, st.Phi_tilde, st.e)
        F = self.fields(st2)
        M1, M2 = self.remainders(st2, F["M"])
        Phit = self.invert_J(M1 / self.eps ** (self.I + 1))
        e = self.gap.solve(M2 / self.eps)
        return ReducedState(phib, phis, Phit, e)

    # ---- norms -------------------------------------------------------------------------------
    def norms(self, st):
        P, eps = self.P, self.eps
        return {"phi_flat": outer_norm(P, st.phi_flat, eps, self.eta[0.25]),
                "phi_star": weighted_norm(P, st.phi_star, eps),
                "Phi": section_norm(st.Phi_tilde, P.L),
                "e": e_norm(st.e, P.L, eps)}

    def ball_scales(self):
        I, eps, lam = self.I, self.eps, self.lam
        return {"phi_flat": lam * eps ** (I + 1), "phi_star": lam * eps ** (I + 1),
                "Phi": lam * eps, "e": lam * eps ** (I - 3)}

    def in_ball(self, norms):
        sc = self.ball_scales()
        return {k: bool(norms[k] <= sc[k]) for k in sc}

    def lambda_needed(self, norms):
        sc = self.ball_scales()
        return max(norms[k] / sc[k] * self.lam for k in sc)

    def final_function(self, st):
        F = self.fields(st)
        v = F["W"] + self.eta[3] * st.phi_star + st.phi_flat
        return v, F

    def final_residual(self, v):
        P = self.P
        return float(P.h * P.mu ** 2 * np.max(np.abs(P.residual(v, self.Phi_f, self.eps))))


# ---- error sizes at zero ---------------------------------------------------------------------
def error_components_at_zero(system, rho_scaling=RHO_SCALING):
    """Norms of (N_eps, Pi^perp M_eps, M_eps1, M_eps2) at the zero state.

    Pi^perp M is measured in the weighted norm with weight rate
    ``rho_scaling`` and, for reference, with the default rate 1/2.
    """
    from .norms import RHO, holder
    P = system.P
    st = ReducedState.zero(P.G, P.line.size)
    F = system.fields(st)
    M1, M2 = system.remainders(st, F["M"])
    eps = system.eps
    h = P.L / P.G
    perp = P.line.proj_perp(F["M"])
    return {"epsilon": eps,
            "N": outer_norm(P, (1 - system.eta[1]) * F["N_out"], eps, system.eta[0.25],
                            second=False, sup_only=True),
            "PiperpM": weighted_norm(P, perp, eps, rho=rho_scaling, second=False),
            "PiperpM_default_rho": weighted_norm(P, perp, eps, rho=RHO, second=False),
            "M1": holder(M1, h, periodic=[True]),
            "M2": holder(M2, h, periodic=[True])}


ERROR_KEYS = ("N", "PiperpM", "PiperpM_default_rho", "M1", "M2")


def error_scan(chart, potential, eps_values=ERROR_EPS, I=3, delta=None, **frame_kw):
    """Error components at zero over eps, with fitted log-log exponents."""
    rows = []
    for eps in eps_values:
        frame = make_frame(chart, potential, eps, delta, **frame_kw)
        rows.append(error_components_at_zero(ReducedSystem(frame, I, check_gap=False)))
    fits = {}
    for key in ERROR_KEYS:
        vals = [r[key] for r in rows]
        fits[key] = np.inf if max(vals) < 1e-300 else loglog_slope(eps_values, vals)
    return {"rows": rows, "exponents": fits,
            "expected": {"N": I + 1, "PiperpM": I + 1, "PiperpM_default_rho": I + 1,
                         "M1": I + 2, "M2": I + 1}}


# ---- fixed point ---------------------------------------------------------------------------------
def _update_sizes(sys_, a, b):
    d = ReducedState(b.phi_flat - a.phi_flat, b.phi_star - a.phi_star,
                     b.Phi_tilde - a.Phi_tilde, b.e - a.e)
    nrm = sys_.norms(d)
    sc = sys_.ball_scales()
    absmax = {"phi_flat": np.max(np.abs(d.phi_flat)), "phi_star": np.max(np.abs(d.phi_star)),
              "Phi": np.max(np.abs(d.Phi_tilde)), "e": np.max(np.abs(d.e))}
    return {k: nrm[k] / sc[k] for k in sc}, absmax


def initial_frame_offset(chart, potential, eps, I, delta=None, **frame_kw):
    """Constant normal offset of the frame: mean of Phi_total for e = 0."""
    frame = make_frame(chart, potential, eps, delta, **frame_kw)
    ans = build_ansatz(frame.problem, I + 1)
    Phi = sum(eps ** j * ans.Phi[j] for j in range(I))
    return float(np.mean(Phi)), frame


def solve_reduced_system(chart, potential, eps, I=4, lam=LAMBDA, delta=None,
                         tol_fp=TOL_FP, tol_final=TOL_FINAL, max_iter=60,
                         damping=1.0, check_gap=True, **frame_kw):
    """Fixed point of the reduced system; returns the state, solution and reports."""
    off, frame0 = initial_frame_offset(chart, potential, eps, I, delta, **frame_kw)
    frame = make_frame(chart, potential, eps, delta, Phi_f=off, **frame_kw) if off else frame0
    sys_ = ReducedSystem(frame, I, lam, check_gap=check_gap)
    P = sys_.P
    st = ReducedState.zero(P.G, P.line.size)
    trace = []
    converged = False
    prev = None
    for it in range(1, max_iter + 1):
        new = sys_.step(st)
        if damping != 1.0:
            new = ReducedState(*(damping * getattr(new, f) + (1 - damping) * getattr(st, f)
                                 for f in ("phi_flat", "phi_star", "Phi_tilde", "e")))
        scaled, absmax = _update_sizes(sys_, st, new)
        size = max(scaled.values())
        norms = sys_.norms(new)
        ratio = size / prev if prev else float("nan")
        trace.append({"iter": it, "norm_phib": norms["phi_flat"], "norm_phistar": norms["phi_star"],
                      "norm_Phi": norms["Phi"], "norm_e": norms["e"], "ratio": ratio,
                      "update": size, "in_ball": sys_.in_ball(norms),
                      "lambda_needed": sys_.lambda_needed(norms)})
        st = new
        at_floor = all(absmax[k] <= ROUNDOFF * _floor_scale(sys_, k) for k in absmax)
        trace[-1]["at_floor"] = at_floor
        if size < tol_fp or at_floor:
            converged = True
            break
        if prev is not None and it > 3 and ratio >= 1.0:
            raise NotContracting(f"update ratio {ratio:.3f} at iteration {it}",
                                 {"iter": it, "scaled_updates": scaled})
        prev = size
    v, F = sys_.final_function(st)
    res = sys_.final_residual(v)
    u = P.h * v
    report = {"converged": converged, "iterations": len(trace), "final_residual": res,
              "residual_ok": res < tol_final, "positive": bool(np.all(u > 0)),
              "min_u": float(np.min(u)),
              "max_ratio": _max_ratio(trace),
              "all_in_ball": all(all(r["in_ball"].values()) for r in trace),
              "lambda_needed": max(r["lambda_needed"] for r in trace),
              "decay": decay_fit(frame, u),
              "gap_distance": sys_.gap_distance,
              "profile_match": float(np.max(np.abs(u - P.h * P.line.w0[None, :]))),
              "delta": frame.delta, "epsilon": float(eps), "I": I}
    return {"state": st, "system": sys_, "u": u, "trace": trace, "report": report}


def _floor_scale(sys_, key):
    """Amplification of rounding noise in M into each unknown by its inverse."""
    P = sys_.P
    if key == "Phi":
        return P.mu / sys_.eps ** (sys_.I + 1)
    if key == "e":
        return P.mu ** 2 / (sys_.eps * max(sys_.gap_distance, sys_.eps))
    return 1.0


def _max_ratio(trace):
    r = [t["ratio"] for t in trace[1:] if np.isfinite(t["ratio"]) and not t["at_floor"]]
    return max(r) if r else 0.0


# ---- artefacts ------------------------------------------------------------------------------------
def write_fixedpoint_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "norm_phib", "norm_phistar", "norm_Phi", "norm_e", "ratio"])
        for r in trace:
            w.writerow([r["iter"]] + [repr(float(r[k])) for k in
                                      ("norm_phib", "norm_phistar", "norm_Phi", "norm_e", "ratio")])


def write_error_components(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("epsilon",) + ERROR_KEYS)
        for r in rows:
            w.writerow([repr(float(r[k])) for k in ("epsilon",) + ERROR_KEYS])


def write_residual_scan(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epsilon", "I", "raw_residual", "e_term_removed_residual"])
        for r in rows:
            w.writerow([repr(float(r["epsilon"])), int(r["I"]), repr(float(r["raw_residual"])),
                        repr(float(r["e_term_removed_residual"]))])


def write_solution(out_dir, result, scenario="scenario"):
    """CSV slices of u (on-curve node, normal profile) plus the JSON manifest."""
    import pathlib
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sys_ = result["system"]
    P = sys_.P
    u = result["u"]
    with open(out / "solution_normal_slice.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "dist", "u"])
        for i in range(P.line.size):
            w.writerow([repr(float(P.line.t[i])), repr(float(sys_.frame.eps * sys_.frame.x[i])),
                        repr(float(u[0, i]))])
    with open(out / "solution_on_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ybar", "u"])
        i0 = int(np.argmin(np.abs(sys_.frame.x)))
        for g in range(P.G):
            w.writerow([repr(float(P.chart.y_grid[g])), repr(float(u[g, i0]))])
    rep = result["report"]
    manifest = {"scenario": scenario, "epsilon": rep["epsilon"], "I": rep["I"],
                "delta": rep["delta"], "converged": rep["converged"],
                "final_residual": rep["final_residual"]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest
