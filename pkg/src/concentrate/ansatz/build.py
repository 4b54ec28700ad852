"""Order-by-order construction of the approximate solution.

v_I = w0 + sum_{l=1..I} eps^l w_l(ybar, t) + eps e(ybar) Z(t),
Phi = sum_{j=0..I-1} eps^j Phi_j(ybar).

At order l the eps^l coefficient of S(v) must vanish apart from the
e-terms lambda0 e Z (order 1) and -mu^-2 e'' Z (order 3), which are left in
the error on purpose.  Writing that coefficient as L0 w_l + f_l:

* order 1: <f_1, d_t w0> = 0 is the stationarity of the curve;
* order l >= 2: <f_l, d_t w0> = 0 is an equation J Phi_{l-2} = ... on the
  curve (J the Jacobi operator), solved by defect correction with the
  assembled Jacobi matrix;
* w_l = w_{l,1} + Phi_{l-1} u_Phi with w_{l,1} orthogonal to the kernel and
  u_Phi = L0^-1(-mu^-2 dV/dx w0) (equal to sigma^-1 H U0 on a stationary
  curve); Phi_{l-1} is fixed at the next order, Phi_{I-1} is a free input.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import FredholmViolation
from ..k_ops import invert_jacobi, spectral_derivative, stationary_residual
from ..util import loglog_slope
from . import series as ser

I_MAX = 6
TOL_STAT_REL = 1e-6


@dataclass
class AnsatzExpansion:
    problem: object
    I: int
    w: list                 # w[l] for l = 1..I, each (G, T); w[0] unused
    Phi: list               # Phi[j] for j = 0..I-1, each (G,)
    e: np.ndarray           # (G,)
    reports: dict = field(default_factory=dict)

    @property
    def line(self):
        return self.problem.line

    def v(self, eps):
        """v_I on the (ybar, t) grid."""
        out = np.broadcast_to(self.line.w0, (self.problem.G, self.line.size)).copy()
        for l in range(1, self.I + 1):
            out += eps ** l * self.w[l]
        out += eps * self.e[:, None] * self.line.Z[None, :]
        return out

    def Phi_total(self, eps):
        return sum(eps ** j * self.Phi[j] for j in range(self.I))

    def e_term(self, eps):
        """eps (lambda0 e - eps^2 mu^-2 e'') Z, left in the error by construction."""
        P = self.problem
        e2 = spectral_derivative(self.e, P.L, 2)
        return (eps * (self.line.lambda0 * self.e - eps ** 2 * e2 / P.mu ** 2))[:, None] * self.line.Z[None, :]

    def decay_rate(self, t_window=(8.0, 18.0)):
        """Exponential rate tau of each w_l after removing an algebraic prefactor.

        The monotone envelope max_{|s| >= |t|, all y} |w_l(y, s)| is
        regressed as log env = a + b log|t| - tau |t| over the window, on
        each side of the curve; the smaller rate is reported.
        """
        t = self.line.t
        rates = []
        for l in range(1, self.I + 1):
            env = np.max(np.abs(self.w[l]), axis=0)
            side_rates = []
            for side in (t > 0, t < 0):
                ts, es = np.abs(t[side]), env[side]
                order = np.argsort(-ts)
                ts, es = ts[order], np.maximum.accumulate(es[order])
                m = (ts >= t_window[0]) & (ts <= t_window[1]) & (es > 1e-280)
                if m.sum() < 10:
                    side_rates.append(np.inf)
                    continue
                X = np.column_stack([np.ones(m.sum()), np.log(ts[m]), ts[m]])
                coef = np.linalg.lstsq(X, np.log(es[m]), rcond=None)[0]
                side_rates.append(float(-coef[2]))
            rates.append(min(side_rates))
        return rates


def _series(P, w, Phi, e, K, w0):
    G, T = P.G, P.line.size
    v = ser.zeros(K, (G, T))
    v[0] = w0
    for l in range(1, K + 1):
        if w[l] is not None:
            v[l] += w[l]
    v[1] += e[:, None] * P.line.Z[None, :]
    Ph = np.zeros((K + 1, G))
    for j in range(min(K + 1, len(Phi))):
        if Phi[j] is not None:
            Ph[j] = Phi[j]
    return v, Ph


def order_coefficient(P, w, Phi, e, order):
    """eps^order coefficient of S(v) with the e-terms removed."""
    v, Ph = _series(P, w, Phi, e, order, P.line.w0[None, :])
    c = P.residual_series(v, Ph)[order]
    Z = P.line.Z[None, :]
    if order == 1:
        c = c - P.line.lambda0 * e[:, None] * Z
    if order == 3:
        c = c + spectral_derivative(e, P.L, 2)[:, None] * Z / P.mu ** 2
    return c


def build_order1(P, e=None, tol=None):
    """w_{1,1} and the order-1 solvability defect (the stationarity check)."""
    G = P.G
    e = np.zeros(G) if e is None else np.asarray(e, dtype=float)
    w = [None] * 2
    c1 = order_coefficient(P, w, [np.zeros(G)], e, 1)
    defect = P.line.proj_kernel(c1)                      # (G,)
    stat = stationary_residual(P.chart, P.restricted)["residual"][:, 0]
    if tol is None:
        tol = TOL_STAT_REL
    if np.max(np.abs(defect)) > tol:
        raise FredholmViolation("order-1 equation not solvable: the curve is not stationary",
                                {"defect": float(np.max(np.abs(defect))),
                                 "stationary_residual": float(np.max(np.abs(stat)))})
    w11 = P.line.solve(-c1)
    u_phi = P.line.solve(-np.asarray(P.V_derivs[1]) / P.mu ** 2 * P.line.w0)
    return {"w11": w11, "c1": c1, "defect": defect, "stationary_residual": stat, "u_phi": u_phi}


def order1_defect(P):
    """Order-1 kernel projection and stationarity residual, without raising."""
    G = P.G
    c1 = order_coefficient(P, [None, None], [np.zeros(G)], np.zeros(G), 1)
    return (P.line.proj_kernel(c1),
            stationary_residual(P.chart, P.restricted)["residual"][:, 0])


def _solve_section(P, proj, Phi0, max_iter=30, tol=1e-13):
    """Zero of the kernel projection as a function of one normal section.

    The projection depends on the section through mu^-1 J Phi plus terms of
    no consequence for the update, so Newton steps use the Jacobi matrix.
    Iteration stops at ``tol`` or once the residual stalls four orders of
    magnitude below its start (the neglected terms then dominate).
    """
    J = P.jacobi
    degenerate = False
    Phi = Phi0.copy()
    hist = []
    for _ in range(max_iter):
        pr = proj(Phi)
        hist.append(float(np.max(np.abs(pr))))
        stalled = len(hist) > 1 and hist[-1] >= 0.5 * hist[-2]
        if hist[-1] < tol or (stalled and hist[-1] < max(1e-10, 1e-4 * hist[0])):
            return Phi, hist
        try:
            step, _ = invert_jacobi(J, P.mu * pr[:, None])
        except Exception:
            degenerate = True
            step, _ = invert_jacobi(J, P.mu * pr[:, None], quotient=True)
        Phi = Phi - step[:, 0]
        if degenerate and np.max(np.abs(pr)) == 0:
            return Phi, hist
    raise FredholmViolation("projection equation for the normal section did not converge", hist)


def build_ansatz(P, I=3, e=None, Phi_free=None):
    """AnsatzExpansion of order I (orders 1..I, sections Phi_0..Phi_{I-2} solved)."""
    if not 1 <= I <= I_MAX:
        raise ValueError(f"order I must be in 1..{I_MAX}")
    G = P.G
    e = np.zeros(G) if e is None else np.asarray(e, dtype=float).copy()
    free = np.zeros(G) if Phi_free is None else np.asarray(Phi_free, dtype=float)
    o1 = build_order1(P, e)
    u_phi = o1["u_phi"]
    w = [None] * (I + 1)
    w1 = [None] * (I + 1)                                # the w_{l,1} parts
    Phi = [np.zeros(G) for _ in range(I)]
    Phi[I - 1] = free.copy()
    w1[1] = o1["w11"]
    w[1] = w1[1] + Phi[0][:, None] * u_phi
    hist = {}
    for l in range(2, I + 1):
        def proj(section, l=l):
            Phi[l - 2] = section
            w[l - 1] = w1[l - 1] + section[:, None] * u_phi
            return P.line.proj_kernel(order_coefficient(P, w, Phi, e, l))

        Phi[l - 2], hist[l] = _solve_section(P, proj, Phi[l - 2])
        w[l - 1] = w1[l - 1] + Phi[l - 2][:, None] * u_phi
        c = order_coefficient(P, w, Phi, e, l)
        w1[l] = P.line.solve(-c)
        w[l] = w1[l] + Phi[l - 1][:, None] * u_phi
    reports = {"order1_defect": o1["defect"], "stationary_residual": o1["stationary_residual"],
               "section_iterations": hist, "u_phi": u_phi, "w_parts": w1}
    return AnsatzExpansion(problem=P, I=I, w=w, Phi=Phi, e=e, reports=reports)


# ---- interior residual --------------------------------------------------------------
def weighted_sup(line, f, rho=0.5, window=None):
    t = line.t
    m = np.ones(t.size, bool) if window is None else np.abs(t) <= window
    return float(np.max(np.exp(rho * np.abs(t[m])) * np.abs(np.atleast_2d(f)[:, m])))


def residual_interior(ans, eps, rho=0.5, window=6.0):
    """e^{rho|t|}-weighted sup of S(v_I), raw and with the e-term removed."""
    P = ans.problem
    S = P.residual(ans.v(eps), ans.Phi_total(eps), eps)
    return {"epsilon": float(eps), "I": ans.I,
            "raw_residual": weighted_sup(P.line, S, rho, window),
            "e_term_removed_residual": weighted_sup(P.line, S - ans.e_term(eps), rho, window)}


def residual_scan(ans, eps_values, rho=0.5, window=6.0):
    rows = [residual_interior(ans, e, rho, window) for e in eps_values]
    vals = [r["e_term_removed_residual"] for r in rows]
    slope = np.inf if max(vals) < 1e-300 else loglog_slope(eps_values, vals)
    return {"rows": rows, "exponent": slope}
