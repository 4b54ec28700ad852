"""Fermi charts around a curve K in a model ambient space, metric expansions
and the expansion of the Laplace-Beltrami operator in stretched coordinates.

Index convention: coordinate index 0..k-1 runs along K (variable y), k..n-1
across K (variable x, or xi after the shift x = xi + Phi(eps y)).  All
supported curves are parametrised by arclength with a parallel normal frame,
so along K the induced metric is the identity and the connection forms
Gam[c, a, i] (tangent c, a; normal i) and the frame curvature R[al, be, ga, de]
are constant.  Every derivative-of-chart-data term therefore drops out of
the expansions below.

Three instances are supported, each with a closed-form exact metric:

    line          straight line in R^n (optionally periodic)
    circle        round circle of radius R in the (z1, z2)-plane of R^n
    great_circle  great circle in the round n-sphere of curvature kappa

The exact metrics in Fermi coordinates (ybar, xbar) are

    line          identity
    circle        (1 + xbar_1/R)^2 dy^2 + |dxbar|^2
    great_circle  cos^2(|xbar|/a) dy^2 + dr^2 + a^2 sin^2(r/a) dOmega^2

with a = kappa^(-1/2).  Mean curvature is H_j = -sum_a Gam[a, a, j]; for the
circle it equals +1/R along the outward normal.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .errors import OutsideChart, UnsupportedManifold
from .util import loglog_slope

KINDS = ("line", "circle", "great_circle")


@dataclass(frozen=True)
class AmbientSpace:
    """Flat R^n (kappa = 0) or the round n-sphere of sectional curvature kappa.

    ``curvature_hook`` (optional) maps ybar to an (n, n, n, n) array in the
    Fermi frame and overrides the constant-curvature formula.
    """
    n: int
    kappa: float = 0.0
    curvature_hook: object = None

    def __post_init__(self):
        if self.n < 2:
            raise UnsupportedManifold("ambient dimension must be at least 2", self.n)
        if self.kappa < 0:
            raise UnsupportedManifold("negative curvature model not supported", self.kappa)

    def curvature(self, ybar=0.0):
        """R_{al be ga de} = kappa (g_ac g_bd - g_ad g_bc) in an orthonormal frame."""
        if self.curvature_hook is not None:
            return np.asarray(self.curvature_hook(ybar), dtype=float)
        d = np.eye(self.n)
        return self.kappa * (np.einsum("ac,bd->abcd", d, d) - np.einsum("ad,bc->abcd", d, d))


@dataclass(frozen=True)
class FermiChart:
    ambient: AmbientSpace
    kind: str
    radius: float                # circle radius, sphere radius a, or 0 for the line
    period: float                # length of K (inf for an open line)
    Gam: np.ndarray              # (k, k, N): Gam[c, a, i]
    R: np.ndarray                # (n, n, n, n) curvature in the Fermi frame on K
    y_grid: np.ndarray
    chart_radius: float
    k: int = 1
    _sym_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self):
        return self.ambient.n

    @property
    def N(self):
        return self.n - self.k

    @property
    def H(self):
        """Mean curvature components H_j = -Gam^a_{aj}."""
        return -np.einsum("aaj->j", self.Gam)

    @property
    def is_minimal(self):
        return bool(np.all(np.abs(self.H) < 1e-14))

    @property
    def length(self):
        return self.period

    # ---- embedding and frames -------------------------------------------------
    def embed(self, ybar, xbar):
        """Point F(ybar, xbar) of the ambient model (R^n, or R^(n+1) for the sphere)."""
        ybar = np.asarray(ybar, dtype=float)
        xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
        n, N = self.n, self.N
        if self.kind == "line":
            return np.concatenate([[float(ybar)], xbar])
        if self.kind == "circle":
            th = ybar / self.radius
            z = np.zeros(n)
            z[0] = (self.radius + xbar[0]) * np.cos(th)
            z[1] = (self.radius + xbar[0]) * np.sin(th)
            z[2:] = xbar[1:]
            return z
        a = self.radius
        th = ybar / a
        r = np.linalg.norm(xbar)
        z = np.zeros(n + 1)
        z[0] = a * np.cos(r / a) * np.cos(th)
        z[1] = a * np.cos(r / a) * np.sin(th)
        if r > 0:
            z[2:] = a * np.sin(r / a) * xbar / r
        return z

    def frames(self, ybar):
        """(tangent frame (k, dim), normal frame (N, dim)) at the point of K."""
        n, N = self.n, self.N
        if self.kind == "line":
            e = np.eye(n)
            return e[:1], e[1:]
        dim = n if self.kind == "circle" else n + 1
        th = ybar / self.radius
        E = np.zeros((1, dim))
        E[0, :2] = [-np.sin(th), np.cos(th)]
        nrm = np.zeros((N, dim))
        if self.kind == "circle":
            nrm[0, :2] = [np.cos(th), np.sin(th)]
            for i in range(1, N):
                nrm[i, i + 1] = 1.0
        else:
            for i in range(N):
                nrm[i, i + 2] = 1.0
        return E, nrm

    # ---- exact metric -----------------------------------------------------------
    def exact_metric(self, ybar, xbar):
        """Exact metric matrix in (ybar, xbar) coordinates; xbar shape (..., N)."""
        xbar = np.asarray(xbar, dtype=float)
        shape = xbar.shape[:-1]
        N, n = self.N, self.n
        g = np.zeros(shape + (n, n))
        g[..., 1:, 1:] = np.eye(N)
        if self.kind == "line":
            g[..., 0, 0] = 1.0
        elif self.kind == "circle":
            g[..., 0, 0] = (1.0 + xbar[..., 0] / self.radius) ** 2
        else:
            a = self.radius
            r = np.linalg.norm(xbar, axis=-1)
            g[..., 0, 0] = np.cos(r / a) ** 2
            s2 = np.sinc(r / (np.pi * a)) ** 2      # (a sin(r/a) / r)^2
            with np.errstate(invalid="ignore", divide="ignore"):
                xh = np.where(r[..., None] > 0, xbar / np.where(r > 0, r, 1.0)[..., None], 0.0)
            P = np.einsum("...i,...j->...ij", xh, xh)
            g[..., 1:, 1:] = P + s2[..., None, None] * (np.eye(N) - P)
        return g

    def exact_metric_sym(self, ybar, xbar):
        """Sympy version of :meth:`exact_metric` (great circle: valid for xbar != 0)."""
        N, n = self.N, self.n
        g = sp.zeros(n, n)
        for i in range(N):
            g[1 + i, 1 + i] = 1
        if self.kind == "line":
            g[0, 0] = 1
        elif self.kind == "circle":
            g[0, 0] = (1 + xbar[0] / sp.nsimplify(self.radius)) ** 2
        else:
            a = sp.nsimplify(self.radius)
            if N == 1:
                g[0, 0] = sp.cos(xbar[0] / a) ** 2
            else:
                r = sp.sqrt(sum(x ** 2 for x in xbar))
                g[0, 0] = sp.cos(r / a) ** 2
                s2 = (a * sp.sin(r / a) / r) ** 2
                for i in range(N):
                    for j in range(N):
                        P = xbar[i] * xbar[j] / r ** 2
                        g[1 + i, 1 + j] = P + s2 * ((1 if i == j else 0) - P)
        return g

    def check_inside(self, xbar):
        xbar = np.asarray(xbar, dtype=float)
        m = float(np.max(np.linalg.norm(np.atleast_2d(xbar), axis=-1))) if xbar.size else 0.0
        if m >= self.chart_radius:
            raise OutsideChart(f"|xbar| = {m:.6g} outside chart radius {self.chart_radius:.6g}",
                               {"xbar": m, "chart_radius": self.chart_radius})

    def to_json(self):
        E, nrm = zip(*(self.frames(y) for y in self.y_grid))
        return {
            "kind": self.kind, "n": self.n, "k": self.k, "kappa": self.ambient.kappa,
            "radius": self.radius, "period": self.period, "chart_radius": self.chart_radius,
            "y_grid": self.y_grid.tolist(),
            "tangent_frame": [e.tolist() for e in E],
            "normal_frame": [v.tolist() for v in nrm],
            "Gamma": [self.Gam.tolist()] * len(self.y_grid),
            "H": [self.H.tolist()] * len(self.y_grid),
        }


def build_chart(ambient, kind, radius=1.0, period=None, n_grid=256):
    """Fermi chart for one of the supported curves.

    ``radius`` is the circle radius for ``circle``; it is ignored for
    ``great_circle`` (the sphere radius is kappa^(-1/2)).  ``period`` makes
    the line a closed geodesic of a flat torus.
    """
    if kind not in KINDS:
        raise UnsupportedManifold(f"unsupported submanifold {kind!r}", kind)
    n = ambient.n
    N = n - 1
    Gam = np.zeros((1, 1, N))
    if kind == "line":
        if ambient.kappa != 0:
            raise UnsupportedManifold("straight line requires a flat ambient", ambient.kappa)
        L = np.inf if period is None else float(period)
        rho, chart_r = 0.0, np.inf
    elif kind == "circle":
        if ambient.kappa != 0:
            raise UnsupportedManifold("planar circle requires a flat ambient", ambient.kappa)
        if not radius > 0 or n not in (2, 3, 4):
            raise UnsupportedManifold("circle needs radius > 0 and n in {2, 3, 4}", (radius, n))
        rho = float(radius)
        Gam[0, 0, 0] = -1.0 / rho
        L, chart_r = 2 * np.pi * rho, rho
    else:
        if ambient.kappa <= 0:
            raise UnsupportedManifold("great circle requires kappa > 0", ambient.kappa)
        rho = 1.0 / np.sqrt(ambient.kappa)
        L, chart_r = 2 * np.pi * rho, np.pi * rho / 2
    Lg = L if np.isfinite(L) else 2 * np.pi
    y_grid = np.arange(n_grid) * Lg / n_grid
    return FermiChart(ambient=ambient, kind=kind, radius=rho, period=L, Gam=Gam,
                      R=ambient.curvature(0.0), y_grid=y_grid, chart_radius=chart_r)


# ---- metric expansions ---------------------------------------------------------
def _blocks(chart):
    k, n = chart.k, chart.n
    t, v = np.arange(k), np.arange(k, n)
    R = chart.R
    return {
        "kabl": R[np.ix_(v, t, t, v)],
        "kajl": R[np.ix_(v, t, v, v)],
        "kijl": R[np.ix_(v, v, v, v)],
    }


@dataclass
class MetricExpansion:
    """Order-0/1/2 coefficients (to be multiplied by eps^m) of each block."""
    g: dict          # 'ab', 'aj', 'ij' -> [c0, c1, c2]
    ginv: dict       # same blocks for the inverse metric
    logdet: list     # [c0, c1, c2]
    exact_g: np.ndarray = None
    exact_ginv: np.ndarray = None
    exact_logdet: float = None

    def full(self, which="g", eps=1.0, order=2):
        blocks = self.g if which == "g" else self.ginv
        k = blocks["ab"][0].shape[0]
        N = blocks["ij"][0].shape[0]
        M = np.zeros((k + N, k + N))
        for m in range(order + 1):
            e = eps ** m
            M[:k, :k] += e * blocks["ab"][m]
            M[:k, k:] += e * blocks["aj"][m]
            M[k:, :k] += e * blocks["aj"][m].T
            M[k:, k:] += e * blocks["ij"][m]
        return M

    def order_matrix(self, which, m):
        blocks = self.g if which == "g" else self.ginv
        k = blocks["ab"][0].shape[0]
        N = blocks["ij"][0].shape[0]
        M = np.zeros((k + N, k + N))
        M[:k, :k] = blocks["ab"][m]
        M[:k, k:] = blocks["aj"][m]
        M[k:, :k] = blocks["aj"][m].T
        M[k:, k:] = blocks["ij"][m]
        return M

    def logdet_value(self, eps=1.0):
        return sum(eps ** m * c for m, c in enumerate(self.logdet))


def _expansion(chart, X, dphi, alt_bookkeeping=False):
    """Coefficients in stretched coordinates with X = xi + Phi and dphi[a, j]."""
    k, N = chart.k, chart.N
    Gam = chart.Gam
    B = _blocks(chart)
    X = np.asarray(X, dtype=float)
    D = np.zeros((k, N)) if dphi is None else np.asarray(dphi, dtype=float).reshape(k, N)
    GX = np.einsum("cak,k->ca", Gam, X)
    A = GX.T + GX                        # A[a, b] = (Gam^a_{bi} + Gam^b_{ai}) X^i
    trG = np.einsum("bbi->i", Gam)
    RabXX = np.einsum("kabl,k,l->ab", B["kabl"], X, X)
    RajXX = np.einsum("kajl,k,l->aj", B["kajl"], X, X)
    RijXX = np.einsum("kijl,k,l->ij", B["kijl"], X, X)
    I_k, I_N = np.eye(k), np.eye(N)
    g = {
        "ab": [I_k, -A, RabXX + GX.T @ GX + D @ D.T],
        "aj": [np.zeros((k, N)), D, 2.0 / 3.0 * RajXX],
        "ij": [I_N, np.zeros((N, N)), RijXX / 3.0],
    }
    sgn = 1.0 if alt_bookkeeping else -1.0
    ginv = {
        "ab": [I_k, A, -RabXX.T + (GX @ GX).T + GX @ GX + GX @ GX.T],
        "aj": [np.zeros((k, N)), -D, -2.0 / 3.0 * RajXX + sgn * A @ D],
        "ij": [I_N, np.zeros((N, N)), -RijXX / 3.0 + D.T @ D],
    }
    Rmssl = np.einsum("mssl->ml", chart.R[np.ix_(range(k, k + N), range(k, k + N),
                                                 range(k, k + N), range(k, k + N))])
    Rmaal = np.einsum("maal->ml", chart.R[np.ix_(range(k, k + N), range(k),
                                                 range(k), range(k, k + N))])
    logdet = [0.0, -2.0 * trG @ X,
              X @ (Rmssl / 3.0 + Rmaal) @ X - np.trace(GX @ GX)]
    return MetricExpansion(g=g, ginv=ginv, logdet=logdet)


def metric_expansion_at(chart, ybar, xbar):
    """Expansion of the metric around K in unscaled Fermi coordinates.

    Returns the order-0/1/2 coefficients in powers of |xbar| (eps = 1, Phi = 0)
    together with the exact metric, its inverse and log-determinant.
    """
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    chart.check_inside(xbar)
    ex = _expansion(chart, xbar, None)
    G = chart.exact_metric(ybar, xbar)
    ex.exact_g = G
    ex.exact_ginv = np.linalg.inv(G)
    ex.exact_logdet = float(np.linalg.slogdet(G)[1])
    return ex


def _phi_data(chart, phi, dphi):
    k, N = chart.k, chart.N
    P = np.zeros(N) if phi is None else np.atleast_1d(np.asarray(phi, dtype=float))
    D = np.zeros((k, N)) if dphi is None else np.asarray(dphi, dtype=float).reshape(k, N)
    return P, D


def scaled_metric_expansion(chart, xi, eps, phi=None, dphi=None, alt_bookkeeping=False):
    """Expansion in stretched coordinates (y, xi), x = xi + Phi(eps y).

    ``phi`` and ``dphi`` are Phi and its ybar-gradient dphi[a, j] at the
    point.  The exact companion metric is filled in as well.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    P, D = _phi_data(chart, phi, dphi)
    X = xi + P
    chart.check_inside(eps * X)
    ex = _expansion(chart, X, D, alt_bookkeeping=alt_bookkeeping)
    G = exact_scaled_metric(chart, 0.0, xi, eps, P, D)
    ex.exact_g = G
    ex.exact_ginv = np.linalg.inv(G)
    ex.exact_logdet = float(np.linalg.slogdet(G)[1])
    return ex


def exact_scaled_metric(chart, y, xi, eps, phi=None, dphi=None):
    """Exact metric of M/eps in (y, xi) coordinates at one point."""
    P, D = _phi_data(chart, phi, dphi)
    k = chart.k
    X = np.asarray(xi, dtype=float) + P
    G = chart.exact_metric(eps * y, eps * X)
    J = np.eye(chart.n)
    J[k:, :k] = eps * D.T
    return J.T @ G @ J


# ---- Laplace-Beltrami ----------------------------------------------------------
def laplacian_terms(chart, du, d2u, eps, xi, phi=None, dphi=None, d2phi=None, alt_bookkeeping=False):
    """Terms of the eps-expansion of Delta_g u in stretched coordinates.

    ``du`` (n,) and ``d2u`` (n, n) are the analytic first and second
    derivatives of u in (y, xi) at the point; ``phi``, ``dphi[a, j]`` and
    ``d2phi[a, b, j]`` describe the normal section at ybar = eps y.  Returns
    a dict ``{order: value}`` for orders 0..3.

    ``alt_bookkeeping=True`` reproduces an alternative bookkeeping with the opposite
    sign on the mixed eps^2 inverse-metric correction and an extra set of
    dPhi * du_a terms; it agrees with the default when dPhi = 0 but not in
    general.
    """
    k, N = chart.k, chart.N
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    P, D = _phi_data(chart, phi, dphi)
    D2 = np.zeros((k, k, N)) if d2phi is None else np.asarray(d2phi, dtype=float).reshape(k, k, N)
    X = xi + P
    chart.check_inside(eps * X)
    du = np.asarray(du, dtype=float)
    d2u = np.asarray(d2u, dtype=float)
    ut, un = du[:k], du[k:]
    utt, utn, unn = d2u[:k, :k], d2u[:k, k:], d2u[k:, k:]
    Gam = chart.Gam
    B = _blocks(chart)
    ex = _expansion(chart, X, D, alt_bookkeeping=alt_bookkeeping)
    A = ex.ginv["ab"][1]
    trG = np.einsum("bbi->i", Gam)
    GX = np.einsum("cak,k->ca", Gam, X)
    Rn = chart.R[np.ix_(range(k, k + chart.N), range(k), range(k), range(k, k + N))]
    Rnnnn = B["kijl"]
    Rjajk = np.einsum("jajk->ak", chart.R[np.ix_(range(k, k + N), range(k),
                                                 range(k, k + N), range(k, k + N))])
    sgn = 1.0 if alt_bookkeeping else -1.0

    t0 = np.trace(unn) + np.trace(utt)
    t1 = -trG @ un - 2.0 * np.sum(D * utn) + np.sum(A * utt)
    t2 = (np.sum((D.T @ D) * unn)
          - np.sum(np.einsum("kijl,k,l->ij", Rnnnn, X, X) * unn) / 3.0
          - 4.0 / 3.0 * np.sum(np.einsum("kajl,k,l->aj", B["kajl"], X, X) * utn)
          + 2.0 * sgn * np.sum((A @ D) * utn)
          + np.sum(ex.ginv["ab"][2] * utt)
          + (np.einsum("kaaj,k->j", Rn, X)
             + 2.0 / 3.0 * np.einsum("kiij,k->j", Rnnnn, X)
             - np.einsum("ca,acj->j", GX, Gam)) @ un
          - np.einsum("aaj->j", D2) @ un
          - 2.0 / 3.0 * (Rjajk @ X) @ ut)
    if alt_bookkeeping:
        S = Gam + np.transpose(Gam, (1, 0, 2))          # S[a, b, i]
        t2 += -(D @ trG) @ ut + 2.0 * np.einsum("abi,bi->a", S, D) @ ut
    t3 = sgn * np.einsum("abj,ab->j", D2, A) @ un
    return {0: t0, 1: eps * t1, 2: eps ** 2 * t2, 3: eps ** 3 * t3}


def expand_laplacian(chart, du, d2u, eps, xi, phi=None, dphi=None, d2phi=None, alt_bookkeeping=False):
    """Sum of the truncated expansion terms of Delta_g u (error classes excluded)."""
    return float(sum(laplacian_terms(chart, du, d2u, eps, xi, phi, dphi, d2phi, alt_bookkeeping).values()))


def sympy_symbols(N):
    y = sp.Symbol("y", real=True)
    xi = sp.symbols(f"xi1:{N + 1}", real=True)
    eps = sp.Symbol("eps", positive=True)
    s = sp.Symbol("s", real=True)
    return y, xi, eps, s


class ExactLaplacian:
    """Exact Delta_g u in stretched coordinates for a sympy test function.

    ``u_expr`` is a sympy expression in the symbols of :func:`sympy_symbols`
    (y, xi1..xiN); ``phi_exprs`` lists the N components of Phi as expressions
    in ``s`` (the unscaled arclength).  Metric and test-function derivatives
    are differentiated symbolically and evaluated numerically; the operator
    is assembled as g^ab u_ab + (d_a g^ab) u_b + 1/2 g^ab d_a(log det g) u_b.
    """

    def __init__(self, chart, u_expr, phi_exprs=None):
        n, N, k = chart.n, chart.N, chart.k
        y, xi, eps, s = sympy_symbols(N)
        coords = (y,) + tuple(xi)
        phi_exprs = [sp.Integer(0)] * N if phi_exprs is None else [sp.sympify(p) for p in phi_exprs]
        phis = [p.subs(s, eps * y) for p in phi_exprs]
        xb = [eps * (xi[i] + phis[i]) for i in range(N)]
        yb = sp.Symbol("yb", real=True)
        xbs = sp.symbols(f"xb1:{N + 1}", real=True)
        G = chart.exact_metric_sym(yb, xbs).subs({yb: eps * y, **{xbs[i]: xb[i] for i in range(N)}},
                                                 simultaneous=True)
        J = sp.eye(n)
        for i in range(N):
            J[k + i, 0] = sp.diff(xi[i] + phis[i], y)
        g = (J.T * G * J).applyfunc(sp.expand)
        dg = [g.diff(c) for c in coords]
        args = (y,) + tuple(xi) + (eps,)
        self._g = sp.lambdify(args, g, "numpy")
        self._dg = sp.lambdify(args, dg, "numpy")
        du = [sp.diff(u_expr, c) for c in coords]
        d2u = [[sp.diff(u_expr, a, b) for b in coords] for a in coords]
        self._du = sp.lambdify(args, du, "numpy")
        self._d2u = sp.lambdify(args, d2u, "numpy")
        self._u = sp.lambdify(args, u_expr, "numpy")
        phid = [[sp.diff(p, s) for p in phi_exprs]]
        phidd = [[[sp.diff(p, s, 2) for p in phi_exprs]]]
        self._phi = sp.lambdify((s,), phi_exprs, "numpy")
        self._dphi = sp.lambdify((s,), phid, "numpy")
        self._d2phi = sp.lambdify((s,), phidd, "numpy")
        self.chart = chart

    def derivatives(self, y, xi, eps):
        a = (y,) + tuple(np.atleast_1d(xi)) + (eps,)
        return np.array(self._du(*a), dtype=float), np.array(self._d2u(*a), dtype=float)

    def phi_data(self, ybar):
        return (np.array(self._phi(ybar), dtype=float),
                np.array(self._dphi(ybar), dtype=float),
                np.array(self._d2phi(ybar), dtype=float))

    def metric(self, y, xi, eps):
        a = (y,) + tuple(np.atleast_1d(xi)) + (eps,)
        return np.array(self._g(*a), dtype=float)

    def __call__(self, y, xi, eps):
        a = (y,) + tuple(np.atleast_1d(xi)) + (eps,)
        g = np.array(self._g(*a), dtype=float)
        dg = np.array(self._dg(*a), dtype=float)
        ginv = np.linalg.inv(g)
        du, d2u = self.derivatives(y, xi, eps)
        div = -np.einsum("am,amn,nb->b", ginv, dg, ginv)         # d_a g^{ab}
        dlog = np.einsum("mn,anm->a", ginv, dg)                   # d_a log det g
        return float(np.sum(ginv * d2u) + div @ du + 0.5 * dlog @ ginv @ du)

    def expansion(self, y, xi, eps, alt_bookkeeping=False):
        du, d2u = self.derivatives(y, xi, eps)
        P, D, D2 = self.phi_data(eps * y)
        return expand_laplacian(self.chart, du, d2u, eps, xi, P, D, D2, alt_bookkeeping=alt_bookkeeping)


def divergence_laplacian_sym(chart, u_expr, phi_exprs=None):
    """Fully symbolic (1/sqrt|g|) d_a(sqrt|g| g^ab d_b u) for small instances."""
    n, N, k = chart.n, chart.N, chart.k
    y, xi, eps, s = sympy_symbols(N)
    coords = (y,) + tuple(xi)
    phi_exprs = [sp.Integer(0)] * N if phi_exprs is None else [sp.sympify(p) for p in phi_exprs]
    phis = [p.subs(s, eps * y) for p in phi_exprs]
    yb = sp.Symbol("yb", real=True)
    xbs = sp.symbols(f"xb1:{N + 1}", real=True)
    G = chart.exact_metric_sym(yb, xbs).subs(
        {yb: eps * y, **{xbs[i]: eps * (xi[i] + phis[i]) for i in range(N)}}, simultaneous=True)
    J = sp.eye(n)
    for i in range(N):
        J[k + i, 0] = sp.diff(xi[i] + phis[i], y)
    g = J.T * G * J
    ginv = g.inv()
    sq = sp.sqrt(g.det())
    expr = sum(sp.diff(sq * sum(ginv[a, b] * sp.diff(u_expr, coords[b]) for b in range(n)),
                       coords[a]) for a in range(n)) / sq
    return sp.lambdify((y,) + tuple(xi) + (eps,), expr, "numpy")


# ---- verification helpers ------------------------------------------------------
def default_test_function(N):
    """Smooth bump u(y, xi) = exp(-|xi|^2 / 2) (1 + 0.3 sin y) in symbols of sympy_symbols."""
    y, xi, eps, s = sympy_symbols(N)
    return sp.exp(-sum(x ** 2 for x in xi) / 2) * (1 + sp.Rational(3, 10) * sp.sin(y))


def laplacian_discrepancy(exact, eps, points, alt_bookkeeping=False):
    """max over points of |expansion - exact| (points: iterable of (y, xi))."""
    return max(abs(exact.expansion(y, xi, eps, alt_bookkeeping) - exact(y, xi, eps)) for y, xi in points)


def inverse_consistency(chart, xi, eps=1.0, phi=None, dphi=None, alt_bookkeeping=False):
    """Max deviation of the inverse-metric coefficients from the order-2 Neumann series."""
    ex = scaled_metric_expansion(chart, xi, eps, phi, dphi, alt_bookkeeping=alt_bookkeeping)
    G1, G2 = ex.order_matrix("g", 1), ex.order_matrix("g", 2)
    H1, H2 = ex.order_matrix("ginv", 1), ex.order_matrix("ginv", 2)
    return float(max(np.max(np.abs(H1 + G1)), np.max(np.abs(H2 - (-G2 + G1 @ G1)))))


def error_class_bound_check(chart, phi_family=None, eps_list=(0.1, 0.05, 0.025),
                            xi_max=2.0, n_points=9, u_expr=None):
    """Fit the eps-order q and polynomial weight d of (exact - expansion).

    Three discrepancy classes are measured on a grid |xi| <= xi_max: the
    inverse metric, log det g, and Delta_g u for a smooth test function.
    ``phi_family`` is a list of sympy expressions (one per normal direction)
    or None for Phi = 0.
    """
    N = chart.N
    u_expr = default_test_function(N) if u_expr is None else u_expr
    lap = ExactLaplacian(chart, u_expr, phi_family)
    xs = np.linspace(-xi_max, xi_max, n_points)
    ys = np.linspace(0.0, 2.0, 3)
    pts = [(yy, np.r_[x, np.zeros(N - 1)]) for yy in ys for x in xs]
    out = {"metric": [], "logdet": [], "laplacian": []}
    for eps in eps_list:
        dm = dl = dL = 0.0
        for yy, xi in pts:
            P, D, D2 = lap.phi_data(eps * yy)
            ex = scaled_metric_expansion(chart, xi, eps, P, D)
            dm = max(dm, np.max(np.abs(ex.full("ginv", eps) - ex.exact_ginv)))
            dl = max(dl, abs(ex.logdet_value(eps) - ex.exact_logdet))
            du, d2u = lap.derivatives(yy, xi, eps)
            dL = max(dL, abs(expand_laplacian(chart, du, d2u, eps, xi, P, D, D2) - lap(yy, xi, eps)))
        out["metric"].append(dm)
        out["logdet"].append(dl)
        out["laplacian"].append(dL)
    report = {"eps": list(eps_list), "discrepancy": out}
    report["q"] = {}
    for key, vals in out.items():
        report["q"][key] = (np.inf if max(vals) < 1e-13 else loglog_slope(eps_list, vals))
    # polynomial weight from the metric discrepancy at the smallest eps
    eps = eps_list[-1]
    rad = np.linspace(0.5, xi_max, 6)
    d_vals = []
    for r in rad:
        xi = np.r_[r, np.zeros(N - 1)]
        P, D, _ = lap.phi_data(0.0)
        ex = scaled_metric_expansion(chart, xi, eps, P, D)
        d_vals.append(np.max(np.abs(ex.full("ginv", eps) - ex.exact_ginv)))
    report["d"] = (0.0 if max(d_vals) < 1e-13
                   else loglog_slope(1 + rad, np.maximum(d_vals, 1e-300)))
    return report


def lipschitz_in_phi(chart, phi_exprs, phi_bar_exprs, eps, xi_max=2.0, n_points=9):
    """Ratio |disc(Phi) - disc(Phi_bar)| / sup|Phi - Phi_bar| for the inverse metric."""
    N = chart.N
    y, xi_s, e_s, s = sympy_symbols(N)
    fa = [sp.lambdify(s, p, "numpy") for p in phi_exprs]
    fb = [sp.lambdify(s, p, "numpy") for p in phi_bar_exprs]
    da = [sp.lambdify(s, sp.diff(p, s), "numpy") for p in phi_exprs]
    db = [sp.lambdify(s, sp.diff(p, s), "numpy") for p in phi_bar_exprs]
    num = 0.0
    den = 0.0
    for yb in np.linspace(0, 2 * np.pi, 17):
        Pa = np.array([f(yb) for f in fa], dtype=float)
        Pb = np.array([f(yb) for f in fb], dtype=float)
        Da = np.array([[f(yb) for f in da]], dtype=float)
        Db = np.array([[f(yb) for f in db]], dtype=float)
        den = max(den, np.max(np.abs(Pa - Pb)) + np.max(np.abs(Da - Db)))
        for x in np.linspace(-xi_max, xi_max, n_points):
            xi = np.r_[x, np.zeros(N - 1)]
            ea = scaled_metric_expansion(chart, xi, eps, Pa, Da)
            eb = scaled_metric_expansion(chart, xi, eps, Pb, Db)
            diff = (ea.full("ginv", eps) - ea.exact_ginv) - (eb.full("ginv", eps) - eb.exact_ginv)
            num = max(num, np.max(np.abs(diff)))
    return num / den if den > 0 else 0.0


def write_expansion_csv(path, rows):
    """rows: iterable of (epsilon, term, expansion, exact, abs_err)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epsilon", "term", "expansion", "exact", "abs_err"])
        for eps, term, e, x, a in rows:
            w.writerow([repr(float(eps)), term, repr(float(e)), repr(float(x)), repr(float(a))])


def write_chart_json(path, chart):
    with open(path, "w") as fh:
        json.dump(chart.to_json(), fh, indent=1)
