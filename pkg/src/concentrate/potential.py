"""Closed-form radial potentials V(z) = f(|z|) and their restriction to a Fermi chart.

Models (rho = |z|, centred at the origin of R^n):

    constant     V = c
    gaussian     V = c + exp(-rho^2 / 2)          (c = 0.1 keeps V bounded below)
    polynomial   V = 1 + rho^2

Derived quantities along K: mu = V^(1/2), h = V^(1/(p-1)) and the exponent
sigma = (p+1)/(p-1) - (n-k)/2 of the weighted length functional.
"""

import csv
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import hermite_e

from .errors import BoundViolation, UnsupportedManifold
from .util import loglog_slope

MODELS = ("constant", "gaussian", "polynomial")


def sigma_exponent(p, n, k):
    return (p + 1.0) / (p - 1.0) - (n - k) / 2.0


@dataclass(frozen=True)
class PotentialModel:
    kind: str
    p: float
    n: int
    k: int = 1
    c: float = 0.1
    region_radius: float = 10.0

    def __post_init__(self):
        if self.kind not in MODELS:
            raise UnsupportedManifold(f"unknown potential model {self.kind!r}", self.kind)

    @property
    def sigma(self):
        return sigma_exponent(self.p, self.n, self.k)

    # radial profile f(rho) and its derivatives
    def radial_derivative(self, m, rho):
        rho = np.asarray(rho, dtype=float)
        if self.kind == "constant":
            return np.full_like(rho, self.c) if m == 0 else np.zeros_like(rho)
        if self.kind == "gaussian":
            coef = np.zeros(m + 1)
            coef[m] = 1.0
            val = (-1) ** m * hermite_e.hermeval(rho, coef) * np.exp(-rho ** 2 / 2)
            return val + (self.c if m == 0 else 0.0)
        poly = {0: 1 + rho ** 2, 1: 2 * rho, 2: 2.0 + 0 * rho}
        return poly.get(m, 0 * rho)

    def value(self, z):
        z = np.asarray(z, dtype=float)
        return self.radial_derivative(0, np.linalg.norm(z, axis=-1))

    def gradient(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "constant":
            return np.zeros_like(z)
        if self.kind == "gaussian":
            return -z * np.exp(-np.sum(z ** 2, axis=-1) / 2)[..., None]
        return 2 * z

    def hessian(self, z):
        z = np.asarray(z, dtype=float)
        d = z.shape[-1]
        if self.kind == "constant":
            return np.zeros(z.shape + (d,))
        if self.kind == "gaussian":
            e = np.exp(-np.sum(z ** 2, axis=-1) / 2)
            return (np.einsum("...i,...j->...ij", z, z) - np.eye(d)) * e[..., None, None]
        return 2 * np.broadcast_to(np.eye(d), z.shape + (d,)).copy()

    def bounds(self):
        """(V1, V2) over the ball of radius ``region_radius`` (all models are monotone in rho)."""
        a = float(self.radial_derivative(0, 0.0))
        b = float(self.radial_derivative(0, self.region_radius))
        return min(a, b), max(a, b)


@dataclass(frozen=True)
class RestrictedPotential:
    """Normal Taylor data of V along K on the chart grid."""
    y: np.ndarray
    V: np.ndarray            # (G,)
    dV_normal: np.ndarray    # (G, N)
    d2V_normal: np.ndarray   # (G, N, N)
    dV_tangent: np.ndarray   # (G,)
    d2V_tangent: np.ndarray  # (G,)
    sigma: float
    p: float

    @property
    def mu(self):
        return np.sqrt(self.V)

    @property
    def h(self):
        return self.V ** (1.0 / (self.p - 1.0))


def restrict_to_chart(potential, chart, tube_radius=None, n_tube=9):
    """Sample V, grad^N V and the normal Hessian along K.

    The working tube |xbar| <= tube_radius (default half the chart radius,
    at most 1) is scanned and BoundViolation is raised if V leaves the
    admissible band of the model.
    """
    if chart.ambient.kappa != 0 and potential.kind != "constant":
        raise UnsupportedManifold("only constant potentials on the sphere model", potential.kind)
    G = chart.y_grid.size
    N = chart.N
    V = np.empty(G)
    dVn = np.empty((G, N))
    d2Vn = np.empty((G, N, N))
    dVt = np.empty(G)
    d2Vt = np.empty(G)
    for m, yb in enumerate(chart.y_grid):
        E, nrm = chart.frames(yb)
        if potential.kind == "constant":
            z0 = np.zeros(potential.n)
            E, nrm = np.eye(potential.n)[:1], np.eye(potential.n)[1:]
        else:
            z0 = chart.embed(yb, np.zeros(N))
        g = potential.gradient(z0)
        H = potential.hessian(z0)
        V[m] = potential.value(z0)
        dVn[m] = nrm @ g
        d2Vn[m] = nrm @ H @ nrm.T
        dVt[m] = E[0] @ g
        # second derivative along the curve: Hessian on the tangent plus
        # the curvature of K acting on grad V (circle: -(1/R) e_r . grad V)
        d2Vt[m] = E[0] @ H @ E[0] + float(chart.Gam[0, 0] @ dVn[m])
    V1, V2 = potential.bounds()
    rt = tube_radius
    if rt is None:
        rt = min(0.5 * chart.chart_radius, 1.0)
    if potential.kind != "constant" and np.isfinite(rt):
        offs = np.linspace(-rt, rt, n_tube)
        for yb in chart.y_grid[:: max(1, G // 16)]:
            for s in offs:
                xb = np.zeros(N)
                xb[0] = s
                v = potential.value(chart.embed(yb, xb))
                if not (V1 - 1e-12 <= v <= V2 + 1e-12) or v <= 0:
                    raise BoundViolation(f"V = {v:.6g} outside [{V1:.6g}, {V2:.6g}]",
                                         {"V": float(v), "V1": V1, "V2": V2})
    return RestrictedPotential(y=chart.y_grid.copy(), V=V, dV_normal=dVn, d2V_normal=d2Vn,
                               dV_tangent=dVt, d2V_tangent=d2Vt,
                               sigma=potential.sigma, p=potential.p)


def taylor_remainder_fit(potential, chart, restricted, eps_list=(0.1, 0.05, 0.025),
                         xi_max=3.0, n_xi=13):
    """Fitted eps-exponent of |V(F(y, eps xi)) - second-order normal Taylor polynomial|."""
    N = chart.N
    errs = []
    idx = range(0, chart.y_grid.size, max(1, chart.y_grid.size // 8))
    for eps in eps_list:
        e = 0.0
        for m in idx:
            yb = chart.y_grid[m]
            for s in np.linspace(-xi_max, xi_max, n_xi):
                xi = np.zeros(N)
                xi[0] = s
                if N > 1:
                    xi[1] = 0.5 * s
                exact = potential.value(chart.embed(yb, eps * xi))
                tay = (restricted.V[m] + eps * restricted.dV_normal[m] @ xi
                       + 0.5 * eps ** 2 * xi @ restricted.d2V_normal[m] @ xi)
                e = max(e, abs(exact - tay) / (1 + np.linalg.norm(xi) ** 3))
        errs.append(e)
    slope = np.inf if max(errs) < 1e-15 else loglog_slope(eps_list, errs)
    return {"eps": list(eps_list), "remainder": errs, "exponent": slope}


def write_restriction_csv(path, r):
    N = r.dV_normal.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "V"] + [f"dV_n{i + 1}" for i in range(N)] + ["mu", "h"])
        for m in range(r.y.size):
            w.writerow([repr(float(r.y[m])), repr(float(r.V[m]))]
                       + [repr(float(v)) for v in r.dV_normal[m]]
                       + [repr(float(r.mu[m])), repr(float(r.h[m]))])
