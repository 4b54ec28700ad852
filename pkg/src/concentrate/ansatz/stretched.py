"""The equation in stretched Fermi coordinates around a closed curve in the plane.

For a circle of radius R (curvature kappa = 1/R) or a straight periodic line
(kappa = 0), with u = h v(ybar, t), t = mu (x - Phi(ybar)) and x the
stretched normal coordinate, eps^2 Delta u - V u + u^p = 0 becomes
S(v) = 0 with

    S(v) = -[v_tt + A v_t + mu^-2 B Ds^2 v] + mu^-2 V(R + eps x) v - v^p,
    A = eps kappa / (mu (1 + q)),  B = (1 + q)^-2,  q = eps kappa x,
    Ds = eps (d_ybar - mu Phi' d_t),  x = t / mu + Phi.

mu and h must be constant along the curve (radial potential on a centred
circle, or a constant potential).  The same discrete t-operators are used by
the eps-series (construction) and by the direct evaluation (residuals).
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ..errors import UnsupportedManifold
from ..k_ops import assemble_jacobi, spectral_derivative
from ..potential import restrict_to_chart
from . import series as ser
from .line import DiscreteLine, signed_power


@dataclass
class StretchedProblem:
    chart: object
    potential: object
    line: DiscreteLine
    restricted: object = field(repr=False)
    n_derivs: int = 8

    @property
    def kappa(self):
        return 1.0 / self.chart.radius if self.chart.kind == "circle" else 0.0

    @property
    def R(self):
        return self.chart.radius if self.chart.kind == "circle" else 0.0

    @property
    def V0(self):
        return float(self.restricted.V[0])

    @property
    def mu(self):
        return float(np.sqrt(self.V0))

    @property
    def h(self):
        return float(self.V0 ** (1.0 / (self.potential.p - 1.0)))

    @property
    def p(self):
        return float(self.potential.p)

    @property
    def sigma(self):
        return float(self.restricted.sigma)

    @property
    def G(self):
        return self.chart.y_grid.size

    @property
    def L(self):
        return float(self.chart.period)

    @property
    def t(self):
        return self.line.t

    @cached_property
    def V_derivs(self):
        """Normal derivatives d^m V / dx^m on K, m = 0..n_derivs."""
        if self.potential.kind == "constant":
            return [self.V0] + [0.0] * self.n_derivs
        return [float(self.potential.radial_derivative(m, self.R)) for m in range(self.n_derivs + 1)]

    def V_exact(self, x, eps):
        if self.potential.kind == "constant":
            return np.full_like(np.asarray(x, dtype=float), self.V0)
        return self.potential.radial_derivative(0, self.R + eps * np.asarray(x))

    @cached_property
    def jacobi(self):
        return assemble_jacobi(self.chart, self.restricted, strict=False)

    def dy(self, f, order=1):
        return spectral_derivative(np.asarray(f, dtype=float), self.L, order)

    # ---- direct evaluation ----------------------------------------------------------
    def residual(self, v, Phi, eps):
        """S(v) for a grid function v of shape (G, T) and a section Phi of shape (G,)."""
        mu, kap = self.mu, self.kappa
        t = self.t[None, :]
        Phi = np.asarray(Phi, dtype=float).reshape(-1, 1)
        x = t / mu + Phi
        q = eps * kap * x
        A = eps * kap / (mu * (1 + q))
        B = 1.0 / (1 + q) ** 2
        dPhi = self.dy(Phi[:, 0])[:, None]
        vt = self.line.d1(v)
        vtt = self.line.d2(v)

        def Ds(f):
            return eps * (self.dy(f) - mu * dPhi * self.line.d1(f))

        return (-(vtt + A * vt + B * Ds(Ds(v)) / mu ** 2)
                + self.V_exact(x, eps) * v / mu ** 2 - signed_power(v, self.p))

    # ---- eps-series ------------------------------------------------------------------
    def residual_series(self, v, Phi):
        """Coefficients of S(v) for series v (K+1, G, T) and Phi (K+1, G)."""
        K = v.shape[0] - 1
        mu, kap = self.mu, self.kappa
        shape = (self.G, self.t.size)
        x = np.zeros((K + 1,) + shape)
        x[0] = self.t[None, :] / mu
        x += np.asarray(Phi)[:, :, None]
        s = ser.times_eps(x)                       # eps x
        inv = ser.reciprocal_one_plus(kap * s)
        A = ser.times_eps(kap / mu * inv)
        B = ser.mul(inv, inv)
        dPhi = np.array([self.dy(P) for P in Phi])[:, :, None]

        def Ds(f):
            dyf = np.array([self.dy(c) for c in f])
            return ser.times_eps(dyf - mu * ser.mul(dPhi, self.line.d1(f)))

        Vser = ser.taylor_compose(self.V_derivs, s)
        vt = self.line.d1(v)
        vtt = self.line.d2(v)
        return (-(vtt + ser.mul(A, vt) + ser.mul(B, Ds(Ds(v))) / mu ** 2)
                + ser.mul(Vser, v) / mu ** 2 - ser.power(v, self.p))


def make_problem(chart, potential, t_min=-20.0, t_max=20.0, dt=0.02, line=None):
    """Validate the geometry/potential pair and build the stretched problem."""
    if chart.N != 1 or chart.kind not in ("circle", "line") or chart.ambient.kappa != 0:
        raise UnsupportedManifold("the construction ships for planar curves with N = 1",
                                  {"kind": chart.kind, "N": chart.N})
    if not np.isfinite(chart.period):
        raise UnsupportedManifold("the curve must be closed (circle or periodic line)", chart.period)
    if chart.kind == "line" and potential.kind != "constant":
        raise UnsupportedManifold("a straight line needs a constant potential", potential.kind)
    r = restrict_to_chart(potential, chart, tube_radius=0)
    if np.ptp(r.V) > 1e-12 * np.max(np.abs(r.V)):
        raise UnsupportedManifold("V must be constant along the curve (mu and h constant)",
                                  float(np.ptp(r.V)))
    if line is None:
        line = DiscreteLine(potential.p, t_min, t_max, dt)
    return StretchedProblem(chart=chart, potential=potential, line=line, restricted=r)


def linear_part(P, v, Phi, eps):
    """The linear part of S: S(v) + v^p (coercive, positive)."""
    return P.residual(v, Phi, eps) + signed_power(v, P.p)
