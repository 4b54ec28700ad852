"""Global approximation W = eta_{3 delta}(eps x) h v_I on a fixed working frame.

The working frame is the stretched Fermi chart with a constant normal
offset Phi_f: points are (ybar, t) with x = t / mu + Phi_f.  It covers the
whole plane region between an inner radius rho_in (circle only) and the far
end of the t-grid, so inner and outer corrections share one grid and one
discrete operator.  The approximation built with sections Phi(ybar) is moved
onto the frame by a Taylor shift in t of size s = mu (Phi - Phi_f).

Cutoff: eta(s) = 1 for s <= 1, 0 for s >= 2, and in between
eta = psi(2 - s) / (psi(2 - s) + psi(s - 1)) with psi(a) = exp(-1/a) for
a > 0 and psi = 0 otherwise.  eta_{l delta}(x) = eta(eps |x| / (l delta)).
"""

from dataclasses import dataclass
from math import factorial

import numpy as np

from ..errors import ChartRadiusExceeded
from ..potential import restrict_to_chart
from .line import DiscreteLine
from .stretched import make_problem

DELTA_FRACTION = 0.15
RHO_IN_FRACTION = 0.05
T_OUT = 30.0


def bump(s):
    s = np.asarray(s, dtype=float)
    a = np.clip(2.0 - s, 0.0, None)
    b = np.clip(s - 1.0, 0.0, None)
    with np.errstate(divide="ignore", over="ignore"):
        pa = np.where(a > 0, np.exp(-1.0 / np.where(a > 0, a, 1.0)), 0.0)
        pb = np.where(b > 0, np.exp(-1.0 / np.where(b > 0, b, 1.0)), 0.0)
    return np.where(s <= 1, 1.0, np.where(s >= 2, 0.0, pa / np.where(pa + pb > 0, pa + pb, 1.0)))


def default_delta(chart):
    if chart.kind == "circle":
        return DELTA_FRACTION * chart.radius
    return 1.0


@dataclass
class Frame:
    """Working grid and discrete operators for one eps."""
    problem: object        # StretchedProblem on the frame t-grid
    eps: float
    delta: float
    Phi_f: float

    @property
    def x(self):
        return self.problem.t / self.problem.mu + self.Phi_f

    def eta(self, ell):
        """eta_{ell delta} on the t-grid (constant along ybar)."""
        return bump(self.eps * np.abs(self.x) / (ell * self.delta))[None, :]

    @property
    def dist(self):
        return self.eps * np.abs(self.x)

    def Phi_array(self):
        return np.full(self.problem.G, self.Phi_f)


def check_delta(chart, delta):
    if chart.kind == "circle" and 6 * delta >= chart.radius:
        raise ChartRadiusExceeded(
            f"cutoff support 6 delta = {6 * delta:.4g} reaches the centre of the circle "
            f"(radius {chart.radius:.4g})", {"delta": delta, "chart_radius": chart.radius})


def make_frame(chart, potential, eps, delta=None, Phi_f=0.0, dt=0.02, t_out=T_OUT,
               rho_in_fraction=RHO_IN_FRACTION, t_half=20.0):
    delta = default_delta(chart) if delta is None else float(delta)
    check_delta(chart, delta)
    mu = float(np.sqrt(restrict_to_chart(potential, chart, tube_radius=0).V[0]))
    if chart.kind == "circle":
        R = chart.radius
        x_lo = (rho_in_fraction * R - R) / eps
        t_lo = -dt * np.floor(-mu * (x_lo - Phi_f) / dt)
        t_hi = dt * np.floor(t_out / dt)
    else:
        t_lo, t_hi = -t_half, t_half
    line = DiscreteLine(potential.p, t_lo, t_hi, dt)
    P = make_problem(chart, potential, line=line)
    return Frame(problem=P, eps=float(eps), delta=delta, Phi_f=float(Phi_f))


def taylor_shift(P, f, s, order=4):
    """f(t - s) from grid data by a Taylor expansion with the discrete t-derivatives."""
    s = np.asarray(s, dtype=float).reshape(-1, 1)
    out = np.array(f, dtype=float)
    d = np.array(f, dtype=float)
    for k in range(1, order + 1):
        d = P.line.d1(d)
        out = out + (-s) ** k / factorial(k) * d
    return out


@dataclass
class GlobalApproximation:
    frame: Frame
    ansatz: object
    v: np.ndarray           # v_I moved onto the frame (G, T)
    W: np.ndarray           # eta_{3 delta} v_I, in v-units (u = h W)

    @property
    def eps(self):
        return self.frame.eps

    @property
    def delta(self):
        return self.frame.delta

    def u(self):
        return self.frame.problem.h * self.W

    def decay_fit(self, u=None, window=None):
        """Slope of sup_y log|u| against dist over [delta, 2 delta] on each side.

        The window is pulled inside three quarters of the frame when the frame
        is shorter than 2 delta.
        """
        return decay_fit(self.frame, self.u() if u is None else u, window)


def decay_fit(frame, u, window=None):
    P = frame.problem
    lo, hi = window or (frame.delta, 2 * frame.delta)
    env = np.max(np.abs(u), axis=0)
    d = frame.dist
    out = {}
    for name, side in (("inner", frame.x < 0), ("outer", frame.x > 0)):
        # keep clear of the truncated end of the frame
        top = min(hi, 0.75 * np.max(d[side]))
        bot = min(lo, 0.5 * top)
        m = side & (d >= bot) & (d <= top) & (env > 0)
        slope = float(np.polyfit(d[m], np.log(env[m]), 1)[0])
        if P.potential.kind == "constant":
            mu_min = P.mu
        else:
            rho = P.R + np.sign(frame.x[m]) * d[m]
            mu_min = float(np.sqrt(np.min(P.potential.radial_derivative(0, rho))))
        out[name] = {"slope": slope, "mu_min": mu_min, "bound": -0.9 * mu_min / frame.eps,
                     "ok": slope <= -0.9 * mu_min / frame.eps}
    return out


def ansatz_on_frame(frame, ans, eps=None):
    """v_I of an expansion built on the frame grid, shifted onto the frame offset."""
    eps = frame.eps if eps is None else eps
    P = frame.problem
    v = ans.v(eps)
    s = P.mu * (ans.Phi_total(eps) - frame.Phi_f)
    if np.max(np.abs(s)) > 0:
        v = taylor_shift(P, v, s)
    return v


def assemble_global(frame, ans):
    v = ansatz_on_frame(frame, ans)
    return GlobalApproximation(frame=frame, ansatz=ans, v=v, W=frame.eta(3) * v)
