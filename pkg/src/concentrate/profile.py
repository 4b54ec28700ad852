"""Radial ground state of -Δv + v - v^p = 0 in R^N.

The positive radial solution is found by shooting on w(0).  A trajectory
that turns upward started too low, one that crosses zero started too high,
so plain bisection converges to the ground state.  The unstable growing mode
e^r amplifies every rounding error, so the shot is only trusted down to a
matching radius where w is about 1e-5.  Past that radius the profile is
continued with the exact decaying solution of the linearised equation,

    w(r) = c * r^(1 - N/2) * K_(N/2 - 1)(r),

whose large-r behaviour is c * sqrt(pi/2) * r^(-(N-1)/2) * e^(-r).
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import odeint, simpson
from scipy.interpolate import CubicHermiteSpline
from scipy.special import kv

from .errors import InvalidProblem, NegativeRadius, NoBracket, ToleranceNotMet

SUPPORTED_N = (1, 2, 3)
MATCH_LEVEL = 1e-5
_R_START = 1e-4  # series start for N >= 2, where (N-1)/r is singular


def sphere_area(N):
    """Surface measure of the unit sphere S^(N-1); 2 for N = 1."""
    return 2.0 * math.pi ** (N / 2) / math.gamma(N / 2)


@dataclass(frozen=True)
class LimitProblem:
    """Codimension N and exponent p of the limit equation."""

    N: int
    p: float

    def __post_init__(self):
        if self.N not in SUPPORTED_N:
            raise InvalidProblem(f"N={self.N} not supported (use 1, 2 or 3)")
        if not self.p > 1:
            raise InvalidProblem(f"p={self.p} must exceed 1")
        if self.N >= 3 and not self.p < critical_exponent(self.N):
            raise InvalidProblem(
                f"p={self.p} is not subcritical for N={self.N} "
                f"(needs p < {critical_exponent(self.N)})")

    @property
    def sigma(self):
        return (self.p + 1) / (self.p - 1) - self.N / 2


def critical_exponent(N):
    """Sobolev exponent (N+2)/(N-2); infinite for N <= 2."""
    return math.inf if N <= 2 else (N + 2) / (N - 2)


def _rhs(y, r, N, p):
    w, wp = y
    wpow = w ** p if w > 0 else -((-w) ** p)
    if r > 0:
        return (wp, w - wpow - (N - 1) / r * wp)
    return (wp, (w - wpow) / N)


def _start(a, N, p):
    """Initial radius and state from the series w = a + (a - a^p)/N r^2/2."""
    if N == 1:
        return 0.0, [a, 0.0]
    c2 = (a - a ** p) / N
    r0 = _R_START
    return r0, [a + 0.5 * c2 * r0 ** 2, c2 * r0]


def _classify(a, N, p, r_end, rtol=1e-13, n_out=400):
    """+1 if the shot crosses zero (too high), -1 if it turns up, 0 if neither."""
    r0, y0 = _start(a, N, p)
    rs = np.linspace(r0, r_end, max(int(n_out * r_end / 30), 50))
    n_out = rs.size
    sol = odeint(_rhs, y0, rs, args=(N, p), rtol=rtol, atol=1e-3 * rtol, mxstep=20000)
    w, wp = sol[:, 0], sol[:, 1]
    crossed = np.nonzero(w < 0)[0]
    turned = np.nonzero((wp > 0) & (w > 0))[0]
    first_cross = crossed[0] if crossed.size else n_out
    first_turn = turned[0] if turned.size else n_out
    if first_cross == first_turn == n_out:
        return 0
    return 1 if first_cross < first_turn else -1


def _bracket(N, p, r_end):
    lo = 1.0 + 1e-9  # w = 1 is the constant solution; just above it turns up
    if _classify(lo, N, p, r_end) != -1:
        raise NoBracket(f"lower shot a={lo} does not turn up", diagnostic=lo)
    hi = 2.0
    for _ in range(40):
        if _classify(hi, N, p, r_end) == 1:
            return lo, hi
        lo, hi = hi, 2.0 * hi
    raise NoBracket("no zero-crossing shot found below a=2^41; is p supercritical?",
                    diagnostic=hi)


def _shoot(N, p, tol, r_end=30.0):
    lo, hi = _bracket(N, p, r_end)
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        # a shot off by d separates from the ground state near r = ln(1/d)/2
        gap = (hi - lo) / hi
        reach = min(r_end, 0.5 * math.log(1 / gap) + 6.0)
        rtol = min(max(1e-3 * gap, 1e-13), 1e-6)
        verdict = _classify(mid, N, p, reach, rtol)
        if verdict == 0 and reach < r_end:
            verdict = _classify(mid, N, p, r_end)
        if verdict == 1:
            hi = mid
        elif verdict == -1:
            lo = mid
        else:  # indistinguishable from the ground state within r_end
            lo = hi = mid
    if hi - lo > max(tol * hi, 4 * np.spacing(hi)):
        raise ToleranceNotMet(f"shooting bracket {hi - lo:.3e} above tol", diagnostic=hi - lo)
    return 0.5 * (lo + hi)


def _rhs_variational(y, r, N, p):
    w, wp, v, vp = y
    wpow = w ** p if w > 0 else -((-w) ** p)
    dpow = p * abs(w) ** (p - 1)
    damp = (N - 1) / r if r > 0 else 0.0
    if r > 0:
        return (wp, w - wpow - damp * wp, vp, v - dpow * v - damp * vp)
    return (wp, (w - wpow) / N, vp, (v - dpow * v) / N)


def _polished_shot(a, N, p, times, r_match):
    """Integrate to r_match and strip the growing mode left by the shot error.

    Alongside w we carry v = dw/da.  At r_match the equation is linear, so the
    Wronskian with the decaying Bessel solution isolates the growing component;
    subtracting the matching multiple of v is one Newton step on w(0).
    """
    r0, y0 = _start(a, N, p)
    if N == 1:
        v0 = [1.0, 0.0]
    else:
        v0 = [1.0 + 0.5 * (1 - p * a ** (p - 1)) / N * r0 ** 2, (1 - p * a ** (p - 1)) / N * r0]
    sol = odeint(_rhs_variational, list(y0) + v0, times, args=(N, p),
                 rtol=1e-13, atol=1e-16, mxstep=50000)
    if N > 1:
        # first output is the series start r0; replace it with the centre value
        sol[0] = [a, 0.0, 1.0, 0.0]
    d, dd = bessel_tail(r_match, N)
    w, wp, v, vp = sol[-1]
    kappa = (w * dd - wp * d) / (v * dd - vp * d)
    return sol[:, 0] - kappa * sol[:, 2], sol[:, 1] - kappa * sol[:, 3]


def bessel_tail(r, N):
    """Decaying linear solution r^(1-N/2) K_(N/2-1)(r) and its derivative."""
    nu = N / 2 - 1
    r = np.asarray(r, dtype=float)
    val = r ** (-nu) * kv(nu, r)
    der = -r ** (-nu) * kv(nu + 1, r)
    return val, der


@dataclass(frozen=True)
class GroundStateProfile:
    """Radial ground state on a uniform grid with its exponential tail."""

    problem: LimitProblem
    r: np.ndarray
    w: np.ndarray
    wp: np.ndarray
    tail_coeff: float  # c in w = c r^(1-N/2) K_(N/2-1)(r) beyond r_match
    r_match: float
    decay_rate: float
    _spline: CubicHermiteSpline = field(repr=False, compare=False, default=None)

    @property
    def N(self):
        return self.problem.N

    @property
    def p(self):
        return self.problem.p

    @property
    def R_max(self):
        return float(self.r[-1])

    @property
    def c_Np(self):
        """Limit of r^((N-1)/2) e^r w(r)."""
        return self.tail_coeff * math.sqrt(math.pi / 2)

    @property
    def center_value(self):
        return float(self.w[0])

    def second_derivative(self, r, w, wp):
        N, p = self.N, self.p
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -(N - 1) / r * wp + w - np.abs(w) ** p
        at0 = r == 0
        if np.any(at0):
            out = np.where(at0, (w - np.abs(w) ** p) / N, out)
        return out

    def __call__(self, r):
        return evaluate_profile(self, r)


def solve_ground_state(problem, R_max=20.0, tol=1e-15, step=1e-3):
    """Shoot for the ground state and sample it on a uniform grid of [0, R_max]."""
    if R_max < 10:
        raise ValueError("R_max must be at least 10")
    if tol <= 0:
        raise ValueError("tol must be positive")
    N, p = problem.N, problem.p
    a = _shoot(N, p, tol)

    n = int(round(R_max / step))
    r = np.linspace(0.0, R_max, n + 1)

    # trusted part of the shot: up to where w drops to MATCH_LEVEL
    r0, y0 = _start(a, N, p)
    r_probe = np.linspace(r0, 30.0, 3001)
    probe = odeint(_rhs, y0, r_probe, args=(N, p), rtol=1e-13, atol=1e-15, mxstep=20000)
    below = np.nonzero((probe[:, 0] < MATCH_LEVEL) | ((probe[:, 1] >= 0) & (r_probe > 1.0)))[0]
    r_match = min(float(r_probe[below[0]]) if below.size else R_max, R_max)
    i_match = int(np.searchsorted(r, r_match, side="right")) - 1
    r_match = float(r[i_match])

    inner = r[: i_match + 1]
    times = np.concatenate([[r0], inner[inner > r0]]) if N > 1 else inner
    w, wp = np.empty_like(r), np.empty_like(r)
    w[: i_match + 1], wp[: i_match + 1] = _polished_shot(a, N, p, times, r_match)

    tval, _ = bessel_tail(r_match, N)
    c = w[i_match] / tval
    outer = r[i_match + 1:]
    if outer.size:
        ov, od = bessel_tail(outer, N)
        w[i_match + 1:] = c * ov
        wp[i_match + 1:] = c * od

    last = r > 0.8 * R_max
    decay_rate = float(-np.polyfit(r[last], np.log(w[last] * r[last] ** ((N - 1) / 2)), 1)[0])
    spline = CubicHermiteSpline(r, w, wp)
    return GroundStateProfile(problem, r, w, wp, float(c), r_match, decay_rate, spline)


def evaluate_profile(profile, r):
    """Value, first and second derivative at radius r (scalar or array).

    Inside the grid a cubic Hermite interpolant of (w, w') is used (third
    order accurate in the grid step); the second derivative comes from the
    radial ODE.  Beyond R_max the matched Bessel tail is evaluated exactly.
    """
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise NegativeRadius(f"negative radius {r_arr.min()}", diagnostic=float(r_arr.min()))
    spline = profile._spline or CubicHermiteSpline(profile.r, profile.w, profile.wp)
    inside = r_arr <= profile.R_max
    val = np.empty_like(r_arr)
    der = np.empty_like(r_arr)
    val[inside] = spline(r_arr[inside])
    der[inside] = spline(r_arr[inside], 1)
    if np.any(~inside):
        tv, td = bessel_tail(r_arr[~inside], profile.N)
        val[~inside] = profile.tail_coeff * tv
        der[~inside] = profile.tail_coeff * td
    sec = profile.second_derivative(r_arr, val, der)
    if np.ndim(r) == 0:
        return float(val), float(der), float(sec)
    return val, der, sec


def radial_integral(profile, values):
    """Integral over R^N of a radial function sampled on the profile grid."""
    N = profile.N
    return sphere_area(N) * simpson(values * profile.r ** (N - 1), x=profile.r)


def c0(profile):
    """c_0 = int |d_1 w_0|^2 = (1/N) int |grad w_0|^2."""
    return radial_integral(profile, profile.wp ** 2) / profile.N


def sigma_identity_check(profile):
    """Relative error of (1/2) int w^2 = sigma int |d_1 w|^2, with both sides."""
    lhs = 0.5 * radial_integral(profile, profile.w ** 2)
    rhs = profile.problem.sigma * c0(profile)
    return {"identity": "half_mass_equals_sigma_dirichlet", "lhs": lhs, "rhs": rhs,
            "rel_error": abs(lhs - rhs) / abs(lhs)}


def closed_form_1d(p, x):
    """Explicit N = 1 ground state ((p+1)/2)^(1/(p-1)) sech^(2/(p-1))((p-1)x/2)."""
    x = np.asarray(x, dtype=float)
    amp = ((p + 1) / 2) ** (1 / (p - 1))
    s = 1 / np.cosh((p - 1) * x / 2)
    return amp * s ** (2 / (p - 1))


def write_profile_csv(profile, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["r", "w", "wp"])
        for row in zip(profile.r, profile.w, profile.wp):
            out.writerow([repr(float(v)) for v in row])


def read_profile_csv(path, problem):
    """Read a profile written by write_profile_csv (values are bit-identical)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    r, w, wp = data[:, 0], data[:, 1], data[:, 2]
    N = problem.N
    tail_r = r[-1]
    c = w[-1] / bessel_tail(tail_r, N)[0]
    last = r > 0.8 * r[-1]
    decay_rate = float(-np.polyfit(r[last], np.log(w[last] * r[last] ** ((N - 1) / 2)), 1)[0])
    return GroundStateProfile(problem, r, w, wp, float(c), float(tail_r), decay_rate,
                              CubicHermiteSpline(r, w, wp))
