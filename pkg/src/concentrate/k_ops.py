"""Operators and functionals on the curve K.

* weighted length E = int_K V^sigma ds and its stationarity residual
  sigma grad^N V + V H,
* the Jacobi operator J acting on normal sections (Fourier collocation on
  the closed curve) and the matching quadratic form,
* the gap operator K_eps e = -eps^2 Delta_K e + lambda0 mu^2 e with its
  admissible-eps scan and a Weyl count.

Normal sections are arrays of shape (G, N) on the chart grid.
"""

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from .errors import DegenerateOperator, NoSignChange, NotStationary
from .geom import AmbientSpace, build_chart
from .potential import restrict_to_chart
from .util import loglog_slope

TOL_ND = 1e-6


def tol_stat(potential):
    return 1e-8 * potential.bounds()[1]


# ---- spectral calculus on a closed curve ---------------------------------------
def _wavenumbers(G, L):
    return 2 * np.pi / L * np.fft.fftfreq(G, 1.0 / G)


def fourier_diff_matrices(G, L):
    """Dense first/second spectral differentiation matrices on a periodic grid."""
    k = _wavenumbers(G, L)
    k1 = k.copy()
    if G % 2 == 0:
        k1[G // 2] = 0.0
    I = np.eye(G)
    F = np.fft.fft(I, axis=0)
    D1 = np.real(np.fft.ifft(1j * k1[:, None] * F, axis=0))
    D2 = np.real(np.fft.ifft(-(k ** 2)[:, None] * F, axis=0))
    return D1, D2


def spectral_derivative(f, L, order=1):
    G = f.shape[0]
    k = _wavenumbers(G, L)
    if order % 2 == 1 and G % 2 == 0:
        k = k.copy()
        k[G // 2] = 0.0
    mult = (1j * k) ** order
    return np.real(np.fft.ifft(mult.reshape((-1,) + (1,) * (f.ndim - 1)) * np.fft.fft(f, axis=0), axis=0))


def _length(chart):
    if not np.isfinite(chart.period):
        raise DegenerateOperator("operators on K need a closed curve", chart.period)
    return chart.period


# ---- functionals -----------------------------------------------------------------
def weighted_energy(chart, restricted):
    """Trapezoid (spectrally accurate) quadrature of V^sigma over K."""
    L = _length(chart)
    return float(np.sum(restricted.V ** restricted.sigma) * L / chart.y_grid.size)


def stationary_residual(chart, restricted, tol=None):
    """sigma grad^N V + V H per node, its sup norm and the stationarity verdict."""
    res = restricted.sigma * restricted.dV_normal + restricted.V[:, None] * chart.H[None, :]
    sup = float(np.max(np.abs(res)))
    out = {"residual": res, "sup": sup}
    if tol is not None:
        out["stationary"] = sup < tol
    return out


def energy_of_radius(potential, r):
    """E(r) = 2 pi r V(r)^sigma for the circle of radius r in the (z1, z2)-plane."""
    return 2 * np.pi * r * potential.radial_derivative(0, r) ** potential.sigma


def denergy_dr(potential, r):
    s = potential.sigma
    V = potential.radial_derivative(0, r)
    dV = potential.radial_derivative(1, r)
    return 2 * np.pi * V ** (s - 1) * (V + s * r * dV)


def d2energy_dr2(potential, r):
    s = potential.sigma
    V = potential.radial_derivative(0, r)
    dV = potential.radial_derivative(1, r)
    d2V = potential.radial_derivative(2, r)
    return 2 * np.pi * (2 * s * V ** (s - 1) * dV
                        + r * (s * V ** (s - 1) * d2V + s * (s - 1) * V ** (s - 2) * dV ** 2))


def circle_chart(potential, r, n_grid=256):
    return build_chart(AmbientSpace(potential.n), "circle", r, n_grid=n_grid)


def find_stationary_radius(potential, bracket=None, method="energy"):
    """Radius of a critical circle of E(r).

    ``method="energy"`` roots dE/dr; ``method="residual"`` roots the outward
    component of the stationarity residual evaluated through a chart, an
    independent code path.  Without a bracket the innermost sign change on a
    geometric scan of [0.05, region_radius] is used.
    """
    if method == "energy":
        f = lambda r: float(denergy_dr(potential, r))
    else:
        def f(r):
            ch = circle_chart(potential, r, n_grid=8)
            return float(stationary_residual(ch, restrict_to_chart(potential, ch, tube_radius=0))
                         ["residual"][0, 0])
    if bracket is None:
        grid = np.geomspace(0.05, potential.region_radius, 200)
        vals = np.array([float(denergy_dr(potential, r)) for r in grid])
        idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
        bracket = (grid[idx[0]], grid[idx[0] + 1]) if idx.size else (grid[0], grid[-1])
    a, b = bracket
    fa, fb = f(a), f(b)
    if fa * fb > 0:
        raise NoSignChange("criticality function has no sign change on the bracket",
                           {"bracket": bracket, "values": (fa, fb)})
    return brentq(f, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


# ---- Jacobi operator ---------------------------------------------------------------
@dataclass
class JacobiOperator:
    chart: object
    restricted: object
    sigma: float
    matrix: np.ndarray            # (G N, G N), component-major blocks
    coeff: np.ndarray             # (G, N, N) zeroth-order coefficient
    drift: np.ndarray             # (G,) sigma V^-1 dV/ds
    D1: np.ndarray = field(repr=False)
    D2: np.ndarray = field(repr=False)

    @property
    def G(self):
        return self.chart.y_grid.size

    @property
    def N(self):
        return self.chart.N

    @property
    def ds(self):
        return self.chart.period / self.G

    @property
    def weight(self):
        return self.restricted.V ** self.sigma * self.ds

    def flatten(self, Phi):
        return np.asarray(Phi, dtype=float).reshape(self.G, self.N).T.ravel()

    def unflatten(self, v):
        return np.asarray(v).reshape(self.N, self.G).T

    def apply(self, Phi):
        return self.unflatten(self.matrix @ self.flatten(Phi))

    def inner(self, Phi, Psi):
        """V^sigma-weighted L2 product of two normal sections."""
        return float(np.sum(self.weight[:, None] * np.asarray(Phi) * np.asarray(Psi)))

    @cached_property
    def spectrum(self):
        ev, vec = np.linalg.eig(self.matrix)
        order = np.argsort(-ev.real)
        return ev.real[order], vec[:, order]

    def asymmetry(self):
        W = np.kron(np.eye(self.N), np.diag(self.weight))
        A = W @ self.matrix
        return float(np.max(np.abs(A - A.T)) / np.max(np.abs(A)))


def assemble_jacobi(chart, restricted, strict=True, tol=None):
    """Collocation matrix of the Jacobi operator on normal sections.

    Components (s, j normal; a, c tangent; all chart data constant along K):

        J Phi^s = Phi^s'' + sigma V^-1 V' Phi^s'
                  - (R_kaas - Gam^c_ak Gam^a_cs) Phi^k
                  - sigma V^-1 d_s d_j V Phi^j + sigma^-1 H_j H_s Phi^j
    """
    L = _length(chart)
    G, N, k = chart.y_grid.size, chart.N, chart.k
    sig = restricted.sigma
    if tol is None:
        tol = 1e-8 * float(np.max(restricted.V))
    st = stationary_residual(chart, restricted)
    if st["sup"] > tol and strict:
        raise NotStationary(f"stationarity residual {st['sup']:.3e} above {tol:.1e}", st["sup"])
    D1, D2 = fourier_diff_matrices(G, L)
    t, v = np.arange(k), np.arange(k, k + N)
    Rk = np.einsum("kaas->ks", chart.R[np.ix_(v, t, t, v)])
    GG = np.einsum("cak,acs->ks", chart.Gam, chart.Gam)
    H = chart.H
    base = -(Rk - GG) + np.outer(H, H) / sig          # indexed [k, s]
    coeff = np.empty((G, N, N))
    for m in range(G):
        coeff[m] = base.T - sig * restricted.d2V_normal[m] / restricted.V[m]
    drift = sig * restricted.dV_tangent / restricted.V
    M = np.zeros((G * N, G * N))
    for s in range(N):
        blk = slice(s * G, (s + 1) * G)
        M[blk, blk] += D2 + drift[:, None] * D1
        for j in range(N):
            M[blk, j * G:(j + 1) * G] += np.diag(coeff[:, s, j])
    return JacobiOperator(chart=chart, restricted=restricted, sigma=sig, matrix=M,
                          coeff=coeff, drift=drift, D1=D1, D2=D2)


def quadratic_form(J, Phi, Ric=None):
    """Quadratic form on normal sections, assembled pointwise on K.

    int_K { <Delta Phi + sigma V^-1 grad V . grad Phi, Phi> + sigma^-1 (H.Phi)^2
            - sigma V^-1 (grad^N)^2 V [Phi, Phi] - Ric(Phi, Phi)
            + Gam^a_b(Phi) Gam^b_a(Phi) } V^sigma ds

    The first bracket is integrated by parts into -|Phi'|^2 V^sigma, so
    nothing is shared with the collocation matrix beyond the samples of V.
    Ric(Phi, Phi) is the tangential trace R_kaas Phi^k Phi^s.
    """
    ch, r, sig = J.chart, J.restricted, J.sigma
    Phi = np.asarray(Phi, dtype=float).reshape(J.G, J.N)
    dPhi = spectral_derivative(Phi, ch.period)
    k, N = ch.k, ch.N
    t, v = np.arange(k), np.arange(k, k + N)
    Rk = np.einsum("kaas->ks", ch.R[np.ix_(v, t, t, v)])
    HPhi = Phi @ ch.H
    hess = np.einsum("gij,gi,gj->g", r.d2V_normal, Phi, Phi)
    ric = np.einsum("ks,gk,gs->g", Rk if Ric is None else Ric, Phi, Phi)
    GP = np.einsum("abi,gi->gab", ch.Gam, Phi)
    gg = np.einsum("gab,gba->g", GP, GP)
    dens = (-np.sum(dPhi ** 2, axis=1) + HPhi ** 2 / sig - sig * hess / r.V - ric + gg)
    return float(np.sum(dens * J.weight))


def second_variation(J, Phi):
    """<-J Phi, Phi> in the V^sigma-weighted product (second variation of E)."""
    return -J.inner(J.apply(Phi), Phi)


def nondegeneracy_check(J):
    ev, _ = J.spectrum
    return float(np.min(np.abs(ev)))


def invert_jacobi(J, Psi, quotient=False, tol=TOL_ND):
    """Solve J Phi = Psi.

    With ``quotient=True`` a degenerate operator is inverted on the
    orthogonal complement of its kernel (least squares, minimum norm); the
    kernel component of Psi is discarded and reported.
    """
    Psi = np.asarray(Psi, dtype=float).reshape(J.G, J.N)
    mn = nondegeneracy_check(J)
    b = J.flatten(Psi)
    if mn <= tol:
        if not quotient:
            raise DegenerateOperator(f"Jacobi operator has |eigenvalue| = {mn:.2e}", mn)
        Phi = np.linalg.lstsq(J.matrix, b, rcond=1e-9)[0]
    else:
        Phi = np.linalg.solve(J.matrix, b)
    Phi = J.unflatten(Phi)
    res = float(np.max(np.abs(J.apply(Phi) - Psi)))
    return Phi, {"residual": res, "bound_C": c2_norm(Phi, J.chart.period) / max(np.max(np.abs(Psi)), 1e-300)}


def c2_norm(Phi, L):
    return float(sum(np.max(np.abs(spectral_derivative(Phi, L, m) if m else Phi)) for m in range(3)))


def write_jacobi_csv(path, J):
    ev, _ = J.spectrum
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "eigenvalue"])
        for i, e in enumerate(ev):
            w.writerow([i, repr(float(e))])


# ---- gap operator --------------------------------------------------------------------
@dataclass
class GapOperator:
    """K_eps e = -eps^2 Delta_K e + lambda0 mu^2 e on a closed curve of length L.

    Constant mu uses the exact Fourier symbol with any number of modes;
    variable mu uses a dense collocation matrix on the chart grid.
    """
    eps: float
    lambda0: float
    L: float
    mu: object = 1.0
    n_modes: int = 256

    @property
    def constant_mu(self):
        return np.ndim(self.mu) == 0

    @property
    def mu0(self):
        """Resonance level -lambda0 mu^2 (L / 2 pi)^2 for constant mu."""
        return -self.lambda0 * float(np.mean(np.asarray(self.mu) ** 2)) * (self.L / (2 * np.pi)) ** 2

    def laplace_eigs(self):
        return (2 * np.pi / self.L * np.fft.fftfreq(self.n_modes, 1.0 / self.n_modes)) ** 2

    def matrix(self):
        mu = np.broadcast_to(np.asarray(self.mu, dtype=float), (self.n_modes,))
        _, D2 = fourier_diff_matrices(self.n_modes, self.L)
        return -self.eps ** 2 * D2 + np.diag(self.lambda0 * mu ** 2)

    def spectrum(self):
        if self.constant_mu:
            return np.sort(self.eps ** 2 * self.laplace_eigs() + self.lambda0 * self.mu ** 2)
        return np.sort(np.linalg.eigvalsh(self.matrix()))

    def dist_to_spectrum(self):
        return float(np.min(np.abs(self.spectrum())))

    def apply(self, e):
        if self.constant_mu:
            eh = np.fft.fft(e)
            return np.real(np.fft.ifft((self.eps ** 2 * self.laplace_eigs()
                                        + self.lambda0 * self.mu ** 2) * eh))
        return self.matrix() @ e

    def solve(self, f):
        if self.constant_mu:
            sym = self.eps ** 2 * self.laplace_eigs() + self.lambda0 * self.mu ** 2
            return np.real(np.fft.ifft(np.fft.fft(f) / sym))
        return np.linalg.solve(self.matrix(), f)

    def inverse_norm(self):
        """Operator 2-norm of the inverse, measured from the dense matrix."""
        return float(np.linalg.norm(np.linalg.inv(self.matrix()), 2))

    def resonances(self, count=5):
        """eps values where the mode-l branch crosses zero, l = 1..count."""
        return [np.sqrt(self.mu0) / l for l in range(1, count + 1)]


def gap_scan(L, lambda0, mu, eps_values, c=0.5, n_modes=256, measure_norm=True):
    """For each eps: spectrum distance to 0, admissibility (dist >= c eps), ||K^-1||."""
    rows = []
    for eps in eps_values:
        op = GapOperator(float(eps), lambda0, L, mu, n_modes)
        d = op.dist_to_spectrum()
        inv = op.inverse_norm() if measure_norm else 1.0 / d
        rows.append({"epsilon": float(eps), "dist_to_spectrum": d,
                     "admissible": bool(d >= c * eps), "inv_norm": inv})
    return rows


def admissible_epsilons(rows):
    return [r["epsilon"] for r in rows if r["admissible"]]


def weyl_count(op):
    return int(np.sum(op.spectrum() < 0))


def weyl_count_check(L, lambda0, mu, eps_values=None):
    """Count negative eigenvalues of K_eps and fit the exponent in eps."""
    if eps_values is None:
        eps_values = np.geomspace(0.01, 0.1, 9)
    counts = []
    for eps in eps_values:
        need = int(4 * np.sqrt(-lambda0) * np.max(mu) * L / (2 * np.pi * eps)) + 16
        op = GapOperator(float(eps), lambda0, L, mu, max(256, need))
        counts.append(weyl_count(op))
    return {"eps": list(map(float, eps_values)), "counts": counts,
            "exponent": loglog_slope(eps_values, counts)}


def write_gap_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epsilon", "dist_to_spectrum", "admissible", "inv_norm"])
        for r in rows:
            w.writerow([repr(r["epsilon"]), repr(r["dist_to_spectrum"]),
                        int(r["admissible"]), repr(r["inv_norm"])])
