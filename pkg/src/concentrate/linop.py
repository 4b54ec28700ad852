"""Linearised operator L0 = -Δ + 1 - p w0^(p-1) around the ground state.

Functions on R^N are handled through their angular sectors.  A sector-l
function has the form u(r) Y_l(direction), and L0 acts on the radial part as

    -u'' - (N-1)/r u' + l(l+N-2)/r^2 u + (1 - p w0^(p-1)) u.

Only l = 0 (radial data, the eigenfunction Z, U0) and l = 1 (data of the
form u(r) xi_j/r, the kernel d_j w0, U_j) enter the construction; l = 2 is
used for the coercivity estimate when N >= 2.  For N = 1 the two sectors are
the even and odd parts of a function on the line.

Radial derivatives use fourth-order central differences on the profile grid
with mirror ghost points at r = 0 (even for l even, odd for l odd).
"""

import csv
import json

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigs, splu

from .errors import (FredholmViolation, GridMismatch, NonPositiveCoercivity,
                     SpectrumOrderViolation)
from .profile import radial_integral, sphere_area

TOL_ORTH = 1e-8


def simpson_weights(x):
    """Composite Simpson weights on a uniform grid (trapezoid on a last odd interval)."""
    n = x.size
    h = x[1] - x[0]
    w = np.zeros(n)
    m = n if (n - 1) % 2 == 0 else n - 1
    w[:m:2] += 2.0
    w[1:m:2] = 4.0
    w[0] = w[m - 1] = 1.0
    w[:m] *= h / 3.0
    if m < n:
        w[-2] += h / 2
        w[-1] += h / 2
    return w


def _fd_weights(h):
    d1 = np.array([1, -8, 0, 8, -1]) / (12 * h)
    d2 = np.array([-1, 16, -30, 16, -1]) / (12 * h ** 2)
    return d1, d2


def radial_derivatives(f, h, parity=1):
    """Fourth-order first and second derivatives of grid data f(r_i), r_i = i h.

    ``parity`` is +1 for data even in r and -1 for odd data; the far end uses
    one-sided extrapolation through the ghost values f = 0 (data must decay).
    """
    f = np.asarray(f, dtype=float)
    g = np.concatenate([parity * f[2:0:-1], f, [0.0, 0.0]])
    d1, d2 = _fd_weights(h)
    first = sum(d1[k] * g[k: k + f.size] for k in range(5))
    second = sum(d2[k] * g[k: k + f.size] for k in range(5))
    return first, second


def sector_matrix(r, potential, N, ell, far="decay"):
    """Sparse matrix of the sector-ell radial operator on the grid r (uniform).

    For ell >= 1 the centre node is dropped (u(0) = 0) and the returned
    matrix acts on nodes 1..M.  ``far`` selects the closure at R_max:
    "decay" (ghosts continue u_M along r^(-(N-1)/2) e^(-r)), "dirichlet"
    (ghost values zero) or "neumann" (mirror ghosts).
    """
    h = r[1] - r[0]
    M = r.size - 1
    parity = 1 if ell % 2 == 0 else -1
    first = 0 if ell == 0 else 1
    n = M + 1 - first
    d1, d2 = _fd_weights(h)
    rows, cols, vals = [], [], []

    def put(i, j, v):
        # map grid index j (may be a ghost) onto unknowns
        if j < 0:
            j, v = -j, parity * v
        if j > M:
            if far == "dirichlet":
                return
            if far == "decay":
                v = v * np.exp(-(r[M] + (j - M) * h - r[M])) * (
                    r[M] / (r[M] + (j - M) * h)) ** ((N - 1) / 2)
                j = M
            else:
                j = 2 * M - j
        if j < first:
            return  # u(0) = 0 for ell >= 1
        rows.append(i - first)
        cols.append(j - first)
        vals.append(v)

    cent = ell * (ell + N - 2)
    for i in range(first, M + 1):
        if i == 0:
            # (N-1)/r u' -> (N-1) u'' at the centre for even data
            for k in range(5):
                put(0, k - 2, -N * d2[k])
            put(0, 0, potential[0])
            continue
        ri = r[i]
        for k in range(5):
            put(i, i + k - 2, -d2[k] - (N - 1) / ri * d1[k])
        put(i, i, cent / ri ** 2 + potential[i])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A.sum_duplicates()
    return A


class LinearizedOperator:
    """Sector discretisation of L0 on the profile grid, with lambda0, Z and c0."""

    def __init__(self, profile, far="decay"):
        self.profile = profile
        self.N = profile.N
        self.p = profile.p
        self.r = profile.r
        self.h = float(self.r[1] - self.r[0])
        self.far = far
        self.potential = 1.0 - self.p * profile.w ** (self.p - 1)
        self._mats = {}
        self._lus = {}
        self._weights = None
        self.c0 = radial_integral(profile, profile.wp ** 2) / self.N
        self.lambda0, self.Z = negative_eigenpair(self)
        # kernel radial profile (l = 1 sector, nodes 1..M)
        self.kernel = profile.wp.copy()

    # --- sector plumbing -------------------------------------------------
    def matrix(self, ell, far=None):
        key = (ell, far or self.far)
        if key not in self._mats:
            self._mats[key] = sector_matrix(self.r, self.potential, self.N, ell, key[1])
        return self._mats[key]

    def weights(self):
        """Simpson weights times omega r^(N-1): int f = weights @ f."""
        if self._weights is None:
            self._weights = simpson_weights(self.r) * sphere_area(self.N) * self.r ** (self.N - 1)
        return self._weights

    def inner(self, f, g, ell=0):
        """L2(R^N) pairing of two sector-ell functions with the same direction."""
        val = self.weights() @ (np.asarray(f) * np.asarray(g))
        return val if ell == 0 else val / self.N

    def _check(self, phi):
        phi = np.asarray(phi, dtype=float)
        if phi.shape != self.r.shape:
            raise GridMismatch(f"expected {self.r.shape} samples, got {phi.shape}")
        return phi


def negative_eigenpair(op, tol=1e-14, max_iter=200):
    """Lowest radial eigenpair by shifted inverse iteration plus Rayleigh refinement."""
    A = op.matrix(0)
    n = A.shape[0]
    W = op.weights()
    shift = float(op.potential.min()) - 0.5
    lu = splu((A - shift * sp.identity(n)).tocsc())
    u = np.exp(-op.r)
    lam = np.inf
    for _ in range(max_iter):
        u = lu.solve(u)
        u /= np.sqrt(W @ u ** 2)
        new = float(W @ (u * (A @ u)))
        if abs(new - lam) < tol * max(1.0, abs(new)):
            lam = new
            break
        lam = new
    for _ in range(3):  # Rayleigh refinement
        try:
            v = splu((A - lam * sp.identity(n)).tocsc()).solve(u)
        except RuntimeError:
            break
        if not np.all(np.isfinite(v)):
            break
        u = v / np.sqrt(W @ v ** 2)
        lam = float(W @ (u * (A @ u)))
    if u[0] < 0:
        u = -u
    if lam >= 0:
        raise SpectrumOrderViolation(f"lowest radial eigenvalue {lam} is not negative",
                                     diagnostic=lam)
    return lam, u


def apply_L0(op, phi, sector=0):
    """L0 applied to the radial part of a sector function (same grid)."""
    phi = op._check(phi)
    A = op.matrix(sector)
    if sector == 0:
        return A @ phi
    out = np.zeros_like(phi)
    out[1:] = A @ phi[1:]
    return out


def _kernel_deflated_solve(op, g):
    """Solve the l = 1 system with the near-null kernel direction deflated.

    The discrete l = 1 matrix has an eigenvalue of size h^4 next to the exact
    kernel.  Adding k <k, .> (Sherman-Morrison on the sparse LU) lifts it so
    the solve stays well conditioned; for g orthogonal to k this changes
    nothing but the kernel component, which is projected out afterwards.
    """
    A = op.matrix(1)
    key = ("l1", op.far)
    if key not in op._lus:
        op._lus[key] = splu(A.tocsc())
    lu = op._lus[key]
    Wt = op.weights()[1:] / op.N
    k = op.kernel[1:]
    kn = k / np.sqrt(Wt @ k ** 2)
    a = lu.solve(g)
    b = lu.solve(kn)
    # (A + kn (Wt kn)^T)^{-1} g
    c = Wt * kn
    return a - b * (c @ a) / (1.0 + c @ b)


def solve_orthogonal(op, f, sector):
    """Solve L0 U = f in the given sector; in sector 1 require <f, kernel> = 0."""
    f = op._check(f)
    if sector == 0:
        key = ("l0", op.far)
        if key not in op._lus:
            op._lus[key] = splu(op.matrix(0).tocsc())
        return op._lus[key].solve(f)
    if sector != 1:
        raise ValueError("only sectors 0 and 1 enter the construction")
    kernel = op.kernel
    knorm = np.sqrt(op.inner(kernel, kernel, 1))
    fnorm = np.sqrt(op.inner(f, f, 1))
    defect = op.inner(f, kernel, 1) / knorm
    if abs(defect) > TOL_ORTH * max(fnorm, np.finfo(float).tiny):
        raise FredholmViolation(
            f"right-hand side has kernel component {defect:.3e} (|f| = {fnorm:.3e})",
            diagnostic=float(defect))
    u = np.zeros_like(f)
    u[1:] = _kernel_deflated_solve(op, f[1:])
    u -= op.inner(u, kernel, 1) / knorm ** 2 * kernel
    return u


def project_pi(op, psi):
    """Projections of a sector-decomposed function onto span{d_j w0, Z}.

    ``psi`` maps 0 -> radial part and 1 -> list of N radial parts, the j-th
    multiplying xi_j / r.  Returns (coeffs, psi_perp) where coeffs is the
    vector (Pi_1..Pi_N, Pi_{N+1}).
    """
    radial = op._check(psi.get(0, np.zeros_like(op.r)))
    odd = [op._check(g) for g in psi.get(1, [np.zeros_like(op.r)] * op.N)]
    k = op.kernel
    coeffs = [op.inner(g, k, 1) / op.c0 for g in odd]
    coeffs.append(op.inner(radial, op.Z))
    perp = {0: radial - coeffs[-1] * op.Z,
            1: [g - cj * k for g, cj in zip(odd, coeffs[:-1])]}
    return np.array(coeffs), perp


def coercivity_estimate(op, far="neumann"):
    """Smallest Rayleigh quotient of L0 off span{d_j w0, Z}.

    Per sector: the second radial eigenvalue, the second l = 1 eigenvalue,
    and for N >= 2 the bottom of l = 2.  The far end uses the natural
    (Neumann) closure so that the continuum edge at 1 is not pushed up by a
    Dirichlet wall.
    """
    lam = []
    lam.append(_lowest(op.matrix(0, far), op.lambda0 - 1.0, 2)[1])
    lam.append(_lowest(op.matrix(1, far), -1.0, 2)[1])
    if op.N >= 2:
        lam.append(_lowest(op.matrix(2, far), -1.0, 1)[0])
    gamma0 = float(min(lam))
    if not gamma0 > 0:
        raise NonPositiveCoercivity(f"coercivity estimate {gamma0}", diagnostic=gamma0)
    return gamma0


def _lowest(A, shift, k):
    vals = eigs(A.tocsc(), k=k, sigma=shift, which="LM", return_eigenvectors=False)
    return np.sort(vals.real)


def sector_spectrum_bottom(op, sector, count=2, far=None):
    return _lowest(op.matrix(sector, far), -5.0, count)


class SpecialSolutions:
    """U0, the radial part of U_j, and the coercivity constant."""

    def __init__(self, op):
        prof = op.profile
        sigma = prof.problem.sigma
        self.U0 = solve_orthogonal(op, prof.w, 0)
        self.Uj = solve_orthogonal(op, prof.wp + prof.r * prof.w / sigma, 1)
        self.gamma0 = coercivity_estimate(op)

    @staticmethod
    def explicit_U0(profile):
        return -profile.w / (profile.p - 1) - 0.5 * profile.r * profile.wp


def a_term_identity_check(op, specials):
    """int {d_j U0 + U_j + xi_j U0/sigma + p(p-1) w^(p-2) U_j U0} d_j w0 against -c0."""
    prof = op.profile
    p, sigma = prof.p, prof.problem.sigma
    dU0, _ = radial_derivatives(specials.U0, op.h, 1)
    w = prof.w
    bracket = (dU0 + specials.Uj + prof.r * specials.U0 / sigma
               + p * (p - 1) * w ** (p - 2) * specials.Uj * specials.U0)
    lhs = op.inner(bracket, prof.wp, 1)
    rhs = -op.c0
    return {"identity": "a_term", "lhs": lhs, "rhs": rhs, "rel_error": abs(lhs - rhs) / abs(rhs)}


def moment_identity_checks(op):
    """int d_j w0 d_s w0 = delta c0 and int d2_kj w0 xi^k d_s w0 = -(N/2) delta c0."""
    prof = op.profile
    N = op.N
    w2 = prof.second_derivative(prof.r, prof.w, prof.wp)
    gram = op.inner(prof.wp, prof.wp, 1)
    moment = op.inner(prof.r * w2, prof.wp, 1)
    exact_gram = op.c0
    reports = [
        {"identity": "gram_diagonal", "lhs": gram, "rhs": exact_gram,
         "rel_error": abs(gram - exact_gram) / abs(exact_gram)},
        {"identity": "second_moment", "lhs": moment, "rhs": -N / 2 * op.c0,
         "rel_error": abs(moment + N / 2 * op.c0) / abs(N / 2 * op.c0)},
    ]
    return {"max_rel_error": max(r["rel_error"] for r in reports), "reports": reports,
            "c0": op.c0, "moment_over_c0": moment / op.c0}


def c_G(op, specials):
    """Constant in the projection of the e-dependent order-two term.

    int {d_s Z + xi_s Z/sigma + p(p-1) w^(p-2) Z U_s} d_s w0, computed
    separately from c0 (the two need not agree).
    """
    prof = op.profile
    p, sigma = prof.p, prof.problem.sigma
    dZ, _ = radial_derivatives(op.Z, op.h, 1)
    bracket = dZ + prof.r * op.Z / sigma + p * (p - 1) * prof.w ** (p - 2) * op.Z * specials.Uj
    return op.inner(bracket, prof.wp, 1)


def write_radial_csv(path, r, values):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["r", "value"])
        for a, b in zip(r, values):
            out.writerow([repr(float(a)), repr(float(b))])


def write_identity_json(path, reports):
    with open(path, "w") as fh:
        json.dump(reports, fh, indent=2)
