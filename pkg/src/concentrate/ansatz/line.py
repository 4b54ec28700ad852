"""Discrete one-dimensional limit problem on a uniform normal grid.

The normal variable t runs over a uniform grid with step dt and values
beyond both ends are taken to be zero.  Derivatives are fourth-order central
differences.  Every object used by the construction (ground state, kernel,
negative eigenfunction, U0) solves its *discrete* equation to machine
precision, so residuals measured with the same operators carry no
discretisation floor.
"""

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eig_banded
from scipy.sparse.linalg import splu

from ..errors import FredholmViolation, ProjectionDefect, ToleranceNotMet
from ..profile import LimitProblem, evaluate_profile, solve_ground_state

ROUNDING = 1e-14   # absolute projection size treated as zero


def fd_matrices(T, dt):
    """Sparse fourth-order first and second derivative matrices (zero ghosts)."""
    d1 = np.array([1, -8, 0, 8, -1]) / (12 * dt)
    d2 = np.array([-1, 16, -30, 16, -1]) / (12 * dt ** 2)
    offs = [-2, -1, 0, 1, 2]
    D1 = sp.diags([np.full(T - abs(o), c) for o, c in zip(offs, d1) if c != 0],
                  [o for o, c in zip(offs, d1) if c != 0], shape=(T, T), format="csr")
    D2 = sp.diags([np.full(T - abs(o), c) for o, c in zip(offs, d2)], offs,
                  shape=(T, T), format="csr")
    return D1, D2


def signed_power(w, p):
    return np.sign(w) * np.abs(w) ** p


class DiscreteLine:
    """Ground state and linearised operator L0 = -D2 + 1 - p w0^(p-1) on a t-grid."""

    def __init__(self, p, t_min=-20.0, t_max=20.0, dt=0.02, profile=None):
        n = int(round((t_max - t_min) / dt)) + 1
        self.t = t_min + dt * np.arange(n)
        self.dt = dt
        self.p = float(p)
        self.D1, self.D2 = fd_matrices(n, dt)
        prof = profile or solve_ground_state(LimitProblem(1, p))
        self.w0 = self._newton(np.asarray(evaluate_profile(prof, np.abs(self.t))[0]))
        self.dw0 = self.D1 @ self.w0
        self.L0 = (-self.D2 + sp.diags(1.0 - self.p * np.abs(self.w0) ** (self.p - 1))).tocsc()
        vals, vecs = eig_banded(self._band(self.L0), lower=True, select="i", select_range=(0, 1))
        self.lambda0 = float(vals[0])
        z = vecs[:, 0]
        self.Z = z / np.sqrt(self.inner(z, z)) * np.sign(z[np.argmax(np.abs(z))])
        self.kernel_eigenvalue = float(vals[1])
        k = vecs[:, 1]
        # scale the discrete kernel to the discrete derivative of w0
        self.kernel = k * self.inner(self.dw0, k) / self.inner(k, k)
        self.c0 = self.inner(self.kernel, self.kernel)
        self._bordered = {}
        self.U0 = self.solve(self.w0)
        self.Uj = self.solve(self.dw0 + self.t * self.w0 / self.sigma)

    # ---- basic algebra ------------------------------------------------------------
    @property
    def size(self):
        return self.t.size

    @property
    def sigma(self):
        return (self.p + 1) / (self.p - 1) - 0.5

    def inner(self, f, g):
        """Discrete L2 product along t (last axis), dt-weighted."""
        return np.sum(np.asarray(f) * np.asarray(g), axis=-1) * self.dt

    def d1(self, f):
        return _apply_last(self.D1, f)

    def d2(self, f):
        return _apply_last(self.D2, f)

    def apply_L0(self, f):
        return _apply_last(self.L0, f)

    @staticmethod
    def _band(A):
        A = A.tocsr()
        n = A.shape[0]
        band = np.zeros((3, n))
        for o in range(3):
            band[o, : n - o] = A.diagonal(-o)
        return band

    def _newton(self, w, tol=1e-9, max_iter=30):
        """Bordered Newton (translation fixed); stops at the rounding floor."""
        p = self.p
        prev = np.inf
        for _ in range(max_iter):
            F = -(self.D2 @ w) + w - signed_power(w, p)
            res = float(np.max(np.abs(F)))
            if res < tol and prev < 10 * res:
                return w
            prev = res
            J = -self.D2 + sp.diags(1.0 - p * np.abs(w) ** (p - 1))
            k = self.D1 @ w
            A = sp.bmat([[J, k[:, None]], [k[None, :], None]], format="csc")
            w = w - splu(A).solve(np.concatenate([F, [0.0]]))[:-1]
        raise ToleranceNotMet("discrete ground state Newton did not converge",
                              float(np.max(np.abs(F))))

    # ---- projections ----------------------------------------------------------------
    def proj_kernel(self, f):
        """Pi_j: coefficient of the kernel direction, <f, k> / c0."""
        return self.inner(f, self.kernel) / self.c0

    def proj_Z(self, f):
        return self.inner(f, self.Z)

    def proj_perp(self, f):
        f = np.asarray(f, dtype=float)
        return (f - self.proj_kernel(f)[..., None] * self.kernel
                - self.proj_Z(f)[..., None] * self.Z)

    # ---- solves -----------------------------------------------------------------------
    def _factor(self, shift, with_Z):
        key = (round(float(shift), 14), with_Z)
        if key not in self._bordered:
            cols = [self.kernel] + ([self.Z] if with_Z else [])
            Bc = np.column_stack(cols)
            A = sp.bmat([[self.L0 + shift * sp.identity(self.size), Bc],
                         [Bc.T, None]], format="csc")
            self._bordered[key] = splu(A)
            if len(self._bordered) > 512:
                self._bordered.pop(next(iter(self._bordered)))
        return self._bordered[key]

    def solve(self, f, tol=1e-6):
        """w with L0 w = f - Pi_j[f] k and <w, k> = 0.

        The kernel component of f is discarded; above ``tol`` (relative to
        the sup of f) it is a genuine Fredholm violation.  Below it is the
        O(dt^4) defect of continuous identities on the grid.
        """
        f = np.asarray(f, dtype=float)
        pk = self.proj_kernel(f)
        defect = np.max(np.abs(np.atleast_1d(pk)))
        if defect > max(tol * np.max(np.abs(f)), ROUNDING):
            raise FredholmViolation(f"source not orthogonal to the kernel ({defect:.3e})", defect)
        lu = self._factor(0.0, False)
        return _solve_rows(lu, f - np.asarray(pk)[..., None] * self.kernel, self.size)

    def solve_model(self, f, shift, tol=1e-10, scale=None):
        """phi with (L0 + shift) phi = f and Pi[phi] = 0, for Pi[f] = 0.

        ``scale`` sets the size the defect is measured against (default the
        sup of f); pass the size of the parent field when f is one mode of it.
        """
        f = np.asarray(f, dtype=float)
        defect = max(np.max(np.abs(np.atleast_1d(self.proj_kernel(f)))),
                     np.max(np.abs(np.atleast_1d(self.proj_Z(f)))))
        if scale is None:
            scale = np.max(np.abs(f))
        if defect > max(tol * scale, ROUNDING):
            raise ProjectionDefect(f"right-hand side has Pi = {defect:.3e}", defect)
        return _solve_rows(self._factor(shift, True), f, self.size)


def _apply_last(A, f):
    f = np.asarray(f, dtype=float)
    if f.ndim == 1:
        return A @ f
    return (A @ f.reshape(-1, f.shape[-1]).T).T.reshape(f.shape)


def _solve_rows(lu, f, n):
    rows = np.atleast_2d(f)
    extra = lu.shape[0] - n
    rhs = np.vstack([rows.T, np.zeros((extra, rows.shape[0]))])
    sol = lu.solve(rhs)[:n].T
    return sol.reshape(f.shape)
