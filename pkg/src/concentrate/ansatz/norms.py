"""Grid surrogates of the Hoelder-type norms used by the fixed point.

C^{0,alpha} surrogate: sup |f| plus the largest quotient
|f(a) - f(b)| / |a - b|^alpha over node pairs along each grid axis with
|a - b| <= 1 (physical units of that axis).  alpha = rho = 1/2 by default.
"""

import numpy as np

from ..k_ops import spectral_derivative

ALPHA = 0.5
RHO = 0.5


def holder(f, steps, alpha=ALPHA, periodic=None):
    """sup-norm plus the axis-wise Hoelder quotient of grid data f."""
    f = np.atleast_1d(np.asarray(f, dtype=float))
    steps = np.atleast_1d(steps)
    periodic = periodic or [False] * f.ndim
    q = 0.0
    for ax, h in enumerate(steps):
        n = f.shape[ax]
        kmax = min(int(np.floor(1.0 / h + 1e-12)), n - 1)
        for k in range(1, kmax + 1):
            if periodic[ax]:
                d = np.abs(np.roll(f, -k, axis=ax) - f)
            else:
                sl1 = [slice(None)] * f.ndim
                sl2 = [slice(None)] * f.ndim
                sl1[ax] = slice(k, None)
                sl2[ax] = slice(None, -k)
                d = np.abs(f[tuple(sl1)] - f[tuple(sl2)])
            if d.size:
                q = max(q, float(np.max(d)) / (k * h) ** alpha)
    return float(np.max(np.abs(f))) + q


def section_norm(Phi, L, alpha=ALPHA):
    """||Phi||_{2,alpha} = sum over m = 0..2 of the C^{0,alpha} surrogate of d^m Phi."""
    h = L / np.size(Phi)
    return sum(holder(spectral_derivative(Phi, L, m) if m else Phi, h, alpha, [True])
               for m in range(3))


def e_norm(e, L, eps, alpha=ALPHA):
    """||e||_* = |e|_{0,alpha} + eps |e'|_{0,alpha} + eps^2 |e''|_{0,alpha}."""
    h = L / np.size(e)
    return sum(eps ** m * holder(spectral_derivative(e, L, m) if m else e, h, alpha, [True])
               for m in range(3))


def _grad_family(P, f, eps):
    """f and its first and second derivatives in stretched units (t and y_eps = ybar / eps)."""
    ft = P.line.d1(f)
    fy = eps * P.dy(f)
    return [f, ft, fy, P.line.d2(f), eps * P.dy(ft), eps ** 2 * P.dy(f, 2)]


def _steps(P, eps):
    return [P.L / P.G / eps, P.line.dt]


def weighted_norm(P, f, eps, rho=RHO, alpha=ALPHA, second=True):
    """||f||_{eps,alpha,rho} (or the 2-version with derivatives): Hoelder surrogate of e^{rho|t|} f."""
    wgt = np.exp(rho * np.abs(P.line.t))[None, :]
    fam = _grad_family(P, f, eps) if second else [f]
    return sum(holder(wgt * g, _steps(P, eps), alpha, [True, False]) for g in fam)


def outer_norm(P, f, eps, cut, alpha=ALPHA, second=True, sup_only=False):
    """||f||_{eps,alpha}: (1 - eta_{delta/4}) part plus eps^-1 times the eta_{delta/4} part.

    ``cut`` is eta_{delta/4} on the grid; ``sup_only`` gives the
    ||.||_{eps,infinity} version.
    """
    fam = _grad_family(P, f, eps) if second else [f]
    if sup_only:
        return sum(float(np.max(np.abs((1 - cut) * g))) + float(np.max(np.abs(cut * g))) / eps
                   for g in fam)
    st = _steps(P, eps)
    return sum(holder((1 - cut) * g, st, alpha, [True, False])
               + holder(cut * g, st, alpha, [True, False]) / eps for g in fam)
