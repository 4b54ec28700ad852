import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from concentrate.errors import FredholmViolation, GridMismatch
from concentrate.linop import (a_term_identity_check, apply_L0, c_G,
                               coercivity_estimate, moment_identity_checks,
                               project_pi, radial_derivatives,
                               sector_spectrum_bottom, solve_orthogonal,
                               write_identity_json, write_radial_csv,
                               SpecialSolutions)


def cosine(op, f, g):
    W = op.weights()
    return (W @ (f * g)) / np.sqrt((W @ f ** 2) * (W @ g ** 2))


@pytest.mark.parametrize("p,lam,zfun", [
    (3, -3.0, lambda x: 1 / np.cosh(x) ** 2),
    (2, -1.25, lambda x: 1 / np.cosh(x / 2) ** 3),
])
def test_poschl_teller_eigenpair(operators, p, lam, zfun):
    op = operators(1, p)
    assert abs(op.lambda0 - lam) < 1e-6
    assert cosine(op, op.Z, zfun(op.r)) > 1 - 1e-8
    assert np.all(op.Z > 0)
    assert abs(op.inner(op.Z, op.Z) - 1) < 1e-12
    res = apply_L0(op, op.Z) - op.lambda0 * op.Z
    assert np.max(np.abs(res)) < 1e-6


@pytest.mark.parametrize("N,p", [(1, 3), (1, 2), (2, 3), (3, 2)])
def test_spectral_ordering(operators, N, p):
    op = operators(N, p)
    l1 = sector_spectrum_bottom(op, 1, 2)
    assert op.lambda0 < 0
    assert abs(l1[0]) < 1e-8 and l1[1] > 0
    assert op.lambda0 < l1[0] < coercivity_estimate(op)
    # the radial sector has exactly one negative eigenvalue
    assert sector_spectrum_bottom(op, 0, 2)[1] > 0


def test_kernel_residual(operators):
    op = operators(1, 3)
    assert np.max(np.abs(apply_L0(op, op.profile.wp, 1))) < 1e-6


@pytest.mark.parametrize("N,p", [(1, 3), (1, 2), (2, 3)])
def test_apply_on_ground_state(operators, N, p):
    op = operators(N, p)
    w = op.profile.w
    res = apply_L0(op, w) + (p - 1) * w ** p
    assert np.max(np.abs(res)) < 1e-5


@pytest.mark.parametrize("N,p", [(1, 3), (2, 3), (1, 2), (3, 2)])
def test_explicit_U0(operators, specials, N, p):
    sp_ = specials(N, p)
    exact = SpecialSolutions.explicit_U0(operators(N, p).profile)
    assert np.max(np.abs(sp_.U0 - exact)) < 1e-6


@pytest.mark.parametrize("N,p", [(1, 3), (2, 3), (3, 2)])
def test_Uj_orthogonal_and_solves(operators, specials, N, p):
    op, sp_ = operators(N, p), specials(N, p)
    prof = op.profile
    assert abs(op.inner(sp_.Uj, prof.wp, 1)) < 1e-9
    rhs = prof.wp + prof.r * prof.w / prof.problem.sigma
    res = apply_L0(op, sp_.Uj, 1) - rhs
    assert np.max(np.abs(res[5:])) < 1e-5


def test_kernel_rhs_is_rejected(operators):
    op = operators(1, 3)
    with pytest.raises(FredholmViolation):
        solve_orthogonal(op, op.profile.wp, 1)


def test_grid_mismatch(operators):
    with pytest.raises(GridMismatch):
        apply_L0(operators(1, 3), np.ones(10))


@given(st.integers(min_value=0, max_value=2 ** 31))
@settings(max_examples=8, deadline=None)
def test_round_trip_even_sector(seed):
    from conftest import operator_for
    op = operator_for(1, 3)
    rng = np.random.default_rng(seed)
    c = rng.normal(size=3)
    f = (c[0] + c[1] * op.r ** 2 + c[2] * np.cos(op.r)) * np.exp(-op.r ** 2 / 4)
    u = solve_orthogonal(op, f, 0)
    assert np.max(np.abs(apply_L0(op, u) - f)) < 1e-8 * max(1, np.max(np.abs(f)))


@given(st.integers(min_value=0, max_value=2 ** 31))
@settings(max_examples=8, deadline=None)
def test_projection_idempotence(seed):
    from conftest import operator_for
    op = operator_for(2, 3)
    rng = np.random.default_rng(seed)
    g = np.exp(-op.r ** 2 / 2)
    psi = {0: rng.normal() * g + rng.normal() * op.Z,
           1: [rng.normal() * op.r * g + rng.normal() * op.kernel for _ in range(2)]}
    _, perp = project_pi(op, psi)
    coeffs, _ = project_pi(op, perp)
    assert np.max(np.abs(coeffs)) < 1e-10


def test_projection_basis(operators):
    op = operators(2, 3)
    zero = np.zeros_like(op.r)
    coeffs, _ = project_pi(op, {0: zero, 1: [op.kernel, zero]})
    assert np.allclose(coeffs, [1, 0, 0], atol=1e-12)
    coeffs, _ = project_pi(op, {0: op.Z, 1: [zero, zero]})
    assert np.allclose(coeffs, [0, 0, 1], atol=1e-12)


def test_coercivity(specials):
    g = specials(1, 3).gamma0
    assert 0.9 < g <= 1.0 + 1e-9
    assert abs(specials(1, 2).gamma0 - 0.75) < 1e-6
    assert specials(2, 3).gamma0 > 0 and specials(3, 2).gamma0 > 0


@pytest.mark.parametrize("N,p,tol", [(1, 3, 1e-5), (1, 2, 1e-5), (2, 3, 1e-4), (3, 2, 1e-4)])
def test_a_term_identity(operators, specials, N, p, tol):
    assert a_term_identity_check(operators(N, p), specials(N, p))["rel_error"] < tol


def test_moment_values(operators):
    rep = moment_identity_checks(operators(1, 3))
    assert abs(rep["c0"] - 4 / 3) < 1e-9
    assert abs(rep["reports"][1]["lhs"] + 2 / 3) < 1e-9
    assert abs(moment_identity_checks(operators(2, 3))["moment_over_c0"] + 1) < 1e-8
    assert moment_identity_checks(operators(3, 2))["max_rel_error"] < 1e-8


def test_sector_orthogonality_of_Z_and_kernel(operators):
    # Z is radial and d_j w0 is sector one, so the pairing vanishes by the
    # angular integral; on the line this is the even/odd split
    op = operators(1, 3)
    x = np.concatenate([-op.r[:0:-1], op.r])
    Z = np.concatenate([op.Z[:0:-1], op.Z])
    k = np.concatenate([-op.kernel[:0:-1], op.kernel])
    assert abs(np.trapezoid(Z * k, x)) < 1e-14


def test_c_G_is_reported_separately(operators, specials):
    val = c_G(operators(1, 3), specials(1, 3))
    assert np.isfinite(val) and val != pytest.approx(operators(1, 3).c0, rel=1e-3)


def test_derivative_helper_orders():
    for h in (0.02, 0.01):
        r = np.arange(0, 12 + h / 2, h)
        d1, d2 = radial_derivatives(np.exp(-r ** 2), h)
        inner = r < 6
        e1 = np.max(np.abs(d1 - (-2 * r * np.exp(-r ** 2)))[inner])
        e2 = np.max(np.abs(d2 - (4 * r ** 2 - 2) * np.exp(-r ** 2))[inner])
        assert e1 < 200 * h ** 4 and e2 < 400 * h ** 4


def test_exports(tmp_path, operators, specials):
    op = operators(1, 3)
    write_radial_csv(tmp_path / "Z.csv", op.r, op.Z)
    assert (tmp_path / "Z.csv").read_text().startswith("r,value\n")
    write_identity_json(tmp_path / "id.json", [a_term_identity_check(op, specials(1, 3))])
    import json
    data = json.loads((tmp_path / "id.json").read_text())
    assert set(data[0]) == {"identity", "lhs", "rhs", "rel_error"}
