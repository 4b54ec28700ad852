import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from concentrate.errors import DegenerateOperator, NoSignChange, NotStationary
from concentrate.geom import AmbientSpace, build_chart
from concentrate.k_ops import (GapOperator, admissible_epsilons,
                               assemble_jacobi, circle_chart, d2energy_dr2,
                               energy_of_radius, find_stationary_radius,
                               gap_scan, invert_jacobi, nondegeneracy_check,
                               quadratic_form, second_variation,
                               stationary_residual, tol_stat, weighted_energy,
                               weyl_count, weyl_count_check, write_gap_csv,
                               write_jacobi_csv)
from concentrate.potential import PotentialModel, restrict_to_chart

FLOORED = PotentialModel("gaussian", p=3, n=2)
UNFLOORED = PotentialModel("gaussian", p=3, n=2, c=0.0, region_radius=3.0)
R_FLOORED = 0.8742798843392403


def setup(pot, r, n_grid=256):
    ch = circle_chart(pot, r, n_grid)
    return ch, restrict_to_chart(pot, ch)


@pytest.fixture(scope="module")
def jacobi_floored():
    r = find_stationary_radius(FLOORED)
    ch, rs = setup(FLOORED, r)
    return assemble_jacobi(ch, rs)


def random_section(rng, ch, modes=12):
    th = 2 * np.pi * ch.y_grid / ch.period
    c = rng.normal(size=(modes, 2)) * np.exp(-0.4 * np.arange(modes))[:, None]
    return sum(c[m, 0] * np.cos(m * th) + c[m, 1] * np.sin(m * th) for m in range(modes))[:, None]


@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_weighted_energy_constant(r):
    ch, rs = setup(PotentialModel("constant", 3, 2, c=1.0), r)
    assert weighted_energy(ch, rs) == pytest.approx(2 * np.pi * r, rel=1e-14)


def test_weighted_energy_closed_forms():
    ch, rs = setup(UNFLOORED, 0.7)
    assert weighted_energy(ch, rs) == pytest.approx(2 * np.pi * 0.7 * np.exp(-1.5 * 0.49 / 2), rel=1e-14)
    ch, rs = setup(PotentialModel("polynomial", 3, 2), 1.0)
    assert weighted_energy(ch, rs) == pytest.approx(17.7715, abs=1e-4)
    assert weighted_energy(ch, rs) == pytest.approx(2 * np.pi * 2 ** 1.5, rel=1e-14)


def test_stationary_residual_examples():
    tor = build_chart(AmbientSpace(2), "line", period=5.0)
    rs = restrict_to_chart(PotentialModel("constant", 3, 2, c=2.0), tor)
    assert stationary_residual(tor, rs)["sup"] == 0.0
    ch, rs = setup(PotentialModel("constant", 3, 2, c=1.0), 1.0)
    assert stationary_residual(ch, rs)["sup"] == pytest.approx(1.0)
    ch, rs = setup(UNFLOORED, 1 / np.sqrt(1.5))
    assert stationary_residual(ch, rs)["sup"] < 1e-15


def test_unfloored_radius_closed_form():
    r = find_stationary_radius(UNFLOORED)
    assert abs(r - 1 / np.sqrt(1.5)) < 1e-12
    assert r == pytest.approx(0.816497, abs=1e-6)


def test_floored_radius_two_code_paths():
    r1 = find_stationary_radius(FLOORED)
    r2 = find_stationary_radius(FLOORED, method="residual")
    assert abs(r1 - r2) < 1e-8
    assert r1 == pytest.approx(R_FLOORED, abs=1e-12)
    ch, rs = setup(FLOORED, r1)
    assert stationary_residual(ch, rs, tol_stat(FLOORED))["stationary"]
    assert stationary_residual(ch, rs)["sup"] < 1e-8
    # the outer critical circle is found with an explicit bracket
    r_out = find_stationary_radius(FLOORED, bracket=(2.0, 4.0))
    assert 3.0 < r_out < 3.2


def test_no_sign_change():
    with pytest.raises(NoSignChange):
        find_stationary_radius(PotentialModel("constant", 3, 2, c=1.0))


def test_jacobi_requires_stationary():
    ch, rs = setup(FLOORED, 0.6)
    with pytest.raises(NotStationary):
        assemble_jacobi(ch, rs)
    assert assemble_jacobi(ch, rs, strict=False).matrix.shape == (256, 256)


def test_jacobi_symmetry_and_nondegeneracy(jacobi_floored):
    J = jacobi_floored
    assert J.asymmetry() < 1e-8
    assert nondegeneracy_check(J) > 1e-6


def test_quadratic_form_matches_operator(jacobi_floored):
    J = jacobi_floored
    rng = np.random.default_rng(7)
    for _ in range(10):
        Phi = random_section(rng, J.chart)
        q = quadratic_form(J, Phi)
        assert q == pytest.approx(J.inner(J.apply(Phi), Phi), rel=1e-6)
        assert q == pytest.approx(-second_variation(J, Phi), rel=1e-6)


def test_constant_section_reproduces_second_derivative_of_energy(jacobi_floored):
    J = jacobi_floored
    r = J.chart.radius
    one = np.ones((J.G, 1))
    assert second_variation(J, one) == pytest.approx(d2energy_dr2(FLOORED, r), rel=1e-10)
    h = 1e-4
    fd = (energy_of_radius(FLOORED, r + h) - 2 * energy_of_radius(FLOORED, r)
          + energy_of_radius(FLOORED, r - h)) / h ** 2
    assert second_variation(J, one) == pytest.approx(fd, rel=1e-6)


def test_high_modes_scale_like_laplacian(jacobi_floored):
    J = jacobi_floored
    r = J.chart.radius
    ev = np.sort(J.spectrum[0])[::-1]
    th = 2 * np.pi * J.chart.y_grid / J.chart.period
    for m in (20, 40):
        Phi = np.cos(m * th)[:, None]
        lam = J.inner(J.apply(Phi), Phi) / J.inner(Phi, Phi)
        assert lam / (-(m / r) ** 2) == pytest.approx(1, abs=0.02)
    assert ev[0] > ev[-1]


def test_invert_round_trip(jacobi_floored):
    J = jacobi_floored
    rng = np.random.default_rng(3)
    Phi = random_section(rng, J.chart)
    Psi = J.apply(Phi)
    out, info = invert_jacobi(J, Psi)
    assert np.max(np.abs(out - Phi)) < 1e-10
    assert info["residual"] < 1e-10 and info["bound_C"] > 0


def test_invert_mean_curvature_source(jacobi_floored):
    J = jacobi_floored
    Psi = np.ones((J.G, 1)) * J.chart.H[0]
    Phi, _ = invert_jacobi(J, Psi)
    expected = J.chart.H[0] / J.coeff[0, 0, 0]
    assert np.allclose(Phi, expected, rtol=1e-10)


def test_degenerate_torus():
    tor = build_chart(AmbientSpace(2), "line", period=2 * np.pi)
    J = assemble_jacobi(tor, restrict_to_chart(PotentialModel("constant", 3, 2, c=1.0), tor))
    assert nondegeneracy_check(J) < 1e-10
    with pytest.raises(DegenerateOperator):
        invert_jacobi(J, np.ones((J.G, 1)))
    rhs = np.cos(tor.y_grid)[:, None]
    Phi, info = invert_jacobi(J, rhs, quotient=True)
    assert np.allclose(Phi, -rhs, atol=1e-10)


def test_circle_in_three_space_has_tilt_kernel():
    pot = PotentialModel("gaussian", p=3, n=3)
    r = find_stationary_radius(pot)
    ch, rs = setup(pot, r, 64)
    J = assemble_jacobi(ch, rs)
    ev = J.spectrum[0]
    assert np.sum(np.abs(ev) < 1e-8) == 2


def test_gap_spectrum_closed_form():
    for eps in (0.3, 0.05, 0.0123):
        op = GapOperator(eps, -3.0, 2 * np.pi, 1.0, 256)
        ell = np.fft.fftfreq(256, 1 / 256)
        assert np.allclose(op.spectrum(), np.sort(eps ** 2 * ell ** 2 - 3), atol=1e-13)
        dense = np.sort(np.linalg.eigvalsh(op.matrix()))
        assert np.allclose(dense, op.spectrum(), atol=1e-11 * max(1, eps ** 2 * 128 ** 2))


def test_gap_resonances_and_admissibility():
    op = GapOperator(1.0, -3.0, 2 * np.pi, 1.0)
    # the l = 1 branch sits at |1 - 3| = 2 but the l = 2 branch is closer, |4 - 3| = 1
    assert op.dist_to_spectrum() == pytest.approx(1.0)
    assert np.allclose(op.resonances(4), [np.sqrt(3) / l for l in range(1, 5)])
    for l in range(1, 4):
        near = GapOperator(np.sqrt(3) / l * (1 + 1e-9), -3.0, 2 * np.pi, 1.0)
        assert near.dist_to_spectrum() < 1e-7
    rows = gap_scan(2 * np.pi, -3.0, 1.0, [1.0, np.sqrt(3), 0.05], c=1.0)
    assert [r["admissible"] for r in rows] == [True, False, True]
    assert admissible_epsilons(rows) == [1.0, 0.05]


@settings(max_examples=25, deadline=None)
@given(eps=st.floats(0.02, 1.5))
def test_inverse_norm_equals_reciprocal_distance(eps):
    op = GapOperator(eps, -3.0, 2 * np.pi, 1.0, 128)
    d = op.dist_to_spectrum()
    if d > 1e-6:
        assert op.inverse_norm() * d == pytest.approx(1.0, abs=1e-10)
        f = np.cos(3 * 2 * np.pi * np.arange(128) / 128)
        assert np.allclose(op.apply(op.solve(f)), f, atol=1e-9 / d)


def test_variable_mu_gap_operator():
    mu = 1 + 0.2 * np.cos(2 * np.pi * np.arange(64) / 64)
    op = GapOperator(0.2, -3.0, 2 * np.pi, mu, 64)
    f = np.sin(2 * np.pi * np.arange(64) / 64)
    assert np.allclose(op.apply(op.solve(f)), f, atol=1e-10)


def test_weyl_count():
    op = GapOperator(0.05, -3.0, 2 * np.pi, 1.0, 512)
    assert weyl_count(op) == 1 + 2 * int(np.floor(np.sqrt(3) / 0.05))
    c1 = weyl_count(GapOperator(0.04, -3.0, 2 * np.pi, 1.0, 512))
    c2 = weyl_count(GapOperator(0.02, -3.0, 2 * np.pi, 1.0, 512))
    assert abs((c2 - 1) - 2 * (c1 - 1)) <= 2
    rep = weyl_count_check(2 * np.pi, -3.0, 1.0)
    assert abs(rep["exponent"] + 1) < 0.1


def test_exports(tmp_path, jacobi_floored):
    write_jacobi_csv(tmp_path / "j.csv", jacobi_floored)
    assert (tmp_path / "j.csv").read_text().startswith("mode,eigenvalue")
    write_gap_csv(tmp_path / "g.csv", gap_scan(2 * np.pi, -3.0, 1.0, [0.5]))
    assert (tmp_path / "g.csv").read_text().splitlines()[0] == "epsilon,dist_to_spectrum,admissible,inv_norm"
