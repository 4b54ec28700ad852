import json
import time

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from concentrate.errors import OutsideChart, UnsupportedManifold
from concentrate.geom import (AmbientSpace, ExactLaplacian, build_chart,
                              default_test_function, divergence_laplacian_sym,
                              error_class_bound_check, expand_laplacian,
                              inverse_consistency, laplacian_discrepancy,
                              laplacian_terms, lipschitz_in_phi,
                              metric_expansion_at, scaled_metric_expansion,
                              sympy_symbols, write_chart_json,
                              write_expansion_csv)
from concentrate.util import loglog_slope

EPS3 = (0.1, 0.05, 0.025)


def circle(n=2, R=1.0):
    return build_chart(AmbientSpace(n), "circle", R)


def test_line_chart_is_flat_and_geodesic():
    ch = build_chart(AmbientSpace(2), "line")
    assert np.all(ch.Gam == 0) and np.all(ch.H == 0) and ch.is_minimal
    ex = metric_expansion_at(ch, 0.3, [0.7])
    assert np.allclose(ex.full("g"), np.eye(2)) and np.allclose(ex.exact_g, np.eye(2))


def test_circle_chart_connection_and_curvature():
    ch = circle(R=2.0)
    assert ch.Gam[0, 0, 0] == pytest.approx(-0.5)
    assert ch.H[0] == pytest.approx(0.5)
    assert not ch.is_minimal


def test_great_circle_chart():
    ch = build_chart(AmbientSpace(2, kappa=1.0), "great_circle")
    assert np.all(ch.H == 0) and ch.is_minimal
    assert ch.R[0, 1, 0, 1] == pytest.approx(1.0)


def test_constant_curvature_formula():
    amb = AmbientSpace(3, kappa=0.5)
    R = amb.curvature()
    d = np.eye(3)
    for a, b, c, e in np.ndindex(3, 3, 3, 3):
        assert R[a, b, c, e] == 0.5 * (d[a, c] * d[b, e] - d[a, e] * d[b, c])


def test_unsupported_instances():
    with pytest.raises(UnsupportedManifold):
        build_chart(AmbientSpace(2), "ellipse")
    with pytest.raises(UnsupportedManifold):
        build_chart(AmbientSpace(2, 1.0), "circle")
    with pytest.raises(UnsupportedManifold):
        build_chart(AmbientSpace(5), "circle")


@pytest.mark.parametrize("kind,n,kappa", [("circle", 3, 0.0), ("great_circle", 3, 1.0),
                                          ("line", 4, 0.0)])
def test_frames_orthonormal_and_normal_frame_parallel(kind, n, kappa):
    ch = build_chart(AmbientSpace(n, kappa), kind)
    for yb in ch.y_grid[::17]:
        E, nrm = ch.frames(yb)
        F = np.vstack([E, nrm])
        assert np.allclose(F @ F.T, np.eye(n), atol=1e-14)
        # the normal frame changes only within the tangent direction
        h = 1e-6
        _, n2 = ch.frames(yb + h)
        dn = (n2 - nrm) / h
        assert np.max(np.abs(dn @ nrm.T)) < 1e-5


def test_embedding_reproduces_exact_metric():
    ch = circle(3, 1.5)
    yb, xb = 0.4, np.array([0.2, -0.1])
    h = 1e-6
    cols = []
    for a in range(3):
        d = np.zeros(3)
        d[a] = h
        zp = ch.embed(yb + d[0], xb + d[1:])
        zm = ch.embed(yb - d[0], xb - d[1:])
        cols.append((zp - zm) / (2 * h))
    J = np.array(cols)
    assert np.allclose(J @ J.T, ch.exact_metric(yb, xb), atol=1e-8)


def test_on_k_splitting():
    for ch in (circle(3), build_chart(AmbientSpace(3, 1.0), "great_circle")):
        ex = metric_expansion_at(ch, 0.2, np.zeros(ch.N))
        assert np.allclose(ex.exact_g, np.eye(3))
        assert np.allclose(ex.full("g"), np.eye(3))


def test_circle_metric_example_values():
    ch = circle()
    ex = metric_expansion_at(ch, 0.0, [0.1])
    assert ex.full("g")[0, 0] == pytest.approx(1.21, abs=1e-14)
    assert ex.exact_g[0, 0] == pytest.approx(1.21, abs=1e-14)
    assert ex.logdet_value() == pytest.approx(0.19, abs=1e-14)
    assert ex.exact_logdet == pytest.approx(2 * np.log(1.1), abs=1e-14)
    gap = abs(ex.logdet_value() - ex.exact_logdet)
    assert gap == pytest.approx(2 * np.log(1.1) - 0.19, abs=1e-15)
    # leading cubic term 2 x^3 / 3 = 6.67e-4 accounts for the gap to within 10 percent
    assert gap == pytest.approx(2 * 0.1 ** 3 / 3, rel=0.1)


def test_outside_chart():
    ch = circle()
    with pytest.raises(OutsideChart):
        metric_expansion_at(ch, 0.0, [-1.2])
    with pytest.raises(OutsideChart):
        scaled_metric_expansion(ch, [30.0], 0.05)


@pytest.mark.parametrize("kind,n,kappa", [("circle", 2, 0.0), ("circle", 4, 0.0),
                                          ("great_circle", 2, 1.0), ("great_circle", 3, 2.0)])
def test_metric_expansion_error_is_cubic(kind, n, kappa):
    ch = build_chart(AmbientSpace(n, kappa), kind, 1.0)
    direction = np.linspace(1.0, 0.5, ch.N)
    errs, lerrs = [], []
    for t in (0.1, 0.05, 0.025):
        ex = metric_expansion_at(ch, 0.3, t * direction)
        errs.append(np.max(np.abs(ex.full("g") - ex.exact_g)))
        lerrs.append(abs(ex.logdet_value() - ex.exact_logdet))
    assert max(errs) < 1e-14 or loglog_slope([0.1, 0.05, 0.025], errs) >= 2.9
    assert loglog_slope([0.1, 0.05, 0.025], lerrs) >= 2.9


@settings(max_examples=30, deadline=None)
@given(x=st.floats(-0.8, 0.8), d=st.floats(-1, 1), p=st.floats(-0.5, 0.5),
       kind=st.sampled_from(["circle", "great_circle"]))
def test_inverse_expansion_is_neumann_series(x, d, p, kind):
    amb = AmbientSpace(3, 0.0 if kind == "circle" else 1.0)
    ch = build_chart(amb, kind, 1.3)
    xi = np.array([x, 0.5 * x])
    err = inverse_consistency(ch, xi, 1.0, np.array([p, 0.0]), np.array([[d, -d]]))
    assert err < 1e-13


def test_alternative_mixed_sign_breaks_neumann_series():
    ch = circle()
    assert inverse_consistency(ch, [0.5], 1.0, [0.1], [[0.3]], alt_bookkeeping=True) > 0.1


def test_flat_line_expansion_exact():
    ch = build_chart(AmbientSpace(2), "line")
    du = np.array([0.3, -0.2])
    d2u = np.array([[1.5, 0.4], [0.4, -2.0]])
    assert expand_laplacian(ch, du, d2u, 0.1, [0.7]) == pytest.approx(-0.5, abs=1e-15)


def test_assembly_identity_matches_divergence_form():
    ch = circle()
    y, xi, eps, s = sympy_symbols(1)
    u = default_test_function(1)
    phi = [sp.Rational(3, 10) * sp.sin(s)]
    lap = ExactLaplacian(ch, u, phi)
    div = divergence_laplacian_sym(ch, u, phi)
    for yy, x, e in [(0.3, 0.5, 0.1), (1.1, -1.2, 0.2), (2.0, 0.0, 0.05)]:
        assert lap(yy, [x], e) == pytest.approx(float(div(yy, x, e)), rel=1e-12, abs=1e-13)


def test_laplacian_expansion_order_on_circle():
    t0 = time.perf_counter()
    ch = circle()
    lap = ExactLaplacian(ch, default_test_function(1))
    pts = [(yy, np.array([x])) for yy in (0.2, 1.0, 2.5) for x in np.linspace(-2, 2, 9)]
    errs = [laplacian_discrepancy(lap, e, pts) for e in EPS3]
    assert loglog_slope(EPS3, errs) >= 2.9
    assert time.perf_counter() - t0 < 10


@pytest.mark.parametrize("kind,n,kappa", [("circle", 2, 0.0), ("great_circle", 2, 1.0),
                                          ("great_circle", 3, 1.0)])
def test_laplacian_expansion_order_with_moving_section(kind, n, kappa):
    ch = build_chart(AmbientSpace(n, kappa), kind, 1.0)
    y, xi, eps, s = sympy_symbols(ch.N)
    phi = [sp.Rational(3, 10) * sp.sin(s)] + [0] * (ch.N - 1)
    lap = ExactLaplacian(ch, default_test_function(ch.N), phi)
    pts = [(0.7, np.r_[0.8, 0.3 * np.ones(ch.N - 1)]), (1.3, np.r_[-1.1, -0.4 * np.ones(ch.N - 1)])]
    errs = [laplacian_discrepancy(lap, e, pts) for e in EPS3]
    assert loglog_slope(EPS3, errs) >= 2.9


def test_alternative_bookkeeping_loses_order_when_section_moves():
    ch = circle()
    y, xi, eps, s = sympy_symbols(1)
    lap = ExactLaplacian(ch, default_test_function(1), [sp.Rational(3, 10) * sp.sin(s)])
    pts = [(0.7, np.array([0.8])), (1.3, np.array([-1.1]))]
    errs = [laplacian_discrepancy(lap, e, pts, alt_bookkeeping=True) for e in EPS3]
    assert loglog_slope(EPS3, errs) < 2.5
    # with a constant section both variants coincide
    lap0 = ExactLaplacian(ch, default_test_function(1), [sp.Rational(1, 5)])
    for yy, x in pts:
        assert lap0.expansion(yy, x, 0.05) == pytest.approx(lap0.expansion(yy, x, 0.05, alt_bookkeeping=True))


def test_constant_section_equals_shifted_coordinate():
    ch = circle()
    du = np.array([0.2, -0.7])
    d2u = np.array([[0.3, 0.1], [0.1, -1.1]])
    for eps in EPS3:
        a = laplacian_terms(ch, du, d2u, eps, [0.4], phi=[0.25])
        b = laplacian_terms(ch, du, d2u, eps, [0.65])
        assert sum(a.values()) == pytest.approx(sum(b.values()), abs=1e-15)


def test_error_class_bound_check_circle():
    rep = error_class_bound_check(circle())
    for key in ("metric", "logdet", "laplacian"):
        assert rep["q"][key] >= 2.9
    assert rep["d"] > 0


def test_error_class_bound_check_flat_line_is_exact():
    ch = build_chart(AmbientSpace(2), "line", period=2 * np.pi)
    rep = error_class_bound_check(ch)
    for key in ("metric", "logdet", "laplacian"):
        assert max(rep["discrepancy"][key]) < 1e-13


def test_error_class_moving_section_circle():
    y, xi, eps, s = sympy_symbols(1)
    rep = error_class_bound_check(circle(), [sp.Rational(3, 10) * sp.sin(s)])
    for key in ("metric", "logdet", "laplacian"):
        assert rep["q"][key] >= 2.9


def test_lipschitz_in_section():
    ch = circle()
    y, xi, eps, s = sympy_symbols(1)
    base = sp.Rational(3, 10) * sp.sin(s)
    ratios = [lipschitz_in_phi(ch, [base], [t * base], 0.05) for t in (0.5, 0.8, 0.95)]
    assert max(ratios) < 10 * min(ratios)
    # the Lipschitz constant itself carries the eps^3 factor
    fine = [lipschitz_in_phi(ch, [base], [0.8 * base], e) for e in (0.1, 0.05, 0.025)]
    assert loglog_slope((0.1, 0.05, 0.025), fine) >= 2.9


def test_exports(tmp_path):
    ch = circle()
    write_chart_json(tmp_path / "chart.json", ch)
    data = json.loads((tmp_path / "chart.json").read_text())
    assert len(data["y_grid"]) == 256 and data["H"][0][0] == pytest.approx(1.0)
    write_expansion_csv(tmp_path / "e.csv", [(0.1, "laplacian", 1.0, 1.1, 0.1)])
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "epsilon,term,expansion,exact,abs_err"
