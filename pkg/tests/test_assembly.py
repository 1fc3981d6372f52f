"""Operator assembly against closed forms and direct quadrature oracles."""

import io
import math

import numpy as np
import pytest
import scipy.io
import scipy.linalg

from surfspec.assembly import (
    AssemblyError,
    ScalarOperators,
    apply_dirichlet,
    assemble_oneform,
    assemble_scalar,
    dirichlet_form_quadrature,
    export_matrix_market,
    star_oneform,
)
from surfspec.geometry import DistanceFunction, builtin_metric
from surfspec.mesh import DomainSpec, Mesh, triangulate

FLAT = builtin_metric("euclidean")
HALF_PLANE = builtin_metric("hyperbolic_half_plane")


def unit_right_triangle():
    return Mesh.from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])


def collar_metric():
    return builtin_metric(
        "warped", {"phi": "0.25*cosh(r)", "r_range": (-1.0, 1.0)}
    )


def first_dirichlet_mode(mesh, metric):
    """Oracle eigenpair: dense generalized solve on the reduced pair."""
    ops = assemble_scalar(mesh, metric)
    red = apply_dirichlet(ops)
    w, vecs = scipy.linalg.eigh(red.stiffness.toarray(), red.mass.toarray())
    vec = vecs[:, 0]
    vec /= math.sqrt(vec @ (red.mass @ vec))
    full = np.zeros(mesh.n_vertices)
    full[red.interior] = vec
    return full, float(w[0])


# ---------------------------------------------------------------------------
# element closed forms


def test_flat_element_mass():
    ops = assemble_scalar(unit_right_triangle(), FLAT)
    area = 0.5
    want = (area / 12.0) * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]], float)
    assert np.max(np.abs(ops.mass.toarray() - want)) < 1e-15


def test_flat_element_stiffness():
    ops = assemble_scalar(unit_right_triangle(), FLAT)
    K = ops.stiffness.toarray()
    assert np.max(np.abs(K.sum(axis=1))) < 1e-15
    want = 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]], float)
    assert np.max(np.abs(K - want)) < 1e-15


def test_flat_whitney_mass_closed_form():
    # edges in sorted order: (0,1), (0,2), (1,2)
    ops = assemble_oneform(unit_right_triangle(), FLAT)
    want = np.array(
        [[1 / 3, 1 / 6, 0.0], [1 / 6, 1 / 3, 0.0], [0.0, 0.0, 1 / 6]]
    )
    assert np.max(np.abs(ops.mass1.toarray() - want)) < 1e-12
    assert ops.mass1.toarray()[2, 2] == pytest.approx(1 / 6, abs=1e-14)


def test_flat_face_mass_is_inverse_area():
    mesh = triangulate(DomainSpec.rectangle(0, 1, 0, 1, 2))
    ops = assemble_oneform(mesh, FLAT)
    areas = mesh.chart_areas()
    assert np.allclose(ops.mass2.diagonal(), 1.0 / areas, rtol=1e-13)


def test_halfplane_mass_matches_direct_quadrature():
    h = 1e-3
    mesh = Mesh.from_arrays([[0, 1], [h, 1], [0, 1 + h]], [[0, 1, 2]])
    ops = assemble_scalar(mesh, HALF_PLANE)

    # independent quadrature: 3 edge midpoints, weight 1/6, metric 1/y^2
    p = mesh.verts
    mids = np.array([(p[0] + p[1]) / 2, (p[1] + p[2]) / 2, (p[2] + p[0]) / 2])
    lam = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    det_j = h * h
    want = np.zeros((3, 3))
    for q in range(3):
        sqrt_g = 1.0 / mids[q, 1] ** 2
        want += (1 / 6) * np.outer(lam[q], lam[q]) * sqrt_g * det_j
    got = ops.mass.toarray()
    assert np.max(np.abs(got - want)) / np.max(np.abs(want)) < 1e-12
    # and the flat closed form scaled by 1/y^2 is a near match at this size
    flat = (det_j / 24.0) * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]], float)
    assert np.max(np.abs(got - flat)) / np.max(np.abs(flat)) < 5e-3


# ---------------------------------------------------------------------------
# global invariants


@pytest.mark.parametrize(
    "mesh,metric",
    [
        (triangulate(DomainSpec.rectangle(0, 1, 1, 2, 4)), HALF_PLANE),
        (triangulate(DomainSpec.periodic_band(-1, 1, 4)), collar_metric()),
        (triangulate(DomainSpec.disk(0, 0, 1, 3)), FLAT),
    ],
    ids=["halfplane", "collar-band", "disk"],
)
def test_stiffness_annihilates_constants(mesh, metric):
    ops = assemble_scalar(mesh, metric)
    ones = np.ones(mesh.n_vertices)
    assert np.max(np.abs(ops.stiffness @ ones)) < 1e-12


def test_matrices_bit_symmetric():
    mesh = triangulate(DomainSpec.periodic_band(-1, 1, 5))
    metric = collar_metric()
    scal = assemble_scalar(mesh, metric)
    one = assemble_oneform(mesh, metric)
    for mat in (scal.mass, scal.stiffness, one.mass1):
        assert (mat != mat.T).nnz == 0


@pytest.mark.parametrize(
    "domain",
    [
        DomainSpec.rectangle(0, 1, 1, 2, 3),
        DomainSpec.periodic_band(-1, 1, 4),
        DomainSpec.annulus(0, 0, 1, 2, 3),
    ],
    ids=["rectangle", "band", "annulus"],
)
def test_incidence_composition_vanishes(domain):
    mesh = triangulate(domain)
    metric = HALF_PLANE if domain.shape == "rectangle" else FLAT
    if domain.shape == "periodic_band":
        metric = collar_metric()
    ops = assemble_oneform(mesh, metric)
    product = ops.d1 @ ops.d0
    assert product.nnz == 0 or np.max(np.abs(product.data)) == 0.0


@pytest.mark.parametrize(
    "mesh,metric",
    [
        (triangulate(DomainSpec.rectangle(0, 1, 1, 2, 6)), HALF_PLANE),
        (triangulate(DomainSpec.periodic_band(-1, 1, 6)), collar_metric()),
    ],
    ids=["halfplane", "collar-band"],
)
def test_stiffness_equals_gradient_image_energy(mesh, metric):
    # P1 gradients are exactly Whitney interpolants of themselves, so
    # the scalar stiffness factors through the edge mass
    scal = assemble_scalar(mesh, metric)
    one = assemble_oneform(mesh, metric)
    diff = (one.d0.T @ one.mass1 @ one.d0 - scal.stiffness).toarray()
    assert np.max(np.abs(diff)) < 1e-12


def test_oneform_bookkeeping():
    mesh = triangulate(DomainSpec.periodic_band(0, 1, 4))
    ops = assemble_oneform(mesh, FLAT)
    assert ops.mass1.shape == (52, 52)
    assert ops.d0.shape == (52, 20)
    assert ops.d1.shape == (32, 52)
    assert len(ops.boundary_edges) == 8
    assert np.array_equal(
        ops.boundary_edges, np.nonzero(mesh.boundary_edge_mask)[0]
    )


def test_workers_do_not_change_bits():
    mesh = triangulate(DomainSpec.rectangle(0, math.pi, 0, math.pi, 48))
    serial = assemble_scalar(mesh, FLAT, workers=1)
    threaded = assemble_scalar(mesh, FLAT, workers=4)
    assert (serial.mass != threaded.mass).nnz == 0
    assert (serial.stiffness != threaded.stiffness).nnz == 0


def test_degree5_rule_exact_on_flat_whitney():
    ops = assemble_oneform(unit_right_triangle(), FLAT, quad_rule="degree5")
    want = np.array(
        [[1 / 3, 1 / 6, 0.0], [1 / 6, 1 / 3, 0.0], [0.0, 0.0, 1 / 6]]
    )
    assert np.max(np.abs(ops.mass1.toarray() - want)) < 1e-12


def test_unknown_rule_rejected():
    with pytest.raises(AssemblyError, match="quadrature rule"):
        assemble_scalar(unit_right_triangle(), FLAT, quad_rule="degree99")


def test_mesh_outside_validity_rejected():
    mesh = triangulate(DomainSpec.rectangle(0, 1, -1, 1, 3))
    with pytest.raises(AssemblyError, match="validity"):
        assemble_scalar(mesh, HALF_PLANE)


# ---------------------------------------------------------------------------
# Dirichlet reduction


def test_dirichlet_reduction_rectangle():
    mesh = triangulate(DomainSpec.rectangle(0, math.pi, 0, math.pi, 4))
    red = apply_dirichlet(assemble_scalar(mesh, FLAT))
    assert red.mass.shape == (9, 9)
    assert len(red.interior) == 9


def test_dirichlet_reduction_band():
    mesh = triangulate(DomainSpec.periodic_band(0, 1, 4))
    red = apply_dirichlet(assemble_scalar(mesh, FLAT))
    assert len(red.interior) == 12  # three interior circles of four


def test_dirichlet_reduction_disk_keeps_center():
    mesh = triangulate(DomainSpec.disk(0, 0, 1, 3))
    red = apply_dirichlet(assemble_scalar(mesh, FLAT))
    assert 0 in red.interior


def test_dirichlet_reduction_errors():
    ops = assemble_scalar(unit_right_triangle(), FLAT)
    with pytest.raises(AssemblyError, match="every vertex"):
        apply_dirichlet(ops)
    blank = ScalarOperators(ops.mass, ops.stiffness, np.array([], int), None, FLAT)
    with pytest.raises(AssemblyError, match="no boundary"):
        apply_dirichlet(blank)


# ---------------------------------------------------------------------------
# Hodge star


def test_star_of_warped_frame():
    metric = collar_metric()
    r = np.linspace(-0.9, 0.9, 7)
    theta = np.linspace(0.1, 6.0, 7)
    phi = 0.25 * np.cosh(r)
    su, sv = star_oneform(metric, r, theta, np.ones_like(r), np.zeros_like(r))
    assert np.max(np.abs(su)) < 1e-14
    assert np.allclose(sv, phi, rtol=1e-14)  # *dr = phi dtheta
    su, sv = star_oneform(metric, r, theta, np.zeros_like(r), np.ones_like(r))
    assert np.allclose(su, -1.0 / phi, rtol=1e-14)  # *dtheta = -dr/phi
    assert np.max(np.abs(sv)) < 1e-14


def test_star_is_pointwise_isometry_and_involution():
    rng = np.random.default_rng(7)
    metric = HALF_PLANE
    x = rng.uniform(-2, 2, 50)
    y = rng.uniform(0.5, 3.0, 50)
    cu = rng.normal(size=50)
    cv = rng.normal(size=50)
    su, sv = star_oneform(metric, x, y, cu, cv)

    def norm2(a, b):
        return y * y * (a * a + b * b)  # inverse metric is y^2 I

    assert np.allclose(norm2(su, sv), norm2(cu, cv), rtol=1e-12)
    uu, vv = star_oneform(metric, x, y, su, sv)
    assert np.allclose(uu, -cu, rtol=1e-12)
    assert np.allclose(vv, -cv, rtol=1e-12)


# ---------------------------------------------------------------------------
# Dirichlet-form quadrature


def test_dirichlet_form_flat_square():
    mesh = triangulate(DomainSpec.rectangle(0, math.pi, 0, math.pi, 32))
    phi, lam1 = first_dirichlet_mode(mesh, FLAT)
    f = DistanceFunction.from_text(FLAT, "x")
    out = dirichlet_form_quadrature(mesh, FLAT, f, phi, lam1)
    assert lam1 == pytest.approx(2.0, rel=0.02)
    # Lap f = 0, so the energy collapses to the gradient norm
    assert out["alpha_nu"] == pytest.approx(out["dphi_norm2"], rel=1e-12)
    assert out["dphi_norm2"] == pytest.approx(lam1, rel=1e-10)
    assert out["alpha_star_nu"] == pytest.approx(out["alpha_nu"], rel=1e-9)
    assert abs(out["cross"]) <= 0.05 * lam1


def test_dirichlet_form_hyperbolic_rectangle():
    mesh = triangulate(DomainSpec.rectangle(0, 1, 1, 2, 32))
    phi, lam1 = first_dirichlet_mode(mesh, HALF_PLANE)
    f = DistanceFunction.from_text(HALF_PLANE, "-log(y)")
    out = dirichlet_form_quadrature(mesh, HALF_PLANE, f, phi, lam1)
    assert out["alpha_nu"] <= 1.05 * lam1
    assert out["alpha_star_nu"] <= 1.05 * lam1
    assert out["alpha_star_nu"] == pytest.approx(out["alpha_nu"], rel=1e-9)
    assert abs(out["cross"]) <= 0.05 * lam1
    assert out["dphi_norm2"] == pytest.approx(lam1, rel=1e-10)


def test_dirichlet_form_rejects_non_unit_gradient():
    mesh = triangulate(DomainSpec.rectangle(0, 1, 1, 2, 4))
    phi, lam1 = first_dirichlet_mode(mesh, HALF_PLANE)
    f = DistanceFunction.from_text(HALF_PLANE, "x")
    with pytest.raises(AssemblyError, match="unit-gradient"):
        dirichlet_form_quadrature(mesh, HALF_PLANE, f, phi, lam1)


def test_dirichlet_form_rejects_unnormalized_phi():
    mesh = triangulate(DomainSpec.rectangle(0, 1, 1, 2, 4))
    phi, lam1 = first_dirichlet_mode(mesh, HALF_PLANE)
    f = DistanceFunction.from_text(HALF_PLANE, "-log(y)")
    with pytest.raises(AssemblyError, match="normalized"):
        dirichlet_form_quadrature(mesh, HALF_PLANE, f, 3.0 * phi, lam1)


# ---------------------------------------------------------------------------
# export


def test_matrix_market_round_trip(tmp_path):
    mesh = triangulate(DomainSpec.rectangle(0, 1, 1, 2, 3))
    ops = assemble_scalar(mesh, HALF_PLANE)
    path = tmp_path / "mass.mtx"
    export_matrix_market(ops.mass, str(path))
    back = scipy.io.mmread(str(path))
    assert np.max(np.abs((back - ops.mass).toarray())) < 1e-15
