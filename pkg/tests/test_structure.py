import numpy as np
import pytest

from pontkoop.basis import BoxDomain, gauss_legendre_rule
from pontkoop.model import PontryaginField, omega_matrix, y_vars
from pontkoop.poly import PolyExpr, variables
from pontkoop.structure import (BoundaryTermWarning, SingularSymplecticGramError, StructureReport, adjoint_defect,
                                bump_weight, check_hamiltonian_structure, monodromy, monodromy_defects,
                                skew_gram_schmidt, symplectic_form, symplectic_gram)

Y = y_vars(2)


@pytest.fixture(scope="module")
def quad():
    return gauss_legendre_rule(BoxDomain.cube(4, 0.5), 4)


def test_omega_of_coordinates_is_omega(quad):
    coords = variables(Y, Y)
    G = symplectic_gram(coords, quad, 2)
    assert np.allclose(G, omega_matrix(2))


def test_symplectic_form_skew_on_self(quad):
    p = PolyExpr({(1, 2, 0, 1): 1.5, (0, 0, 1, 0): -2.0}, Y)
    assert symplectic_form(p, p, quad, 2) == pytest.approx(0.0, abs=1e-14)


def test_lqr_monodromy_symplectic(lqr_field):
    G = monodromy(lqr_field, np.zeros(4), 1.0)
    s, d = monodromy_defects(G, 2)
    assert s <= 1e-8 and d <= 1e-8


def test_monodromy_identity_at_zero_time(vdp_field):
    G = monodromy(vdp_field, [0.1, 0.2, 0.0, 0.1], 1e-12)
    assert np.allclose(G, np.eye(4), atol=1e-9)


def test_corrupted_field_structure_defects(vdp_field):
    F = list(vdp_field.F)
    F[0] = F[0] + PolyExpr.var("x1", Y) * 0.1
    bad = PontryaginField.from_components(F, 2, verify=False)
    rep = check_hamiltonian_structure(bad, np.random.default_rng(0).uniform(-0.5, 0.5, (10, 4)))
    assert rep.divergence == pytest.approx(0.1)
    assert "symmetry_defect" in rep.failures()
    s, d = monodromy_defects(monodromy(bad, [0.1, 0.1, 0.1, 0.1], 1.0), 2)
    assert d > 1e-3


def test_report_json_and_failures():
    rep = StructureReport(symmetry_defect=0.0, divergence=1.0)
    assert rep.failures() == ["divergence"]
    assert '"divergence": 1.0' in rep.to_json()


def test_bump_weight_vanishes_on_boundary():
    box = BoxDomain.cube(4, 0.5)
    w = bump_weight(box, Y)
    assert w([0.5, 0.1, -0.2, 0.3]) == pytest.approx(0.0)
    assert w.diff("x1")([0.5, 0.1, -0.2, 0.3]) == pytest.approx(0.0)
    assert w(np.zeros(4)) > 0


def test_adjoint_warns_without_boundary_vanishing(vdp_field, quad):
    x1, x2, l1, l2 = variables(Y, Y)
    with pytest.warns(BoundaryTermWarning):
        d = adjoint_defect(vdp_field, x1 * x2, l1, gauss_legendre_rule(BoxDomain.cube(4, 0.5), 5))
    assert np.isfinite(d)
    with pytest.raises(ValueError):
        adjoint_defect(vdp_field, x1, l1, quad, strict=True)


def test_adjoint_nonvanishing_pair_has_defect(vdp_field):
    x1, x2, l1, l2 = variables(Y, Y)
    quad = gauss_legendre_rule(BoxDomain.cube(4, 0.5), 5)
    with pytest.warns(BoundaryTermWarning):
        d = adjoint_defect(vdp_field, x2 * x2, l2 * l2, quad)
    assert d > 1e-6


def test_skew_gram_schmidt_restores_scaled_coordinates(quad):
    coords = variables(Y, Y)
    out = skew_gram_schmidt([c * 2 for c in coords], quad, 2)
    assert np.allclose(symplectic_gram(out, quad, 2), omega_matrix(2), atol=1e-12)


def test_skew_gram_schmidt_mixes_pairs(quad):
    x1, x2, l1, l2 = variables(Y, Y)
    fns = [x1 + x2, l1, x2, l2 + 3 * l1]
    out = skew_gram_schmidt(fns, quad, 2)
    assert np.allclose(symplectic_gram(out, quad, 2), omega_matrix(2), atol=1e-12)


def test_skew_gram_schmidt_singular(quad):
    x1, x2, l1, l2 = variables(Y, Y)
    with pytest.raises(SingularSymplecticGramError):
        skew_gram_schmidt([x1, x2, x1 + x2, 2 * x1], quad, 2)
