import math

import numpy as np
import pytest

from conftest import LINEAR_INDICES, SQRT3
from pontkoop.basis import BoxDomain, QuadratureOrderError, gauss_legendre_rule, graded_index_set, legendre_basis
from pontkoop.model import omega_matrix, y_vars
from pontkoop.poly import PolyExpr, variables
from pontkoop.sim import integrate
from pontkoop.spectral import (EigenPair, apply_lift, assemble_galerkin, eigendecompose, eigenfunction,
                               mirror_pairs, projected_residual, symplectic_coupling, unprojected_residual,
                               write_spectrum_csv)

Y = y_vars(2)


def test_lift_of_constant_is_zero(vdp_field):
    assert apply_lift(vdp_field, PolyExpr.const(2.0, Y)).is_zero()


def test_lift_of_lqr_linear_eigenfunction(lqr_field):
    J = lqr_field.jacobian(np.zeros(4))
    w, V = np.linalg.eig(J.T)
    v = V[:, 0]
    phi = sum((PolyExpr.var(n, Y) * complex(c) for n, c in zip(Y, v)), PolyExpr.zero(Y))
    assert (apply_lift(lqr_field, phi) - phi * complex(w[0])).max_abs_coeff() < 1e-12


def test_constant_row_is_zero(vdp_n15):
    assert np.all(vdp_n15.galerkin.M[0] == 0.0)


def test_insufficient_quadrature_rejected(vdp_field, cube4):
    basis = legendre_basis(cube4, graded_index_set(4, 15), Y)
    with pytest.raises(QuadratureOrderError):
        assemble_galerkin(vdp_field, basis, gauss_legendre_rule(cube4, 2))


def test_omega_matrix_spectrum():
    eigs = eigendecompose(omega_matrix(2))
    assert sorted(round(e.kappa.imag, 12) for e in eigs) == [-1, -1, 1, 1]
    assert all(abs(e.kappa.real) < 1e-14 for e in eigs)


def test_lqr_spectrum(lqr_syn):
    ks = sorted((e.kappa for e in lqr_syn.eigs if abs(e.kappa) > 1e-9), key=lambda z: (z.real, z.imag))
    target = sorted((s * (SQRT3 + t * 1j) / 2 for s in (1, -1) for t in (1, -1)), key=lambda z: (z.real, z.imag))
    assert np.allclose(ks, target, atol=1e-10)
    pairing = mirror_pairs(lqr_syn.eigs)
    assert len(pairing.pairs) == 2


def test_vanderpol_n4_closed_form(vdp_n4):
    bp = math.sqrt(983 + 96 * math.sqrt(143))
    bm = math.sqrt(-983 + 96 * math.sqrt(143))
    ks = sorted((e.kappa for e in vdp_n4.eigs), key=lambda z: (z.real, z.imag))
    target = sorted((s * (bm + t * bp * 1j) / 48 for s in (1, -1) for t in (1, -1)), key=lambda z: (z.real, z.imag))
    assert np.allclose(ks, target, atol=1e-12)
    pairing = mirror_pairs(vdp_n4.eigs)
    assert len(pairing.pairs) == 2 and all(d <= 1e-9 for _, _, d in pairing.pairs)


def test_normalization_and_residuals(vdp_n15):
    normM = np.linalg.norm(vdp_n15.galerkin.M)
    for e in vdp_n15.eigs:
        a = e.left_vector
        assert np.linalg.norm(a) == pytest.approx(1.0)
        k = int(np.argmax(np.abs(a) > 1e-8 * np.max(np.abs(a))))
        assert a[k].imag == pytest.approx(0.0, abs=1e-15) and a[k].real > 0
        assert e.residual <= 1e-8 * normM
        assert projected_residual(e, vdp_n15.galerkin) <= 1e-8 * normM


def test_unprojected_residual_is_diagnostic(vdp_n15):
    e = next(e for e in vdp_n15.eigs if not e.truncation_dominated and e.kappa.real > 0.1)
    r = unprojected_residual(e, vdp_n15.galerkin, vdp_n15.quad)
    assert np.isfinite(r) and r > 0


def test_sorted_by_real_part(vdp_n15):
    re = [e.kappa.real for e in vdp_n15.eigs]
    assert all(a >= b - 1e-12 for a, b in zip(re, re[1:]))


def test_mirror_pairs_trivial():
    eigs = [EigenPair(complex(k), np.ones(1), 0.0) for k in (1, -1, 2j, -2j)]
    p = mirror_pairs(eigs)
    assert len(p.pairs) == 2 and all(d == 0 for *_, d in p.pairs)
    assert p.unpaired == []


def test_mirror_pairs_skip_flagged():
    eigs = [EigenPair(1 + 0j, np.ones(1), 0.0, True), EigenPair(-1 + 0j, np.ones(1), 0.0)]
    assert mirror_pairs(eigs).pairs == []
    assert len(mirror_pairs(eigs, include_flagged=True).pairs) == 1


def test_single_function_basis(vdp_field, cube4):
    G = assemble_galerkin(vdp_field, legendre_basis(cube4, [(0, 0, 0, 0)], Y), gauss_legendre_rule(cube4, 1))
    eigs = eigendecompose(G)
    assert len(eigs) == 1 and eigs[0].kappa == 0
    assert mirror_pairs(eigs).pairs == []


def test_coupling_self_is_zero(vdp_n4):
    f = eigenfunction(vdp_n4.eigs[0], vdp_n4.galerkin.basis)
    assert abs(symplectic_coupling(f, f, vdp_n4.quad, 2)) < 1e-12


def test_lqr_coupling_is_v_omega_v(lqr_field):
    # unit-volume box: omega(v1.y, v2.y) = v1^T Omega v2
    box = BoxDomain.cube(4, 0.5)
    quad = gauss_legendre_rule(box, 2)
    basis = legendre_basis(box, LINEAR_INDICES, Y)
    eigs = eigendecompose(assemble_galerkin(lqr_field, basis, quad))
    Om = omega_matrix(2)
    scale = 2 * SQRT3  # orthonormal linear Legendre on [-1/2, 1/2] is 2*sqrt(3)*z
    for i, ei in enumerate(eigs):
        for j, ej in enumerate(eigs):
            fi, fj = eigenfunction(ei, basis), eigenfunction(ej, basis)
            c = symplectic_coupling(fi, fj, quad, 2)
            assert c == pytest.approx(scale ** 2 * ei.left_vector @ Om @ ej.left_vector, abs=1e-12)
            if abs(c) > 1e-10:
                assert abs(ei.kappa + ej.kappa) < 1e-10


def test_vanderpol_n15_coupling_implies_mirror(vdp_n15):
    eigs = [e for e in vdp_n15.eigs if abs(e.kappa) > 1e-9 and not e.truncation_dominated]
    basis = vdp_n15.galerkin.basis
    fns = [eigenfunction(e, basis) for e in eigs]
    C = np.array([[abs(symplectic_coupling(a, b, vdp_n15.quad, 2)) for b in fns] for a in fns])
    normM = np.linalg.norm(vdp_n15.galerkin.M)
    big = C > 0.1 * C.max()
    for i, j in zip(*np.nonzero(big)):
        assert abs(eigs[i].kappa + eigs[j].kappa) <= 1e-2 * normM


def test_generator_relation_along_flow(vdp_n4, vdp_field):
    # Psi(Gamma_t(z)) ~ exp(kappa t) Psi(z) for the mirrored modes, small t
    rng = np.random.default_rng(5)
    basis = vdp_n4.galerkin.basis
    pairing = mirror_pairs(vdp_n4.eigs)
    t = 0.05
    for i, j, _ in pairing.pairs:
        f = eigenfunction(vdp_n4.eigs[i], basis)
        for z in rng.uniform(-0.5, 0.5, size=(20, 4)):
            zt = integrate(lambda _, y: vdp_field.rhs(y), z, t).final
            lhs, rhs = f.psi(zt), np.exp(f.kappa * t) * f.psi(z)
            assert abs(lhs - rhs) <= 1e-2 * max(abs(rhs), 1e-3)


def test_eigenfunction_zero_set_scale_invariant(vdp_n4):
    e = vdp_n4.eigs[0]
    basis = vdp_n4.galerkin.basis
    pts = np.random.default_rng(6).uniform(-0.5, 0.5, size=(50, 4))
    a = np.abs(eigenfunction(e, basis).psi(pts))
    b = np.abs(eigenfunction(EigenPair(e.kappa, e.left_vector * (2 - 3j), e.residual), basis).psi(pts))
    assert np.allclose(b, a * abs(2 - 3j))


def test_spectrum_csv(tmp_path, lqr_syn):
    p = tmp_path / "s.csv"
    write_spectrum_csv(p, lqr_syn.eigs, mirror_pairs(lqr_syn.eigs), "hdr")
    lines = p.read_text().splitlines()
    assert lines[0] == "# hdr"
    assert lines[1] == "index,re_kappa,im_kappa,residual,paired_with,pair_defect"
    assert len(lines) == 2 + len(lqr_syn.eigs)
