"""Galerkin projection of the generator, its spectrum and approximate eigenfunctions."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .basis import BasisSet, QuadratureRule
from .model import PontryaginField
from .poly import PolyBundle, PolyExpr
from .structure import symplectic_form

log = logging.getLogger(__name__)

#: eigenvector mass fraction on the top-degree slice above which a mode is flagged
TRUNCATION_MASS = 0.9


class EigenSolverError(ArithmeticError):
    pass


def apply_lift(field: PontryaginField, phi: PolyExpr) -> PolyExpr:
    """``L phi = F^T grad(phi)`` (exact)."""
    return field.lift(phi)


@dataclass(frozen=True)
class GalerkinMatrix:
    M: np.ndarray
    basis: BasisSet
    field: PontryaginField = field(repr=False)

    @property
    def N(self) -> int:
        return self.M.shape[0]


def assemble_galerkin(fld: PontryaginField, basis: BasisSet, quad: QuadratureRule) -> GalerkinMatrix:
    """``M[i, j] = <L phi_i, phi_j>`` on the box, by a rule verified to be exact."""
    if tuple(basis.vars) != fld.vars:
        raise ValueError("basis variables must match the field's (x, lam) ordering")
    lifted = [fld.lift(phi) for phi in basis.functions]
    need = max(lp.max_var_degree() for lp in lifted) + max(p.max_var_degree() for p in basis.functions)
    quad.require(need, "Galerkin integrand")
    L_vals = PolyBundle(lifted, fld.vars)(quad.nodes)
    P_vals = basis.evaluate(quad.nodes)
    M = (L_vals * quad.weights) @ P_vals.T
    if not np.all(np.isfinite(M)):
        raise EigenSolverError("non-finite Galerkin entries")
    return GalerkinMatrix(M, basis, fld)


@dataclass(frozen=True)
class EigenPair:
    kappa: complex
    left_vector: np.ndarray
    residual: float
    truncation_dominated: bool = False


def _normalize(a: np.ndarray) -> np.ndarray:
    a = a / np.linalg.norm(a)
    big = np.max(np.abs(a))
    k = int(np.argmax(np.abs(a) > 1e-8 * big))
    return a * (np.conj(a[k]) / abs(a[k]))


def eigendecompose(G: GalerkinMatrix | np.ndarray, tol: float | None = None) -> list:
    """All eigenpairs of ``M^T`` (left eigenvectors of ``M``), sorted by descending real part.

    Vectors have unit 2-norm with the first significant entry real positive.
    For nonlinear fields, modes whose eigenvector mass sits mostly on the
    highest-degree basis functions are flagged ``truncation_dominated``.
    """
    M = G.M if isinstance(G, GalerkinMatrix) else np.asarray(G, float)
    basis = G.basis if isinstance(G, GalerkinMatrix) else None
    if not np.all(np.isfinite(M)):
        raise EigenSolverError("matrix has non-finite entries")
    normM = np.linalg.norm(M)
    tol = 1e-8 * max(normM, 1e-300) if tol is None else tol
    w, V = np.linalg.eig(M.T)
    top = None
    # a linear field maps each degree slice into itself: nothing is truncated
    nonlinear = isinstance(G, GalerkinMatrix) and G.field.degree() > 1
    if nonlinear and len(set(basis.degrees)) > 1:
        top = np.array(basis.degrees) == basis.max_degree
    pairs = []
    for k in range(len(w)):
        kap = complex(w[k])
        if abs(kap.imag) <= 1e-14 * max(1.0, normM):
            kap = complex(kap.real, 0.0)
        a = _normalize(V[:, k].astype(complex))
        if kap.imag == 0.0:
            a = a.real.astype(complex)
            a = a / np.linalg.norm(a)
        res = float(np.linalg.norm(M.T @ a - kap * a))
        if res > tol:
            raise EigenSolverError(f"eigenpair {k} (kappa={kap:.6g}) residual {res:.3e} exceeds {tol:.3e}")
        flagged = bool(top is not None and np.sum(np.abs(a[top]) ** 2) > TRUNCATION_MASS)
        pairs.append(EigenPair(kap, a, res, flagged))
    pairs.sort(key=lambda p: (-round(p.kappa.real, 12), -round(p.kappa.imag, 12)))
    return pairs


@dataclass(frozen=True)
class Eigenfunction:
    kappa: complex
    psi: PolyExpr
    gradient: tuple


def eigenfunction(pair: EigenPair, basis: BasisSet) -> Eigenfunction:
    psi = basis.combine(pair.left_vector)
    return Eigenfunction(pair.kappa, psi, tuple(psi.gradient(basis.vars)))


@dataclass(frozen=True)
class MirrorPairing:
    pairs: list
    unpaired: list

    def paired_indices(self) -> set:
        return {i for p in self.pairs for i in p[:2]}

    def partner(self, i: int):
        for a, b, d in self.pairs:
            if a == i:
                return b, d
            if b == i:
                return a, d
        return None, None


def default_pair_tol(eigs: Sequence[EigenPair]) -> float:
    return 1e-6 * max(1.0, max((abs(e.kappa) for e in eigs), default=0.0))


def mirror_pairs(eigs: Sequence[EigenPair], pair_tol: float | None = None,
                 include_flagged: bool = False) -> MirrorPairing:
    """Greedy minimum-defect matching of ``kappa_i`` with ``-kappa_j``.

    Zero eigenvalues are their own mirror and are left unpaired, as are
    truncation-dominated modes unless `include_flagged`.
    """
    tol = default_pair_tol(eigs) if pair_tol is None else pair_tol
    usable = [i for i, e in enumerate(eigs) if (include_flagged or not e.truncation_dominated)
              and abs(e.kappa) > tol]
    cands = []
    for a in range(len(usable)):
        for b in range(a + 1, len(usable)):
            i, j = usable[a], usable[b]
            d = abs(eigs[i].kappa + eigs[j].kappa)
            if d <= tol:
                cands.append((d, i, j))
    cands.sort()
    used: set = set()
    pairs = []
    for d, i, j in cands:
        if i in used or j in used:
            continue
        used.update((i, j))
        pairs.append((i, j, float(d)))
    pairs.sort(key=lambda p: p[:2])
    unpaired = [i for i in range(len(eigs)) if i not in used]
    return MirrorPairing(pairs, unpaired)


def symplectic_coupling(p1: Eigenfunction, p2: Eigenfunction, quad: QuadratureRule, n_x: int) -> complex:
    """Bilinear ``omega(Psi_1, Psi_2)``."""
    return complex(symplectic_form(p1.psi, p2.psi, quad, n_x))


def projected_residual(pair: EigenPair, G: GalerkinMatrix) -> float:
    """``||P(L Psi) - kappa Psi||`` after projection onto the basis span (orthonormal basis)."""
    return float(np.linalg.norm(G.M.T @ pair.left_vector - pair.kappa * pair.left_vector))


def unprojected_residual(pair: EigenPair, G: GalerkinMatrix, quad: QuadratureRule) -> float:
    """``||L Psi - kappa Psi||_{L2(C)}``; includes the Galerkin truncation error."""
    psi = G.basis.combine(pair.left_vector)
    r = G.field.lift(psi) - psi * pair.kappa
    vals = PolyBundle([r], G.field.vars)(quad.nodes)[0]
    return float(np.sqrt(abs(quad.integrate_values(np.abs(vals) ** 2))))


def write_spectrum_csv(path, eigs: Sequence[EigenPair], pairing: MirrorPairing, header_comment: str = "") -> None:
    with open(path, "w") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write("index,re_kappa,im_kappa,residual,paired_with,pair_defect\n")
        for i, e in enumerate(eigs):
            j, d = pairing.partner(i)
            fh.write(f"{i},{e.kappa.real!r},{e.kappa.imag!r},{e.residual!r},"
                     f"{'' if j is None else j},{'' if d is None else repr(d)}\n")
