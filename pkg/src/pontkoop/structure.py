"""Symplectic structure of the lifted dynamics.

Covers the bilinear form on observables, pointwise Hamiltonian-structure
defects of ``F_y``, monodromy symplecticity, the generator's adjoint
identity on boundary-vanishing test functions, and skew Gram-Schmidt.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .basis import BoxDomain, QuadratureRule
from .model import PontryaginField, omega_matrix, y_vars
from .poly import PolyBundle, PolyExpr
from .sim import flow_with_sensitivity

STRUCTURE_THRESHOLDS = {
    "symmetry_defect": 1e-10,
    "divergence": 1e-10,
    "monodromy_symplectic_defect": 1e-6,
    "monodromy_det_defect": 1e-6,
    "adjoint_defect": 1e-10,
}


class SingularSymplecticGramError(ArithmeticError):
    pass


class BoundaryTermWarning(UserWarning):
    """Test functions do not vanish on the box boundary, so integration by parts leaves a residual."""


@dataclass
class StructureReport:
    symmetry_defect: float | None = None
    divergence: float | None = None
    monodromy_symplectic_defect: float | None = None
    monodromy_det_defect: float | None = None
    adjoint_defect: float | None = None

    def failures(self, thresholds: dict = STRUCTURE_THRESHOLDS) -> list:
        return [k for k, v in asdict(self).items() if v is not None and not v <= thresholds[k]]

    def to_json(self, **extra) -> str:
        return json.dumps({**asdict(self), **extra}, indent=2, sort_keys=False)


def _omega_contract(gp: Sequence, gq: Sequence, n_x: int):
    """``grad(p)^T Omega grad(q)`` for gradient lists over ``(x, lam)``."""
    out = PolyExpr.zero(gp[0].vars)
    for i in range(n_x):
        out = out + gp[i] * gq[n_x + i] - gp[n_x + i] * gq[i]
    return out


def symplectic_form(phi: PolyExpr, Phi: PolyExpr, quad: QuadratureRule, n_x: int,
                    vars: Sequence[str] | None = None):
    """``int_C grad(phi)^T Omega grad(Phi) dz``, bilinear (no conjugation) for complex inputs."""
    vars = tuple(vars) if vars is not None else y_vars(n_x)
    gp = phi.embed_for_eval(vars).gradient(vars)
    gq = Phi.embed_for_eval(vars).gradient(vars)
    quad.require(max(g.max_var_degree() for g in gp) + max(g.max_var_degree() for g in gq), "symplectic integrand")
    # contract nodal gradient values instead of forming the product polynomial
    P = PolyBundle(gp, vars)(quad.nodes)
    Q = PolyBundle(gq, vars)(quad.nodes)
    return quad.integrate_values(np.sum(P[:n_x] * Q[n_x:] - P[n_x:] * Q[:n_x], axis=0))


def symplectic_gram(fns: Sequence[PolyExpr], quad: QuadratureRule, n_x: int) -> np.ndarray:
    n = len(fns)
    cplx = any(f.is_complex() for f in fns)
    G = np.zeros((n, n), dtype=complex if cplx else float)
    for i in range(n):
        for j in range(i + 1, n):
            G[i, j] = symplectic_form(fns[i], fns[j], quad, n_x)
            G[j, i] = -G[i, j]
    return G


def monodromy(field: PontryaginField, z0, t: float, tol: float = 1e-10, bound: float = 1e8) -> np.ndarray:
    """``dGamma_t/dz`` at `z0` (variational equation integrated with the state)."""
    return flow_with_sensitivity(field, z0, t, tol=tol, bound=bound)[1]


def monodromy_defects(G: np.ndarray, n_x: int) -> tuple:
    Om = omega_matrix(n_x)
    return float(np.max(np.abs(G.T @ Om @ G - Om))), float(abs(np.linalg.det(G) - 1.0))


def check_hamiltonian_structure(field: PontryaginField, samples) -> StructureReport:
    """Pointwise ``||Omega F_y - (Omega F_y)^T||_inf`` and ``|div F|`` maxima over `samples`."""
    samples = np.atleast_2d(np.asarray(samples, float))
    if samples.shape[0] == 0:
        raise ValueError("need at least one sample point")
    Om = omega_matrix(field.n_x)
    J = field.jacobian(samples)
    OJ = Om @ J
    sym = np.max(np.abs(OJ - np.swapaxes(OJ, 1, 2)))
    div = np.max(np.abs(np.trace(J, axis1=1, axis2=2)))
    return StructureReport(symmetry_defect=float(sym), divergence=float(div))


def bump_weight(box: BoxDomain, vars: Sequence[str]) -> PolyExpr:
    """``prod_i (h_i^2 - (z_i - c_i)^2)^2``: it and its gradient vanish on the box boundary."""
    w = PolyExpr.const(1.0, vars)
    for v, c, h in zip(vars, box.center, box.half_width):
        z = PolyExpr.var(v, vars) - c
        w = w * (h * h - z * z) ** 2
    return w


def _boundary_residual(p: PolyExpr, box: BoxDomain, vars: Sequence[str], npts: int = 5) -> float:
    """Max of ``|p|`` and ``|grad p|`` over Gauss points of every box face."""
    t = np.polynomial.legendre.leggauss(npts)[0]
    polys = [p] + p.gradient(vars)
    bundle = PolyBundle(polys, vars)
    worst = 0.0
    d = box.dim
    for k in range(d):
        others = [i for i in range(d) if i != k]
        grids = np.meshgrid(*[box.center[i] + box.half_width[i] * t for i in others], indexing="ij")
        face = np.zeros((grids[0].size if grids else 1, d))
        for j, i in enumerate(others):
            face[:, i] = grids[j].ravel()
        for s in (-1, 1):
            face[:, k] = box.center[k] + s * box.half_width[k]
            worst = max(worst, float(np.max(np.abs(bundle(face)))))
    return worst


def adjoint_defect(field: PontryaginField, p: PolyExpr, q: PolyExpr, quad: QuadratureRule,
                   strict: bool = False) -> float:
    """``|omega(p, Lq) + omega(Lp, q)|``; zero when the generator is skew-adjoint.

    The identity needs `p`, `q` and their gradients to vanish on the box
    boundary.  Otherwise a :class:`BoundaryTermWarning` is issued (or a
    ``ValueError`` when `strict`) and the defect is still reported.
    """
    vars = field.vars
    scale = max(1.0, p.max_abs_coeff(), q.max_abs_coeff())
    for name, f in (("p", p), ("q", q)):
        if _boundary_residual(f.embed_for_eval(vars), quad.box, vars) > 1e-12 * scale:
            msg = f"test function {name} does not vanish on the boundary; boundary terms are included"
            if strict:
                raise ValueError(msg)
            warnings.warn(msg, BoundaryTermWarning, stacklevel=2)
    Lp, Lq = field.lift(p), field.lift(q)
    a = symplectic_form(p, Lq, quad, field.n_x, vars)
    b = symplectic_form(Lp, q, quad, field.n_x, vars)
    return float(abs(a + b))


def skew_gram_schmidt(fns: Sequence[PolyExpr], quad: QuadratureRule, n_x: int,
                      pivot_tol: float = 1e-12) -> list:
    """Symplectic Gram-Schmidt: returns ``q`` with ``omega(q, q) = Omega``.

    Pairs are formed greedily: the first remaining function is matched with
    the remaining function of largest coupling, both are rescaled to unit
    coupling and removed from the rest.
    """
    if len(fns) != 2 * n_x:
        raise ValueError(f"need {2 * n_x} functions, got {len(fns)}")
    rest = list(fns)
    es, fs = [], []
    for _ in range(n_x):
        e = rest.pop(0)
        cpl = [symplectic_form(e, g, quad, n_x) for g in rest]
        j = int(np.argmax(np.abs(cpl)))
        w = cpl[j]
        if abs(w) < pivot_tol:
            raise SingularSymplecticGramError(f"symplectic Gram pivot {abs(w):.3e} below {pivot_tol:g}")
        f = rest.pop(j)
        s = np.sqrt(abs(w))
        e = e / s
        f = f / (s * np.sign(w))
        new_rest = []
        for g in rest:
            # remove components along the (e, f) pair
            new_rest.append(g - e * symplectic_form(g, f, quad, n_x) + f * symplectic_form(g, e, quad, n_x))
        rest = new_rest
        es.append(e)
        fs.append(f)
    return es + fs
