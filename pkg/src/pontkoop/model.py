"""Optimal control problem data, Hamiltonian, control minimizer and the lifted field.

State variables are named ``x1..xn``, controls ``u1..um`` and costates
``lam1..lamn``.  The Pontryagin field lives over ``y = (x, lam)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .poly import PolyBundle, PolyExpr

#: symbolic identities (divergence, symmetry) are accepted below this relative level
SYMBOLIC_ZERO_TOL = 1e-12


class ModelError(ValueError):
    """Invalid problem data."""


class AssumptionViolation(ArithmeticError):
    """The Hamiltonian is not strictly convex in ``u`` where it was queried."""


class FieldConsistencyError(ArithmeticError):
    """A lifted field failed one of its symbolic Hamiltonian identities."""


def x_vars(n: int) -> tuple:
    return tuple(f"x{i + 1}" for i in range(n))


def u_vars(n: int) -> tuple:
    return tuple(f"u{i + 1}" for i in range(n))


def lam_vars(n: int) -> tuple:
    return tuple(f"lam{i + 1}" for i in range(n))


def y_vars(n_x: int) -> tuple:
    return x_vars(n_x) + lam_vars(n_x)


def omega_matrix(n_x: int) -> np.ndarray:
    """Canonical symplectic matrix ``[[0, I], [-I, 0]]``."""
    I = np.eye(n_x)
    Z = np.zeros((n_x, n_x))
    return np.block([[Z, I], [-I, Z]])


@dataclass(frozen=True)
class OcpModel:
    """Infinite-horizon problem ``min int (l - l_star) dt`` s.t. ``xdot = f(x, u)``."""

    n_x: int
    n_u: int
    f: tuple
    l: PolyExpr
    l_star: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        if len(self.f) != self.n_x:
            raise ModelError(f"f has {len(self.f)} components, expected n_x={self.n_x}")
        xu = self.xu_vars
        try:
            object.__setattr__(self, "f", tuple(p.restrict(xu) for p in self.f))
            object.__setattr__(self, "l", self.l.restrict(xu))
        except KeyError as exc:
            raise ModelError(f"f and l may only use {xu}; found {exc}") from None

    @property
    def xu_vars(self) -> tuple:
        return x_vars(self.n_x) + u_vars(self.n_u)

    @property
    def all_vars(self) -> tuple:
        return x_vars(self.n_x) + u_vars(self.n_u) + lam_vars(self.n_x)

    @property
    def affine_in_u(self) -> bool:
        return all(_u_degree(p, self) <= 1 for p in self.f)

    @property
    def quadratic_in_u(self) -> bool:
        if _u_degree(self.l, self) > 2:
            return False
        R = self.control_hessian()
        if R is None:
            return False
        return bool(np.all(np.linalg.eigvalsh(0.5 * (R + R.T)) > 0))

    def control_hessian(self) -> np.ndarray | None:
        """Constant ``l_uu`` if it is constant, else ``None``."""
        us = u_vars(self.n_u)
        R = np.zeros((self.n_u, self.n_u))
        for i, a in enumerate(us):
            for j, b in enumerate(us):
                h = self.l.diff(a).diff(b)
                if not h.is_constant():
                    return None
                R[i, j] = h.constant_value()
        return R

    def dynamics(self) -> PolyBundle:
        return PolyBundle(self.f, self.xu_vars)

    def running_cost(self) -> PolyBundle:
        return PolyBundle([self.l], self.xu_vars)


def _u_degree(p: PolyExpr, model: OcpModel) -> int:
    idx = [p.vars.index(u) for u in u_vars(model.n_u) if u in p.vars]
    return max((sum(k[i] for i in idx) for k in p.terms), default=0)


def hamiltonian(model: OcpModel) -> PolyExpr:
    """``H(x, u, lam) = lam^T f(x, u) + l(x, u)`` as an exact polynomial."""
    vars = model.all_vars
    H = model.l.embed(vars)
    for lam, fi in zip(lam_vars(model.n_x), model.f):
        H = H + PolyExpr.var(lam, vars) * fi.embed(vars)
    return H


# control minimizer ---------------------------------------------------------


@dataclass(frozen=True)
class ClosedFormUStar:
    """``u*(x, lam)`` as explicit polynomials over ``(x, lam)``."""

    u_expr: tuple
    n_x: int

    def __post_init__(self):
        object.__setattr__(self, "_bundle", PolyBundle(self.u_expr, y_vars(self.n_x)))

    def __call__(self, x, lam) -> np.ndarray:
        y = np.concatenate([np.asarray(x, float), np.asarray(lam, float)], axis=-1)
        if y.ndim == 1:
            return self._bundle(y)
        return self._bundle(y).T


@dataclass(frozen=True)
class NewtonUStar:
    """``u*(x, lam)`` defined implicitly by ``H_u = 0`` and solved pointwise.

    Damped Newton from ``u = 0``; the Hessian must stay positive definite.
    """

    h_u: tuple
    h_uu: tuple
    n_x: int
    n_u: int
    tol: float = 1e-12
    max_iter: int = 50

    def __post_init__(self):
        vars = x_vars(self.n_x) + u_vars(self.n_u) + lam_vars(self.n_x)
        object.__setattr__(self, "_g", PolyBundle(self.h_u, vars))
        object.__setattr__(self, "_h", PolyBundle([h for row in self.h_uu for h in row], vars))

    def __call__(self, x, lam) -> np.ndarray:
        x = np.asarray(x, float)
        lam = np.asarray(lam, float)
        u = np.zeros(self.n_u)

        def resid(u):
            return self._g(np.concatenate([x, u, lam]))

        r = resid(u)
        for _ in range(self.max_iter):
            if np.max(np.abs(r)) <= self.tol:
                break
            Huu = self._h(np.concatenate([x, u, lam])).reshape(self.n_u, self.n_u)
            if np.any(np.linalg.eigvalsh(0.5 * (Huu + Huu.T)) <= 0):
                raise AssumptionViolation(f"H_uu not positive definite at x={x}, lam={lam}, u={u}")
            step = np.linalg.solve(Huu, -r)
            t = 1.0
            for _ in range(20):
                r_new = resid(u + t * step)
                if np.linalg.norm(r_new) < np.linalg.norm(r):
                    break
                t *= 0.5
            u = u + t * step
            r = r_new
        else:
            if np.max(np.abs(r)) > self.tol:
                raise ArithmeticError(f"u* Newton did not converge at x={x}, lam={lam}")
        Huu = self._h(np.concatenate([x, u, lam])).reshape(self.n_u, self.n_u)
        if np.any(np.linalg.eigvalsh(0.5 * (Huu + Huu.T)) <= 0):
            raise AssumptionViolation(f"H_uu not positive definite at x={x}, lam={lam}, u={u}")
        return u


def minimize_hamiltonian_control(model: OcpModel, tol: float = 1e-12, max_iter: int = 50):
    """Parametric minimizer of ``H`` over ``u``.

    Returns a :class:`ClosedFormUStar` when ``f`` is affine in ``u`` and ``l``
    has a constant positive definite ``u``-Hessian, otherwise a
    :class:`NewtonUStar`.
    """
    H = hamiltonian(model)
    us = u_vars(model.n_u)
    h_u = tuple(H.diff(u) for u in us)
    if model.n_u == 0:
        return ClosedFormUStar((), model.n_x)
    if model.affine_in_u and model.quadratic_in_u:
        R = model.control_hessian()
        Rinv = np.linalg.inv(R)
        zero_u = {u: 0.0 for u in us}
        yv = y_vars(model.n_x)
        g = [h.subs(zero_u).embed_for_eval(yv) for h in h_u]
        u_expr = []
        for i in range(model.n_u):
            e = PolyExpr.zero(yv)
            for j in range(model.n_u):
                e = e - g[j] * Rinv[i, j]
            u_expr.append(e)
        ustar = ClosedFormUStar(tuple(u_expr), model.n_x)
        check = [h.subs(dict(zip(us, u_expr))) for h in h_u]
        scale = max(1.0, max(p.max_abs_coeff() for p in h_u))
        if any(c.max_abs_coeff() > SYMBOLIC_ZERO_TOL * scale for c in check):
            raise FieldConsistencyError("closed-form u* does not annihilate H_u")
        return ustar
    h_uu = tuple(tuple(h.diff(b) for b in us) for h in h_u)
    return NewtonUStar(h_u, h_uu, model.n_x, model.n_u, tol=tol, max_iter=max_iter)


# lifted field ----------------------------------------------------------------


@dataclass(frozen=True)
class PontryaginField:
    """State-costate vector field ``F`` over ``y = (x, lam)`` with exact Jacobian."""

    F: tuple
    F_y: tuple
    n_x: int
    verified: bool = True
    _bundles: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def vars(self) -> tuple:
        return y_vars(self.n_x)

    @property
    def dim(self) -> int:
        return 2 * self.n_x

    @classmethod
    def from_components(cls, F: Sequence[PolyExpr], n_x: int, verify: bool = True) -> "PontryaginField":
        yv = y_vars(n_x)
        if len(F) != 2 * n_x:
            raise ModelError(f"field needs {2 * n_x} components, got {len(F)}")
        F = tuple(p.restrict(yv) for p in F)
        F_y = tuple(tuple(Fi.diff(v) for v in yv) for Fi in F)
        fld = cls(F, F_y, n_x, verified=verify)
        if verify:
            fld.verify()
        return fld

    def degree(self) -> int:
        return max(p.degree() for p in self.F)

    def max_var_degree(self) -> int:
        return max(p.max_var_degree() for p in self.F)

    def divergence(self) -> PolyExpr:
        yv = self.vars
        div = PolyExpr.zero(yv)
        for i, v in enumerate(yv):
            div = div + self.F_y[i][i]
        return div

    def symmetry_defect_matrix(self) -> list:
        """Entries of ``Omega F_y - (Omega F_y)^T`` as polynomials."""
        n = self.dim
        Om = omega_matrix(self.n_x)
        yv = self.vars
        OF = [[PolyExpr.zero(yv) for _ in range(n)] for _ in range(n)]
        for i in range(n):
            for k in range(n):
                if Om[i, k]:
                    for j in range(n):
                        OF[i][j] = OF[i][j] + self.F_y[k][j] * Om[i, k]
        return [[OF[i][j] - OF[j][i] for j in range(n)] for i in range(n)]

    def verify(self) -> None:
        scale = max(1.0, max(p.max_abs_coeff() for p in self.F))
        div = self.divergence()
        if div.max_abs_coeff() > SYMBOLIC_ZERO_TOL * scale:
            raise FieldConsistencyError(f"divergence is not identically zero: {div}")
        for row in self.symmetry_defect_matrix():
            for p in row:
                if p.max_abs_coeff() > SYMBOLIC_ZERO_TOL * scale:
                    raise FieldConsistencyError(f"Omega F_y is not symmetric: defect {p}")

    def _bundle(self, key: str) -> PolyBundle:
        if key not in self._bundles:
            polys = self.F if key == "F" else [p for row in self.F_y for p in row]
            self._bundles[key] = PolyBundle(polys, self.vars)
        return self._bundles[key]

    def rhs(self, y) -> np.ndarray:
        """``F(y)``; `y` has shape ``(2n,)`` or ``(npts, 2n)``."""
        y = np.asarray(y, float)
        out = self._bundle("F")(y)
        return out if y.ndim == 1 else out.T

    def jacobian(self, y) -> np.ndarray:
        y = np.asarray(y, float)
        out = self._bundle("F_y")(y)
        n = self.dim
        if y.ndim == 1:
            return out.reshape(n, n)
        return out.T.reshape(-1, n, n)

    def lift(self, phi: PolyExpr) -> PolyExpr:
        """Generator action ``F^T grad(phi)``."""
        yv = self.vars
        phi = phi.embed_for_eval(yv)
        out = PolyExpr.zero(yv)
        for Fk, v in zip(self.F, yv):
            d = phi.diff(v)
            if not d.is_zero():
                out = out + Fk * d
        return out


def pontryagin_field(model: OcpModel, ustar) -> PontryaginField:
    """Lift ``(f(x, u*), -grad_x H(x, u*, lam))`` and verify its Hamiltonian structure."""
    if not isinstance(ustar, ClosedFormUStar):
        raise TypeError("symbolic lift needs a closed-form u*; got an implicit (Newton) minimizer")
    yv = y_vars(model.n_x)
    sub = dict(zip(u_vars(model.n_u), ustar.u_expr))
    H = hamiltonian(model)
    state = [fi.embed(model.all_vars).subs(sub).embed_for_eval(yv) for fi in model.f]
    costate = [(-H.diff(xv)).subs(sub).embed_for_eval(yv) for xv in x_vars(model.n_x)]
    return PontryaginField.from_components(state + costate, model.n_x, verify=True)


# registry --------------------------------------------------------------------


def vanderpol() -> OcpModel:
    """Controlled Van der Pol regulator with ``V = (x1^2 + x2^2)/2`` and ``mu* = -x1 x2``.

    ``x2dot = -x1 - (1 - x1^2) x2 / 2 + x1 u``; the sign of the linear ``x1``
    term is the one for which the quoted value function solves the HJB equation.
    """
    v = x_vars(2) + u_vars(1)
    x1, x2, u = (PolyExpr.var(n, v) for n in v)
    f = (x2, -x1 - 0.5 * (1 - x1 ** 2) * x2 + x1 * u)
    l = 0.5 * (x2 ** 2 + u ** 2)
    return OcpModel(2, 1, f, l, name="vanderpol")


def lqr_model(A, B, Q, R, name: str = "lqr") -> OcpModel:
    """``f = A x + B u``, ``l = (x^T Q x + u^T R u)/2``."""
    A, B, Q, R = (np.atleast_2d(np.asarray(M, float)) for M in (A, B, Q, R))
    n_x, n_u = B.shape
    v = x_vars(n_x) + u_vars(n_u)
    xs = [PolyExpr.var(n, v) for n in x_vars(n_x)]
    us = [PolyExpr.var(n, v) for n in u_vars(n_u)]
    f = []
    for i in range(n_x):
        e = PolyExpr.zero(v)
        for j in range(n_x):
            e = e + xs[j] * A[i, j]
        for j in range(n_u):
            e = e + us[j] * B[i, j]
        f.append(e)
    l = PolyExpr.zero(v)
    for i in range(n_x):
        for j in range(n_x):
            l = l + xs[i] * xs[j] * (0.5 * Q[i, j])
    for i in range(n_u):
        for j in range(n_u):
            l = l + us[i] * us[j] * (0.5 * R[i, j])
    return OcpModel(n_x, n_u, tuple(f), l, name=name)


def double_integrator_lqr() -> OcpModel:
    return lqr_model([[0, 1], [0, 0]], [[0], [1]], np.eye(2), [[1]], name="double_integrator_lqr")


REGISTRY: dict[str, Callable[[], OcpModel]] = {
    "vanderpol": vanderpol,
    "double_integrator_lqr": double_integrator_lqr,
}


def get_problem(name: str) -> OcpModel:
    try:
        return REGISTRY[name]()
    except KeyError:
        raise ModelError(f"unknown problem {name!r}; known: {sorted(REGISTRY)}") from None
