"""Costate map and feedback law from the zero set of unstable eigenfunctions."""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .basis import BasisSet, BoxDomain, QuadratureRule, gauss_legendre_rule
from .model import lam_vars, x_vars, y_vars
from .poly import PolyBundle, PolyExpr
from .spectral import EigenPair, MirrorPairing, eigenfunction, mirror_pairs
from .structure import symplectic_form

log = logging.getLogger(__name__)


class SelectionError(ValueError):
    """Not enough unstable eigenfunctions to form ``n_x`` equations."""


class CostateSolveError(ArithmeticError):
    def __init__(self, msg: str, x=None, residual: float = np.nan, iterations: int = 0):
        super().__init__(msg)
        self.x = None if x is None else np.asarray(x, float)
        self.residual = residual
        self.iterations = iterations


class SingularCostateJacobian(CostateSolveError):
    pass


class NearAxisWarning(UserWarning):
    pass


class MultipleRootWarning(UserWarning):
    pass


# stable-manifold system -------------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    """One unstable mode (a conjugate pair counts once) considered for the equation system."""

    index: int
    kappa: complex
    partner: int | None
    mirror_defect: float
    exact_mirror: bool
    coupling: float

    @property
    def n_equations(self) -> int:
        return 1 if self.kappa.imag == 0 else 2


@dataclass(frozen=True)
class StableManifoldSystem:
    equations: tuple
    selected_eigs: tuple
    jacobian_lam: tuple
    n_x: int
    candidates: tuple = ()
    diagnostics: tuple = ()

    def __post_init__(self):
        if len(self.equations) != self.n_x:
            raise SelectionError(f"need {self.n_x} equations, got {len(self.equations)}")
        yv = y_vars(self.n_x)
        object.__setattr__(self, "_eq", PolyBundle(self.equations, yv))
        object.__setattr__(self, "_jac", PolyBundle([p for row in self.jacobian_lam for p in row], yv))
        object.__setattr__(self, "_diag", PolyBundle(self.diagnostics, yv) if self.diagnostics else None)

    @classmethod
    def from_equations(cls, equations: Sequence[PolyExpr], n_x: int, selected_eigs=(), **kw):
        yv = y_vars(n_x)
        eqs = tuple(e.embed_for_eval(yv) for e in equations)
        jac = tuple(tuple(e.diff(v) for v in lam_vars(n_x)) for e in eqs)
        return cls(eqs, tuple(selected_eigs), jac, n_x, **kw)

    def residual(self, x, lam) -> np.ndarray:
        return self._eq(np.concatenate([np.asarray(x, float), np.asarray(lam, float)]))

    def jacobian(self, x, lam) -> np.ndarray:
        y = np.concatenate([np.asarray(x, float), np.asarray(lam, float)])
        return self._jac(y).reshape(self.n_x, self.n_x)

    def unselected_residuals(self, x, lam) -> np.ndarray:
        """Values of the remaining unstable eigenfunctions (diagnostic only)."""
        if self._diag is None:
            return np.zeros(0)
        return self._diag(np.concatenate([np.asarray(x, float), np.asarray(lam, float)]))


def _split(psi: PolyExpr, kappa: complex) -> list:
    if kappa.imag == 0:
        return [psi.real()]
    return [psi.real(), psi.imag()]


def rank_unstable(eigs: Sequence[EigenPair], basis: BasisSet, quad: QuadratureRule, n_x: int,
                  tau: float | None = None, pairing: MirrorPairing | None = None) -> list:
    """Unflagged unstable modes, best first.

    Modes with an exact mirror partner come first; within each group the
    order is by decreasing ``|omega(Psi_k, Psi_-k)|``, where the partner is
    the mirror match or else the eigenvalue closest to ``-kappa``.
    """
    kmax = max((abs(e.kappa) for e in eigs), default=0.0)
    tau = 1e-6 * kmax if tau is None else tau
    pairing = mirror_pairs(eigs) if pairing is None else pairing
    near = [i for i, e in enumerate(eigs) if 0 < abs(e.kappa.real) <= tau and abs(e.kappa) > tau]
    if near:
        warnings.warn(f"{len(near)} eigenvalue(s) within tau={tau:.2e} of the imaginary axis are excluded",
                      NearAxisWarning, stacklevel=2)
    ks = np.array([e.kappa for e in eigs])
    out = []
    for i, e in enumerate(eigs):
        if e.truncation_dominated or e.kappa.real <= tau or e.kappa.imag < 0:
            continue
        j, d = pairing.partner(i)
        exact = j is not None
        if j is None:
            dist = np.abs(ks + e.kappa)
            dist[i] = np.inf
            j = int(np.argmin(dist))
            d = float(dist[j])
        psi_i = eigenfunction(e, basis).psi
        psi_j = eigenfunction(eigs[j], basis).psi
        c = abs(symplectic_form(psi_i, psi_j, quad, n_x))
        out.append(Candidate(i, e.kappa, j, float(d), exact, float(c)))
    out.sort(key=lambda c: (not c.exact_mirror, -round(c.coupling, 12), c.index))
    return out


def select_unstable(eigs: Sequence[EigenPair], basis: BasisSet, quad: QuadratureRule, n_x: int,
                    tau: float | None = None, pairing: MirrorPairing | None = None,
                    choose: Sequence[int] | None = None) -> StableManifoldSystem:
    """Accumulate ranked unstable modes until exactly ``n_x`` real equations are collected.

    A complex mode contributes ``Re Psi`` and ``Im Psi``.  A mode that would
    overshoot ``n_x`` is skipped.  `choose` overrides the ranking with
    explicit eigenpair indices.
    """
    cands = rank_unstable(eigs, basis, quad, n_x, tau, pairing)
    if choose is not None:
        by_index = {c.index: c for c in cands}
        missing = [i for i in choose if i not in by_index]
        if missing:
            raise SelectionError(f"indices {missing} are not unflagged unstable modes")
        order = [by_index[i] for i in choose]
    else:
        order = cands
    if not cands:
        raise SelectionError("no unstable eigenvalues: no unflagged eigenvalue with real part above tau")
    eqs, used = [], []
    for c in order:
        if len(eqs) + c.n_equations > n_x:
            continue
        eqs.extend(_split(eigenfunction(eigs[c.index], basis).psi, c.kappa))
        used.append(c)
        if len(eqs) == n_x:
            break
    if len(eqs) != n_x:
        raise SelectionError(f"only {len(eqs)} of {n_x} equations available from unstable modes")
    rest = []
    for c in cands:
        if c not in used:
            rest.extend(_split(eigenfunction(eigs[c.index], basis).psi, c.kappa))
    return StableManifoldSystem.from_equations(eqs, n_x, [c.kappa for c in used],
                                               candidates=tuple(cands), diagnostics=tuple(
                                                   p.embed_for_eval(y_vars(n_x)) for p in rest))


# Newton solve -----------------------------------------------------------------------


@dataclass(frozen=True)
class NewtonOptions:
    tol: float = 1e-10
    max_iter: int = 50
    max_halvings: int = 20


@dataclass(frozen=True)
class CostateSolution:
    lam: np.ndarray
    iterations: int
    residual: float
    jacobian_cond: float


def _newton(system: StableManifoldSystem, x, lam0, opts: NewtonOptions) -> CostateSolution:
    lam = np.array(lam0, float)
    r = system.residual(x, lam)
    rn = float(np.max(np.abs(r)))
    for it in range(opts.max_iter + 1):
        if not np.isfinite(rn):
            raise CostateSolveError(f"non-finite residual at x={x}", x, rn, it)
        J = system.jacobian(x, lam)
        if rn <= opts.tol:
            return CostateSolution(lam, it, rn, float(np.linalg.cond(J)))
        if it == opts.max_iter:
            break
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            raise SingularCostateJacobian(f"singular lambda-Jacobian at x={x}", x, rn, it) from None
        t = 1.0
        for _ in range(opts.max_halvings + 1):
            r_new = system.residual(x, lam + t * step)
            rn_new = float(np.max(np.abs(r_new)))
            if rn_new < rn:
                break
            t *= 0.5
        else:
            raise CostateSolveError(f"line search stalled at x={x} (residual {rn:.3e})", x, rn, it)
        lam = lam + t * step
        r, rn = r_new, rn_new
    raise CostateSolveError(f"no convergence in {opts.max_iter} iterations at x={x} (residual {rn:.3e})",
                            x, rn, opts.max_iter)


class FeedbackLaw:
    """``mu(x) = u*(x, Lambda(x))`` with ``Lambda`` solved from the stable-manifold system.

    Parameters
    ----------
    system : StableManifoldSystem
    ustar : callable
        ``u*(x, lam)``.
    warm_start : ndarray, optional
        Matrix ``P`` giving the initial guess ``lam_p + P (x - x_p)``.
    x_p, lambda_p : ndarray, optional
        Steady state; default the origin.
    """

    def __init__(self, system: StableManifoldSystem, ustar: Callable, warm_start=None,
                 x_p=None, lambda_p=None, newton: NewtonOptions = NewtonOptions()):
        n = system.n_x
        self.system = system
        self.ustar = ustar
        self.P = np.eye(n) if warm_start is None else np.asarray(warm_start, float)
        self.x_p = np.zeros(n) if x_p is None else np.asarray(x_p, float)
        self.lambda_p = np.zeros(n) if lambda_p is None else np.asarray(lambda_p, float)
        self.newton = newton

    @property
    def n_x(self) -> int:
        return self.system.n_x

    def initial_guess(self, x) -> np.ndarray:
        return self.lambda_p + self.P @ (np.asarray(x, float) - self.x_p)

    def costate(self, x, lam0=None) -> CostateSolution:
        x = np.asarray(x, float)
        return _newton(self.system, x, self.initial_guess(x) if lam0 is None else lam0, self.newton)

    def control(self, x, lam0=None) -> np.ndarray:
        x = np.asarray(x, float)
        return np.atleast_1d(self.ustar(x, self.costate(x, lam0).lam))

    __call__ = control

    def as_feedback(self) -> Callable:
        """Feedback that warm-starts from the last solution (for trajectory following).

        Falls back to the steady-state warm start if continuation fails.
        """
        last = {"lam": None}

        def mu(x):
            x = np.asarray(x, float)
            try:
                sol = self.costate(x, last["lam"])
            except CostateSolveError:
                if last["lam"] is None:
                    raise
                sol = self.costate(x)
            last["lam"] = sol.lam
            return np.atleast_1d(self.ustar(x, sol.lam))

        return mu

    def candidate_roots(self, x, n_restarts: int = 8, spread: float = 0.5, seed: int = 0,
                        distinct_tol: float = 1e-6) -> list:
        """Roots reached from perturbed seeds; warns when more than one is found."""
        x = np.asarray(x, float)
        base = self.costate(x).lam
        roots = [base]
        rng = np.random.default_rng(seed)
        scale = spread * max(1.0, float(np.linalg.norm(base)))
        for _ in range(n_restarts):
            try:
                lam = self.costate(x, base + scale * rng.standard_normal(self.n_x)).lam
            except CostateSolveError:
                continue
            if all(np.linalg.norm(lam - r) > distinct_tol for r in roots):
                roots.append(lam)
        if len(roots) > 1:
            warnings.warn(f"{len(roots)} distinct costate roots at x={x}", MultipleRootWarning, stacklevel=2)
        return roots

    def costate_jacobian(self, x, h: float = 1e-5) -> np.ndarray:
        """Central finite-difference ``dLambda/dx``."""
        x = np.asarray(x, float)
        n = self.n_x
        D = np.zeros((n, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = h
            D[:, k] = (self.costate(x + e).lam - self.costate(x - e).lam) / (2 * h)
        return D


def solve_costate(law: FeedbackLaw, x, lam0=None) -> CostateSolution:
    return law.costate(x, lam0)


def feedback_eval(law: FeedbackLaw, x, lam0=None) -> np.ndarray:
    return law.control(x, lam0)


# grids and comparison --------------------------------------------------------------


@dataclass
class GridSolution:
    points: np.ndarray
    lam: np.ndarray
    u: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray
    failed: list = field(default_factory=list)

    def ok(self) -> np.ndarray:
        m = np.ones(len(self.points), bool)
        m[self.failed] = False
        return m

    def to_csv(self, path, header_comment: str = "") -> None:
        n = self.points.shape[1]
        m = self.u.shape[1]
        cols = ([f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
                + [f"lambda{i + 1}" for i in range(n)] + ["newton_iters", "residual"])
        with open(path, "w") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write(",".join(cols) + "\n")
            for k in range(len(self.points)):
                row = [*self.points[k], *self.u[k], *self.lam[k]]
                fh.write(",".join(repr(float(v)) for v in row) + f",{int(self.iterations[k])},"
                         f"{float(self.residual[k])!r}\n")


def solve_grid(law: FeedbackLaw, points) -> GridSolution:
    """Solve every node, nearest-to-steady-state first, warm-starting from the closest solved node."""
    pts = np.atleast_2d(np.asarray(points, float))
    n = law.n_x
    order = np.lexsort((np.arange(len(pts)), np.linalg.norm(pts - law.x_p, axis=1)))
    lam = np.full((len(pts), n), np.nan)
    iters = np.zeros(len(pts), int)
    res = np.full(len(pts), np.nan)
    solved: list = []
    failed = []
    for k in order:
        lam0 = None
        if solved:
            s = np.array(solved)
            lam0 = lam[s[np.argmin(np.linalg.norm(pts[s] - pts[k], axis=1))]]
        try:
            sol = law.costate(pts[k], lam0)
        except CostateSolveError:
            try:
                sol = law.costate(pts[k])
            except CostateSolveError as exc:
                log.warning("costate solve failed at %s: %s", pts[k], exc)
                failed.append(int(k))
                continue
        lam[k], iters[k], res[k] = sol.lam, sol.iterations, sol.residual
        solved.append(int(k))
    ustar = law.ustar
    u_list = []
    for k in range(len(pts)):
        if np.all(np.isfinite(lam[k])):
            u_list.append(np.atleast_1d(ustar(pts[k], lam[k])))
        else:
            u_list.append(None)
    m = next((len(u) for u in u_list if u is not None), 0)
    u = np.array([np.full(m, np.nan) if v is None else v for v in u_list]).reshape(len(pts), m)
    return GridSolution(pts, lam, u, iters, res, sorted(failed))


def uniform_grid(box: BoxDomain, per_dim: int) -> np.ndarray:
    axes = [np.linspace(c - h, c + h, per_dim) for c, h in zip(box.center, box.half_width)]
    return np.array(list(itertools.product(*axes)))


def _reference_callable(reference, n_x: int) -> Callable:
    if callable(reference) and not isinstance(reference, PolyExpr):
        return lambda X: np.asarray(reference(X), float).reshape(len(X), -1)
    polys = [reference] if isinstance(reference, PolyExpr) else list(reference)
    b = PolyBundle([p.embed_for_eval(x_vars(n_x)) for p in polys], x_vars(n_x))
    return lambda X: b(X).T


def compare_reference(law: FeedbackLaw, reference, x_box: BoxDomain, quad: QuadratureRule | None = None) -> dict:
    """Squared L2 error and max nodal error of ``mu`` against `reference` over the state box.

    `reference` is a PolyExpr (or list of them) in ``x1..xn``, or a callable
    mapping an ``(npts, n_x)`` array to controls.
    """
    quad = gauss_legendre_rule(x_box, 12) if quad is None else quad
    grid = solve_grid(law, quad.nodes)
    ref = _reference_callable(reference, law.n_x)(quad.nodes)
    ok = grid.ok()
    err = np.sum((grid.u - ref) ** 2, axis=1)
    valid = not grid.failed
    return {
        "l2sq_error": float(quad.integrate_values(np.where(ok, err, 0.0))) if valid else float("nan"),
        "max_error": float(np.sqrt(np.max(err[ok]))) if ok.any() else float("nan"),
        "failed_nodes": [list(map(float, grid.points[k])) for k in grid.failed],
        "valid": valid,
    }


def fit_polynomial_law(law: FeedbackLaw, x_box: BoxDomain, degree: int, nodes_per_dim: int | None = None) -> list:
    """Least-squares polynomial fit of each control component on Gauss nodes.

    Exact (to roundoff) when the law is itself a polynomial of at most `degree`.
    """
    n = law.n_x
    xv = x_vars(n)
    quad = gauss_legendre_rule(x_box, nodes_per_dim or degree + 2)
    grid = solve_grid(law, quad.nodes)
    if grid.failed:
        raise CostateSolveError(f"{len(grid.failed)} nodes failed during the fit")
    exps = [e for d in range(degree + 1) for e in itertools.product(range(d + 1), repeat=n) if sum(e) == d]
    V = np.stack([np.prod(quad.nodes ** np.array(e), axis=1) for e in exps], axis=1)
    sw = np.sqrt(quad.weights)[:, None]
    coef = np.linalg.lstsq(V * sw, grid.u * sw, rcond=None)[0]
    return [PolyExpr({e: float(c) for e, c in zip(exps, coef[:, k])}, xv) for k in range(grid.u.shape[1])]


# end-to-end ----------------------------------------------------------------------


@dataclass
class Synthesis:
    """Everything produced on the way from a model to a feedback law."""

    field: object
    ustar: object
    steady: object
    are: object
    galerkin: object
    eigs: list
    pairing: MirrorPairing
    system: StableManifoldSystem
    law: FeedbackLaw
    quad: QuadratureRule


def synthesize(model, basis: BasisSet, quad: QuadratureRule | None = None, *, tau: float | None = None,
               choose: Sequence[int] | None = None, pair_tol: float | None = None,
               newton: NewtonOptions = NewtonOptions(), field=None) -> Synthesis:
    """Galerkin spectrum, unstable-mode selection and ARE warm start for `model` on `basis`."""
    from .basis import default_nodes_per_dim
    from .model import minimize_hamiltonian_control, pontryagin_field
    from .sim import NotStabilizableError, find_steady_state, solve_are
    from .spectral import assemble_galerkin, eigendecompose

    ustar = minimize_hamiltonian_control(model)
    fld = pontryagin_field(model, ustar) if field is None else field
    if quad is None:
        need = max(fld.lift(p).max_var_degree() + p.max_var_degree() for p in basis.functions)
        quad = gauss_legendre_rule(basis.box, default_nodes_per_dim(basis.max_degree, fld.degree(), need))
    G = assemble_galerkin(fld, basis, quad)
    eigs = eigendecompose(G)
    pairing = mirror_pairs(eigs, pair_tol)
    system = select_unstable(eigs, basis, quad, model.n_x, tau, pairing, choose)
    steady = find_steady_state(model, fld, ustar)
    try:
        are = solve_are(steady.A, steady.B, steady.Q, steady.R, steady.S)
        P = are.P
    except NotStabilizableError as exc:
        log.warning("ARE warm start unavailable (%s); using identity", exc)
        are, P = None, np.eye(model.n_x)
    law = FeedbackLaw(system, ustar, P, steady.x_p, steady.lambda_p, newton)
    return Synthesis(fld, ustar, steady, are, G, eigs, pairing, system, law, quad)
