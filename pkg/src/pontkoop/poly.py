"""Sparse multivariate polynomials over named variables.

A :class:`PolyExpr` stores a map from exponent tuples to coefficients over an
ordered tuple of variable names.  Everything downstream (Hamiltonian, the
lifted Pontryagin field, Legendre bases, eigenfunctions) is built from these
objects, so derivatives are exact and quadrature exactness can be checked by
degree bookkeeping.

Coefficients are normally ``float`` or ``complex``; ``fractions.Fraction``
also works for the arithmetic (not for evaluation through numpy).
"""

from __future__ import annotations

import numbers
from typing import Iterable, Mapping, Sequence

import numpy as np

#: relative threshold below which a coefficient is treated as cancelled
DROP_TOL = 1e-14


class UnknownVariableError(KeyError):
    pass


def _clean(terms: Mapping[tuple, object]) -> dict:
    nz = {k: c for k, c in terms.items() if c != 0}
    if not nz:
        return {}
    big = max(abs(c) for c in nz.values())
    cut = DROP_TOL * big
    kept = {k: c for k, c in nz.items() if abs(c) > cut}
    # graded order, then lexicographically descending (x1 before x2)
    return dict(sorted(kept.items(), key=lambda kv: (sum(kv[0]), tuple(-e for e in kv[0]))))


class PolyExpr:
    """Immutable sparse polynomial.

    Parameters
    ----------
    terms : mapping
        ``{exponents: coefficient}`` with exponent tuples aligned to `vars`.
    vars : sequence of str
        Ordered variable names.
    """

    __slots__ = ("vars", "terms", "_compiled")
    __array_ufunc__ = None  # numpy scalars defer to our operators

    def __init__(self, terms: Mapping[tuple, object] | None = None, vars: Sequence[str] = ()):
        vars = tuple(vars)
        if len(set(vars)) != len(vars):
            raise ValueError(f"duplicate variable names in {vars}")
        terms = dict(terms or {})
        for k in terms:
            if len(k) != len(vars) or any((not isinstance(e, (int, np.integer))) or e < 0 for e in k):
                raise ValueError(f"bad exponent tuple {k} for variables {vars}")
        self.vars = vars
        self.terms = _clean({tuple(int(e) for e in k): c for k, c in terms.items()})
        self._compiled = None

    # construction helpers -------------------------------------------------

    @classmethod
    def const(cls, c, vars: Sequence[str] = ()) -> "PolyExpr":
        return cls({(0,) * len(vars): c}, vars)

    @classmethod
    def var(cls, name: str, vars: Sequence[str] | None = None) -> "PolyExpr":
        vars = tuple(vars) if vars is not None else (name,)
        if name not in vars:
            raise UnknownVariableError(name)
        exps = tuple(1 if v == name else 0 for v in vars)
        return cls({exps: 1.0}, vars)

    @classmethod
    def zero(cls, vars: Sequence[str] = ()) -> "PolyExpr":
        return cls({}, vars)

    # variable bookkeeping -------------------------------------------------

    def embed(self, vars: Sequence[str]) -> "PolyExpr":
        """Re-express over `vars`, which must contain every variable actually used."""
        vars = tuple(vars)
        if vars == self.vars:
            return self
        pos = {v: i for i, v in enumerate(vars)}
        new = {}
        for k, c in self.terms.items():
            e = [0] * len(vars)
            for v, p in zip(self.vars, k):
                if p:
                    if v not in pos:
                        raise UnknownVariableError(v)
                    e[pos[v]] = p
            new[tuple(e)] = c
        return PolyExpr(new, vars)

    def used_vars(self) -> tuple:
        return tuple(v for i, v in enumerate(self.vars) if any(k[i] for k in self.terms))

    def _align(self, other):
        if isinstance(other, PolyExpr):
            if other.vars == self.vars:
                return self, other
            vars = self.vars + tuple(v for v in other.vars if v not in self.vars)
            return self.embed(vars), other.embed(vars)
        if isinstance(other, numbers.Number):
            return self, PolyExpr.const(other, self.vars)
        return NotImplemented, NotImplemented

    # arithmetic -------------------------------------------------------------

    def __add__(self, other):
        a, b = self._align(other)
        if a is NotImplemented:
            return NotImplemented
        out = dict(a.terms)
        for k, c in b.terms.items():
            out[k] = out.get(k, 0) + c
        return PolyExpr(out, a.vars)

    __radd__ = __add__

    def __neg__(self):
        return PolyExpr({k: -c for k, c in self.terms.items()}, self.vars)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, numbers.Number):
            return PolyExpr({k: c * other for k, c in self.terms.items()}, self.vars)
        a, b = self._align(other)
        if a is NotImplemented:
            return NotImplemented
        out: dict = {}
        for ka, ca in a.terms.items():
            for kb, cb in b.terms.items():
                k = tuple(x + y for x, y in zip(ka, kb))
                out[k] = out.get(k, 0) + ca * cb
        return PolyExpr(out, a.vars)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, numbers.Number):
            return NotImplemented
        return PolyExpr({k: c / other for k, c in self.terms.items()}, self.vars)

    def __pow__(self, n: int):
        if not isinstance(n, (int, np.integer)) or n < 0:
            raise ValueError("only non-negative integer powers")
        out = PolyExpr.const(1.0, self.vars)
        base = self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    # calculus ---------------------------------------------------------------

    def diff(self, var: str) -> "PolyExpr":
        """Exact partial derivative with respect to `var`."""
        if var not in self.vars:
            raise UnknownVariableError(var)
        i = self.vars.index(var)
        out = {}
        for k, c in self.terms.items():
            if k[i]:
                e = list(k)
                e[i] -= 1
                out[tuple(e)] = c * k[i]
        return PolyExpr(out, self.vars)

    def gradient(self, vars: Sequence[str]) -> list:
        return [self.diff(v) if v in self.vars else PolyExpr.zero(self.vars) for v in vars]

    def subs(self, mapping: Mapping[str, object]) -> "PolyExpr":
        """Substitute polynomials (or numbers) for variables.

        The result lives over the surviving variables of `self` followed by any
        new variables introduced by the substituted expressions.
        """
        for v in mapping:
            if v not in self.vars:
                raise UnknownVariableError(v)
        keep = tuple(v for v in self.vars if v not in mapping)
        extra: list = []
        for val in mapping.values():
            if isinstance(val, PolyExpr):
                extra += [v for v in val.vars if v not in keep and v not in extra]
        vars = keep + tuple(extra)
        repl = {}
        for v, val in mapping.items():
            repl[v] = val.embed(vars) if isinstance(val, PolyExpr) else PolyExpr.const(val, vars)
        cache: dict = {}

        def power(v, p):
            if (v, p) not in cache:
                cache[(v, p)] = repl[v] ** p
            return cache[(v, p)]

        out = PolyExpr.zero(vars)
        pos = {v: i for i, v in enumerate(vars)}
        for k, c in self.terms.items():
            e = [0] * len(vars)
            term = None
            for v, p in zip(self.vars, k):
                if not p:
                    continue
                if v in repl:
                    f = power(v, p)
                    term = f if term is None else term * f
                else:
                    e[pos[v]] = p
            mono = PolyExpr({tuple(e): c}, vars)
            out = out + (mono if term is None else mono * term)
        return out

    # inspection -------------------------------------------------------------

    def degree(self) -> int:
        return max((sum(k) for k in self.terms), default=0)

    def degree_in(self, var: str) -> int:
        if var not in self.vars:
            raise UnknownVariableError(var)
        i = self.vars.index(var)
        return max((k[i] for k in self.terms), default=0)

    def max_var_degree(self) -> int:
        """Largest exponent of any single variable (what a tensor rule must integrate)."""
        return max((max(k, default=0) for k in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def is_constant(self) -> bool:
        return all(sum(k) == 0 for k in self.terms)

    def constant_value(self):
        return self.terms.get((0,) * len(self.vars), 0.0)

    def coeff(self, **powers) -> object:
        """Coefficient of the monomial given as ``var=power`` keywords."""
        for v in powers:
            if v not in self.vars:
                raise UnknownVariableError(v)
        k = tuple(powers.get(v, 0) for v in self.vars)
        return self.terms.get(k, 0.0)

    def real(self) -> "PolyExpr":
        return PolyExpr({k: np.real(c) for k, c in self.terms.items()}, self.vars)

    def imag(self) -> "PolyExpr":
        return PolyExpr({k: np.imag(c) for k, c in self.terms.items()}, self.vars)

    def is_complex(self) -> bool:
        return any(isinstance(c, (complex, np.complexfloating)) for c in self.terms.values())

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def allclose(self, other: "PolyExpr", atol: float = 1e-12) -> bool:
        return (self - other).max_abs_coeff() <= atol

    # evaluation -------------------------------------------------------------

    def _compile(self):
        if self._compiled is None:
            keys = list(self.terms)
            E = np.array(keys, dtype=np.int64).reshape(len(keys), len(self.vars))
            c = np.array([complex(v) if isinstance(v, complex) else v for v in self.terms.values()])
            if c.dtype == object:
                c = c.astype(float)
            self._compiled = (E, c)
        return self._compiled

    def __call__(self, points, vars: Sequence[str] | None = None):
        """Evaluate at ``points`` of shape ``(..., nvars)``.

        `vars` names the columns of `points`; it defaults to ``self.vars`` and
        may be any superset of the variables the polynomial uses.
        """
        pts = np.asarray(points)
        if vars is not None and tuple(vars) != self.vars:
            return self.embed_for_eval(vars)(pts)
        if pts.shape[-1] != len(self.vars):
            raise ValueError(f"points have {pts.shape[-1]} columns, expected {len(self.vars)}")
        E, c = self._compile()
        if E.shape[0] == 0:
            return np.zeros(pts.shape[:-1])
        mono = np.prod(pts[..., None, :] ** E, axis=-1)
        return mono @ c

    def embed_for_eval(self, vars: Sequence[str]) -> "PolyExpr":
        used = self.used_vars()
        missing = [v for v in used if v not in vars]
        if missing:
            raise UnknownVariableError(missing[0])
        return PolyExpr(self.restrict(vars).terms, tuple(vars))

    def restrict(self, vars: Sequence[str]) -> "PolyExpr":
        """Drop unused variables and embed into `vars`."""
        used = self.used_vars()
        idx = [self.vars.index(v) for v in used]
        small = PolyExpr({tuple(k[i] for i in idx): c for k, c in self.terms.items()}, used)
        return small.embed(vars)

    # display ----------------------------------------------------------------

    def __repr__(self):
        if not self.terms:
            return "0"
        parts = []
        for k, c in self.terms.items():
            mono = "*".join(v if p == 1 else f"{v}^{p}" for v, p in zip(self.vars, k) if p)
            parts.append(f"{c:g}" + (f"*{mono}" if mono else "") if not isinstance(c, complex)
                         else f"({c:g})" + (f"*{mono}" if mono else ""))
        return " + ".join(parts)

    def __eq__(self, other):
        if not isinstance(other, PolyExpr):
            return NotImplemented
        a, b = self._align(other)
        return a.terms == b.terms

    def __hash__(self):
        return hash((self.used_vars(), tuple(self.restrict(self.used_vars()).terms.items())))


class PolyBundle:
    """Several polynomials compiled for fast joint evaluation over shared variables.

    Monomials are computed once over the union of exponent tuples, so
    evaluating ``F`` and ``F_y`` in integrator loops stays cheap.
    """

    def __init__(self, polys: Sequence[PolyExpr], vars: Sequence[str]):
        self.vars = tuple(vars)
        self.polys = [p.embed_for_eval(self.vars) for p in polys]
        keys = sorted({k for p in self.polys for k in p.terms})
        col = {k: j for j, k in enumerate(keys)}
        cplx = any(p.is_complex() for p in self.polys)
        C = np.zeros((len(self.polys), len(keys)), dtype=complex if cplx else float)
        for i, p in enumerate(self.polys):
            for k, c in p.terms.items():
                C[i, col[k]] = c
        self.C = C
        self.E = np.array(keys, dtype=np.int64).reshape(len(keys), len(self.vars))

    def __len__(self):
        return len(self.polys)

    def __call__(self, points) -> np.ndarray:
        """Values with shape ``(len(self), npts)``, or ``(len(self),)`` for one point."""
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if self.E.shape[0] == 0:
            out = np.zeros((len(self.polys), pts.shape[0]), dtype=self.C.dtype)
        else:
            out = self.C @ _monomials(pts, self.E).T
        return out[:, 0] if single else out


def eval_many(polys: Sequence[PolyExpr], points, vars: Sequence[str]) -> np.ndarray:
    """Evaluate several polynomials at shared points; returns ``(len(polys), npts)``."""
    return PolyBundle(polys, vars)(np.atleast_2d(np.asarray(points, dtype=float)))


def _monomials(pts: np.ndarray, E: np.ndarray) -> np.ndarray:
    # powers table avoids repeated ** on large arrays
    maxp = int(E.max(initial=0))
    pw = np.ones((maxp + 1,) + pts.shape)
    for p in range(1, maxp + 1):
        pw[p] = pw[p - 1] * pts
    out = np.ones((pts.shape[0], E.shape[0]))
    for d in range(pts.shape[1]):
        out *= pw[E[:, d], :, d].T
    return out


def integrate_box(p: PolyExpr, center: Sequence[float], half_width: Sequence[float],
                  vars: Sequence[str] | None = None) -> float:
    """Exact integral of `p` over the box ``center ± half_width`` (closed-form monomials)."""
    vars = tuple(vars) if vars is not None else p.vars
    q = p.embed_for_eval(vars)
    lo = [c - h for c, h in zip(center, half_width)]
    hi = [c + h for c, h in zip(center, half_width)]
    total = 0
    for k, c in q.terms.items():
        val = c
        for e, a, b in zip(k, lo, hi):
            val = val * (b ** (e + 1) - a ** (e + 1)) / (e + 1)
        total += val
    return total


def from_spec(spec: Mapping) -> PolyExpr:
    """Build a polynomial from ``{"vars": [...], "terms": [{"exps": [...], "coeff": c}]}``."""
    vars = tuple(spec["vars"])
    terms: dict = {}
    for t in spec["terms"]:
        k = tuple(t["exps"])
        c = t["coeff"]
        c = complex(c[0], c[1]) if isinstance(c, (list, tuple)) else c
        terms[k] = terms.get(k, 0) + c
    return PolyExpr(terms, vars)


def to_spec(p: PolyExpr) -> dict:
    def enc(c):
        if isinstance(c, complex) or np.iscomplexobj(c):
            return [float(np.real(c)), float(np.imag(c))]
        return float(c)
    return {"vars": list(p.vars), "terms": [{"exps": list(k), "coeff": enc(c)} for k, c in p.terms.items()]}


def variables(names: Iterable[str], vars: Sequence[str]) -> list:
    return [PolyExpr.var(n, vars) for n in names]
