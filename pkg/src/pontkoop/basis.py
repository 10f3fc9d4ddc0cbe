"""Orthonormal tensor Legendre bases and Gauss-Legendre rules on a box."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.polynomial import legendre as npleg

from .poly import PolyBundle, PolyExpr


class QuadratureOrderError(ValueError):
    """A rule is not exact for the integrand it was asked to integrate."""


@dataclass(frozen=True)
class BoxDomain:
    center: tuple
    half_width: tuple

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        h = tuple(float(v) for v in self.half_width)
        if len(c) != len(h):
            raise ValueError("center and half_width differ in length")
        if any(v <= 0 for v in h):
            raise ValueError(f"half widths must be positive, got {h}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_width", h)

    @classmethod
    def cube(cls, dim: int, half_width: float = 0.5, center: float = 0.0) -> "BoxDomain":
        return cls((center,) * dim, (half_width,) * dim)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def volume(self) -> float:
        return float(np.prod([2 * h for h in self.half_width]))

    def project(self, axes: Sequence[int]) -> "BoxDomain":
        return BoxDomain([self.center[i] for i in axes], [self.half_width[i] for i in axes])

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        c = np.array(self.center)
        h = np.array(self.half_width)
        return np.all(np.abs(pts - c) <= h * (1 + 1e-12), axis=1)


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss-Legendre rule; exact when every variable degree is ``<= exact_degree``."""

    nodes: np.ndarray
    weights: np.ndarray
    exact_degree: int
    box: BoxDomain

    def integrate_values(self, values) -> np.ndarray:
        """Contract sampled values (last axis = nodes) with the weights."""
        return np.asarray(values) @ self.weights

    def integrate(self, p: PolyExpr, vars: Sequence[str]) -> float | complex:
        self.require(p.embed_for_eval(vars).max_var_degree(), "integrand")
        return self.integrate_values(PolyBundle([p], vars)(self.nodes)[0])

    def require(self, var_degree: int, what: str = "integrand") -> None:
        if var_degree > self.exact_degree:
            raise QuadratureOrderError(
                f"{what} has per-variable degree {var_degree} but the rule is exact only "
                f"through {self.exact_degree}")


def graded_index_set(dim: int, count: int) -> list:
    """First `count` multi-indices in graded order, ``(1,0,..)`` before ``(0,1,..)``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    out: list = []
    d = 0
    while len(out) < count:
        level = [a for a in itertools.product(range(d + 1), repeat=dim) if sum(a) == d]
        out.extend(sorted(level, reverse=True))
        d += 1
    return out[:count]


def full_degree_count(dim: int, degree: int) -> int:
    return math.comb(dim + degree, degree)


@dataclass(frozen=True)
class BasisSet:
    box: BoxDomain
    indices: tuple
    functions: tuple
    vars: tuple

    @property
    def degrees(self) -> tuple:
        return tuple(sum(a) for a in self.indices)

    @property
    def max_degree(self) -> int:
        return max(self.degrees)

    def __len__(self):
        return len(self.functions)

    def evaluate(self, pts) -> np.ndarray:
        """Basis values, shape ``(N, npts)``."""
        return PolyBundle(self.functions, self.vars)(np.atleast_2d(pts))

    def combine(self, coeffs) -> PolyExpr:
        """``sum_i coeffs[i] * phi_i``; complex coefficients give a complex polynomial."""
        out = PolyExpr.zero(self.vars)
        for a, phi in zip(coeffs, self.functions):
            a = complex(a) if np.iscomplexobj(a) else float(a)
            if a != 0:
                out = out + phi * a
        return out


def _legendre_1d(n: int, var: str, center: float, half: float, vars: Sequence[str]) -> PolyExpr:
    # orthonormal on [c-h, c+h]: sqrt((2n+1)/(2h)) P_n((z-c)/h)
    mono = npleg.leg2poly([0] * n + [1])
    t = (PolyExpr.var(var, vars) - center) / half
    out = PolyExpr.zero(vars)
    tp = PolyExpr.const(1.0, vars)
    for k, c in enumerate(mono):
        if c:
            out = out + tp * float(c)
        tp = tp * t
    return out * math.sqrt((2 * n + 1) / (2 * half))


def legendre_basis(box: BoxDomain, indices: Sequence[Sequence[int]], vars: Sequence[str]) -> BasisSet:
    """Products of orthonormal Legendre polynomials, one factor per box axis."""
    indices = tuple(tuple(int(e) for e in a) for a in indices)
    vars = tuple(vars)
    if len(set(indices)) != len(indices):
        raise ValueError("basis indices must be distinct")
    if any(len(a) != box.dim for a in indices) or len(vars) != box.dim:
        raise ValueError("index length, variable count and box dimension must agree")
    cache: dict = {}
    funcs = []
    for a in indices:
        phi = PolyExpr.const(1.0, vars)
        for k, n in enumerate(a):
            if (k, n) not in cache:
                cache[(k, n)] = _legendre_1d(n, vars[k], box.center[k], box.half_width[k], vars)
            phi = phi * cache[(k, n)]
        funcs.append(phi)
    return BasisSet(box, indices, tuple(funcs), vars)


def gauss_legendre_rule(box: BoxDomain, nodes_per_dim: int) -> QuadratureRule:
    if nodes_per_dim < 1:
        raise ValueError("nodes_per_dim must be >= 1")
    t, w = npleg.leggauss(nodes_per_dim)
    axes = [c + h * t for c, h in zip(box.center, box.half_width)]
    wts = [h * w for h in box.half_width]
    nodes = np.array(list(itertools.product(*axes)))
    weights = np.array([np.prod(c) for c in itertools.product(*wts)])
    return QuadratureRule(nodes, weights, 2 * nodes_per_dim - 1, box)


def default_nodes_per_dim(basis_degree: int, field_degree: int, need_var_degree: int | None = None) -> int:
    """Default order, bumped if a measured integrand degree needs more."""
    m = math.ceil((basis_degree + field_degree + 1) / 2) + 1
    if need_var_degree is not None:
        m = max(m, math.ceil((need_var_degree + 1) / 2))
    return m
