"""Optimal feedback synthesis from the Galerkin spectrum of the Pontryagin-Koopman generator."""

__version__ = "0.1.0"

from .basis import BoxDomain, QuadratureRule, gauss_legendre_rule, graded_index_set, legendre_basis  # noqa: E402
from .model import (OcpModel, PontryaginField, get_problem, minimize_hamiltonian_control,  # noqa: E402
                    pontryagin_field)
from .poly import PolyExpr  # noqa: E402
from .spectral import assemble_galerkin, eigendecompose, mirror_pairs  # noqa: E402
from .synthesis import FeedbackLaw, select_unstable, synthesize  # noqa: E402

__all__ = [
    "BoxDomain", "QuadratureRule", "gauss_legendre_rule", "graded_index_set", "legendre_basis",
    "OcpModel", "PontryaginField", "get_problem", "minimize_hamiltonian_control", "pontryagin_field",
    "PolyExpr", "assemble_galerkin", "eigendecompose", "mirror_pairs",
    "FeedbackLaw", "select_unstable", "synthesize",
]
