"""Pipeline configuration: strict JSON schema, loading and object construction."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .basis import BasisSet, BoxDomain, QuadratureRule, gauss_legendre_rule, graded_index_set, legendre_basis
from .model import ModelError, OcpModel, PontryaginField, get_problem, lqr_model, y_vars
from .poly import from_spec


class ConfigError(ValueError):
    pass


_POLY = {
    "type": "object",
    "additionalProperties": False,
    "required": ["vars", "terms"],
    "properties": {
        "vars": {"type": "array", "items": {"type": "string"}},
        "terms": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["exps", "coeff"],
                "properties": {
                    "exps": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                    "coeff": {"type": "number"},
                },
            },
        },
    },
}

_MATRIX = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_VEC_OR_NUM = {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}}]}
_POS_VEC_OR_NUM = {"oneOf": [{"type": "number", "exclusiveMinimum": 0},
                             {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}}]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["problem"],
    "properties": {
        "problem": {
            "oneOf": [
                {"type": "string"},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["n_x", "n_u", "f", "l"],
                    "properties": {
                        "name": {"type": "string"},
                        "n_x": {"type": "integer", "minimum": 1},
                        "n_u": {"type": "integer", "minimum": 0},
                        "f": {"type": "array", "items": _POLY},
                        "l": _POLY,
                        "l_star": {"type": "number"},
                    },
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["lqr"],
                    "properties": {
                        "lqr": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["A", "B", "Q", "R"],
                            "properties": {k: _MATRIX for k in ("A", "B", "Q", "R")},
                        }
                    },
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["field"],
                    "properties": {
                        "field": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["n_x", "F"],
                            "properties": {
                                "n_x": {"type": "integer", "minimum": 1},
                                "F": {"type": "array", "items": _POLY},
                            },
                        }
                    },
                },
            ]
        },
        "box": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"center": _VEC_OR_NUM, "half_width": _POS_VEC_OR_NUM},
        },
        "basis": {
            "type": "object",
            "additionalProperties": False,
            "oneOf": [{"required": ["count"]}, {"required": ["indices"]}],
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "indices": {"type": "array", "minItems": 1,
                            "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
            },
        },
        "quadrature": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"nodes_per_dim": {"type": "integer", "minimum": 1}},
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eigen": {"type": "number", "exclusiveMinimum": 0},
                "pairing": {"type": "number", "exclusiveMinimum": 0},
                "newton": {"type": "number", "exclusiveMinimum": 0},
                "tau": {"type": "number", "minimum": 0},
            },
        },
        "newton": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_iter": {"type": "integer", "minimum": 1},
                "max_halvings": {"type": "integer", "minimum": 0},
            },
        },
        "select": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "per_dim": {"type": "integer", "minimum": 1},
                "center": _VEC_OR_NUM,
                "half_width": _POS_VEC_OR_NUM,
                "fit_degree": {"type": "integer", "minimum": 0},
                "restarts": {"type": "integer", "minimum": 0},
            },
        },
        "reference": {"type": "array", "items": _POLY},
        "structure": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "samples": {"type": "integer", "minimum": 1},
                "monodromy_t": {"type": "number", "exclusiveMinimum": 0},
                "monodromy_points": {"type": "integer", "minimum": 1},
                "adjoint_pairs": {"type": "integer", "minimum": 0},
            },
        },
        "simulate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "initial_states": _MATRIX,
                "t_end": {"type": "number", "exclusiveMinimum": 0},
                "samples": {"type": "integer", "minimum": 2},
            },
        },
        "output": {"type": "string"},
    },
}

DEFAULTS = {
    "box": {"center": 0.0, "half_width": 0.5},
    "basis": {"count": 15},
    "tolerances": {},
    "newton": {},
    "grid": {"per_dim": 21, "center": 0.0, "half_width": 0.5, "fit_degree": 2, "restarts": 0},
    "structure": {"samples": 100, "monodromy_t": 1.0, "monodromy_points": 5, "adjoint_pairs": 20},
    "simulate": {"initial_states": [[1, 1], [1, -1], [-1, 1], [-1, -1]], "t_end": 20.0, "samples": 201},
    "output": "out",
}


def validate(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _vec(v, dim: int) -> list:
    return [float(v)] * dim if np.isscalar(v) else [float(a) for a in v]


@dataclass
class PipelineConfig:
    raw: dict

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            cfg = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(cfg)

    @classmethod
    def from_dict(cls, cfg: dict) -> "PipelineConfig":
        validate(cfg)
        return cls(cfg)

    def get(self, section: str) -> dict | object:
        d = DEFAULTS.get(section)
        v = self.raw.get(section)
        if isinstance(d, dict):
            return {**d, **(v or {})}
        return d if v is None else v

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    # construction -----------------------------------------------------------------

    def model(self) -> OcpModel | None:
        """The optimal control problem, or None for a bare-field config."""
        p = self.raw["problem"]
        try:
            if isinstance(p, str):
                return get_problem(p)
            if "lqr" in p:
                q = p["lqr"]
                return lqr_model(q["A"], q["B"], q["Q"], q["R"])
            if "field" in p:
                return None
            return OcpModel(p["n_x"], p["n_u"], tuple(from_spec(s) for s in p["f"]), from_spec(p["l"]),
                            l_star=p.get("l_star", 0.0), name=p.get("name", "custom"))
        except (ModelError, KeyError, ValueError) as exc:
            raise ConfigError(f"problem: {exc}") from None

    def n_x(self) -> int:
        p = self.raw["problem"]
        if isinstance(p, dict) and "field" in p:
            return p["field"]["n_x"]
        return self.model().n_x

    def bare_field(self, verify: bool = False) -> PontryaginField | None:
        p = self.raw["problem"]
        if isinstance(p, dict) and "field" in p:
            f = p["field"]
            try:
                return PontryaginField.from_components([from_spec(s) for s in f["F"]], f["n_x"], verify=verify)
            except ModelError as exc:
                raise ConfigError(f"problem.field: {exc}") from None
        return None

    def box(self) -> BoxDomain:
        b = self.get("box")
        d = 2 * self.n_x()
        try:
            return BoxDomain(_vec(b["center"], d), _vec(b["half_width"], d))
        except ValueError as exc:
            raise ConfigError(f"box: {exc}") from None

    def basis(self) -> BasisSet:
        b = self.raw.get("basis") or DEFAULTS["basis"]
        idx = b["indices"] if "indices" in b else graded_index_set(2 * self.n_x(), b["count"])
        try:
            return legendre_basis(self.box(), idx, y_vars(self.n_x()))
        except ValueError as exc:
            raise ConfigError(f"basis: {exc}") from None

    def quadrature(self) -> QuadratureRule | None:
        q = self.raw.get("quadrature") or {}
        if "nodes_per_dim" not in q:
            return None
        return gauss_legendre_rule(self.box(), q["nodes_per_dim"])

    def state_box(self) -> BoxDomain:
        g = self.get("grid")
        n = self.n_x()
        try:
            return BoxDomain(_vec(g["center"], n), _vec(g["half_width"], n))
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from None

    def reference(self):
        r = self.raw.get("reference")
        return None if r is None else [from_spec(s) for s in r]
