"""Config schemas, validation, and builders for the experiment runner.

Configs are plain JSON.  Validation is strict: unknown keys are rejected
with the dotted path of the offending entry, which the CLI turns into exit
code 2.  ``lmalab schema <pipeline>`` prints the schema for a pipeline.
"""

from __future__ import annotations

import numpy as np

from .errors import SchemaError
from .geometry import ConvexDomain, ScalarField

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer", "minimum": 1}
_STR = {"type": "string"}

_DOMAIN = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["ball", "polygon", "interval"]},
        "center": {"type": "array", "items": _NUM},
        "radius": _POS,
        "vertices": {"type": "array", "items": {"type": "array", "items": _NUM}},
        "a": _NUM,
        "b": _NUM,
    },
    "required": ["kind"],
}

_FIELD = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["constant", "radial", "expression"]},
        "value": _NUM,
        "expr": _STR,
    },
    "required": ["kind"],
}

_GRID = {"type": "object", "properties": {"h": _POS}, "required": ["h"]}

_MA_SOLVER = {
    "type": "object",
    "properties": {
        "tol_ma": _POS,
        "tol_convex": _POS,
        "stencil_width": {"type": "integer", "minimum": 1, "maximum": 3},
        "max_newton": _INT,
    },
}

_LCP_SOLVER = {
    "type": "object",
    "properties": {
        "method": {"enum": ["psor", "activeset", "perron"]},
        "tol_lcp": _POS,
        "omega": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
        "max_sweeps": _INT,
        "max_outer": _INT,
    },
}

_W_SOURCE = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["identity", "solve", "analytic", "file"]},
        "f": _FIELD,
        "expr": _STR,
        "path": _STR,
        "bounds": {"type": "array", "items": _POS},
    },
    "required": ["kind"],
}

_POINT = {"type": "array", "items": _NUM}

_ITERATION = {
    "type": "object",
    "properties": {
        "h0": _POS,
        "theta": _POS,
        "eps": {"type": "number", "minimum": 0},
        "k_max": _INT,
        "C_cfg": _POS,
        "mu0": _POS,
    },
    "required": ["h0"],
}

_COMMON = {
    "pipeline": _STR,
    "seed": {"type": "integer", "minimum": 0},
    "output_dir": _STR,
}

SCHEMAS = {
    "solve-ma": {
        "type": "object",
        "properties": {**_COMMON, "domain": _DOMAIN, "f": _FIELD, "grid": _GRID,
                       "solver": _MA_SOLVER},
        "required": ["domain", "f", "grid"],
    },
    "solve-obstacle": {
        "type": "object",
        "properties": {**_COMMON, "domain": _DOMAIN, "grid": _GRID,
                       "w_source": _W_SOURCE, "obstacle": _FIELD,
                       "solver": _LCP_SOLVER},
        "required": ["domain", "grid", "w_source", "obstacle"],
    },
    "probe-sections": {
        "type": "object",
        "properties": {**_COMMON, "domain": _DOMAIN, "grid": _GRID,
                       "potential": _W_SOURCE, "x0": _POINT,
                       "heights": {"type": "array", "items": _POS}},
        "required": ["domain", "grid", "potential", "x0", "heights"],
    },
    "probe-harnack": {
        "type": "object",
        "properties": {**_COMMON, "domain": _DOMAIN, "grid": _GRID,
                       "potential": _W_SOURCE, "x0": _POINT, "h": _POS,
                       "draws": _INT},
        "required": ["domain", "grid", "potential", "x0", "h"],
    },
    "probe-normalization": {
        "type": "object",
        "properties": {**_COMMON, "domain": _DOMAIN, "grid": _GRID,
                       "potential": _W_SOURCE, "x0": _POINT,
                       "iteration": _ITERATION},
        "required": ["domain", "grid", "potential", "x0", "iteration"],
    },
    "probe-holder": {
        "type": "object",
        "properties": {**_COMMON, "domain": _DOMAIN, "grid": _GRID,
                       "w_source": _W_SOURCE, "obstacle": _FIELD,
                       "solver": _LCP_SOLVER,
                       "radii": {"type": "array", "items": _POS},
                       "gamma": _POS, "theta": _POS,
                       "growth_heights": {"type": "array", "items": _POS},
                       "pairs": _INT, "pair_band": _POS},
        "required": ["domain", "grid", "w_source", "obstacle"],
    },
    "full-pipeline": {
        "type": "object",
        "properties": {**_COMMON, "domain": _DOMAIN, "grid": _GRID,
                       "f": _FIELD, "obstacle": _FIELD,
                       "ma_solver": _MA_SOLVER, "solver": _LCP_SOLVER,
                       "heights": {"type": "array", "items": _POS},
                       "radii": {"type": "array", "items": _POS},
                       "gamma": _POS},
        "required": ["domain", "grid", "f", "obstacle"],
    },
}


def validate(config, schema, path=""):
    """Strict structural validation; raises SchemaError with the field path."""
    t = schema.get("type")
    here = path or "<root>"
    if "enum" in schema:
        if config not in schema["enum"]:
            raise SchemaError(here, f"expected one of {schema['enum']}, got {config!r}")
        return
    if t == "object":
        if not isinstance(config, dict):
            raise SchemaError(here, f"expected object, got {type(config).__name__}")
        props = schema.get("properties", {})
        for key in config:
            child = f"{path}.{key}" if path else key
            if key not in props:
                raise SchemaError(child, "unknown key")
            validate(config[key], props[key], child)
        for key in schema.get("required", []):
            if key not in config:
                raise SchemaError(f"{path}.{key}" if path else key, "missing required key")
        return
    if t == "array":
        if not isinstance(config, list):
            raise SchemaError(here, f"expected array, got {type(config).__name__}")
        item_schema = schema.get("items")
        if item_schema:
            for k, item in enumerate(config):
                validate(item, item_schema, f"{path}[{k}]")
        return
    if t == "number":
        if isinstance(config, bool) or not isinstance(config, (int, float)):
            raise SchemaError(here, f"expected number, got {type(config).__name__}")
    elif t == "integer":
        if isinstance(config, bool) or not isinstance(config, int):
            raise SchemaError(here, f"expected integer, got {type(config).__name__}")
    elif t == "string":
        if not isinstance(config, str):
            raise SchemaError(here, f"expected string, got {type(config).__name__}")
    else:
        raise SchemaError(here, f"unhandled schema type {t!r}")
    for bound, cmp in (("minimum", lambda v, b: v >= b),
                       ("exclusiveMinimum", lambda v, b: v > b),
                       ("maximum", lambda v, b: v <= b),
                       ("exclusiveMaximum", lambda v, b: v < b)):
        if bound in schema and not cmp(config, schema[bound]):
            raise SchemaError(here, f"violates {bound} = {schema[bound]}")


def validate_pipeline_config(pipeline, config):
    if pipeline not in SCHEMAS:
        raise SchemaError("pipeline", f"unknown pipeline {pipeline!r}")
    if "pipeline" in config and config["pipeline"] != pipeline:
        raise SchemaError("pipeline", f"config names {config['pipeline']!r}, "
                                      f"running {pipeline!r}")
    validate(config, SCHEMAS[pipeline])


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

_EXPR_NAMES = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "abs": np.abs, "minimum": np.minimum, "maximum": np.maximum,
    "pi": np.pi, "e": np.e, "hypot": np.hypot, "where": np.where,
}


def eval_expression(expr, **variables):
    """Evaluate an arithmetic expression with numpy names only."""
    code = compile(expr, "<config expression>", "eval")
    for name in code.co_names:
        if name not in _EXPR_NAMES and name not in variables:
            raise SchemaError("expr", f"name {name!r} not allowed in expressions")
    return eval(code, {"__builtins__": {}}, {**_EXPR_NAMES, **variables})


def domain_from_config(cfg) -> ConvexDomain:
    kind = cfg["kind"]
    if kind == "ball":
        return ConvexDomain.ball(cfg["center"], cfg["radius"])
    if kind == "interval":
        return ConvexDomain.interval(cfg["a"], cfg["b"])
    return ConvexDomain.polygon(cfg["vertices"])


def field_from_config(cfg, grid) -> ScalarField:
    kind = cfg["kind"]
    if kind == "constant":
        return ScalarField.constant(grid, cfg["value"])
    if kind == "radial":
        if grid.ndim == 1:
            return ScalarField.from_function(
                grid, lambda x: eval_expression(cfg["expr"], r=np.abs(x)) * np.ones_like(x))
        return ScalarField.from_function(
            grid, lambda x, y: eval_expression(cfg["expr"], r=np.hypot(x, y))
            * np.ones_like(x))
    if grid.ndim == 1:
        return ScalarField.from_function(
            grid, lambda x: eval_expression(cfg["expr"], x=x, r=np.abs(x))
            * np.ones_like(x))
    return ScalarField.from_function(
        grid, lambda x, y: eval_expression(cfg["expr"], x=x, y=y, r=np.hypot(x, y))
        * np.ones_like(x))
