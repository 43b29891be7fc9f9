"""Study configuration: a single JSON document.

Schema (all coefficient values are expression strings over x, eps and
the params table; see expr.py for the grammar):

    {
      "params": {"c": 1.0},
      "coefficients": {
        "b_eps":       {"expr": "(c/(2*eps)) * indicator(-eps, eps, x)",
                         "breakpoints": ["-eps", "eps"]},
        "g_eps":       {"expr": "0"},
        "sigma_eps":   {"expr": "1"},
        "limit_g":     {"expr": "0"},
        "limit_sigma": {"expr": "1"}
      },
      "limit_f": {"left": "exp(c) * x", "right": "exp(-c) * x"},
      "alpha": null,                  // default: (f1 - f2)/(f1 + f2)
      "beta": 0.5,                    // used by the skew simulation commands
      "x0": 0.0,
      "horizon": 1.0,
      "n_steps": 1000,
      "eps": 0.1,                     // default eps for single-eps commands
      "eps_ladder": [0.2, 0.1, 0.05, 0.02],
      "n_paths": 1000,
      "master_seed": 12345,
      "delta": {"sqrt_dt_multiple": 2.0},   // or {"fixed": 0.05}
      "x_grid": [-1.0, -0.5, 0.5, 1.0],
      "class_bounds": {"lambda": 0.5, "Lambda": 2.0},
      "residual_tol": 0.01,
      "ks_factor": 3.0,
      "output": {"ensemble_csv": "ensemble.csv", ...}
    }

Reports embed the fully resolved configuration (the echo); feeding the
echo back reproduces every output byte-for-byte.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .. import convergence, simulate
from ..errors import ConfigError, ExprError
from ..piecewise import PiecewiseC2, SmoothBranch
from ..transforms import ScalarCoefficient, SkewParam, make_family
from . import expr as ex

_COEFF_NAMES = ("b_eps", "g_eps", "sigma_eps", "limit_g", "limit_sigma")
_EPS_FREE = ("limit_g", "limit_sigma")

_DEFAULT_OUTPUT = {
    "ensemble_csv": "ensemble.csv",
    "local_time_csv": "local_time.csv",
    "condition_report": "condition_report.json",
    "study_report": "study_report.json",
    "lemma_report": "lemma_report.json",
}

_DEFAULTS = {
    "params": {},
    "alpha": None,
    "beta": None,
    "eps": None,
    "x0": 0.0,
    "horizon": 1.0,
    "n_steps": 1000,
    "eps_ladder": [0.2, 0.1, 0.05, 0.02],
    "n_paths": 1000,
    "master_seed": 0,
    "delta": {"sqrt_dt_multiple": simulate.DELTA_SQRT_DT},
    "x_grid": [-1.0, -0.5, 0.5, 1.0],
    "class_bounds": {"lambda": 0.5, "Lambda": 2.0},
    "residual_tol": convergence.RESIDUAL_TOL,
    "ks_factor": convergence.KS_FACTOR,
}


def _fail(path, message):
    raise ConfigError(f"{path}: {message}")


def _require(doc, path, key):
    if key not in doc:
        _fail(f"{path}.{key}", "missing required field")
    return doc[key]


def _number(value, path, *, integer=False, minimum=None, strict_min=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        _fail(path, f"expected an integer, got {value!r}")
    v = int(value) if integer else float(value)
    if minimum is not None:
        if strict_min and not v > minimum:
            _fail(path, f"must be > {minimum}, got {v}")
        if not strict_min and not v >= minimum:
            _fail(path, f"must be >= {minimum}, got {v}")
    if not integer and not math.isfinite(v):
        _fail(path, f"must be finite, got {v}")
    return v


def _parse(source, path):
    if not isinstance(source, str):
        _fail(path, f"expected an expression string, got {source!r}")
    try:
        return ex.parse_expr(source)
    except ExprError as err:
        _fail(path, f"bad expression {source!r}: {err}")


@dataclass
class StudyConfig:
    """Validated configuration plus builders for the runtime objects."""

    raw: dict = field(repr=False)

    def __post_init__(self):
        self.raw = _resolve(self.raw)
        d = self.raw
        self.params = {k: float(v) for k, v in d["params"].items()}
        self._coeff_ast = {}
        self._coeff_bps = {}
        coeffs = d["coefficients"]
        for name in _COEFF_NAMES:
            spec = coeffs[name]
            path = f"coefficients.{name}"
            ast = _parse(_require(spec, path, "expr"), f"{path}.expr")
            allowed = {"x", "eps"} if name not in _EPS_FREE else {"x"}
            extra = ex.free_names(ast) - allowed - set(self.params)
            if extra:
                _fail(f"{path}.expr", f"unknown name(s): {', '.join(sorted(extra))}")
            bps = []
            for i, b in enumerate(spec.get("breakpoints", [])):
                bast = _parse(b, f"{path}.breakpoints[{i}]")
                extra = ex.free_names(bast) - {"eps"} - set(self.params)
                if extra:
                    _fail(f"{path}.breakpoints[{i}]",
                          f"unknown name(s): {', '.join(sorted(extra))}")
                bps.append(bast)
            self._coeff_ast[name] = ast
            self._coeff_bps[name] = bps
        self._limit_f_ast = {}
        for side in ("left", "right"):
            ast = _parse(_require(d["limit_f"], "limit_f", side), f"limit_f.{side}")
            extra = ex.free_names(ast) - {"x"} - set(self.params)
            if extra:
                _fail(f"limit_f.{side}", f"unknown name(s): {', '.join(sorted(extra))}")
            self._limit_f_ast[side] = ast

        self.x0 = _number(d["x0"], "x0")
        self.horizon = _number(d["horizon"], "horizon", minimum=0.0, strict_min=True)
        self.n_steps = _number(d["n_steps"], "n_steps", integer=True, minimum=1)
        self.n_paths = _number(d["n_paths"], "n_paths", integer=True, minimum=1)
        self.master_seed = _number(d["master_seed"], "master_seed", integer=True, minimum=0)
        self.residual_tol = _number(d["residual_tol"], "residual_tol", minimum=0.0, strict_min=True)
        self.ks_factor = _number(d["ks_factor"], "ks_factor", minimum=0.0, strict_min=True)

        ladder = d["eps_ladder"]
        if not isinstance(ladder, list) or not ladder:
            _fail("eps_ladder", "expected a nonempty list")
        self.eps_ladder = [_number(e, f"eps_ladder[{i}]", minimum=0.0, strict_min=True)
                           for i, e in enumerate(ladder)]
        if any(b >= a for a, b in zip(self.eps_ladder, self.eps_ladder[1:])):
            _fail("eps_ladder", "must be strictly decreasing")

        self.eps = None if d["eps"] is None else _number(d["eps"], "eps", minimum=0.0, strict_min=True)
        self.alpha = None if d["alpha"] is None else _number(d["alpha"], "alpha")
        if self.alpha is not None and not abs(self.alpha) < 1.0:
            _fail("alpha", f"|alpha| must be < 1, got {self.alpha}")
        self.beta = None if d["beta"] is None else _number(d["beta"], "beta")
        if self.beta is not None and not abs(self.beta) < 1.0:
            _fail("beta", f"|beta| must be < 1, got {self.beta}")

        self.x_grid = [_number(x, f"x_grid[{i}]") for i, x in enumerate(d["x_grid"])]
        bounds = d["class_bounds"]
        self.lambda_bound = _number(_require(bounds, "class_bounds", "lambda"),
                                    "class_bounds.lambda", minimum=0.0, strict_min=True)
        self.Lambda_bound = _number(_require(bounds, "class_bounds", "Lambda"),
                                    "class_bounds.Lambda", minimum=self.lambda_bound)

        delta = d["delta"]
        if not isinstance(delta, dict) or len(delta) != 1 or \
                next(iter(delta)) not in ("sqrt_dt_multiple", "fixed"):
            _fail("delta", "expected {'sqrt_dt_multiple': m} or {'fixed': d}")
        key, val = next(iter(delta.items()))
        self.delta_rule = (key, _number(val, f"delta.{key}", minimum=0.0, strict_min=True))
        self.output = dict(_DEFAULT_OUTPUT)
        self.output.update(d.get("output", {}))

    # -- builders ---------------------------------------------------------

    def coefficient(self, name) -> ScalarCoefficient:
        ast = self._coeff_ast[name]
        params = self.params
        bps = self._coeff_bps[name]

        def fn(x, eps=None):
            return ex.eval_expr(ast, {"x": x, "eps": eps, **params})

        def breakpoints(eps=None):
            return tuple(float(ex.eval_expr(b, {"eps": eps, **params})) for b in bps)

        return ScalarCoefficient(fn=fn, label=f"{name}: {ex.to_source(ast)}",
                                 breakpoints=breakpoints)

    def limit_f_map(self) -> PiecewiseC2:
        branches = {}
        for side in ("left", "right"):
            ast = self._limit_f_ast[side]
            try:
                d1 = ex.derivative(ast, "x")
                d2 = ex.derivative(d1, "x")
            except ExprError as err:
                _fail(f"limit_f.{side}", f"branch must be twice differentiable: {err}")
            params = self.params
            branches[side] = SmoothBranch(
                eval=lambda x, a=ast: ex.eval_expr(a, {"x": x, **params}),
                d1=lambda x, a=d1: ex.eval_expr(a, {"x": x, **params}),
                d2=lambda x, a=d2: ex.eval_expr(a, {"x": x, **params}),
                side=side)
        return PiecewiseC2(left=branches["left"], right=branches["right"])

    def family(self, *, validate_ladder=True):
        eps_values = list(self.eps_ladder)
        if self.eps is not None:
            eps_values.append(self.eps)
        return make_family(
            self.coefficient("b_eps"), self.coefficient("g_eps"),
            self.coefficient("sigma_eps"), self.coefficient("limit_g"),
            self.coefficient("limit_sigma"), self.limit_f_map(),
            self.lambda_bound, self.Lambda_bound,
            eps_ladder=eps_values if validate_ladder else ())

    def grid(self) -> simulate.TimeGrid:
        return simulate.TimeGrid(self.horizon, self.n_steps)

    def delta_for(self, grid) -> float:
        kind, value = self.delta_rule
        if kind == "fixed":
            return value
        return simulate.default_delta(grid, value)

    def skew(self) -> SkewParam:
        if self.beta is None:
            _fail("beta", "required for skew simulation commands")
        return SkewParam(self.beta)

    def echo(self) -> dict:
        """Fully resolved configuration; running it reproduces outputs."""
        return json.loads(json.dumps(self.raw, sort_keys=True))


def _resolve(doc):
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a JSON object at the top level")
    out = {}
    for key, default in _DEFAULTS.items():
        out[key] = doc.get(key, default)
    if not isinstance(out["params"], dict):
        _fail("params", "expected an object")
    coeffs = _require(doc, "config", "coefficients")
    if not isinstance(coeffs, dict):
        _fail("coefficients", "expected an object")
    out["coefficients"] = {}
    for name in _COEFF_NAMES:
        spec = _require(coeffs, "coefficients", name)
        if isinstance(spec, str):
            spec = {"expr": spec}
        if not isinstance(spec, dict):
            _fail(f"coefficients.{name}", "expected an expression string or object")
        out["coefficients"][name] = {"expr": _require(spec, f"coefficients.{name}", "expr")}
        if spec.get("breakpoints"):
            out["coefficients"][name]["breakpoints"] = list(spec["breakpoints"])
    lf = _require(doc, "config", "limit_f")
    if not isinstance(lf, dict):
        _fail("limit_f", "expected an object with 'left' and 'right'")
    out["limit_f"] = {"left": _require(lf, "limit_f", "left"),
                      "right": _require(lf, "limit_f", "right")}
    out["output"] = dict(_DEFAULT_OUTPUT)
    if "output" in doc:
        if not isinstance(doc["output"], dict):
            _fail("output", "expected an object")
        unknown = set(doc["output"]) - set(_DEFAULT_OUTPUT)
        if unknown:
            _fail("output", f"unknown key(s): {', '.join(sorted(unknown))}")
        out["output"].update(doc["output"])
    unknown = set(doc) - set(out)
    if unknown:
        _fail("config", f"unknown key(s): {', '.join(sorted(unknown))}")
    return out


def load_config(path) -> StudyConfig:
    try:
        with open(path) as fp:
            doc = json.load(fp)
    except OSError as err:
        raise ConfigError(f"config: cannot read {path}: {err}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config: invalid JSON in {path}: {err}") from None
    return StudyConfig(raw=doc)


def config_from_dict(doc) -> StudyConfig:
    return StudyConfig(raw=doc)
