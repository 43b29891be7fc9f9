"""Coordinate and coefficient transformations for skew diffusions.

The two workhorses are the skew map

    kappa(x) = (1 - beta) x for x < 0,  (1 + beta) x for x >= 0,

with inverse phi, and the drift-removing scale pair

    F(x) = exp(-2 int_0^x b(y)/a(y) dy),   f(x) = int_0^x F(y) dy,

where a = sigma^2 is the diffusion coefficient.  Scale values are
computed by adaptive quadrature with declared-breakpoint splitting and
cached per (family, eps) so inversion and grid sweeps stay cheap.

Coefficient algebra: tilde maps a function through kappa with the
(1 + beta sgn x) divisor; star builds the drift/diffusion pair of a
monotone-map image process from the symmetric derivative and the second
derivative density; hat composes a coefficient pair with the scale
transform.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import InvalidSkew, ValidationError
from .piecewise import (PiecewiseC2, SmoothBranch, _monotone_root, invert,
                        second_deriv_measure, sgn, sym_deriv)
from .quadrature import SegmentedIntegral

#: residual tolerance of numeric inverses on the value axis
ATOL_INVERT = 1e-12
#: default grid for class-membership (bounded/elliptic) validation
VALIDATION_GRID = np.linspace(-10.0, 10.0, 2001)
#: slack applied to the class bounds when validating on a grid
BOUND_SLACK = 1e-9


@dataclass(frozen=True)
class SkewParam:
    """Coefficient of the local-time term; must satisfy |beta| < 1."""

    beta: float

    def __post_init__(self):
        b = float(self.beta)
        if not (math.isfinite(b) and abs(b) < 1.0):
            raise InvalidSkew(f"|beta| must be < 1, got {self.beta!r}")
        object.__setattr__(self, "beta", b)


def _beta_value(beta) -> float:
    if isinstance(beta, SkewParam):
        return beta.beta
    return SkewParam(float(beta)).beta


@dataclass(frozen=True)
class ScalarCoefficient:
    """A coefficient function of the state, optionally of eps as well.

    fn(x, eps) must broadcast over numpy arrays in x.  breakpoints, when
    present, declare the kink locations used to split quadrature panels
    and may depend on eps (pass a callable eps -> sequence).
    """

    fn: Callable
    label: str = ""
    breakpoints: Union[Sequence[float], Callable] = ()

    def __call__(self, x, eps=None):
        return self.fn(x, eps)

    def bind(self, eps=None):
        """Plain state -> value callable with eps frozen in."""
        f = self.fn
        return lambda x: f(x, eps)

    def breakpoints_at(self, eps=None):
        bp = self.breakpoints
        if callable(bp):
            bp = bp(eps)
        return tuple(float(b) for b in bp)


def constant_coefficient(value, label=""):
    v = float(value)

    def fn(x, eps=None):
        if np.ndim(x) == 0:
            return v
        return np.full(np.shape(x), v)

    return ScalarCoefficient(fn=fn, label=label or repr(v))


def coefficient_from_callable(f, label="", breakpoints=()):
    """Wrap an eps-free vectorized callable as a ScalarCoefficient."""
    return ScalarCoefficient(fn=lambda x, eps=None: f(x), label=label,
                             breakpoints=breakpoints)


def kappa(beta, x):
    """Skew map: contracts the negative axis by (1-beta), dilates the
    positive one by (1+beta)."""
    b = _beta_value(beta)
    if np.ndim(x) == 0:
        xf = float(x)
        return (1.0 - b) * xf if xf < 0.0 else (1.0 + b) * xf
    x = np.asarray(x, dtype=float)
    return np.where(x < 0.0, (1.0 - b) * x, (1.0 + b) * x)


def phi(beta, x):
    """Inverse of kappa."""
    b = _beta_value(beta)
    if np.ndim(x) == 0:
        xf = float(x)
        return xf / (1.0 - b) if xf < 0.0 else xf / (1.0 + b)
    x = np.asarray(x, dtype=float)
    return np.where(x < 0.0, x / (1.0 - b), x / (1.0 + b))


def tilde_coeff(f: ScalarCoefficient, beta) -> ScalarCoefficient:
    """x -> f(kappa(x)) / (1 + beta sgn x); divisor is 1 at the origin."""
    b = _beta_value(beta)

    def fn(x, eps=None):
        return f(kappa(b, x), eps) / (1.0 + b * sgn(x))

    def bps(eps=None):
        return tuple(sorted({phi(b, p) for p in f.breakpoints_at(eps)} | {0.0}))

    return ScalarCoefficient(fn=fn, label=f"tilde({f.label})", breakpoints=bps)


def alpha_limit(f1, f2):
    """Local-time coefficient of the limit process from the one-sided
    slopes of the limit scale function."""
    f1, f2 = float(f1), float(f2)
    if f1 <= 0.0 or f2 <= 0.0:
        raise ValidationError(f"branch slopes must be positive, got {f1:g}, {f2:g}")
    return (f1 - f2) / (f1 + f2)


def compose_tau(u: PiecewiseC2, beta) -> PiecewiseC2:
    """The composition u(kappa(x)) as a PiecewiseC2 map.

    Branch slopes at the origin are (1-beta) u1 and (1+beta) u2, and the
    inverse of the result is phi(u^{-1}(.)).
    """
    b = _beta_value(beta)
    cl, cr = 1.0 - b, 1.0 + b
    ul, ur = u.left, u.right
    left = SmoothBranch(eval=lambda x: ul.eval(cl * x),
                        d1=lambda x: cl * ul.d1(cl * x),
                        d2=lambda x: cl * cl * ul.d2(cl * x),
                        side="left")
    right = SmoothBranch(eval=lambda x: ur.eval(cr * x),
                         d1=lambda x: cr * ur.d1(cr * x),
                         d2=lambda x: cr * cr * ur.d2(cr * x),
                         side="right")
    return PiecewiseC2(left=left, right=right)


class ScaleMap:
    """Scale density F, scale function f and its inverse for one eps.

    Evaluations are backed by cached cumulative quadrature; repeated
    calls (grid sweeps, root-finding) cost one short partial integral
    each.  Instances are obtained via CoefficientFamily.scale_map.
    """

    def __init__(self, family, eps):
        self.family = family
        self.eps = float(eps)
        if not self.eps > 0.0:
            raise ValidationError(f"eps must be positive, got {eps!r}")
        b = family.b_eps.bind(self.eps)
        s = family.sigma_eps.bind(self.eps)
        bps = set(family.b_eps.breakpoints_at(self.eps))
        bps |= set(family.sigma_eps.breakpoints_at(self.eps))
        self.breakpoints = tuple(sorted(bps))
        self._exponent = SegmentedIntegral(
            lambda y: b(y) / s(y) ** 2, self.breakpoints)
        self._area = SegmentedIntegral(self.F, self.breakpoints)

    def exponent(self, x):
        """int_0^x b/sigma^2, the (negated, halved) log of F."""
        return self._exponent.value(x)

    def F(self, x):
        return math.exp(-2.0 * self._exponent.value(x))

    def f(self, x):
        return self._area.value(x)

    def f_inverse(self, y):
        """Solve f(x) = y; f' = F >= exp(-2 Lambda) keeps the root within
        |x| <= |y| exp(2 Lambda) + 1."""
        y = float(y)
        if y == 0.0:
            return 0.0
        reach = abs(y) * math.exp(2.0 * self.family.Lambda_bound) + 1.0
        lo, hi = (0.0, reach) if y > 0.0 else (-reach, 0.0)
        return _monotone_root(self.f, self.F, lo, hi, y, ATOL_INVERT)


@dataclass
class CoefficientFamily:
    """The eps-parametrized coefficient triple plus its limit data.

    lambda_bound/Lambda_bound are the ellipticity/boundedness constants
    the coefficients are required to respect: sigma^2 within
    [lambda, Lambda], |g| <= Lambda, and the drift mass
    |int_0^x b/sigma^2| <= Lambda.  validate() checks them on a finite
    grid and raises ValidationError on violation.
    """

    b_eps: ScalarCoefficient
    g_eps: ScalarCoefficient
    sigma_eps: ScalarCoefficient
    limit_g: ScalarCoefficient
    limit_sigma: ScalarCoefficient
    limit_f: PiecewiseC2
    lambda_bound: float
    Lambda_bound: float
    _scale_maps: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not (0.0 < self.lambda_bound <= self.Lambda_bound < math.inf):
            raise ValidationError(
                f"need 0 < lambda <= Lambda < inf, got {self.lambda_bound!r}, {self.Lambda_bound!r}")

    def scale_map(self, eps) -> ScaleMap:
        key = float(eps)
        sm = self._scale_maps.get(key)
        if sm is None:
            sm = ScaleMap(self, key)
            self._scale_maps[key] = sm
        return sm

    def _check_pair(self, g, sig, eps, grid, what):
        xs = np.union1d(grid, np.asarray(g.breakpoints_at(eps) + sig.breakpoints_at(eps)))
        s2 = np.asarray(sig(xs, eps), dtype=float) ** 2
        gv = np.abs(np.asarray(g(xs, eps), dtype=float))
        if not np.all(np.isfinite(s2)) or not np.all(np.isfinite(gv)):
            raise ValidationError(f"{what}: non-finite coefficient value on the test grid")
        if np.any(s2 < self.lambda_bound - BOUND_SLACK):
            raise ValidationError(f"{what}: sigma^2 drops below lambda = {self.lambda_bound:g}")
        if np.any(s2 > self.Lambda_bound + BOUND_SLACK):
            raise ValidationError(f"{what}: sigma^2 exceeds Lambda = {self.Lambda_bound:g}")
        if np.any(gv > self.Lambda_bound + BOUND_SLACK):
            raise ValidationError(f"{what}: |g| exceeds Lambda = {self.Lambda_bound:g}")

    def validate(self, eps_values=(), grid=None, drift_grid_points=81):
        """Grid check of the class-membership conditions for the limit
        pair and for every eps in eps_values."""
        grid = VALIDATION_GRID if grid is None else np.asarray(grid, dtype=float)
        self._check_pair(self.limit_g, self.limit_sigma, None, grid, "limit pair")
        lo, hi = float(grid.min()), float(grid.max())
        drift_grid = np.linspace(lo, hi, drift_grid_points)
        for eps in eps_values:
            self._check_pair(self.g_eps, self.sigma_eps, eps, grid, f"eps={eps:g}")
            sm = self.scale_map(eps)
            xs = np.union1d(drift_grid, np.asarray(sm.breakpoints))
            for x in xs:
                h = sm.exponent(x)
                if not math.isfinite(h) or abs(h) > self.Lambda_bound + BOUND_SLACK:
                    raise ValidationError(
                        f"eps={eps:g}: |int_0^x b/sigma^2| = {abs(h):g} at x = {x:g} "
                        f"exceeds Lambda = {self.Lambda_bound:g}")
        return self


def make_family(b_eps, g_eps, sigma_eps, limit_g, limit_sigma, limit_f,
                lambda_bound, Lambda_bound, *, eps_ladder=(), grid=None) -> CoefficientFamily:
    """Construct and validate a CoefficientFamily in one step."""
    fam = CoefficientFamily(b_eps=b_eps, g_eps=g_eps, sigma_eps=sigma_eps,
                            limit_g=limit_g, limit_sigma=limit_sigma,
                            limit_f=limit_f, lambda_bound=lambda_bound,
                            Lambda_bound=Lambda_bound)
    fam.validate(eps_values=eps_ladder, grid=grid)
    return fam


def scale_density(fam: CoefficientFamily, eps, x):
    """F_eps(x); equals 1 at the origin and stays within
    [exp(-2 Lambda), exp(2 Lambda)]."""
    return fam.scale_map(eps).F(x)


def scale_function(fam: CoefficientFamily, eps, x):
    """f_eps(x) = int_0^x F_eps; strictly increasing, 0 at the origin."""
    return fam.scale_map(eps).f(x)


def scale_inverse(fam: CoefficientFamily, eps, y):
    return fam.scale_map(eps).f_inverse(y)


def limit_f_residuals(fam: CoefficientFamily, eps, xs):
    """|f_eps(x) - f(x)| on a grid: numeric check that the supplied limit
    scale function is actually the limit of the eps-scale functions."""
    sm = fam.scale_map(eps)
    return [(float(x), abs(sm.f(x) - float(fam.limit_f(x)))) for x in np.asarray(xs, dtype=float)]


def hat_coeffs(fam: CoefficientFamily, eps):
    """Coefficient pair of the scale-transformed process: each is the
    original coefficient carried through f_eps^{-1} and weighted by F_eps."""
    sm = fam.scale_map(eps)
    g = fam.g_eps.bind(eps)
    s = fam.sigma_eps.bind(eps)

    def make(fun, label):
        def scalar(x):
            v = sm.f_inverse(x)
            return sm.F(v) * float(fun(v))

        def fn(x, _eps=None):
            if np.ndim(x) == 0:
                return scalar(float(x))
            return np.array([scalar(float(t)) for t in np.asarray(x, dtype=float).ravel()]
                            ).reshape(np.shape(x))

        def bps(_eps=None):
            return tuple(sorted({sm.f(p) for p in sm.breakpoints} | {0.0}))

        return ScalarCoefficient(fn=fn, label=label, breakpoints=bps)

    return (make(g, f"hat_g(eps={eps:g})"), make(s, f"hat_sigma(eps={eps:g})"))


def star_coeffs(u: PiecewiseC2, g: ScalarCoefficient, sigma: ScalarCoefficient):
    """Drift and diffusion of the u-image of a process with coefficients
    (g, sigma):

        g*(y) = Du(v) g(v) + sigma^2(v)/2 * A_u(v),   v = u^{-1}(y),
        sigma*(y) = Du(v) sigma(v).
    """
    measure = second_deriv_measure(u)

    def g_star_scalar(y, eps):
        v = invert(u, y)
        return (sym_deriv(u, v) * float(g(v, eps))
                + 0.5 * float(sigma(v, eps)) ** 2 * measure.density(v))

    def s_star_scalar(y, eps):
        v = invert(u, y)
        return sym_deriv(u, v) * float(sigma(v, eps))

    def vectorize(scalar, label):
        def fn(x, eps=None):
            if np.ndim(x) == 0:
                return scalar(float(x), eps)
            return np.array([scalar(float(t), eps) for t in np.asarray(x, dtype=float).ravel()]
                            ).reshape(np.shape(x))

        def bps(eps=None):
            pts = set(g.breakpoints_at(eps)) | set(sigma.breakpoints_at(eps))
            return tuple(sorted({float(u(p)) for p in pts} | {0.0}))

        return ScalarCoefficient(fn=fn, label=label, breakpoints=bps)

    return (vectorize(g_star_scalar, f"star({g.label})"),
            vectorize(s_star_scalar, f"star({sigma.label})"))
