"""Piecewise-C2 monotone maps and their generalized derivatives.

A map u is assembled from two smooth branches anchored at the origin,
u(x) = u1(x) for x <= 0 and u2(x) for x >= 0 with u1(0) = u2(0) = 0 and
strictly positive slopes on each branch's own side.  For such maps the
symmetric derivative has the closed form

    Du(x) = (u2'(x) + u1'(x))/2 + (u2'(x) - u1'(x))/2 * sgn(x),

and the second derivative in the distributional sense is an atom at zero
of mass u2'(0) - u1'(0) plus the absolutely continuous density

    A_u(x) = [(u2''(x) + u1''(x)) + (u2''(x) - u1''(x)) * sgn(x)] / 2.

Everything here is immutable after construction and safe to evaluate
concurrently.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NoBracket, ValidationError

ATOL_INVERT = 1e-12
#: half-width of the default inversion search interval, times (1 + |y|)
INVERT_SPAN = 1e10

_BRANCH_GRID = np.linspace(0.0, 10.0, 129)


def sgn(x):
    """Three-valued sign: +1 for x > 0, 0 for x = 0, -1 for x < 0.

    Accepts scalars or arrays; the scalar result is a float.
    """
    s = np.sign(x) + 0.0  # "+ 0.0" normalizes -0.0 away
    if np.ndim(x) == 0:
        return float(s)
    return s


@dataclass(frozen=True)
class SmoothBranch:
    """One twice-differentiable branch of a piecewise map.

    eval/d1/d2 must be vectorized (accept numpy arrays).  `side` states
    which half-line the branch is responsible for; strict monotonicity is
    only required there.
    """

    eval: Callable
    d1: Callable
    d2: Callable
    side: str  # "left" (x <= 0) or "right" (x >= 0)

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise ValidationError(f"branch side must be 'left' or 'right', got {self.side!r}")

    def validate(self):
        xs = -_BRANCH_GRID if self.side == "left" else _BRANCH_GRID
        v0 = float(self.eval(0.0))
        if abs(v0) > 1e-9:
            raise ValidationError(f"{self.side} branch not anchored: eval(0) = {v0:g}")
        d = np.asarray(self.d1(xs), dtype=float)
        if not np.all(np.isfinite(d)):
            raise ValidationError(f"{self.side} branch derivative non-finite on sample grid")
        if np.any(d <= 0.0):
            raise ValidationError(f"{self.side} branch not strictly increasing on its side")
        if not np.all(np.isfinite(np.asarray(self.d2(xs), dtype=float))):
            raise ValidationError(f"{self.side} branch second derivative non-finite on sample grid")


def linear_branch(slope, side):
    if slope <= 0:
        raise ValidationError(f"linear branch slope must be positive, got {slope:g}")
    s = float(slope)
    return SmoothBranch(eval=lambda x: s * np.asarray(x, dtype=float) + 0.0,
                        d1=lambda x: np.full_like(np.asarray(x, dtype=float), s) if np.ndim(x) else s,
                        d2=lambda x: np.zeros_like(np.asarray(x, dtype=float)) if np.ndim(x) else 0.0,
                        side=side)


def identity_piecewise():
    return PiecewiseC2(left=linear_branch(1.0, "left"), right=linear_branch(1.0, "right"))


def _split_apply(x, left_fn, right_fn, at_zero):
    """Evaluate left_fn on x < 0, right_fn on x > 0 and at_zero at 0."""
    if np.ndim(x) == 0:
        xf = float(x)
        if xf < 0.0:
            return float(left_fn(xf))
        if xf > 0.0:
            return float(right_fn(xf))
        return float(at_zero)
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    neg = x < 0.0
    pos = x > 0.0
    zero = ~(neg | pos)
    if neg.any():
        out[neg] = left_fn(x[neg])
    if pos.any():
        out[pos] = right_fn(x[pos])
    if zero.any():
        out[zero] = at_zero
    return out


@dataclass(frozen=True)
class PiecewiseC2:
    """Strictly increasing piecewise-C2 map assembled from two branches."""

    left: SmoothBranch
    right: SmoothBranch
    _u1: float = field(init=False, repr=False, compare=False, default=0.0)
    _u2: float = field(init=False, repr=False, compare=False, default=0.0)

    def __post_init__(self):
        if self.left.side != "left" or self.right.side != "right":
            raise ValidationError("branches passed on the wrong sides")
        self.left.validate()
        self.right.validate()
        object.__setattr__(self, "_u1", float(self.left.d1(0.0)))
        object.__setattr__(self, "_u2", float(self.right.d1(0.0)))

    @property
    def u1(self):
        """Left branch slope at the origin."""
        return self._u1

    @property
    def u2(self):
        """Right branch slope at the origin."""
        return self._u2

    def __call__(self, x):
        # the origin value is pinned to exactly 0 (anchoring invariant)
        return _split_apply(x, self.left.eval, self.right.eval, 0.0)


def sym_deriv(u: PiecewiseC2, x):
    """Symmetric derivative of u: one-sided slope off the origin, the
    average of the two branch slopes at it."""
    return _split_apply(x, u.left.d1, u.right.d1, 0.5 * (u.u1 + u.u2))


@dataclass(frozen=True)
class SecondDerivMeasure:
    """Second distributional derivative of a PiecewiseC2 map: an atom at
    zero plus an absolutely continuous density."""

    atom_at_zero: float
    density: Callable


def second_deriv_measure(u: PiecewiseC2) -> SecondDerivMeasure:
    at_zero = 0.5 * (float(u.left.d2(0.0)) + float(u.right.d2(0.0)))

    def density(x):
        return _split_apply(x, u.left.d2, u.right.d2, at_zero)

    return SecondDerivMeasure(atom_at_zero=u.u2 - u.u1, density=density)


def _monotone_root(f, df, lo, hi, target, atol):
    """Root of f(x) = target on the bracket [lo, hi], f increasing.

    Newton steps with bisection fallback; stops on the residual in f or
    when the bracket collapses to machine width.
    """
    tol_y = max(atol, 4.0 * np.finfo(float).eps * max(1.0, abs(target)))
    flo = f(lo) - target
    fhi = f(hi) - target
    if flo > 0.0 or fhi < 0.0:
        raise NoBracket(f"no sign change on [{lo:g}, {hi:g}]")
    x = 0.5 * (lo + hi)
    for _ in range(200):
        fx = f(x) - target
        if abs(fx) <= tol_y:
            return x
        if fx > 0.0:
            hi = x
        else:
            lo = x
        d = df(x)
        step_ok = False
        if np.isfinite(d) and d > 0.0:
            xn = x - fx / d
            if lo < xn < hi:
                x = xn
                step_ok = True
        if not step_ok:
            x = 0.5 * (lo + hi)
        if hi - lo <= np.finfo(float).eps * (abs(lo) + abs(hi)) + 1e-300:
            return x
    return x


def invert(u: PiecewiseC2, y, *, atol=ATOL_INVERT, span=INVERT_SPAN):
    """Numeric inverse of u at y.

    Brackets on the branch matching sign(y) (u is anchored, so the
    preimage has the sign of y), then refines with damped Newton to
    |u(x) - y| <= atol.  Raises NoBracket when |x| would have to exceed
    span * (1 + |y|).
    """
    y = float(y)
    if y == 0.0:
        return 0.0
    limit = span * (1.0 + abs(y))
    if y > 0.0:
        f, df = u.right.eval, u.right.d1
        hi = 1.0
        while float(f(hi)) < y:
            hi *= 2.0
            if hi > limit:
                raise NoBracket(f"value {y:g} not reachable within |x| <= {limit:g}")
        return _monotone_root(lambda t: float(f(t)), lambda t: float(df(t)), 0.0, hi, y, atol)
    f, df = u.left.eval, u.left.d1
    lo = -1.0
    while float(f(lo)) > y:
        lo *= 2.0
        if -lo > limit:
            raise NoBracket(f"value {y:g} not reachable within |x| <= {limit:g}")
    return _monotone_root(lambda t: float(f(t)), lambda t: float(df(t)), lo, 0.0, y, atol)


def invert_many(u: PiecewiseC2, ys, **kw):
    """Vectorized wrapper over invert (one root-find per element)."""
    ys = np.asarray(ys, dtype=float)
    out = np.empty_like(ys)
    flat = ys.ravel()
    dst = out.ravel()
    for i, yv in enumerate(flat):
        dst[i] = invert(u, yv, **kw)
    return out if np.ndim(ys) else float(out)
