"""Adaptive quadrature helpers.

Thin wrapper around QUADPACK (scipy.integrate.quad) adding the error
semantics used throughout the package: explicit breakpoint splitting for
integrands with declared kinks, a hard subdivision budget, and a
QuadratureFailure raised when the tolerance cannot be certified.

SegmentedIntegral caches cumulative integrals from the origin at the
declared breakpoints, so functions such as scale densities that are
evaluated many times (inversion loops, condition checks) only pay for a
short partial integral per call.
"""

import bisect

import numpy as np
from scipy.integrate import quad

from .errors import QuadratureFailure

RTOL = 1e-9
ATOL = 1e-12
MAX_PANELS = 10_000


def integrate(fn, a, b, *, rtol=RTOL, atol=ATOL, breakpoints=(), limit=MAX_PANELS):
    """Integral of fn over [a, b] (signed: a > b flips the sign).

    breakpoints lists interior kink locations of the integrand; points
    outside (a, b) are ignored.  Raises QuadratureFailure when QUADPACK
    cannot certify the tolerance within the panel budget.
    """
    if a == b:
        return 0.0
    sign = 1.0
    if a > b:
        a, b = b, a
        sign = -1.0
    pts = sorted(p for p in breakpoints if a < p < b)
    out = quad(fn, a, b, epsabs=atol, epsrel=rtol,
               limit=limit, points=pts or None, full_output=True)
    value, _abserr = out[0], out[1]
    if len(out) > 3:  # (value, err, infodict, message[, explain])
        raise QuadratureFailure(
            f"quadrature on [{a:g}, {b:g}] did not converge: {out[3]}")
    return sign * value


class SegmentedIntegral:
    """Cumulative integral x -> int_0^x fn(y) dy with breakpoint caching.

    The cumulative value at each declared breakpoint is computed once and
    cached; a call for arbitrary x adds one partial integral from the
    nearest cached node.  Concurrent readers obtain identical values (the
    cache only ever stores results of the same deterministic quadrature).
    """

    def __init__(self, fn, breakpoints=(), *, rtol=RTOL, atol=ATOL):
        self.fn = fn
        self.rtol = rtol
        self.atol = atol
        nodes = sorted({float(b) for b in breakpoints if np.isfinite(b)} | {0.0})
        self._nodes = nodes
        self._cum = {0.0: 0.0}

    def _cum_at(self, node):
        val = self._cum.get(node)
        if val is None:
            # integrate from the nearest already-cached node toward `node`
            known = sorted(self._cum)
            nearest = min(known, key=lambda k: abs(k - node))
            val = self._cum[nearest] + integrate(
                self.fn, nearest, node, rtol=self.rtol, atol=self.atol,
                breakpoints=self._nodes)
            self._cum[node] = val
        return val

    def value(self, x):
        x = float(x)
        if x == 0.0:
            return 0.0
        if x > 0:
            # largest node in [0, x]
            i = bisect.bisect_right(self._nodes, x) - 1
            base = self._nodes[i]
            if base < 0.0:
                base = 0.0
        else:
            # smallest node in [x, 0]
            i = bisect.bisect_left(self._nodes, x)
            base = self._nodes[i]
            if base > 0.0:
                base = 0.0
        return self._cum_at(base) + integrate(
            self.fn, base, x, rtol=self.rtol, atol=self.atol,
            breakpoints=self._nodes)
