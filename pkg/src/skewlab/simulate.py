"""Path generation and local-time estimation.

Reproducibility contract: every path owns a private random stream derived
from (master_seed, global path index) via numpy SeedSequence spawn keys.
Regenerating a block, slicing it, or drawing its increments in step
blocks all yield bit-identical numbers, so chunked drivers reproduce a
single monolithic run exactly.

Simulation of equations with a local-time term never touches the origin
directly: it integrates the transformed Ito equation for zeta with the
tilde coefficients and maps the result through kappa, which is exact in
law.  The local time itself is estimated by the sigma^2-weighted
occupation sum over a shrinking window:

    Lhat(t, 0) = dt/(2 delta) * sum_{k: t_k < t, |x_k| < delta} sigma^2(x_k).
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.random import SeedSequence, default_rng

from .errors import (BandwidthTooSmall, NonFiniteState, StepTooCoarse,
                     ValidationError)
from .transforms import ScalarCoefficient, SkewParam, kappa, phi, tilde_coeff

#: default local-time bandwidth, as a multiple of sqrt(dt)
DELTA_SQRT_DT = 2.0
#: explicit-Euler safety factor for the eps-layer drift: dt <= eps^2 * STEP_SAFETY
STEP_SAFETY = 0.1
#: soft cap on floats per internal work array when chunking over paths
CHUNK_FLOATS = 4.0e7
#: steps per RNG draw block inside the stepping kernel
BLOCK_STEPS = 2048


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T] with n_steps steps."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not (self.horizon > 0.0 and math.isfinite(self.horizon)):
            raise ValidationError(f"horizon must be positive, got {self.horizon!r}")
        if self.n_steps < 1:
            raise ValidationError(f"n_steps must be >= 1, got {self.n_steps!r}")

    @property
    def dt(self):
        return self.horizon / self.n_steps

    def times(self):
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    def index_of(self, t):
        """Grid index of time t (must sit on the grid up to rounding)."""
        k = int(round(float(t) / self.dt))
        if k < 0 or k > self.n_steps or abs(k * self.dt - float(t)) > 1e-9 * max(1.0, self.horizon):
            raise ValidationError(f"time {t!r} is not on the grid")
        return k


class NoiseBlock:
    """Per-path Gaussian increment streams of variance dt.

    The streams are a pure function of (master_seed, global path index);
    path_offset lets slices of a block keep their global identities.
    """

    def __init__(self, master_seed: int, grid: TimeGrid, n_paths: int, path_offset: int = 0):
        if n_paths < 1:
            raise ValidationError(f"n_paths must be >= 1, got {n_paths!r}")
        if master_seed < 0:
            raise ValidationError(f"master_seed must be a nonnegative integer, got {master_seed!r}")
        self.master_seed = int(master_seed)
        self.grid = grid
        self.n_paths = int(n_paths)
        self.path_offset = int(path_offset)

    def generators(self, lo=0, hi=None):
        hi = self.n_paths if hi is None else hi
        base = self.master_seed
        off = self.path_offset
        return [default_rng(SeedSequence(base, spawn_key=(off + i,)))
                for i in range(lo, hi)]

    def increments(self, lo=0, hi=None):
        """Materialized increments for paths [lo, hi), shape (hi-lo, n_steps)."""
        hi = self.n_paths if hi is None else hi
        n = self.grid.n_steps
        out = np.empty((hi - lo, n))
        root_dt = math.sqrt(self.grid.dt)
        for i, gen in enumerate(self.generators(lo, hi)):
            out[i, :] = gen.standard_normal(n)
        out *= root_dt
        return out

    def slice(self, lo, hi):
        if not (0 <= lo < hi <= self.n_paths):
            raise ValidationError(f"bad path slice [{lo}, {hi}) of {self.n_paths}")
        return NoiseBlock(self.master_seed, self.grid, hi - lo,
                          path_offset=self.path_offset + lo)


def gen_noise(master_seed: int, grid: TimeGrid, n_paths: int) -> NoiseBlock:
    return NoiseBlock(master_seed, grid, n_paths)


@dataclass
class PathEnsemble:
    """Sampled paths on a common grid: values[path, time index]."""

    grid: TimeGrid
    values: np.ndarray
    noise_ref: Optional[NoiseBlock] = None
    label: str = ""

    @property
    def n_paths(self):
        return self.values.shape[0]

    @property
    def terminal(self):
        return self.values[:, -1]

    def to_csv(self, fp):
        """Header t,path_0,...; one row per grid time; shortest
        round-trip decimals."""
        close = False
        if isinstance(fp, (str, bytes)):
            fp = open(fp, "w", newline="")
            close = True
        try:
            fp.write("t," + ",".join(f"path_{i}" for i in range(self.n_paths)) + "\n")
            times = self.grid.times()
            for k in range(self.values.shape[1]):
                fp.write(repr(float(times[k])) + ","
                         + ",".join(repr(float(v)) for v in self.values[:, k]) + "\n")
        finally:
            if close:
                fp.close()


@dataclass
class LocalTimeEstimate:
    """Occupation-time approximation of L(t, 0) at bandwidth delta."""

    times: np.ndarray
    values: np.ndarray  # (n_paths, len(times)), nondecreasing along time
    delta: float
    label: str = ""

    @property
    def final(self):
        return self.values[:, -1]

    def to_csv(self, fp):
        close = False
        if isinstance(fp, (str, bytes)):
            fp = open(fp, "w", newline="")
            close = True
        try:
            n_paths = self.values.shape[0]
            fp.write("t," + ",".join(f"path_{i}" for i in range(n_paths)) + "\n")
            for k in range(len(self.times)):
                fp.write(repr(float(self.times[k])) + ","
                         + ",".join(repr(float(v)) for v in self.values[:, k]) + "\n")
        finally:
            if close:
                fp.close()


def _as_state_fn(coeff, eps):
    """Normalize drift/diffusion arguments to a vectorized state function."""
    if isinstance(coeff, ScalarCoefficient):
        return coeff.bind(eps)
    if callable(coeff):
        return coeff
    v = float(coeff)
    return lambda x: v


def _sweep(drift_fn, sig_fn, x0, grid, noise, lo, hi, *,
           record_full=False, record_indices=None,
           occupation=None, state_map=None, block_steps=BLOCK_STEPS):
    """Euler-Maruyama stepping kernel for paths [lo, hi) of a noise block.

    occupation = (delta, weight_fn) accumulates the local-time sum of the
    (optionally state_map-ped) trajectory at left endpoints.  Returns a
    dict with terminal states and whatever else was requested.
    """
    n = grid.n_steps
    dt = grid.dt
    root_dt = math.sqrt(dt)
    m = hi - lo
    x = np.full(m, float(x0))
    gens = noise.generators(lo, hi)

    values = None
    if record_full:
        values = np.empty((m, n + 1))
        values[:, 0] = x
    recorded = None
    rec_set = {}
    if record_indices is not None:
        idx = sorted(int(i) for i in record_indices)
        recorded = np.empty((m, len(idx)))
        rec_set = {k: j for j, k in enumerate(idx)}
        if 0 in rec_set:
            recorded[:, rec_set[0]] = x
    occ = None
    if occupation is not None:
        delta, weight_fn = occupation
        occ = np.zeros(m)

    dW = np.empty((m, block_steps))
    for k0 in range(0, n, block_steps):
        nb = min(block_steps, n - k0)
        blk = dW[:, :nb]
        for i, gen in enumerate(gens):
            blk[i, :] = gen.standard_normal(nb)
        blk *= root_dt
        for j in range(nb):
            k = k0 + j
            if occ is not None:
                y = x if state_map is None else state_map(x)
                occ += np.where(np.abs(y) < delta, weight_fn(y), 0.0)
            x = x + drift_fn(x) * dt + sig_fn(x) * blk[:, j]
            if record_full:
                values[:, k + 1] = x
            if k + 1 in rec_set:
                recorded[:, rec_set[k + 1]] = x
    if not np.all(np.isfinite(x)):
        bad = int(np.count_nonzero(~np.isfinite(x)))
        raise NonFiniteState(f"{bad} of {m} paths reached a non-finite state")
    out = {"terminal": x}
    if record_full:
        out["values"] = values
    if recorded is not None:
        out["recorded"] = recorded
    if occ is not None:
        out["occupation"] = occ * dt
    return out


def euler_maruyama(drift, diffusion, x0, grid: TimeGrid, noise: NoiseBlock,
                   *, eps=None, label="") -> PathEnsemble:
    """Explicit Euler scheme x_{k+1} = x_k + b(x_k) dt + sigma(x_k) dW_k,
    one path per noise stream.  Materializes the full ensemble; use the
    chunked drivers for path counts where that does not fit in memory."""
    res = _sweep(_as_state_fn(drift, eps), _as_state_fn(diffusion, eps),
                 x0, grid, noise, 0, noise.n_paths, record_full=True)
    return PathEnsemble(grid=grid, values=res["values"], noise_ref=noise, label=label)


def simulate_skew_sde(beta, g, sigma, x0, grid: TimeGrid, noise: NoiseBlock,
                      *, eps=None, label="") -> PathEnsemble:
    """Weak solution of the local-time equation with skew coefficient beta:
    integrate zeta with the tilde coefficients from phi(x0), then map the
    paths through kappa."""
    bp = beta if isinstance(beta, SkewParam) else SkewParam(float(beta))
    g_t = tilde_coeff(_wrap_coeff(g), bp)
    s_t = tilde_coeff(_wrap_coeff(sigma), bp)
    zeta = euler_maruyama(g_t, s_t, phi(bp, float(x0)), grid, noise, eps=eps)
    vals = kappa(bp, zeta.values)
    return PathEnsemble(grid=grid, values=vals, noise_ref=noise,
                        label=label or f"skew(beta={bp.beta:g})")


def _wrap_coeff(c) -> ScalarCoefficient:
    if isinstance(c, ScalarCoefficient):
        return c
    if callable(c):
        return ScalarCoefficient(fn=lambda x, eps=None: c(x))
    v = float(c)
    return ScalarCoefficient(fn=lambda x, eps=None: v if np.ndim(x) == 0 else np.full(np.shape(x), v))


def check_eps_step(grid: TimeGrid, eps):
    """Reject steps too coarse for the eps-wide drift layer."""
    lim = STEP_SAFETY * float(eps) ** 2
    if grid.dt > lim * (1.0 + 1e-12):
        raise StepTooCoarse(
            f"dt = {grid.dt:g} exceeds {STEP_SAFETY:g} * eps^2 = {lim:g}; "
            f"the eps = {eps:g} drift layer would be skipped")


def simulate_eps_family(fam, eps, x0, grid: TimeGrid, noise: NoiseBlock,
                        *, label="") -> PathEnsemble:
    """One run of the prelimit equation: drift b_eps + g_eps, diffusion
    sigma_eps, at a fixed eps."""
    eps = float(eps)
    if eps <= 0.0:
        raise ValidationError(f"eps must be positive, got {eps!r}")
    check_eps_step(grid, eps)
    b = fam.b_eps.bind(eps)
    g = fam.g_eps.bind(eps)
    drift = lambda x: b(x) + g(x)
    res = _sweep(drift, fam.sigma_eps.bind(eps), x0, grid, noise, 0, noise.n_paths,
                 record_full=True)
    return PathEnsemble(grid=grid, values=res["values"], noise_ref=noise,
                        label=label or f"v_eps(eps={eps:g})")


def transform_ensemble(paths: PathEnsemble, map_fn, label="") -> PathEnsemble:
    """Apply a state map pointwise; the driving noise reference is kept,
    which is what pathwise identity tests rely on."""
    vals = np.asarray(map_fn(paths.values), dtype=float)
    if vals.shape != paths.values.shape:
        raise ValidationError("state map changed the ensemble shape")
    if not np.all(np.isfinite(vals)):
        raise NonFiniteState("state map produced non-finite values")
    return PathEnsemble(grid=paths.grid, values=vals, noise_ref=paths.noise_ref,
                        label=label or paths.label)


def _sigma_squared_values(sigma, states, eps):
    if isinstance(sigma, np.ndarray):
        if sigma.shape != states.shape:
            raise ValidationError("precomputed sigma values do not match the state layout")
        return sigma ** 2
    return np.asarray(_as_state_fn(sigma, eps)(states), dtype=float) ** 2


def estimate_local_time(paths: PathEnsemble, sigma, delta, *, eps=None,
                        report_times=None, label="") -> LocalTimeEstimate:
    """sigma^2-weighted occupation-time estimate of L(t, 0).

    sigma is the diffusion coefficient of the process that generated the
    paths (a ScalarCoefficient, a callable, a constant, or a precomputed
    array of sigma values at the left-endpoint states).  delta must stay
    above the one-step displacement scale sqrt(dt) * max |sigma|.
    """
    delta = float(delta)
    if delta <= 0.0:
        raise ValidationError(f"delta must be positive, got {delta!r}")
    dt = paths.grid.dt
    states = paths.values[:, :-1]
    s2 = _sigma_squared_values(sigma, states, eps)
    if s2.ndim == 0:
        s2 = np.full_like(states, float(s2))
    floor = math.sqrt(dt) * math.sqrt(float(np.max(s2))) if s2.size else 0.0
    if delta < floor:
        raise BandwidthTooSmall(
            f"delta = {delta:g} below the displacement floor sqrt(dt)*max sigma = {floor:g}")
    w = np.where(np.abs(states) < delta, s2, 0.0) * (dt / (2.0 * delta))
    cum = np.empty((paths.n_paths, paths.grid.n_steps + 1))
    cum[:, 0] = 0.0
    np.cumsum(w, axis=1, out=cum[:, 1:])
    times = paths.grid.times()
    if report_times is not None:
        idx = [paths.grid.index_of(t) for t in report_times]
        return LocalTimeEstimate(times=times[idx], values=cum[:, idx],
                                 delta=delta, label=label or paths.label)
    return LocalTimeEstimate(times=times, values=cum, delta=delta,
                             label=label or paths.label)


def default_delta(grid: TimeGrid, multiple=DELTA_SQRT_DT):
    return float(multiple) * math.sqrt(grid.dt)


def _chunk_ranges(n_paths, n_steps, chunk_floats=CHUNK_FLOATS):
    size = max(1, min(n_paths, int(chunk_floats / max(n_steps, 1))))
    return [(lo, min(lo + size, n_paths)) for lo in range(0, n_paths, size)]


def run_terminal(drift, diffusion, x0, grid, noise, *, eps=None,
                 state_map=None, record_indices=None,
                 chunk_floats=CHUNK_FLOATS) -> dict:
    """Chunked terminal-value driver for path counts that do not fit as a
    materialized ensemble.  Results are identical to a single sweep."""
    drift_fn = _as_state_fn(drift, eps)
    sig_fn = _as_state_fn(diffusion, eps)
    term = np.empty(noise.n_paths)
    recorded = None
    if record_indices is not None:
        recorded = np.empty((noise.n_paths, len(record_indices)))
    for lo, hi in _chunk_ranges(noise.n_paths, grid.n_steps, chunk_floats):
        res = _sweep(drift_fn, sig_fn, x0, grid, noise, lo, hi,
                     record_indices=record_indices)
        term[lo:hi] = res["terminal"]
        if recorded is not None:
            recorded[lo:hi] = res["recorded"]
    if state_map is not None:
        term = state_map(term)
        if recorded is not None:
            recorded = state_map(recorded)
    out = {"terminal": term}
    if recorded is not None:
        out["recorded"] = recorded
    return out


def run_terminal_with_local_time(drift, diffusion, x0, grid, noise, *, delta,
                                 weight_sigma, eps=None, state_map=None,
                                 chunk_floats=CHUNK_FLOATS) -> dict:
    """Chunked driver that also accumulates the occupation sum of the
    (state_map-ped) trajectory on the fly.  weight_sigma is the diffusion
    coefficient of the mapped process, evaluated at mapped states."""
    drift_fn = _as_state_fn(drift, eps)
    sig_fn = _as_state_fn(diffusion, eps)
    w_fn = _as_state_fn(weight_sigma, eps)
    delta = float(delta)
    if delta < math.sqrt(grid.dt):
        raise BandwidthTooSmall(
            f"delta = {delta:g} below sqrt(dt) = {math.sqrt(grid.dt):g}")
    weight = lambda y: np.asarray(w_fn(y), dtype=float) ** 2
    term = np.empty(noise.n_paths)
    lt = np.empty(noise.n_paths)
    for lo, hi in _chunk_ranges(noise.n_paths, grid.n_steps, chunk_floats):
        res = _sweep(drift_fn, sig_fn, x0, grid, noise, lo, hi,
                     occupation=(delta, weight), state_map=state_map)
        term[lo:hi] = res["terminal"]
        lt[lo:hi] = res["occupation"] / (2.0 * delta)
    if state_map is not None:
        term = state_map(term)
    return {"terminal": term, "local_time": lt}


def skew_terminal(beta, g, sigma, x0, grid, noise, *, eps=None,
                  with_local_time=False, delta=None,
                  chunk_floats=CHUNK_FLOATS) -> dict:
    """Chunked terminal sample of the skew equation (and optionally the
    occupation estimate of its local time at zero)."""
    bp = beta if isinstance(beta, SkewParam) else SkewParam(float(beta))
    g_t = tilde_coeff(_wrap_coeff(g), bp)
    s_t = tilde_coeff(_wrap_coeff(sigma), bp)
    z0 = phi(bp, float(x0))
    kmap = lambda z: kappa(bp, z)
    if not with_local_time:
        return run_terminal(g_t, s_t, z0, grid, noise, state_map=kmap,
                            chunk_floats=chunk_floats)
    if delta is None:
        delta = default_delta(grid)
    return run_terminal_with_local_time(
        g_t, s_t, z0, grid, noise, delta=delta, weight_sigma=_wrap_coeff(sigma),
        state_map=kmap, chunk_floats=chunk_floats)


def eps_family_terminal(fam, eps, x0, grid, noise, *, record_indices=None,
                        chunk_floats=CHUNK_FLOATS) -> dict:
    """Chunked terminal sample of the prelimit equation at one eps."""
    eps = float(eps)
    check_eps_step(grid, eps)
    b = fam.b_eps.bind(eps)
    g = fam.g_eps.bind(eps)
    drift = lambda x: b(x) + g(x)
    return run_terminal(drift, fam.sigma_eps.bind(eps), x0, grid, noise,
                        record_indices=record_indices, chunk_floats=chunk_floats)
