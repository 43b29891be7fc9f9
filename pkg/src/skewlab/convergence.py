"""Numerical verification layer.

Three groups of checks:

* condition checks -- the limit identity alpha = (f1 - f2)/(f1 + f2) and
  the two integral conditions relating the prelimit coefficients to the
  limit scale function, evaluated as residual tables over an eps ladder
  and an x grid;
* pathwise/expectation residuals for the two transformation identities
  (local-time scaling under a monotone map, and the equation satisfied
  by the mapped skew process);
* Monte Carlo weak-convergence proxies: Kolmogorov-Smirnov and
  Wasserstein-1 distances between terminal-value samples of the prelimit
  processes and of the limit process.

Verdicts separate discretization bias from Monte Carlo noise: condition
residuals must shrink along the ladder and end below RESIDUAL_TOL, and
KS distances must be nonincreasing within sampling slack and end below
KS_FACTOR times the 99% two-sample quantile.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.random import SeedSequence

from . import simulate as sim
from .errors import ValidationError
from .piecewise import PiecewiseC2, second_deriv_measure, sym_deriv
from .quadrature import integrate
from .transforms import (CoefficientFamily, SkewParam, alpha_limit,
                         ScalarCoefficient)

#: pass threshold for condition residuals at the smallest eps
RESIDUAL_TOL = 1e-2
#: slack for "nonincreasing" residual ladders (quadrature noise scale)
RESIDUAL_SLACK = 1e-8
#: tolerance on the algebraic alpha identity
ALPHA_TOL = 1e-9
#: KS pass threshold = KS_FACTOR * (99% two-sample quantile)
KS_FACTOR = 3.0
# sqrt(-ln(0.005)/2), the asymptotic 99% coefficient of the two-sample KS law
_KS99_COEF = math.sqrt(-math.log(0.005) / 2.0)


def ks_distance(a, b):
    """Two-sample Kolmogorov-Smirnov statistic: sup-norm distance of the
    empirical CDFs.  Symmetric, in [0, 1]."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValidationError("ks_distance needs nonempty samples")
    allv = np.concatenate([a, b])
    ca = np.searchsorted(a, allv, side="right") / a.size
    cb = np.searchsorted(b, allv, side="right") / b.size
    return float(np.max(np.abs(ca - cb)))


def ks_two_sample_q99(n, m):
    """Asymptotic 99% quantile of the two-sample KS statistic."""
    return _KS99_COEF * math.sqrt((n + m) / (n * m))


def wasserstein1(a, b):
    """1-D Wasserstein-1 distance between empirical measures.

    Equal sizes reduce to the mean absolute difference of the sorted
    samples; unequal sizes are handled exactly through the area between
    the empirical CDFs (equivalent to resampling both to a common size).
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValidationError("wasserstein1 needs nonempty samples")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    allv = np.sort(np.concatenate([a, b]))
    ca = np.searchsorted(a, allv[:-1], side="right") / a.size
    cb = np.searchsorted(b, allv[:-1], side="right") / b.size
    return float(np.sum(np.abs(ca - cb) * np.diff(allv)))


def check_condition_a(f: PiecewiseC2, alpha):
    """|alpha - (f1 - f2)/(f1 + f2)| for the limit scale function f."""
    return abs(float(alpha) - alpha_limit(f.u1, f.u2))


@dataclass(frozen=True)
class ResidualRow:
    eps: float
    x: float
    residual: float

    def to_dict(self):
        return {"eps": self.eps, "x": self.x, "residual": self.residual}


def _limit_sigma2(fam):
    s = fam.limit_sigma.bind(None)
    return lambda y: float(s(y)) ** 2


def check_condition_aa(fam: CoefficientFamily, eps_ladder, x_grid):
    """Residuals of the scale-measure condition: for each (eps, x)

        | int_0^x dy/(F_eps sigma_eps^2)  -  int_0^x dy/(sigma^2 Df) |.
    """
    f = fam.limit_f
    s2 = _limit_sigma2(fam)
    right_bps = (0.0,) + fam.limit_sigma.breakpoints_at(None)
    rows = []
    for eps in eps_ladder:
        smap = fam.scale_map(eps)
        se2 = fam.sigma_eps.bind(eps)
        left_fn = lambda y: 1.0 / (smap.F(y) * float(se2(y)) ** 2)
        for x in x_grid:
            left = integrate(left_fn, 0.0, float(x), breakpoints=smap.breakpoints)
            right = integrate(lambda y: 1.0 / (s2(y) * sym_deriv(f, y)),
                              0.0, float(x), breakpoints=right_bps)
            rows.append(ResidualRow(float(eps), float(x), abs(left - right)))
    return rows


def check_condition_aaa(fam: CoefficientFamily, eps_ladder, x_grid):
    """Residuals of the drift-mass condition: for each (eps, x)

        | int_0^x g_eps/sigma_eps^2  -  int_0^x [g/sigma^2 + A_f/(2 Df)] |.
    """
    f = fam.limit_f
    s2 = _limit_sigma2(fam)
    g = fam.limit_g.bind(None)
    dens = second_deriv_measure(f).density
    right_bps = (0.0,) + fam.limit_sigma.breakpoints_at(None) + fam.limit_g.breakpoints_at(None)

    def right_fn(y):
        return float(g(y)) / s2(y) + 0.5 * dens(y) / sym_deriv(f, y)

    rows = []
    for eps in eps_ladder:
        ge = fam.g_eps.bind(eps)
        se2 = fam.sigma_eps.bind(eps)
        left_bps = fam.g_eps.breakpoints_at(eps) + fam.sigma_eps.breakpoints_at(eps)
        left_fn = lambda y: float(ge(y)) / float(se2(y)) ** 2
        for x in x_grid:
            left = integrate(left_fn, 0.0, float(x), breakpoints=left_bps)
            right = integrate(right_fn, 0.0, float(x), breakpoints=right_bps)
            rows.append(ResidualRow(float(eps), float(x), abs(left - right)))
    return rows


@dataclass
class LemmaResidualReport:
    lemma: int
    n_paths: int
    dt: float
    delta: float
    max_residual: float
    mean_residual: float
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {"lemma": self.lemma, "n_paths": self.n_paths, "dt": self.dt,
                "delta": self.delta, "max_residual": self.max_residual,
                "mean_residual": self.mean_residual, **self.extra}


def verify_lemma1(u: PiecewiseC2, drift, diffusion, x0, grid, noise, delta,
                  *, chunk_floats=sim.CHUNK_FLOATS) -> LemmaResidualReport:
    """Check L^Y(T,0) = (u1+u2)/2 * L^X(T,0) for Y = u(X) on shared noise.

    The Y estimator is weighted by the diffusion coefficient of Y,
    Du(X) sigma(X), evaluated at the pre-image states, and uses the
    bandwidth delta scaled by the mean slope (u1+u2)/2.
    """
    scale = 0.5 * (u.u1 + u.u2)
    delta_y = scale * float(delta)
    sig_fn = sim._as_state_fn(diffusion, None)
    n_total = noise.n_paths
    res_sum = 0.0
    res_max = 0.0
    lx_sum = 0.0
    for lo, hi in sim._chunk_ranges(n_total, grid.n_steps, chunk_floats):
        ens_x = sim.euler_maruyama(drift, diffusion, x0, grid, noise.slice(lo, hi))
        lx = sim.estimate_local_time(ens_x, diffusion, delta,
                                     report_times=[grid.horizon]).final
        ens_y = sim.transform_ensemble(ens_x, u, label="u(X)")
        states_x = ens_x.values[:, :-1]
        sig_star = sym_deriv(u, states_x) * np.asarray(sig_fn(states_x), dtype=float)
        ly = sim.estimate_local_time(ens_y, sig_star, delta_y,
                                     report_times=[grid.horizon]).final
        r = np.abs(ly - scale * lx)
        res_sum += float(np.sum(r))
        res_max = max(res_max, float(np.max(r)))
        lx_sum += float(np.sum(lx))
    mean_res = res_sum / n_total
    mean_lx = lx_sum / n_total
    return LemmaResidualReport(
        lemma=1, n_paths=n_total, dt=grid.dt, delta=float(delta),
        max_residual=res_max, mean_residual=mean_res,
        extra={"mean_local_time_x": mean_lx,
               "relative_mean_residual": mean_res / mean_lx if mean_lx > 0 else 0.0,
               "slope_factor": scale})


def lemma3_constant(u: PiecewiseC2, beta):
    b = beta.beta if isinstance(beta, SkewParam) else float(beta)
    u1, u2 = u.u1, u.u2
    return (u2 - u1 + b * (u2 + u1)) / (u2 + u1 + b * (u2 - u1))


def verify_lemma3(u: PiecewiseC2, beta, g, sigma, x0, grid, noise, delta,
                  *, chunk_floats=sim.CHUNK_FLOATS) -> LemmaResidualReport:
    """Expectation-level check of the equation satisfied by eta = u(xi):

        E eta(T) - u(x0) - c_eta E Lhat^eta(T,0) - E int_0^T g*(eta) ds,

    where c_eta is the mapped local-time constant.  The Ito integral has
    zero mean and is not estimated pathwise; residuals per path therefore
    carry its Monte Carlo noise and only the mean is meaningful.
    """
    bp = beta if isinstance(beta, SkewParam) else SkewParam(float(beta))
    c_eta = lemma3_constant(u, bp)
    scale = 0.5 * (u.u1 + u.u2)
    delta_eta = scale * float(delta)
    g_fn = sim._as_state_fn(g, None)
    sig_fn = sim._as_state_fn(sigma, None)
    measure = second_deriv_measure(u)
    dt = grid.dt
    n_total = noise.n_paths
    balances = []
    lsum = 0.0
    for lo, hi in sim._chunk_ranges(n_total, grid.n_steps, chunk_floats):
        ens_xi = sim.simulate_skew_sde(bp, g, sigma, x0, grid, noise.slice(lo, hi))
        ens_eta = sim.transform_ensemble(ens_xi, u, label="u(xi)")
        states_xi = ens_xi.values[:, :-1]
        du = sym_deriv(u, states_xi)
        sig_xi = np.asarray(sig_fn(states_xi), dtype=float)
        sig_star = du * sig_xi
        l_eta = sim.estimate_local_time(ens_eta, sig_star, delta_eta,
                                        report_times=[grid.horizon]).final
        # g*(eta_k) evaluated through the pre-image states
        g_star = du * np.asarray(g_fn(states_xi), dtype=float) \
            + 0.5 * sig_xi ** 2 * measure.density(states_xi)
        drift_int = np.sum(g_star, axis=1) * dt
        balances.append(ens_eta.terminal - float(u(float(x0)))
                        - c_eta * l_eta - drift_int)
        lsum += float(np.sum(l_eta))
    bal = np.concatenate(balances)
    mean_res = abs(float(np.mean(bal)))
    halfwidth = 3.0 * float(np.std(bal)) / math.sqrt(n_total)
    return LemmaResidualReport(
        lemma=3, n_paths=n_total, dt=dt, delta=float(delta),
        max_residual=float(np.max(np.abs(bal))), mean_residual=mean_res,
        extra={"mc_halfwidth": halfwidth, "local_time_constant": c_eta,
               "mean_local_time_eta": lsum / n_total})


def _ladder_ok(values, tol, slack):
    """Nonincreasing along the ladder within slack, final below tol."""
    v = list(values)
    mono = all(v[i + 1] <= v[i] + slack for i in range(len(v) - 1))
    return mono and v[-1] <= tol


@dataclass
class ConditionReport:
    alpha: float
    alpha_formula: float
    alpha_residual: float
    aa_rows: list
    aaa_rows: list
    eps_ladder: list
    x_grid: list
    residual_tol: float = RESIDUAL_TOL
    alpha_tol: float = ALPHA_TOL

    @property
    def pass_a(self):
        return self.alpha_residual <= self.alpha_tol

    def _pass_rows(self, rows):
        for x in self.x_grid:
            ladder = [r.residual for r in rows if r.x == x]
            if not _ladder_ok(ladder, self.residual_tol, RESIDUAL_SLACK):
                return False
        return True

    @property
    def pass_aa(self):
        return self._pass_rows(self.aa_rows)

    @property
    def pass_aaa(self):
        return self._pass_rows(self.aaa_rows)

    @property
    def verdict(self):
        return "pass" if (self.pass_a and self.pass_aa and self.pass_aaa) else "fail"

    def to_dict(self):
        return {
            "condition_a": {"alpha": self.alpha, "alpha_formula": self.alpha_formula,
                            "residual": self.alpha_residual, "tol": self.alpha_tol,
                            "pass": self.pass_a},
            "condition_aa": [r.to_dict() for r in self.aa_rows],
            "condition_aaa": [r.to_dict() for r in self.aaa_rows],
            "residual_tol": self.residual_tol,
            "condition_verdict": self.verdict,
        }


@dataclass
class DistanceRow:
    eps: float
    ks: float
    w1: float
    n_paths: int
    ks_halfwidth: float
    w1_halfwidth: float

    def to_dict(self):
        return {"eps": self.eps, "ks": self.ks, "w1": self.w1,
                "n_paths": self.n_paths, "ks_halfwidth": self.ks_halfwidth,
                "w1_halfwidth": self.w1_halfwidth}


@dataclass
class WeakDistanceReport:
    rows: list
    ks_threshold: float
    ks_factor: float = KS_FACTOR

    @property
    def pass_final(self):
        return self.rows[-1].ks <= self.ks_threshold

    @property
    def pass_monotone(self):
        ks = [r.ks for r in self.rows]
        slack = [r.ks_halfwidth for r in self.rows]
        return all(ks[i + 1] <= ks[i] + slack[i + 1] for i in range(len(ks) - 1))

    @property
    def verdict(self):
        return "pass" if (self.pass_final and self.pass_monotone) else "fail"

    def to_dict(self):
        return {"weak_distances": [r.to_dict() for r in self.rows],
                "ks_threshold": self.ks_threshold,
                "distance_verdict": self.verdict}


def _rung_seeds(master_seed, count):
    return [int(s) for s in SeedSequence(master_seed).generate_state(count, np.uint64)]


def convergence_study(fam: CoefficientFamily, eps_ladder, x0, grid, n_paths,
                      master_seed, *, alpha=None, x_grid=(-1.0, -0.5, 0.5, 1.0),
                      residual_tol=RESIDUAL_TOL, ks_factor=KS_FACTOR,
                      chunk_floats=sim.CHUNK_FLOATS):
    """Full verification run for one coefficient family.

    Checks the three limit conditions over the ladder, simulates the
    prelimit process at every eps (with the step rule dt <= eps^2/10
    enforced by refining the grid) and the limit skew process once, and
    measures terminal-value KS/W1 distances per rung.  Each rung and the
    limit use disjoint seed-derived noise streams so the two-sample
    statistics see independent samples.
    """
    eps_ladder = [float(e) for e in eps_ladder]
    if any(e2 >= e1 for e1, e2 in zip(eps_ladder, eps_ladder[1:])):
        raise ValidationError("eps_ladder must be strictly decreasing")
    f = fam.limit_f
    alpha_formula = alpha_limit(f.u1, f.u2)
    alpha_used = alpha_formula if alpha is None else float(alpha)

    cond = ConditionReport(
        alpha=alpha_used, alpha_formula=alpha_formula,
        alpha_residual=check_condition_a(f, alpha_used),
        aa_rows=check_condition_aa(fam, eps_ladder, x_grid),
        aaa_rows=check_condition_aaa(fam, eps_ladder, x_grid),
        eps_ladder=list(eps_ladder), x_grid=[float(x) for x in x_grid],
        residual_tol=residual_tol)

    seeds = _rung_seeds(master_seed, len(eps_ladder) + 1)
    limit_noise = sim.gen_noise(seeds[0], grid, n_paths)
    limit_term = sim.skew_terminal(alpha_used, fam.limit_g, fam.limit_sigma,
                                   x0, grid, limit_noise,
                                   chunk_floats=chunk_floats)["terminal"]
    rows = []
    for k, eps in enumerate(eps_ladder):
        n_req = int(math.ceil(grid.horizon / (sim.STEP_SAFETY * eps ** 2) - 1e-9))
        grid_e = grid if grid.n_steps >= n_req else sim.TimeGrid(grid.horizon, n_req)
        noise_e = sim.gen_noise(seeds[k + 1], grid_e, n_paths)
        term = sim.eps_family_terminal(fam, eps, x0, grid_e, noise_e,
                                       chunk_floats=chunk_floats)["terminal"]
        pooled_std = float(np.std(np.concatenate([term, limit_term])))
        rows.append(DistanceRow(
            eps=eps, ks=ks_distance(term, limit_term),
            w1=wasserstein1(term, limit_term), n_paths=n_paths,
            ks_halfwidth=ks_two_sample_q99(n_paths, n_paths),
            w1_halfwidth=3.0 * pooled_std / math.sqrt(n_paths)))
    weak = WeakDistanceReport(rows=rows,
                              ks_threshold=ks_factor * ks_two_sample_q99(n_paths, n_paths),
                              ks_factor=ks_factor)
    return cond, weak


def study_verdict(cond: ConditionReport, weak: WeakDistanceReport):
    return "pass" if (cond.verdict == "pass" and weak.verdict == "pass") else "fail"


def study_report(cond: ConditionReport, weak: WeakDistanceReport, config_echo=None):
    """Single JSON-serializable document combining both reports."""
    doc = {}
    doc.update(cond.to_dict())
    doc.update(weak.to_dict())
    doc["verdict"] = study_verdict(cond, weak)
    doc["config_echo"] = config_echo if config_echo is not None else {}
    return doc


def write_report(doc, fp):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if isinstance(fp, (str, bytes)):
        with open(fp, "w") as handle:
            handle.write(text)
    else:
        fp.write(text)
