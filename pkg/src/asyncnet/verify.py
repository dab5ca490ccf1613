"""Named verification suites: analytic claims checked against simulation.

Each suite returns a list of :class:`Check` rows carrying the measured
value, the tolerance it was held to and a pass/fail status.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import engine
from .costs import DataSample, QuadraticCost
from .engine import NetworkState, Scenario, atc_step, error_step, run_experiment, steady_state
from .netmodel import (Bernoulli, Beta, CombinationModel, Constant, StepSizeModel, analytic_moments,
                       check_left_stochastic, empirical_moments, link_covariance_pattern, neighborhood_union,
                       required_union_samples)
from .stability import bound_envelope, fourth_bound, required_horizon

SUITES = ("moments", "lemmas", "recursion", "bounds", "scaling", "fourth")
SCALING_FACTORS = (0.4, 0.2, 0.1)
MOMENT_SAMPLES = 100_000
RECURSION_STEPS = 500
ABS_FLOOR = 1e-12


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    @property
    def status(self) -> str:
        return "pass" if self.passed else "fail"

    def line(self) -> str:
        return (f"[{self.status.upper()}] {self.suite}/{self.name}: measured={self.measured:.6g} "
                f"tolerance={self.tolerance:.6g}" + (f" ({self.detail})" if self.detail else ""))


def _rng(seed: int, tag: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *tag.encode()]))


def scale_steps(sm: StepSizeModel, factor: float) -> StepSizeModel:
    """Multiply every agent's step-size upper limit by ``factor``, keeping the shape of its law."""
    out = []
    for d in sm.agents:
        if isinstance(d, Constant):
            out.append(Constant(d.mu * factor))
        elif isinstance(d, Bernoulli):
            out.append(Bernoulli(d.q, d.mu * factor))
        elif isinstance(d, Beta):
            out.append(Beta(d.xi, d.zeta, d.mu * factor))
        else:
            raise TypeError(f"cannot rescale a {type(d).__name__} step law")
    return StepSizeModel(out)


def _scenario(cfg) -> Scenario:
    return cfg if isinstance(cfg, Scenario) else cfg.scenario()


def _run_settings(cfg, n_trials, horizon, seed, window_fraction):
    run = getattr(cfg, "run", None)
    return (n_trials if n_trials is not None else (run.n_trials if run else 200),
            horizon if horizon is not None else (run.horizon if run else 2000),
            seed if seed is not None else (run.base_seed if run else 0),
            window_fraction if window_fraction is not None else (run.window_fraction if run else 0.5))


# --- moments -----------------------------------------------------------------

def _within_se(suite, name, analytic, emp, se, n_se=3.0) -> Check:
    analytic, emp, se = (np.asarray(x, dtype=float) for x in (analytic, emp, se))
    excess = np.abs(analytic - emp) - n_se * se
    worst = float(np.max(excess))
    z = np.abs(analytic - emp) / np.where(se > 0, se, np.inf)
    return Check(suite, name, worst <= ABS_FLOOR, float(np.max(z)), n_se,
                 f"max |analytic - empirical| / SE over {analytic.size} entries")


def suite_moments(cfg, seed: int = 0, n_samples: int = MOMENT_SAMPLES) -> list[Check]:
    scn = _scenario(cfg)
    graph = scn.graph
    ms = analytic_moments(graph, scn.step_model, scn.comb_model)
    em = empirical_moments(graph, scn.step_model, scn.comb_model, n_samples, _rng(seed, "moments"))
    s = "moments"
    checks = [
        _within_se(s, "step moments m1 m2 m4", ms.mu_moments, em.mean.mu_moments, em.se.mu_moments),
        _within_se(s, "Mbar", ms.Mbar, em.mean.Mbar, em.se.Mbar),
        _within_se(s, "C_M", ms.C_M, em.mean.C_M, em.se.C_M),
        _within_se(s, "Abar", ms.Abar, em.mean.Abar, em.se.Abar),
        _within_se(s, "C_A", ms.C_A_dense(), em.mean.C_A, em.se.C_A),
        _within_se(s, "E[A(x)A]", ms.second_moment_A(), em.EAA, em.EAA_se),
        _within_se(s, "cov(mu, A) is zero", np.zeros_like(em.cross_cov), em.cross_cov, em.cross_cov_se),
    ]
    rep = check_left_stochastic(ms)
    checks.append(Check(s, "Abar column sums", rep.measured["abar_colsum_dev"] <= 1e-12,
                        rep.measured["abar_colsum_dev"], 1e-12))
    checks.append(Check(s, "Abar(x)Abar + C_A column sums", rep.measured["second_colsum_dev"] <= 1e-12,
                        rep.measured["second_colsum_dev"], 1e-12, "; ".join(rep.failures)))
    return checks


# --- lemmas ------------------------------------------------------------------

def suite_lemmas(cfg, seed: int = 0, n_samples: int = 10_000) -> list[Check]:
    scn = _scenario(cfg)
    graph, cm = scn.graph, scn.comb_model
    ms = analytic_moments(graph, scn.step_model, cm)
    s = "lemmas"
    checks = []
    rep = check_left_stochastic(ms)
    checks.append(Check(s, "left-stochastic Abar and E[A(x)A]", rep.passed,
                        max(rep.measured.values()), 1e-12, "; ".join(rep.failures)))
    As = cm.sample(_rng(seed, "realizations"), n_samples)
    dev = float(np.max(np.abs(As.sum(axis=1) - 1)))
    checks.append(Check(s, "every realized A_i left-stochastic", dev <= 1e-12 and bool(np.all(As >= 0)), dev, 1e-12,
                        f"{n_samples} draws"))
    need = max(required_union_samples(cm), 1000)
    union = neighborhood_union(graph, cm, need, _rng(seed, "union"))
    missing = sum(len(exp - got) + len(got - exp) for got, exp in union.values())
    checks.append(Check(s, "union of realized neighborhoods equals mean graph", missing == 0, missing, 0,
                        f"{need} draws"))
    outside = np.abs(ms.C_A_dense()) * ~link_covariance_pattern(graph)
    checks.append(Check(s, "C_A zero outside the link pattern", float(outside.max()) == 0.0,
                        float(outside.max()), 0.0))
    return checks


# --- recursion ---------------------------------------------------------------

def recursion_gap(scn: Scenario, steps: int, seed: int) -> float:
    """Largest relative gap between the direct and error-form trajectories on shared draws."""
    streams = engine.trial_streams(seed)
    blk = engine.draw_block(scn, streams, steps)
    w_opt = scn.w_opt
    state = NetworkState.initial(scn.w_init)
    err = np.array([np.concatenate([w_opt - w, np.conj(w_opt - w)]) for w in scn.w_init])
    M = scn.dim
    worst = 0.0
    for i in range(steps):
        data = [DataSample(u=blk.u[i, k], d=blk.d[i, k]) for k in range(scn.n_agents)]
        # gradient noise evaluated on the error-form state so the two paths stay independent
        w_err = w_opt[None, :] - err[:, :M]
        noise = np.array([c.stochastic_gradient(w_err[k], data[k]) - c.gradient(w_err[k])
                          for k, c in enumerate(scn.costs)])
        state = atc_step(state, blk.A[i], blk.mu[i], data, scn.costs)
        err = error_step(err, blk.A[i], blk.mu[i], noise, scn.costs)
        direct = w_opt[None, :] - state.w
        scale = max(float(np.linalg.norm(direct)), ABS_FLOOR)
        worst = max(worst, float(np.linalg.norm(direct - err[:, :M])) / scale)
    return worst


def lms_gap(cost: QuadraticCost, mu: float, steps: int, seed: int) -> float:
    """Single agent with ``A_i = 1`` against a plain LMS loop on the same draws.

    Returns the largest gap relative to ``max(1, ||w||)``.
    """
    rng = _rng(seed, "lms")
    u = cost.sample_regressors(rng, (steps,))
    d = u @ cost.w_opt + rng.normal(size=steps) * math.sqrt(cost.sigma_n_sq)
    state = NetworkState.initial(np.zeros((1, cost.dim)))
    w = np.zeros(cost.dim, dtype=complex)
    worst = 0.0
    for i in range(steps):
        e = d[i] - sum(u[i, m] * w[m] for m in range(cost.dim))
        w = w + mu * np.conj(u[i]) * e
        state = atc_step(state, np.eye(1), [mu], [DataSample(u[i], d[i])], [cost])
        worst = max(worst, float(np.linalg.norm(state.w[0] - w)) / max(1.0, float(np.linalg.norm(w))))
    return worst


def suite_recursion(cfg, seed: int = 0, steps: int = RECURSION_STEPS) -> list[Check]:
    scn = _scenario(cfg)
    s = "recursion"
    gap = recursion_gap(scn, steps, seed)
    checks = [Check(s, "direct vs error-form trajectories", gap <= 1e-10, gap, 1e-10,
                    f"relative, {steps} steps on shared draws")]
    lg = lms_gap(scn.costs[0], float(scn.step_model.upper[0]), steps, seed)
    checks.append(Check(s, "single agent equals plain LMS", lg <= 1e-12, lg, 1e-12, "relative"))
    exact = [QuadraticCost(c.R_u, c.w_opt, 0.0) for c in scn.costs]
    still = Scenario(exact, scn.step_model, scn.comb_model, scn.noise,
                     np.tile(scn.w_opt, (scn.n_agents, 1)))
    ser = engine.simulate_trials(still, [seed], 200)
    drift = float(ser.msd.max())
    # random weights sum to one only up to rounding
    tol = 1e-24 * max(1.0, float(np.sum(np.abs(scn.w_opt) ** 2)))
    checks.append(Check(s, "w_opt is a fixed point with exact data", drift <= tol, drift, tol,
                        "squared deviation over 200 steps"))
    return checks


# --- bounds ------------------------------------------------------------------

def _stable_horizon(scn, report, horizon, window_fraction):
    return max(horizon, required_horizon(report, scn.eps0_sq(), window_fraction))


def bound_checks(scn: Scenario, rec, report, window_fraction: float, suite: str = "bounds") -> list[Check]:
    ss = steady_state(rec, window_fraction)["msd_max"]
    env = bound_envelope(report, scn.eps0_sq(), rec.horizon)
    bnu = report.msd_bound
    excess = rec.msd_max - (env.values + 2 * rec.msd_max_se)
    worst = int(np.argmax(excess))
    return [
        Check(suite, "steady msd_max + 2 SE <= b*nu_o", ss.value + 2 * ss.se <= bnu, ss.value, bnu,
              f"SE={ss.se:.3g}, {rec.n_trials} trials x {rec.horizon} iterations"),
        Check(suite, "steady msd_max <= envelope limit + 2 SE", ss.value <= env.limit + 2 * ss.se, ss.value,
              env.limit, f"SE={ss.se:.3g}"),
        Check(suite, "msd_max(i) <= envelope(i) + 2 SE for every i", bool(np.all(excess <= 0)),
              float(excess[worst]), 0.0, f"worst at iteration {worst}"),
        Check(suite, "no trial diverged", not rec.diverged.any(), int(rec.diverged.sum()), 0),
    ]


def divergence_checks(rec, suite: str = "bounds", limit: float = 1e6, within: int = 1000) -> list[Check]:
    arrays = (rec.msd, rec.msd_se, rec.m4, rec.msd_max, rec.disagreement_mean, rec.peak_msd)
    finite = all(np.all(np.isfinite(a)) for a in arrays)
    hit = int(np.count_nonzero(rec.peak_msd > limit))
    return [
        Check(suite, f"msd_max above {limit:g} within {within} iterations", hit >= 1, hit, 1,
              f"trials crossing, out of {rec.n_trials}"),
        Check(suite, "divergence flagged", bool(rec.diverged.any()), int(rec.diverged.sum()), 1),
        Check(suite, "outputs finite", finite, float(finite), 1.0),
    ]


def suite_bounds(cfg, n_trials=None, horizon=None, seed=None, window_fraction=None) -> list[Check]:
    scn = _scenario(cfg)
    n_trials, horizon, seed, wf = _run_settings(cfg, n_trials, horizon, seed, window_fraction)
    report = scn.report()
    if not report.ms_condition:
        # negative control: an unstable configuration must visibly diverge
        rec = run_experiment(scn, n_trials, min(horizon, 1000), seed)
        factor = float(np.max(report.gamma_sq + report.alpha * report.mu_m2))
        return [Check("bounds", "condition violated (negative control)", factor > 1, factor, 1.0,
                      "max_k 1 - 2 mu lam_min + m2 (lam_max^2 + alpha)")] + divergence_checks(rec)
    T = _stable_horizon(scn, report, horizon, wf)
    rec = run_experiment(scn, n_trials, T, seed)
    return bound_checks(scn, rec, report, wf)


# --- scaling -----------------------------------------------------------------

@dataclass(frozen=True)
class ScalingPoint:
    factor: float
    nu: float
    msd: float
    msd_se: float
    disagreement: float
    disagreement_se: float
    horizon: int

    @property
    def ratio(self) -> float:
        return self.disagreement / self.msd

    @property
    def ratio_se(self) -> float:
        return self.ratio * math.hypot(self.disagreement_se / self.disagreement, self.msd_se / self.msd)


def scaling_sweep(cfg, factors=SCALING_FACTORS, n_trials=None, horizon=None, seed=None,
                  window_fraction=None) -> list[ScalingPoint]:
    """Steady-state MSD and disagreement with the step-sizes scaled by each of ``factors``.

    When the configuration itself violates the mean-square condition the
    factors apply to the first halving of it that satisfies the condition.
    """
    n_trials, horizon, seed, wf = _run_settings(cfg, n_trials, horizon, seed, window_fraction)
    scn, base = shrink_until(cfg, lambda r: r.ms_condition)
    points = []
    for f in factors:
        sc = scn.with_steps(scale_steps(scn.step_model, f))
        report = sc.report()
        if not report.ms_condition:
            raise ValueError(f"step-size factor {f} does not satisfy the mean-square condition")
        T = _stable_horizon(sc, report, horizon, wf)
        ss = steady_state(run_experiment(sc, n_trials, T, seed), wf)
        points.append(ScalingPoint(f * base, report.nu, ss["msd_max"].value, ss["msd_max"].se,
                                   ss["disagreement_mean"].value, ss["disagreement_mean"].se, T))
    return points


def loglog_slope(points) -> float:
    x = np.log([p.nu for p in points])
    y = np.log([p.msd for p in points])
    return float(np.polyfit(x, y, 1)[0])


def suite_scaling(cfg, n_trials=None, horizon=None, seed=None, window_fraction=None) -> list[Check]:
    pts = scaling_sweep(cfg, n_trials=n_trials, horizon=horizon, seed=seed, window_fraction=window_fraction)
    slope = loglog_slope(pts)
    desc = ", ".join(f"nu={p.nu:.4g}: msd={p.msd:.4g}" for p in pts)
    if pts[0].factor != SCALING_FACTORS[0]:
        desc += f"; base step-sizes scaled by {pts[0].factor / SCALING_FACTORS[0]:g} first"
    checks = [Check("scaling", "log-log slope of steady msd_max vs nu in [0.8, 1.2]", 0.8 <= slope <= 1.2,
                    slope, 0.2, desc)]
    ordered = sorted(pts, key=lambda p: -p.nu)
    for hi, lo in zip(ordered, ordered[1:]):
        gap = hi.ratio - lo.ratio
        se = math.hypot(hi.ratio_se, lo.ratio_se)
        checks.append(Check("scaling", f"disagreement/msd drops from nu={hi.nu:.4g} to nu={lo.nu:.4g}",
                            gap > 2 * se, gap, 2 * se,
                            f"ratios {hi.ratio:.4g} and {lo.ratio:.4g}"))
    return checks


# --- fourth order ------------------------------------------------------------

def shrink_until(cfg, accept, max_halvings: int = 20) -> tuple[Scenario, float]:
    """The configuration itself, or its step-sizes halved until ``accept(report)`` holds."""
    scn = _scenario(cfg)
    factor = 1.0
    for _ in range(max_halvings + 1):
        sc = scn if factor == 1.0 else scn.with_steps(scale_steps(scn.step_model, factor))
        if accept(sc.report()):
            return sc, factor
        factor /= 2
    raise ValueError(f"condition not reached after {max_halvings} halvings of the step-sizes")


def fourth_order_scenario(cfg) -> tuple[Scenario, float]:
    return shrink_until(cfg, lambda r: r.fourth_condition)


def suite_fourth(cfg, n_trials=None, horizon=None, seed=None, window_fraction=None) -> list[Check]:
    n_trials, horizon, seed, wf = _run_settings(cfg, n_trials, horizon, seed, window_fraction)
    scn, factor = fourth_order_scenario(cfg)
    report = scn.report()
    bound = fourth_bound(report)
    T = _stable_horizon(scn, report, horizon, wf)
    ss = steady_state(run_experiment(scn, n_trials, T, seed), wf)["m4_max"]
    return [Check("fourth", "steady max_k E||w~||^4 <= b4^2 nu^2 + 2 SE", ss.value <= bound + 2 * ss.se,
                  ss.value, bound, f"step-sizes scaled by {factor:g}; SE={ss.se:.3g}")]


def run_suite(cfg, name: str, **kw) -> list[Check]:
    if name == "all":
        return [c for s in SUITES for c in run_suite(cfg, s, **kw)]
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES + ('all',))}")
    seed = kw.get("seed")
    seed = seed if seed is not None else _run_settings(cfg, None, None, None, None)[2]
    if name == "moments":
        return suite_moments(cfg, seed=seed)
    if name == "lemmas":
        return suite_lemmas(cfg, seed=seed)
    if name == "recursion":
        return suite_recursion(cfg, seed=seed)
    fn = {"bounds": suite_bounds, "scaling": suite_scaling, "fourth": suite_fourth}[name]
    return fn(cfg, **kw)
