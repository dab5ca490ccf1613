"""Mean-square and fourth-order stability conditions and the resulting MSD bounds."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .costs import NoiseParams, QuadraticCost
from .netmodel import Bernoulli, Beta, Constant, MomentSet

MARGIN_GUARD = 1e-12

PASS, FAIL, MARGINAL = "pass", "fail", "marginal"


def compare(lhs: float, rhs: float, guard: float = MARGIN_GUARD) -> str:
    """Strict ``lhs < rhs`` with a relative guard band reported as marginal."""
    band = guard * max(abs(lhs), abs(rhs))
    if lhs < rhs - band:
        return PASS
    if lhs > rhs + band:
        return FAIL
    return MARGINAL


def _all(verdicts) -> str:
    verdicts = list(verdicts)
    if any(v == FAIL for v in verdicts):
        return FAIL
    if any(v == MARGINAL for v in verdicts):
        return MARGINAL
    return PASS


@dataclass(frozen=True)
class StabilityReport:
    """Per-agent and network-level quantities of the stability analysis.

    ``ms_status`` gates mean-square stability through the per-agent moment
    condition; ``ms_relaxed_status`` is the weaker condition that only
    ensures ``|beta| < 1``. ``fourth_status`` is the fourth-order condition.
    """

    lam_min: np.ndarray
    lam_max: np.ndarray
    mu_bar: np.ndarray
    c_mu: np.ndarray
    mu_m2: np.ndarray
    mu_m4: np.ndarray
    alpha: float
    sigma_v_sq: float
    gamma_sq: np.ndarray
    beta: float
    theta: float
    kappa: float
    nu_o: float
    b: float
    nu: float
    b4: float
    ms_ratio: np.ndarray
    ms_threshold: np.ndarray
    fourth_ratio: np.ndarray
    fourth_threshold: np.ndarray
    ms_status: str
    ms_relaxed_status: str
    fourth_status: str
    beta_stable: bool
    ms_sufficient: bool | None = None

    @property
    def n_agents(self) -> int:
        return self.mu_bar.size

    @property
    def ms_condition(self) -> bool:
        return self.ms_status == PASS

    @property
    def fourth_condition(self) -> bool:
        return self.fourth_status == PASS

    @property
    def steady_state_limit(self) -> float:
        """``theta sigma_v^2 / (1 - beta)``; infinite when ``beta >= 1``."""
        if not self.beta_stable:
            return math.inf
        return self.theta * self.sigma_v_sq / (1 - self.beta)

    @property
    def msd_bound(self) -> float:
        """``b * nu_o``."""
        return self.b * self.nu_o

    def scalar_items(self) -> dict:
        return {
            "n_agents": self.n_agents,
            "alpha": self.alpha,
            "sigma_v_sq": self.sigma_v_sq,
            "beta": self.beta,
            "theta": self.theta,
            "kappa": self.kappa,
            "nu_o": self.nu_o,
            "b": self.b,
            "nu": self.nu,
            "b4": self.b4,
            "msd_bound": self.msd_bound,
            "steady_state_limit": self.steady_state_limit,
            "fourth_bound": self.b4 ** 2 * self.nu ** 2,
            "beta_stable": self.beta_stable,
            "ms_condition": self.ms_status,
            "ms_relaxed": self.ms_relaxed_status,
            "ms_sufficient": self.ms_sufficient,
            "fourth_condition": self.fourth_status,
        }

    def agent_rows(self) -> list[dict]:
        rows = []
        for k in range(self.n_agents):
            rows.append({
                "agent": k,
                "lambda_min": self.lam_min[k],
                "lambda_max": self.lam_max[k],
                "mu_bar": self.mu_bar[k],
                "c_mu": self.c_mu[k],
                "mu_m2": self.mu_m2[k],
                "mu_m4": self.mu_m4[k],
                "gamma_sq": self.gamma_sq[k],
                "ms_ratio": self.ms_ratio[k],
                "ms_threshold": self.ms_threshold[k],
                "fourth_ratio": self.fourth_ratio[k],
                "fourth_threshold": self.fourth_threshold[k],
            })
        return rows


def build_report(costs, noise: NoiseParams, ms: MomentSet, mu_upper=None) -> StabilityReport:
    """Evaluate every stability quantity from per-agent costs and step-size moments.

    Parameters
    ----------
    costs : sequence of QuadraticCost, or sequence of ``(lam_min, lam_max)`` pairs
    noise : NoiseParams
        Network-wide gradient-noise constants.
    ms : MomentSet
        Needs ``mu_moments`` with rows ``(m1, m2, m4)``.
    mu_upper : array, optional
        Step-size upper limits ``mu_k``; enables the ``ms_sufficient`` flag.
    """
    bounds = np.array([c.hessian_bounds() if isinstance(c, QuadraticCost) else tuple(c) for c in costs],
                      dtype=float)
    if bounds.shape != (ms.n_agents, 2):
        raise ValueError(f"expected {ms.n_agents} cost bounds, got shape {bounds.shape}")
    lam_min, lam_max = bounds[:, 0], bounds[:, 1]
    m1, m2, m4 = (np.asarray(ms.mu_moments[:, j], dtype=float) for j in range(3))
    zero = np.flatnonzero(m1 <= 0)
    if zero.size:
        raise ValueError(f"agent {int(zero[0])} has zero mean step-size; the moment ratios are undefined")
    alpha, sv = float(noise.alpha), float(noise.sigma_v_sq)
    c_mu = m2 - m1 ** 2
    gamma_sq = 1 - 2 * m1 * lam_min + m2 * lam_max ** 2
    beta = float(np.max(gamma_sq + alpha * m2))
    theta = float(np.max(m2))
    kappa = float(np.max(m1) / np.min(m1))
    ms_ratio = m2 / m1
    ms_threshold = lam_min / (alpha + lam_max ** 2)
    fourth_ratio = np.sqrt(m4) / m1
    fourth_threshold = lam_min / (3 * lam_max ** 2 + 4 * alpha)
    nu_o = float(np.max(ms_ratio))
    nu = float(np.max(fourth_ratio))
    lmin = float(np.min(lam_min))

    ms_status = _all(compare(r, t) for r, t in zip(ms_ratio, ms_threshold))
    relaxed = _all(compare(r, 2 * t) for r, t in zip(ms_ratio, ms_threshold))
    fourth_status = _all(compare(r, t) for r, t in zip(fourth_ratio, fourth_threshold))
    if ms_status == PASS and not abs(beta) < 1:
        raise AssertionError("mean-square condition holds but |beta| >= 1")
    if fourth_status == PASS and ms_status != PASS:
        raise AssertionError("fourth-order condition holds but the mean-square condition does not")
    if nu_o > nu * (1 + 1e-12):
        raise AssertionError(f"nu_o={nu_o} exceeds nu={nu}")

    sufficient = None
    if mu_upper is not None:
        mu_upper = np.asarray(mu_upper, dtype=float)
        if np.any(ms_ratio > mu_upper * (1 + 1e-12)):
            raise AssertionError("moment ratio exceeds the step-size upper limit")
        sufficient = _all(compare(u, t) for u, t in zip(mu_upper, ms_threshold)) == PASS
    return StabilityReport(
        lam_min=lam_min, lam_max=lam_max, mu_bar=m1, c_mu=c_mu, mu_m2=m2, mu_m4=m4,
        alpha=alpha, sigma_v_sq=sv, gamma_sq=gamma_sq, beta=beta, theta=theta, kappa=kappa,
        nu_o=nu_o, b=kappa * sv / lmin, nu=nu, b4=3 * sv * (kappa + 1) / lmin,
        ms_ratio=ms_ratio, ms_threshold=ms_threshold,
        fourth_ratio=fourth_ratio, fourth_threshold=fourth_threshold,
        ms_status=ms_status, ms_relaxed_status=relaxed, fourth_status=fourth_status,
        beta_stable=bool(abs(beta) < 1), ms_sufficient=sufficient,
    )


def model_bound(dist, lam_min: float, lam_max: float, alpha: float) -> float:
    """Largest admissible step-size upper limit ``mu_k`` for one agent's step model.

    Constant and Bernoulli steps share the deterministic bound
    ``lam_min / (alpha + lam_max^2)``. A Beta step with ``zeta = phi * xi``
    widens it by ``1 + phi xi / (1 + xi)``.
    """
    base = lam_min / (alpha + lam_max ** 2)
    if isinstance(dist, (Constant, Bernoulli)):
        return base
    if isinstance(dist, Beta):
        bound = (1 + dist.zeta / (1 + dist.xi)) * base
        if not bound > base:
            raise AssertionError("Beta bound must exceed the Bernoulli bound")
        return bound
    raise TypeError(f"no closed-form bound for {type(dist).__name__}")


@dataclass(frozen=True)
class Envelope:
    values: np.ndarray  # values[t] bounds max_k MSD after t iterations (t = 0 is the initial condition)
    limit: float
    closed_bound: float
    divergent: bool


def bound_envelope(report: StabilityReport, eps0_sq: float, horizon: int,
                   sigma_v_sq: float | None = None) -> Envelope:
    """Solution of ``eps(i) = beta eps(i-1) + theta sigma_v^2`` from ``eps(-1) = eps0_sq``.

    ``values`` has ``horizon + 1`` entries: index ``t`` is the bound after
    ``t`` iterations, so index 0 is ``eps0_sq``.
    """
    if eps0_sq < 0:
        raise ValueError("eps0_sq must be nonnegative")
    sv = report.sigma_v_sq if sigma_v_sq is None else float(sigma_v_sq)
    beta, theta = report.beta, report.theta
    t = np.arange(horizon + 1, dtype=float)
    if not abs(beta) < 1:
        with np.errstate(over="ignore"):
            vals = beta ** t * eps0_sq + theta * sv * t
        return Envelope(values=vals, limit=math.inf, closed_bound=report.msd_bound, divergent=True)
    bt = beta ** t
    limit = theta * sv / (1 - beta)
    vals = bt * eps0_sq + limit * (1 - bt)
    closed = report.msd_bound
    if report.ms_condition and limit > closed + 1e-12:
        raise AssertionError(f"envelope limit {limit} exceeds b*nu_o = {closed}")
    return Envelope(values=vals, limit=limit, closed_bound=closed, divergent=False)


def fourth_bound(report: StabilityReport) -> float:
    """``b4^2 nu^2``; refuses when the fourth-order condition does not hold."""
    if not report.fourth_condition:
        bad = int(np.argmax(report.fourth_ratio / report.fourth_threshold))
        raise ValueError(
            f"fourth-order condition {report.fourth_status} at agent {bad}: "
            f"sqrt(m4)/m1 = {report.fourth_ratio[bad]:.6g} vs threshold {report.fourth_threshold[bad]:.6g}"
        )
    return report.b4 ** 2 * report.nu ** 2


def required_horizon(report: StabilityReport, eps0_sq: float, window_fraction: float,
                     transient_frac: float = 0.01) -> int:
    """Horizon after which the envelope transient is below ``transient_frac`` of its limit over the window."""
    if not report.beta_stable or report.beta <= 0:
        raise ValueError("transient is undefined unless 0 < beta < 1")
    limit = report.steady_state_limit
    if eps0_sq <= 0 or limit <= 0 or eps0_sq <= transient_frac * limit:
        return 10
    start = math.log(transient_frac * limit / eps0_sq) / math.log(report.beta)
    return int(math.ceil(start / (1 - window_fraction)))


# --- serialization -----------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)) or v is None or isinstance(v, str):
        return str(v)
    return repr(float(v))


def write_report(report: StabilityReport, txt_path, csv_path) -> None:
    with open(txt_path, "w") as fh:
        for key, val in report.scalar_items().items():
            fh.write(f"{key}={_fmt(val)}\n")
    rows = report.agent_rows()
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (v if k == "agent" else _fmt(v)) for k, v in r.items()})


def read_report_scalars(txt_path) -> dict:
    out = {}
    with open(txt_path) as fh:
        for line in fh:
            key, _, val = line.rstrip("\n").partition("=")
            try:
                out[key] = float(val)
            except ValueError:
                out[key] = {"True": True, "False": False, "None": None}.get(val, val)
    return out
