"""Asynchronous adapt-then-combine diffusion and Monte-Carlo experiments.

Each trial owns three random streams (combination weights, step-sizes, data)
derived from ``base_seed ^ trial``. Trials are simulated in fixed-size chunks so
that the arithmetic applied to a trial never depends on the worker count;
chunks may run on parallel threads and are reduced in trial order afterwards.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from . import crcalc
from .costs import DataSample, NoiseParams, QuadraticCost, circular_normal
from .netmodel import CombinationModel, MeanGraph, StepSizeModel, analytic_moments
from .stability import StabilityReport, build_report

DIVERGENCE_THRESHOLD = 1e12
CHUNK_TRIALS = 16
DRAW_BLOCK = 256
THREADS_ENV = "ASYNCNET_THREADS"


@dataclass(frozen=True, eq=False)
class Scenario:
    """Everything needed to simulate one network configuration."""

    costs: tuple
    step_model: StepSizeModel
    comb_model: CombinationModel
    noise: NoiseParams
    w_init: np.ndarray | None = None

    def __post_init__(self):
        costs = tuple(self.costs)
        object.__setattr__(self, "costs", costs)
        N = len(costs)
        if self.step_model.n_agents != N or self.comb_model.n_agents != N:
            raise ValueError("costs, step model and combination model disagree on the number of agents")
        M = costs[0].dim
        if any(c.dim != M for c in costs):
            raise ValueError("all agents must share the parameter dimension")
        if any(np.max(np.abs(c.w_opt - costs[0].w_opt)) > 0 for c in costs):
            raise ValueError("agents must share a common minimizer")
        w0 = np.zeros((N, M), dtype=complex) if self.w_init is None else np.array(self.w_init, dtype=complex)
        if w0.shape != (N, M):
            raise ValueError(f"w_init must have shape {(N, M)}, got {w0.shape}")
        object.__setattr__(self, "w_init", w0)

    @property
    def n_agents(self) -> int:
        return len(self.costs)

    @property
    def dim(self) -> int:
        return self.costs[0].dim

    @property
    def w_opt(self) -> np.ndarray:
        return self.costs[0].w_opt

    @property
    def graph(self) -> MeanGraph:
        return MeanGraph.from_model(self.comb_model)

    def moments(self):
        return analytic_moments(self.graph, self.step_model, self.comb_model)

    def report(self) -> StabilityReport:
        return build_report(self.costs, self.noise, self.moments(), mu_upper=self.step_model.upper)

    def eps0_sq(self) -> float:
        return float(np.max(np.sum(np.abs(self.w_opt[None, :] - self.w_init) ** 2, axis=1)))

    def with_steps(self, step_model: StepSizeModel) -> "Scenario":
        return replace(self, step_model=step_model)


# --- single-trial reference recursions ---------------------------------------

@dataclass
class NetworkState:
    w: np.ndarray  # (N, M) current iterates
    psi: np.ndarray  # (N, M) intermediate iterates of the last step
    iteration: int = 0
    diverged: bool = False

    @classmethod
    def initial(cls, w0) -> "NetworkState":
        w0 = np.array(w0, dtype=complex)
        return cls(w=w0, psi=w0.copy())


def atc_step(state: NetworkState, A_i, M_i, data, costs) -> NetworkState:
    """One adapt-then-combine step with random weights ``A_i`` and step-sizes ``M_i``.

    ``M_i`` may be the diagonal matrix or the vector of its diagonal.
    """
    A_i = np.asarray(A_i, dtype=float)
    mu = np.asarray(M_i, dtype=float)
    mu = np.diag(mu) if mu.ndim == 2 else mu
    N, M = state.w.shape
    if A_i.shape != (N, N) or mu.shape != (N,) or len(data) != N or len(costs) != N:
        raise ValueError("dimension mismatch between state, A_i, M_i, data and costs")
    psi = np.empty_like(state.w)
    for k in range(N):
        psi[k] = state.w[k] - mu[k] * costs[k].stochastic_gradient(state.w[k], data[k])
    w = A_i.T @ psi
    diverged = state.diverged or not np.all(np.isfinite(w)) or \
        float(np.max(np.sum(np.abs(w) ** 2, axis=1))) > DIVERGENCE_THRESHOLD
    return NetworkState(w=w, psi=psi, iteration=state.iteration + 1, diverged=diverged)


def error_step(err, A_i, M_i, noise, costs) -> np.ndarray:
    """Error-form update on stacked conjugate embeddings.

    ``err`` has shape (N, 2M) with rows ``[w~_k; conj(w~_k)]``; ``noise`` has
    shape (N, M) holding the gradient noise ``v_k``. Returns
    ``A^T (I - M H) err + A^T M v`` in the Kronecker-lifted form.
    """
    if not all(isinstance(c, QuadraticCost) for c in costs):
        raise TypeError("error-form recursion is only implemented for quadratic costs")
    err = np.asarray(err, dtype=complex)
    N, twoM = err.shape
    A_i = np.asarray(A_i, dtype=float)
    mu = np.asarray(M_i, dtype=float)
    mu = np.diag(mu) if mu.ndim == 2 else mu
    eye = np.eye(twoM)
    A_big = np.kron(A_i, eye)
    M_big = np.kron(np.diag(mu), eye)
    H_big = scipy.linalg.block_diag(*(c.extended_hessian() for c in costs))
    v_ext = np.concatenate([crcalc.embed_conjugate(v) for v in np.asarray(noise, dtype=complex)])
    out = A_big.T @ (np.eye(N * twoM) - M_big @ H_big) @ err.reshape(-1) + A_big.T @ M_big @ v_ext
    return out.reshape(N, twoM)


# --- random streams ----------------------------------------------------------

def trial_seed(base_seed: int, trial: int) -> int:
    return int(base_seed) ^ int(trial)


def trial_streams(seed: int) -> tuple:
    """Independent (combination, step-size, data) generators for one trial."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.Generator(np.random.Philox(c)) for c in children)


@dataclass
class DrawBlock:
    A: np.ndarray  # (B, N, N)
    mu: np.ndarray  # (B, N)
    u: np.ndarray  # (B, N, M)
    d: np.ndarray  # (B, N)


def draw_block(scn: Scenario, streams, size: int) -> DrawBlock:
    rng_a, rng_m, rng_d = streams
    A = scn.comb_model.sample(rng_a, size)
    mu = scn.step_model.sample(rng_m, size)
    N, M = scn.n_agents, scn.dim
    u = np.empty((size, N, M), dtype=complex)
    d = np.empty((size, N), dtype=complex)
    for k, c in enumerate(scn.costs):
        u[:, k] = c.sample_regressors(rng_d, (size,))
        n = circular_normal(rng_d, (size,)) * math.sqrt(c.sigma_n_sq)
        d[:, k] = _rowdot(u[:, k], c.w_opt) + n
    return DrawBlock(A=A, mu=mu, u=u, d=d)


def _rowdot(u, w) -> np.ndarray:
    """``sum_m u[..., m] * w[..., m]`` with a fixed summation order."""
    out = u[..., 0] * w[..., 0]
    for m in range(1, u.shape[-1]):
        out = out + u[..., m] * w[..., m]
    return out


def _sqnorm(x) -> np.ndarray:
    out = x[..., 0].real ** 2 + x[..., 0].imag ** 2
    for m in range(1, x.shape[-1]):
        out = out + (x[..., m].real ** 2 + x[..., m].imag ** 2)
    return out


# --- batched simulation ------------------------------------------------------

@dataclass
class TrialSeries:
    """Per-trial time series for a chunk of trials (trial axis first)."""

    msd: np.ndarray  # (n, T+1, N)
    disagreement: np.ndarray  # (n, T+1, N), mean over the other agents
    pair_mean: np.ndarray  # (n, T+1)
    pair_max: np.ndarray  # (n, T+1)
    diverged: np.ndarray  # (n,)
    divergence_iter: np.ndarray  # (n,)


def _metrics(w, w_opt, pairs, N):
    msd = _sqnorm(w_opt - w)
    dis = np.zeros(msd.shape)
    if pairs:
        pd = [_sqnorm(w[:, k] - w[:, l]) for k, l in pairs]
        for (k, l), v in zip(pairs, pd):
            dis[:, k] += v
            dis[:, l] += v
        dis /= N - 1
        pm = pd[0]
        for v in pd[1:]:
            pm = pm + v
        pmean = pm / len(pairs)
        pmax = np.max(np.stack(pd, axis=-1), axis=-1)
    else:
        pmean = pmax = np.zeros(msd.shape[0])
    return msd, dis, pmean, pmax


def simulate_trials(scn: Scenario, seeds, horizon: int) -> TrialSeries:
    """Run one chunk of trials in lockstep; index ``t`` of every series is the state after ``t`` steps."""
    seeds = list(seeds)
    n, N, M = len(seeds), scn.n_agents, scn.dim
    streams = [trial_streams(s) for s in seeds]
    w_opt = np.broadcast_to(scn.w_opt, (n, N, M))
    w = np.broadcast_to(scn.w_init, (n, N, M)).copy()
    pairs = [(k, l) for k in range(N) for l in range(k + 1, N)]
    out_msd = np.empty((n, horizon + 1, N))
    out_dis = np.empty((n, horizon + 1, N))
    out_pm = np.empty((n, horizon + 1))
    out_px = np.empty((n, horizon + 1))
    active = np.ones(n, dtype=bool)
    div_iter = np.full(n, -1, dtype=np.int64)

    def record(t, vals):
        out_msd[:, t], out_dis[:, t], out_pm[:, t], out_px[:, t] = vals

    last = _metrics(w, w_opt, pairs, N)
    record(0, last)
    t = 0
    while t < horizon:
        size = min(DRAW_BLOCK, horizon - t)
        blocks = [draw_block(scn, st, DRAW_BLOCK) for st in streams]
        A = np.stack([b.A for b in blocks])
        mu = np.stack([b.mu for b in blocks])
        u = np.stack([b.u for b in blocks])
        d = np.stack([b.d for b in blocks])
        for j in range(size):
            e = d[:, j] - _rowdot(u[:, j], w)
            psi = w + (mu[:, j, :, None] * u[:, j].conj()) * e[..., None]
            w_new = A[:, j, 0, :, None] * psi[:, 0, None, :]
            for l in range(1, N):
                w_new = w_new + A[:, j, l, :, None] * psi[:, l, None, :]
            t += 1
            cur = _metrics(w_new, w_opt, pairs, N)
            finite = np.all(np.isfinite(cur[0]), axis=1) & np.all(np.isfinite(w_new.real) & np.isfinite(w_new.imag), axis=(1, 2))
            blown = active & (~finite | (np.max(np.where(finite[:, None], cur[0], np.inf), axis=1) > DIVERGENCE_THRESHOLD))
            keep_new = active & finite
            w = np.where(keep_new[:, None, None], w_new, w)
            vals = tuple(np.where(keep_new.reshape((-1,) + (1,) * (c.ndim - 1)), c, p) for c, p in zip(cur, last))
            record(t, vals)
            last = vals
            div_iter[blown] = t
            active &= ~blown
    return TrialSeries(msd=out_msd, disagreement=out_dis, pair_mean=out_pm, pair_max=out_px,
                       diverged=div_iter >= 0, divergence_iter=div_iter)


def worker_count(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(THREADS_ENV, "1") or 1)
    return max(1, int(workers))


# --- experiment record -------------------------------------------------------

@dataclass(eq=False)
class ExperimentRecord:
    """Trial-averaged series; index ``t`` is the network state after ``t`` iterations."""

    msd: np.ndarray  # (T+1, N)
    msd_se: np.ndarray
    disagreement: np.ndarray  # (T+1, N) mean of E||w_k - w_l||^2 over l != k
    disagreement_se: np.ndarray
    m4: np.ndarray  # (T+1, N) E||w~_k||^4
    m4_se: np.ndarray
    msd_max: np.ndarray  # (T+1,)
    msd_max_se: np.ndarray
    disagreement_mean: np.ndarray  # mean over unordered pairs
    disagreement_mean_se: np.ndarray
    disagreement_maxpair: np.ndarray
    disagreement_maxpair_se: np.ndarray
    m4_max: np.ndarray
    m4_max_se: np.ndarray
    seeds: np.ndarray  # (n_trials,)
    diverged: np.ndarray
    divergence_iter: np.ndarray
    peak_msd: np.ndarray  # per-trial max over time and agents
    used: np.ndarray  # trials entering the averages
    base_seed: int = 0

    @property
    def n_trials(self) -> int:
        return int(self.seeds.size)

    @property
    def n_used(self) -> int:
        return int(np.count_nonzero(self.used))

    @property
    def horizon(self) -> int:
        return self.msd.shape[0] - 1

    @property
    def n_agents(self) -> int:
        return self.msd.shape[1]

    def equals(self, other: "ExperimentRecord") -> bool:
        for f in self.__dataclass_fields__:
            a, b = getattr(self, f), getattr(other, f)
            if isinstance(a, np.ndarray):
                if a.shape != b.shape or not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True


def _mean_se(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error over the last axis using pairwise summation."""
    x = np.ascontiguousarray(x)
    n = x.shape[-1]
    mean = np.sum(x, axis=-1) / n
    if n < 2:
        return mean, np.zeros_like(mean)
    dev = x - mean[..., None]
    var = np.sum(dev * dev, axis=-1) / (n - 1)
    return mean, np.sqrt(var / n)


def aggregate(series: TrialSeries, seeds, base_seed: int, exclude_diverged: bool) -> ExperimentRecord:
    n = series.msd.shape[0]
    used = np.ones(n, dtype=bool)
    if exclude_diverged and 0 < np.count_nonzero(series.diverged) < n:
        used = ~series.diverged
    take = lambda a: np.moveaxis(a[used], 0, -1)
    msd, msd_se = _mean_se(take(series.msd))
    m4, m4_se = _mean_se(take(series.msd ** 2))
    dis, dis_se = _mean_se(take(series.disagreement))
    pm, pm_se = _mean_se(take(series.pair_mean))
    px, px_se = _mean_se(take(series.pair_max))
    rows = np.arange(msd.shape[0])
    kmax = np.argmax(msd, axis=1)
    k4 = np.argmax(m4, axis=1)
    return ExperimentRecord(
        msd=msd, msd_se=msd_se, disagreement=dis, disagreement_se=dis_se, m4=m4, m4_se=m4_se,
        msd_max=msd[rows, kmax], msd_max_se=msd_se[rows, kmax],
        disagreement_mean=pm, disagreement_mean_se=pm_se,
        disagreement_maxpair=px, disagreement_maxpair_se=px_se,
        m4_max=m4[rows, k4], m4_max_se=m4_se[rows, k4],
        seeds=np.asarray(seeds, dtype=np.uint64), diverged=series.diverged.copy(),
        divergence_iter=series.divergence_iter.copy(),
        peak_msd=series.msd.max(axis=(1, 2)), used=used, base_seed=int(base_seed),
    )


def _concat(parts) -> TrialSeries:
    return TrialSeries(*(np.concatenate([getattr(p, f) for p in parts])
                         for f in TrialSeries.__dataclass_fields__))


def run_experiment(config, n_trials: int, horizon: int, base_seed: int,
                   workers: int | None = None) -> ExperimentRecord:
    """Monte-Carlo estimate of the MSD, disagreement and fourth-moment series.

    ``config`` is a :class:`Scenario` or anything with a ``scenario()`` method.
    Diverged trials are dropped from the averages only when the mean-square
    condition fails and at least one trial survived; they stay flagged in
    the record either way.
    """
    scn = config if isinstance(config, Scenario) else config.scenario()
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    seeds = [trial_seed(base_seed, t) for t in range(n_trials)]
    chunks = [seeds[i:i + CHUNK_TRIALS] for i in range(0, n_trials, CHUNK_TRIALS)]
    nw = worker_count(workers)
    if nw == 1 or len(chunks) == 1:
        parts = [simulate_trials(scn, c, horizon) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=nw) as pool:
            parts = list(pool.map(lambda c: simulate_trials(scn, c, horizon), chunks))
    try:
        stable = scn.report().ms_condition
    except ValueError:
        stable = False
    return aggregate(_concat(parts), seeds, base_seed, exclude_diverged=not stable)


# --- steady state ------------------------------------------------------------

@dataclass(frozen=True)
class Estimate:
    value: float
    se: float


def _window(n_points: int, window_fraction: float) -> slice:
    if not 0 < window_fraction <= 0.5:
        raise ValueError("window_fraction must lie in (0, 0.5]")
    size = int(math.ceil(window_fraction * n_points))
    if size < 10:
        raise ValueError(f"steady-state window has {size} samples; at least 10 are needed")
    return slice(n_points - size, n_points)


def window_estimate(values, se, window_fraction: float) -> Estimate:
    """Average of the last ``window_fraction`` of a series.

    The SE is the average of the per-time SEs, which bounds the SE of the
    window mean whatever the correlation across time.
    """
    values, se = np.asarray(values), np.asarray(se)
    sl = _window(values.shape[0], window_fraction)
    return Estimate(float(np.mean(values[sl], axis=0)), float(np.mean(se[sl], axis=0)))


def steady_state(record: ExperimentRecord, window_fraction: float = 0.5) -> dict:
    """Steady-state value and SE of every network-level series, plus per-agent MSD."""
    out = {}
    for name in ("msd_max", "disagreement_mean", "disagreement_maxpair", "m4_max"):
        out[name] = window_estimate(getattr(record, name), getattr(record, name + "_se"), window_fraction)
    sl = _window(record.msd.shape[0], window_fraction)
    out["msd_agents"] = [Estimate(float(record.msd[sl, k].mean()), float(record.msd_se[sl, k].mean()))
                         for k in range(record.n_agents)]
    return out
