"""Asynchronous network model: random step-sizes, random combination weights, and their moments.

Step-sizes ``mu_k(i)`` live in ``[0, mu_k]``. Off-diagonal combination weights
``a_lk(i)`` are drawn per link of the mean graph; the diagonal entry absorbs the
remainder so that every column of ``A_i`` sums to one. Draws are independent
across agents and links (the spatially-uncorrelated model), which gives the
Kronecker covariances ``C_M`` and ``C_A`` in closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

STOCHASTIC_TOL = 1e-12
DENSE_MAX_N = 32
CUSTOM_MC_SAMPLES = 1_000_000


def beta_variates(rng: np.random.Generator, xi: float, zeta: float, size) -> np.ndarray:
    """Beta(xi, zeta) draws as ``g1 / (g1 + g2)`` with ``g1 ~ Gamma(xi)``, ``g2 ~ Gamma(zeta)``."""
    g1 = rng.standard_gamma(xi, size)
    g2 = rng.standard_gamma(zeta, size)
    return g1 / (g1 + g2)


def beta_raw_moment(xi: float, zeta: float, m: int) -> float:
    """``E[x^m]`` for ``x ~ Beta(xi, zeta)``."""
    out = 1.0
    for j in range(m):
        out *= (xi + j) / (xi + zeta + j)
    return out


# --- step-size distributions -------------------------------------------------

@dataclass(frozen=True)
class Constant:
    mu: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"step-size must be positive, got {self.mu!r}")

    def sample(self, rng, size):
        return np.full(size, float(self.mu))

    def moment(self, m: int) -> float:
        return float(self.mu) ** m


@dataclass(frozen=True)
class Bernoulli:
    """``mu`` with probability ``q``, else 0 (random on/off adaptation)."""

    q: float
    mu: float

    def __post_init__(self):
        if not 0 < self.q < 1:
            raise ValueError(f"Bernoulli q must lie in (0, 1), got {self.q!r}")
        if not self.mu > 0:
            raise ValueError(f"step-size must be positive, got {self.mu!r}")

    def sample(self, rng, size):
        return np.where(rng.random(size) < self.q, float(self.mu), 0.0)

    def moment(self, m: int) -> float:
        return self.q * float(self.mu) ** m


@dataclass(frozen=True)
class Beta:
    """``mu * x`` with ``x ~ Beta(xi, zeta)``."""

    xi: float
    zeta: float
    mu: float

    def __post_init__(self):
        if not (self.xi > 0 and self.zeta > 0):
            raise ValueError(f"Beta shape parameters must be positive, got ({self.xi!r}, {self.zeta!r})")
        if not self.mu > 0:
            raise ValueError(f"step-size must be positive, got {self.mu!r}")

    @classmethod
    def from_ratio(cls, xi: float, phi: float, mu: float) -> "Beta":
        """Beta model with ``zeta = phi * xi``."""
        return cls(xi=xi, zeta=phi * xi, mu=mu)

    def sample(self, rng, size):
        return float(self.mu) * beta_variates(rng, self.xi, self.zeta, size)

    def moment(self, m: int) -> float:
        return float(self.mu) ** m * beta_raw_moment(self.xi, self.zeta, m)


@dataclass(frozen=True, eq=False)
class Custom:
    """User-supplied step distribution on ``[0, mu]``; moments come from Monte Carlo.

    ``sampler(rng, size)`` must return draws in ``[0, mu]``.
    """

    sampler: Callable
    mu: float
    seed: int = 0
    n_mc: int = CUSTOM_MC_SAMPLES
    _moments: dict = field(init=False, repr=False, default_factory=dict)

    def sample(self, rng, size):
        return np.asarray(self.sampler(rng, size), dtype=float)

    def moment(self, m: int) -> float:
        return self.moment_with_se(m)[0]

    def moment_with_se(self, m: int) -> tuple[float, float]:
        if m not in self._moments:
            x = self.sample(np.random.default_rng(self.seed), self.n_mc) ** m
            self._moments[m] = (float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)))
        return self._moments[m]


StepDist = Constant | Bernoulli | Beta | Custom


@dataclass(frozen=True)
class StepSizeModel:
    agents: tuple

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        if not self.agents:
            raise ValueError("step-size model needs at least one agent")

    @classmethod
    def uniform(cls, dist, n: int) -> "StepSizeModel":
        return cls((dist,) * n)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def upper(self) -> np.ndarray:
        return np.array([d.mu for d in self.agents], dtype=float)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """``size`` draws of the step-size vector; shape (size, N)."""
        return np.stack([d.sample(rng, size) for d in self.agents], axis=-1)

    def moments(self) -> np.ndarray:
        """Rows ``(m1, m2, m4)`` per agent."""
        return np.array([[d.moment(1), d.moment(2), d.moment(4)] for d in self.agents])

    def is_deterministic(self) -> bool:
        return all(isinstance(d, Constant) for d in self.agents)


def sample_step_matrix(model: StepSizeModel, rng: np.random.Generator) -> np.ndarray:
    """One diagonal step-size matrix ``M_i``."""
    return np.diag(model.sample(rng, 1)[0])


# --- combination weights -----------------------------------------------------

@dataclass(frozen=True)
class BernoulliLink:
    """``a`` with probability ``eta``, else 0 (random link failure)."""

    eta: float
    a: float

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ValueError(f"link probability eta must lie in (0, 1], got {self.eta!r}")
        if not 0 < self.a < 1:
            raise ValueError(f"link weight a must lie in (0, 1), got {self.a!r}")

    def sample(self, rng, size):
        return np.where(rng.random(size) < self.eta, float(self.a), 0.0)

    @property
    def mean(self) -> float:
        return self.eta * self.a

    @property
    def variance(self) -> float:
        return self.eta * (1 - self.eta) * self.a ** 2

    @property
    def prob_positive(self) -> float:
        return self.eta


@dataclass(frozen=True)
class BetaWeight:
    """``a * y`` with ``y ~ Beta(xi, zeta)``."""

    xi: float
    zeta: float
    a: float

    def __post_init__(self):
        if not (self.xi > 0 and self.zeta > 0):
            raise ValueError(f"Beta shape parameters must be positive, got ({self.xi!r}, {self.zeta!r})")
        if not 0 < self.a < 1:
            raise ValueError(f"link weight a must lie in (0, 1), got {self.a!r}")

    def sample(self, rng, size):
        return float(self.a) * beta_variates(rng, self.xi, self.zeta, size)

    @property
    def mean(self) -> float:
        return self.a * self.xi / (self.xi + self.zeta)

    @property
    def variance(self) -> float:
        s = self.xi + self.zeta
        return self.xi * self.zeta / (s ** 2 * (s + 1)) * self.a ** 2

    @property
    def prob_positive(self) -> float:
        return 1.0


@dataclass(frozen=True)
class CombinationModel:
    """Random off-diagonal weights keyed by ``(l, k)``: agent ``l`` feeds agent ``k``."""

    n_agents: int
    links: Mapping

    def __post_init__(self):
        links = dict(sorted(dict(self.links).items()))
        for (l, k) in links:
            if l == k:
                raise ValueError(f"link ({l}, {k}) is a self-loop; diagonal weights are absorbed")
            if not (0 <= l < self.n_agents and 0 <= k < self.n_agents):
                raise ValueError(f"link ({l}, {k}) outside 0..{self.n_agents - 1}")
        col = np.zeros(self.n_agents)
        for (l, k), dist in links.items():
            col[k] += dist.a
        for k in range(self.n_agents):
            if col[k] > 1 + STOCHASTIC_TOL:
                raise ValueError(
                    f"weights into agent {k} sum to {col[k]:.6g} > 1; the absorbed diagonal would go negative"
                )
        object.__setattr__(self, "links", links)

    def link_order(self) -> list:
        return list(self.links)

    def mean_matrix(self) -> np.ndarray:
        A = np.zeros((self.n_agents, self.n_agents))
        for (l, k), dist in self.links.items():
            A[l, k] = dist.mean
        for k in range(self.n_agents):
            A[k, k] = 1.0 - sum(A[l, k] for l in range(self.n_agents) if l != k)
        return A

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """``size`` draws of ``A_i``; shape (size, N, N). Links are drawn in sorted order."""
        N = self.n_agents
        A = np.zeros((size, N, N))
        for (l, k), dist in self.links.items():
            A[:, l, k] = dist.sample(rng, size)
        for k in range(N):
            off = np.zeros(size)
            for l in range(N):
                if l != k:
                    off = off + A[:, l, k]
            # rounding can push 1 - off a hair below zero when weights sum to one
            A[:, k, k] = np.maximum(1.0 - off, 0.0)
        return A

    def is_deterministic(self) -> bool:
        return all(isinstance(d, BernoulliLink) and d.eta == 1 for d in self.links.values())


@dataclass(frozen=True, eq=False)
class MeanGraph:
    """Fixed topology of the mean combination matrix ``abar``.

    ``neighbors[k]`` is the set ``{l : abar[l, k] > 0}``.
    """

    abar: np.ndarray
    neighbors: tuple = None

    def __post_init__(self):
        A = np.array(self.abar, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"abar must be square, got shape {A.shape}")
        if np.any(A < -STOCHASTIC_TOL):
            raise ValueError("abar has negative entries")
        bad = np.flatnonzero(np.abs(A.sum(axis=0) - 1) > STOCHASTIC_TOL)
        if bad.size:
            raise ValueError(f"abar column {int(bad[0])} sums to {A[:, bad[0]].sum():.15g}, not 1")
        nbrs = tuple(frozenset(int(l) for l in np.flatnonzero(A[:, k] > 0)) for k in range(A.shape[0]))
        if self.neighbors is not None and tuple(frozenset(s) for s in self.neighbors) != nbrs:
            raise ValueError("neighbors do not match the support of abar")
        object.__setattr__(self, "abar", A)
        object.__setattr__(self, "neighbors", nbrs)

    @classmethod
    def from_model(cls, cm: CombinationModel) -> "MeanGraph":
        return cls(cm.mean_matrix())

    @property
    def n_agents(self) -> int:
        return self.abar.shape[0]

    def is_connected(self) -> bool:
        n, _ = connected_components(sp.csr_matrix(self.abar > 0), directed=True, connection="strong")
        return n == 1

    def edge_rows(self):
        """``(from, to, abar)`` for every nonzero entry, column-major."""
        for k in range(self.n_agents):
            for l in sorted(self.neighbors[k]):
                yield l, k, float(self.abar[l, k])

    def to_edge_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["from", "to", "abar"])
            for l, k, a in self.edge_rows():
                w.writerow([l, k, repr(a)])


def ring_graph_links(n: int, dist) -> dict:
    """Both directions of every edge of an ``n``-ring, all with the same link distribution."""
    links = {}
    for k in range(n):
        for l in ((k - 1) % n, (k + 1) % n):
            if l != k:
                links[(l, k)] = dist
    return links


def sample_combination_matrix(graph: MeanGraph, model: CombinationModel,
                              rng: np.random.Generator) -> np.ndarray:
    if graph.n_agents != model.n_agents:
        raise ValueError("graph and combination model disagree on the number of agents")
    return model.sample(rng, 1)[0]


# --- moments -----------------------------------------------------------------

@dataclass(eq=False)
class MomentSet:
    """First and Kronecker-second moments of ``(M_i, A_i)``.

    ``mu_moments`` has rows ``(m1, m2, m4)`` per agent. ``C_A`` is dense for
    ``N <= 32`` and a ``scipy.sparse`` matrix above that.
    """

    Mbar: np.ndarray
    C_M: np.ndarray
    Abar: np.ndarray
    C_A: object
    mu_moments: np.ndarray

    @property
    def n_agents(self) -> int:
        return self.Abar.shape[0]

    @property
    def mu_bar(self) -> np.ndarray:
        return np.diag(self.Mbar).copy()

    @property
    def c_mu(self) -> np.ndarray:
        N = self.n_agents
        idx = np.arange(N) * N + np.arange(N)
        C = self.C_M.toarray() if sp.issparse(self.C_M) else self.C_M
        return C[idx, idx].copy()

    def C_A_dense(self) -> np.ndarray:
        return self.C_A.toarray() if sp.issparse(self.C_A) else np.asarray(self.C_A)

    def second_moment_A(self) -> np.ndarray:
        """``E[A (x) A] = Abar (x) Abar + C_A``."""
        return np.kron(self.Abar, self.Abar) + self.C_A_dense()


def _kron_index(N: int, r: int, c: int, n: int, m: int) -> tuple[int, int]:
    """Position of ``x[r, c] * x[n, m]`` inside ``x (x) x``."""
    return r * N + n, c * N + m


def analytic_moments(graph: MeanGraph, sm: StepSizeModel, cm: CombinationModel) -> MomentSet:
    """Closed-form moments under the spatially-uncorrelated model."""
    N = graph.n_agents
    if sm.n_agents != N or cm.n_agents != N:
        raise ValueError("graph, step-size model and combination model disagree on N")
    if not np.allclose(graph.abar, cm.mean_matrix(), atol=STOCHASTIC_TOL, rtol=0):
        raise ValueError("graph.abar is not the mean of the combination model")
    mom = sm.moments()
    mu_bar = mom[:, 0]
    c_mu = mom[:, 1] - mu_bar ** 2
    rows, cols, vals = [], [], []
    for k in range(N):
        r, c = _kron_index(N, k, k, k, k)
        rows.append(r), cols.append(c), vals.append(c_mu[k])
    C_M = sp.coo_matrix((vals, (rows, cols)), shape=(N * N, N * N)).tocsr()

    rows, cols, vals = [], [], []
    for (l, k), dist in cm.links.items():
        v = dist.variance
        for (r, c, n, m, s) in ((l, k, l, k, v), (l, k, k, k, -v), (k, k, l, k, -v), (k, k, k, k, v)):
            i, j = _kron_index(N, r, c, n, m)
            rows.append(i), cols.append(j), vals.append(s)
    C_A = sp.coo_matrix((vals, (rows, cols)), shape=(N * N, N * N)).tocsr()
    C_A.sum_duplicates()
    if N <= DENSE_MAX_N:
        C_M, C_A = C_M.toarray(), C_A.toarray()
    return MomentSet(Mbar=np.diag(mu_bar), C_M=C_M, Abar=graph.abar.copy(), C_A=C_A, mu_moments=mom)


def link_covariance_pattern(graph: MeanGraph) -> np.ndarray:
    """Boolean N^2 x N^2 mask of entries of ``C_A`` allowed to be nonzero."""
    N = graph.n_agents
    mask = np.zeros((N * N, N * N), dtype=bool)
    for k in range(N):
        for l in graph.neighbors[k]:
            if l == k:
                continue
            for (r, c, n, m) in ((l, k, l, k), (l, k, k, k), (k, k, l, k), (k, k, k, k)):
                mask[_kron_index(N, r, c, n, m)] = True
    return mask


def _shifted_mean(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Mean computed relative to the first sample so constant data gives an exact result."""
    x0 = np.take(x, [0], axis=axis)
    return np.squeeze(x0, axis=axis) + np.mean(x - x0, axis=axis)


@dataclass(eq=False)
class EmpiricalMoments:
    mean: MomentSet
    se: MomentSet
    EAA: np.ndarray  # sample E[A (x) A]
    EAA_se: np.ndarray
    cross_cov: np.ndarray  # cov(mu_k, a_lk), shape (N, N*N)
    cross_cov_se: np.ndarray
    n_samples: int


def empirical_moments(graph: MeanGraph, sm: StepSizeModel, cm: CombinationModel,
                      n_samples: int, rng: np.random.Generator,
                      chunk: int = 20_000) -> EmpiricalMoments:
    """Monte-Carlo estimates of every quantity in :class:`MomentSet`, with standard errors."""
    if n_samples < 10_000:
        raise ValueError("n_samples must be at least 1e4")
    N = graph.n_agents
    mus = sm.sample(rng, n_samples)
    As = cm.sample(rng, n_samples)
    mu_bar = _shifted_mean(mus)
    Abar = _shifted_mean(As)
    dmu = mus - mu_bar
    dA = As - Abar

    def acc(gen):
        s1 = s2 = 0.0
        for block in gen:
            s1 = s1 + block.sum(axis=0)
            s2 = s2 + (block ** 2).sum(axis=0)
        mean = s1 / n_samples
        var = np.maximum(s2 / n_samples - mean ** 2, 0.0) * n_samples / (n_samples - 1)
        return mean, np.sqrt(var / n_samples)

    def chunks(f):
        for s in range(0, n_samples, chunk):
            yield f(slice(s, s + chunk))

    kron = lambda X: np.einsum("sij,skl->sikjl", X, X).reshape(X.shape[0], N * N, N * N)
    C_A, C_A_se = acc(chunks(lambda sl: kron(dA[sl])))
    EAA, EAA_se = acc(chunks(lambda sl: kron(As[sl])))
    cmu, cmu_se = acc(chunks(lambda sl: dmu[sl] ** 2))
    cross, cross_se = acc(chunks(lambda sl: dmu[sl][:, :, None] * dA[sl].reshape(-1, 1, N * N)))
    mom = np.empty((N, 3))
    mom_se = np.empty((N, 3))
    for j, p in enumerate((1, 2, 4)):
        v = mus ** p
        mom[:, j] = _shifted_mean(v)
        mom_se[:, j] = v.std(axis=0, ddof=1) / math.sqrt(n_samples)

    diag_idx = np.arange(N) * N + np.arange(N)

    def cm_matrix(vec):
        C = np.zeros((N * N, N * N))
        C[diag_idx, diag_idx] = vec
        return C

    A_se = As.std(axis=0, ddof=1) / math.sqrt(n_samples)
    mean = MomentSet(Mbar=np.diag(mu_bar), C_M=cm_matrix(cmu), Abar=Abar, C_A=C_A, mu_moments=mom)
    se = MomentSet(Mbar=np.diag(mom_se[:, 0]), C_M=cm_matrix(cmu_se), Abar=A_se, C_A=C_A_se,
                   mu_moments=mom_se)
    return EmpiricalMoments(mean=mean, se=se, EAA=EAA, EAA_se=EAA_se,
                            cross_cov=cross, cross_cov_se=cross_se, n_samples=n_samples)


# --- structural checks -------------------------------------------------------

@dataclass
class CheckReport:
    passed: bool
    failures: list = field(default_factory=list)
    measured: dict = field(default_factory=dict)

    def __bool__(self):
        return self.passed


def check_left_stochastic(ms: MomentSet, empirical: EmpiricalMoments | None = None,
                          tol: float = STOCHASTIC_TOL, n_se: float = 3.0) -> CheckReport:
    """Check that ``Abar`` and ``Abar (x) Abar + C_A`` are left-stochastic.

    With ``empirical`` given, also compares ``Abar (x) Abar + C_A`` against the
    sample ``E[A (x) A]`` entrywise within ``n_se`` standard errors.
    """
    failures = []
    S = ms.second_moment_A()
    dev1 = np.abs(ms.Abar.sum(axis=0) - 1)
    dev2 = np.abs(S.sum(axis=0) - 1)
    for name, dev in (("Abar", dev1), ("Abar(x)Abar + C_A", dev2)):
        bad = np.flatnonzero(dev > tol)
        if bad.size:
            failures.append(f"{name}: column {int(bad[0])} sum is off from 1 by {dev[bad[0]]:.3g}")
    for name, M in (("Abar", ms.Abar), ("Abar(x)Abar + C_A", S)):
        neg = np.argwhere(M < -1e-14)
        if neg.size:
            failures.append(f"{name}: negative entry at {tuple(int(i) for i in neg[0])}")
    measured = {"abar_colsum_dev": float(dev1.max()), "second_colsum_dev": float(dev2.max())}
    if empirical is not None:
        z = np.abs(S - empirical.EAA) - n_se * empirical.EAA_se
        measured["EAA_max_excess"] = float(z.max())
        if np.any(z > tol):
            i, j = np.unravel_index(np.argmax(z), z.shape)
            failures.append(f"E[A(x)A] entry ({i}, {j}) differs from Abar(x)Abar + C_A by more than {n_se} SE")
    return CheckReport(passed=not failures, failures=failures, measured=measured)


def self_weight_positive_prob(cm: CombinationModel, k: int) -> float:
    """``P(a_kk(i) > 0)``; the diagonal vanishes only when realized weights sum to exactly one."""
    incoming = [d for (l, kk), d in cm.links.items() if kk == k]
    if any(isinstance(d, BetaWeight) for d in incoming) or sum(d.a for d in incoming) < 1 - STOCHASTIC_TOL:
        return 1.0
    if len(incoming) > 16:
        raise ValueError(f"too many links into agent {k} to enumerate the self-weight law")
    p_zero = 0.0
    for mask in range(1 << len(incoming)):
        on = [(mask >> j) & 1 for j in range(len(incoming))]
        if abs(sum(d.a for d, b in zip(incoming, on) if b) - 1) <= STOCHASTIC_TOL:
            p_zero += math.prod(d.eta if b else 1 - d.eta for d, b in zip(incoming, on))
    return 1.0 - p_zero


def required_union_samples(cm: CombinationModel, miss_prob: float = 1e-6) -> int:
    """Draws needed so every mean-graph entry is realized at least once w.p. ``>= 1 - miss_prob`` each."""
    probs = [d.prob_positive for d in cm.links.values()]
    probs += [self_weight_positive_prob(cm, k) for k in range(cm.n_agents)]
    n = 1
    for p in probs:
        if 0 < p < 1:
            n = max(n, math.ceil(math.log(miss_prob) / math.log(1 - p)))
    return n


def neighborhood_union(graph: MeanGraph, cm: CombinationModel, n_samples: int,
                       rng: np.random.Generator) -> dict:
    """Union of realized neighborhoods per agent versus the mean-graph neighborhood.

    Returns ``{k: (union, expected)}``. The self-weight is included through
    the absorbed diagonal, and the diagonal is counted as realized only when
    ``a_kk(i) > 0``.
    """
    need = required_union_samples(cm)
    if n_samples < need:
        raise ValueError(f"n_samples={n_samples} is below the {need} draws needed for this model")
    As = cm.sample(rng, n_samples)
    seen = np.any(As > 0, axis=0)
    return {k: (frozenset(int(l) for l in np.flatnonzero(seen[:, k])), graph.neighbors[k])
            for k in range(graph.n_agents)}
