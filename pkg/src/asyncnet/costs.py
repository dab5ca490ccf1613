"""Per-agent quadratic (MSE) costs, their gradients, and the gradient-noise model."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import crcalc

HERMITIAN_TOL = 1e-12
ALPHA_INFLATION = 1.2


def circular_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance circular complex Gaussian samples."""
    shape = tuple(np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
    z = rng.standard_normal(shape + (2,))
    return (z[..., 0] + 1j * z[..., 1]) / math.sqrt(2)


@dataclass(frozen=True)
class DataSample:
    u: np.ndarray  # row regressor, length M
    d: complex


@dataclass(frozen=True)
class NoiseParams:
    """Constants of the gradient-noise bound ``E||v||^2 <= alpha ||w~||^2 + sigma_v_sq``.

    ``alpha4``/``sigma_v_sq4`` are the constants of the fourth-order bound
    ``E||v||^4 <= alpha4^2 ||w~||^4 + sigma_v_sq4^2``; they equal the
    second-order pair unless a separate fit was needed.
    """

    alpha: float
    sigma_v_sq: float
    alpha4: float | None = None
    sigma_v_sq4: float | None = None

    def __post_init__(self):
        for name in ("alpha", "sigma_v_sq"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {val!r}")
        if self.alpha4 is None:
            object.__setattr__(self, "alpha4", self.alpha)
        if self.sigma_v_sq4 is None:
            object.__setattr__(self, "sigma_v_sq4", self.sigma_v_sq)


@dataclass(frozen=True, eq=False)
class QuadraticCost:
    """``J(w) = sigma_n_sq + (w - w_opt)^* R_u (w - w_opt)``.

    This is the MSE ``E|d - u w|^2`` of the linear model ``d = u w_opt + n``
    with circular Gaussian regressors of covariance ``R_u``.
    """

    R_u: np.ndarray
    w_opt: np.ndarray
    sigma_n_sq: float
    _chol: np.ndarray = field(init=False, repr=False)
    _eigs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        R = np.array(self.R_u, dtype=complex)
        w = np.array(self.w_opt, dtype=complex).ravel()
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValueError(f"R_u must be square, got shape {R.shape}")
        if R.shape[0] != w.size:
            raise ValueError(f"R_u is {R.shape[0]}x{R.shape[0]} but w_opt has length {w.size}")
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(w)):
            raise ValueError("R_u and w_opt must be finite")
        scale = max(1.0, float(np.max(np.abs(R))))
        if np.max(np.abs(R - R.conj().T)) > HERMITIAN_TOL * scale:
            raise ValueError("R_u is not Hermitian")
        R = (R + R.conj().T) / 2
        eigs = np.linalg.eigvalsh(R)
        if eigs[0] <= 0:
            raise ValueError(f"R_u is not positive definite (min eigenvalue {eigs[0]:.3g})")
        if not (np.isfinite(self.sigma_n_sq) and self.sigma_n_sq >= 0):
            raise ValueError(f"sigma_n_sq must be nonnegative, got {self.sigma_n_sq!r}")
        object.__setattr__(self, "R_u", R)
        object.__setattr__(self, "w_opt", w)
        object.__setattr__(self, "sigma_n_sq", float(self.sigma_n_sq))
        object.__setattr__(self, "_chol", np.linalg.cholesky(R))
        object.__setattr__(self, "_eigs", eigs)

    @property
    def dim(self) -> int:
        return self.w_opt.size

    def _check(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=complex).ravel()
        if w.size != self.dim:
            raise ValueError(f"expected a length-{self.dim} vector, got length {w.size}")
        return w

    def evaluate(self, w) -> float:
        e = self._check(w) - self.w_opt
        return self.sigma_n_sq + float(np.real(e.conj() @ self.R_u @ e))

    def gradient(self, w) -> np.ndarray:
        """Conjugate gradient ``R_u (w - w_opt)``."""
        return self.R_u @ (self._check(w) - self.w_opt)

    def extended_hessian(self) -> np.ndarray:
        """``blkdiag(R_u, R_u^T)``; constant for a quadratic cost."""
        m = self.dim
        out = np.zeros((2 * m, 2 * m), dtype=complex)
        out[:m, :m] = self.R_u
        out[m:, m:] = self.R_u.T
        return out

    def hessian_bounds(self) -> tuple[float, float]:
        return float(self._eigs[0]), float(self._eigs[-1])

    def lipschitz_constant(self) -> float:
        # constant Hessian
        return 0.0

    def sample_regressors(self, rng: np.random.Generator, shape=()) -> np.ndarray:
        """Rows ``u`` with ``E[u^* u] = R_u``; output shape ``shape + (M,)``."""
        z = circular_normal(rng, tuple(shape) + (self.dim,))
        return np.conj(z @ self._chol.T)

    def sample(self, rng: np.random.Generator) -> DataSample:
        u = self.sample_regressors(rng)
        n = circular_normal(rng, (1,))[0] * math.sqrt(self.sigma_n_sq)
        return DataSample(u=u, d=complex(u @ self.w_opt + n))

    def stochastic_gradient(self, w, s: DataSample) -> np.ndarray:
        w = self._check(w)
        u = np.asarray(s.u, dtype=complex).ravel()
        if u.size != self.dim:
            raise ValueError(f"regressor has length {u.size}, expected {self.dim}")
        return -u.conj() * (s.d - u @ w)

    def sigma_v_sq(self) -> float:
        """``E||v||^2`` at the minimizer, ``Tr(R_u) sigma_n_sq``."""
        return float(np.real(np.trace(self.R_u))) * self.sigma_n_sq


def sample_data(cost: QuadraticCost, rng: np.random.Generator) -> DataSample:
    return cost.sample(rng)


def gradient(cost: QuadraticCost, w) -> np.ndarray:
    return cost.gradient(w)


def stochastic_gradient(cost: QuadraticCost, w, s: DataSample) -> np.ndarray:
    return cost.stochastic_gradient(w, s)


def hessian_bounds(cost: QuadraticCost) -> tuple[float, float]:
    return cost.hessian_bounds()


def lipschitz_constant(cost: QuadraticCost) -> float:
    return cost.lipschitz_constant()


def global_lipschitz(tau: float, lam_max: float, lam_min: float, delta: float) -> float:
    """Global Lipschitz constant of the Hessian at the minimizer.

    Combines the local constant ``tau`` on the ball of radius ``delta`` with
    the bounded-Hessian estimate outside it.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    return max(tau, (lam_max - lam_min) / (math.sqrt(2) * delta))


def analytic_noise_params(cost: QuadraticCost) -> NoiseParams:
    """Exact constants for circular Gaussian regressors.

    ``E[(u^*u - R) A (u^*u - R)] = R Tr(AR)`` gives ``alpha = lambda_max(R) Tr(R)``.
    """
    tr = float(np.real(np.trace(cost.R_u)))
    _, lam_max = cost.hessian_bounds()
    return NoiseParams(alpha=lam_max * tr, sigma_v_sq=cost.sigma_v_sq())


def gradient_noise_samples(cost: QuadraticCost, w, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws of ``v = stochastic_gradient - gradient`` at a fixed ``w``; shape (n, M)."""
    w = cost._check(w)
    u = cost.sample_regressors(rng, (n,))
    noise = circular_normal(rng, (n,)) * math.sqrt(cost.sigma_n_sq)
    d = u @ cost.w_opt + noise
    sg = -u.conj() * (d - u @ w)[:, None]
    return sg - cost.gradient(w)[None, :]


def noise_grid(cost: QuadraticCost, radius: float, rng: np.random.Generator,
               n_radii: int = 5, n_dirs: int = 4) -> list[np.ndarray]:
    """Points ``w`` with ``||w - w_opt|| <= radius``: the minimizer plus random directions."""
    pts = [cost.w_opt.copy()]
    for r in np.linspace(radius / n_radii, radius, n_radii):
        for _ in range(n_dirs):
            z = circular_normal(rng, (cost.dim,))
            pts.append(cost.w_opt + r * z / np.linalg.norm(z))
    return pts


@dataclass
class NoiseMoments:
    """Monte-Carlo moments of ``||v||`` over a grid of points."""

    dist_sq: np.ndarray  # ||w - w_opt||^2 per grid point
    m2: np.ndarray
    m2_se: np.ndarray
    m4: np.ndarray
    m4_se: np.ndarray


def noise_moments(cost: QuadraticCost, points, n_samples: int,
                  rng: np.random.Generator) -> NoiseMoments:
    dist, m2, s2, m4, s4 = [], [], [], [], []
    for w in points:
        v = gradient_noise_samples(cost, w, n_samples, rng)
        nv = np.sum(np.abs(v) ** 2, axis=1)
        dist.append(float(np.sum(np.abs(w - cost.w_opt) ** 2)))
        m2.append(nv.mean())
        s2.append(nv.std(ddof=1) / math.sqrt(n_samples))
        m4.append((nv ** 2).mean())
        s4.append((nv ** 2).std(ddof=1) / math.sqrt(n_samples))
    return NoiseMoments(*(np.array(x) for x in (dist, m2, s2, m4, s4)))


def _fit_fourth(mom: NoiseMoments) -> tuple[float, float]:
    """Smallest (a, s) with ``a x^2 + s >= m4`` on the grid, minimizing the bound at the largest x."""
    x = mom.dist_sq
    xref = float(np.max(x)) if np.max(x) > 0 else 1.0
    res = linprog(
        c=[xref ** 2, 1.0],
        A_ub=np.column_stack([-(x ** 2), -np.ones_like(x)]),
        b_ub=-mom.m4,
        bounds=[(0, None), (0, None)],
        method="highs",
    )
    if not res.success:
        raise RuntimeError(f"fourth-order noise fit failed: {res.message}")
    a, s = res.x
    return math.sqrt(ALPHA_INFLATION * a), math.sqrt(ALPHA_INFLATION * s)


def noise_params(cost: QuadraticCost, n_samples: int = 10_000, radius: float = 1.0,
                 rng: np.random.Generator | None = None) -> NoiseParams:
    """Fit the gradient-noise constants by Monte Carlo.

    ``sigma_v_sq`` is exact (``Tr(R_u) sigma_n_sq``). ``alpha`` is the upper
    envelope slope of ``E||v||^2 - sigma_v_sq`` against ``||w - w_opt||^2`` on a
    grid inside ``radius``, inflated by 1.2. The fourth-order pair is refit
    only when the second-order constants fail to bound ``E||v||^4``.
    """
    if n_samples < 10_000:
        raise ValueError("n_samples must be at least 1e4")
    if not radius > 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng() if rng is None else rng
    sv = cost.sigma_v_sq()
    mom = noise_moments(cost, noise_grid(cost, radius, rng), n_samples, rng)
    mask = mom.dist_sq > 0
    slopes = (mom.m2[mask] - sv) / mom.dist_sq[mask]
    alpha = ALPHA_INFLATION * max(0.0, float(np.max(slopes))) if slopes.size else 0.0
    fourth_ok = np.all(mom.m4 <= alpha ** 2 * mom.dist_sq ** 2 + sv ** 2 + 3 * mom.m4_se)
    if fourth_ok:
        return NoiseParams(alpha=alpha, sigma_v_sq=sv)
    a4, s4 = _fit_fourth(mom)
    return NoiseParams(alpha=alpha, sigma_v_sq=sv, alpha4=a4, sigma_v_sq4=s4)


def network_noise_params(params) -> NoiseParams:
    """Network-wide constants: the max over agents of each field."""
    params = list(params)
    return NoiseParams(
        alpha=max(p.alpha for p in params),
        sigma_v_sq=max(p.sigma_v_sq for p in params),
        alpha4=max(p.alpha4 for p in params),
        sigma_v_sq4=max(p.sigma_v_sq4 for p in params),
    )


def real_cost(cost: QuadraticCost):
    """``J`` as a function of the real embedding, for finite-difference checks."""
    return lambda wbar: cost.evaluate(crcalc.unembed_real(wbar))
