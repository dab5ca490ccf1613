"""JSON experiment configuration: parsing, validation and scenario assembly.

Complex numbers are written as plain numbers (real) or ``[re, im]`` pairs.
Every validation error carries the dotted path of the offending field.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .costs import NoiseParams, QuadraticCost, analytic_noise_params, network_noise_params, noise_params
from .engine import Scenario
from .netmodel import (Bernoulli, BernoulliLink, Beta, BetaWeight, CombinationModel, Constant,
                       MeanGraph, StepSizeModel)

FIXTURES = ("ring3_bernoulli", "ring3_beta", "unstable_large_step")

_TOP_KEYS = {"network", "cost", "noise", "step_model", "combination_model", "run", "outputs"}


class ConfigError(ValueError):
    """Raised with every problem found; ``errors`` holds ``(path, message)`` pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{p}: {m}" if p else m for p, m in self.errors))


@dataclass(frozen=True)
class RunSettings:
    n_trials: int = 100
    horizon: int = 1000
    base_seed: int = 0
    window_fraction: float = 0.5


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    costs: tuple
    step_model: StepSizeModel
    comb_model: CombinationModel
    noise_spec: dict
    run: RunSettings
    output_dir: str | None = None
    w_init: np.ndarray | None = None
    source: str | None = None
    _noise: list = field(default_factory=list, repr=False)

    @property
    def n_agents(self) -> int:
        return len(self.costs)

    @property
    def graph(self) -> MeanGraph:
        return MeanGraph.from_model(self.comb_model)

    def noise(self) -> NoiseParams:
        if not self._noise:
            self._noise.append(_resolve_noise(self.noise_spec, self.costs, self.run.base_seed))
        return self._noise[0]

    def scenario(self) -> Scenario:
        return Scenario(self.costs, self.step_model, self.comb_model, self.noise(), self.w_init)

    def with_run(self, **changes) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, **changes), _noise=list(self._noise))

    def with_steps(self, step_model: StepSizeModel) -> "ExperimentConfig":
        return replace(self, step_model=step_model, _noise=list(self._noise))


def _resolve_noise(spec: dict, costs, seed: int) -> NoiseParams:
    method = spec.get("method", "analytic")
    if method == "given":
        return NoiseParams(alpha=spec["alpha"], sigma_v_sq=spec["sigma_v_sq"])
    if method == "analytic":
        return network_noise_params(analytic_noise_params(c) for c in costs)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6E6F6973]))
    return network_noise_params(noise_params(c, n_samples=spec.get("samples", 10_000),
                                             radius=spec.get("radius", 1.0), rng=rng) for c in costs)


# --- low-level field readers -------------------------------------------------

class _Reader:
    def __init__(self):
        self.errors = []

    def err(self, path, msg):
        self.errors.append((path, msg))
        return None

    def obj(self, val, path, allowed, required=()):
        if not isinstance(val, dict):
            return self.err(path, "expected an object")
        for k in sorted(set(val) - set(allowed)):
            self.err(f"{path}.{k}" if path else k, "unknown key")
        for k in required:
            if k not in val:
                self.err(f"{path}.{k}" if path else k, "missing required key")
        return val

    def num(self, val, path, lo=None, hi=None, lo_open=False, hi_open=False):
        if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
            return self.err(path, f"expected a finite number, got {val!r}")
        val = float(val)
        if lo is not None and (val < lo or (lo_open and val == lo)):
            return self.err(path, f"must be {'>' if lo_open else '>='} {lo}, got {val!r}")
        if hi is not None and (val > hi or (hi_open and val == hi)):
            return self.err(path, f"must be {'<' if hi_open else '<='} {hi}, got {val!r}")
        return val

    def integer(self, val, path, lo=0):
        if isinstance(val, bool) or not isinstance(val, int):
            return self.err(path, f"expected an integer, got {val!r}")
        if val < lo:
            return self.err(path, f"must be >= {lo}, got {val!r}")
        return val

    def cplx(self, val, path):
        if isinstance(val, list):
            if len(val) != 2:
                return self.err(path, "complex entries are [re, im] pairs")
            re, im = self.num(val[0], path + "[0]"), self.num(val[1], path + "[1]")
            return None if re is None or im is None else complex(re, im)
        v = self.num(val, path)
        return None if v is None else complex(v)

    def vector(self, val, path, n):
        if not isinstance(val, list) or len(val) != n:
            return self.err(path, f"expected a list of {n} entries")
        out = [self.cplx(x, f"{path}[{i}]") for i, x in enumerate(val)]
        return None if any(x is None for x in out) else np.array(out, dtype=complex)


# --- sections ----------------------------------------------------------------

def _network(r: _Reader, sec) -> tuple[int, list] | None:
    if r.obj(sec, "network", {"n_agents", "topology", "edges"}, ("n_agents",)) is None:
        return None
    n = r.integer(sec.get("n_agents"), "network.n_agents", lo=1)
    if n is None:
        return None
    if ("topology" in sec) == ("edges" in sec):
        return r.err("network", "give exactly one of 'topology' or 'edges'")
    if "topology" in sec:
        topo = sec["topology"]
        if topo == "ring":
            edges = sorted({(l, k) for k in range(n) for l in ((k - 1) % n, (k + 1) % n) if l != k})
        elif topo == "complete":
            edges = [(l, k) for l in range(n) for k in range(n) if l != k]
        else:
            return r.err("network.topology", f"unknown topology {topo!r}; use 'ring' or 'complete'")
        return n, edges
    edges = []
    if not isinstance(sec["edges"], list):
        return r.err("network.edges", "expected a list of [from, to] pairs")
    for i, e in enumerate(sec["edges"]):
        p = f"network.edges[{i}]"
        if not (isinstance(e, list) and len(e) == 2):
            r.err(p, "expected a [from, to] pair")
            continue
        l, k = r.integer(e[0], p + "[0]"), r.integer(e[1], p + "[1]")
        if l is None or k is None:
            continue
        if l >= n or k >= n:
            r.err(p, f"agent index outside 0..{n - 1}")
        elif l == k:
            r.err(p, "self-loops are implied by the absorbed diagonal weight")
        elif (l, k) in edges:
            r.err(p, "duplicate edge")
        else:
            edges.append((l, k))
    return n, edges


def _matrix(r: _Reader, spec, path, M):
    if spec == "identity":
        return np.eye(M, dtype=complex)
    if isinstance(spec, dict):
        if r.obj(spec, path, {"diag"}, ("diag",)) is None or "diag" not in spec:
            return None
        d = r.vector(spec["diag"], path + ".diag", M)
        return None if d is None else np.diag(d)
    if not isinstance(spec, list) or len(spec) != M:
        return r.err(path, f"expected 'identity', {{'diag': [...]}} or an {M}x{M} matrix")
    rows = [r.vector(row, f"{path}[{i}]", M) for i, row in enumerate(spec)]
    return None if any(x is None for x in rows) else np.array(rows)


def _costs(r: _Reader, sec, n):
    keys = {"dim", "R_u", "R_u_per_agent", "w_opt", "sigma_n_sq"}
    if r.obj(sec, "cost", keys, ("dim", "w_opt", "sigma_n_sq")) is None:
        return None
    M = r.integer(sec.get("dim"), "cost.dim", lo=1)
    if M is None:
        return None
    w = r.vector(sec.get("w_opt"), "cost.w_opt", M)
    if ("R_u" in sec) and ("R_u_per_agent" in sec):
        return r.err("cost", "give 'R_u' or 'R_u_per_agent', not both")
    if "R_u_per_agent" in sec:
        lst = sec["R_u_per_agent"]
        if not isinstance(lst, list) or len(lst) != n:
            return r.err("cost.R_u_per_agent", f"expected a list of {n} matrix specs")
        Rs = [_matrix(r, s, f"cost.R_u_per_agent[{k}]", M) for k, s in enumerate(lst)]
    else:
        R = _matrix(r, sec.get("R_u", "identity"), "cost.R_u", M)
        Rs = [R] * n
    sn = sec.get("sigma_n_sq")
    if isinstance(sn, list):
        if len(sn) != n:
            return r.err("cost.sigma_n_sq", f"expected one value or a list of {n}")
        sns = [r.num(v, f"cost.sigma_n_sq[{k}]", lo=0) for k, v in enumerate(sn)]
    else:
        sns = [r.num(sn, "cost.sigma_n_sq", lo=0)] * n
    if w is None or any(x is None for x in Rs) or any(x is None for x in sns):
        return None
    out = []
    for k, (R, s) in enumerate(zip(Rs, sns)):
        path = f"cost.R_u_per_agent[{k}]" if "R_u_per_agent" in sec else "cost.R_u"
        try:
            out.append(QuadraticCost(R, w, s))
        except ValueError as exc:
            return r.err(path, str(exc))
    return out


def _noise(r: _Reader, sec):
    if sec is None:
        return {"method": "analytic"}
    if r.obj(sec, "noise", {"method", "alpha", "sigma_v_sq", "samples", "radius"}) is None:
        return None
    method = sec.get("method", "given" if "alpha" in sec else "analytic")
    if method == "given":
        if "alpha" not in sec or "sigma_v_sq" not in sec:
            return r.err("noise", "method 'given' needs both 'alpha' and 'sigma_v_sq'")
        a = r.num(sec["alpha"], "noise.alpha", lo=0)
        s = r.num(sec["sigma_v_sq"], "noise.sigma_v_sq", lo=0)
        return None if a is None or s is None else {"method": "given", "alpha": a, "sigma_v_sq": s}
    if method == "analytic":
        extra = set(sec) - {"method"}
        return r.err(f"noise.{sorted(extra)[0]}", "not used by method 'analytic'") if extra else {"method": "analytic"}
    if method == "fit":
        out = {"method": "fit"}
        if "samples" in sec:
            out["samples"] = r.integer(sec["samples"], "noise.samples", lo=10_000)
        if "radius" in sec:
            out["radius"] = r.num(sec["radius"], "noise.radius", lo=0, lo_open=True)
        return None if None in out.values() else out
    return r.err("noise.method", f"unknown method {method!r}; use 'analytic', 'given' or 'fit'")


def _step_dist(r: _Reader, spec, path):
    if r.obj(spec, path, {"type", "mu", "q", "xi", "zeta", "phi"}, ("type", "mu")) is None:
        return None
    kind = spec.get("type")
    mu = r.num(spec.get("mu"), path + ".mu", lo=0, lo_open=True)
    allowed = {"constant": set(), "bernoulli": {"q"}, "beta": {"xi", "zeta", "phi"}}
    if kind not in allowed:
        return r.err(path + ".type", f"unknown step type {kind!r}; use constant, bernoulli or beta")
    for k in sorted(set(spec) - {"type", "mu"} - allowed[kind]):
        r.err(f"{path}.{k}", f"not a parameter of the {kind} step model")
    if kind == "constant":
        return None if mu is None else Constant(mu)
    if kind == "bernoulli":
        q = r.num(spec.get("q"), path + ".q", lo=0, hi=1, lo_open=True, hi_open=True)
        return None if mu is None or q is None else Bernoulli(q, mu)
    xi = r.num(spec.get("xi"), path + ".xi", lo=0, lo_open=True)
    if ("zeta" in spec) == ("phi" in spec):
        return r.err(path, "beta step model needs exactly one of 'zeta' or 'phi'")
    if "phi" in spec:
        phi = r.num(spec["phi"], path + ".phi", lo=0, lo_open=True)
        return None if None in (mu, xi, phi) else Beta.from_ratio(xi, phi, mu)
    zeta = r.num(spec["zeta"], path + ".zeta", lo=0, lo_open=True)
    return None if None in (mu, xi, zeta) else Beta(xi, zeta, mu)


def _steps(r: _Reader, sec, n):
    if isinstance(sec, dict) and "per_agent" in sec:
        if r.obj(sec, "step_model", {"per_agent"}) is None:
            return None
        lst = sec["per_agent"]
        if not isinstance(lst, list) or len(lst) != n:
            return r.err("step_model.per_agent", f"expected a list of {n} step specs")
        dists = [_step_dist(r, s, f"step_model.per_agent[{k}]") for k, s in enumerate(lst)]
        return None if any(d is None for d in dists) else StepSizeModel(dists)
    d = _step_dist(r, sec, "step_model")
    return None if d is None else StepSizeModel.uniform(d, n)


def _link_dist(r: _Reader, spec, path):
    if r.obj(spec, path, {"type", "eta", "a", "xi", "zeta", "from", "to"}, ("type", "a")) is None:
        return None
    kind = spec.get("type")
    a = r.num(spec.get("a"), path + ".a", lo=0, hi=1, lo_open=True, hi_open=True)
    if kind == "bernoulli_link":
        eta = r.num(spec.get("eta", 1.0), path + ".eta", lo=0, hi=1, lo_open=True)
        bad = {"xi", "zeta"} & set(spec)
        if bad:
            return r.err(f"{path}.{sorted(bad)[0]}", "not a parameter of bernoulli_link")
        return None if None in (a, eta) else BernoulliLink(eta, a)
    if kind == "beta_weight":
        xi = r.num(spec.get("xi"), path + ".xi", lo=0, lo_open=True)
        zeta = r.num(spec.get("zeta"), path + ".zeta", lo=0, lo_open=True)
        if "eta" in spec:
            return r.err(path + ".eta", "not a parameter of beta_weight")
        return None if None in (a, xi, zeta) else BetaWeight(xi, zeta, a)
    return r.err(path + ".type", f"unknown link type {kind!r}; use bernoulli_link or beta_weight")


def _combination(r: _Reader, sec, n, edges):
    if r.obj(sec, "combination_model", {"default", "links"}) is None:
        return None
    default = None
    if "default" in sec:
        default = _link_dist(r, sec["default"], "combination_model.default")
        if default is None:
            return None
    links, paths = {}, {}
    for i, spec in enumerate(sec.get("links", [])):
        p = f"combination_model.links[{i}]"
        d = _link_dist(r, spec, p)
        l = r.integer(spec.get("from"), p + ".from") if isinstance(spec, dict) else None
        k = r.integer(spec.get("to"), p + ".to") if isinstance(spec, dict) else None
        if d is None or l is None or k is None:
            continue
        if (l, k) not in edges:
            r.err(p, f"link ({l}, {k}) is not an edge of the network")
            continue
        if (l, k) in links:
            r.err(p, f"link ({l}, {k}) given twice")
            continue
        links[(l, k)] = d
        paths.setdefault(k, []).append(p)
    for e in edges:
        if e not in links:
            if default is None:
                r.err("combination_model", f"edge {e} has no link spec and no default is given")
            else:
                links[e] = default
                paths.setdefault(e[1], []).append("combination_model.default")
    if r.errors:
        return None
    for k in range(n):
        total = sum(d.a for (l, kk), d in links.items() if kk == k)
        if total > 1 + 1e-12:
            where = ", ".join(sorted(set(paths[k])))
            return r.err(f"combination_model (links into agent {k}: {where})",
                         f"weights a_lk into agent {k} sum to {total:.6g} > 1")
    return CombinationModel(n, links)


def _run(r: _Reader, sec, n, M):
    sec = {} if sec is None else sec
    keys = {"n_trials", "horizon", "base_seed", "window_fraction", "w_init"}
    if r.obj(sec, "run", keys) is None:
        return None, None
    kw = {}
    if "n_trials" in sec:
        kw["n_trials"] = r.integer(sec["n_trials"], "run.n_trials", lo=1)
    if "horizon" in sec:
        kw["horizon"] = r.integer(sec["horizon"], "run.horizon", lo=0)
    if "base_seed" in sec:
        kw["base_seed"] = r.integer(sec["base_seed"], "run.base_seed", lo=0)
    if "window_fraction" in sec:
        kw["window_fraction"] = r.num(sec["window_fraction"], "run.window_fraction", lo=0, hi=0.5, lo_open=True)
    w0 = None
    if "w_init" in sec and M is not None:
        lst = sec["w_init"]
        if not isinstance(lst, list) or len(lst) != n:
            r.err("run.w_init", f"expected {n} vectors")
        else:
            rows = [r.vector(v, f"run.w_init[{k}]", M) for k, v in enumerate(lst)]
            w0 = None if any(x is None for x in rows) else np.array(rows)
    if any(v is None for v in kw.values()):
        return None, None
    return RunSettings(**kw), w0


def config_from_dict(data, source: str | None = None) -> ExperimentConfig:
    r = _Reader()
    if r.obj(data, "", _TOP_KEYS, ("network", "cost", "step_model", "combination_model")) is None:
        raise ConfigError(r.errors)
    if r.errors:
        raise ConfigError(r.errors)
    net = _network(r, data["network"])
    n, edges = net if net else (None, None)
    costs = _costs(r, data["cost"], n) if n else None
    noise = _noise(r, data.get("noise"))
    steps = _steps(r, data["step_model"], n) if n else None
    comb = _combination(r, data["combination_model"], n, edges) if n else None
    M = costs[0].dim if costs else None
    run, w0 = _run(r, data.get("run"), n, M)
    out_dir = None
    if "outputs" in data:
        if r.obj(data["outputs"], "outputs", {"directory"}) is not None:
            out_dir = data["outputs"].get("directory")
            if out_dir is not None and not isinstance(out_dir, str):
                r.err("outputs.directory", "expected a string")
    if r.errors:
        raise ConfigError(r.errors)
    cfg = ExperimentConfig(costs=tuple(costs), step_model=steps, comb_model=comb, noise_spec=noise,
                           run=run, output_dir=out_dir, w_init=w0, source=source)
    try:
        graph = cfg.graph
        if not graph.is_connected():
            raise ConfigError([("network", "the mean graph is not strongly connected")])
        cfg.scenario().report()
    except ConfigError:
        raise
    except (ValueError, AssertionError) as exc:
        raise ConfigError([("", str(exc))]) from exc
    return cfg


def parse_config(path) -> ExperimentConfig:
    """Read and validate a JSON config; raises :class:`ConfigError` on any problem."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([("", f"cannot read {path}: {exc.strerror}")]) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([("", f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}")]) from exc
    return config_from_dict(data, source=str(path))


def fixture_path(name: str) -> Path:
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")
    return Path(str(resources.files("asyncnet") / "fixtures" / f"{name}.json"))


def load_fixture(name: str) -> ExperimentConfig:
    return parse_config(fixture_path(name))
