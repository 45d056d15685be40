"""Monte Carlo checks of the Bernstein self-normalized bound.

Each replica draws contexts x_t and scaled Rademacher noise eta_t = +-s and
tracks, at every t,

    S_t = ||sum_i x_i eta_i||_{Z_t^-1},   Z_t = lam I + sum_i x_i x_i^T,

and the estimation error ||mu_t - mu*||_{Z_t} of ridge regression on
y_i = <x_i, mu*> + eta_i.  Replicas are simulated side by side but every
replica draws from its own (base_seed, replica) stream.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .regression import ConfidenceSpec, bernstein_radius, faury_radius, hoeffding_radius
from .rng import stream
from .traces import fmt

CONTEXTS = ("sphere", "fixed", "adversarial")
N_FIXED = 8


class ScenarioError(ValueError):
    pass


@dataclass
class MartingaleScenario:
    """``noise_scale`` is the Rademacher amplitude s; it must satisfy
    s <= variance_bound <= noise_bound so that |eta| <= R and E[eta^2] <= sigma^2."""

    dim: int = 4
    horizon: int = 1000
    contexts: str = "sphere"
    noise_bound: float = 1.0
    variance_bound: float = 1.0
    noise_scale: float = 1.0
    context_bound: float = 1.0
    lam: float = 1.0
    delta: float = 0.1
    param_bound: float = 1.0
    replicas: int = 2000
    base_seed: int = 0
    mu_star: tuple = ()

    def __post_init__(self):
        problems = []
        if self.contexts not in CONTEXTS:
            problems.append(f"contexts must be one of {CONTEXTS}, got {self.contexts!r}")
        if not 0.0 <= self.noise_scale <= self.variance_bound <= self.noise_bound:
            problems.append("need 0 <= noise_scale <= variance_bound <= noise_bound, got "
                            f"{self.noise_scale}, {self.variance_bound}, {self.noise_bound}")
        if self.horizon < 1:
            problems.append(f"horizon must be >= 1, got {self.horizon}")
        if self.replicas < 1:
            problems.append(f"replicas must be >= 1, got {self.replicas}")
        if self.mu_star and len(self.mu_star) != self.dim:
            problems.append(f"mu_star has length {len(self.mu_star)}, expected {self.dim}")
        if self.mu_star and np.linalg.norm(self.mu_star) > self.param_bound * (1 + 1e-12):
            problems.append("||mu_star|| exceeds param_bound")
        if problems:
            raise ScenarioError("; ".join(problems))
        self.spec = ConfidenceSpec(dim=self.dim, noise_bound=self.noise_bound,
                                   variance_bound=self.variance_bound, context_bound=self.context_bound,
                                   lam=self.lam, delta=self.delta, param_bound=self.param_bound)

    def mu(self):
        if self.mu_star:
            return np.asarray(self.mu_star, dtype=float)
        v = np.ones(self.dim)
        return v * self.param_bound / math.sqrt(self.dim)

    def decades(self):
        return [10**j for j in range(1, int(math.log10(self.horizon)) + 1)]


def _radii(spec, T):
    t = np.arange(1, T + 1)
    bern = np.array([bernstein_radius(spec, i) for i in t])
    hoef = np.array([hoeffding_radius(replace(spec, param_bound=0.0), i) for i in t])
    return bern, hoef


@dataclass
class CoverageReport:
    """Per-replica statistics; ``merge`` concatenates in replica order."""

    scenario: MartingaleScenario
    replica: np.ndarray
    max_gap: np.ndarray           # sup_t S_t - beta_t
    max_gap_estimate: np.ndarray  # sup_t ||mu_t - mu*||_Z - beta_t - sqrt(lam)||mu*||
    ratio_bernstein: np.ndarray   # S_T / beta_T
    ratio_hoeffding: np.ndarray   # S_T / (Hoeffding radius without bias)
    decade_ratios: np.ndarray = field(repr=False)  # S_t / beta_t at t = 10, 100, ...

    @property
    def violations(self):
        return (self.max_gap > 0) | (self.max_gap_estimate > 0)

    def violation_fraction(self):
        return float(self.violations.mean()) if len(self.replica) else 0.0

    def slack(self):
        """delta plus three binomial standard deviations."""
        d, n = self.scenario.delta, max(len(self.replica), 1)
        return d + 3.0 * math.sqrt(d * (1 - d) / n)

    def median_ratios(self):
        return float(np.median(self.ratio_bernstein)), float(np.median(self.ratio_hoeffding))

    def merge(self, other):
        cat = lambda a, b: np.concatenate([a, b])  # noqa: E731
        parts = [cat(getattr(self, f), getattr(other, f)) for f in
                 ("replica", "max_gap", "max_gap_estimate", "ratio_bernstein", "ratio_hoeffding", "decade_ratios")]
        order = np.argsort(parts[0], kind="stable")
        return CoverageReport(self.scenario, *(p[order] for p in parts))

    @property
    def header(self):
        return ["replica", "max_gap", "max_gap_estimate", "violated", "ratio_bernstein", "ratio_hoeffding",
                *(f"ratio_t{t}" for t in self.scenario.decades())]

    def rows(self):
        v = self.violations
        for i in range(len(self.replica)):
            yield (int(self.replica[i]), self.max_gap[i], self.max_gap_estimate[i], bool(v[i]),
                   self.ratio_bernstein[i], self.ratio_hoeffding[i], *self.decade_ratios[i])

    def to_csv(self):
        buf = io.StringIO()
        buf.write(",".join(self.header) + "\n")
        for row in self.rows():
            buf.write(",".join(fmt(x) for x in row) + "\n")
        return buf.getvalue()


def _draws(sc, replica):
    """Context directions (for the non-adaptive kinds) and noise signs of one replica."""
    rng = stream(sc.base_seed, replica)
    T, d = sc.horizon, sc.dim
    if sc.contexts == "sphere":
        x = rng.standard_normal((T, d))
    elif sc.contexts == "fixed":
        pool = stream(sc.base_seed, 0, 99).standard_normal((N_FIXED, d))
        x = pool[rng.integers(N_FIXED, size=T)]
    else:
        x = None
    signs = np.where(rng.random(T) < 0.5, -1.0, 1.0)
    return x, signs


def run_tail_check(sc, replicas=None):
    """Simulate the replicas (default: all) and collect coverage statistics."""
    idx = np.arange(sc.replicas) if replicas is None else np.asarray(replicas, dtype=int)
    n, d, T, L, lam = len(idx), sc.dim, sc.horizon, sc.context_bound, sc.lam
    draws = [_draws(sc, int(r)) for r in idx]
    signs = np.stack([s for _, s in draws]) if n else np.zeros((0, T))
    X = None if sc.contexts == "adversarial" or n == 0 else np.stack([x for x, _ in draws])
    if X is not None:
        X *= L / np.linalg.norm(X, axis=2, keepdims=True)

    mu = sc.mu()
    bern, hoef = _radii(sc.spec, T)
    bias = math.sqrt(lam) * float(np.linalg.norm(mu))
    decades = sc.decades()

    Zinv = np.broadcast_to(np.eye(d) / lam, (n, d, d)).copy()
    s = np.zeros((n, d))
    max_gap = np.full(n, -np.inf)
    max_gap_est = np.full(n, -np.inf)
    dec = np.zeros((n, len(decades)))
    e1 = np.zeros(d)
    e1[0] = L
    for t in range(T):
        if X is None:
            # push along the direction in which the statistic is currently largest
            w = np.einsum("nij,nj->ni", Zinv, s)
            nw = np.linalg.norm(w, axis=1, keepdims=True)
            x = np.where(nw > 0, L * w / np.where(nw > 0, nw, 1.0), e1)
        else:
            x = X[:, t]
        Zx = np.einsum("nij,nj->ni", Zinv, x)
        q = np.einsum("ni,ni->n", x, Zx)
        Zinv -= np.einsum("ni,nj->nij", Zx, Zx) / (1.0 + q)[:, None, None]
        s += (sc.noise_scale * signs[:, t])[:, None] * x
        stat = np.sqrt(np.maximum(np.einsum("ni,nij,nj->n", s, Zinv, s), 0.0))
        resid = s - lam * mu
        err = np.sqrt(np.maximum(np.einsum("ni,nij,nj->n", resid, Zinv, resid), 0.0))
        np.maximum(max_gap, stat - bern[t], out=max_gap)
        np.maximum(max_gap_est, err - bern[t] - bias, out=max_gap_est)
        if t + 1 in decades:
            dec[:, decades.index(t + 1)] = stat / bern[t]
    ratio_b = stat / bern[-1] if n else np.zeros(0)
    ratio_h = stat / hoef[-1] if n and hoef[-1] > 0 else np.full(n, np.inf)
    return CoverageReport(sc, idx, max_gap, max_gap_est, ratio_b, ratio_h, dec)


def compare_radii(grid):
    """Evaluate the three radius formulas over an iterable of (ConfidenceSpec, t)."""
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    rows = []
    for spec, t in grid:
        rows.append({
            "dim": spec.dim, "sigma": spec.variance_bound, "R": spec.noise_bound,
            "L": spec.context_bound, "lam": spec.lam, "delta": spec.delta, "B": spec.param_bound, "t": t,
            "bernstein": bernstein_radius(spec, t),
            "hoeffding": hoeffding_radius(spec, t),
            "faury": faury_radius(spec, t),
        })
    return rows
