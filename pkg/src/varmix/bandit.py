"""Weighted OFUL and the OFUL baseline on finite decision sets."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .regression import ConfidenceSpec, WlsState, hoeffding_radius, weighted_oful_radius
from .rng import RUN_TAG, stream
from .traces import RegretTrace

ALGORITHMS = ("weighted-oful", "oful")
SIGMA_KINDS = ("constant", "cyclic", "action")


class BanditError(ValueError):
    pass


@dataclass(eq=False)
class BanditEnv:
    """Linear bandit with a fixed finite action set and Rademacher noise.

    The noise of round t is eps = +-sigma_t with equal probability, so
    |eps| <= R and E[eps^2] = sigma_t^2.  ``sigma_kind`` selects how sigma_t
    is produced from ``sigma_values``: ``constant`` uses the first value,
    ``cyclic`` cycles over rounds and ``action`` indexes by the chosen action
    (so the variance depends on the decision and is only known afterwards).
    """

    actions: np.ndarray
    mu_star: np.ndarray
    noise_bound: float = 1.0
    sigma_kind: str = "constant"
    sigma_values: tuple = (0.05,)

    def __post_init__(self):
        self.actions = np.array(self.actions, dtype=float, ndmin=2)
        self.mu_star = np.array(self.mu_star, dtype=float)
        self.sigma_values = tuple(float(s) for s in self.sigma_values)
        problems = []
        if self.actions.shape[1:] != self.mu_star.shape:
            problems.append(f"actions {self.actions.shape} do not match mu_star {self.mu_star.shape}")
        elif np.abs(self.actions @ self.mu_star).max(initial=0.0) > 1.0 + 1e-12:
            problems.append("some action has |<a, mu*>| > 1")
        if self.sigma_kind not in SIGMA_KINDS:
            problems.append(f"sigma_kind must be one of {SIGMA_KINDS}, got {self.sigma_kind!r}")
        if not self.sigma_values:
            problems.append("sigma_values is empty")
        if any(not 0.0 <= s <= self.noise_bound for s in self.sigma_values):
            problems.append(f"sigma values must lie in [0, R={self.noise_bound}]")
        if problems:
            raise BanditError("; ".join(problems))
        self.means = self.actions @ self.mu_star
        self.best = float(self.means.max(initial=0.0))

    @property
    def dim(self):
        return self.mu_star.shape[0]

    @property
    def action_bound(self):
        return float(np.linalg.norm(self.actions, axis=1).max())

    def decision_set(self, t):
        return self.actions

    def sigma(self, t, index):
        vals = self.sigma_values
        if self.sigma_kind == "constant":
            return vals[0]
        if self.sigma_kind == "cyclic":
            return vals[(t - 1) % len(vals)]
        return vals[index % len(vals)]

    def pull(self, t, index, rng):
        """Reward and sigma_t for playing action ``index`` in round t."""
        s = self.sigma(t, index)
        eps = s if rng.random() < 0.5 else -s
        return float(self.means[index]) + eps, s


def sphere_env(rng, dim, n_actions=20, param_bound=1.0, noise_bound=1.0,
               sigma_kind="constant", sigma_values=(0.05,)):
    """Actions drawn uniformly from the unit sphere; mu* uniform on the sphere of
    radius ``param_bound`` (at most 1 so that rewards stay in [-1, 1])."""
    a = rng.standard_normal((n_actions, dim))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    mu = rng.standard_normal(dim)
    mu *= param_bound / np.linalg.norm(mu)
    return BanditEnv(a, mu, noise_bound, sigma_kind, sigma_values)


def floor_sigma_bar(noise_bound, dim, sigma_t):
    """sigma_bar_t = max(R / sqrt(d), sigma_t)."""
    return max(noise_bound / math.sqrt(dim), sigma_t)


def unit_sigma_bar(noise_bound, dim, sigma_t):
    return 1.0


@dataclass
class AgentSpec:
    algorithm: str = "weighted-oful"
    lam: float = 1.0
    delta: float = 0.05
    param_bound: float = 1.0
    noise_bound: float = 1.0
    action_bound: float = 1.0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise BanditError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")


@dataclass
class WeightedOfulAgent:
    """Optimistic linear bandit agent.

    With ``radius="weighted-oful"`` the ellipsoid radius is the weighted OFUL
    one evaluated at the running sigma_bar_min; with ``"hoeffding"`` it is the
    sub-Gaussian radius (which already contains the sqrt(lam) B bias).
    """

    spec: ConfidenceSpec
    radius: str = "weighted-oful"
    sigma_rule: object = floor_sigma_bar
    state: WlsState = field(init=False)
    sigma_bar_min: float = field(init=False, default=math.inf)
    t: int = field(init=False, default=0)

    def __post_init__(self):
        if self.radius not in ("weighted-oful", "hoeffding"):
            raise BanditError(f"unknown radius policy {self.radius!r}")
        self.state = WlsState(self.spec.dim, self.spec.lam)

    @classmethod
    def from_spec(cls, dim, agent):
        spec = ConfidenceSpec(dim=dim, noise_bound=agent.noise_bound, variance_bound=agent.noise_bound,
                              context_bound=agent.action_bound, lam=agent.lam, delta=agent.delta,
                              param_bound=agent.param_bound)
        if agent.algorithm == "oful":
            return cls(spec, radius="hoeffding", sigma_rule=unit_sigma_bar)
        return cls(spec)

    def width(self):
        """Multiplier of the bonus after t observations: beta_t + sqrt(lam) B."""
        spec = self.spec
        if self.radius == "hoeffding":
            return hoeffding_radius(spec, self.t)
        bias = math.sqrt(spec.lam) * spec.param_bound
        if self.t == 0:
            return bias
        return weighted_oful_radius(replace(spec, sigma_bar_min=self.sigma_bar_min), self.t) + bias

    def scores(self, actions):
        actions = np.asarray(actions, dtype=float)
        return actions @ self.state.estimate() + self.width() * self.state.bonus(actions)

    def select_action(self, actions):
        """Index of the optimistic action (lowest index on ties) and its score."""
        if len(actions) == 0:
            raise BanditError("empty decision set")
        s = self.scores(actions)
        i = int(np.argmax(s))
        return i, float(s[i])

    def observe(self, action, reward, sigma_t):
        if not math.isfinite(reward):
            raise BanditError(f"non-finite reward {reward!r}")
        if not sigma_t >= 0:
            raise BanditError(f"sigma_t must be >= 0, got {sigma_t}")
        sb = self.sigma_rule(self.spec.noise_bound, self.spec.dim, sigma_t)
        self.state.update(action, reward, sb)
        self.sigma_bar_min = min(self.sigma_bar_min, sb)
        self.t += 1
        return sb

    def contains(self, mu):
        """Whether mu lies in the current confidence ellipsoid."""
        return self.state.norm(np.asarray(mu) - self.state.estimate()) <= self.width()


def run_once(env, agent_spec, T, seed, base_seed=0, record_coverage=False):
    """One seeded run; columns t, cumulative_regret, radius, sigma_bar."""
    if T < 1:
        raise BanditError(f"T must be >= 1, got {T}")
    rng = stream(base_seed, seed, RUN_TAG)
    agent = WeightedOfulAgent.from_spec(env.dim, agent_spec)
    cum = np.empty(T)
    radius = np.empty(T)
    sbar = np.empty(T)
    covered = True
    total = 0.0
    for t in range(1, T + 1):
        actions = env.decision_set(t)
        i, _ = agent.select_action(actions)
        reward, sigma_t = env.pull(t, i, rng)
        total += env.best - float(env.means[i])
        sbar[t - 1] = agent.observe(actions[i], reward, sigma_t)
        radius[t - 1] = agent.width()
        cum[t - 1] = total
        if record_coverage:
            covered = covered and agent.contains(env.mu_star)
    meta = {"algorithm": agent_spec.algorithm,
            "potential": agent.state.potential,
            "potential_bound": agent.state.potential_bound()}
    if record_coverage:
        meta["covered"] = covered
    cols = {"t": np.arange(1, T + 1), "cumulative_regret": cum, "radius": radius, "sigma_bar": sbar}
    return RegretTrace(seed, cols, "cumulative_regret", meta=meta)


def run_experiment(env, agent_spec, T, seeds, base_seed=0, record_coverage=False):
    return [run_once(env, agent_spec, T, s, base_seed, record_coverage) for s in seeds]
