"""UCRL-VTR+ and the UCRL-VTR baseline for episodic linear mixture MDPs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import envs
from .regression import WlsState
from .rng import RUN_TAG, stream
from .traces import RegretTrace

ALGORITHMS = ("ucrl-vtr+", "ucrl-vtr")
OPTIMISM_TOL = 1e-9


def beta_schedules(d, k, H, lam, delta, B):
    """(beta_hat, beta_check, beta_tilde) for episode k >= 1."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    lc = math.log(4.0 * k * k * H / delta)
    bias = math.sqrt(lam) * B
    g = math.sqrt(math.log1p(k / lam) * lc)
    hat = 8.0 * math.sqrt(d) * g + 4.0 * math.sqrt(d) * lc + bias
    check = 8.0 * d * g + 4.0 * math.sqrt(d) * lc + bias
    H2 = H * H
    tilde = 8.0 * math.sqrt(d * H2 * H2 * math.log1p(k * H2 * H2 / (d * lam)) * lc) + 4.0 * H2 * lc + bias
    return hat, check, tilde


def baseline_beta(d, k, H, lam, delta, B):
    """Hoeffding-type radius with noise scale H: H sqrt(d log((1 + k H^2/lam)/delta)) + sqrt(lam) B."""
    return H * math.sqrt(d * math.log((1.0 + k * H * H / lam) / delta)) + math.sqrt(lam) * B


def estimated_variance(phi_v, phi_v2, theta_hat, theta_tilde, H):
    """Clipped second moment minus clipped squared first moment; may be negative."""
    second = min(max(float(phi_v2 @ theta_tilde), 0.0), H * H)
    first = min(max(float(phi_v @ theta_hat), 0.0), H)
    return second - first * first


def offset(bonus_hat, bonus_tilde, beta_check, beta_tilde, H):
    H2 = H * H
    return min(H2, 2.0 * H * beta_check * bonus_hat) + min(H2, beta_tilde * bonus_tilde)


def sigma_bar(var_est, err, H, d):
    return math.sqrt(max(H * H / d, var_est + err))


@dataclass
class AgentConfig:
    algorithm: str = "ucrl-vtr+"
    lam: float = 1.0
    delta: float = 0.05
    param_bound: float = 1.0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")


@dataclass
class EpisodicAgentState:
    """Per-stage moment regressions plus the current optimistic tables.

    ``V`` has H+1 rows with ``V[H] == 0``; ``Q`` and ``policy`` have H rows.
    The baseline keeps unit weights and never touches the second-moment states.
    """

    env: envs.MixtureEnv
    config: AgentConfig = field(default_factory=AgentConfig)
    k: int = 1

    def __post_init__(self):
        env = self.env
        if not env.episodic:
            raise ValueError("episodic agent needs an episodic environment")
        H, d = env.horizon, env.dim
        self.H, self.d = H, d
        self.hat = [WlsState(d, self.config.lam) for _ in range(H)]
        self.tilde = [WlsState(d, self.config.lam) for _ in range(H)]
        self.Q = np.zeros((H, env.n_states, env.n_actions))
        self.V = np.zeros((H + 1, env.n_states))
        self.policy = np.zeros((H, env.n_states), dtype=int)
        self.theta_hat = np.zeros((H, d))
        self.theta_tilde = np.zeros((H, d))

    @property
    def plus(self):
        return self.config.algorithm == "ucrl-vtr+"

    def betas(self):
        c = self.config
        if self.plus:
            return beta_schedules(self.d, self.k, self.H, c.lam, c.delta, c.param_bound)
        b = baseline_beta(self.d, self.k, self.H, c.lam, c.delta, c.param_bound)
        return b, 0.0, 0.0

    def backward_pass(self, beta_hat=None, theta_hat=None):
        """Optimistic backward induction; refreshes Q, V, policy and the estimates.

        ``theta_hat`` (H x d) overrides the regression estimates, e.g. to plan
        with the true parameters.
        """
        if beta_hat is None:
            beta_hat = self.betas()[0]
        env, H = self.env, self.H
        self.V[H] = 0.0
        for h in range(H - 1, -1, -1):
            self.theta_hat[h] = self.hat[h].estimate() if theta_hat is None else theta_hat[h]
            if self.plus:
                self.theta_tilde[h] = self.tilde[h].estimate()
            phi = env.feature_expectation(self.V[h + 1])
            q = env.reward[h] + phi @ self.theta_hat[h] + beta_hat * self.hat[h].bonus(phi)
            # the lower clamp keeps value targets inside [0, H]
            self.Q[h] = np.clip(q, 0.0, H)
            self.policy[h] = np.argmax(self.Q[h], axis=1)
            self.V[h] = self.Q[h].max(axis=1)
        return self.Q, self.V, self.policy

    def features(self, s, a, h):
        v = self.V[h + 1]
        return self.env.feature_expectation(v, s, a), self.env.feature_expectation(v * v, s, a)

    def variance_estimate(self, s, a, h):
        phi_v, phi_v2 = self.features(s, a, h)
        return estimated_variance(phi_v, phi_v2, self.theta_hat[h], self.theta_tilde[h], self.H)

    def offset_E(self, s, a, h, betas=None):
        _, check, tilde = betas or self.betas()
        phi_v, phi_v2 = self.features(s, a, h)
        return offset(self.hat[h].bonus(phi_v), self.tilde[h].bonus(phi_v2), check, tilde, self.H)

    def sigma_bar(self, s, a, h, betas=None):
        return sigma_bar(self.variance_estimate(s, a, h), self.offset_E(s, a, h, betas), self.H, self.d)

    def absorb_step(self, s, a, s_next, h, betas=None):
        """Update the stage-h regressions with one transition; returns (sigma_bar, bonus)."""
        phi_v, phi_v2 = self.features(s, a, h)
        v = self.V[h + 1]
        bonus = self.hat[h].bonus(phi_v)
        if not self.plus:
            self.hat[h].update(phi_v, v[s_next], 1.0)
            return 1.0, bonus
        _, check, tilde = betas or self.betas()
        var = estimated_variance(phi_v, phi_v2, self.theta_hat[h], self.theta_tilde[h], self.H)
        err = offset(bonus, self.tilde[h].bonus(phi_v2), check, tilde, self.H)
        sb = sigma_bar(var, err, self.H, self.d)
        self.hat[h].update(phi_v, v[s_next], sb)
        self.tilde[h].update(phi_v2, v[s_next] ** 2, 1.0)
        return sb, bonus


@dataclass
class EpisodicRun:
    trace: RegretTrace
    optimistic_all: bool
    value_optimistic_all: bool
    variance_dominated: int
    variance_checked: int
    total_variance: float
    potential_ok: bool


def run(env, K, config, seed, base_seed=0, diagnostics=True):
    """K episodes of the agent on ``env``.

    Per-episode regret is exact: V*_1(s_1) - V^{pi^k}_1(s_1) on the true model.
    The optimistic flag records Q_{k,1} >= Q*_1 at every (s, a).
    """
    rng = stream(base_seed, seed, RUN_TAG)
    agent = EpisodicAgentState(env, config)
    H = env.horizon
    V_star, Q_star = envs.optimal_values(env)
    s1 = env.init_state

    ep_regret = np.empty(K)
    min_sb = np.empty(K)
    max_bonus = np.empty(K)
    flags = np.empty(K, dtype=bool)
    value_opt = True
    dominated = checked = 0
    total_var = 0.0

    for k in range(1, K + 1):
        agent.k = k
        betas = agent.betas()
        agent.backward_pass(betas[0])
        flags[k - 1] = bool(np.all(agent.Q[0] >= Q_star[0] - OPTIMISM_TOL))
        value_opt &= agent.V[0, s1] >= V_star[0, s1] - OPTIMISM_TOL
        V_pi = envs.policy_values(env, agent.policy)
        ep_regret[k - 1] = V_star[0, s1] - V_pi[0, s1]

        s = s1
        lo, hi = math.inf, 0.0
        for h in range(H):
            a = int(agent.policy[h, s])
            s_next = env.sample_transition(s, a, h, rng)
            if diagnostics:
                true_var = envs.value_variance(env, agent.V[h + 1], h, s, a)
                total_var += envs.value_variance(env, V_pi[h + 1], h, s, a)
            sb, bonus = agent.absorb_step(s, a, s_next, h, betas)
            if diagnostics and agent.plus:
                checked += 1
                dominated += sb * sb >= true_var
            lo, hi = min(lo, sb), max(hi, bonus)
            s = s_next
        min_sb[k - 1], max_bonus[k - 1] = lo, hi

    potential_ok = all(st.potential <= st.potential_bound() for st in agent.hat)
    cols = {
        "k": np.arange(1, K + 1),
        "episode_regret": ep_regret,
        "cumulative_regret": np.cumsum(ep_regret),
        "min_sigma_bar": min_sb,
        "max_bonus": max_bonus,
        "optimistic_flag": flags,
    }
    meta = {"algorithm": config.algorithm,
            "potential": [st.potential for st in agent.hat],
            "potential_bound": [st.potential_bound() for st in agent.hat]}
    trace = RegretTrace(seed, cols, "cumulative_regret", meta=meta)
    return EpisodicRun(trace, bool(flags.all()), bool(value_opt), int(dominated), int(checked),
                       float(total_var), potential_ok)
