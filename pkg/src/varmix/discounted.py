"""UCLK+ for discounted linear mixture MDPs: extended value iteration over an
ellipsoidal confidence set with determinant-doubling lazy replanning."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import envs
from .episodic import estimated_variance, offset, sigma_bar
from .regression import WlsState
from .rng import RUN_TAG, stream
from .traces import RegretTrace

LOG2 = math.log(2.0)
# sweep deltas at the level of float rounding carry no contraction information
ROUNDING_SLACK = 8 * np.finfo(float).eps


def beta_schedules(d, t, H_bar, lam, delta, B):
    """(beta_hat, beta_check, beta_tilde) at round t >= 1."""
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    lc = math.log(4.0 * t * t / delta)
    bias = math.sqrt(lam) * B
    g = math.sqrt(math.log1p(t / lam) * lc)
    hat = 8.0 * math.sqrt(d) * g + 4.0 * math.sqrt(d) * lc + bias
    check = 8.0 * d * g + 4.0 * math.sqrt(d) * lc + bias
    H4 = H_bar**4
    tilde = 8.0 * math.sqrt(d * H4 * math.log1p(t * H4 / (d * lam)) * lc) + 4.0 * H_bar**2 * lc + bias
    return hat, check, tilde


def default_rounds(gamma, T):
    """U = ceil(log(T / (1 - gamma)) / (1 - gamma))."""
    return max(1, math.ceil(math.log(T / (1.0 - gamma)) / (1.0 - gamma)))


def epoch_bound(d, T, lam):
    return 2.0 * d * math.log1p(T * d / lam)


def evi(env, theta_hat, state, beta_hat, U, return_deltas=False):
    """Extended value iteration over {theta : ||theta - theta_hat||_Sigma <= beta_hat}.

    The inner maximum is <theta_hat, phi> + beta_hat ||phi||_{Sigma^-1}; the
    result is clipped to [0, H_bar].  Returns Q, and optionally the sup-norm
    change of V at every sweep.
    """
    if U < 1:
        raise ValueError(f"U must be >= 1, got {U}")
    if beta_hat < 0:
        raise ValueError(f"beta_hat must be >= 0, got {beta_hat}")
    H_bar, g, r = env.effective_horizon, env.gamma, env.reward[0]
    Q = np.full((env.n_states, env.n_actions), H_bar)
    V = Q.max(axis=1)
    deltas = []
    for _ in range(U):
        phi = env.feature_expectation(V)
        Q = np.clip(r + g * (phi @ theta_hat + beta_hat * state.bonus(phi)), 0.0, H_bar)
        V_new = Q.max(axis=1)
        deltas.append(float(np.abs(V_new - V).max()))
        V = V_new
    return (Q, np.array(deltas)) if return_deltas else Q


@dataclass
class AgentConfig:
    lam: float = 1.0
    delta: float = 0.05
    param_bound: float = 1.0
    rounds: int = 0  # 0 picks default_rounds(gamma, T)


@dataclass
class UclkAgentState:
    env: envs.MixtureEnv
    config: AgentConfig = field(default_factory=AgentConfig)
    rounds: int = 1

    def __post_init__(self):
        env = self.env
        if env.episodic:
            raise ValueError("UCLK+ needs a discounted environment")
        d = env.dim
        self.d = d
        self.H_bar = env.effective_horizon
        self.hat = WlsState(d, self.config.lam)
        self.tilde = WlsState(d, self.config.lam)
        self.theta_hat = np.zeros(d)
        self.theta_tilde = np.zeros(d)
        self.epoch = 0
        self.epoch_logdet = self.hat.logdet
        self.t = 1
        self.Q = np.full((env.n_states, env.n_actions), self.H_bar)
        self.V = self.Q.max(axis=1)
        self.policy = np.argmax(self.Q, axis=1)

    def betas(self):
        c = self.config
        return beta_schedules(self.d, self.t, self.H_bar, c.lam, c.delta, c.param_bound)

    def maybe_replan(self):
        """Start a new epoch when det(Sigma_hat) has more than doubled."""
        if self.hat.logdet <= self.epoch_logdet + LOG2:
            return False
        self.epoch += 1
        self.epoch_logdet = self.hat.logdet
        self.Q = evi(self.env, self.theta_hat, self.hat, self.betas()[0], self.rounds)
        self.V = self.Q.max(axis=1)
        self.policy = np.argmax(self.Q, axis=1)
        return True

    def step(self, s, rng):
        """Act in state s, absorb the transition and return the next state."""
        env, H_bar = self.env, self.H_bar
        a = int(self.policy[s])
        s_next = env.sample_transition(s, a, 0, rng)
        _, check, tilde = self.betas()
        V = self.V
        phi_v = env.feature_expectation(V, s, a)
        phi_v2 = env.feature_expectation(V * V, s, a)
        var = estimated_variance(phi_v, phi_v2, self.theta_hat, self.theta_tilde, H_bar)
        err = offset(self.hat.bonus(phi_v), self.tilde.bonus(phi_v2), check, tilde, H_bar)
        sb = sigma_bar(var, err, H_bar, self.d)
        self.hat.update(phi_v, V[s_next], sb)
        self.tilde.update(phi_v2, V[s_next] ** 2, 1.0)
        self.theta_hat = self.hat.estimate()
        self.theta_tilde = self.tilde.estimate()
        self.t += 1
        return s_next, sb


@dataclass
class DiscountedRun:
    trace: RegretTrace
    epochs: int
    epoch_bound: float
    agent: UclkAgentState


def run(env, T, config, seed, base_seed=0):
    """T rounds of UCLK+.

    The recorded regret is a proxy: V*(s_t) - V^pi(s_t) where pi is the
    stationary greedy policy in force at round t, evaluated exactly.
    """
    rng = stream(base_seed, seed, RUN_TAG)
    U = config.rounds or default_rounds(env.gamma, T)
    agent = UclkAgentState(env, config, U)
    V_star, _ = envs.optimal_values(env)
    V_pi = envs.policy_values(env, agent.policy)

    epoch = np.empty(T, dtype=int)
    inc = np.empty(T)
    replanned = np.empty(T, dtype=bool)
    logdet = np.empty(T)
    s = env.init_state
    for i in range(T):
        replanned[i] = agent.maybe_replan()
        if replanned[i]:
            V_pi = envs.policy_values(env, agent.policy)
        epoch[i] = agent.epoch
        inc[i] = V_star[s] - V_pi[s]
        s, _ = agent.step(s, rng)
        logdet[i] = agent.hat.logdet
    cols = {
        "t": np.arange(1, T + 1),
        "epoch": epoch,
        "proxy_regret_increment": inc,
        "cumulative": np.cumsum(inc),
        "replanned_flag": replanned,
        "logdet": logdet,
    }
    meta = {"regret": "proxy: stationary greedy policy of the current epoch", "rounds": U,
            "potential": agent.hat.potential, "potential_bound": agent.hat.potential_bound()}
    trace = RegretTrace(seed, cols, "cumulative", meta=meta)
    return DiscountedRun(trace, agent.epoch, epoch_bound(env.dim, T, config.lam), agent)
