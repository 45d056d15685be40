"""Finite linear mixture MDPs with explicit feature tables.

A ``MixtureEnv`` stores phi(s'|s, a) as an array of shape (S, A, S, d) and one
parameter vector per transition layer (H layers for episodic problems, one for
discounted ones).  The kernel of layer h is <phi(.|s, a), theta_h>.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

KERNEL_TOL = 1e-12
NORM_TOL = 1e-9
MAX_HARD_DIM = 13
FORMAT = "varmix.mixture_env/1"


class EnvError(ValueError):
    pass


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(eq=False)
class MixtureEnv:
    phi: np.ndarray
    theta: np.ndarray
    reward: np.ndarray
    horizon: int | None = None
    gamma: float | None = None
    init_state: int = 0
    states: tuple = ()
    actions: tuple = ()
    name: str = ""
    info: dict = field(default_factory=dict)
    kernel_table: np.ndarray = field(init=False, repr=False)
    _phi_t: np.ndarray = field(init=False, repr=False)
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.phi = _frozen(self.phi)
        self.theta = _frozen(np.atleast_2d(self.theta))
        reward = np.asarray(self.reward, dtype=float)
        self.reward = _frozen(reward.reshape(len(self.theta), *reward.shape[-2:]))
        if self.phi.ndim != 4 or self.phi.shape[0] != self.phi.shape[2]:
            raise EnvError(f"phi must have shape (S, A, S, d), got {self.phi.shape}")
        S, A, _, d = self.phi.shape
        if (self.horizon is None) == (self.gamma is None):
            raise EnvError("exactly one of horizon and gamma must be given")
        n_layers = self.horizon if self.horizon is not None else 1
        if self.theta.shape != (n_layers, d):
            raise EnvError(f"theta must have shape ({n_layers}, {d}), got {self.theta.shape}")
        if self.reward.shape != (n_layers, S, A):
            raise EnvError(f"reward must have shape ({n_layers}, {S}, {A}), got {self.reward.shape}")
        if np.any(self.reward < 0) or np.any(self.reward > 1):
            raise EnvError("rewards must lie in [0, 1]")
        if self.gamma is not None and not 0.0 <= self.gamma < 1.0:
            raise EnvError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0 <= self.init_state < S:
            raise EnvError(f"init_state {self.init_state} out of range")
        self.states = tuple(self.states) or tuple(f"s{i}" for i in range(S))
        self.actions = tuple(self.actions) or tuple(f"a{i}" for i in range(A))

        P = np.einsum("sapd,ld->lsap", self.phi, self.theta)
        bad = (P < -KERNEL_TOL) | (P > 1 + KERNEL_TOL)
        if bad.any():
            l, s, a, p = np.argwhere(bad)[0]
            raise EnvError(f"kernel entry P[{l}]({p}|{s},{a}) = {P[l, s, a, p]!r} outside [0, 1]")
        rows = P.sum(axis=-1)
        if np.any(np.abs(rows - 1.0) > KERNEL_TOL):
            l, s, a = np.argwhere(np.abs(rows - 1.0) > KERNEL_TOL)[0]
            raise EnvError(f"kernel row P[{l}](.|{s},{a}) sums to {rows[l, s, a]!r}")
        self.kernel_table = _frozen(P)
        self._phi_t = np.ascontiguousarray(self.phi.transpose(0, 1, 3, 2))
        self._cdf = np.cumsum(P, axis=-1)

        worst = max_feature_norm(self, extra=0)
        if worst > 1 + NORM_TOL:
            raise EnvError(f"||phi_V|| = {worst:.6g} > 1 for some V in [0,1]^S")

    @property
    def n_states(self):
        return self.phi.shape[0]

    @property
    def n_actions(self):
        return self.phi.shape[1]

    @property
    def dim(self):
        return self.phi.shape[3]

    @property
    def episodic(self):
        return self.horizon is not None

    @property
    def effective_horizon(self):
        """H for episodic problems, 1/(1 - gamma) for discounted ones."""
        return float(self.horizon) if self.episodic else 1.0 / (1.0 - self.gamma)

    @property
    def param_bound(self):
        return float(np.linalg.norm(self.theta, axis=1).max())

    def kernel(self, h=0):
        return self.kernel_table[h]

    def feature_expectation(self, V, s=None, a=None):
        """phi_V(s, a) = sum_s' phi(s'|s, a) V(s').

        Returns the (S, A, d) table, or a single d-vector when s and a are given.
        """
        V = np.asarray(V, dtype=float)
        if s is None:
            return self._phi_t @ V
        return self._phi_t[s, a] @ V

    def sample_transition(self, s, a, h, rng):
        """Inverse-CDF draw of s' ~ P_h(.|s, a) over the declared state order."""
        u = rng.random()
        i = int(np.searchsorted(self._cdf[h, s, a], u, side="right"))
        return min(i, self.n_states - 1)

    # serialization ---------------------------------------------------------

    def to_dict(self):
        return {
            "format": FORMAT,
            "name": self.name,
            "dim": self.dim,
            "states": list(self.states),
            "actions": list(self.actions),
            "horizon": self.horizon,
            "gamma": self.gamma,
            "init_state": self.init_state,
            "phi": self.phi.tolist(),
            "theta": self.theta.tolist(),
            "reward": self.reward.tolist(),
            "info": {k: v.tolist() if isinstance(v, np.ndarray) else v for k, v in self.info.items()},
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != FORMAT:
            raise EnvError(f"unknown environment format {data.get('format')!r}")
        return cls(
            phi=np.array(data["phi"], dtype=float),
            theta=np.array(data["theta"], dtype=float),
            reward=np.array(data["reward"], dtype=float),
            horizon=data["horizon"],
            gamma=data["gamma"],
            init_state=data["init_state"],
            states=tuple(data["states"]),
            actions=tuple(data["actions"]),
            name=data.get("name", ""),
            info={k: np.array(v, dtype=float) if isinstance(v, list) else v
                  for k, v in data.get("info", {}).items()},
        )

    def dumps(self):
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


def max_feature_norm(env, rng=None, extra=64):
    """Largest ||phi_V(s, a)|| over V in {0, 1, e_i} plus ``extra`` random
    binary and ``extra`` uniform V in [0,1]^S.

    ||phi_V|| is convex in V, so its maximum over the cube sits on a vertex.
    """
    S = env.n_states
    cands = [np.zeros(S), np.ones(S), *np.eye(S)]
    if extra:
        rng = rng if rng is not None else np.random.default_rng(0)
        cands.extend(rng.integers(0, 2, size=(extra, S)).astype(float))
        cands.extend(rng.random((extra, S)))
    return max(float(np.linalg.norm(env.feature_expectation(V), axis=-1).max()) for V in cands)


# constructors ---------------------------------------------------------------


def hard_mdp_episodic(d, H, K, B, mu_signs, delta=None):
    """The hard-to-learn inhomogeneous family on states x_1..x_{H+2}.

    From x_i (i <= H) at stage h the walk jumps to the rewarding absorbing
    state x_{H+2} with probability delta + <mu_h, a> and to x_{i+1} otherwise;
    mu_h = Delta * mu_signs[h] with Delta = sqrt(delta/K) / (4 sqrt 2).
    """
    if d < 4:
        raise EnvError(f"d >= 4 required, got d = {d}")
    if d > MAX_HARD_DIM:
        raise EnvError(f"d <= {MAX_HARD_DIM} required (2^(d-1) actions are enumerated), got {d}")
    if H < 3:
        raise EnvError(f"H >= 3 required, got H = {H}")
    if not B > 1:
        raise EnvError(f"B > 1 required, got B = {B}")
    k_min = max((d - 1) ** 2 * H / 2.0, (d - 1) / (32.0 * H * (B - 1.0)))
    if K < k_min:
        raise EnvError(f"K >= max{{(d-1)^2 H/2, (d-1)/(32 H (B-1))}} = {k_min:.6g} violated by K = {K}")
    signs = np.asarray(mu_signs, dtype=float)
    if signs.shape != (H, d - 1) or not np.all(np.abs(signs) == 1):
        raise EnvError(f"mu_signs must be an {H}x{d - 1} matrix of +-1 entries")
    delta = 1.0 / H if delta is None else float(delta)
    Delta = math.sqrt(delta / K) / (4.0 * math.sqrt(2.0))
    if 3 * (d - 1) * Delta > delta:
        raise EnvError(f"3 (d-1) Delta <= delta violated: {3 * (d - 1) * Delta:.6g} > {delta:.6g}")
    if delta + (d - 1) * Delta > 1:
        raise EnvError(f"delta + (d-1) Delta <= 1 violated: {delta + (d - 1) * Delta:.6g}")
    alpha = math.sqrt(1.0 / (1.0 + Delta * (d - 1)))
    beta = math.sqrt(Delta / (1.0 + Delta * (d - 1)))

    S = H + 2
    acts = np.array(list(itertools.product([-1.0, 1.0], repeat=d - 1)))
    A = len(acts)
    goal, sink = H + 1, H
    phi = np.zeros((S, A, S, d))
    for i in range(H):
        phi[i, :, i + 1, 0] = alpha * (1.0 - delta)
        phi[i, :, i + 1, 1:] = -beta * acts
        phi[i, :, goal, 0] = alpha * delta
        phi[i, :, goal, 1:] = beta * acts
    for s in (sink, goal):
        phi[s, :, s, 0] = alpha
    mu = Delta * signs
    theta = np.hstack([np.full((H, 1), 1.0 / alpha), mu / beta])
    norm = float(np.linalg.norm(theta, axis=1).max())
    if norm > B * (1 + 1e-12):
        raise EnvError(f"||theta_h|| = 1 + Delta (d-1) = {norm:.12g} exceeds B = {B}")
    reward = np.zeros((H, S, A))
    reward[:, goal, :] = 1.0
    return MixtureEnv(
        phi=phi,
        theta=theta,
        reward=reward,
        horizon=H,
        init_state=0,
        states=tuple(f"x{i + 1}" for i in range(S)),
        actions=tuple("".join("+" if v > 0 else "-" for v in a) for a in acts),
        name=f"hard-episodic(d={d},H={H},K={K})",
        info={"delta": delta, "Delta": Delta, "alpha": alpha, "beta": beta, "mu": mu, "action_vectors": acts},
    )


def hard_mdp_discounted(d, gamma, mu_signs, delta=None, Delta=None):
    """Stationary two-state analogue of the hard family (a constructed test
    environment, not taken from the literature).

    x_1 moves to the rewarding state x_2 with probability delta + <mu, a> and
    x_2 falls back to x_1 with probability delta, whatever the action.
    Defaults: delta = 1 - gamma, Delta = delta / (4 (d - 1)).
    """
    if d < 2:
        raise EnvError(f"d >= 2 required, got {d}")
    if d > MAX_HARD_DIM:
        raise EnvError(f"d <= {MAX_HARD_DIM} required, got {d}")
    signs = np.asarray(mu_signs, dtype=float)
    if signs.shape != (d - 1,) or not np.all(np.abs(signs) == 1):
        raise EnvError(f"mu_signs must be a length-{d - 1} vector of +-1 entries")
    delta = (1.0 - gamma) if delta is None else float(delta)
    Delta = delta / (4.0 * (d - 1)) if Delta is None else float(Delta)
    if (d - 1) * Delta > delta or delta + (d - 1) * Delta > 1:
        raise EnvError("probabilities delta +- (d-1) Delta must lie in [0, 1]")
    alpha = math.sqrt(1.0 / (1.0 + Delta * (d - 1)))
    beta = math.sqrt(Delta / (1.0 + Delta * (d - 1)))
    acts = np.array(list(itertools.product([-1.0, 1.0], repeat=d - 1)))
    A = len(acts)
    phi = np.zeros((2, A, 2, d))
    phi[0, :, 0, 0] = alpha * (1.0 - delta)
    phi[0, :, 0, 1:] = -beta * acts
    phi[0, :, 1, 0] = alpha * delta
    phi[0, :, 1, 1:] = beta * acts
    phi[1, :, 0, 0] = alpha * delta
    phi[1, :, 1, 0] = alpha * (1.0 - delta)
    mu = Delta * signs
    theta = np.concatenate([[1.0 / alpha], mu / beta])
    reward = np.zeros((2, A))
    reward[1, :] = 1.0
    return MixtureEnv(
        phi=phi,
        theta=theta,
        reward=reward,
        gamma=gamma,
        states=("x1", "x2"),
        actions=tuple("".join("+" if v > 0 else "-" for v in a) for a in acts),
        name=f"hard-discounted(d={d},gamma={gamma})",
        info={"delta": delta, "Delta": Delta, "alpha": alpha, "beta": beta, "mu": mu, "action_vectors": acts},
    )


def tabular_as_mixture(P, r, gamma=None, init_state=0, name="tabular"):
    """Re-encode a tabular MDP as a linear mixture.

    P has shape (H, S, A, S) for an episodic problem or (S, A, S) together with
    ``gamma`` for a discounted one.  Features are e_{idx(s,a,s')}/sqrt(S) and
    theta_h[idx(s,a,s')] = sqrt(S) P_h(s'|s,a), so <phi, theta_h> = P_h exactly
    and ||phi_V(s,a)|| = ||V|| / sqrt(S) <= 1 on [0,1]^S.
    """
    P = np.asarray(P, dtype=float)
    r = np.asarray(r, dtype=float)
    if gamma is None:
        if P.ndim != 4:
            raise EnvError(f"episodic P must have shape (H, S, A, S), got {P.shape}")
        H = P.shape[0]
    else:
        if P.ndim != 3:
            raise EnvError(f"discounted P must have shape (S, A, S), got {P.shape}")
        P = P[None]
        H = None
    _, S, A, S2 = P.shape
    if S2 != S:
        raise EnvError(f"P must be square in the state axes, got {P.shape}")
    if np.any(P < 0) or np.any(np.abs(P.sum(-1) - 1) > KERNEL_TOL):
        raise EnvError("every P row must be a probability distribution")
    d = S * A * S
    root = math.sqrt(S)
    phi = (np.eye(d) / root).reshape(S, A, S, d)
    theta = root * P.reshape(P.shape[0], d)
    return MixtureEnv(
        phi=phi,
        theta=theta,
        reward=r.reshape(P.shape[0], S, A),
        horizon=H,
        gamma=gamma,
        init_state=init_state,
        name=name,
    )


def random_tabular(rng, n_states, n_actions, horizon=None, gamma=None, concentration=0.5):
    """Random tabular MDP with Dirichlet rows and uniform rewards, as a mixture."""
    layers = 1 if horizon is None else horizon
    P = rng.dirichlet(np.full(n_states, concentration), size=(layers, n_states, n_actions))
    r = rng.random((layers, n_states, n_actions))
    if horizon is None:
        return tabular_as_mixture(P[0], r[0], gamma=gamma, name=f"tabular(S={n_states},A={n_actions})")
    return tabular_as_mixture(P, r, name=f"tabular(S={n_states},A={n_actions},H={horizon})")


# planning oracles -----------------------------------------------------------


def optimal_values(env, tol=1e-10, max_iter=1_000_000):
    """Episodic: (V*, Q*) with V* of shape (H+1, S) by backward induction.
    Discounted: (V*, Q*) by value iteration with sup-norm error below ``tol``."""
    S, A = env.n_states, env.n_actions
    if env.episodic:
        H = env.horizon
        V = np.zeros((H + 1, S))
        Q = np.zeros((H, S, A))
        for h in range(H - 1, -1, -1):
            Q[h] = env.reward[h] + env.kernel(h) @ V[h + 1]
            V[h] = Q[h].max(axis=1)
        return V, Q
    g = env.gamma
    P, r = env.kernel(0), env.reward[0]
    V = np.zeros(S)
    # stop once the remaining error g/(1-g)*||V_{n+1}-V_n|| is below tol
    stop = tol * (1.0 - g) / g if g > 0 else math.inf
    for _ in range(max_iter):
        Q = r + g * (P @ V)
        V_new = Q.max(axis=1)
        diff = np.abs(V_new - V).max()
        V = V_new
        if diff <= stop:
            break
    return V, r + g * (P @ V)


def policy_values(env, policy):
    """Exact value of a deterministic policy: (H+1, S) table for episodic
    problems (policy of shape (H, S)); a vector from a linear solve otherwise."""
    policy = np.asarray(policy, dtype=int)
    S = env.n_states
    idx = np.arange(S)
    if env.episodic:
        H = env.horizon
        V = np.zeros((H + 1, S))
        for h in range(H - 1, -1, -1):
            a = policy[h]
            V[h] = env.reward[h][idx, a] + env.kernel(h)[idx, a] @ V[h + 1]
        return V
    a = policy
    P_pi = env.kernel(0)[idx, a]
    r_pi = env.reward[0][idx, a]
    return np.linalg.solve(np.eye(S) - env.gamma * P_pi, r_pi)


def value_variance(env, V, h, s, a):
    """[V_h V](s, a) = P_h V^2 - (P_h V)^2 computed from the true kernel."""
    p = env.kernel(h)[s, a]
    m = float(p @ V)
    return max(0.0, float(p @ (V * V)) - m * m)
