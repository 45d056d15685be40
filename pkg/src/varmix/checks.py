"""Invariant checks behind ``varmix check``.  Each returns (ok, detail)."""
import numpy as np

from . import discounted, envs, episodic
from .regression import WlsState
from .rng import stream


def _regression_drift():
    rng = stream(0, 0, 7)
    st = WlsState(6, 1.0)
    for _ in range(300):
        st.update(rng.standard_normal(6), rng.standard_normal(), rng.uniform(0.2, 2.0))
    fresh = np.linalg.inv(st.sigma_mat)
    err = np.abs(st.inverse - fresh).max() / np.abs(fresh).max()
    return err <= 1e-8, f"relative inverse drift {err:.2e}"


def _potential():
    rng = stream(0, 1, 7)
    st = WlsState(5, 0.5)
    for _ in range(2000):
        x = rng.standard_normal(5)
        st.update(x / max(1.0, np.linalg.norm(x)), 0.0, rng.uniform(0.5, 1.5))
    return st.potential <= st.potential_bound(), f"{st.potential:.4f} <= {st.potential_bound():.4f}"


def _episodic_clamp():
    env = envs.random_tabular(stream(0, 2, 7), 4, 2, horizon=3)
    agent = episodic.EpisodicAgentState(env, episodic.AgentConfig(param_bound=env.param_bound))
    rng = stream(0, 3, 7)
    ok = True
    for k in range(1, 30):
        agent.k = k
        betas = agent.betas()
        agent.backward_pass(betas[0])
        ok &= bool((agent.Q >= 0).all() and (agent.Q <= env.horizon).all())
        ok &= bool(np.array_equal(agent.V[:-1], agent.Q.max(axis=2)))
        s = env.init_state
        for h in range(env.horizon):
            a = int(agent.policy[h, s])
            s2 = env.sample_transition(s, a, h, rng)
            agent.absorb_step(s, a, s2, h, betas)
            s = s2
    return ok, "Q in [0, H] and V = max_a Q over 29 episodes"


def _epoch_bound():
    env = envs.random_tabular(stream(0, 4, 7), 3, 2, gamma=0.8)
    r = discounted.run(env, 2000, discounted.AgentConfig(param_bound=env.param_bound), 0)
    return r.epochs <= r.epoch_bound, f"{r.epochs} epochs <= {r.epoch_bound:.2f}"


def _evi_contraction():
    env = envs.random_tabular(stream(0, 5, 7), 5, 3, gamma=0.9)
    _, deltas = discounted.evi(env, env.theta[0], WlsState(env.dim, 1.0), 0.0, 60, return_deltas=True)
    floor = discounted.ROUNDING_SLACK * env.effective_horizon
    ok = bool(np.all(deltas[1:] <= (env.gamma + 1e-10) * deltas[:-1] + floor))
    return ok, f"true-model sweeps, worst ratio {np.max(deltas[1:] / np.maximum(deltas[:-1], 1e-300)):.4f}"


def _serialization():
    env = envs.random_tabular(stream(0, 6, 7), 3, 2, horizon=2)
    back = envs.MixtureEnv.loads(env.dumps())
    ok = np.array_equal(back.phi, env.phi) and np.array_equal(back.theta, env.theta)
    return bool(ok), "environment JSON round trip"


CHECKS = [
    ("regression-inverse-drift", _regression_drift),
    ("elliptical-potential", _potential),
    ("episodic-clamp", _episodic_clamp),
    ("discounted-epoch-bound", _epoch_bound),
    ("evi-contraction-true-model", _evi_contraction),
    ("env-serialization", _serialization),
]
