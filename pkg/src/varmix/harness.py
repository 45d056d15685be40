"""Experiment configuration, seeded parallel execution and CSV output.

Config files are TOML.  Top-level keys:

    kind       = "bandit" | "episodic" | "discounted" | "concentration"
    horizon    = T (rounds) or K (episodes); for concentration, the martingale length
    base_seed  = 0
    seeds      = [0, 1, 2]      # explicit list, or
    seed_count = 20             # seeds 0 .. seed_count-1
    out        = "out/bandit"

    [env]      kind-specific environment keys (see ENV_KEYS)
    [[agent]]  one table per algorithm (see AGENT_KEYS); not used by concentration

Run (base_seed, seed) draws from the Philox stream keyed by
(base_seed, seed, RUN_TAG); the environment is built once from
(base_seed, env.seed, ENV_TAG), so every agent sees the same instance.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import tomli
import tomli_w

from . import bandit, concentration, discounted, envs, episodic
from .rng import ENV_TAG, stream
from .traces import csv_text

KINDS = ("bandit", "episodic", "discounted", "concentration")

# key -> (type, default); a default of None means required
TOP_KEYS = {
    "kind": (str, None),
    "horizon": (int, None),
    "base_seed": (int, 0),
    "seeds": (list, []),
    "seed_count": (int, 0),
    "out": (str, "out"),
}

ENV_KEYS = {
    "bandit": {
        "seed": (int, 0), "dim": (int, 8), "n_actions": (int, 20), "param_bound": (float, 1.0),
        "noise_bound": (float, 1.0), "sigma_kind": (str, "constant"), "sigma_values": (list, [0.05]),
    },
    "episodic": {
        "seed": (int, 0), "family": (str, "tabular"), "horizon": (int, 4), "n_states": (int, 5),
        "n_actions": (int, 3), "concentration": (float, 0.5), "dim": (int, 4),
        "param_bound": (float, 1.1), "hard_episodes": (int, 0),
    },
    "discounted": {
        "seed": (int, 0), "family": (str, "tabular"), "gamma": (float, 0.9), "n_states": (int, 5),
        "n_actions": (int, 2), "concentration": (float, 0.5), "dim": (int, 4),
    },
    "concentration": {
        "dim": (int, 4), "contexts": (str, "sphere"), "noise_bound": (float, 1.0),
        "variance_bound": (float, 1.0), "noise_scale": (float, 1.0), "context_bound": (float, 1.0),
        "lam": (float, 1.0), "delta": (float, 0.1), "param_bound": (float, 1.0), "replicas": (int, 2000),
    },
}

_COMMON_AGENT = {"name": (str, ""), "lam": (float, 1.0), "delta": (float, 0.05), "param_bound": (float, 1.0)}
AGENT_KEYS = {
    "bandit": {**_COMMON_AGENT, "algorithm": (str, "weighted-oful"), "noise_bound": (float, 1.0)},
    # param_bound = 0 selects the environment's own max ||theta_h||
    "episodic": {**_COMMON_AGENT, "algorithm": (str, "ucrl-vtr+"), "param_bound": (float, 0.0)},
    "discounted": {**_COMMON_AGENT, "algorithm": (str, "uclk+"), "param_bound": (float, 0.0), "rounds": (int, 0)},
}
ALGORITHMS = {"bandit": bandit.ALGORITHMS, "episodic": episodic.ALGORITHMS, "discounted": ("uclk+",)}


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


def _check_type(value, typ):
    if typ is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if typ is int:
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, typ)


def _fill(table, schema, path, errors):
    out = {}
    for key in table:
        if key not in schema:
            errors.append(f"{path}{key}: unknown key")
    for key, (typ, default) in schema.items():
        if key in table:
            v = table[key]
            if not _check_type(v, typ):
                errors.append(f"{path}{key}: expected {typ.__name__}, got {type(v).__name__} {v!r}")
                if default is not None:  # keep validating the rest against the default
                    out[key] = copy.deepcopy(default)
                continue
            out[key] = float(v) if typ is float else copy.deepcopy(v)
        elif default is None:
            errors.append(f"{path}{key}: required")
        else:
            out[key] = copy.deepcopy(default)
    return out


@dataclass
class ExperimentConfig:
    kind: str
    horizon: int
    env: dict = field(default_factory=dict)
    agents: list = field(default_factory=list)
    base_seed: int = 0
    seeds: list = field(default_factory=list)
    seed_count: int = 0
    out: str = "out"

    def seed_list(self):
        return list(self.seeds) if self.seeds else list(range(self.seed_count))

    def to_dict(self):
        d = {"kind": self.kind, "horizon": self.horizon, "base_seed": self.base_seed,
             "seeds": list(self.seeds), "seed_count": self.seed_count, "out": self.out, "env": dict(self.env)}
        if self.agents:
            d["agent"] = [dict(a) for a in self.agents]
        return d

    def dumps(self):
        return tomli_w.dumps(self.to_dict())

    def fingerprint(self):
        """sha256 of the canonical JSON form; output paths are excluded."""
        d = self.to_dict()
        del d["out"]
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _between(errors, path, v, lo, hi, lo_open=True, hi_open=True):
    bad = (v <= lo if lo_open else v < lo) or (v >= hi if hi_open else v > hi)
    if bad:
        lb, rb = "(" if lo_open else "[", ")" if hi_open else "]"
        errors.append(f"{path}: must lie in {lb}{lo}, {hi}{rb}, got {v}")


def _validate(cfg, errors):
    if cfg.horizon < 1:
        errors.append(f"horizon: must be >= 1, got {cfg.horizon}")
    if cfg.seed_count < 0:
        errors.append(f"seed_count: must be >= 0, got {cfg.seed_count}")
    if cfg.seeds and cfg.seed_count:
        errors.append("seeds: give either seeds or seed_count, not both")
    for i, s in enumerate(cfg.seeds):
        if not _check_type(s, int) or s < 0:
            errors.append(f"seeds[{i}]: expected a nonnegative int, got {s!r}")
    if len(set(map(str, cfg.seeds))) != len(cfg.seeds):
        errors.append("seeds: duplicate entries")
    if cfg.base_seed < 0:
        errors.append(f"base_seed: must be >= 0, got {cfg.base_seed}")

    e, k = cfg.env, cfg.kind
    for key in ("dim", "n_actions", "n_states", "horizon", "replicas"):
        if key in e and e[key] < 1:
            errors.append(f"env.{key}: must be >= 1, got {e[key]}")
    for key in ("param_bound", "noise_bound", "variance_bound", "noise_scale"):
        if key in e and not (math.isfinite(e[key]) and e[key] >= 0):
            errors.append(f"env.{key}: must be finite and >= 0, got {e[key]}")
    for key in ("concentration", "context_bound", "lam"):
        if key in e and not (math.isfinite(e[key]) and e[key] > 0):
            errors.append(f"env.{key}: must be finite and > 0, got {e[key]}")
    if "gamma" in e:
        _between(errors, "env.gamma", e["gamma"], 0.0, 1.0, lo_open=False)
    if "delta" in e:
        _between(errors, "env.delta", e["delta"], 0.0, 1.0)
    if "family" in e and e["family"] not in ("tabular", "hard"):
        errors.append(f"env.family: must be 'tabular' or 'hard', got {e['family']!r}")
    if k == "bandit":
        if e["sigma_kind"] not in bandit.SIGMA_KINDS:
            errors.append(f"env.sigma_kind: must be one of {bandit.SIGMA_KINDS}, got {e['sigma_kind']!r}")
        if not e["sigma_values"] or not all(_check_type(v, float) and 0 <= v <= e["noise_bound"]
                                            for v in e["sigma_values"]):
            errors.append("env.sigma_values: need a nonempty list of numbers in [0, env.noise_bound]")
        if e["param_bound"] > 1:
            errors.append(f"env.param_bound: must be <= 1 so rewards stay in [-1, 1], got {e['param_bound']}")
    if k == "concentration":
        if e["contexts"] not in concentration.CONTEXTS:
            errors.append(f"env.contexts: must be one of {concentration.CONTEXTS}, got {e['contexts']!r}")
        if not e["noise_scale"] <= e["variance_bound"] <= e["noise_bound"]:
            errors.append("env.noise_scale: need noise_scale <= variance_bound <= noise_bound")
    if k in ("episodic", "discounted") and e.get("family") == "hard" and e["dim"] < 4:
        errors.append(f"env.dim: the hard family needs dim >= 4, got {e['dim']}")

    if k != "concentration" and not cfg.agents:
        errors.append("agent: at least one [[agent]] table is required")
    names = []
    for i, a in enumerate(cfg.agents):
        p = f"agent[{i}]"
        if a.get("algorithm") not in ALGORITHMS.get(k, ()):
            errors.append(f"{p}.algorithm: must be one of {ALGORITHMS.get(k, ())}, got {a.get('algorithm')!r}")
        if "lam" in a and not (math.isfinite(a["lam"]) and a["lam"] > 0):
            errors.append(f"{p}.lam: must be finite and > 0, got {a['lam']}")
        if "delta" in a:
            _between(errors, f"{p}.delta", a["delta"], 0.0, 1.0)
        if "param_bound" in a and not a["param_bound"] >= 0:
            errors.append(f"{p}.param_bound: must be >= 0, got {a['param_bound']}")
        if "noise_bound" in a and not a["noise_bound"] > 0:
            errors.append(f"{p}.noise_bound: must be > 0, got {a['noise_bound']}")
        if "rounds" in a and a["rounds"] < 0:
            errors.append(f"{p}.rounds: must be >= 0 (0 selects the default), got {a['rounds']}")
        names.append(agent_name(a))
    if len(set(names)) != len(names):
        errors.append(f"agent: names must be unique, got {names}")


def agent_name(a):
    return a.get("name") or a.get("algorithm", "agent")


def config_from_dict(data):
    errors = []
    if not isinstance(data, dict):
        raise ConfigError(["config: expected a table"])
    top = {k: v for k, v in data.items() if k not in ("env", "agent")}
    base = _fill(top, TOP_KEYS, "", errors)
    kind = base.get("kind")
    if kind is not None and kind not in KINDS:
        errors.append(f"kind: must be one of {KINDS}, got {kind!r}")
        kind = None
    env_tab = data.get("env", {})
    agents_tab = data.get("agent", [])
    if not isinstance(env_tab, dict):
        errors.append("env: expected a table")
        env_tab = {}
    if not isinstance(agents_tab, list):
        errors.append("agent: expected an array of tables ([[agent]])")
        agents_tab = []
    env, agents = {}, []
    if kind is not None:
        env = _fill(env_tab, ENV_KEYS[kind], "env.", errors)
        if kind == "concentration" and agents_tab:
            errors.append("agent: concentration runs take no agents")
        for i, a in enumerate(agents_tab if kind != "concentration" else []):
            if not isinstance(a, dict):
                errors.append(f"agent[{i}]: expected a table")
                continue
            agents.append(_fill(a, AGENT_KEYS[kind], f"agent[{i}].", errors))
    if kind is None:
        raise ConfigError(errors)
    cfg = ExperimentConfig(kind=kind, horizon=base.get("horizon", 1), env=env, agents=agents,
                           base_seed=base["base_seed"], seeds=base["seeds"], seed_count=base["seed_count"],
                           out=base["out"])
    _validate(cfg, errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def parse_config(text):
    """Parse and validate TOML text; raises ConfigError listing every problem."""
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"syntax: {exc}"]) from None
    return config_from_dict(data)


def default_config(kind):
    agents = {
        "bandit": [{"algorithm": "weighted-oful"}, {"algorithm": "oful"}],
        "episodic": [{"algorithm": "ucrl-vtr+"}, {"algorithm": "ucrl-vtr"}],
        "discounted": [{"algorithm": "uclk+"}],
        "concentration": [],
    }[kind]
    horizon = {"bandit": 5000, "episodic": 500, "discounted": 20000, "concentration": 1000}[kind]
    data = {"kind": kind, "horizon": horizon, "seed_count": 1 if kind == "concentration" else 20,
            "out": f"out/{kind}", "env": {}}
    if agents:
        data["agent"] = agents
    return config_from_dict(data)


# building -------------------------------------------------------------------


def build_env(cfg):
    e = cfg.env
    rng = stream(cfg.base_seed, e.get("seed", 0), ENV_TAG)
    if cfg.kind == "bandit":
        return bandit.sphere_env(rng, e["dim"], e["n_actions"], e["param_bound"], e["noise_bound"],
                                 e["sigma_kind"], tuple(e["sigma_values"]))
    if cfg.kind == "episodic":
        if e["family"] == "hard":
            H = e["horizon"]
            K = e["hard_episodes"] or cfg.horizon
            signs = rng.choice([-1.0, 1.0], size=(H, e["dim"] - 1))
            return envs.hard_mdp_episodic(e["dim"], H, K, e["param_bound"], signs)
        return envs.random_tabular(rng, e["n_states"], e["n_actions"], horizon=e["horizon"],
                                   concentration=e["concentration"])
    if cfg.kind == "discounted":
        if e["family"] == "hard":
            signs = rng.choice([-1.0, 1.0], size=e["dim"] - 1)
            return envs.hard_mdp_discounted(e["dim"], e["gamma"], signs)
        return envs.random_tabular(rng, e["n_states"], e["n_actions"], gamma=e["gamma"],
                                   concentration=e["concentration"])
    raise ValueError(f"no environment for kind {cfg.kind!r}")


def scenario(cfg):
    return concentration.MartingaleScenario(horizon=cfg.horizon, base_seed=cfg.base_seed, **cfg.env)


def run_seed(cfg, env, agent, seed):
    """One (agent, seed) run; returns a RegretTrace tagged with the fingerprint."""
    a = agent
    if cfg.kind == "bandit":
        spec = bandit.AgentSpec(a["algorithm"], a["lam"], a["delta"], a["param_bound"], a["noise_bound"],
                                env.action_bound)
        tr = bandit.run_once(env, spec, cfg.horizon, seed, cfg.base_seed)
    elif cfg.kind == "episodic":
        conf = episodic.AgentConfig(a["algorithm"], a["lam"], a["delta"], a["param_bound"] or env.param_bound)
        tr = episodic.run(env, cfg.horizon, conf, seed, cfg.base_seed, diagnostics=False).trace
    else:
        conf = discounted.AgentConfig(a["lam"], a["delta"], a["param_bound"] or env.param_bound, a["rounds"])
        tr = discounted.run(env, cfg.horizon, conf, seed, cfg.base_seed).trace
    tr.fingerprint = cfg.fingerprint()
    return tr


def _worker(args):
    cfg_dict, agent_index, seed = args
    try:
        cfg = config_from_dict(cfg_dict)
        env = build_env(cfg)
        return seed, run_seed(cfg, env, cfg.agents[agent_index], seed), None
    except Exception:  # isolate per-seed failures
        return seed, None, traceback.format_exc()


def _concentration_worker(args):
    cfg_dict, replicas = args
    cfg = config_from_dict(cfg_dict)
    return concentration.run_tail_check(scenario(cfg), replicas)


def summarize(traces):
    """Mean, population std, min and max of cumulative regret at every step.

    All traces must share the same step grid.
    """
    traces = list(traces)
    if not traces:
        return [], []
    steps = traces[0].steps
    for tr in traces[1:]:
        if not np.array_equal(tr.steps, steps):
            raise ValueError("traces have different step grids")
    M = np.stack([tr.cumulative for tr in traces])
    header = [traces[0].step_key, "n", "mean", "std", "min", "max"]
    mean = M.mean(axis=0)
    std = M.std(axis=0)
    rows = [(int(s), len(traces), mean[i], std[i], M[:, i].min(), M[:, i].max()) for i, s in enumerate(steps)]
    return header, rows


def collect(cfg, jobs=1, log=sys.stderr):
    """Run every (agent, seed) pair; returns [(name, traces in seed order, n_failed)]."""
    data = cfg.to_dict()
    seeds = cfg.seed_list()
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    mapper = pool.map if pool else map
    out = []
    try:
        for ai, agent in enumerate(cfg.agents):
            name = agent_name(agent)
            traces, failed = [], 0
            for seed, tr, err in mapper(_worker, [(data, ai, s) for s in seeds]):
                if err is not None:
                    print(f"{name} seed {seed} failed:\n{err}", file=log)
                    failed += 1
                    continue
                traces.append(tr)
                print(f"{name} seed {seed}: final {tr.summary()['final']:.6g}", file=log)
            out.append((name, traces, failed))
    finally:
        if pool:
            pool.shutdown()
    return out


def coverage(cfg, jobs=1):
    """Concentration run split into ``jobs`` replica chunks and merged in replica order."""
    data = cfg.to_dict()
    n = scenario(cfg).replicas
    chunks = [(data, c) for c in np.array_split(np.arange(n), max(1, jobs)) if len(c)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_concentration_worker, chunks))
    else:
        reports = [_concentration_worker(c) for c in chunks]
    report = reports[0]
    for r in reports[1:]:
        report = report.merge(r)
    return report


def merged_csv(traces):
    """One header, then every trace's rows in the given order."""
    if not traces:
        return ""
    return traces[0].to_csv() + "".join(tr.to_csv(with_header=False) for tr in traces[1:])


def run_suite(cfg, jobs=1, out_dir=None, log=sys.stderr):
    """Run every (agent, seed) pair and write merged CSVs; returns an exit status.

    Output files per agent: ``<name>.csv`` (all seeds, seed order) and
    ``<name>_summary.csv``.  Concentration runs write ``coverage.csv``.
    The bytes written do not depend on ``jobs``.
    """
    out_dir = out_dir or cfg.out
    if not cfg.seed_list():
        return 0
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create {out_dir}: {exc}", file=log)
        return 2
    status = 0
    try:
        if cfg.kind == "concentration":
            report = coverage(cfg, jobs)
            _write(os.path.join(out_dir, "coverage.csv"), report.to_csv())
            print(f"coverage: violation fraction {report.violation_fraction():.4f} "
                  f"(slack {report.slack():.4f}) over {len(report.replica)} replicas", file=log)
            return 0
        for name, traces, failed in collect(cfg, jobs, log):
            status = status or (1 if failed else 0)
            if not traces:
                continue
            _write(os.path.join(out_dir, f"{name}.csv"), merged_csv(traces))
            _write(os.path.join(out_dir, f"{name}_summary.csv"), csv_text(*summarize(traces)))
        _write(os.path.join(out_dir, "run.json"),
               json.dumps({"fingerprint": cfg.fingerprint(), "config": _portable(cfg)}, sort_keys=True, indent=1) + "\n")
    except OSError as exc:
        print(f"error: {exc}", file=log)
        return 2
    return status


def _portable(cfg):
    d = cfg.to_dict()
    del d["out"]
    return d


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def run_checks(log=None):
    """Fast deterministic invariant checks; returns the number of failures."""
    from .checks import CHECKS

    log = log or sys.stdout
    failures = 0
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # report and keep going
            ok, detail = False, f"raised {exc!r}"
        failures += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}", file=log)
    return failures
