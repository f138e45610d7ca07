"""Shared test oracles: central finite differences and joint value iteration."""

from __future__ import annotations

import itertools

import numpy as np
import torch


def finite_difference_check(loss_fn, params, eps: float = 1e-6) -> float:
    """Largest per-tensor relative error between autograd and central differences.

    ``loss_fn`` is a zero-argument callable returning a float64 scalar tensor;
    ``params`` are the float64 tensors whose gradients are checked.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [p.grad.detach().clone() for p in params]
    worst = 0.0
    with torch.no_grad():
        for p, a in zip(params, analytic):
            numeric = torch.zeros_like(p)
            flat, nflat = p.view(-1), numeric.view(-1)
            for k in range(flat.numel()):
                orig = flat[k].item()
                flat[k] = orig + eps
                up = loss_fn().item()
                flat[k] = orig - eps
                down = loss_fn().item()
                flat[k] = orig
                nflat[k] = (up - down) / (2 * eps)
            scale = max(a.norm().item(), numeric.norm().item(), 1e-8)
            worst = max(worst, (a - numeric).norm().item() / scale)
    return worst


def joint_value_iteration(next_state, reward, gamma, tol=1e-12, max_iter=100_000):
    """Q*(s, a_1..a_N) for a deterministic MDP with reward R(s, s')."""
    n_states = next_state.shape[0]
    joint = list(itertools.product(*(range(k) for k in next_state.shape[1:])))
    q = np.zeros((n_states, len(joint)))
    for _ in range(max_iter):
        v = q.max(axis=1)
        new = np.array([[reward[s, next_state[(s, *a)]] + gamma * v[next_state[(s, *a)]] for a in joint] for s in range(n_states)])
        if np.max(np.abs(new - q)) < tol:
            return new
        q = new
    raise RuntimeError("value iteration did not converge")


def random_deterministic_mdp(rng, n_states=6, n_actions=(2, 2)):
    next_state = rng.integers(0, n_states, size=(n_states, *n_actions))
    reward = rng.normal(size=(n_states, n_states))
    return next_state, reward


# ---------------------------------------------------------------- decentralization audit

AGENT_MODULES = ("i2q", "baselines")
FORBIDDEN_NAMES = {
    "states",
    "hidden_features",
    "EnvState",
    "LabeledEpisode",
    "LabeledDataset",
    "DecPOMDP",
    "make_env",
}


def forbidden_references(module) -> set[str]:
    """Names and attributes from the centralised world referenced in a module's source."""
    import ast
    import inspect

    tree = ast.parse(inspect.getsource(module))
    found = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.Name) and node.id in FORBIDDEN_NAMES:
            found.add(node.id)
        elif isinstance(node, ast.Attribute) and node.attr in FORBIDDEN_NAMES:
            found.add(node.attr)
        elif isinstance(node, ast.alias) and node.name.split(".")[-1] in FORBIDDEN_NAMES:
            found.add(node.name)
    return found


def reachable(root, stop=()):
    """Every object reachable from ``root`` through attributes and containers.

    Objects whose id is in ``stop`` are recorded but not expanded.
    """
    import numpy as np
    import torch

    seen: dict[int, object] = {}
    stack = [root]
    while stack:
        obj = stack.pop()
        if id(obj) in seen or obj is None or isinstance(obj, (int, float, str, bool, bytes, type)):
            continue
        seen[id(obj)] = obj
        if id(obj) in stop or isinstance(obj, (np.ndarray, torch.Tensor, np.random.Generator, torch.Generator)):
            continue
        if isinstance(obj, dict):
            stack.extend(obj.keys())
            stack.extend(obj.values())
        elif isinstance(obj, (list, tuple, set, frozenset)):
            stack.extend(obj)
        elif isinstance(obj, torch.optim.Optimizer):
            for group in obj.param_groups:
                stack.extend(group["params"])
            stack.extend(obj.state.values())
        elif hasattr(obj, "__dict__"):
            stack.extend(vars(obj).values())
        if hasattr(obj, "__slots__"):
            stack.extend(getattr(obj, s) for s in obj.__slots__ if hasattr(obj, s))
        if hasattr(obj, "__self__") and callable(obj):
            stack.append(obj.__self__)
        if hasattr(obj, "__closure__") and obj.__closure__:
            stack.extend(c.cell_contents for c in obj.__closure__)
    return seen


def audit_agents(agents, env, shared=()) -> list[str]:
    """Return a list of violations (empty when every agent is self-contained).

    ``shared`` holds objects several agents may hold on purpose, like a
    frozen belief model trained before learning.
    """
    import torch

    from beliefi2q.core import DecPOMDP, EnvState
    from beliefi2q.data import LabeledDataset, LabeledEpisode

    problems = []
    shared_ids = {id(s) for s in shared}
    for s in shared:
        shared_ids.update(reachable(s))
    graphs = [reachable(a, stop=shared_ids) for a in agents]
    for i, g in enumerate(graphs):
        for obj in g.values():
            if isinstance(obj, (DecPOMDP, EnvState, LabeledDataset, LabeledEpisode)):
                problems.append(f"agent {i} reaches {type(obj).__name__}")
        for j, other in enumerate(agents):
            if j != i and id(other) in g:
                problems.append(f"agent {i} reaches agent {j}")
        if id(env) in g:
            problems.append(f"agent {i} reaches the environment")
    for i in range(len(agents)):
        for j in range(i + 1, len(agents)):
            common = (set(graphs[i]) & set(graphs[j])) - shared_ids
            leaked = [graphs[i][k] for k in common if isinstance(graphs[i][k], (torch.Tensor, torch.nn.Module, list, dict))]
            leaked = [o for o in leaked if not (isinstance(o, (list, dict, tuple)) and len(o) == 0)]
            if leaked:
                problems.append(f"agents {i} and {j} share {len(leaked)} mutable objects")
    return problems


class ObservationSpy:
    """Wraps an agent and checks every input is the agent's own observation or the joint reward."""

    def __init__(self, agent, index, log):
        self.agent, self.index, self.log = agent, index, log

    def begin_episode(self, obs):
        self.log.append(("begin", self.index, obs))
        return self.agent.begin_episode(obs)

    def act(self, epsilon):
        return self.agent.act(epsilon)

    def record(self, action, reward, next_obs):
        self.log.append(("record", self.index, action, reward, next_obs))
        return self.agent.record(action, reward, next_obs)

    def end_episode(self, terminated):
        return self.agent.end_episode(terminated)


def runtime_audit(env, agents, seed=0, episodes=2) -> list[str]:
    """Play episodes through spies and compare what each agent saw with the env's per-agent output."""
    import numpy as np

    from beliefi2q.harness.runner import play_episode

    problems = []
    log: list = []
    truth: list = []
    real_reset, real_step = env.reset, env.step

    def reset(s):
        state, obs = real_reset(s)
        truth.append(("begin", [o.feature_vector for o in obs], None))
        return state, obs

    def step(joint):
        res = real_step(joint)
        truth.append(("record", [o.feature_vector for o in res.next_observations], (tuple(joint), res.reward)))
        return res

    env.reset, env.step = reset, step
    try:
        spies = [ObservationSpy(a, i, log) for i, a in enumerate(agents)]
        for k in range(episodes):
            play_episode(env, spies, 0.5, seed + k)
    finally:
        del env.reset, env.step
    n = len(agents)
    if len(log) != n * len(truth):
        return [f"expected {n * len(truth)} agent inputs, got {len(log)}"]
    for t, (kind, obs, extra) in enumerate(truth):
        for entry in log[t * n:(t + 1) * n]:
            i = entry[1]
            if entry[0] != kind:
                problems.append(f"call order mismatch at {t}")
            if not np.array_equal(entry[-1], obs[i]) or entry[-1] is not obs[i]:
                problems.append(f"agent {i} received something other than its own observation at {t}")
            if kind == "record":
                joint, reward = extra
                if entry[2] != joint[i] or entry[3] != reward:
                    problems.append(f"agent {i} received foreign action or reward at {t}")
    return problems


# ---------------------------------------------------------------- acceptance reporting

ACCEPTANCE: list[tuple[str, bool, str]] = []


class criterion:
    """Context manager recording one PASS/FAIL line, whether or not the body raises."""

    def __init__(self, label: str):
        self.label = label
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        detail = self.detail if ok or self.detail else f"{exc_type.__name__}: {exc}"
        ACCEPTANCE.append((self.label, ok, detail))
        print(f"{'PASS' if ok else 'FAIL'} {self.label} {detail}")
        return False
