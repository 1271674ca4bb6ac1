"""Discounted returns, GAE, discounted cost returns and the constraint surrogate.

Episodes are immutable-by-convention numpy bundles; every function here is
pure, so rollout post-processing can run in parallel over episodes. Cost
advantages reuse the same GAE code path with rewards replaced by costs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Episode:
    """One contiguous episode of transitions.

    ``costs`` has one column per registered hard (kappa) constraint.
    ``bootstrap_value`` is V(s_{T+1}) and is only consulted when the episode
    was truncated rather than terminated.
    """

    obs: np.ndarray            # (T, obs_dim)
    actions: np.ndarray        # (T, act_dim)
    rewards: np.ndarray        # (T,)
    costs: np.ndarray          # (T, n_kappa)
    terminal: bool
    truncated: bool
    values: np.ndarray | None = None        # (T,)
    cost_values: np.ndarray | None = None   # (T, n_kappa)
    log_probs: np.ndarray | None = None     # (T,)
    bootstrap_value: float = 0.0
    bootstrap_cost_values: np.ndarray | None = None  # (n_kappa,)
    kappa_violated: np.ndarray | None = None  # (T, n_kappa) bools
    final_obs: np.ndarray | None = None

    def __len__(self):
        return len(self.rewards)


@dataclass
class RolloutBatch:
    """Episodes plus flattened views used by the optimizers."""

    episodes: list = field(default_factory=list)

    def __len__(self):
        return sum(len(ep) for ep in self.episodes)

    def stack(self, name):
        parts = [getattr(ep, name) for ep in self.episodes]
        return np.concatenate(parts, axis=0)


def _check_gamma(gamma):
    if not (0.0 <= gamma < 1.0):
        raise ValueError(f"discount factor must be in [0, 1), got {gamma}")


def discounted_returns(rewards, gamma, terminal=True, bootstrap_value=0.0):
    """G_t = r_t + gamma * G_{t+1}; truncated episodes bootstrap with a value."""
    _check_gamma(gamma)
    rewards = np.asarray(rewards, dtype=np.float64)
    T = len(rewards)
    out = np.empty(T)
    running = 0.0 if terminal else float(bootstrap_value)
    for t in range(T - 1, -1, -1):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def gae(rewards, values, gamma, lam, terminal=True, bootstrap_value=0.0):
    """Generalized advantage estimate over one episode.

    A_t = sum_k (gamma*lam)^k delta_{t+k} with
    delta_t = r_t + gamma*V(s_{t+1}) - V(s_t); V past the end is 0 at a
    terminal and ``bootstrap_value`` at a truncation.
    """
    _check_gamma(gamma)
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"gae lambda must be in [0, 1], got {lam}")
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if values.shape != rewards.shape:
        raise ValueError("values must align with rewards, one entry per step")
    T = len(rewards)
    adv = np.empty(T)
    next_value = 0.0 if terminal else float(bootstrap_value)
    running = 0.0
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
        next_value = values[t]
    return adv


def episode_cost_return(costs, gamma):
    """sum_t gamma^t c_t for one episode's cost column."""
    _check_gamma(gamma)
    costs = np.asarray(costs, dtype=np.float64)
    return float(np.polynomial.polynomial.polyval(gamma, costs))


def cost_return_estimate(cost_episodes, gamma):
    """Batch estimate of J_C: mean over episodes of the discounted cost sum."""
    _check_gamma(gamma)
    cost_episodes = list(cost_episodes)
    if not cost_episodes:
        raise ValueError("cost_return_estimate requires at least one episode")
    return float(np.mean([episode_cost_return(c, gamma) for c in cost_episodes]))


def constraint_surrogate(j_current, cost_advantages, importance_ratios, gamma):
    """Trust-region cost surrogate J_C(pi_k) + mean(ratio * A_C)/(1 - gamma)."""
    if gamma >= 1.0 or gamma < 0.0:
        raise ValueError(f"discount factor must be in [0, 1), got {gamma}")
    cost_advantages = np.asarray(cost_advantages, dtype=np.float64)
    importance_ratios = np.asarray(importance_ratios, dtype=np.float64)
    if cost_advantages.shape != importance_ratios.shape:
        raise ValueError("cost advantages and ratios must have equal length")
    return float(j_current
                 + np.mean(importance_ratios * cost_advantages) / (1.0 - gamma))


def normalize_advantages(adv, eps=1e-8):
    """Zero-mean unit-spread rescale; preserves the batch argmax."""
    adv = np.asarray(adv, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + eps)


def compute_episode_targets(ep, gamma, lam):
    """Attach advantages and regression targets to one episode.

    Returns (advantages, value_targets, cost_advantages, cost_value_targets).
    Cost channels use the identical GAE machinery with rewards replaced by the
    per-constraint costs.
    """
    adv = gae(ep.rewards, ep.values, gamma, lam,
              terminal=ep.terminal, bootstrap_value=ep.bootstrap_value)
    value_targets = adv + ep.values
    n_k = ep.costs.shape[1]
    cost_adv = np.empty((len(ep), n_k))
    cost_targets = np.empty((len(ep), n_k))
    for i in range(n_k):
        boot = 0.0
        if ep.bootstrap_cost_values is not None:
            boot = float(ep.bootstrap_cost_values[i])
        ca = gae(ep.costs[:, i], ep.cost_values[:, i], gamma, lam,
                 terminal=ep.terminal, bootstrap_value=boot)
        cost_adv[:, i] = ca
        cost_targets[:, i] = ca + ep.cost_values[:, i]
    return adv, value_targets, cost_adv, cost_targets
