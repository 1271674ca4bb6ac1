"""Diagonal-Gaussian policy and state-value heads.

The action distribution is N(mean_net(obs), diag(exp(log_spread))^2) with a
state-independent log spread, so the post-supervision entropy reduction is a
plain parameter shift on ``log_spread``.
"""

from __future__ import annotations

import numpy as np

from .nets import DenseNet, make_dense_net, net_forward

LOG_2PI = float(np.log(2.0 * np.pi))
HALF_LOG_2PIE = 0.5 * float(np.log(2.0 * np.pi * np.e))


class PolicyDivergedError(FloatingPointError):
    """Policy mean output became non-finite."""


class GaussianPolicy:
    """Stochastic policy pi(a|s); houses the mean network and log spread."""

    def __init__(self, mean_net: DenseNet, log_spread, sigma_min=1e-3):
        if mean_net.out_dim != len(log_spread):
            raise ValueError("log_spread length must equal the action dimension")
        self.mean_net = mean_net
        self.sigma_min = float(sigma_min)
        self.log_spread = np.maximum(
            np.asarray(log_spread, dtype=np.float64), np.log(self.sigma_min)
        )

    @classmethod
    def create(cls, obs_dim, act_dim, rng, hidden=(64, 64), sigma_init=0.2,
               sigma_min=1e-3):
        net = make_dense_net([obs_dim, *hidden, act_dim], rng, final_scale=0.01)
        return cls(net, np.full(act_dim, np.log(sigma_init)), sigma_min=sigma_min)

    @property
    def obs_dim(self):
        return self.mean_net.in_dim

    @property
    def act_dim(self):
        return self.mean_net.out_dim

    def spread(self):
        return np.exp(self.log_spread)

    def mean(self, obs):
        return net_forward(self.mean_net, obs)

    def params(self):
        """Mean-net parameters followed by log_spread (live references)."""
        return self.mean_net.params() + [self.log_spread]

    def set_params(self, params):
        self.mean_net.set_params(params[:-1])
        self.log_spread = np.asarray(params[-1], dtype=np.float64)

    def copy(self):
        return GaussianPolicy(self.mean_net.copy(), self.log_spread.copy(),
                              sigma_min=self.sigma_min)


def sample_action(policy, obs, rng):
    """Draw a ~ N(mean(obs), spread^2); reproducible under a fixed generator."""
    obs = np.asarray(obs, dtype=np.float64)
    if not np.all(np.isfinite(obs)):
        raise ValueError("observation contains non-finite entries")
    mean = policy.mean(obs)
    if not np.all(np.isfinite(mean)):
        raise PolicyDivergedError("policy mean output is non-finite")
    return mean + policy.spread() * rng.standard_normal(policy.act_dim)


def log_prob(policy, obs, action):
    """Diagonal-Gaussian log density; batched when obs/action are 2-D."""
    mean = policy.mean(obs)
    return log_prob_from_mean(mean, policy.log_spread, action)


def log_prob_from_mean(mean, log_spread, action):
    z = (np.asarray(action) - mean) / np.exp(log_spread)
    per_dim = -0.5 * (z * z + LOG_2PI) - log_spread
    return per_dim.sum(axis=-1)


def entropy(policy):
    """Sum over dims of 0.5*ln(2*pi*e) + log_spread_j."""
    return float(np.sum(HALF_LOG_2PIE + policy.log_spread))


def reduce_entropy(policy, factor):
    """Shrink the spread by ``factor`` in (0, 1], clamped at sigma_min. In place."""
    if not (0.0 < factor <= 1.0):
        raise ValueError(f"entropy reduction factor must be in (0, 1], got {factor}")
    policy.log_spread = np.maximum(
        policy.log_spread + np.log(factor), np.log(policy.sigma_min)
    )
    return policy


def mean_kl(policy_old, policy_new, obs_batch):
    """Batch-mean closed-form KL(pi_new(.|s) || pi_old(.|s)).

    Averaged over the provided states (on-policy states of the old policy).
    """
    obs_batch = np.asarray(obs_batch, dtype=np.float64)
    if obs_batch.ndim == 1:
        obs_batch = obs_batch[None, :]
    if obs_batch.shape[0] == 0:
        raise ValueError("mean_kl requires a non-empty batch")
    mu_old = policy_old.mean(obs_batch)
    mu_new = policy_new.mean(obs_batch)
    return float(np.mean(kl_terms(mu_new, policy_new.log_spread,
                                  mu_old, policy_old.log_spread)))


def kl_terms(mu_new, log_spread_new, mu_old, log_spread_old):
    """Per-state KL(new || old) for diagonal Gaussians."""
    var_new = np.exp(2.0 * log_spread_new)
    var_old = np.exp(2.0 * log_spread_old)
    diff = mu_new - mu_old
    per_dim = (log_spread_old - log_spread_new
               + (var_new + diff * diff) / (2.0 * var_old) - 0.5)
    return per_dim.sum(axis=-1)


class ValueFunction:
    """State-value head V(s) plus optional per-constraint cost-value heads."""

    def __init__(self, value_net: DenseNet, cost_value_net: DenseNet | None = None):
        self.value_net = value_net
        self.cost_value_net = cost_value_net

    @classmethod
    def create(cls, obs_dim, n_costs, rng, hidden=(64, 64)):
        vnet = make_dense_net([obs_dim, *hidden, 1], rng, final_scale=0.0)
        cnet = None
        if n_costs > 0:
            cnet = make_dense_net([obs_dim, *hidden, n_costs], rng, final_scale=0.0)
        return cls(vnet, cnet)

    @property
    def n_costs(self):
        return 0 if self.cost_value_net is None else self.cost_value_net.out_dim

    def values(self, obs):
        """V(s) for a batch (B, obs_dim) -> (B,)."""
        return net_forward(self.value_net, obs)[..., 0]

    def cost_values(self, obs):
        """Per-constraint cost values (B, n_costs); zeros when no heads exist."""
        obs = np.asarray(obs, dtype=np.float64)
        if self.cost_value_net is None:
            return np.zeros(obs.shape[:-1] + (0,))
        return net_forward(self.cost_value_net, obs)

    def copy(self):
        return ValueFunction(
            self.value_net.copy(),
            None if self.cost_value_net is None else self.cost_value_net.copy(),
        )


# Policy file layout: a small header for validation, then the mean-net record.
POLICY_MAGIC = "gcpo-policy-v1"


def policy_to_text(policy):
    from .nets import net_to_lines

    lines = [POLICY_MAGIC,
             f"obs_dim {policy.obs_dim}",
             f"act_dim {policy.act_dim}",
             "sigma_min " + repr(float(policy.sigma_min)),
             "log_spread " + " ".join(repr(float(v)) for v in policy.log_spread)]
    lines.extend(net_to_lines(policy.mean_net))
    return "\n".join(lines) + "\n"


def policy_from_text(text):
    from .nets import net_from_lines

    lines = text.splitlines()
    if not lines or lines[0].strip() != POLICY_MAGIC:
        raise ValueError(f"bad policy file header (expected {POLICY_MAGIC!r})")
    obs_dim = int(lines[1].split()[1])
    act_dim = int(lines[2].split()[1])
    sigma_min = float(lines[3].split()[1])
    log_spread = np.array([float(t) for t in lines[4].split()[1:]])
    net = net_from_lines(lines[5:])
    if net.in_dim != obs_dim or net.out_dim != act_dim or len(log_spread) != act_dim:
        raise ValueError("policy file header inconsistent with network record")
    return GaussianPolicy(net, log_spread, sigma_min=sigma_min)
