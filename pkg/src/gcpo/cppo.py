"""Constrained proximal policy optimization core.

Two update procedures over one shared minibatch engine:

* ``acppo_update`` ascends the clipped surrogate with the constraint costs
  folded in as zeta-weighted discounted cost-return terms, stopping epochs
  early once the mean KL to the behavior policy exceeds the step bound.

* ``hcppo_update`` ascends the plain clipped surrogate (zeta ignored) and,
  after every epoch, backtracks along the epoch's parameter step (halving, at
  most 10 times) until every hard cost-return surrogate sits within its bound
  and the KL stays inside the trust region. Batches that start infeasible take
  a pure cost-reduction step instead. Exhausting the line search rejects the
  whole update and restores the pre-update state bit-identically.

The cost-return surrogate is differentiable through the importance ratios on
the cost advantages; its pi_k baseline is a constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nets import (AdamState, NonFiniteGradientError, adam_step, net_backward,
                   net_forward, net_forward_cached)
from .policy import entropy as policy_entropy
from .policy import kl_terms, log_prob_from_mean
from .returns import (compute_episode_targets, constraint_surrogate,
                      cost_return_estimate, normalize_advantages)


@dataclass
class ObjectiveConfig:
    """Every knob of the combined objective and the update loops."""

    clip_epsilon: float = 0.2
    value_coef: float = 0.5          # c1
    entropy_coef: float = 1e-3       # c2
    kl_step: float = 0.02            # delta
    epochs_per_update: int = 4
    minibatch_size: int = 256
    zeta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    d_bounds: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hard_mask: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __post_init__(self):
        self.zeta = np.asarray(self.zeta, dtype=np.float64)
        self.d_bounds = np.asarray(self.d_bounds, dtype=np.float64)
        self.hard_mask = np.asarray(self.hard_mask, dtype=bool)
        if self.clip_epsilon <= 0.0:
            raise ValueError("clip_epsilon must be positive")
        if self.kl_step <= 0.0:
            raise ValueError("kl_step must be positive")
        if np.any(self.zeta < 0.0):
            raise ValueError("zeta weights must be >= 0")
        if np.any(self.d_bounds < 0.0):
            raise ValueError("d bounds must be >= 0")
        if len(self.zeta) != len(self.d_bounds) or len(self.zeta) != len(self.hard_mask):
            raise ValueError("zeta, d_bounds and hard_mask must align")
        if self.epochs_per_update < 1 or self.minibatch_size < 1:
            raise ValueError("epochs and minibatch size must be positive")

    @property
    def n_constraints(self):
        return len(self.zeta)


def clip_term(ratio, advantage, eps):
    """min(ratio*A, clamp(ratio, 1-eps, 1+eps)*A); the PPO clipped surrogate."""
    ratio = np.asarray(ratio, dtype=np.float64)
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps)
    return np.minimum(ratio * advantage, clipped * advantage)


def cclip_loss(clip_values, cost_return_terms, zeta):
    """mean clip term minus the zeta-weighted cost-return terms."""
    cost_return_terms = np.asarray(cost_return_terms, dtype=np.float64)
    zeta = np.asarray(zeta, dtype=np.float64)
    if cost_return_terms.shape != zeta.shape:
        raise ValueError("zeta length must equal the constraint count")
    return float(np.mean(clip_values) - np.sum(zeta * cost_return_terms))


def total_loss(cclip, vf_loss, entropy_val, c1, c2):
    """Combined maximization objective: cclip - c1*L_VF + c2*S."""
    return float(cclip - c1 * vf_loss + c2 * entropy_val)


@dataclass
class UpdateResult:
    """Per-update diagnostics; mirrors one metrics-log row."""

    mean_kl: float
    clip_fraction: float
    entropy: float
    surrogates: np.ndarray
    accepted: bool
    line_search_depth: int
    vf_loss: float
    objective: float
    feasible_start: bool
    epochs_run: int
    aborted: bool = False
    j_current: np.ndarray = None


@dataclass
class OptimizerBundle:
    """Adam moments for the policy and the value heads; single-writer."""

    policy: AdamState
    value: AdamState
    cost_value: AdamState | None

    @classmethod
    def create(cls, policy, values, policy_lr=3e-4, value_lr=1e-3):
        cost_adam = None
        if values.cost_value_net is not None:
            cost_adam = AdamState.for_params(values.cost_value_net.params(),
                                             learning_rate=value_lr)
        return cls(
            AdamState.for_params(policy.params(), learning_rate=policy_lr),
            AdamState.for_params(values.value_net.params(), learning_rate=value_lr),
            cost_adam,
        )


class _PreparedBatch:
    """Flattened batch tensors plus behavior-policy statistics."""

    def __init__(self, policy, values, batch, gamma, lam):
        for ep in batch.episodes:
            ep.values = values.values(ep.obs)
            ep.cost_values = values.cost_values(ep.obs)
            if ep.truncated and ep.final_obs is not None:
                ep.bootstrap_value = float(values.values(ep.final_obs[None, :])[0])
                ep.bootstrap_cost_values = values.cost_values(ep.final_obs[None, :])[0]
        advs, v_targets, c_advs, c_targets = [], [], [], []
        for ep in batch.episodes:
            a, vt, ca, ct = compute_episode_targets(ep, gamma, lam)
            advs.append(a)
            v_targets.append(vt)
            c_advs.append(ca)
            c_targets.append(ct)
        self.obs = batch.stack("obs")
        self.act = batch.stack("actions")
        self.adv = normalize_advantages(np.concatenate(advs))
        self.value_targets = np.concatenate(v_targets)
        self.cost_adv = np.concatenate(c_advs, axis=0)
        self.cost_targets = np.concatenate(c_targets, axis=0)
        mu_old = policy.mean(self.obs)
        self.logp_old = log_prob_from_mean(mu_old, policy.log_spread, self.act)
        self.mu_old = mu_old
        self.log_spread_old = policy.log_spread.copy()
        self.gamma = gamma
        n_k = self.cost_adv.shape[1]
        self.j_current = np.array([
            cost_return_estimate([ep.costs[:, i] for ep in batch.episodes], gamma)
            for i in range(n_k)
        ])
        self.n = len(self.obs)


def _ratios(policy, prep):
    mu = policy.mean(prep.obs)
    logp = log_prob_from_mean(mu, policy.log_spread, prep.act)
    return np.exp(logp - prep.logp_old)


def _surrogates(prep, ratios):
    return np.array([
        constraint_surrogate(prep.j_current[i], prep.cost_adv[:, i], ratios,
                             prep.gamma)
        for i in range(prep.cost_adv.shape[1])
    ])


def _mean_kl_vs_old(policy, prep):
    mu_new = policy.mean(prep.obs)
    return float(np.mean(kl_terms(mu_new, policy.log_spread,
                                  prep.mu_old, prep.log_spread_old)))


def _policy_step(policy, opt, prep, idx, cfg, cost_coef, use_clip):
    """One minibatch ascent step; raises NonFiniteGradientError on bad grads."""
    obs = prep.obs[idx]
    act = prep.act[idx]
    B = len(idx)
    sigma = policy.spread()
    mu, cache = net_forward_cached(policy.mean_net, obs)
    z = (act - mu) / sigma
    logp = (-0.5 * (z * z + np.log(2.0 * np.pi)) - policy.log_spread).sum(axis=1)
    ratio = np.exp(logp - prep.logp_old[idx])

    dL_dratio = np.zeros(B)
    if use_clip:
        adv = prep.adv[idx]
        clipped = np.clip(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon)
        unclipped_active = ratio * adv <= clipped * adv
        dL_dratio += np.where(unclipped_active, adv, 0.0) / B
    if np.any(cost_coef != 0.0):
        dL_dratio += (prep.cost_adv[idx] @ cost_coef) / B
    dL_dlogp = dL_dratio * ratio

    g_mu = dL_dlogp[:, None] * z / sigma
    grads, _ = net_backward(policy.mean_net, cache, g_mu)
    g_logsig = (dL_dlogp[:, None] * (z * z - 1.0)).sum(axis=0)
    if use_clip:
        g_logsig = g_logsig + cfg.entropy_coef
    grads.append(g_logsig)

    # Adam minimizes; negate to ascend.
    new_params = adam_step(policy.params(), [-g for g in grads], opt.policy)
    policy.set_params(new_params)


def _value_step(values, opt, prep, idx, cfg):
    obs = prep.obs[idx]
    B = len(idx)
    v, cache = net_forward_cached(values.value_net, obs)
    err = v[:, 0] - prep.value_targets[idx]
    g_out = (cfg.value_coef * 2.0 / B) * err[:, None]
    grads, _ = net_backward(values.value_net, cache, g_out)
    values.value_net.set_params(adam_step(values.value_net.params(), grads, opt.value))
    if values.cost_value_net is not None:
        cv, ccache = net_forward_cached(values.cost_value_net, obs)
        cerr = cv - prep.cost_targets[idx]
        cg_out = (cfg.value_coef * 2.0 / B) * cerr
        cgrads, _ = net_backward(values.cost_value_net, ccache, cg_out)
        values.cost_value_net.set_params(
            adam_step(values.cost_value_net.params(), cgrads, opt.cost_value))
    return float(np.mean(err * err))


class _Snapshot:
    """Bit-exact save/restore of policy, value heads and optimizer moments."""

    def __init__(self, policy, values, opt):
        self.policy_params = [p.copy() for p in policy.params()]
        self.value_params = [p.copy() for p in values.value_net.params()]
        self.cost_params = None
        if values.cost_value_net is not None:
            self.cost_params = [p.copy() for p in values.cost_value_net.params()]
        self.opt_policy = opt.policy.copy()
        self.opt_value = opt.value.copy()
        self.opt_cost = opt.cost_value.copy() if opt.cost_value is not None else None

    def restore(self, policy, values, opt):
        policy.set_params([p.copy() for p in self.policy_params])
        values.value_net.set_params([p.copy() for p in self.value_params])
        if self.cost_params is not None:
            values.cost_value_net.set_params([p.copy() for p in self.cost_params])
        opt.policy = self.opt_policy.copy()
        opt.value = self.opt_value.copy()
        if self.opt_cost is not None:
            opt.cost_value = self.opt_cost.copy()


def _final_diagnostics(policy, prep, cfg, accepted, depth, feasible, epochs_run,
                       vf_loss):
    ratios = _ratios(policy, prep)
    surro = _surrogates(prep, ratios)
    clip_vals = clip_term(ratios, prep.adv, cfg.clip_epsilon)
    cc = cclip_loss(clip_vals, surro, cfg.zeta)
    ent = policy_entropy(policy)
    return UpdateResult(
        mean_kl=_mean_kl_vs_old(policy, prep),
        clip_fraction=float(np.mean(np.abs(ratios - 1.0) > cfg.clip_epsilon)),
        entropy=ent,
        surrogates=surro,
        accepted=accepted,
        line_search_depth=depth,
        vf_loss=vf_loss,
        objective=total_loss(cc, vf_loss, ent, cfg.value_coef, cfg.entropy_coef),
        feasible_start=feasible,
        epochs_run=epochs_run,
        j_current=prep.j_current.copy(),
    )


def _minibatch_indices(n, size, rng):
    perm = rng.permutation(n)
    return [perm[i:i + size] for i in range(0, n, size)]


def acppo_update(policy, values, opt, batch, cfg, gamma, lam, rng):
    """Approximated constrained PPO: multiple epochs of minibatch ascent on the
    combined objective; epochs stop once the KL bound is hit, and an epoch that
    overshoots 1.5x the bound is rolled back so the trust region always holds.
    A non-finite gradient aborts and restores the pre-update state."""
    prep = _PreparedBatch(policy, values, batch, gamma, lam)
    start = _Snapshot(policy, values, opt)
    cost_coef = -cfg.zeta / (1.0 - gamma)
    vf_loss = float("nan")
    epochs_run = 0
    try:
        for _ in range(cfg.epochs_per_update):
            epoch_snap = _Snapshot(policy, values, opt)
            for idx in _minibatch_indices(prep.n, cfg.minibatch_size, rng):
                _policy_step(policy, opt, prep, idx, cfg, cost_coef, use_clip=True)
                vf_loss = _value_step(values, opt, prep, idx, cfg)
            epochs_run += 1
            kl = _mean_kl_vs_old(policy, prep)
            if not np.isfinite(kl):
                raise NonFiniteGradientError(-1, -1)
            if kl > 1.5 * cfg.kl_step:
                epoch_snap.restore(policy, values, opt)
                epochs_run -= 1
                break
            if kl > cfg.kl_step:
                break
    except NonFiniteGradientError:
        start.restore(policy, values, opt)
        res = _final_diagnostics(policy, prep, cfg, False, 0, True, 0, vf_loss)
        res.aborted = True
        return res
    return _final_diagnostics(policy, prep, cfg, True, 0, True, epochs_run, vf_loss)


def hcppo_update(policy, values, opt, batch, cfg, gamma, lam, rng):
    """Hard constrained PPO via per-epoch backtracking line search.

    Feasible batches ascend the unconstrained clipped objective and keep the
    largest step fraction whose hard surrogates stay within their bounds and
    whose KL stays within the step bound. Infeasible batches descend the sum
    of violated surrogates under the same KL bound. Exhausting 10 halvings
    rejects the update and restores everything bit-identically."""
    prep = _PreparedBatch(policy, values, batch, gamma, lam)
    start = _Snapshot(policy, values, opt)
    hard = cfg.hard_mask
    violated = hard & (prep.j_current > cfg.d_bounds)
    feasible = not bool(np.any(violated))
    if feasible:
        cost_coef = np.zeros(cfg.n_constraints)
        use_clip = True
    else:
        # descend the violated surrogates only
        cost_coef = np.where(violated, -1.0 / (1.0 - gamma), 0.0)
        use_clip = False

    def constraints_ok(ratios):
        if not feasible:
            return True
        surro = _surrogates(prep, ratios)
        return bool(np.all(surro[hard] <= cfg.d_bounds[hard]))

    max_depth = 0
    vf_loss = float("nan")
    epochs_run = 0
    try:
        for _ in range(cfg.epochs_per_update):
            pre_params = [p.copy() for p in policy.params()]
            for idx in _minibatch_indices(prep.n, cfg.minibatch_size, rng):
                _policy_step(policy, opt, prep, idx, cfg, cost_coef, use_clip)
                vf_loss = _value_step(values, opt, prep, idx, cfg)
            epochs_run += 1
            post_params = [p.copy() for p in policy.params()]
            depth = 0
            while True:
                ratios = _ratios(policy, prep)
                kl = _mean_kl_vs_old(policy, prep)
                if np.isfinite(kl) and kl <= cfg.kl_step and constraints_ok(ratios):
                    break
                depth += 1
                if depth > 10:
                    start.restore(policy, values, opt)
                    res = _final_diagnostics(policy, prep, cfg, False, depth - 1,
                                             feasible, 0, vf_loss)
                    return res
                frac = 0.5 ** depth
                policy.set_params([pre + frac * (post - pre)
                                   for pre, post in zip(pre_params, post_params)])
            max_depth = max(max_depth, depth)
    except NonFiniteGradientError:
        start.restore(policy, values, opt)
        res = _final_diagnostics(policy, prep, cfg, False, max_depth, feasible,
                                 0, vf_loss)
        res.aborted = True
        return res
    return _final_diagnostics(policy, prep, cfg, True, max_depth, feasible,
                              epochs_run, vf_loss)
