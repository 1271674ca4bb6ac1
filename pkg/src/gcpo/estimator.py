"""Estimator facade: fit() runs the full guided constrained training schedule,
predict() maps observations to deterministic mean actions.

Follows the scikit-learn parameter protocol (keyword-only constructor params,
``get_params``/``set_params``, trailing-underscore fitted attributes) so the
trainer composes with ecosystem tooling such as ``clone`` and grid drivers.
The planar environment is the default problem; any object satisfying the
environment protocol can be passed to ``fit``.
"""

from __future__ import annotations

import numpy as np

from .config import SCHEMA, RunConfig
from .expert import ExpertController, generate_dataset
from .trainer import Trainer
from .validation import NotFittedError, check_observation

# Constructor params exposed sklearn-style, mapped onto config entries.
_PARAM_MAP = {
    "seed": ("run", "seed"),
    "mode": ("run", "mode"),
    "workers": ("run", "workers"),
    "lambda_decay": ("trainer", "lambda_decay"),
    "supervised_budget": ("trainer", "supervised_budget"),
    "acppo_budget": ("trainer", "acppo_budget"),
    "hcppo_budget": ("trainer", "hcppo_budget"),
    "rounds_acppo": ("trainer", "rounds_acppo"),
    "rounds_hcppo": ("trainer", "rounds_hcppo"),
    "n_steps": ("trainer", "n_steps"),
    "gpu_passes": ("trainer", "gpu_passes"),
    "gamma": ("trainer", "gamma"),
    "gae_lambda": ("trainer", "gae_lambda"),
    "entropy_reduction": ("trainer", "entropy_reduction"),
    "sigma_init": ("trainer", "sigma_init"),
    "policy_lr": ("trainer", "policy_lr"),
    "value_lr": ("trainer", "value_lr"),
    "gpu_lr": ("trainer", "gpu_lr"),
    "randomization": ("trainer", "randomization"),
    "clip_epsilon": ("objective", "clip_epsilon"),
    "value_coef": ("objective", "value_coef"),
    "entropy_coef": ("objective", "entropy_coef"),
    "kl_step": ("objective", "kl_step"),
    "epochs": ("objective", "epochs"),
    "minibatch": ("objective", "minibatch"),
}


class GCPO:
    """Guided constrained policy optimization as a fit/predict estimator."""

    def __init__(self, **params):
        self._params = {name: None for name in _PARAM_MAP}
        self._params["config_values"] = None
        self.set_params(**params)

    # -- sklearn parameter protocol -----------------------------------------

    def get_params(self, deep=True):
        return dict(self._params)

    def set_params(self, **params):
        for name, value in params.items():
            if name not in self._params:
                raise ValueError(f"unknown parameter {name!r} for GCPO")
            self._params[name] = value
        return self

    def _resolved_config(self):
        values = dict(self._params["config_values"] or {})
        if ("run", "seed") not in values:
            values[("run", "seed")] = 0
        for name, target in _PARAM_MAP.items():
            if self._params[name] is not None:
                ctor = SCHEMA[target[0]][target[1]][0]
                values[target] = ctor(str(self._params[name]))
        return RunConfig(values)

    # -- estimation ----------------------------------------------------------

    def fit(self, env_factory=None, dataset=None, record_callback=None):
        """Train on the configured environment; returns self.

        ``env_factory(seed_sequence, randomization)`` may supply a custom
        environment; the default is the planar velocity-tracking task. In
        gcpo mode a missing ``dataset`` is generated from the scripted expert
        (planar default environment only).
        """
        rc = self._resolved_config()
        factory = env_factory or rc.env_factory()
        if dataset is None and rc.trainer.mode == "gcpo":
            if env_factory is not None:
                raise ValueError("custom environments need an explicit dataset "
                                 "in gcpo mode")
            gen_env = rc.env_factory()(np.random.SeedSequence(rc.trainer.seed),
                                       False)
            expert = ExpertController(rc.env_params)
            dataset = generate_dataset(gen_env, expert,
                                       rc.trainer.dataset_episodes,
                                       rc.trainer.dataset_steps,
                                       seed=rc.trainer.seed)
        trainer = Trainer(rc.trainer, factory, record_callback=record_callback,
                          dataset=dataset)
        trainer.train()
        self.trainer_ = trainer
        self.policy_ = trainer.policy
        self.values_ = trainer.values
        self.history_ = trainer.records
        self.n_features_in_ = trainer.policy.obs_dim
        return self

    def predict(self, obs):
        """Deterministic mean action(s) for one observation or a batch."""
        if not hasattr(self, "policy_"):
            raise NotFittedError("GCPO.predict called before fit")
        arr, batched = check_observation(obs, self.policy_.obs_dim)
        out = self.policy_.mean(arr)
        return out if batched else np.asarray(out)

    def sample(self, obs, rng):
        """Stochastic action(s) under the trained policy."""
        if not hasattr(self, "policy_"):
            raise NotFittedError("GCPO.sample called before fit")
        from .policy import sample_action

        arr, batched = check_observation(obs, self.policy_.obs_dim)
        if batched:
            return np.stack([sample_action(self.policy_, o, rng) for o in arr])
        return sample_action(self.policy_, arr, rng)
