"""Top-level training orchestration: the alpha-scheduled alternation of guided
policy updates and aCPPO rounds, followed by hCPPO rounds; rollout collection
with no-go termination and episode reformatting; checkpoints.

Rollouts fan out over N independent environment instances with a read-only
policy; a single coordinator visits workers in a fixed cyclic order (one
episode per visit) and owns every parameter update, so runs are bit-identical
for a given config and seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import constraints as C
from .cppo import ObjectiveConfig, OptimizerBundle, acppo_update, hcppo_update
from .expert import guided_policy_update
from .nets import AdamState, net_from_lines, net_to_lines
from .policy import GaussianPolicy, ValueFunction, entropy, sample_action
from .returns import Episode, RolloutBatch

PHASE_GPU = "gpu"
PHASE_ACPPO = "acppo"
PHASE_HCPPO = "hcppo"

MODES = ("gcpo", "cppo_only", "unconstrained")


class DivergenceHalt(RuntimeError):
    """Two consecutive non-finite updates; training stopped at last good state."""

    def __init__(self, checkpoint_path=None):
        self.checkpoint_path = checkpoint_path
        super().__init__("training diverged twice consecutively")


@dataclass
class TrainerConfig:
    """Every hyperparameter of the training loop and the combined objective."""

    seed: int = 0
    workers: int = 4
    mode: str = "gcpo"
    lambda_decay: float = -0.35          # alpha decay rate, < 0
    supervised_budget: int = 20000       # s_max, expert pairs
    acppo_budget: int = 200000           # c_max, env steps per round
    hcppo_budget: int = 100000           # c_max^h, env steps per round
    rounds_acppo: int = 10               # H_a
    rounds_hcppo: int = 5                # H_h
    n_steps: int = 1000                  # rollout/episode length
    gpu_passes: int = 10                 # n_batch
    gamma: float = 0.998
    gae_lambda: float = 0.95
    entropy_reduction: float = 0.85
    sigma_init: float = 0.2
    sigma_min_train: float = 1e-3
    sigma_min_eval: float = 1e-6
    policy_lr: float = 3e-4
    value_lr: float = 1e-3
    gpu_lr: float = 1e-3
    dataset_episodes: int = 10
    dataset_steps: int = 1000
    terminal_penalty: float = -1.0
    recovery_bonus: float = 0.05
    command_min: float = -0.5
    command_max: float = 0.5
    randomization: bool = True
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lambda_decay >= 0.0:
            raise ValueError("lambda_decay must be negative")
        for name in ("supervised_budget", "acppo_budget", "hcppo_budget"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.rounds_acppo < 0 or self.rounds_hcppo < 0:
            raise ValueError("round counts must be >= 0")
        if self.n_steps < 1:
            raise ValueError("n_steps must be positive")
        if not (0.0 < self.entropy_reduction <= 1.0):
            raise ValueError("entropy_reduction must be in (0, 1]")
        if self.terminal_penalty >= 0.0:
            raise ValueError("terminal_penalty must be negative")

    def alpha(self, round_index):
        return float(np.exp(self.lambda_decay * round_index))

    def total_env_budget(self):
        total = sum(
            int(round((1.0 - self.alpha(t)) * self.acppo_budget))
            for t in range(self.rounds_acppo)
        )
        if self.mode != "unconstrained":
            total += self.rounds_hcppo * self.hcppo_budget
        return max(total, 1)


@dataclass
class TrainRecord:
    """One metrics-log row; see metrics.metrics_columns for the field order."""

    iteration: int
    env_steps: int
    phase: str
    alpha: float
    mean_reward: float
    jc: np.ndarray
    viol_rho: float
    viol_kappa: float
    viol_eta: float
    mean_kl: float
    entropy: float
    clip_fraction: float
    surrogates: np.ndarray
    accepted: bool
    line_search_depth: int
    viol_per_kappa: np.ndarray
    batch_raw_steps: int


def _nan_vec(n):
    return np.full(n, np.nan)


class Trainer:
    """Single-run training state; one coordinator thread owns all updates."""

    def __init__(self, cfg: TrainerConfig, env_factory, record_callback=None,
                 dataset=None):
        self.cfg = cfg
        self.callback = record_callback
        self.dataset = dataset
        ss = np.random.SeedSequence(cfg.seed)
        keys = ss.spawn(4 + 2 * cfg.workers)
        self.rng_init = np.random.default_rng(keys[0])
        self.rng_gpu = np.random.default_rng(keys[1])
        self.rng_update = np.random.default_rng(keys[2])
        self.rng_misc = np.random.default_rng(keys[3])
        self.envs = []
        self.action_rngs = []
        for w in range(cfg.workers):
            env_seed = keys[4 + 2 * w]
            self.envs.append(env_factory(env_seed, cfg.randomization))
            self.action_rngs.append(np.random.default_rng(keys[5 + 2 * w]))
        env0 = self.envs[0]
        self.n_kappa = env0.n_kappa
        self.kappa_ids = list(env0.kappa_ids)
        self.policy = GaussianPolicy.create(
            env0.obs_dim, env0.act_dim, self.rng_init,
            sigma_init=cfg.sigma_init, sigma_min=cfg.sigma_min_train)
        self.values = ValueFunction.create(env0.obs_dim, self.n_kappa, self.rng_init)
        self.opt = OptimizerBundle.create(self.policy, self.values,
                                          policy_lr=cfg.policy_lr,
                                          value_lr=cfg.value_lr)
        self.gpu_adam = AdamState.for_params(self.policy.mean_net.params(),
                                             learning_rate=cfg.gpu_lr)
        self.objective = self._objective_for_mode()
        self.env_steps = 0
        self.iteration = 0
        self.records = []
        self._worker = 0
        self._consecutive_aborts = 0
        self._total_budget = cfg.total_env_budget()
        self._apply_reformat = cfg.mode != "unconstrained"

    def _objective_for_mode(self):
        obj = self.cfg.objective
        zeta = obj.zeta
        if len(zeta) != self.n_kappa:
            raise ValueError("objective zeta length must match the constraint count")
        if self.cfg.mode == "unconstrained":
            zeta = np.zeros(self.n_kappa)
        return ObjectiveConfig(
            clip_epsilon=obj.clip_epsilon, value_coef=obj.value_coef,
            entropy_coef=obj.entropy_coef, kl_step=obj.kl_step,
            epochs_per_update=obj.epochs_per_update,
            minibatch_size=obj.minibatch_size,
            zeta=zeta, d_bounds=obj.d_bounds, hard_mask=obj.hard_mask)

    # -- rollouts ------------------------------------------------------------

    def _rollout_episode(self, env, action_rng):
        cap = min(self.cfg.n_steps, getattr(env, "episode_cap", self.cfg.n_steps))
        obs = env.reset()
        obs_rows, act_rows, rew_rows, cost_rows, viol_rows = [], [], [], [], []
        counts = np.zeros(self.n_kappa)
        rho_steps = 0
        kappa_any_steps = 0
        eta_steps = 0
        terminal = False
        eta_flag = False
        final_obs = None
        for _ in range(cap):
            action = sample_action(self.policy, obs, action_rng)
            next_obs, reward, costs, info, terminated = env.step(action)
            obs_rows.append(obs)
            act_rows.append(action)
            rew_rows.append(reward)
            cost_rows.append(costs)
            viol_rows.append(info.kappa_violated)
            counts += info.kappa_violated
            kappa_any_steps += bool(np.any(info.kappa_violated))
            rho_steps += bool(info.rho_violated)
            obs = next_obs
            if terminated:
                terminal = True
                eta_flag = bool(info.eta_triggers)
                eta_steps += int(eta_flag)
                break
        if not terminal:
            final_obs = obs
        ep = Episode(
            obs=np.asarray(obs_rows), actions=np.asarray(act_rows),
            rewards=np.asarray(rew_rows), costs=np.asarray(cost_rows),
            terminal=terminal, truncated=not terminal,
            kappa_violated=np.asarray(viol_rows), final_obs=final_obs,
        )
        stats = {"raw_steps": len(ep), "rho": rho_steps, "eta": eta_steps,
                 "kappa_any": kappa_any_steps, "kappa_counts": counts,
                 "raw_reward": float(ep.rewards.sum())}
        return ep, eta_flag, stats

    def collect_batch(self, min_steps):
        """Cycle workers (one episode per visit) until min_steps raw env steps."""
        progress = self.env_steps / self._total_budget
        for env in self.envs:
            env.set_difficulty(progress)
        episodes, rewards = [], []
        raw = 0
        rho = eta = kappa_any = 0
        kappa_counts = np.zeros(self.n_kappa)
        while raw < min_steps:
            env = self.envs[self._worker]
            rng = self.action_rngs[self._worker]
            self._worker = (self._worker + 1) % self.cfg.workers
            ep, eta_flag, stats = self._rollout_episode(env, rng)
            raw += stats["raw_steps"]
            rho += stats["rho"]
            eta += stats["eta"]
            kappa_any += stats["kappa_any"]
            kappa_counts += stats["kappa_counts"]
            rewards.append(stats["raw_reward"])
            if self._apply_reformat and eta_flag:
                ep = C.reformat_episode(ep, self.cfg.terminal_penalty, True)
            if ep is not None and len(ep) > 0:
                episodes.append(ep)
        self.env_steps += raw
        return RolloutBatch(episodes), {
            "raw_steps": raw,
            "mean_reward": float(np.mean(rewards)),
            "viol_rho": rho / raw,
            "viol_kappa": kappa_any / raw,
            "viol_eta": eta / raw,
            "viol_per_kappa": kappa_counts / raw,
        }

    # -- update loops ----------------------------------------------------

    def policy_optimization(self, it_max, hard, alpha=1.0):
        """Collect and update until it_max raw env steps are spent."""
        cfg = self.cfg
        spent = 0
        while spent < it_max:
            chunk = min(cfg.workers * cfg.n_steps, it_max - spent)
            batch, stats = self.collect_batch(chunk)
            spent += stats["raw_steps"]
            update = hcppo_update if hard else acppo_update
            result = update(self.policy, self.values, self.opt, batch,
                            self.objective, cfg.gamma, cfg.gae_lambda,
                            self.rng_update)
            self._track_divergence(result)
            self.iteration += 1
            rec = TrainRecord(
                iteration=self.iteration, env_steps=self.env_steps,
                phase=PHASE_HCPPO if hard else PHASE_ACPPO, alpha=alpha,
                mean_reward=stats["mean_reward"], jc=result.j_current,
                viol_rho=stats["viol_rho"],
                viol_kappa=stats["viol_kappa"],
                viol_eta=stats["viol_eta"], mean_kl=result.mean_kl,
                entropy=result.entropy, clip_fraction=result.clip_fraction,
                surrogates=result.surrogates, accepted=result.accepted,
                line_search_depth=result.line_search_depth,
                viol_per_kappa=stats["viol_per_kappa"],
                batch_raw_steps=stats["raw_steps"],
            )
            self._emit(rec)
        return self.policy

    def gpu_round(self, it_max, alpha):
        res = guided_policy_update(
            self.policy, self.dataset, it_max, self.cfg.gpu_passes, self.rng_gpu,
            self.gpu_adam, minibatch_size=self.objective.minibatch_size,
            entropy_factor=self.cfg.entropy_reduction)
        self.iteration += 1
        rec = TrainRecord(
            iteration=self.iteration, env_steps=self.env_steps, phase=PHASE_GPU,
            alpha=alpha, mean_reward=float("nan"), jc=_nan_vec(self.n_kappa),
            viol_rho=float("nan"), viol_kappa=float("nan"), viol_eta=float("nan"),
            mean_kl=float("nan"), entropy=entropy(self.policy),
            clip_fraction=float("nan"), surrogates=_nan_vec(self.n_kappa),
            accepted=not res.skipped, line_search_depth=0,
            viol_per_kappa=_nan_vec(self.n_kappa), batch_raw_steps=0,
        )
        self._emit(rec)
        return res

    def train(self):
        """Run the full schedule for the configured mode."""
        cfg = self.cfg
        use_gpu = cfg.mode == "gcpo"
        if use_gpu and self.dataset is None:
            raise ValueError("gcpo mode requires an expert dataset")
        for t in range(cfg.rounds_acppo):
            alpha = cfg.alpha(t)
            if use_gpu:
                self.gpu_round(int(round(alpha * cfg.supervised_budget)), alpha)
            self.policy_optimization(
                int(round((1.0 - alpha) * cfg.acppo_budget)), hard=False,
                alpha=alpha)
        if cfg.mode != "unconstrained":
            for _ in range(cfg.rounds_hcppo):
                self.policy_optimization(cfg.hcppo_budget, hard=True, alpha=0.0)
        return self.policy

    # -- bookkeeping -------------------------------------------------------

    def _emit(self, record):
        self.records.append(record)
        if self.callback is not None:
            self.callback(record)

    def _track_divergence(self, result):
        if result.aborted:
            self._consecutive_aborts += 1
            if self._consecutive_aborts >= 2:
                raise DivergenceHalt()
        else:
            self._consecutive_aborts = 0

    # -- state serialization -------------------------------------------------

    def state_dict(self):
        def adam_state(a):
            return {
                "learning_rate": a.learning_rate, "beta1": a.beta1,
                "beta2": a.beta2, "epsilon_stability": a.epsilon_stability,
                "step_count": a.step_count,
                "first_moment": [m.tolist() for m in a.first_moment],
                "second_moment": [v.tolist() for v in a.second_moment],
            }

        return {
            "version": "gcpo-checkpoint-v1",
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "policy": {
                "net": net_to_lines(self.policy.mean_net),
                "log_spread": self.policy.log_spread.tolist(),
                "sigma_min": self.policy.sigma_min,
            },
            "value_net": net_to_lines(self.values.value_net),
            "cost_value_net": (net_to_lines(self.values.cost_value_net)
                               if self.values.cost_value_net is not None else None),
            "adam": {
                "policy": adam_state(self.opt.policy),
                "value": adam_state(self.opt.value),
                "cost_value": (adam_state(self.opt.cost_value)
                               if self.opt.cost_value is not None else None),
                "gpu": adam_state(self.gpu_adam),
            },
            "rng": {
                "gpu": self.rng_gpu.bit_generator.state,
                "update": self.rng_update.bit_generator.state,
                "misc": self.rng_misc.bit_generator.state,
                "envs": [e.rng.bit_generator.state for e in self.envs
                         if hasattr(e, "rng")],
                "actions": [r.bit_generator.state for r in self.action_rngs],
            },
        }

    def load_state_dict(self, state):
        if state.get("version") != "gcpo-checkpoint-v1":
            raise ValueError("unsupported checkpoint version")

        def load_adam(a, d):
            a.learning_rate = d["learning_rate"]
            a.beta1, a.beta2 = d["beta1"], d["beta2"]
            a.epsilon_stability = d["epsilon_stability"]
            a.step_count = d["step_count"]
            a.first_moment = [np.array(m) for m in d["first_moment"]]
            a.second_moment = [np.array(v) for v in d["second_moment"]]

        self.iteration = state["iteration"]
        self.env_steps = state["env_steps"]
        self.policy.mean_net = net_from_lines(state["policy"]["net"])
        self.policy.log_spread = np.array(state["policy"]["log_spread"])
        self.policy.sigma_min = state["policy"]["sigma_min"]
        self.values.value_net = net_from_lines(state["value_net"])
        if state["cost_value_net"] is not None:
            self.values.cost_value_net = net_from_lines(state["cost_value_net"])
        load_adam(self.opt.policy, state["adam"]["policy"])
        load_adam(self.opt.value, state["adam"]["value"])
        if state["adam"]["cost_value"] is not None:
            load_adam(self.opt.cost_value, state["adam"]["cost_value"])
        load_adam(self.gpu_adam, state["adam"]["gpu"])
        self.rng_gpu.bit_generator.state = state["rng"]["gpu"]
        self.rng_update.bit_generator.state = state["rng"]["update"]
        self.rng_misc.bit_generator.state = state["rng"]["misc"]
        for env, s in zip(self.envs, state["rng"]["envs"]):
            env.rng.bit_generator.state = s
        for rng, s in zip(self.action_rngs, state["rng"]["actions"]):
            rng.bit_generator.state = s


def save_checkpoint(trainer, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(trainer.state_dict(), fh)


def load_checkpoint(trainer, path):
    with open(path, encoding="utf-8") as fh:
        trainer.load_state_dict(json.load(fh))


def gcpo_train(cfg, env_factory, record_callback=None, dataset=None):
    """Convenience wrapper: build a Trainer, run the schedule, return it."""
    trainer = Trainer(cfg, env_factory, record_callback=record_callback,
                      dataset=dataset)
    trainer.train()
    return trainer
