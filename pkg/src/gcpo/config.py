"""Run configuration: a sectioned plain-text key-value format.

Syntax: ``[section]`` headers, ``key = value`` lines, ``#`` comments, blank
lines ignored. Unknown sections or keys are rejected with the offending line
number; missing required keys are named. The fully-resolved configuration can
be serialized back out and reloaded byte-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import KAPPA_IDS, RewardWeights, default_constraint_set
from .cppo import ObjectiveConfig
from .env import EnvParams
from .trainer import MODES, TrainerConfig


class ConfigError(ValueError):
    """Invalid run configuration; message carries the line number when known."""


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (type constructor, default)
SCHEMA = {
    "run": {
        "seed": (int, None),  # required
        "out_dir": (str, "runs/out"),
        "workers": (int, 4),
        "mode": (str, "gcpo"),
    },
    "trainer": {
        "lambda_decay": (float, -0.35),
        "supervised_budget": (int, 20000),
        "acppo_budget": (int, 200000),
        "hcppo_budget": (int, 100000),
        "rounds_acppo": (int, 10),
        "rounds_hcppo": (int, 5),
        "n_steps": (int, 1000),
        "gpu_passes": (int, 10),
        "gamma": (float, 0.998),
        "gae_lambda": (float, 0.95),
        "entropy_reduction": (float, 0.85),
        "sigma_init": (float, 0.2),
        "sigma_min_train": (float, 1e-3),
        "sigma_min_eval": (float, 1e-6),
        "policy_lr": (float, 3e-4),
        "value_lr": (float, 1e-3),
        "gpu_lr": (float, 1e-3),
        "dataset_episodes": (int, 10),
        "dataset_steps": (int, 1000),
        "terminal_penalty": (float, -1.0),
        "recovery_bonus": (float, 0.05),
        "command_min": (float, -0.5),
        "command_max": (float, 0.5),
        "randomization": (_bool, True),
    },
    "objective": {
        "clip_epsilon": (float, 0.2),
        "value_coef": (float, 0.5),
        "entropy_coef": (float, 1e-3),
        "kl_step": (float, 0.02),
        "epochs": (int, 4),
        "minibatch": (int, 256),
    },
    "env": {
        "link_len1": (float, 0.25),
        "link_len2": (float, 0.25),
        "base_height": (float, 0.42),
        "gravity": (float, 9.81),
        "joint_inertia": (float, 0.04),
        "kp": (float, 50.0),
        "kd": (float, 2.83),
        "torque_limit": (float, 35.0),
        "dt": (float, 0.0025),
        "base_mass": (float, 10.0),
        "foot_half_len": (float, 0.07),
        "episode_cap": (int, 1000),
        "noise_scale_max": (float, 1.0),
        "rand_noise": (_bool, True),
        "rand_gravity": (_bool, True),
        "rand_torque": (_bool, True),
        "rand_link": (_bool, True),
        "rand_damping": (_bool, True),
        "rand_dt": (_bool, True),
    },
    "reward": {
        "lin_vel": (float, 1.0),
        "ang_vel": (float, 0.4),
        "torque": (float, 2e-5),
        "foot_acc": (float, 0.02),
        "foot_slip": (float, 0.05),
        "smoothness": (float, 0.2),
        "orientation": (float, 0.5),
        "kernel_scale": (float, 1.0),
        "rho_joint_speed": (float, 0.02),
        "rho_joint_accel": (float, 1e-5),
        "rho_foot_clearance": (float, 1.0),
        "rho_foot_region": (float, 5.0),
    },
    "constraints": {
        "rho_joint_speed": (float, 7.5),
        "kappa_joint_speed": (float, 15.0),
        "eta_joint_speed": (float, 20.0),
        "rho_joint_accel": (float, 150.0),
        "kappa_joint_accel": (float, 300.0),
        "eta_joint_accel": (float, 450.0),
        "rho_region": (float, 0.10),
        "kappa_region": (float, 0.15),
        "eta_region": (float, 0.20),
        "clearance_height": (float, 0.06),
        "eta_zmp_distance": (float, 0.45),
        "zeta_joint_speed": (float, 1.0),
        "zeta_joint_accel": (float, 1e-3),
        "zeta_foot_region": (float, 10.0),
        "zeta_zmp": (float, 1.0),
        "zeta_foot_contacts": (float, 1.0),
        "d_joint_speed": (float, 0.5),
        "d_joint_accel": (float, 50.0),
        "d_foot_region": (float, 0.05),
        "d_zmp": (float, 1.0),
        "d_foot_contacts": (float, 1.0),
    },
}

REQUIRED = (("run", "seed"),)


def parse_config_text(text, source="<config>"):
    """Parse to {(section, key): value}; rejects unknown keys with line numbers."""
    values = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"{source}:{lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if section is None:
            raise ConfigError(f"{source}:{lineno}: key outside any [section]")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in SCHEMA[section]:
            raise ConfigError(f"{source}:{lineno}: unknown key '{section}.{key}'")
        ctor = SCHEMA[section][key][0]
        try:
            values[(section, key)] = ctor(val)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for "
                              f"'{section}.{key}': {exc}") from None
    return values


def apply_override(values, spec):
    """Apply one ``section.key=value`` override string."""
    if "=" not in spec:
        raise ConfigError(f"override {spec!r} must look like section.key=value")
    path, _, val = spec.partition("=")
    if "." not in path:
        raise ConfigError(f"override {spec!r} must name section.key")
    section, _, key = path.strip().partition(".")
    key = key.strip()
    if section not in SCHEMA or key not in SCHEMA[section]:
        raise ConfigError(f"override names unknown key '{section}.{key}'")
    ctor = SCHEMA[section][key][0]
    try:
        values[(section, key)] = ctor(val.strip())
    except ValueError as exc:
        raise ConfigError(f"bad override value for '{section}.{key}': {exc}") from None
    return values


@dataclass
class RunConfig:
    """Fully-resolved run configuration and the objects built from it."""

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        for section, key in REQUIRED:
            if (section, key) not in self.values:
                raise ConfigError(f"missing required key '{section}.{key}'")
        resolved = {}
        for section, keys in SCHEMA.items():
            for key, (_, default) in keys.items():
                resolved[(section, key)] = self.values.get((section, key), default)
        self.values = resolved
        self._build()

    def get(self, section, key):
        return self.values[(section, key)]

    def _build(self):
        v = self.values
        g = lambda s, k: v[(s, k)]
        if g("run", "mode") not in MODES:
            raise ConfigError(f"run.mode must be one of {MODES}")
        self.constraint_set = default_constraint_set(
            rho_joint_speed=g("constraints", "rho_joint_speed"),
            kappa_joint_speed=g("constraints", "kappa_joint_speed"),
            eta_joint_speed=g("constraints", "eta_joint_speed"),
            rho_joint_accel=g("constraints", "rho_joint_accel"),
            kappa_joint_accel=g("constraints", "kappa_joint_accel"),
            eta_joint_accel=g("constraints", "eta_joint_accel"),
            rho_region=g("constraints", "rho_region"),
            kappa_region=g("constraints", "kappa_region"),
            eta_region=g("constraints", "eta_region"),
            clearance_height=g("constraints", "clearance_height"),
            eta_zmp_distance=g("constraints", "eta_zmp_distance"),
            zeta={k: g("constraints", f"zeta_{k}") for k in KAPPA_IDS},
            d_bounds={k: g("constraints", f"d_{k}") for k in KAPPA_IDS},
        )
        objective = ObjectiveConfig(
            clip_epsilon=g("objective", "clip_epsilon"),
            value_coef=g("objective", "value_coef"),
            entropy_coef=g("objective", "entropy_coef"),
            kl_step=g("objective", "kl_step"),
            epochs_per_update=g("objective", "epochs"),
            minibatch_size=g("objective", "minibatch"),
            zeta=self.constraint_set.zeta(),
            d_bounds=self.constraint_set.d_bounds(),
            hard_mask=self.constraint_set.hard_mask(),
        )
        self.trainer = TrainerConfig(
            seed=g("run", "seed"), workers=g("run", "workers"),
            mode=g("run", "mode"),
            lambda_decay=g("trainer", "lambda_decay"),
            supervised_budget=g("trainer", "supervised_budget"),
            acppo_budget=g("trainer", "acppo_budget"),
            hcppo_budget=g("trainer", "hcppo_budget"),
            rounds_acppo=g("trainer", "rounds_acppo"),
            rounds_hcppo=g("trainer", "rounds_hcppo"),
            n_steps=g("trainer", "n_steps"),
            gpu_passes=g("trainer", "gpu_passes"),
            gamma=g("trainer", "gamma"),
            gae_lambda=g("trainer", "gae_lambda"),
            entropy_reduction=g("trainer", "entropy_reduction"),
            sigma_init=g("trainer", "sigma_init"),
            sigma_min_train=g("trainer", "sigma_min_train"),
            sigma_min_eval=g("trainer", "sigma_min_eval"),
            policy_lr=g("trainer", "policy_lr"),
            value_lr=g("trainer", "value_lr"),
            gpu_lr=g("trainer", "gpu_lr"),
            dataset_episodes=g("trainer", "dataset_episodes"),
            dataset_steps=g("trainer", "dataset_steps"),
            terminal_penalty=g("trainer", "terminal_penalty"),
            recovery_bonus=g("trainer", "recovery_bonus"),
            command_min=g("trainer", "command_min"),
            command_max=g("trainer", "command_max"),
            randomization=g("trainer", "randomization"),
            objective=objective,
        )
        self.env_params = EnvParams(
            link_len1=g("env", "link_len1"), link_len2=g("env", "link_len2"),
            base_height=g("env", "base_height"), gravity=g("env", "gravity"),
            joint_inertia=g("env", "joint_inertia"), kp=g("env", "kp"),
            kd=g("env", "kd"), torque_limit=g("env", "torque_limit"),
            dt=g("env", "dt"), base_mass=g("env", "base_mass"),
            foot_half_len=g("env", "foot_half_len"),
            episode_cap=g("env", "episode_cap"),
            noise_scale_max=g("env", "noise_scale_max"),
            rand_noise=g("env", "rand_noise"),
            rand_gravity=g("env", "rand_gravity"),
            rand_torque=g("env", "rand_torque"),
            rand_link=g("env", "rand_link"),
            rand_damping=g("env", "rand_damping"),
            rand_dt=g("env", "rand_dt"),
        )
        self.reward_weights = RewardWeights(
            lin_vel=g("reward", "lin_vel"), ang_vel=g("reward", "ang_vel"),
            torque=g("reward", "torque"), foot_acc=g("reward", "foot_acc"),
            foot_slip=g("reward", "foot_slip"),
            smoothness=g("reward", "smoothness"),
            orientation=g("reward", "orientation"),
            kernel_scale=g("reward", "kernel_scale"),
            rho_joint_speed=g("reward", "rho_joint_speed"),
            rho_joint_accel=g("reward", "rho_joint_accel"),
            rho_foot_clearance=g("reward", "rho_foot_clearance"),
            rho_foot_region=g("reward", "rho_foot_region"),
        )
        self.out_dir = g("run", "out_dir")

    def env_factory(self):
        """Factory matching the trainer protocol: (seed, randomization) -> env."""
        from .env import PlanarQuadEnv

        def factory(seed, randomization):
            return PlanarQuadEnv(
                params=self.env_params,
                constraint_set=self.constraint_set,
                reward_weights=self.reward_weights,
                seed=seed,
                command_range=(self.trainer.command_min, self.trainer.command_max),
                randomization=randomization,
                recovery_bonus=self.trainer.recovery_bonus,
            )
        return factory

    def to_text(self):
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key in keys:
                val = self.values[(section, key)]
                if isinstance(val, bool):
                    val = "true" if val else "false"
                elif isinstance(val, float):
                    val = repr(val)
                lines.append(f"{key} = {val}")
            lines.append("")
        return "\n".join(lines)


def load_config(path, overrides=(), seed=None, out_dir=None, workers=None):
    """Read, override and resolve a run configuration file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    values = parse_config_text(text, source=str(path))
    for spec in overrides:
        apply_override(values, spec)
    if seed is not None:
        values[("run", "seed")] = int(seed)
    if out_dir is not None:
        values[("run", "out_dir")] = str(out_dir)
    if workers is not None:
        values[("run", "workers")] = int(workers)
    return RunConfig(values)
