"""Scripted planar walking expert, reference dataset generation, and the
supervised guided policy update.

The expert is a phase-driven alternating-gait controller: stance feet sweep
backward at the commanded speed (no-slip), swing feet follow a smooth
half-cosine profile with a small apex, and analytic inverse kinematics turns
foot targets into joint-position actions. It stands in for a model-based
whole-body controller, so tests measure the relative benefit of supervision,
never expert fidelity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .env import N_LEGS, leg_ik, leg_vector
from .nets import adam_step, net_backward, net_forward_cached
from .policy import reduce_entropy


@dataclass
class GaitParams:
    """Expert gait shape; calibrated to respect the default constraint tiers."""

    swing_time: float = 0.15      # nominal swing duration (s)
    dwell_time: float = 0.05      # minimum double-support dwell (s)
    swing_apex: float = 0.05      # swing height (m)
    dive_depth: float = 0.05      # landing targets aim this far below ground (m)
    stance_press: float = 0.004   # stance targets sit this far below ground (m)
    min_swing_contact: float = 0.3  # ignore contact readings before this phase
    stand_threshold: float = 0.02  # |command| below this stands still (m/s)
    ramp_time: float = 0.8        # speed/amplitude ramp-in after reset (s)


STANCE, SWING = 0, 1


class ExpertController:
    """Deterministic contact-gated walking controller.

    Feet are planned as world-frame ground anchors against an internal
    reference trajectory x_ref(t) = integral of the (ramped) command, so
    tracking lag cannot accumulate. Steps are event driven: a leg swings only
    out of double support after a minimum dwell, aims slightly below the
    ground so touchdown registers on schedule despite actuator lag, and
    returns to stance the moment contact is sensed. At least one foot is
    always planted.
    """

    def __init__(self, env_params, gait=None):
        self.p = env_params
        self.gait = gait or GaitParams()
        self.reset()

    def reset(self, initial_joints=None):
        """New episode; pass the robot's joints so the plan starts from the
        actual foot positions."""
        self.elapsed = 0.0
        self.clamp_flags = 0
        self.x_ref = 0.0
        self.mode = [STANCE] * N_LEGS
        self.swing_clock = [0.0] * N_LEGS
        self.swing_from = [0.0] * N_LEGS
        self.swing_to = [0.0] * N_LEGS
        self.dwell = 0.0
        if initial_joints is None:
            self.anchors = [self.p.hip_offsets[i] for i in range(N_LEGS)]
        else:
            self.anchors = [
                leg_vector(initial_joints[2 * i], initial_joints[2 * i + 1],
                           self.p.link_len1, self.p.link_len2,
                           self.p.hip_offsets[i])[0]
                for i in range(N_LEGS)
            ]

    def _ramp(self):
        if self.gait.ramp_time <= 0.0:
            return 1.0
        return min(1.0, self.elapsed / self.gait.ramp_time)

    def _advance_state(self, contacts, command):
        g = self.gait
        dt = self.p.dt
        scale = self._ramp()
        v_eff = command * scale
        swinging = [i for i in range(N_LEGS) if self.mode[i] == SWING]
        for i in swinging:
            self.swing_clock[i] += dt / g.swing_time
            s = self.swing_clock[i]
            if s >= g.min_swing_contact and contacts[i]:
                self.mode[i] = STANCE
                self.dwell = 0.0
        if not any(self.mode[i] == SWING for i in range(N_LEGS)):
            self.dwell += dt
            if self.dwell >= g.dwell_time and abs(command) >= g.stand_threshold:
                # lift the trailing leg
                if command > 0:
                    leg = int(np.argmin(self.anchors))
                else:
                    leg = int(np.argmax(self.anchors))
                self.mode[leg] = SWING
                self.swing_clock[leg] = 0.0
                self.swing_from[leg] = self.anchors[leg]
                stance_span = g.swing_time + 2.0 * g.dwell_time
                self.swing_to[leg] = (self.x_ref + v_eff * g.swing_time
                                      + v_eff * stance_span / 2.0)

    def _land_anchor(self, leg, snapshot):
        if snapshot is not None:
            self.anchors[leg] = float(snapshot.foot_pos[leg][0])
        else:
            self.anchors[leg] = self.swing_to[leg]

    def foot_targets(self, command):
        """Base-frame desired foot (x, z) per leg for the current state."""
        g = self.gait
        h0 = self.p.base_height
        scale = self._ramp()
        z_st = -h0 - scale * g.stance_press
        apex = scale * g.swing_apex
        dive = max(scale, 0.3) * g.dive_depth
        targets = []
        for leg in range(N_LEGS):
            if self.mode[leg] == SWING:
                s = min(self.swing_clock[leg], 1.0)
                x_w = self.swing_from[leg] + (self.swing_to[leg]
                                              - self.swing_from[leg]) \
                    * 0.5 * (1.0 - np.cos(np.pi * s))
                # smooth bump that dives below ground level at the end, so
                # the touchdown happens on schedule despite tracking lag
                z = -h0 + apex * np.sin(np.pi * s) - dive * s
            else:
                x_w = self.anchors[leg]
                z = z_st
            targets.append((float(x_w - self.x_ref), float(z)))
        return targets

    def __call__(self, snapshot, command):
        """Desired joint positions; advances the internal clocks and state."""
        g = self.gait
        p = self.p
        if snapshot is None:
            contacts = [True] * N_LEGS
        else:
            contacts = [bool(f > 0.0) for f in snapshot.contact_forces]
        prev_mode = list(self.mode)
        self._advance_state(contacts, command)
        for leg in range(N_LEGS):
            if prev_mode[leg] == SWING and self.mode[leg] == STANCE:
                self._land_anchor(leg, snapshot)
        targets = self.foot_targets(command)
        self.elapsed += p.dt
        if abs(command) >= g.stand_threshold:
            self.x_ref += command * self._ramp() * p.dt
        action = np.empty(2 * N_LEGS)
        for leg, (x, z) in enumerate(targets):
            q_hip, q_knee, clamped = leg_ik(x - p.hip_offsets[leg], z,
                                            p.link_len1, p.link_len2)
            if clamped:
                self.clamp_flags += 1
            action[2 * leg] = q_hip
            action[2 * leg + 1] = q_knee
        return action


class EtaDuringExpertRollout(RuntimeError):
    """Expert rollouts repeatedly hit no-go terminations."""


@dataclass
class ExpertDataset:
    """(observation, expert action) pairs consumed without replacement."""

    obs: np.ndarray
    actions: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._remaining = np.arange(len(self.obs))

    def __len__(self):
        return len(self._remaining)

    @property
    def total_pairs(self):
        return len(self.obs)

    def draw(self, k, rng):
        """Sample k pairs uniformly without replacement and remove them."""
        k = min(k, len(self._remaining))
        pick = rng.choice(len(self._remaining), size=k, replace=False)
        idx = self._remaining[pick]
        self._remaining = np.delete(self._remaining, pick)
        return self.obs[idx], self.actions[idx]


def generate_dataset(env, expert, episodes, steps, seed, commands=None):
    """Roll the expert in the environment (randomization off) and record pairs.

    Episodes cut short by a no-go trigger are discarded and regenerated (the
    count lands in the metadata); more than 5x the requested episodes failing
    raises, since the expert is then incompatible with the constraint config.
    """
    if env.randomization:
        raise ValueError("expert dataset generation requires randomization off")
    rng = np.random.default_rng(seed)
    obs_rows, act_rows = [], []
    discarded = 0
    done_eps = 0
    attempts = 0
    while done_eps < episodes:
        attempts += 1
        if attempts > 5 * episodes:
            raise EtaDuringExpertRollout(
                f"{discarded} expert episodes eta-terminated; check gait/limits")
        if commands is not None:
            command = float(rng.choice(commands))
        else:
            command = rng.uniform(*env.command_range)
        obs = env.reset(command=command)
        expert.reset(initial_joints=env.joints)
        ep_obs, ep_act = [], []
        failed = False
        for _ in range(steps):
            action = expert(None, env.command)
            ep_obs.append(obs)
            ep_act.append(action)
            obs, _, _, info, terminated = env.step(action)
            if terminated:
                failed = bool(info.eta_triggers)
                break
        if failed:
            discarded += 1
            continue
        obs_rows.extend(ep_obs)
        act_rows.extend(ep_act)
        done_eps += 1
    meta = {
        "episodes": episodes,
        "steps": steps,
        "seed": seed,
        "command_range": list(env.command_range),
        "discarded_episodes": discarded,
    }
    return ExpertDataset(np.array(obs_rows), np.array(act_rows), meta)


DATASET_MAGIC = "gcpo-dataset-v1"


def save_dataset(dataset, path):
    with open(path, "w", encoding="utf-8") as fh:
        header = {"format": DATASET_MAGIC,
                  "obs_dim": int(dataset.obs.shape[1]),
                  "act_dim": int(dataset.actions.shape[1]),
                  "pairs": int(dataset.total_pairs),
                  "meta": dataset.meta}
        fh.write(json.dumps(header) + "\n")
        for o, a in zip(dataset.obs, dataset.actions):
            fh.write(json.dumps({"o": o.tolist(), "a": a.tolist()}) + "\n")


def load_dataset(path):
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != DATASET_MAGIC:
            raise ValueError(f"bad dataset header (expected {DATASET_MAGIC!r})")
        obs_rows, act_rows = [], []
        for line in fh:
            rec = json.loads(line)
            obs_rows.append(rec["o"])
            act_rows.append(rec["a"])
    ds = ExpertDataset(np.array(obs_rows), np.array(act_rows), header.get("meta", {}))
    if ds.obs.shape[1] != header["obs_dim"] or ds.actions.shape[1] != header["act_dim"]:
        raise ValueError("dataset body inconsistent with header dimensions")
    return ds


@dataclass
class GpuResult:
    pairs_used: int
    mse_before: float
    mse_after: float
    skipped: bool = False


def guided_policy_update(policy, dataset, it_max, n_batch, rng, adam_state,
                         minibatch_size=256, entropy_factor=0.85):
    """One supervised session: sample it_max/n_batch pairs, run n_batch
    minibatched passes of Adam on the mean-squared action error, remove the
    pairs from the dataset, then reduce the policy's action entropy.

    Value-function parameters are never touched here. An empty dataset (or a
    budget below one pair) is a no-op flagged in the result.
    """
    l_batch = int(it_max) // int(n_batch)
    if l_batch < 1 or len(dataset) == 0:
        return GpuResult(0, float("nan"), float("nan"), skipped=True)
    obs, target = dataset.draw(l_batch, rng)
    n = len(obs)

    def mse():
        mu = policy.mean(obs)
        d = mu - target
        return float(np.mean(np.sum(d * d, axis=1)))

    before = mse()
    for _ in range(n_batch):
        perm = rng.permutation(n)
        for lo in range(0, n, minibatch_size):
            idx = perm[lo:lo + minibatch_size]
            mu, cache = net_forward_cached(policy.mean_net, obs[idx])
            g_out = (2.0 / len(idx)) * (mu - target[idx])
            grads, _ = net_backward(policy.mean_net, cache, g_out)
            new_params = adam_step(policy.mean_net.params(), grads, adam_state)
            policy.mean_net.set_params(new_params)
    after = mse()
    reduce_entropy(policy, entropy_factor)
    return GpuResult(n, before, after)
