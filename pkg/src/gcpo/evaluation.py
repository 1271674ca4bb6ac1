"""Deterministic policy evaluation, trajectory dumps, and dump recounting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import constraints as C


@dataclass
class EvalSummary:
    """Aggregate evaluation statistics over n episodes."""

    episodes: int
    steps: int
    rms_tracking_error: float
    mean_reward: float
    mean_episode_len: float
    viol_rho: float
    viol_kappa: float
    viol_eta: float
    viol_per_kappa: dict
    torque_by_velocity: list = field(default_factory=list)

    def to_dict(self):
        return {
            "episodes": self.episodes,
            "steps": self.steps,
            "rms_tracking_error": self.rms_tracking_error,
            "mean_reward": self.mean_reward,
            "mean_episode_len": self.mean_episode_len,
            "viol_rho": self.viol_rho,
            "viol_kappa": self.viol_kappa,
            "viol_eta": self.viol_eta,
            "viol_per_kappa": self.viol_per_kappa,
            "torque_by_velocity": self.torque_by_velocity,
        }


def _snapshot_record(step, snap, action, reward, costs):
    return {
        "t": step,
        "base_pos": snap.base_pos.tolist(),
        "pitch": snap.pitch,
        "base_vel": snap.base_vel.tolist(),
        "pitch_rate": snap.pitch_rate,
        "joints": snap.joints.tolist(),
        "joint_vel": snap.joint_vel.tolist(),
        "joint_acc": snap.joint_acc.tolist(),
        "torques": snap.torques.tolist(),
        "foot_pos": snap.foot_pos.tolist(),
        "foot_vel": snap.foot_vel.tolist(),
        "prev_foot_vel": snap.prev_foot_vel.tolist(),
        "prev_joints": snap.prev_joints.tolist(),
        "contact_forces": snap.contact_forces.tolist(),
        "zmp": snap.zmp,
        "support_interval": list(snap.support_interval)
        if snap.support_interval is not None else None,
        "com": snap.com.tolist(),
        "foot_anchors_nominal": snap.foot_anchors_nominal.tolist(),
        "action": action.tolist(),
        "reward": reward,
        "costs": costs.tolist(),
        "command": None,  # filled by the caller
    }


def evaluate_policy(policy, env, n_episodes, command=None, max_steps=None,
                    dump_path=None, velocity_bin=0.1):
    """Deterministic-mean rollouts; reports tracking error, violation
    fractions, and mean total |torque| binned by measured forward velocity."""
    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    cap = max_steps or getattr(env, "episode_cap", 1000)
    total_steps = 0
    sq_err = 0.0
    rewards = []
    lens = []
    rho = kappa = eta = 0
    per_kappa = np.zeros(env.n_kappa)
    torque_bins = {}
    dump = open(dump_path, "w", encoding="utf-8") if dump_path else None
    try:
        for _ in range(n_episodes):
            obs = env.reset(command=command)
            ep_reward = 0.0
            for t in range(cap):
                action = policy.mean(obs)
                obs, reward, costs, info, terminated = env.step(action)
                snap = info.snapshot
                total_steps += 1
                ep_reward += reward
                err = snap.base_vel[0] - env.command
                sq_err += err * err
                rho += bool(info.rho_violated)
                kappa += bool(np.any(info.kappa_violated))
                eta += bool(info.eta_triggers)
                per_kappa += info.kappa_violated
                b = round(snap.base_vel[0] / velocity_bin) * velocity_bin
                tot, cnt = torque_bins.get(b, (0.0, 0))
                torque_bins[b] = (tot + float(np.sum(np.abs(snap.torques))), cnt + 1)
                if dump:
                    rec = _snapshot_record(t, snap, action, reward, costs)
                    rec["command"] = env.command
                    dump.write(json.dumps(rec) + "\n")
                if terminated:
                    break
            rewards.append(ep_reward)
            lens.append(t + 1)
    finally:
        if dump:
            dump.close()
    return EvalSummary(
        episodes=n_episodes,
        steps=total_steps,
        rms_tracking_error=float(np.sqrt(sq_err / total_steps)),
        mean_reward=float(np.mean(rewards)),
        mean_episode_len=float(np.mean(lens)),
        viol_rho=rho / total_steps,
        viol_kappa=kappa / total_steps,
        viol_eta=eta / total_steps,
        viol_per_kappa={k: float(v / total_steps)
                        for k, v in zip(env.kappa_ids, per_kappa)},
        torque_by_velocity=[(float(b), tot / cnt, cnt)
                            for b, (tot, cnt) in sorted(torque_bins.items())],
    )


class _DumpSnapshot:
    """Duck-typed snapshot reconstructed from one dump line."""

    def __init__(self, rec):
        self.base_pos = np.array(rec["base_pos"])
        self.pitch = rec["pitch"]
        self.base_vel = np.array(rec["base_vel"])
        self.pitch_rate = rec["pitch_rate"]
        self.joints = np.array(rec["joints"])
        self.joint_vel = np.array(rec["joint_vel"])
        self.joint_acc = np.array(rec["joint_acc"])
        self.torques = np.array(rec["torques"])
        self.foot_pos = np.array(rec["foot_pos"])
        self.foot_vel = np.array(rec["foot_vel"])
        self.prev_foot_vel = np.array(rec["prev_foot_vel"])
        self.prev_joints = np.array(rec["prev_joints"])
        self.contact_forces = np.array(rec["contact_forces"])
        self.zmp = rec["zmp"]
        si = rec["support_interval"]
        self.support_interval = tuple(si) if si is not None else None
        self.com = np.array(rec["com"])
        self.foot_anchors_nominal = np.array(rec["foot_anchors_nominal"])


def recount_dump(path, constraint_set):
    """Independent pass over a trajectory dump: re-evaluate every constraint
    tier from the stored kinematic state and recompute the summary fractions."""
    steps = 0
    sq_err = 0.0
    rho = kappa = eta = 0
    per_kappa = np.zeros(len(C.KAPPA_IDS))
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            snap = _DumpSnapshot(rec)
            rho_reports = C.eval_rho(snap, constraint_set)
            kappa_reports = C.eval_kappa(snap, constraint_set)
            terminated, _ = C.eval_eta(snap, constraint_set)
            rho += any(r.violated for r in rho_reports)
            kappa += any(r.violated for r in kappa_reports)
            eta += bool(terminated)
            per_kappa += np.array([r.violated for r in kappa_reports])
            err = snap.base_vel[0] - rec["command"]
            sq_err += err * err
            steps += 1
    if steps == 0:
        raise ValueError(f"dump {path} is empty")
    return {
        "steps": steps,
        "rms_tracking_error": float(np.sqrt(sq_err / steps)),
        "viol_rho": rho / steps,
        "viol_kappa": kappa / steps,
        "viol_eta": eta / steps,
        "viol_per_kappa": {k: float(v / steps)
                           for k, v in zip(C.KAPPA_IDS, per_kappa)},
    }
