"""Command-line front end: train, eval, ablate, replay, gen-dataset.

Exit codes: 0 success, 2 configuration error, 3 divergence halt, 4 I/O error.
All randomness flows from the config seed; identical config + seed yields
byte-identical metrics logs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import ConfigError, load_config
from .evaluation import evaluate_policy, recount_dump
from .expert import ExpertController, generate_dataset, load_dataset, save_dataset
from .metrics import MetricsWriter, read_metrics
from .policy import policy_from_text, policy_to_text
from .trainer import DivergenceHalt, Trainer, save_checkpoint

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4


def _common_args(p):
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--seed", type=int, default=None, help="override run.seed")
    p.add_argument("--out", default=None, help="override run.out_dir")
    p.add_argument("--override", action="append", default=[],
                   metavar="SECTION.KEY=VALUE", help="config override (repeatable)")
    p.add_argument("--workers", type=int, default=None, help="override run.workers")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="gcpo",
        description="Guided constrained policy optimization on a planar "
                    "quadruped velocity-tracking task.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the full training schedule")
    _common_args(p)

    p = sub.add_parser("eval", help="evaluate a trained policy")
    _common_args(p)
    p.add_argument("--policy", required=True, help="policy file to evaluate")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--command", type=float, default=None,
                   help="fixed velocity command (default: sampled per episode)")
    p.add_argument("--dump", default=None, help="write a trajectory dump here")
    p.add_argument("--rand-dt", action="store_true",
                   help="resample the control step time per step")
    p.add_argument("--rand-gravity", action="store_true",
                   help="resample gravity per episode")

    p = sub.add_parser("ablate", help="train several (mode, seed) pairs and "
                                       "emit comparison tables")
    _common_args(p)
    p.add_argument("--modes", required=True,
                   help="comma-separated subset of gcpo,cppo_only,unconstrained")
    p.add_argument("--seeds", required=True, help="comma-separated seeds")

    p = sub.add_parser("replay", help="recompute statistics from a trajectory dump")
    _common_args(p)
    p.add_argument("--dump", required=True)

    p = sub.add_parser("gen-dataset", help="generate an expert reference dataset")
    _common_args(p)
    p.add_argument("--file", required=True, help="output dataset path")
    return ap


def _load(args):
    return load_config(args.config, overrides=args.override, seed=args.seed,
                       out_dir=args.out, workers=args.workers)


def _make_dataset(rc):
    env = rc.env_factory()(np.random.SeedSequence(rc.trainer.seed), False)
    expert = ExpertController(rc.env_params)
    return generate_dataset(env, expert, rc.trainer.dataset_episodes,
                            rc.trainer.dataset_steps, seed=rc.trainer.seed)


def run_training(rc, out_dir):
    """Train one configuration into out_dir; returns the Trainer."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config_resolved.ini"), "w",
              encoding="utf-8") as fh:
        fh.write(rc.to_text())
    dataset = _make_dataset(rc) if rc.trainer.mode == "gcpo" else None
    factory = rc.env_factory()
    writer = MetricsWriter(os.path.join(out_dir, "metrics.csv"),
                           rc.constraint_set.kappa_ids)
    trainer = Trainer(rc.trainer, factory, record_callback=writer,
                      dataset=dataset)
    try:
        trainer.train()
    except DivergenceHalt:
        save_checkpoint(trainer, os.path.join(out_dir, "checkpoint.json"))
        writer.close()
        raise
    writer.close()
    save_checkpoint(trainer, os.path.join(out_dir, "checkpoint.json"))
    with open(os.path.join(out_dir, "policy.txt"), "w", encoding="utf-8") as fh:
        fh.write(policy_to_text(trainer.policy))
    return trainer


def cmd_train(args):
    rc = _load(args)
    run_training(rc, rc.out_dir)
    print(f"training complete; artifacts in {rc.out_dir}")
    return EXIT_OK


def _eval_env(rc, rand_dt=False, rand_gravity=False):
    """Evaluation environment: deterministic unless a scheme is toggled on."""
    params = rc.env_params
    any_rand = rand_dt or rand_gravity
    from dataclasses import replace

    params = replace(params, rand_noise=False, rand_torque=False,
                     rand_link=False, rand_damping=False,
                     rand_dt=rand_dt, rand_gravity=rand_gravity)
    from .env import PlanarQuadEnv

    return PlanarQuadEnv(
        params=params, constraint_set=rc.constraint_set,
        reward_weights=rc.reward_weights,
        seed=np.random.SeedSequence(rc.trainer.seed),
        command_range=(rc.trainer.command_min, rc.trainer.command_max),
        randomization=any_rand, recovery_bonus=rc.trainer.recovery_bonus)


def cmd_eval(args):
    rc = _load(args)
    if args.episodes <= 0:
        raise ConfigError("--episodes must be positive")
    try:
        with open(args.policy, encoding="utf-8") as fh:
            policy = policy_from_text(fh.read())
    except OSError as exc:
        print(f"cannot read policy: {exc}", file=sys.stderr)
        return EXIT_IO
    env = _eval_env(rc, rand_dt=args.rand_dt, rand_gravity=args.rand_gravity)
    if policy.obs_dim != env.obs_dim or policy.act_dim != env.act_dim:
        raise ConfigError(
            f"policy dims ({policy.obs_dim}, {policy.act_dim}) do not match the "
            f"environment ({env.obs_dim}, {env.act_dim})")
    env.set_difficulty(1.0)
    summary = evaluate_policy(policy, env, args.episodes, command=args.command,
                              dump_path=args.dump)
    print(json.dumps(summary.to_dict(), indent=2))
    return EXIT_OK


def expert_mean_reward(rc, episodes=5):
    """Mean episodic reward of the scripted expert at full difficulty."""
    env = _eval_env(rc)
    env.set_difficulty(1.0)
    expert = ExpertController(rc.env_params)
    rewards = []
    for _ in range(episodes):
        obs = env.reset()
        expert.reset(initial_joints=env.joints)
        total = 0.0
        for _ in range(rc.env_params.episode_cap):
            action = expert(None, env.command)
            obs, reward, _, _, terminated = env.step(action)
            total += reward
            if terminated:
                break
        rewards.append(total)
    return float(np.mean(rewards))


def steps_to_threshold(metrics_rows, threshold):
    """First env_steps whose batch mean reward reaches the threshold; censored
    at the run's final env-step count when never reached."""
    last = 0
    for row in metrics_rows:
        last = max(last, int(row["env_steps"]))
        mr = row["mean_reward"]
        if row["phase"] != "gpu" and isinstance(mr, (int, float)) \
                and mr == mr and mr >= threshold:
            return int(row["env_steps"]), True
    return last, False


def cmd_ablate(args):
    rc = _load(args)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if len(modes) < 2:
        raise ConfigError("ablate needs at least 2 modes")
    out_dir = rc.out_dir
    os.makedirs(out_dir, exist_ok=True)
    threshold = 0.8 * expert_mean_reward(rc)
    summary_path = os.path.join(out_dir, "summary.csv")
    curves_path = os.path.join(out_dir, "curves.csv")
    kappa_ids = rc.constraint_set.kappa_ids
    with open(summary_path, "w", encoding="utf-8") as sfh, \
            open(curves_path, "w", encoding="utf-8") as cfh:
        sfh.write("mode,seed,steps_to_threshold,reached,final_mean_reward,"
                  "viol_rho,viol_kappa,viol_eta,"
                  + ",".join(f"viol_{k}" for k in kappa_ids) + "\n")
        cfh.write("mode,seed,iteration,env_steps,phase,mean_reward\n")
        for mode in modes:
            for seed in seeds:
                sub = os.path.join(out_dir, f"{mode}_seed{seed}")
                rc_run = load_config(args.config, overrides=list(args.override)
                                     + [f"run.mode={mode}", f"run.seed={seed}"],
                                     out_dir=sub, workers=args.workers)
                trainer = run_training(rc_run, sub)
                rows = read_metrics(os.path.join(sub, "metrics.csv"))
                stt, reached = steps_to_threshold(rows, threshold)
                with open(os.path.join(sub, "policy.txt"), encoding="utf-8") as fh:
                    policy = policy_from_text(fh.read())
                env = _eval_env(rc_run)
                env.set_difficulty(1.0)
                ev = evaluate_policy(policy, env, 10)
                sfh.write(
                    f"{mode},{seed},{stt},{int(reached)},"
                    f"{ev.mean_reward:.10g},{ev.viol_rho:.10g},"
                    f"{ev.viol_kappa:.10g},{ev.viol_eta:.10g},"
                    + ",".join(format(ev.viol_per_kappa[k], ".10g")
                               for k in kappa_ids) + "\n")
                for row in rows:
                    if row["phase"] == "gpu":
                        continue
                    cfh.write(f"{mode},{seed},{row['iteration']},"
                              f"{row['env_steps']},{row['phase']},"
                              f"{row['mean_reward']:.10g}\n")
    print(f"ablation tables written to {summary_path} and {curves_path}")
    print(f"reward threshold (0.8 x expert): {threshold:.6g}")
    return EXIT_OK


def cmd_replay(args):
    rc = _load(args)
    try:
        stats = recount_dump(args.dump, rc.constraint_set)
    except OSError as exc:
        print(f"cannot read dump: {exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps(stats, indent=2))
    return EXIT_OK


def cmd_gen_dataset(args):
    rc = _load(args)
    dataset = _make_dataset(rc)
    try:
        save_dataset(dataset, args.file)
    except OSError as exc:
        print(f"cannot write dataset: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {dataset.total_pairs} pairs to {args.file}")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    handlers = {
        "train": cmd_train,
        "eval": cmd_eval,
        "ablate": cmd_ablate,
        "replay": cmd_replay,
        "gen-dataset": cmd_gen_dataset,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceHalt:
        print("training halted: diverged twice consecutively; "
              "last-good checkpoint saved", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
