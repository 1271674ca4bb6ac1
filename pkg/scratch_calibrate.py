"""Scratch calibration: expert rollout statistics in the default env."""
import time

import numpy as np

from gcpo.constraints import default_constraint_set, RewardWeights
from gcpo.env import EnvParams, PlanarQuadEnv
from gcpo.expert import ExpertController

params = EnvParams()
cset = default_constraint_set()
weights = RewardWeights(kernel_scale=4.0)
env = PlanarQuadEnv(params, cset, weights, seed=0, command_range=(0.5, 0.5),
                    randomization=False)
env.set_difficulty(1.0)
expert = ExpertController(params)

obs = env.reset(command=0.5)
expert.reset(initial_joints=env.joints)
n = 4000
viol = np.zeros(env.n_kappa)
viol_any = 0
rho_any = 0
rewards = []
vels = []
jvels = []
jaccs = []
pitches = []
heights = []
n_contacts = []
lin_terms = []
t0 = time.time()
terminated_at = None
for t in range(n):
    action = expert(None, env.command)
    obs, r, costs, info, term = env.step(action)
    snap = info.snapshot
    viol += info.kappa_violated
    viol_any += info.kappa_violated.any()
    rho_any += info.rho_violated
    rewards.append(r)
    vels.append(snap.base_vel[0])
    jvels.append(np.max(np.abs(snap.joint_vel)))
    jaccs.append(np.max(np.abs(snap.joint_acc)))
    pitches.append(snap.pitch)
    heights.append(snap.base_pos[1])
    n_contacts.append(int((snap.contact_forces > 0).sum()))
    from gcpo.constraints import logistic_kernel
    lin_terms.append(logistic_kernel(weights.kernel_scale * (snap.base_vel[0] - 0.5)))
    if term:
        terminated_at = t
        print("TERMINATED at", t, info.eta_triggers)
        break
el = time.time() - t0
steps = t + 1
print(f"steps: {steps}  wall: {el:.3f}s  per-step: {el/steps*1e6:.1f}us")
print(f"kappa violation fractions: {dict(zip(env.kappa_ids, viol/steps))}")
print(f"any-kappa fraction: {viol_any/steps:.4f}  rho fraction: {rho_any/steps:.4f}")
vels = np.array(vels)
print(f"vel mean/std after settle: {vels[400:].mean():.4f} / {vels[400:].std():.4f}")
print(f"rms err: {np.sqrt(np.mean((vels[400:] - 0.5)**2)):.4f}")
print(f"max |jvel|: {np.max(jvels):.2f}  p99: {np.percentile(jvels, 99):.2f}")
print(f"max |jacc|: {np.max(jaccs):.1f}  p99: {np.percentile(jaccs, 99):.1f}")
print(f"pitch max: {np.max(np.abs(pitches)):.4f}  height range: {np.min(heights):.3f}..{np.max(heights):.3f}")
print(f"contact counts: {np.bincount(n_contacts, minlength=3)}")
print(f"mean reward/step: {np.mean(rewards):.4f}  mean lin term: {np.mean(lin_terms[400:]):.4f} (max 0.25)")
