"""Three-tier constraint system: soft (rho) costs folded into the reward,
hard (kappa) costs fed to the constrained optimizer, no-go (eta) termination,
recovery bonuses, and episode reformatting after no-go triggers.

Planar adaptation notes: the eligible-foot regions are squares centered on the
nominal (base-relative) anchors, the support region is an interval on the
ground line, and the foot-contacts term fires at zero contacts (flight) for
both kappa and eta, the tightest nesting the two-leg model admits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

TIERS = ("rho", "kappa", "eta")

# Canonical constraint ordering; cost vectors and metrics columns follow it.
KAPPA_IDS = ("joint_speed", "joint_accel", "foot_region", "zmp", "foot_contacts")
RHO_IDS = ("joint_speed", "joint_accel", "foot_clearance", "foot_region")
ETA_IDS = ("joint_speed", "joint_accel", "foot_region", "zmp", "foot_contacts")


@dataclass(frozen=True)
class ConstraintSpec:
    """One constraint: tier, limit, cost weight, and (kappa only) its d bound.

    ``in_hard_set`` marks kappa constraints enforced by the hard update; the
    ZMP term is excluded there because externally caused ZMP violations must
    remain recoverable.
    """

    id: str
    tier: str
    limit: float
    weight: float = 1.0
    d_bound: float | None = None
    in_hard_set: bool = True

    def __post_init__(self):
        if self.tier not in TIERS:
            raise ValueError(f"unknown tier {self.tier!r}")
        if (self.d_bound is not None) != (self.tier == "kappa"):
            raise ValueError(f"{self.id}: d_bound present iff tier is kappa")


@dataclass
class ConstraintReport:
    """Evaluated cost for one constraint at one step."""

    id: str
    tier: str
    cost: float
    violated: bool


@dataclass
class ConstraintSet:
    """Validated rho/kappa/eta specs in canonical order."""

    rho: list
    kappa: list
    eta: list

    def __post_init__(self):
        by = lambda specs: {s.id: s for s in specs}
        self._rho, self._kappa, self._eta = by(self.rho), by(self.kappa), by(self.eta)
        if tuple(self._kappa) != KAPPA_IDS or tuple(self._rho) != RHO_IDS \
                or tuple(self._eta) != ETA_IDS:
            raise ValueError("constraint ids/order must follow the canonical layout")
        # Shared-quantity limits must nest: rho <= kappa <= eta.
        for cid in ("joint_speed", "joint_accel", "foot_region"):
            lims = [self._rho[cid].limit, self._kappa[cid].limit, self._eta[cid].limit]
            if not (lims[0] <= lims[1] <= lims[2]):
                raise ValueError(f"{cid}: tier limits must nest rho<=kappa<=eta, got {lims}")
        if not self._kappa["zmp"].in_hard_set is False:
            raise ValueError("the ZMP kappa constraint must be excluded from the hard set")

    @property
    def kappa_ids(self):
        return list(KAPPA_IDS)

    def kappa_spec(self, cid):
        return self._kappa[cid]

    def d_bounds(self):
        return np.array([self._kappa[c].d_bound for c in KAPPA_IDS])

    def zeta(self):
        return np.array([self._kappa[c].weight for c in KAPPA_IDS])

    def hard_mask(self):
        return np.array([self._kappa[c].in_hard_set for c in KAPPA_IDS])


def default_constraint_set(
    rho_joint_speed=7.5, kappa_joint_speed=15.0, eta_joint_speed=20.0,
    rho_joint_accel=150.0, kappa_joint_accel=300.0, eta_joint_accel=450.0,
    rho_region=0.10, kappa_region=0.15, eta_region=0.20,
    clearance_height=0.06, eta_zmp_distance=0.45,
    zeta=None, d_bounds=None,
):
    """Spec defaults; kappa speed/accel limits follow the hard limits 15 rad/s
    and 300 rad/s^2, the rest are declared toy-scale values."""
    zeta = dict(zeta or {})
    d_bounds = dict(d_bounds or {})
    z = lambda c, v: float(zeta.get(c, v))
    d = lambda c, v: float(d_bounds.get(c, v))
    rho = [
        ConstraintSpec("joint_speed", "rho", rho_joint_speed),
        ConstraintSpec("joint_accel", "rho", rho_joint_accel),
        ConstraintSpec("foot_clearance", "rho", clearance_height),
        ConstraintSpec("foot_region", "rho", rho_region),
    ]
    kappa = [
        ConstraintSpec("joint_speed", "kappa", kappa_joint_speed,
                       weight=z("joint_speed", 1.0), d_bound=d("joint_speed", 0.5)),
        ConstraintSpec("joint_accel", "kappa", kappa_joint_accel,
                       weight=z("joint_accel", 1e-3), d_bound=d("joint_accel", 50.0)),
        ConstraintSpec("foot_region", "kappa", kappa_region,
                       weight=z("foot_region", 10.0), d_bound=d("foot_region", 0.05)),
        ConstraintSpec("zmp", "kappa", 0.0,
                       weight=z("zmp", 1.0), d_bound=d("zmp", 1.0), in_hard_set=False),
        ConstraintSpec("foot_contacts", "kappa", 1.0,
                       weight=z("foot_contacts", 1.0), d_bound=d("foot_contacts", 1.0)),
    ]
    eta = [
        ConstraintSpec("joint_speed", "eta", eta_joint_speed),
        ConstraintSpec("joint_accel", "eta", eta_joint_accel),
        ConstraintSpec("foot_region", "eta", eta_region),
        ConstraintSpec("zmp", "eta", eta_zmp_distance),
        ConstraintSpec("foot_contacts", "eta", 1.0),
    ]
    return ConstraintSet(rho, kappa, eta)


def logistic_kernel(x):
    """K(x) = (e^x + 2 + e^{-x})^{-1}; maps R to (0, 0.25], maximal at 0."""
    if abs(x) > 700.0:
        return 0.0
    return 1.0 / (math.exp(x) + 2.0 + math.exp(-x))


def _sq_excess(values, limit):
    over = np.maximum(np.abs(values) - limit, 0.0)
    return float(over @ over)


def _in_region(foot, anchor, half_width):
    return (abs(foot[0] - anchor[0]) <= half_width
            and abs(foot[1] - anchor[1]) <= half_width)


def _region_cost(snapshot, half_width):
    cost = 0.0
    for i in range(len(snapshot.foot_pos)):
        f = snapshot.foot_pos[i]
        f0 = snapshot.foot_anchors_nominal[i]
        if not _in_region(f, f0, half_width):
            d = f - f0
            cost += float(d @ d)
    return cost


def _zmp_outside(snapshot):
    s = snapshot.support_interval
    return s is None or not (s[0] <= snapshot.zmp <= s[1])


def eval_rho(snapshot, cset):
    """Table of soft-constraint costs (canonical order).

    Foot clearance is a shaping term with no threshold, so its violated flag
    stays False; the other entries flag any positive cost.
    """
    out = []
    for spec in cset.rho:
        if spec.id == "joint_speed":
            c = _sq_excess(snapshot.joint_vel, spec.limit)
        elif spec.id == "joint_accel":
            c = _sq_excess(snapshot.joint_acc, spec.limit)
        elif spec.id == "foot_clearance":
            heights = snapshot.foot_pos[:, 1]
            v2 = np.einsum("ij,ij->i", snapshot.foot_vel, snapshot.foot_vel)
            c = float(np.sum((heights - spec.limit) ** 2 * v2))
            out.append(ConstraintReport(spec.id, "rho", c, False))
            continue
        else:
            c = _region_cost(snapshot, spec.limit)
        out.append(ConstraintReport(spec.id, "rho", c, c > 0.0))
    return out


def eval_kappa(snapshot, cset):
    """Hard-constraint costs (canonical order), fed to the CPPO updates."""
    out = []
    for spec in cset.kappa:
        if spec.id == "joint_speed":
            c = _sq_excess(snapshot.joint_vel, spec.limit)
        elif spec.id == "joint_accel":
            c = _sq_excess(snapshot.joint_acc, spec.limit)
        elif spec.id == "foot_region":
            c = _region_cost(snapshot, spec.limit)
        elif spec.id == "zmp":
            if _zmp_outside(snapshot):
                d = snapshot.zmp - snapshot.com[0]
                c = d * d
            else:
                c = 0.0
        else:  # foot_contacts: fires only in flight (planar adaptation)
            c = 1.0 if int(np.sum(snapshot.contact_forces > 0.0)) < 1 else 0.0
        out.append(ConstraintReport(spec.id, "kappa", float(c), c > 0.0))
    return out


def eval_eta(snapshot, cset):
    """No-go check; returns (terminate, list of triggered constraint ids)."""
    triggers = []
    for spec in cset.eta:
        if spec.id == "joint_speed":
            hit = bool(np.any(np.abs(snapshot.joint_vel) > spec.limit))
        elif spec.id == "joint_accel":
            hit = bool(np.any(np.abs(snapshot.joint_acc) > spec.limit))
        elif spec.id == "foot_region":
            hit = any(
                not _in_region(snapshot.foot_pos[i], snapshot.foot_anchors_nominal[i],
                               spec.limit)
                for i in range(len(snapshot.foot_pos))
            )
        elif spec.id == "zmp":
            hit = abs(snapshot.zmp - snapshot.com[0]) > spec.limit
        else:
            hit = int(np.sum(snapshot.contact_forces > 0.0)) < 1
        if hit:
            triggers.append(spec.id)
    return bool(triggers), triggers


def recovery_bonus(prev_reports, curr_reports, bonus):
    """Additive reward for each kappa constraint leaving violation this step."""
    if len(prev_reports) != len(curr_reports) or any(
        p.id != c.id or p.tier != c.tier for p, c in zip(prev_reports, curr_reports)
    ):
        raise ValueError("recovery_bonus requires reports over the same spec set")
    total = 0.0
    for p, c in zip(prev_reports, curr_reports):
        if p.tier == "kappa" and p.violated and not c.violated:
            total += bonus
    return total


def reformat_plan(kappa_violated_any, eta_triggered):
    """Decide how to cut an episode after a no-go trigger.

    ``kappa_violated_any[t]`` says any kappa constraint was violated at step t;
    the trigger, when present, happened at the last step. Returns
    ``(keep_len, penalize)``: steps [0, keep_len) survive and, when
    ``penalize`` is set, the final kept step becomes terminal and takes the
    penalty. Only the onset of the kappa-violation run still active at the
    trigger is kept; earlier recovered runs are untouched.
    """
    T = len(kappa_violated_any)
    if not eta_triggered:
        return T, False
    t_eta = T - 1
    if T > 0 and kappa_violated_any[t_eta]:
        t = t_eta
        while t > 0 and kappa_violated_any[t - 1]:
            t -= 1
        return t + 1, True
    return t_eta, True


def reformat_episode(episode, terminal_penalty, eta_triggered):
    """Apply the no-go cut to a returns.Episode; returns a new episode or None.

    Episodes that never triggered eta pass through unchanged (same object).
    """
    if terminal_penalty >= 0.0:
        raise ValueError("terminal_penalty must be negative")
    if not eta_triggered:
        return episode
    kappa_any = episode.kappa_violated.any(axis=1)
    keep, penalize = reformat_plan(kappa_any, True)
    if keep <= 0:
        return None
    rewards = episode.rewards[:keep].copy()
    if penalize:
        rewards[-1] += terminal_penalty
    return replace(
        episode,
        obs=episode.obs[:keep],
        actions=episode.actions[:keep],
        rewards=rewards,
        costs=episode.costs[:keep],
        kappa_violated=episode.kappa_violated[:keep],
        terminal=True,
        truncated=False,
    )


@dataclass
class RewardWeights:
    """Table-of-reward-terms coefficients plus soft-constraint weights.

    Kernel terms are added, quadratic penalty terms and rho costs subtracted.
    ``kernel_scale`` sharpens the velocity kernels (1.0 keeps the plain
    K(v - V) form). ``scaled`` returns a copy with penalty and rho weights
    multiplied by a curriculum factor.
    """

    lin_vel: float = 1.0
    ang_vel: float = 0.4
    torque: float = 2e-5
    foot_acc: float = 0.02
    foot_slip: float = 0.05
    smoothness: float = 0.2
    orientation: float = 0.5
    kernel_scale: float = 1.0
    rho_joint_speed: float = 0.02
    rho_joint_accel: float = 1e-5
    rho_foot_clearance: float = 1.0
    rho_foot_region: float = 5.0

    def scaled(self, factor):
        return RewardWeights(
            lin_vel=self.lin_vel,
            ang_vel=self.ang_vel,
            torque=self.torque * factor,
            foot_acc=self.foot_acc * factor,
            foot_slip=self.foot_slip * factor,
            smoothness=self.smoothness * factor,
            orientation=self.orientation * factor,
            kernel_scale=self.kernel_scale,
            rho_joint_speed=self.rho_joint_speed * factor,
            rho_joint_accel=self.rho_joint_accel * factor,
            rho_foot_clearance=self.rho_foot_clearance * factor,
            rho_foot_region=self.rho_foot_region * factor,
        )


def assemble_reward(snapshot, command, rho_reports, recovery, weights):
    """Per-step reward: tracking kernels minus motion penalties minus weighted
    soft-constraint costs, plus the recovery bonus."""
    w = weights
    vel_err = snapshot.base_vel[0] - command
    r = w.lin_vel * logistic_kernel(w.kernel_scale * vel_err)
    r += w.ang_vel * logistic_kernel(w.kernel_scale * snapshot.pitch_rate)
    tau = snapshot.torques
    r -= w.torque * float(tau @ tau)
    dv = snapshot.foot_vel - snapshot.prev_foot_vel
    r -= w.foot_acc * float(np.sum(dv * dv))
    contact = snapshot.contact_forces > 0.0
    if np.any(contact):
        vf = snapshot.foot_vel[contact]
        r -= w.foot_slip * float(np.sum(vf * vf))
    dj = snapshot.joints - snapshot.prev_joints
    r -= w.smoothness * float(dj @ dj)
    r -= w.orientation * snapshot.pitch * snapshot.pitch
    rho_w = {
        "joint_speed": w.rho_joint_speed,
        "joint_accel": w.rho_joint_accel,
        "foot_clearance": w.rho_foot_clearance,
        "foot_region": w.rho_foot_region,
    }
    for rep in rho_reports:
        r -= rho_w[rep.id] * rep.cost
    return r + recovery


def violation_flags(rho_reports, kappa_reports, eta_triggered):
    """Per-tier step flags used by the violation statistics."""
    return (
        any(r.violated for r in rho_reports),
        any(r.violated for r in kappa_reports),
        bool(eta_triggered),
    )
