"""Deterministic planar two-leg, four-joint velocity-tracking environment.

Sagittal-plane model: two 2-link legs hang from a quasi-static base. Joints
follow per-joint double-integrator dynamics under PD torques; the base pose is
reconstructed kinematically from latched stance-foot anchors (no-slip), with
ballistic motion only when both feet leave the ground. This supplies every
quantity the reward table and the three constraint tiers consume while staying
fully deterministic under a seeded generator.

Observation layout (38 entries, fixed order):

    [0]      base height
    [1]      base pitch
    [2:4]    base linear velocity (x, z)
    [4]      pitch rate
    [5:9]    joint positions (hipA kneeA hipB kneeB)
    [9:25]   previous four action outputs, most recent first (4 x 4)
    [25:37]  joint-velocity history at t, t-1, t-2 (3 x 4)
    [37]     commanded forward velocity
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import constraints as C

OBS_DIM = 38
ACT_DIM = 4
N_LEGS = 2

# Observation noise spread, grouped as documented above; desired-joint history
# and the command carry no noise.
OBS_NOISE_SPREAD = np.concatenate([
    [0.02], [0.1], [0.05, 0.05], [0.07],
    np.full(4, 0.02), np.zeros(16), np.full(12, 0.05), [0.0],
])
ACT_NOISE_SPREAD = np.full(ACT_DIM, 0.04)


class SteppedTerminatedEnvError(RuntimeError):
    """step() called after an eta termination without reset()."""


@dataclass
class EnvParams:
    """Physical constants, PD gains and randomization scales."""

    link_len1: float = 0.25
    link_len2: float = 0.25
    base_height: float = 0.42
    gravity: float = 9.81
    joint_inertia: float = 0.04
    kp: float = 50.0
    kd: float = 2.83
    torque_limit: float = 35.0
    dt: float = 0.0025
    base_mass: float = 10.0
    foot_half_len: float = 0.07
    hip_offsets: tuple = (0.0, 0.0)
    hip_range: tuple = (-1.5, 1.5)
    knee_range: tuple = (0.05, 2.6)
    episode_cap: int = 1000
    reset_joint_jitter: float = 0.05
    contact_tol: float = 1e-9
    # contact hysteresis: a latched foot stays latched until its leg retracts
    # clearly above the ground, else slow joint drift causes micro-bouncing
    lift_tol: float = 4e-3
    # below this horizontal foot separation the two-foot pitch solve is
    # ill-conditioned; the pitch is held instead
    feet_level_guard: float = 0.05
    # Randomization scheme toggles and ranges (gravity/torque ranges follow
    # the robustness schemes; noise scale s_c ramps with difficulty).
    rand_noise: bool = True
    rand_gravity: bool = True
    rand_torque: bool = True
    rand_link: bool = True
    rand_damping: bool = True
    rand_dt: bool = True
    noise_scale_max: float = 1.0
    gravity_range: tuple = (0.95, 1.05)
    torque_scale_range: tuple = (0.5, 2.0)
    link_mass_range: tuple = (0.93, 1.07)
    link_size_range: tuple = (0.97, 1.05)
    dt_range: tuple = (0.00225, 0.00275)


@dataclass
class EnvSnapshot:
    """Full kinematic state needed by the reward table and constraint tiers."""

    base_pos: np.ndarray        # (2,) world x, z
    pitch: float
    base_vel: np.ndarray        # (2,)
    pitch_rate: float
    joints: np.ndarray          # (4,)
    joint_vel: np.ndarray
    joint_acc: np.ndarray
    torques: np.ndarray
    foot_pos: np.ndarray        # (2, 2) world
    foot_vel: np.ndarray        # (2, 2)
    prev_foot_vel: np.ndarray
    prev_joints: np.ndarray
    contact_forces: np.ndarray  # (2,) >= 0
    zmp: float
    support_interval: tuple | None
    com: np.ndarray             # (2,)
    foot_anchors_nominal: np.ndarray  # (2, 2)


@dataclass
class StepInfo:
    """Constraint evaluation attached to one step."""

    rho_reports: list
    kappa_reports: list
    kappa_costs: np.ndarray
    kappa_violated: np.ndarray
    eta_triggers: list
    rho_violated: bool
    snapshot: EnvSnapshot = field(repr=False, default=None)


def leg_vector(q_hip, q_knee, l1, l2, hip_dx=0.0):
    """Base-frame hip-to-foot vector; joints zero means straight down."""
    s1, c1 = math.sin(q_hip), math.cos(q_hip)
    s12, c12 = math.sin(q_hip + q_knee), math.cos(q_hip + q_knee)
    return (hip_dx + l1 * s1 + l2 * s12, -(l1 * c1 + l2 * c12))


def leg_jacobian(q_hip, q_knee, l1, l2):
    """d(foot)/d(q_hip, q_knee) in the base frame, 2x2."""
    c1, s1 = math.cos(q_hip), math.sin(q_hip)
    c12, s12 = math.cos(q_hip + q_knee), math.sin(q_hip + q_knee)
    return np.array([
        [l1 * c1 + l2 * c12, l2 * c12],
        [l1 * s1 + l2 * s12, l2 * s12],
    ])


def leg_ik(x, z, l1, l2):
    """Analytic 2-link inverse kinematics for a base-frame foot target.

    Returns (q_hip, q_knee, clamped) with the knee bending positively;
    unreachable targets are clamped to the workspace annulus.
    """
    r = math.hypot(x, z)
    r_max = (l1 + l2) * 0.999
    r_min = abs(l1 - l2) * 1.001 + 1e-6
    clamped = False
    if r > r_max or r < r_min:
        scale = (r_max if r > r_max else r_min) / max(r, 1e-12)
        x, z = x * scale, z * scale
        r = math.hypot(x, z)
        clamped = True
    cos_knee = (r * r - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    cos_knee = min(1.0, max(-1.0, cos_knee))
    q_knee = math.acos(cos_knee)
    q_hip = math.atan2(x, -z) - math.atan2(l2 * math.sin(q_knee),
                                           l1 + l2 * math.cos(q_knee))
    return q_hip, q_knee, clamped


def forward_kinematics(joints, base_pose, params, joint_vel=None, base_vel=(0.0, 0.0),
                       pitch_rate=0.0):
    """World foot positions, and velocities via the analytic Jacobian.

    ``base_pose`` is (x, z, pitch). Velocities cover base translation, base
    rotation and joint motion.
    """
    bx, bz, th = base_pose
    ct, st = math.cos(th), math.sin(th)
    pos = np.empty((N_LEGS, 2))
    vel = np.zeros((N_LEGS, 2))
    for i in range(N_LEGS):
        q1, q2 = joints[2 * i], joints[2 * i + 1]
        px, pz = leg_vector(q1, q2, params.link_len1, params.link_len2,
                            params.hip_offsets[i])
        rx = ct * px - st * pz
        rz = st * px + ct * pz
        pos[i] = (bx + rx, bz + rz)
        if joint_vel is not None:
            jac = leg_jacobian(q1, q2, params.link_len1, params.link_len2)
            pdot = jac @ np.asarray([joint_vel[2 * i], joint_vel[2 * i + 1]])
            # rotate into world, add base translation and rotation terms
            wx = ct * pdot[0] - st * pdot[1]
            wz = st * pdot[0] + ct * pdot[1]
            vel[i] = (base_vel[0] + wx + pitch_rate * (-rz),
                      base_vel[1] + wz + pitch_rate * rx)
    return pos, vel


def compute_zmp(com_x, com_z, accel_x, gravity):
    """Cart-table model: u = x_C - (z_C / g) * xdd_C."""
    return com_x - (com_z / gravity) * accel_x


def add_noise(vec, spread, s_c, rng):
    """x + s_c * spread (.) standard-normal draws."""
    spread = np.asarray(spread, dtype=np.float64)
    if np.any(spread < 0.0):
        raise ValueError("noise spread entries must be non-negative")
    vec = np.asarray(vec, dtype=np.float64)
    if spread.shape != vec.shape:
        raise ValueError("spread layout does not match the vector")
    return vec + s_c * spread * rng.standard_normal(vec.shape)


class PlanarQuadEnv:
    """Velocity-tracking environment; one instance per rollout worker."""

    def __init__(self, params=None, constraint_set=None, reward_weights=None,
                 seed=0, command_range=(-0.5, 0.5), randomization=False,
                 recovery_bonus=0.05):
        self.params = params or EnvParams()
        self.cset = constraint_set or C.default_constraint_set()
        self.weights = reward_weights or C.RewardWeights()
        self.command_range = tuple(command_range)
        self.randomization = bool(randomization)
        self.recovery_bonus_value = float(recovery_bonus)
        self.rng = np.random.default_rng(seed)
        self.kappa_ids = self.cset.kappa_ids
        self.n_kappa = len(self.kappa_ids)
        self.obs_dim = OBS_DIM
        self.act_dim = ACT_DIM
        p = self.params
        self.nominal_joints = np.array(
            leg_ik(0.0, -p.base_height, p.link_len1, p.link_len2)[:2] * N_LEGS
        )
        self._difficulty = 1.0
        self._eff_weights = self.weights
        self._terminated = True
        self._t = 0

    # -- configuration -----------------------------------------------------

    def set_difficulty(self, progress):
        """Curriculum hook: penalty weights and noise ramp over the first half."""
        factor = min(1.0, max(0.0, 2.0 * progress))
        self._difficulty = factor
        self._eff_weights = self.weights.scaled(factor)

    @property
    def noise_scale(self):
        return self.params.noise_scale_max * self._difficulty

    # -- lifecycle ----------------------------------------------------------

    def reset(self, command=None):
        p = self.params
        rng = self.rng
        # per-episode randomization draws (schemes 2-5); draw order is fixed
        self._g = p.gravity
        self._torque_scale = 1.0
        self._l1, self._l2 = p.link_len1, p.link_len2
        self._inertia = p.joint_inertia
        self._k_damp = 1.0
        if self.randomization:
            if p.rand_gravity:
                self._g = p.gravity * rng.uniform(*p.gravity_range)
            if p.rand_torque:
                self._torque_scale = rng.uniform(*p.torque_scale_range)
            if p.rand_link:
                s_m = rng.uniform(*p.link_mass_range)
                s_l = rng.uniform(*p.link_size_range)
                self._l1, self._l2 = p.link_len1 * s_l, p.link_len2 * s_l
                self._inertia = p.joint_inertia * s_m * s_l * s_l
            if p.rand_damping:
                lo = 1.0 - self.noise_scale / 4.0
                self._k_damp = rng.uniform(lo, 1.0)
        if command is None:
            command = rng.uniform(*self.command_range)
        self.command = float(command)

        self.joints = self.nominal_joints + rng.uniform(
            -p.reset_joint_jitter, p.reset_joint_jitter, ACT_DIM)
        self.joint_vel = np.zeros(ACT_DIM)
        self.joint_acc = np.zeros(ACT_DIM)
        self.torques = np.zeros(ACT_DIM)

        # initial pose: feet level when they are far enough apart for the
        # pitch solve to be well conditioned, otherwise level base resting on
        # the lower foot
        pvec = [leg_vector(self.joints[2 * i], self.joints[2 * i + 1],
                           self._l1, self._l2, p.hip_offsets[i])
                for i in range(N_LEGS)]
        vx = pvec[0][0] - pvec[1][0]
        vz = pvec[0][1] - pvec[1][1]
        theta = math.atan(-vz / vx) if abs(vx) >= p.feet_level_guard else 0.0
        ct, st = math.cos(theta), math.sin(theta)
        self.pitch = theta
        rel_z = [st * px + ct * pz for px, pz in pvec]
        self.base_z = -min(rel_z)
        self.base_x = 0.0
        heights = np.array([self.base_z + rz for rz in rel_z])
        self.stance = heights <= p.contact_tol
        self.stance_age = np.where(self.stance, 1, 0)
        self.anchors = np.array([
            self.base_x + ct * pvec[i][0] - st * pvec[i][1] for i in range(N_LEGS)
        ])
        self.base_vel = np.zeros(2)
        self.pitch_rate = 0.0
        self._prev_bvx = 0.0
        self._accel_hist = (0.0, 0.0, 0.0)

        self.foot_pos = self._world_feet()
        self.foot_vel = np.zeros((N_LEGS, 2))
        self._prev_foot_pos = self.foot_pos.copy()
        self.prev_foot_vel = np.zeros((N_LEGS, 2))
        self.prev_joints = self.joints.copy()

        # filter starts at the actual joints so a held action produces no
        # settle transient
        self._filter_state = self.joints.copy()
        self._jdes_hist = np.tile(self.nominal_joints, (4, 1))
        self._jvel_hist = np.zeros((3, ACT_DIM))
        self._prev_kappa_reports = None
        self._terminated = False
        self._t = 0
        return self._build_obs()

    # -- stepping -----------------------------------------------------------

    def step(self, action):
        """One control step; returns (obs, reward, costs, StepInfo, terminated)."""
        if self._terminated:
            raise SteppedTerminatedEnvError("episode is over; call reset()")
        p = self.params
        dt = p.dt
        if self.randomization and p.rand_dt:
            dt = self.rng.uniform(*p.dt_range)

        action = np.asarray(action, dtype=np.float64)
        if action.shape != (ACT_DIM,):
            raise ValueError(f"action must have shape ({ACT_DIM},)")
        self._push_jdes(action)
        target = self._clamp_targets(action)
        if self.randomization and p.rand_noise:
            target = add_noise(target, ACT_NOISE_SPREAD, self.noise_scale, self.rng)
            target = self._clamp_targets(target)

        # actuator damping filter, then PD torque -> clip -> scale
        self._filter_state = (self._k_damp * target
                              + (1.0 - self._k_damp) * self._filter_state)
        tau = p.kp * (self._filter_state - self.joints) - p.kd * self.joint_vel
        tau = np.clip(tau, -p.torque_limit, p.torque_limit) * self._torque_scale
        self.torques = tau

        prev_joints = self.joints.copy()
        self.joint_acc = tau / self._inertia
        self.joint_vel = self.joint_vel + self.joint_acc * dt
        self.joints = self.joints + self.joint_vel * dt

        self._update_base(dt)

        feet = self._world_feet()
        foot_vel = (feet - self._prev_foot_pos) / dt
        # Median-of-3 on the finite-difference acceleration: one-step contact
        # impulses vanish while any acceleration sustained >= 3 steps passes
        # through exactly (the discrete cart-table definition).
        accel_inst = (self.base_vel[0] - self._prev_bvx) / dt
        self._accel_hist = (accel_inst, self._accel_hist[0], self._accel_hist[1])
        accel_x = float(np.median(self._accel_hist))
        com = np.array([self.base_x, self.base_z])
        zmp = compute_zmp(com[0], com[1], accel_x, self._g)
        if np.any(self.stance):
            ax = self.anchors[self.stance]
            support = (float(ax.min() - p.foot_half_len),
                       float(ax.max() + p.foot_half_len))
        else:
            support = None
        n_contact = int(np.sum(self.stance))
        forces = np.where(self.stance,
                          self.params.base_mass * self._g / max(n_contact, 1), 0.0)
        anchors_nominal = np.array([
            [self.base_x + p.hip_offsets[i], 0.0] for i in range(N_LEGS)
        ])

        snap = EnvSnapshot(
            base_pos=com, pitch=self.pitch, base_vel=self.base_vel.copy(),
            pitch_rate=self.pitch_rate, joints=self.joints.copy(),
            joint_vel=self.joint_vel.copy(), joint_acc=self.joint_acc.copy(),
            torques=tau.copy(), foot_pos=feet, foot_vel=foot_vel,
            prev_foot_vel=self.prev_foot_vel, prev_joints=prev_joints,
            contact_forces=forces, zmp=zmp, support_interval=support, com=com,
            foot_anchors_nominal=anchors_nominal,
        )

        rho_reports = C.eval_rho(snap, self.cset)
        kappa_reports = C.eval_kappa(snap, self.cset)
        terminated, triggers = C.eval_eta(snap, self.cset)
        recovery = 0.0
        if self._prev_kappa_reports is not None:
            recovery = C.recovery_bonus(self._prev_kappa_reports, kappa_reports,
                                        self.recovery_bonus_value)
        reward = C.assemble_reward(snap, self.command, rho_reports, recovery,
                                   self._eff_weights)
        costs = np.array([r.cost for r in kappa_reports])
        violated = np.array([r.violated for r in kappa_reports])
        rho_any = any(r.violated for r in rho_reports)

        self._prev_kappa_reports = kappa_reports
        self._prev_foot_pos = feet
        self.foot_pos = feet
        self.prev_foot_vel = foot_vel
        self.foot_vel = foot_vel
        self._jvel_hist = np.vstack([self.joint_vel, self._jvel_hist[:2]])
        self._t += 1
        if terminated:
            self._terminated = True

        obs = self._build_obs()
        if self.randomization and p.rand_noise:
            obs = add_noise(obs, OBS_NOISE_SPREAD, self.noise_scale, self.rng)
        info = StepInfo(rho_reports, kappa_reports, costs, violated, triggers,
                        rho_any, snap)
        return obs, float(reward), costs, info, terminated

    # -- internals ----------------------------------------------------------

    def _clamp_targets(self, target):
        p = self.params
        t = target.copy()
        t[0::2] = np.clip(t[0::2], *p.hip_range)
        t[1::2] = np.clip(t[1::2], *p.knee_range)
        return t

    def _push_jdes(self, action):
        self._jdes_hist = np.vstack([action, self._jdes_hist[:3]])

    def _leg_vectors(self):
        return [leg_vector(self.joints[2 * i], self.joints[2 * i + 1],
                           self._l1, self._l2, self.params.hip_offsets[i])
                for i in range(N_LEGS)]

    def _world_feet(self):
        ct, st = math.cos(self.pitch), math.sin(self.pitch)
        out = np.empty((N_LEGS, 2))
        for i, (px, pz) in enumerate(self._leg_vectors()):
            if self.stance[i]:
                out[i] = (self.anchors[i], 0.0)
            else:
                out[i] = (self.base_x + ct * px - st * pz,
                          self.base_z + st * px + ct * pz)
        return out

    def _update_base(self, dt):
        """Latched-anchor stance solve; ballistic base when airborne."""
        p = self.params
        prev_x, prev_z, prev_pitch = self.base_x, self.base_z, self.pitch
        self._prev_bvx = self.base_vel[0]
        pvec = self._leg_vectors()
        ct, st = math.cos(self.pitch), math.sin(self.pitch)
        rel_z = np.array([st * px + ct * pz for px, pz in pvec])
        heights = self.base_z + rel_z
        thresh = np.where(self.stance, p.lift_tol, p.contact_tol)
        new_stance = heights <= thresh
        # In double support the support foot's height is pinned at zero by the
        # base solve itself, so liftoff there is decided by relative leg
        # extension: the leg retracted beyond lift_tol relative to the lower
        # leg leaves the ground.
        if new_stance[0] and new_stance[1]:
            if rel_z[0] - rel_z[1] > p.lift_tol:
                new_stance[0] = False
            elif rel_z[1] - rel_z[0] > p.lift_tol:
                new_stance[1] = False

        if not np.any(new_stance):
            # flight: ballistic z, constant x velocity, frozen pitch
            self.base_x += self.base_vel[0] * dt
            self.base_z += self.base_vel[1] * dt - 0.5 * self._g * dt * dt
            self.base_vel = np.array([self.base_vel[0],
                                      self.base_vel[1] - self._g * dt])
            self.pitch_rate = 0.0
            self.stance = new_stance
            self.stance_age[:] = 0
            # touchdown check with the ballistic pose
            ct, st = math.cos(self.pitch), math.sin(self.pitch)
            heights = np.array([self.base_z + st * px + ct * pz for px, pz in pvec])
            new_stance = heights <= p.contact_tol
            if not np.any(new_stance):
                return
        for i in range(N_LEGS):
            if new_stance[i] and not self.stance[i]:
                px, pz = pvec[i]
                ct, st = math.cos(self.pitch), math.sin(self.pitch)
                self.anchors[i] = self.base_x + ct * px - st * pz

        idx = np.flatnonzero(new_stance)
        if len(idx) == 1:
            s = idx[0]
            theta = self.pitch  # single support holds the pitch
            ct, st = math.cos(theta), math.sin(theta)
            px, pz = pvec[s]
            self.base_x = self.anchors[s] - (ct * px - st * pz)
            self.base_z = -(st * px + ct * pz)
            self.pitch = theta
        else:
            vx = pvec[0][0] - pvec[1][0]
            vz = pvec[0][1] - pvec[1][1]
            dx = self.anchors[0] - self.anchors[1]
            if abs(vx) < self.params.feet_level_guard:
                theta = self.pitch
            else:
                theta = math.atan2(0.0, dx) - math.atan2(vz, vx)
                theta = math.atan2(math.sin(theta), math.cos(theta))
            m = 0 if self.stance_age[0] >= self.stance_age[1] else 1
            f = 1 - m
            ct, st = math.cos(theta), math.sin(theta)
            pxm, pzm = pvec[m]
            self.base_x = self.anchors[m] - (ct * pxm - st * pzm)
            self.base_z = -(st * pxm + ct * pzm)
            self.pitch = theta
            # follower foot slips to wherever its leg now reaches
            pxf, pzf = pvec[f]
            self.anchors[f] = self.base_x + ct * pxf - st * pzf

        self.stance_age = np.where(new_stance, self.stance_age + 1, 0)
        self.stance = new_stance
        self.base_vel = np.array([(self.base_x - prev_x) / dt,
                                  (self.base_z - prev_z) / dt])
        self.pitch_rate = (self.pitch - prev_pitch) / dt

    def _build_obs(self):
        obs = np.empty(OBS_DIM)
        obs[0] = self.base_z
        obs[1] = self.pitch
        obs[2:4] = self.base_vel
        obs[4] = self.pitch_rate
        obs[5:9] = self.joints
        obs[9:25] = self._jdes_hist.ravel()
        obs[25:37] = self._jvel_hist.ravel()
        obs[37] = self.command
        return obs
