"""Synthetic ground truth: scripted trajectories, consistent dynamics, noisy streams.

Waveforms are analytic, so reference joint velocities and accelerations never
come from numerical differentiation; the stacked dynamic-variable vector at
every sample comes from the recursion and therefore satisfies the assembled
constraints to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from mapdyn.dynamics import ConstraintAssembler, DynLayout, rnea
from mapdyn.model.tree import KinematicTreeModel, Joint, Link, ModelError
from mapdyn.sensors import MeasurementAssembler
from mapdyn.spatial import HomTransform, SpatialInertia


# ---------------------------------------------------------------------------
# waveforms


@dataclass(frozen=True)
class Constant:
    value: float = 0.0

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        return np.full_like(t, self.value), np.zeros_like(t), np.zeros_like(t)


@dataclass(frozen=True)
class Sine:
    amplitude: float
    frequency: float  # Hz
    phase: float = 0.0
    offset: float = 0.0

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        w = 2.0 * np.pi * self.frequency
        arg = w * t + self.phase
        pos = self.offset + self.amplitude * np.sin(arg)
        vel = self.amplitude * w * np.cos(arg)
        acc = -self.amplitude * w * w * np.sin(arg)
        return pos, vel, acc


@dataclass(frozen=True)
class Spline:
    """Natural cubic spline through (time, value) knots, analytic derivatives."""

    knots: tuple  # ((t0, v0), (t1, v1), ...)

    def evaluate(self, t):
        ts = np.array([k[0] for k in self.knots])
        vs = np.array([k[1] for k in self.knots])
        spline = CubicSpline(ts, vs, bc_type="natural")
        t = np.asarray(t, dtype=float)
        return spline(t), spline(t, 1), spline(t, 2)


def waveform_from_config(cfg) -> object:
    kind = cfg.get("kind", "constant")
    if kind == "constant":
        return Constant(cfg.get("value", 0.0))
    if kind == "sine":
        return Sine(cfg["amplitude"], cfg["frequency"], cfg.get("phase", 0.0), cfg.get("offset", 0.0))
    if kind == "spline":
        return Spline(tuple((float(a), float(b)) for a, b in cfg["knots"]))
    raise ModelError(f"unknown waveform kind {kind!r}")


@dataclass
class TrajectorySpec:
    """Per-joint waveform with a common duration and sample rate."""

    waveforms: list
    duration: float
    rate: float

    def __post_init__(self):
        if self.rate <= 0 or self.duration <= 0:
            raise ModelError("trajectory duration and rate must be positive")

    @property
    def times(self):
        n = int(round(self.duration * self.rate))
        return np.arange(n) / self.rate

    def sample(self):
        t = self.times
        n = len(self.waveforms)
        q = np.zeros((t.size, n))
        qd = np.zeros((t.size, n))
        qdd = np.zeros((t.size, n))
        for j, wf in enumerate(self.waveforms):
            q[:, j], qd[:, j], qdd[:, j] = wf.evaluate(t)
        return t, q, qd, qdd

    def check_limits(self, model: KinematicTreeModel):
        lo, hi = model.limits()
        _, q, _, _ = self.sample()
        bad = np.where((q < lo - 1e-9).any(axis=0) | (q > hi + 1e-9).any(axis=0))[0]
        if bad.size:
            names = [model.joints[i].name for i in bad[:5]]
            raise ModelError(f"trajectory exceeds joint limits at {names}")


@dataclass
class SyntheticScenario:
    """Deterministic synthetic experiment: model + motion + forces + sensors."""

    model: KinematicTreeModel
    trajectory: TrajectorySpec
    sensor_specs: list
    external_forces: dict = field(default_factory=dict)  # link name -> per-channel waveforms (6)
    seed: int | None = 0

    def force_series(self, t):
        n = self.model.n_moving
        fx = np.zeros((t.size, n, 6))
        for name, channels in self.external_forces.items():
            if name not in self.model.link_index:
                raise ModelError(f"external force script names unknown link {name!r}")
            idx = self.model.link_index[name]
            if idx == 0:
                raise ModelError("external force scripts cover moving links only")
            for c, wf in enumerate(channels):
                fx[:, idx - 1, c] = wf.evaluate(t)[0]
        return fx


@dataclass
class GroundTruth:
    times: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    d: np.ndarray  # (samples, 26 * n_moving)


def generate_ground_truth(scenario: SyntheticScenario) -> GroundTruth:
    """Analytic state series and the consistent stacked dynamics at each sample.

    The scripted trajectory must respect the model's joint limits.
    """
    scenario.trajectory.check_limits(scenario.model)
    t, q, qd, qdd = scenario.trajectory.sample()
    fx = scenario.force_series(t)
    layout = DynLayout(scenario.model)
    d = np.zeros((t.size, layout.size))
    for k in range(t.size):
        d[k] = rnea(scenario.model, q[k], qd[k], qdd[k], fx_base=fx[k])
    return GroundTruth(t, q, qd, qdd, d)


def generate_observations(scenario: SyntheticScenario, truth: GroundTruth, noiseless=False):
    """Per-sample stacked readings via the measurement map plus channel noise."""
    assembler = MeasurementAssembler(scenario.model, scenario.sensor_specs)
    rng = None if (noiseless or scenario.seed is None) else np.random.default_rng(scenario.seed)
    out = np.zeros((truth.times.size, assembler.dim))
    for k in range(truth.times.size):
        mat, bias = assembler.assemble(truth.q[k], truth.qd[k])
        out[k] = mat @ truth.d[k] + bias
        if rng is not None:
            out[k] += rng.normal(0.0, np.sqrt(assembler.variances))
    return out


def measurement_set_series(scenario: SyntheticScenario, truth: GroundTruth, noiseless=False):
    """The observation series wrapped as one MeasurementSet per sample."""
    from mapdyn.sensors import MeasurementSet, canonical_order

    readings = generate_observations(scenario, truth, noiseless=noiseless)
    specs = canonical_order(scenario.sensor_specs)
    variances = np.concatenate([s.variance for s in specs])
    return [MeasurementSet(specs, y, variances) for y in readings]


def max_constraint_residual(scenario: SyntheticScenario, truth: GroundTruth) -> float:
    """Worst relative constraint residual across the ground-truth series."""
    assembler = ConstraintAssembler(scenario.model)
    worst = 0.0
    for k in range(truth.times.size):
        mat, b = assembler.assemble(truth.q[k], truth.qd[k])
        res = np.abs(mat @ truth.d[k] + b).max()
        worst = max(worst, res / (1.0 + np.abs(truth.d[k]).max()))
    return worst


# ---------------------------------------------------------------------------
# sensor-stream synthesis for pose calibration


def link_motion(model, q, qd, qdd):
    """Pose, spatial velocity and true spatial acceleration per link.

    Velocities/accelerations are in body coordinates; the acceleration is
    the true one (no gravity offset).
    """
    from mapdyn.dynamics import kinematic_sweep
    from mapdyn.model.kinematics import forward_kinematics
    from mapdyn.spatial import cross_motion

    sweep = kinematic_sweep(model, q, qd)
    poses = forward_kinematics(model, q)
    n = model.n_moving
    acc = [np.zeros(6)] * (n + 1)
    for i in range(1, n + 1):
        vj = sweep.s[i] * qd[i - 1]
        acc[i] = (
            sweep.x_from_parent[i] @ acc[model.parent[i]]
            + sweep.s[i] * qdd[i - 1]
            + cross_motion(sweep.v[i], vj)
        )
    return poses, sweep.v, acc


def synthesize_sensor_streams(model, trajectory: TrajectorySpec, sensor, noise_std=0.0, rng=None):
    """Motion streams for one attached accelerometer, ready for calibration.

    Returns the six arrays consumed by the pose estimator: link orientation
    and true linear acceleration (inertial frame), angular velocity and
    acceleration (inertial frame), sensor orientation (inertial frame) and
    proper acceleration (sensor frame, optionally noisy).
    """
    from mapdyn.spatial import GRAVITY_SPATIAL, adjoint_motion

    li = model.link_index[sensor.parent_link]
    if li == 0:
        raise ModelError("cannot synthesize streams for a sensor on the fixed base")
    x_sensor = adjoint_motion(sensor.pose.inverse())
    r_ls = sensor.pose.rotation
    gravity = GRAVITY_SPATIAL[:3]

    t, q, qd, qdd = trajectory.sample()
    n = t.size
    body_rot = np.zeros((n, 3, 3))
    body_acc = np.zeros((n, 3))
    omegas = np.zeros((n, 3))
    omega_dots = np.zeros((n, 3))
    sensor_rot = np.zeros((n, 3, 3))
    sensor_acc = np.zeros((n, 3))
    for k in range(n):
        poses, vels, accs = link_motion(model, q[k], qd[k], qdd[k])
        r_b = poses[li].rotation
        v = vels[li]
        a = accs[li]
        body_rot[k] = r_b
        body_acc[k] = r_b @ (a[:3] + np.cross(v[3:], v[:3]))
        omegas[k] = r_b @ v[3:]
        omega_dots[k] = r_b @ a[3:]
        r_s = r_b @ r_ls
        sensor_rot[k] = r_s
        v_s = x_sensor @ v
        a_s = x_sensor @ a
        proper = a_s[:3] + np.cross(v_s[3:], v_s[:3]) - r_s.T @ gravity
        sensor_acc[k] = proper
    if noise_std and rng is not None:
        sensor_acc = sensor_acc + rng.normal(0.0, noise_std, sensor_acc.shape)
    return body_rot, body_acc, omegas, omega_dots, sensor_rot, sensor_acc


# ---------------------------------------------------------------------------
# random models for property tests


def random_chain_model(n_links, rng, name="chain") -> KinematicTreeModel:
    """Random serial chain with well-conditioned inertias."""
    links = [Link("base", _random_inertia(rng, 2.0))]
    joints = []
    parent = "base"
    for i in range(1, n_links + 1):
        child = f"link{i}"
        links.append(Link(child, _random_inertia(rng)))
        joints.append(
            Joint(
                f"joint{i}",
                parent,
                child,
                _random_axis(rng),
                HomTransform.from_rpy(rng.normal(0.0, 0.15, 3), rng.normal(0.0, 0.4, 3)),
                (-np.pi, np.pi),
            )
        )
        parent = child
    return KinematicTreeModel(name, links, joints)


def random_tree_model(n_links, rng, name="tree") -> KinematicTreeModel:
    """Random tree: each link attaches to a uniformly chosen earlier link."""
    links = [Link("base", _random_inertia(rng, 2.0))]
    joints = []
    names = ["base"]
    for i in range(1, n_links + 1):
        child = f"link{i}"
        parent = names[rng.integers(0, len(names))]
        links.append(Link(child, _random_inertia(rng)))
        joints.append(
            Joint(
                f"joint{i}",
                parent,
                child,
                _random_axis(rng),
                HomTransform.from_rpy(rng.normal(0.0, 0.15, 3), rng.normal(0.0, 0.4, 3)),
                (-np.pi, np.pi),
            )
        )
        names.append(child)
    return KinematicTreeModel(name, links, joints)


def _random_inertia(rng, mass_scale=1.0) -> SpatialInertia:
    mass = mass_scale * rng.uniform(0.5, 3.0)
    com = rng.normal(0.0, 0.06, 3)
    a = rng.normal(0.0, 0.1, (3, 3))
    rot = a @ a.T + 0.02 * np.eye(3)
    return SpatialInertia(mass, com, rot)


def _random_axis(rng):
    axis = rng.normal(0.0, 1.0, 3)
    return axis / np.linalg.norm(axis)


def random_state(model, rng, q_scale=1.0, qd_scale=1.0, qdd_scale=1.0):
    n = model.n_dof
    return (
        rng.uniform(-q_scale, q_scale, n),
        rng.normal(0.0, qd_scale, n),
        rng.normal(0.0, qdd_scale, n),
    )
