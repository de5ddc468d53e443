"""Command-line front end: model generation, simulation, estimation, analysis.

Commands write their outputs plus a manifest (config hash, seed, versions,
input digests) sufficient to reproduce a run byte-identically. Time series
are CSV with a header row and a numeric time column in seconds; calibration
results and manifests are JSON.

Exit codes: 0 ok, 1 usage, 2 input/model error, 3 numerical failure.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

import mapdyn
from mapdyn.dynamics import ConstraintAssembler, DynLayout
from mapdyn.estimator import (
    EstimatorError,
    MapProblem,
    RankDeficiencyError,
    SparseCholeskySolver,
    incremental_fusion,
    map_solve,
    posterior_precision_terms,
)
from mapdyn.model import (
    ModelError,
    TemplateError,
    forward_kinematics,
    generate_human_template,
    ik_frame_match,
    parse_model,
)
from mapdyn.sensors import (
    ExcitationError,
    MeasurementAssembler,
    channel_names,
    default_sensor_specs,
    estimate_sensor_pose,
    savitzky_golay_derivatives,
)
from mapdyn.simharness import (
    SyntheticScenario,
    TrajectorySpec,
    generate_ground_truth,
    generate_observations,
    synthesize_sensor_streams,
    waveform_from_config,
)
from mapdyn.spatial import HomTransform, matrix_to_rpy

log = logging.getLogger("mapdyn")

EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


class InputError(Exception):
    """Bad input files or config content (exit code 2)."""


def _setup_logging():
    level = os.environ.get("MAPDYN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(name)s %(levelname)s %(message)s")


# ---------------------------------------------------------------------------
# config and manifest plumbing


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise InputError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"config is not valid JSON: {exc}") from exc


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, cfg: dict, seed, inputs=(), outputs=()):
    import scipy

    manifest = {
        "command": command,
        "config_sha256": config_hash(cfg),
        "seed": seed,
        "versions": {
            "mapdyn": mapdyn.__version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_num(x) for x in row])


def _num(x):
    if isinstance(x, str):
        return x
    return repr(float(x))


def read_csv(path):
    try:
        with open(path) as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [row for row in reader]
    except FileNotFoundError as exc:
        raise InputError(f"input CSV not found: {path}") from exc
    except StopIteration as exc:
        raise InputError(f"input CSV is empty: {path}") from exc
    data = np.array([[float(x) for x in row] for row in rows])
    return header, data


def load_model_from_config(cfg, override=None) -> tuple:
    path = override or cfg.get("model")
    if not path:
        raise InputError("config lacks a 'model' path")
    try:
        with open(path) as fh:
            text = fh.read()
    except FileNotFoundError as exc:
        raise InputError(f"model file not found: {path}") from exc
    return parse_model(text), Path(path)


def sensor_specs_from_config(model, cfg) -> list:
    sensors_cfg = cfg.get("sensors", {})
    fp_pose = None
    if "fixed_base_pose" in sensors_cfg:
        pose_cfg = sensors_cfg["fixed_base_pose"]
        fp_pose = HomTransform.from_rpy(pose_cfg.get("xyz", [0, 0, 0]), pose_cfg.get("rpy", [0, 0, 0]))
    return default_sensor_specs(
        model,
        include_imus=sensors_cfg.get("include_imus", True),
        imu_variance=sensors_cfg.get("imu_variance", 1e-3),
        ddq_variance=sensors_cfg.get("ddq_variance", 1e-3),
        wrench_variance=sensors_cfg.get("wrench_variance", 1e-6),
        contact_links=sensors_cfg.get("contact_links", ()),
        contact_wrench_variance=sensors_cfg.get("contact_wrench_variance", 1e-3),
        base_wrench_variance=sensors_cfg.get("base_wrench_variance", 1e-3),
        fp_pose=fp_pose,
    )


def trajectory_from_config(model, cfg) -> TrajectorySpec:
    scen = cfg.get("scenario")
    if not scen:
        raise InputError("config lacks a 'scenario' block")
    tr_cfg = scen.get("trajectory", {})
    default = tr_cfg.get("default", {"kind": "constant", "value": 0.0})
    waveforms = []
    for joint in model.joints:
        waveforms.append(waveform_from_config(tr_cfg.get(joint.name, default)))
    return TrajectorySpec(waveforms, scen["duration"], scen["rate"])


def scenario_from_config(model, cfg) -> SyntheticScenario:
    scen = cfg.get("scenario", {})
    forces = {}
    for link, channels in scen.get("external_forces", {}).items():
        forces[link] = [waveform_from_config(c) for c in channels]
    return SyntheticScenario(
        model,
        trajectory_from_config(model, cfg),
        sensor_specs_from_config(model, cfg),
        external_forces=forces,
        seed=cfg.get("seed", 0),
    )


def covariances_from_config(cfg):
    cov = cfg.get("covariances", {})
    return cov.get("sigma_D", 1e-4), cov.get("sigma_d", 1e4), cov.get("mu_d", 0.0)


# ---------------------------------------------------------------------------
# commands


@click.group(name="mapdyn")
def cli():
    """Probabilistic whole-body inverse dynamics toolbox."""
    _setup_logging()


@cli.command("model-gen")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", "out_dir", default=None, type=click.Path())
def cmd_model_gen(config_path, out_dir):
    """Generate the anthropometric URDF template for a subject."""
    cfg = load_config(config_path)
    out = _out_dir(cfg, out_dir)
    subject_cfg = cfg.get("subject")
    if not subject_cfg:
        raise InputError("config lacks a 'subject' block")
    landmarks_path = subject_cfg.get("landmarks_file")
    if landmarks_path:
        try:
            with open(landmarks_path) as fh:
                landmarks = json.load(fh)["landmarks"]
        except FileNotFoundError as exc:
            raise InputError(f"landmarks file not found: {landmarks_path}") from exc
    else:
        landmarks = subject_cfg.get("landmarks")
        if landmarks is None:
            raise InputError("subject block needs 'landmarks' or 'landmarks_file'")
    subject = {"mass_total": subject_cfg["mass_total"], "landmarks": landmarks}
    xml = generate_human_template(subject, root=cfg.get("root_link", "Pelvis"))
    model = parse_model(xml)
    model_path = out / "model.xml"
    model_path.write_text(xml)
    pairs = len(model.sensors_of_kind("accelerometer"))
    click.echo(
        f"wrote {model_path}: {len(model.links)} links ({model.n_moving} moving), "
        f"{model.n_dof} DoF, {pairs} sensor pairs"
    )
    write_manifest(out, "model-gen", cfg, cfg.get("seed"), outputs=[model_path])


@cli.command("simulate")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--model", "model_override", default=None, type=click.Path())
@click.option("--out", "out_dir", default=None, type=click.Path())
@click.option("--seed", default=None, type=int, help="override the config seed")
def cmd_simulate(config_path, model_override, out_dir, seed):
    """Run a synthetic scenario: trajectory, ground truth, noisy observations."""
    cfg = load_config(config_path)
    if seed is not None:
        cfg["seed"] = seed
    out = _out_dir(cfg, out_dir)
    model, model_path = load_model_from_config(cfg, model_override)
    scenario = scenario_from_config(model, cfg)
    truth = generate_ground_truth(scenario)
    obs = generate_observations(scenario, truth)

    joint_names = [j.name for j in model.joints]
    traj_path = out / "trajectory.csv"
    header = (
        ["time"]
        + [f"q_{n}" for n in joint_names]
        + [f"qd_{n}" for n in joint_names]
        + [f"qdd_{n}" for n in joint_names]
    )
    write_csv(
        traj_path,
        header,
        np.column_stack([truth.times, truth.q, truth.qd, truth.qdd]),
    )

    obs_path = out / "observations.csv"
    names = channel_names(model, scenario.sensor_specs)
    write_csv(obs_path, ["time"] + names, np.column_stack([truth.times, obs]))

    layout = DynLayout(model)
    gt_path = out / "ground_truth.csv"
    gt_header = (
        ["time"] + [f"q_{n}" for n in joint_names] + [f"qd_{n}" for n in joint_names] + layout.column_names()
    )
    write_csv(gt_path, gt_header, np.column_stack([truth.times, truth.q, truth.qd, truth.d]))

    poses_path = out / "link_poses.csv"
    _write_link_poses(poses_path, model, truth)

    manifest = write_manifest(
        out, "simulate", cfg, cfg.get("seed", 0), inputs=[model_path],
        outputs=[traj_path, obs_path, gt_path, poses_path],
    )
    click.echo(f"simulated {truth.times.size} samples -> {out} (manifest {manifest.name})")


def _write_link_poses(path, model, truth):
    real = [l.name for l in model.links if not l.is_dummy]
    header = ["time"]
    for name in real:
        header += [f"{name}_{c}" for c in ("x", "y", "z", "roll", "pitch", "yaw")]
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for k in range(truth.times.size):
            poses = forward_kinematics(model, truth.q[k])
            row = [truth.times[k]]
            for name in real:
                h = poses[model.link_index[name]]
                row.extend(h.translation)
                row.extend(matrix_to_rpy(h.rotation))
            rows.append(row)
    write_csv(path, header, rows)


# worker-process state for parallel estimation
_WORKER = {}


def _estimate_worker_init(model_xml, sensors_cfg, cov_cfg, marginal_mode):
    try:
        # one BLAS thread per worker: the pool already saturates the cores
        import threadpoolctl

        threadpoolctl.threadpool_limits(1)
    except ImportError:
        pass
    model = parse_model(model_xml)
    specs = sensor_specs_from_config(model, {"sensors": sensors_cfg})
    layout = DynLayout(model)
    _WORKER["model"] = model
    _WORKER["constraints"] = ConstraintAssembler(model)
    _WORKER["measurements"] = MeasurementAssembler(model, specs)
    _WORKER["layout"] = layout
    _WORKER["cov"] = cov_cfg
    _WORKER["marginal_idx"] = _marginal_indices(layout, marginal_mode)
    _WORKER["solver"] = None


def _marginal_indices(layout, mode):
    if mode == "all":
        return np.arange(layout.size)
    if mode == "tau_ddq":
        return np.concatenate([layout.tau_indices(), layout.ddq_indices()])
    return layout.tau_indices()


def _estimate_chunk(args):
    indices, q_rows, qd_rows, y_rows = args
    casm = _WORKER["constraints"]
    masm = _WORKER["measurements"]
    sigma_D, sigma_d, mu_d = _WORKER["cov"]
    marg_idx = _WORKER["marginal_idx"]
    means = np.empty((len(indices), casm.layout.size))
    stds = np.empty((len(indices), marg_idx.size))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for row, (q, qd, y) in enumerate(zip(q_rows, qd_rows, y_rows)):
            mat_d, b_d = casm.assemble(q, qd)
            mat_y, b_y = masm.assemble(q, qd)
            problem = MapProblem(
                mat_d, b_d, mat_y, b_y, y,
                sigma_D=sigma_D, sigma_y=masm.variances, mu_d=mu_d, sigma_d=sigma_d,
            )
            precision, rhs = posterior_precision_terms(problem)
            if _WORKER["solver"] is None:
                from mapdyn.estimator import structural_pattern

                _WORKER["solver"] = SparseCholeskySolver(structural_pattern(problem))
            solver = _WORKER["solver"]
            solver.factorize(precision)
            means[row] = solver.solve(rhs)
            stds[row] = np.sqrt(solver.marginal_variances(marg_idx))
    return indices, means, stds


@cli.command("estimate")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--model", "model_override", default=None, type=click.Path())
@click.option("--out", "out_dir", default=None, type=click.Path())
@click.option("--workers", default=None, type=int, help="worker processes (default: cores)")
def cmd_estimate(config_path, model_override, out_dir, workers):
    """MAP estimation over an observation series (state CSV or IK from poses)."""
    cfg = load_config(config_path)
    out = _out_dir(cfg, out_dir)
    model, model_path = load_model_from_config(cfg, model_override)
    specs = sensor_specs_from_config(model, cfg)
    masm = MeasurementAssembler(model, specs)
    layout = DynLayout(model)
    sigma_D, sigma_d, mu_d = covariances_from_config(cfg)

    inputs_cfg = cfg.get("inputs", {})
    obs_path = inputs_cfg.get("observations")
    if not obs_path:
        raise InputError("config 'inputs.observations' is required")
    obs_header, obs_data = read_csv(obs_path)
    expected = ["time"] + channel_names(model, specs)
    if obs_header != expected:
        raise InputError("observation CSV channels do not match the sensor config")
    times = obs_data[:, 0]
    y_series = obs_data[:, 1:]

    input_files = [model_path, Path(obs_path)]
    if inputs_cfg.get("state"):
        header, data = read_csv(inputs_cfg["state"])
        n = model.n_dof
        if data.shape[1] < 1 + 2 * n:
            raise InputError(
                f"state CSV needs time plus q and qd columns ({1 + 2 * n}), found {data.shape[1]}"
            )
        q_series = data[:, 1: 1 + n]
        qd_series = data[:, 1 + n: 1 + 2 * n]
        input_files.append(Path(inputs_cfg["state"]))
    elif inputs_cfg.get("link_poses"):
        q_series, qd_series = _state_from_poses(model, cfg, inputs_cfg["link_poses"])
        input_files.append(Path(inputs_cfg["link_poses"]))
    else:
        raise InputError("config 'inputs' needs 'state' or 'link_poses'")
    if q_series.shape[0] != times.size:
        raise InputError("state and observation sample counts disagree")

    # rank condition checked once per run on the first sample
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        casm = ConstraintAssembler(model)
        mat_d, b_d = casm.assemble(q_series[0], qd_series[0])
        mat_y, b_y = masm.assemble(q_series[0], qd_series[0])
        MapProblem(
            mat_d, b_d, mat_y, b_y, y_series[0],
            sigma_D=sigma_D, sigma_y=masm.variances, mu_d=mu_d, sigma_d=sigma_d,
        ).check_rank()

    marginal_mode = cfg.get("marginals", "tau")
    marg_idx = _marginal_indices(layout, marginal_mode)
    n_workers = workers or cfg.get("workers") or (os.cpu_count() or 1)
    n_samples = times.size
    chunks = _make_chunks(n_samples, q_series, qd_series, y_series, n_workers)

    t_start = time.perf_counter()
    init_args = (
        model_path.read_text(),
        cfg.get("sensors", {}),
        (sigma_D, sigma_d, mu_d),
        marginal_mode,
    )
    if n_workers <= 1 or n_samples < 8:
        _estimate_worker_init(*init_args)
        results = [_estimate_chunk(c) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=n_workers, initializer=_estimate_worker_init, initargs=init_args) as pool:
            results = list(pool.map(_estimate_chunk, chunks))
    wall = time.perf_counter() - t_start

    means = np.empty((n_samples, layout.size))
    stds = np.empty((n_samples, marg_idx.size))
    for indices, mean_rows, std_rows in results:
        means[indices] = mean_rows
        stds[indices] = std_rows

    col_names = layout.column_names()
    est_path = out / "estimates.csv"
    write_csv(est_path, ["time"] + col_names, np.column_stack([times, means]))
    marg_path = out / "marginal_std.csv"
    marg_names = [col_names[i] for i in marg_idx]
    write_csv(marg_path, ["time"] + marg_names, np.column_stack([times, stds]))

    manifest = write_manifest(
        out, "estimate", cfg, cfg.get("seed"), inputs=input_files, outputs=[est_path, marg_path]
    )
    per_sample = wall / max(n_samples, 1) * 1e3
    click.echo(
        f"estimated {n_samples} samples in {wall:.2f} s ({per_sample:.1f} ms/sample, "
        f"{n_workers} workers) -> {out} (manifest {manifest.name})"
    )


def _make_chunks(n_samples, q_series, qd_series, y_series, n_workers):
    n_chunks = max(1, min(n_samples, n_workers * 4))
    bounds = np.array_split(np.arange(n_samples), n_chunks)
    return [
        (idx, q_series[idx], qd_series[idx], y_series[idx])
        for idx in bounds
        if idx.size
    ]


def _state_from_poses(model, cfg, poses_path):
    """IK + smoothing differentiation from a per-link world-pose series."""
    header, data = read_csv(poses_path)
    times = data[:, 0]
    col = {name: i for i, name in enumerate(header)}
    real = [l.name for l in model.links if not l.is_dummy]
    for name in real:
        if f"{name}_x" not in col:
            raise InputError(f"pose CSV lacks columns for link {name!r}")

    pairs = _real_link_pairs(model)
    n = model.n_dof
    q_series = np.zeros((times.size, n))
    q_prev = None
    for k in range(times.size):
        poses = {}
        for name in real:
            i0 = col[f"{name}_x"]
            xyz = data[k, i0: i0 + 3]
            rpy = data[k, i0 + 3: i0 + 6]
            poses[name] = HomTransform.from_rpy(xyz, rpy)
        targets = {}
        for parent, child in pairs:
            targets[(parent, child)] = poses[parent].inverse() @ poses[child]
        result = ik_frame_match(model, targets, q_init=q_prev)
        q_series[k] = result.q
        q_prev = result.q

    sg_cfg = cfg.get("sg", {})
    window = int(sg_cfg.get("window", 57))
    order = int(sg_cfg.get("order", 3))
    if times.size < window:
        window = max(order + 2 + (order % 2), min(window, times.size - (1 - times.size % 2)))
        if window % 2 == 0:
            window -= 1
        log.warning("short series: smoothing window reduced to %d", window)
    dt = float(np.median(np.diff(times))) if times.size > 1 else 1.0
    qd_series, _ = savitzky_golay_derivatives(q_series, dt, window=window, order=order)
    return q_series, qd_series


def _real_link_pairs(model):
    pairs = []
    for i in range(1, model.n_moving + 1):
        if model.links[i].is_dummy:
            continue
        k = model.parent[i]
        while k != 0 and model.links[k].is_dummy:
            k = model.parent[k]
        pairs.append((model.links[k].name, model.links[i].name))
    return pairs


@cli.command("fusion")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--model", "model_override", default=None, type=click.Path())
@click.option("--out", "out_dir", default=None, type=click.Path())
def cmd_fusion(config_path, model_override, out_dir):
    """Per-joint torque variance across nested measurement cases."""
    cfg = load_config(config_path)
    out = _out_dir(cfg, out_dir)
    model, model_path = load_model_from_config(cfg, model_override)
    fusion_cfg = cfg.get("fusion")
    if not fusion_cfg or len(fusion_cfg.get("cases", [])) < 2:
        raise InputError("fusion needs a 'fusion.cases' list with at least two cases")
    layout = DynLayout(model)
    sigma_D, sigma_d, mu_d = covariances_from_config(cfg)

    traj = trajectory_from_config(model, cfg)
    _, q_series, qd_series, _ = traj.sample()
    stride = max(1, q_series.shape[0] // int(fusion_cfg.get("max_states", 10)))
    states = list(zip(q_series[::stride], qd_series[::stride]))

    case_specs = []
    for case in fusion_cfg["cases"]:
        case_specs.append((case["name"], sensor_specs_from_config(model, {"sensors": case.get("sensors", {})})))

    assemblers = [MeasurementAssembler(model, specs) for _, specs in case_specs]
    nested = all(
        set(channel_names(model, case_specs[i][1])) <= set(channel_names(model, case_specs[i + 1][1]))
        for i in range(len(case_specs) - 1)
    )
    if not nested:
        log.warning("fusion cases are not nested by channel set; running per-case analysis anyway")

    tau_idx = layout.tau_indices()
    per_case = np.zeros((len(case_specs), model.n_dof))
    import scipy.sparse as sparse

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        casm = ConstraintAssembler(model)
        for q, qd in states:
            mat_d, b_d = casm.assemble(q, qd)
            empty = MapProblem(
                mat_d, b_d,
                sparse.csc_matrix((0, layout.size)), np.zeros(0), np.zeros(0),
                sigma_D=sigma_D, sigma_y=np.zeros(0), mu_d=mu_d, sigma_d=sigma_d,
            )
            if nested:
                # each case adds only its new channels on top of the previous one
                groups = []
                prev_names = set()
                for asm in assemblers:
                    names = channel_names(model, asm.specs)
                    new_rows = [i for i, nm in enumerate(names) if nm not in prev_names]
                    mat, bias = asm.assemble(q, qd)
                    groups.append((mat[new_rows], bias[new_rows], asm.variances[new_rows], np.zeros(len(new_rows))))
                    prev_names = set(names)
                stages = incremental_fusion(empty, groups, tau_idx, labels=[n for n, _ in case_specs])
                for ci, stage in enumerate(stages[1:]):
                    per_case[ci] += stage.marginal_variances
            else:
                for ci, asm in enumerate(assemblers):
                    mat, bias = asm.assemble(q, qd)
                    problem = MapProblem(
                        mat_d, b_d, mat, bias, np.zeros(asm.dim),
                        sigma_D=sigma_D, sigma_y=asm.variances, mu_d=mu_d, sigma_d=sigma_d,
                    )
                    per_case[ci] += _case_variance(problem, tau_idx)
    per_case /= len(states)

    rows = []
    names = [j.name for j in model.joints]
    header = ["joint"] + [name for name, _ in case_specs] + ["monotonic_non_increasing"]
    for j, joint_name in enumerate(names):
        variances = per_case[:, j]
        verdict = bool(np.all(np.diff(variances) <= 1e-12))
        rows.append([joint_name] + [repr(float(v)) for v in variances] + [str(verdict)])
    table_path = out / "fusion_variances.csv"
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    manifest = write_manifest(out, "fusion", cfg, cfg.get("seed"), inputs=[model_path], outputs=[table_path])
    click.echo(f"fusion table -> {table_path} (manifest {manifest.name})")


def _case_variance(problem, indices):
    from mapdyn.estimator import structural_pattern

    precision, _ = posterior_precision_terms(problem)
    solver = SparseCholeskySolver(structural_pattern(problem)).factorize(precision)
    return solver.marginal_variances(indices)


@cli.command("sensor-pose")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--model", "model_override", default=None, type=click.Path())
@click.option("--out", "out_dir", default=None, type=click.Path())
@click.option("--seed", default=None, type=int, help="override the config seed")
@click.option("--patch-model/--no-patch-model", default=False)
def cmd_sensor_pose(config_path, model_override, out_dir, seed, patch_model):
    """Calibrate accelerometer poses from synthetic excitation streams."""
    cfg = load_config(config_path)
    if seed is not None:
        cfg["seed"] = seed
    out = _out_dir(cfg, out_dir)
    model, model_path = load_model_from_config(cfg, model_override)
    traj = trajectory_from_config(model, cfg)
    calib_cfg = cfg.get("calibration", {})
    noise_std = calib_cfg.get("accelerometer_noise_std", 0.0)
    seed = cfg.get("seed", 0)

    results = {}
    accelerometers = model.sensors_of_kind("accelerometer")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for s_idx, sensor in enumerate(accelerometers):
            if model.link_index[sensor.parent_link] == 0:
                results[sensor.name] = {"ok": False, "error": "sensor sits on the fixed base"}
                continue
            streams = synthesize_sensor_streams(
                model, traj, sensor, noise_std=noise_std, rng=np.random.default_rng(seed + s_idx)
            )
            try:
                est = estimate_sensor_pose(*streams)
            except ExcitationError as exc:
                results[sensor.name] = {"ok": False, "error": str(exc)}
                continue
            results[sensor.name] = {
                "ok": True,
                "link": sensor.parent_link,
                "position": [float(v) for v in est.position],
                "rpy": [float(v) for v in est.rpy],
                "samples": est.samples,
                "residual": est.residual,
            }

    calib_path = out / "sensor_poses.json"
    with open(calib_path, "w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)

    outputs = [calib_path]
    if patch_model:
        patched = _patch_model_sensors(model, results)
        patched_path = out / "model_calibrated.xml"
        patched_path.write_text(patched)
        outputs.append(patched_path)
    manifest = write_manifest(out, "sensor-pose", cfg, seed, inputs=[model_path], outputs=outputs)
    ok = sum(1 for r in results.values() if r["ok"])
    click.echo(f"calibrated {ok}/{len(results)} sensors -> {calib_path} (manifest {manifest.name})")


def _patch_model_sensors(model, results):
    from mapdyn.model import emit_model
    from mapdyn.model.tree import KinematicTreeModel, SensorAttachment
    from mapdyn.spatial import rpy_to_matrix

    new_sensors = []
    for s in model.sensors:
        entry = results.get(s.name.replace("_gyro", "_accelerometer"))
        if entry and entry.get("ok"):
            pose = HomTransform(rpy_to_matrix(*entry["rpy"]), np.array(entry["position"]))
            new_sensors.append(SensorAttachment(s.name, s.kind, s.parent_link, pose))
        else:
            new_sensors.append(s)
    patched = KinematicTreeModel(model.name, list(model.links), list(model.joints), new_sensors, base=model.base.name)
    return emit_model(patched)


def _out_dir(cfg, override) -> Path:
    out = Path(override or cfg.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def main(argv=None):
    """Entry point mapping failures to the documented exit codes."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except click.exceptions.Abort:
        return EXIT_USAGE
    except (InputError, ModelError, TemplateError, FileNotFoundError) as exc:
        click.echo(f"input error: {exc}", err=True)
        return EXIT_INPUT
    except (RankDeficiencyError, EstimatorError, np.linalg.LinAlgError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
