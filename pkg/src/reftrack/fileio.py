"""Text artifact formats.  All floats are written with shortest round-trip
repr, so read(write(x)) is bit-exact.

Trajectory file: one header line, then one line of 4 angles per step:
    # trajectory v1 id=<id> dt=<dt> joints=swing,boom,arm,bucket config=<hash>

Dataset file: a '#' header block (config hash, seed, per-group sigma/clean
flags), then one line per transition in the documented column order:
    traj_id t o1..o8 qr1..qr4 qstar1..qstar4 u1..u4 done
"""
from __future__ import annotations

import os

import numpy as np

from .collect import Dataset, TrajectoryRun
from .core import Trajectory


class DataFormatError(RuntimeError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_header(line: str, path, line_no: int) -> dict:
    fields = {}
    for token in line.lstrip("#").split():
        if "=" in token:
            key, value = token.split("=", 1)
            fields[key] = value
    return fields


def write_trajectory(traj: Trajectory, path, config_hash: str = "") -> None:
    with open(path, "w") as f:
        f.write(f"# trajectory v1 id={traj.id or 'anon'} dt={_fmt(traj.dt)} "
                f"joints=swing,boom,arm,bucket config={config_hash or 'none'}\n")
        for p in traj.points_array():
            f.write(" ".join(_fmt(v) for v in p) + "\n")


def read_trajectory(path, max_step: float = 0.05):
    """Returns (Trajectory, header dict)."""
    with open(path) as f:
        lines = f.readlines()
    if not lines or not lines[0].startswith("#"):
        raise DataFormatError(path, 1, "missing trajectory header line")
    header = _parse_header(lines[0], path, 1)
    if "dt" not in header:
        raise DataFormatError(path, 1, "header lacks dt")
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise DataFormatError(path, i, f"expected 4 angles, found {len(parts)}")
        try:
            rows.append([float(v) for v in parts])
        except ValueError as e:
            raise DataFormatError(path, i, str(e))
    try:
        traj = Trajectory.from_array(float(header["dt"]), np.asarray(rows),
                                     id=header.get("id"), max_step=max_step)
    except ValueError as e:
        raise DataFormatError(path, 1, f"invalid trajectory: {e}")
    return traj, header


def write_trajectories(trajs, directory, prefix: str, config_hash: str = "") -> list:
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i, traj in enumerate(trajs):
        path = os.path.join(directory, f"{prefix}_{i:03d}.traj")
        write_trajectory(traj, path, config_hash)
        paths.append(path)
    return paths


def read_trajectories(directory, prefix: str, max_step: float = 0.05):
    names = sorted(n for n in os.listdir(directory)
                   if n.startswith(f"{prefix}_") and n.endswith(".traj"))
    out = []
    for n in names:
        traj, _header = read_trajectory(os.path.join(directory, n), max_step=max_step)
        out.append(traj)
    return out


DATASET_COLUMNS = 1 + 1 + 8 + 4 + 4 + 4 + 1  # traj_id t obs qr qstar u done


def write_dataset(dataset: Dataset, path) -> None:
    meta = dataset.meta
    with open(path, "w") as f:
        f.write("# dataset v1\n")
        f.write(f"# config={meta.get('config', 'none')} plant={meta.get('plant', 'none')} "
                f"seed={meta.get('seed', 'none')} "
                f"sigma_max={meta.get('sigma_max', 'none')} "
                f"noise_ratio={meta.get('noise_ratio', 'none')}\n")
        for gid, run in enumerate(dataset.runs):
            f.write(f"# group id={gid} source={run.source_id or 'anon'} "
                    f"sigma={_fmt(run.sigma)} clean={int(run.clean)} rows={len(run)}\n")
        for gid, run in enumerate(dataset.runs):
            last = len(run) - 1
            for t in range(len(run)):
                vals = ([str(gid), str(t)]
                        + [_fmt(v) for v in run.obs[t]]
                        + [_fmt(v) for v in run.qr_next[t]]
                        + [_fmt(v) for v in run.qstar_next[t]]
                        + [_fmt(v) for v in run.u[t]]
                        + [str(int(t == last))])
                f.write(" ".join(vals) + "\n")


def read_dataset(path) -> Dataset:
    with open(path) as f:
        lines = f.readlines()
    if not lines or "dataset v1" not in lines[0]:
        raise DataFormatError(path, 1, "not a dataset file")
    meta = {}
    groups = {}
    body_start = None
    for i, line in enumerate(lines[1:], start=2):
        if not line.startswith("#"):
            body_start = i
            break
        fields = _parse_header(line, path, i)
        if "group" in line.split()[1]:
            gid = int(fields["id"])
            groups[gid] = {
                "source": fields.get("source", ""),
                "sigma": float(fields["sigma"]),
                "rows": int(fields["rows"]),
            }
        else:
            meta.update(fields)
    if body_start is None:
        raise DataFormatError(path, len(lines), "dataset has no transition rows")
    rows_by_group = {gid: [] for gid in groups}
    for i, line in enumerate(lines[body_start - 1:], start=body_start):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != DATASET_COLUMNS:
            raise DataFormatError(path, i,
                                  f"expected {DATASET_COLUMNS} columns, found {len(parts)}")
        try:
            gid = int(parts[0])
            t = int(parts[1])
            vals = [float(v) for v in parts[2:22]]
            done = parts[22] == "1"
        except ValueError as e:
            raise DataFormatError(path, i, str(e))
        if gid not in rows_by_group:
            raise DataFormatError(path, i, f"unknown group id {gid}")
        expected_t = len(rows_by_group[gid])
        if t != expected_t:
            raise DataFormatError(path, i, f"group {gid}: expected t={expected_t}, found {t}")
        rows_by_group[gid].append((vals, done))
    runs = []
    for gid in sorted(groups):
        g = groups[gid]
        rows = rows_by_group[gid]
        if len(rows) != g["rows"]:
            raise DataFormatError(path, len(lines),
                                  f"group {gid}: header says {g['rows']} rows, found {len(rows)}")
        for t, (_vals, done) in enumerate(rows):
            if done != (t == len(rows) - 1):
                raise DataFormatError(path, len(lines),
                                      f"group {gid}: done flag misplaced at t={t}")
        arr = np.asarray([v for v, _d in rows])
        runs.append(TrajectoryRun(g["source"], g["sigma"], arr[:, 0:8], arr[:, 8:12],
                                  arr[:, 12:16], arr[:, 16:20]))
    parsed_meta = dict(meta)
    for key in ("seed",):
        if key in parsed_meta and parsed_meta[key] != "none":
            parsed_meta[key] = int(parsed_meta[key])
    for key in ("sigma_max",):
        if key in parsed_meta and parsed_meta[key] != "none":
            parsed_meta[key] = float(parsed_meta[key])
    return Dataset(runs=runs, meta=parsed_meta)


def write_loss_curve(curve, path) -> None:
    if not curve:
        open(path, "w").close()
        return
    keys = list(curve[0].keys())
    with open(path, "w") as f:
        f.write("# " + " ".join(keys) + "\n")
        for row in curve:
            f.write(" ".join(_fmt(row[k]) if isinstance(row[k], float) else str(row[k])
                             for k in keys) + "\n")


def write_metric_records(reports, path, config_hash: str = "") -> None:
    """Machine-readable metric rows: one line per trajectory plus a mean line.

    Columns: label traj is it_h smt1_deg smt2_deg mae_deg rmse_deg fmae_deg
    etd_mae_cm etd_fmae_cm (missing interaction counts print as '-').
    """
    from .evaluate import METRIC_KEYS

    with open(path, "w") as f:
        f.write(f"# metrics v1 config={config_hash or 'none'}\n")
        f.write("# label traj is it_h " + " ".join(METRIC_KEYS) + "\n")
        for rep in reports:
            is_s = str(rep.interaction_steps) if rep.interaction_steps is not None else "-"
            it_s = (_fmt(round(rep.interaction_hours, 2))
                    if rep.interaction_steps is not None else "-")
            for traj_id, row in sorted(rep.per_traj.items()):
                f.write(" ".join([rep.label.replace(" ", "_"), str(traj_id), is_s, it_s]
                                 + [_fmt(row[k]) for k in METRIC_KEYS]) + "\n")
            f.write(" ".join([rep.label.replace(" ", "_"), "mean", is_s, it_s]
                             + [_fmt(rep.means[k]) for k in METRIC_KEYS]) + "\n")


def write_series(run, traj, path) -> None:
    """Per-step tracking curves for external plotting: t, desired, measured,
    reference and command per joint."""
    pts = traj.points_array()
    with open(path, "w") as f:
        f.write("# series v1 traj=%s\n" % (traj.id or "anon"))
        f.write("# t qstar1..4 q1..4 qdot1..4 qr1..4 u1..4\n")
        qr = run.qr_time()
        for t in range(len(run)):
            vals = ([_fmt(t * traj.dt)]
                    + [_fmt(v) for v in pts[t]]
                    + [_fmt(v) for v in run.obs[t]]
                    + [_fmt(v) for v in qr[t]]
                    + [_fmt(v) for v in run.u[t]])
            f.write(" ".join(vals) + "\n")
