"""File formats: CSV payloads with JSON manifests, plus config hashing.

Bulk numerics go to CSV with a fixed column order; metadata and reports go to
JSON. Every artifact carries the hash of the configuration that produced it so
`verify` can cross-check a directory.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .data import PointCloud, TrajectoryEnsemble, VectorFieldSample

DATASET_FORMAT = "flowrep-dataset-v1"
FLOAT_FMT = "%.17g"


def config_hash(obj) -> str:
    """sha256 of the canonical (sorted-key, compact) JSON serialisation."""
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"),
                         default=_jsonify)
    return hashlib.sha256(payload.encode()).hexdigest()


def _jsonify(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer, np.floating, np.bool_)):
        return x.item()
    raise TypeError(f"not JSON-serialisable: {type(x)}")


def _fmt(x) -> str:
    return FLOAT_FMT % x


def write_trajectory_dataset(out_dir, ensembles: list, generator: dict,
                             condition_params: list | None = None) -> Path:
    """Write trajectory ensembles (one per condition) as dataset.csv + manifest.

    Rows are time samples: trial_id, condition_id, t, x_1..x_d. Returns the
    manifest path.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not ensembles:
        raise ValueError("no conditions to write")
    d = ensembles[0].dim
    dt = ensembles[0].dt
    cols = ["trial_id", "condition_id", "t"] + [f"x_{i+1}" for i in range(d)]
    rows = 0
    cond_rows = {}
    trial_offset = 0
    with open(out / "dataset.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for ens in ensembles:
            if ens.dim != d or ens.dt != dt:
                raise ValueError("conditions disagree on dimension or dt")
            for ti, (traj, c) in enumerate(zip(ens.trials, ens.condition)):
                for s, state in enumerate(traj):
                    w.writerow([trial_offset + ti, int(c), _fmt(s * dt)]
                               + [_fmt(v) for v in state])
                rows += len(traj)
                cond_rows[int(c)] = cond_rows.get(int(c), 0) + len(traj)
            trial_offset += len(ens.trials)
    return _write_manifest(out, "trajectories", cols, d, dt, rows, cond_rows,
                           generator, condition_params)


def write_vectorfield_dataset(out_dir, fields: list, generator: dict,
                              condition_params: list | None = None) -> Path:
    """Write vector-field samples (one per condition); rows carry x and v columns."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not fields:
        raise ValueError("no conditions to write")
    d = fields[0].base.dim
    cols = (["trial_id", "condition_id", "t"]
            + [f"x_{i+1}" for i in range(d)] + [f"v_{i+1}" for i in range(d)])
    rows = 0
    cond_rows = {}
    with open(out / "dataset.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for fld in fields:
            if fld.base.dim != d:
                raise ValueError("conditions disagree on dimension")
            for i in range(fld.n):
                c = int(fld.base.condition_id[i])
                w.writerow([int(fld.base.trial_id[i]), c, _fmt(0.0)]
                           + [_fmt(v) for v in fld.base.points[i]]
                           + [_fmt(v) for v in fld.vectors[i]])
                cond_rows[c] = cond_rows.get(c, 0) + 1
            rows += fld.n
    return _write_manifest(out, "vectorfield", cols, d, None, rows, cond_rows,
                           generator, condition_params)


def _write_manifest(out: Path, kind, cols, d, dt, rows, cond_rows, generator,
                    condition_params):
    conditions = []
    for ci, c in enumerate(sorted(cond_rows)):
        entry = {"id": c, "n_rows": cond_rows[c]}
        if condition_params is not None:
            entry["params"] = condition_params[ci]
        conditions.append(entry)
    manifest = {
        "format": DATASET_FORMAT,
        "kind": kind,
        "csv": "dataset.csv",
        "columns": cols,
        "dim": d,
        "dt": dt,
        "rows": rows,
        "conditions": conditions,
        "generator": generator,
    }
    manifest["config_hash"] = config_hash(generator)
    path = out / "manifest.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return path


def load_manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise ValueError(f"no manifest.json in {data_dir}")
    with open(path) as f:
        manifest = json.load(f)
    if manifest.get("format") != DATASET_FORMAT:
        raise ValueError("unrecognized dataset format")
    return manifest


def load_dataset(data_dir) -> tuple:
    """Read manifest + CSV; returns (manifest, {condition: VectorFieldSample}).

    Trajectory datasets are converted to vector fields by forward differences
    within each trial.
    """
    manifest = load_manifest(data_dir)
    raw = np.genfromtxt(Path(data_dir) / manifest["csv"], delimiter=",",
                        names=True)
    if raw.ndim == 0:
        raw = raw.reshape(1)
    names = list(raw.dtype.names)
    if names != [c.replace("-", "_") for c in manifest["columns"]]:
        raise ValueError("CSV columns do not match the manifest schema")
    if len(raw) != manifest["rows"]:
        raise ValueError("CSV row count does not match the manifest")
    d = manifest["dim"]
    trial = raw["trial_id"].astype(int)
    cond = raw["condition_id"].astype(int)
    X = np.column_stack([raw[f"x_{i+1}"] for i in range(d)])
    fields = {}
    if manifest["kind"] == "vectorfield":
        V = np.column_stack([raw[f"v_{i+1}"] for i in range(d)])
        for c in np.unique(cond):
            sel = cond == c
            cloud = PointCloud(X[sel], cond[sel], trial[sel])
            fields[int(c)] = VectorFieldSample(cloud, V[sel])
    elif manifest["kind"] == "trajectories":
        from .dynamics import vectors_from_trajectories
        for c in np.unique(cond):
            sel = cond == c
            trials = [X[sel][trial[sel] == t] for t in np.unique(trial[sel])]
            ens = TrajectoryEnsemble(trials=trials,
                                     condition=[int(c)] * len(trials),
                                     dt=manifest["dt"])
            fields[int(c)] = vectors_from_trajectories(ens)
    else:
        raise ValueError(f"unknown dataset kind: {manifest['kind']}")
    expected = {e["id"]: e["n_rows"] for e in manifest["conditions"]}
    counts = {int(c): int((cond == c).sum()) for c in np.unique(cond)}
    if counts != expected:
        raise ValueError("per-condition row counts do not match the manifest")
    return manifest, fields


def write_embeddings_csv(path, latent, extra: dict | None = None):
    """Embeddings CSV: condition_id, z_1..z_E, trailing hash comment line."""
    E = latent.z.shape[1]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["condition_id"] + [f"z_{i+1}" for i in range(E)])
        for c, row in zip(latent.condition_id, latent.z):
            w.writerow([int(c)] + [_fmt(v) for v in row])
    if extra is not None:
        with open(Path(path).with_suffix(".meta.json"), "w") as f:
            json.dump(extra, f, indent=1, sort_keys=True)


def read_embeddings_csv(path):
    from .data import LatentDistribution
    raw = np.genfromtxt(path, delimiter=",", names=True)
    if raw.ndim == 0:
        raw = raw.reshape(1)
    names = list(raw.dtype.names)
    if names[0] != "condition_id" or not all(n.startswith("z_") for n in names[1:]):
        raise ValueError("not an embeddings CSV")
    z = np.column_stack([raw[n] for n in names[1:]])
    return LatentDistribution(z=z, condition_id=raw["condition_id"].astype(int))


def write_matrix_csv(path, mat, labels, prefix: str):
    """Square or rectangular matrix with a label column."""
    mat = np.asarray(mat)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["label"] + [f"{prefix}_{i+1}" for i in range(mat.shape[1])])
        for lab, row in zip(labels, mat):
            w.writerow([lab] + [_fmt(v) for v in row])


def read_matrix_csv(path):
    raw = np.genfromtxt(path, delimiter=",", names=True)
    if raw.ndim == 0:
        raw = raw.reshape(1)
    names = list(raw.dtype.names)
    labels = raw[names[0]]
    mat = np.column_stack([raw[n] for n in names[1:]])
    return labels, mat


def write_report(path, report: dict):
    with open(path, "w") as f:
        json.dump(report, f, indent=1, sort_keys=True, default=_jsonify)


def read_report(path):
    with open(path) as f:
        return json.load(f)
