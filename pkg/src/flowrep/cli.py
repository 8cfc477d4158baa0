"""Configuration-driven command-line pipeline.

Stages: generate | train | embed | compare | decode | verify | repro. Each
invocation runs one stage; all state lives on disk (CSV payloads with JSON
manifests), and every artifact carries the hash of the configuration that
produced it.

Exit codes: 0 success, 1 runtime or numerical failure, 2 config/schema error.
"""

from __future__ import annotations

import csv
import functools
import json
import sys
from pathlib import Path

import click
import numpy as np
from scipy.stats import spearmanr

from .decode import fit_linear_decoder, knn_decode, r_squared
from .dynamics import (default_rnn_stats, sample_gaussian_lowrank_rnn,
                       simulate_vanderpol, toy_fields,
                       vectors_from_trajectories, DMTSProtocol)
from .io import (FLOAT_FMT, config_hash, load_dataset, load_manifest,
                 read_embeddings_csv, read_report, write_embeddings_csv,
                 write_matrix_csv, write_report, write_trajectory_dataset,
                 write_vectorfield_dataset)
from .metrics import classical_mds, cluster_distance_matrix, distance_matrix
from .model import (TrainConfig, embed as embed_conditions, load_checkpoint,
                    prepare_condition, save_checkpoint, train)

DEFAULT_CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


class ConfigError(ValueError):
    """Raised for malformed configuration or schema mismatches."""


def _guard(fn):
    """Map exceptions onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, json.JSONDecodeError, FileNotFoundError,
                KeyError) as e:
            click.echo(f"config/schema error: {e}", err=True)
            sys.exit(2)
        except ValueError as e:
            click.echo(f"config/schema error: {e}", err=True)
            sys.exit(2)
        except Exception as e:  # numerical or runtime failure
            click.echo(f"runtime error: {e}", err=True)
            sys.exit(1)

    return wrapper


def _load_config(path, seed=None, out=None) -> dict:
    if path is None:
        raise ConfigError("--config is required")
    with open(path) as f:
        cfg = json.load(f)
    if not isinstance(cfg, dict) or "system" not in cfg:
        raise ConfigError("config must be a JSON object with a 'system' key")
    cfg.setdefault("seed", 0)
    cfg.setdefault("params", {})
    cfg.setdefault("model", {})
    cfg.setdefault("compare", {})
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["out"] = out
    if "out" not in cfg:
        raise ConfigError("config must name an output directory ('out')")
    return cfg


def _out_dir(cfg, sub=None) -> Path:
    out = Path(cfg["out"])
    if sub:
        out = out / sub
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_config(cfg) -> TrainConfig:
    try:
        return TrainConfig(seed=cfg["seed"], **cfg["model"])
    except TypeError as e:
        raise ConfigError(f"bad model parameters: {e}")


# ---------------------------------------------------------------------------
# dataset generation

def _generate_toy(params, seed):
    kinds = params.get("kinds",
                       ["constant-left", "constant-right",
                        "vortex-cw", "vortex-ccw"])
    n = int(params.get("n", 300))
    fields = [toy_fields(kind, n, seed=seed * 37 + ci, condition=ci)
              for ci, kind in enumerate(kinds)]
    cond_params = [{"kind": kind} for kind in kinds]
    return "vectorfield", fields, cond_params


def _generate_vanderpol(params, seed):
    from .data import TrajectoryEnsemble
    from .experiments import _lift
    n_mu = int(params.get("n_mu", 20))
    lo, hi = params.get("mu_range", (-0.25, 0.25))
    mus = np.linspace(lo, hi, n_mu)
    beta = float(params.get("beta", -0.25))
    drop = int(params.get("drop", 100))
    ensembles, cond_params = [], []
    for ci, mu in enumerate(mus):
        ens = simulate_vanderpol(
            mu, n_traj=int(params.get("n_traj", 60)),
            T=float(params.get("T", 20.0)), dt=float(params.get("dt", 0.1)),
            init_annulus=tuple(params.get("init_annulus", (1.0, 1.5))),
            seed=seed * 1009 + ci, condition=ci)
        if drop:
            # discard the initial transient, which is shared across conditions
            ens = TrajectoryEnsemble(trials=[t[drop:] for t in ens.trials],
                                     condition=list(ens.condition), dt=ens.dt)
        ensembles.append(_lift(ens, beta))
        cond_params.append({"mu": float(mu), "beta": beta})
    return "trajectories", ensembles, cond_params


def _generate_rnn(params, seed):
    from .experiments import _rnn_field
    N = int(params.get("N", 100))
    gains = list(params.get("gains", [0.1, 0.28, 0.46, 0.64, 0.82, 1.0]))
    stats = default_rnn_stats(**params.get("stats", {}))
    spec = sample_gaussian_lowrank_rnn(N, stats, seed=seed)
    protocol = DMTSProtocol()
    rng = np.random.default_rng(seed + 77)
    fields, cond_params = [], []
    for ci, gain in enumerate(gains):
        field = _rnn_field(spec, protocol, gain,
                           int(params.get("n_trials", 12)),
                           float(params.get("dt", 10.0)),
                           seed=seed + ci, condition=ci, part="stim",
                           max_points=int(params.get("max_points", 350)),
                           rng=rng)
        fields.append(field)
        cond_params.append({"gain": float(gain)})
    return "vectorfield", fields, cond_params


GENERATORS = {"toy-fields": _generate_toy,
              "vanderpol": _generate_vanderpol,
              "rnn": _generate_rnn}


def _write_targets(out: Path, cond_params):
    """Targets CSV (condition_id, scalar params) when the conditions carry
    numeric parameters; consumed by the decode stage."""
    keys = [k for k, v in cond_params[0].items()
            if isinstance(v, (int, float)) and not isinstance(v, bool)]
    if not keys:
        return
    with open(out / "targets.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["condition_id"] + keys)
        for ci, p in enumerate(cond_params):
            w.writerow([ci] + [FLOAT_FMT % p[k] for k in keys])


# ---------------------------------------------------------------------------
# commands

@click.group()
def main():
    """Vector-field representation pipeline.

    Thread count is controlled by the OMP_NUM_THREADS environment variable.
    """


@main.command()
@click.option("--config", "config_path", type=click.Path(), required=True,
              help="JSON experiment configuration.")
@click.option("--seed", type=int, default=None, help="Override master seed.")
@click.option("--out", type=click.Path(), default=None,
              help="Override output directory.")
@_guard
def generate(config_path, seed, out):
    """Simulate a synthetic dataset and write CSV + manifest."""
    cfg = _load_config(config_path, seed, out)
    system = cfg["system"]
    if system not in GENERATORS:
        raise ConfigError(f"unknown system: {system!r}")
    kind, payload, cond_params = GENERATORS[system](cfg["params"], cfg["seed"])
    data_dir = _out_dir(cfg, "data")
    generator = {"system": system, "seed": cfg["seed"], "params": cfg["params"]}
    if kind == "trajectories":
        path = write_trajectory_dataset(data_dir, payload, generator,
                                        cond_params)
    else:
        path = write_vectorfield_dataset(data_dir, payload, generator,
                                         cond_params)
    _write_targets(data_dir, cond_params)
    click.echo(f"wrote {path}")


def _prepare_all(cfg, data_dir):
    manifest, fields = load_dataset(data_dir)
    if manifest["generator"]["system"] != cfg["system"]:
        raise ConfigError(
            f"dataset was generated by {manifest['generator']['system']!r}, "
            f"config expects {cfg['system']!r}")
    tc = _train_config(cfg)
    conds = [prepare_condition(fields[c], tc, condition=c)
             for c in sorted(fields)]
    return manifest, tc, conds


@main.command(name="train")
@click.option("--config", "config_path", type=click.Path(), required=True)
@click.option("--data", "data_dir", type=click.Path(), default=None,
              help="Dataset directory (default: <out>/data).")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--geometry-aware/--geometry-agnostic", "aware", default=None,
              help="Override the embedding mode from the config.")
@_guard
def train_cmd(config_path, data_dir, seed, out, aware):
    """Train the contrastive embedding; write checkpoint + embeddings."""
    cfg = _load_config(config_path, seed, out)
    if aware is not None:
        cfg["model"]["geometry_aware"] = aware
    data_dir = Path(data_dir) if data_dir else Path(cfg["out"]) / "data"
    manifest, tc, conds = _prepare_all(cfg, data_dir)
    model, latent, history = train(conds, tc)
    run_dir = _out_dir(cfg, "run")
    h = config_hash(cfg)
    save_checkpoint(run_dir / "checkpoint.json", model,
                    extra={"config_hash": h,
                           "geometry_aware": tc.geometry_aware,
                           "dataset_hash": manifest["config_hash"]})
    write_embeddings_csv(run_dir / "embeddings.csv", latent,
                         extra={"config_hash": h,
                                "dataset_hash": manifest["config_hash"]})
    with open(run_dir / "training_curve.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tr, va in history:
            w.writerow([epoch, FLOAT_FMT % tr, FLOAT_FMT % va])
    click.echo(f"trained {len(history)} epochs; wrote {run_dir}")


@main.command(name="embed")
@click.option("--config", "config_path", type=click.Path(), required=True)
@click.option("--checkpoint", type=click.Path(), default=None,
              help="Checkpoint file (default: <out>/run/checkpoint.json).")
@click.option("--data", "data_dir", type=click.Path(), default=None)
@click.option("--out", type=click.Path(), default=None)
@_guard
def embed_cmd(config_path, checkpoint, data_dir, out):
    """Forward pass of a trained model over a dataset (no training)."""
    cfg = _load_config(config_path, None, out)
    checkpoint = checkpoint or Path(cfg["out"]) / "run" / "checkpoint.json"
    data_dir = Path(data_dir) if data_dir else Path(cfg["out"]) / "data"
    model = load_checkpoint(checkpoint)
    manifest, fields = load_dataset(data_dir)
    conds = [prepare_condition(fields[c], model.cfg, condition=c)
             for c in sorted(fields)]
    latent = embed_conditions(conds, model)
    run_dir = _out_dir(cfg, "run")
    write_embeddings_csv(run_dir / "embeddings.csv", latent,
                         extra={"config_hash": config_hash(cfg),
                                "dataset_hash": manifest["config_hash"]})
    click.echo(f"wrote {run_dir / 'embeddings.csv'}")


@main.command()
@click.option("--config", "config_path", type=click.Path(), required=True)
@click.option("--embeddings", type=click.Path(), default=None)
@click.option("--mds-dim", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
@_guard
def compare(config_path, embeddings, mds_dim, out):
    """Pairwise transport distances, MDS layout, and cluster labels."""
    cfg = _load_config(config_path, None, out)
    run_dir = Path(cfg["out"]) / "run"
    embeddings = embeddings or run_dir / "embeddings.csv"
    latent = read_embeddings_csv(embeddings)
    if len(np.unique(latent.condition_id)) < 2:
        raise ConfigError("compare needs at least two conditions")
    comp = cfg["compare"]
    mds_dim = mds_dim or int(comp.get("mds_dim", 2))
    D = distance_matrix(latent, subsample=comp.get("subsample", 200),
                        seed=cfg["seed"])
    run_dir.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(run_dir / "distance.csv", D.d, D.labels, "d")
    mds = classical_mds(D.d, mds_dim)
    write_matrix_csv(run_dir / "mds.csv", mds, D.labels, "mds")
    n_clusters = int(comp.get("n_clusters", 2))
    labels = cluster_distance_matrix(D.d, n_clusters)
    write_matrix_csv(run_dir / "clusters.csv", labels[:, None], D.labels,
                     "cluster")
    summary = {"config_hash": config_hash(cfg), "n_conditions": len(D.labels),
               "mds_dim": mds_dim, "n_clusters": n_clusters}
    param = _scalar_condition_param(Path(cfg["out"]) / "data", D.labels)
    if param is not None:
        name, vals = param
        coord = classical_mds(D.d, 1)[:, 0]
        summary["condition_param"] = name
        summary["spearman_mds_param"] = float(
            abs(spearmanr(coord, vals).statistic))
        if (vals > 0).any() and (vals < 0).any():
            sign = vals > 0
            agree = (labels == labels[sign.argmax()]) == sign
            summary["sign_split_accuracy"] = float(
                max(agree.mean(), 1 - agree.mean()))
            for tag, branch in (("neg", ~sign), ("pos", sign)):
                sub = D.d[np.ix_(branch, branch)]
                c1 = classical_mds(sub, 1)[:, 0]
                summary[f"spearman_{tag}"] = float(
                    abs(spearmanr(c1, vals[branch]).statistic))
    write_report(run_dir / "compare_summary.json", summary)
    click.echo(json.dumps(summary, indent=1, sort_keys=True, default=str))


def _scalar_condition_param(data_dir, labels):
    """First numeric per-condition parameter from the manifest, if any."""
    try:
        manifest = load_manifest(data_dir)
    except (ValueError, FileNotFoundError):
        return None
    entries = {e["id"]: e.get("params", {}) for e in manifest["conditions"]}
    first = entries.get(int(labels[0]), {})
    for key, v in first.items():
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            vals = [entries[int(c)].get(key) for c in labels]
            if all(isinstance(x, (int, float)) for x in vals):
                if len(set(vals)) > 1:
                    return key, np.asarray(vals, dtype=float)
    return None


@main.command()
@click.option("--config", "config_path", type=click.Path(), required=True)
@click.option("--embeddings", type=click.Path(), default=None)
@click.option("--targets", type=click.Path(), default=None,
              help="CSV with condition_id plus target columns "
                   "(default: <out>/data/targets.csv).")
@click.option("--method", type=click.Choice(["ole", "knn"]), default="ole")
@click.option("--metric", type=click.Choice(["euclidean", "cosine"]),
              default=None, help="Decoder metric (ole: euclidean, knn: cosine).")
@click.option("--folds", type=int, default=10)
@click.option("--out", type=click.Path(), default=None)
@_guard
def decode(config_path, embeddings, targets, method, metric, folds, out):
    """Cross-validated decoding of condition parameters from embeddings."""
    cfg = _load_config(config_path, None, out)
    expected = {"ole": "euclidean", "knn": "cosine"}[method]
    if metric is None:
        metric = expected
    elif metric != expected:
        raise ConfigError(f"the {method} decoder uses the {expected} metric")
    run_dir = Path(cfg["out"]) / "run"
    embeddings = embeddings or run_dir / "embeddings.csv"
    targets = targets or Path(cfg["out"]) / "data" / "targets.csv"
    latent = read_embeddings_csv(embeddings)
    raw = np.genfromtxt(targets, delimiter=",", names=True)
    if raw.ndim == 0:
        raw = raw.reshape(1)
    names = list(raw.dtype.names)
    if names[0] != "condition_id" or len(names) < 2:
        raise ConfigError("targets CSV must start with a condition_id column "
                          "followed by target columns")
    lookup = {int(c): i for i, c in enumerate(raw["condition_id"])}
    try:
        rows = [lookup[int(c)] for c in latent.condition_id]
    except KeyError as e:
        raise ConfigError(f"no target row for condition {e}")
    Y = np.column_stack([raw[n] for n in names[1:]])[rows]
    Z = latent.z
    rng = np.random.default_rng(cfg["seed"])
    order = rng.permutation(len(Z))
    fold_scores = []
    for f in range(folds):
        test = order[f::folds]
        tr = np.setdiff1d(order, test)
        if method == "ole":
            dec, _, _ = fit_linear_decoder(Z[tr], Y[tr], folds=2)
            pred = dec.predict(Z[test])
        else:
            pred, _ = knn_decode(Z[tr], Y[tr], Z[test],
                                 k=int(cfg.get("decode", {}).get("k", 5)))
        fold_scores.append(r_squared(Y[test], pred))
    report = {"config_hash": config_hash(cfg), "method": method,
              "metric": metric, "targets": names[1:], "folds": folds,
              "fold_r2": fold_scores,
              "mean_r2": float(np.mean(fold_scores))}
    run_dir.mkdir(parents=True, exist_ok=True)
    write_report(run_dir / "decode_report.json", report)
    click.echo(json.dumps(report, indent=1, sort_keys=True))


@main.command()
@click.argument("directory", type=click.Path(exists=True))
@_guard
def verify(directory):
    """Cross-check config hashes and row counts of artifacts in DIRECTORY."""
    root = Path(directory)
    problems = []
    checked = 0
    for mpath in root.rglob("manifest.json"):
        manifest = load_manifest(mpath.parent)
        if manifest["config_hash"] != config_hash(manifest["generator"]):
            problems.append(f"{mpath}: config hash mismatch")
        try:
            load_dataset(mpath.parent)  # validates schema and row counts
        except ValueError as e:
            problems.append(f"{mpath.parent}: {e}")
        checked += 1
    for meta in root.rglob("*.meta.json"):
        doc = read_report(meta)
        if "config_hash" not in doc:
            problems.append(f"{meta}: missing config hash")
        checked += 1
    for rpt in list(root.rglob("compare_summary.json")) + \
            list(root.rglob("decode_report.json")):
        if "config_hash" not in read_report(rpt):
            problems.append(f"{rpt}: missing config hash")
        checked += 1
    if problems:
        for p in problems:
            click.echo(p, err=True)
        raise RuntimeError(f"{len(problems)} artifact(s) failed verification")
    click.echo(f"verified {checked} artifact(s): all hashes consistent")


@main.command()
@click.option("--out", type=click.Path(), required=True,
              help="Directory for the summary JSON.")
@click.option("--seed", type=int, default=0)
@click.option("--quick", is_flag=True,
              help="Shrunken versions of all experiments (same code paths).")
@_guard
def repro(out, seed, quick):
    """Run the three synthetic experiments end to end and write summary.json."""
    from .experiments import repro_summaries
    summary = repro_summaries(seed=seed, quick=quick)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    summary["config_hash"] = config_hash({"seed": seed, "quick": quick})
    write_report(out / "summary.json", summary)
    click.echo(json.dumps(summary, indent=1, sort_keys=True))


if __name__ == "__main__":
    main()
