"""File formats: dataset CSV, chain CSV with JSON sidecar, INI configs, and
run manifests.

Datasets travel as one CSV with header ``subject_id,t,y,x_1..x_p,z_1..z_q[,w]``,
rows grouped by subject with ascending t, plus an optional ``*.truth.json``
sidecar recording the generating parameters. Chains travel as a long-format
CSV ``iter,block,coord,value`` plus a ``*.meta.json`` sidecar carrying the
config, seed, step size, runtime, sampler tag, and corrected flag. Configs are
INI files read by configparser. Manifests are JSON records of versions, seeds,
and sha256 file hashes.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import os
import platform
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .model import Dataset
from .sgld import Chain, SgldConfig

CONFIG_SECTIONS = ("experiment", "sgld", "model", "prior", "transforms", "truth")
COVARIANCE_PARAMETERIZATION = "log-sd-atanh-rho"


def _fmt(value: float) -> str:
    """Shortest decimal string that round-trips the float exactly."""
    return repr(float(value))


def _jsonable(obj):
    """Recursively convert to plain JSON types; non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):  # before int: bool subclasses int
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def truth_path(dataset_path) -> Path:
    return Path(dataset_path).with_suffix(".truth.json")


def meta_path(chain_path) -> Path:
    return Path(chain_path).with_suffix(".meta.json")


# ---------------------------------------------------------------------------
# datasets


def save_dataset(path, data: Dataset, truth: dict | None = None) -> None:
    """Write one dataset CSV (and a truth sidecar when truth is given)."""
    path = Path(path)
    p, q = data.p, data.q
    header = (
        ["subject_id", "t", "y"]
        + [f"x_{j + 1}" for j in range(p)]
        + [f"z_{j + 1}" for j in range(q)]
    )
    if data.w is not None:
        header.append("w")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n_subjects):
            sid = data.subject_ids[i]
            for t in range(data.y[i].shape[0]):
                row = [sid, t + 1, _fmt(data.y[i][t])]
                row += [_fmt(v) for v in data.x[i][t]]
                row += [_fmt(v) for v in data.z[i][t]]
                if data.w is not None:
                    row.append(int(data.w[i]))
                writer.writerow(row)
    if truth is not None:
        _write_json(truth_path(path), truth)


def load_dataset(path) -> Dataset:
    """Read a dataset CSV back into per-subject arrays."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        x_cols = [f for f in fields if f.startswith("x_")]
        z_cols = [f for f in fields if f.startswith("z_")]
        x_cols.sort(key=lambda s: int(s[2:]))
        z_cols.sort(key=lambda s: int(s[2:]))
        if not {"subject_id", "t", "y"}.issubset(fields) or not x_cols or not z_cols:
            raise ValueError(f"{path}: missing required dataset columns")
        has_w = "w" in fields
        order: list[str] = []
        rows: dict[str, list] = {}
        for row in reader:
            sid = row["subject_id"]
            if sid not in rows:
                rows[sid] = []
                order.append(sid)
            rows[sid].append(row)

    ys, xs, zs, ws, sids = [], [], [], [], []
    for sid in order:
        group = sorted(rows[sid], key=lambda r: int(r["t"]))
        ys.append(np.array([float(r["y"]) for r in group]))
        xs.append(np.array([[float(r[c]) for c in x_cols] for r in group]))
        zs.append(np.array([[float(r[c]) for c in z_cols] for r in group]))
        sids.append(int(sid))
        if has_w:
            flags = {r["w"] for r in group}
            if len(flags) != 1:
                raise ValueError(f"{path}: subject {sid} has inconsistent w flags")
            ws.append(int(flags.pop()))
    return Dataset(
        y=ys, x=xs, z=zs, w=np.array(ws) if has_w else None, subject_ids=sids
    )


def load_truth(dataset_path) -> dict | None:
    """Truth sidecar for a dataset CSV, or None when absent."""
    sidecar = truth_path(dataset_path)
    if not sidecar.exists():
        return None
    with open(sidecar) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# chains


def save_chain(path, chain: Chain) -> None:
    """Write chain draws as iter,block,coord,value plus a JSON sidecar."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "block", "coord", "value"])
        for k in range(chain.n_samples):
            it = int(chain.iterations[k])
            for j, (block, coord) in enumerate(chain.labels):
                writer.writerow([it, block, int(coord), _fmt(chain.samples[k, j])])

    extra = dict(chain.meta)
    config = dataclasses.asdict(chain.config) if chain.config is not None else None
    sidecar = {
        "sampler": extra.pop("sampler", "sgld"),
        "corrected": bool(extra.pop("corrected", False)),
        "seed": extra.pop(
            "seed", chain.config.seed if chain.config is not None else None
        ),
        "step_size": chain.step_size,
        "delta": chain.delta,
        "n_subjects": chain.n_subjects,
        "labels": [[block, int(coord)] for block, coord in chain.labels],
        "initial": chain.initial,
        "final": chain.final,
        "runtime_seconds": chain.runtime_seconds,
        "diagnostics": chain.diagnostics,
        "config": config,
        "extra": extra,
    }
    _write_json(meta_path(path), sidecar)


def load_chain(path) -> Chain:
    """Read a chain CSV and its sidecar back into a Chain."""
    path = Path(path)
    with open(meta_path(path)) as fh:
        meta = json.load(fh)
    labels = [(block, int(coord)) for block, coord in meta["labels"]]
    d = len(labels)

    values: list[float] = []
    iterations: list[int] = []
    last_iter = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            it = int(row[0])
            if it != last_iter:
                iterations.append(it)
                last_iter = it
            values.append(float(row[3]))
    if len(values) != len(iterations) * d:
        raise ValueError(f"{path}: row count is not a multiple of dimension {d}")
    samples = np.asarray(values).reshape(len(iterations), d)

    config = None
    if meta.get("config") is not None:
        cfg = dict(meta["config"])
        if cfg.get("omega0") is not None:
            cfg["omega0"] = np.asarray(cfg["omega0"], dtype=float)
        config = SgldConfig(**cfg)
    extra = dict(meta.get("extra") or {})
    extra["sampler"] = meta.get("sampler", "sgld")
    extra["corrected"] = bool(meta.get("corrected", False))
    if meta.get("seed") is not None:
        extra.setdefault("seed", meta["seed"])

    def _float(v):
        return float("nan") if v is None else float(v)

    return Chain(
        samples=samples,
        iterations=np.asarray(iterations),
        initial=np.asarray(meta["initial"], dtype=float),
        final=np.asarray(meta["final"], dtype=float),
        step_size=_float(meta.get("step_size")),
        delta=_float(meta.get("delta")),
        n_subjects=int(meta["n_subjects"]),
        labels=labels,
        config=config,
        diagnostics=meta.get("diagnostics") or {},
        runtime_seconds=float(meta.get("runtime_seconds") or 0.0),
        meta=extra,
    )


def save_gradient_diagnostics(path, members) -> None:
    """Per-subject gradient norms and noise traces, one CSV row per subject."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "grad_norm", "psi_trace"])
        for member in members:
            writer.writerow(
                [
                    member.subject,
                    _fmt(np.linalg.norm(member.grad)),
                    _fmt(np.trace(member.cov)),
                ]
            )


# ---------------------------------------------------------------------------
# configs


def load_config(path) -> dict[str, dict[str, str]]:
    """Read an INI config into {section: {key: raw string}}.

    Sections are restricted to the documented set; a [transforms] section may
    only request the log-sd/atanh-rho covariance parameterization, which is
    the one the model implements.
    """
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    out: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in CONFIG_SECTIONS:
            raise ValueError(
                f"unknown config section [{section}]; expected one of {CONFIG_SECTIONS}"
            )
        out[section] = dict(parser.items(section))
    requested = out.get("transforms", {}).get("covariance", COVARIANCE_PARAMETERIZATION)
    if requested != COVARIANCE_PARAMETERIZATION:
        raise ValueError(
            f"unsupported covariance parameterization {requested!r}; "
            f"only {COVARIANCE_PARAMETERIZATION!r} is implemented"
        )
    return out


def merge_options(defaults: dict, config: dict, flags: dict) -> dict:
    """Three-layer precedence: config overrides defaults, flags override both.

    Flag values equal to None mean "not given on the command line" and are
    ignored. Config values arrive as strings and are coerced to the type of
    the default when one exists; keys without a default are rejected so typos
    fail loudly.
    """
    merged = dict(defaults)
    for key, raw in config.items():
        if key not in merged:
            raise ValueError(f"unknown config key {key!r}")
        if merged[key] is None:
            merged[key] = raw
        else:
            merged[key] = _coerce_like(merged[key], raw, key)
    for key, value in flags.items():
        if value is not None:
            merged[key] = value
    return merged


def _coerce_like(default, raw: str, key: str):
    if isinstance(default, bool):
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"config key {key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, (list, tuple)):
        parts = [part.strip() for part in raw.split(",") if part.strip()]
        kind = type(default[0]) if len(default) else float
        return [kind(part) for part in parts]
    return raw


# ---------------------------------------------------------------------------
# manifests


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(path, *, seeds: dict, files, extra: dict | None = None) -> None:
    """JSON run manifest: library versions, seeds, and file hashes.

    File paths are recorded relative to the manifest's directory so the run
    folder stays relocatable.
    """
    path = Path(path)
    entries = {}
    for f in files:
        f = Path(f)
        rel = os.path.relpath(f, start=path.parent)
        entries[rel] = {"sha256": file_sha256(f), "bytes": f.stat().st_size}
    payload = {
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "glmm_sgld": __version__,
        },
        "seeds": seeds,
        "files": entries,
    }
    if extra:
        payload.update(extra)
    _write_json(path, payload)


def load_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def verify_manifest(path) -> list[str]:
    """Names of manifest files that are missing or whose hashes changed."""
    path = Path(path)
    manifest = load_manifest(path)
    bad = []
    for rel, entry in manifest.get("files", {}).items():
        target = path.parent / rel
        if not target.exists() or file_sha256(target) != entry["sha256"]:
            bad.append(rel)
    return bad
