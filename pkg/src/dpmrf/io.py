"""File formats: model and release JSON, dataset CSV, fit JSON, result CSV."""
from __future__ import annotations

import csv
import json
import math
from typing import Any, Iterable, Sequence

import numpy as np

from .model import CliqueTableSet, Dataset, DomainError, DomainSpec, ModelStructure
from .naive import FitResult
from .privacy import PrivateRelease


def _dump(path: str, obj: Any) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def _load(path: str) -> dict:
    with open(path) as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise DomainError(f"{path}: expected a JSON object")
    return obj


def structure_to_dict(s: ModelStructure) -> dict:
    return {"domain": list(s.domain.cardinalities), "cliques": [list(c) for c in s.cliques]}


def structure_from_dict(d: dict) -> ModelStructure:
    try:
        return ModelStructure(DomainSpec(tuple(d["domain"])), tuple(tuple(c) for c in d["cliques"]))
    except KeyError as exc:
        raise DomainError(f"missing field {exc}") from None


def tables_to_dict(t: CliqueTableSet) -> dict[str, list[float]]:
    s = t.structure
    return {s.clique_key(k): [float(v) for v in t.table(k).ravel()] for k in range(s.num_cliques)}


def tables_from_dict(s: ModelStructure, d: dict, role: str) -> CliqueTableSet:
    vals = np.empty(s.dim)
    for k in range(s.num_cliques):
        key = s.clique_key(k)
        if key not in d:
            raise DomainError(f"no table for clique {key}")
        block = np.asarray(d[key], dtype=float)
        if block.size != s.sizes[k]:
            raise DomainError(f"table {key} has {block.size} cells, expected {s.sizes[k]}")
        vals[s.block(k)] = block
    return CliqueTableSet(s, vals, role)


def save_model(path: str, s: ModelStructure, theta: np.ndarray | None = None, **extra) -> None:
    """Model JSON: {domain, cliques, theta}; theta may be omitted for a bare structure."""
    d = structure_to_dict(s)
    if theta is not None:
        d["theta"] = [float(v) for v in theta]
    d.update(extra)
    _dump(path, d)


def load_model(path: str) -> tuple[ModelStructure, np.ndarray | None, dict]:
    d = _load(path)
    s = structure_from_dict(d)
    theta = None
    if "theta" in d:
        theta = np.asarray(d["theta"], dtype=float)
        if theta.shape != (s.dim,):
            raise DomainError(f"theta has length {theta.size}, expected {s.dim}")
    return s, theta, d


def save_release(path: str, release: PrivateRelease, N: float | None = None) -> None:
    """Release JSON: {epsilon, sensitivity, seed, tables} plus the structure and the public N."""
    finite = math.isfinite(release.epsilon)
    d = {
        # JSON has no infinity; a noiseless release stores null
        "epsilon": release.epsilon if finite else None,
        "sensitivity": release.sensitivity,
        "noise_scale": release.noise_scale if finite else 0.0,
        "seed": release.seed,
        **structure_to_dict(release.structure),
        "tables": tables_to_dict(release.y),
    }
    if N is not None:
        d["N"] = float(N)
    _dump(path, d)


def load_release(path: str) -> tuple[PrivateRelease, float | None]:
    d = _load(path)
    s = structure_from_dict(d)
    try:
        y = tables_from_dict(s, d["tables"], "noisy")
        eps = d["epsilon"]
        release = PrivateRelease(y, math.inf if eps is None else float(eps), float(d["sensitivity"]), d.get("seed"))
    except KeyError as exc:
        raise DomainError(f"release is missing field {exc}") from None
    return release, d.get("N")


def save_dataset(path: str, data: Dataset) -> None:
    """One record per row: x0..x{T-1}, then ``weight`` and ``id`` when present."""
    T = data.records.shape[1]
    header = [f"x{t}" for t in range(T)]
    if data.weights is not None:
        header.append("weight")
    if data.ids is not None:
        header.append("id")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(data)):
            row = [int(v) for v in data.records[i]]
            if data.weights is not None:
                row.append(repr(float(data.weights[i])))
            if data.ids is not None:
                row.append(int(data.ids[i]))
            w.writerow(row)


def load_dataset(path: str) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DomainError(f"{path}: empty dataset file")
    header = [h.strip() for h in rows[0]]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    wcol = header.index("weight") if "weight" in header else None
    icol = header.index("id") if "id" in header else None
    body = rows[1:]
    try:
        recs = np.array([[int(r[i]) for i in xcols] for r in body], dtype=np.int64).reshape(len(body), len(xcols))
        weights = np.array([float(r[wcol]) for r in body]) if wcol is not None else None
        ids = np.array([int(r[icol]) for r in body], dtype=np.int64) if icol is not None else None
    except (ValueError, IndexError) as exc:
        raise DomainError(f"{path}: malformed dataset row ({exc})") from None
    return Dataset(recs, weights, ids)


def save_fit(path: str, fit: FitResult, with_trace: bool = False, **extra) -> None:
    d = fit.to_dict(with_trace)
    d.update(extra)
    _dump(path, d)


def load_fit_theta(path: str) -> np.ndarray:
    d = _load(path)
    if "theta" not in d:
        raise DomainError(f"{path}: no theta field")
    return np.asarray(d["theta"], dtype=float)


def _cell(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: str, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Long-format CSV with shortest round-trip float formatting, so reruns are byte-identical."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def write_sidecar(path: str, obj: dict) -> None:
    _dump(path, obj)
