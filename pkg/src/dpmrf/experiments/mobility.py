"""Mobility-style pipeline: synthetic event logs, discretization, weighting, tied chain fits."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..inference import ExactEngine
from ..junction_tree import build_junction_tree
from ..model import Dataset, ModelStructure, sufficient_statistics
from ..privacy import PrivacyBudget, check_contribution_cap, individual_contributions, perturb
from .grid import fit_estimator, holdout_loglik
from .synthetic import child_seed, gen_structure, tying_homogeneous_chain

log = logging.getLogger(__name__)

NULL = 0
EVENT_COLUMNS = ("user_id", "day", "timestamp", "location_id")
MINUTES_PER_DAY = 1440


@dataclass(frozen=True)
class MobilityParams:
    """Planted chain over the null state (absent) and locations 1..L, one step per interval."""

    num_locations: int = 20
    null_stay: float = 0.9
    loc_stay: float = 0.6
    leave: float = 0.1
    popularity_concentration: float = 2.0


def planted_chain(params: MobilityParams, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Transition matrix over L + 1 states and its stationary distribution."""
    L = params.num_locations
    P = np.zeros((L + 1, L + 1))
    pop = rng.dirichlet(np.full(L, params.popularity_concentration))
    P[NULL, NULL] = params.null_stay
    P[NULL, 1:] = (1 - params.null_stay) * pop
    for l in range(1, L + 1):
        move = rng.dirichlet(np.ones(L - 1))
        others = [m for m in range(1, L + 1) if m != l]
        P[l, others] = (1 - params.loc_stay - params.leave) * move
        P[l, l] = params.loc_stay
        P[l, NULL] = params.leave
    w, v = np.linalg.eig(P.T)
    pi = np.real(v[:, np.argmin(np.abs(w - 1))])
    return P, pi / pi.sum()


def simulate_chain(P: np.ndarray, pi: np.ndarray, num_seqs: int, length: int,
                   rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0
    out = np.empty((num_seqs, length), dtype=np.int64)
    c0 = np.cumsum(pi)
    c0[-1] = 1.0
    out[:, 0] = np.searchsorted(c0, rng.random(num_seqs), side="right")
    for t in range(1, length):
        u = rng.random(num_seqs)
        out[:, t] = (u[:, None] >= cum[out[:, t - 1]]).sum(axis=1)
    return out


def gen_mobility(num_users: int, num_days: int, seed: int, params: MobilityParams = MobilityParams(),
                 interval_minutes: int = 10) -> tuple[list[tuple], np.ndarray]:
    """Event log of a planted chain: one connection event per present interval.

    Each (user, day) path starts from the stationary distribution. Returns the
    rows (user_id, day, timestamp in minutes, location_id) and the transition matrix.
    """
    rng = np.random.default_rng(seed)
    P, pi = planted_chain(params, rng)
    steps = MINUTES_PER_DAY // interval_minutes
    paths = simulate_chain(P, pi, num_users * num_days, steps, rng)
    offsets = np.round(rng.random(paths.shape) * interval_minutes, 3)
    k, t = np.nonzero(paths != NULL)
    ts = np.minimum(t * interval_minutes + offsets[k, t], (t + 1) * interval_minutes - 1e-3).round(3)
    user, day = np.divmod(k, num_days)
    rows = [(f"u{u:05d}", int(d), float(x), int(loc))
            for u, d, x, loc in zip(user.tolist(), day.tolist(), ts.tolist(), paths[k, t].tolist())]
    return rows, P


def write_events(path: str, rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for r in rows:
            w.writerow(r)


def read_events(path: str) -> list[list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows and [c.strip() for c in rows[0]] == list(EVENT_COLUMNS):
        rows = rows[1:]
    return rows


@dataclass
class IngestResult:
    data: Dataset
    structure: ModelStructure
    tying: np.ndarray
    skipped_rows: int
    num_individuals: int
    individuals: list[tuple[str, int]] = field(repr=False, default_factory=list)


def _parse(row, num_locations):
    if len(row) != 4:
        raise ValueError("expected 4 fields")
    user = str(row[0]).strip()
    if not user:
        raise ValueError("empty user id")
    day = int(row[1])
    ts = float(row[2])
    if not (0.0 <= ts < MINUTES_PER_DAY) or day < 0:
        raise ValueError("timestamp or day out of range")
    loc_raw = str(row[3]).strip()
    loc = NULL if loc_raw in ("", "null", "NULL") else int(loc_raw)
    if loc < 0 or (num_locations is not None and loc > num_locations):
        raise ValueError("location out of range")
    return user, day, ts, loc


def mobility_ingest(events: Iterable[Sequence], interval_minutes: int = 10, segment_hours: int = 1,
                    num_locations: int | None = None) -> IngestResult:
    """Discretize an event log into weighted one-segment records.

    Each (user, day) is one individual. Its location in an interval is that of
    the interval's last event, null if there is none. The day is cut into
    segments; K counts the in-segment edges whose endpoints are not both null.
    A segment with a active edges becomes a record of weight a / K, so every
    contributing individual adds exactly 1 to each table. All-null segments
    and all-null days contribute nothing. Malformed rows are skipped and counted.
    """
    if MINUTES_PER_DAY % interval_minutes or (60 * segment_hours) % interval_minutes:
        raise ValueError("intervals must tile segments and days")
    steps = MINUTES_PER_DAY // interval_minutes
    seg_len = 60 * segment_hours // interval_minutes
    skipped = 0
    last: dict[tuple[str, int], dict[int, tuple[float, int]]] = {}
    max_loc = 0
    for row in events:
        try:
            user, day, ts, loc = _parse(row, num_locations)
        except (ValueError, TypeError):
            skipped += 1
            continue
        slot = int(ts // interval_minutes)
        slots = last.setdefault((user, day), {})
        prev = slots.get(slot)
        if prev is None or ts >= prev[0]:
            slots[slot] = (ts, loc)
        max_loc = max(max_loc, loc)
    if skipped:
        log.warning("skipped %d malformed event rows", skipped)
    L = num_locations if num_locations is not None else max_loc
    structure = gen_structure("time-homogeneous-chain", seg_len, L + 1)
    recs, weights, ids, individuals = [], [], [], []
    for key in sorted(last):
        seq = np.full(steps, NULL, dtype=np.int64)
        for slot, (_, loc) in last[key].items():
            seq[slot] = loc
        segs = seq.reshape(-1, seg_len)
        active = ((segs[:, :-1] != NULL) | (segs[:, 1:] != NULL)).sum(axis=1)
        K = int(active.sum())
        if K == 0:
            continue
        keep = active > 0
        idx = len(individuals)
        individuals.append(key)
        recs.append(segs[keep])
        weights.append(active[keep] / K)
        ids.append(np.full(int(keep.sum()), idx))
    if recs:
        data = Dataset(np.vstack(recs), np.concatenate(weights), np.concatenate(ids))
    else:
        data = Dataset(np.zeros((0, seg_len), dtype=np.int64), np.zeros(0), np.zeros(0, dtype=np.int64))
    check_contribution_cap(data, structure)
    return IngestResult(data, structure, tying_homogeneous_chain(structure), skipped, len(individuals), individuals)


def split_individuals(data: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    ids = np.asarray(data.ids)
    people = np.unique(ids)
    rng = np.random.default_rng(seed)
    test = rng.permutation(people)[: int(round(test_fraction * people.size))]
    mask = np.isin(ids, test)

    def part(m):
        return Dataset(data.records[m], data.weight_vector()[m], ids[m])

    return part(~mask), part(mask)


@dataclass(frozen=True)
class MobilitySpec:
    num_users: int = 2500
    num_days: int = 4
    num_locations: int = 20
    epsilon_grid: tuple[float, ...] = (0.01, 0.1, 1.0)
    estimators: tuple[str, ...] = ("naive-projected", "cgm", "nonprivate")
    master_seed: int = 0
    lam: float = 1e-3
    max_em_iters: int = 50
    test_fraction: float = 0.25
    params: MobilityParams = MobilityParams()

    @classmethod
    def from_dict(cls, d: dict) -> "MobilitySpec":
        d = dict(d)
        params = MobilityParams(**d.pop("params", {}))
        for k in ("epsilon_grid", "estimators"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(params=params, **d)


@dataclass
class MobilityRow:
    epsilon: float
    estimator: str
    holdout_ll: float
    converged: bool
    N_train: float


def mobility_experiment(spec: MobilitySpec) -> tuple[list[MobilityRow], IngestResult]:
    """Tied time-homogeneous chain fits on a 75/25 split by individual; holdout LL per record.

    N is the public number of contributing training individuals. The
    non-private fit does not depend on epsilon and is reported once per epsilon.
    """
    params = MobilityParams(**{**spec.params.__dict__, "num_locations": spec.num_locations})
    events, _ = gen_mobility(spec.num_users, spec.num_days, child_seed(spec.master_seed, "population"), params)
    ing = mobility_ingest(events, num_locations=spec.num_locations)
    train, test = split_individuals(ing.data, spec.test_fraction, child_seed(spec.master_seed, "split"))
    s = ing.structure
    engine = ExactEngine(build_junction_tree(s))
    n = sufficient_statistics(train, s)
    N = float(np.unique(train.ids).size)
    rows = []
    cache = {}
    for e_idx, eps in enumerate(spec.epsilon_grid):
        release = perturb(n, PrivacyBudget(eps), child_seed(spec.master_seed, "noise", e_idx))
        for name in spec.estimators:
            if name == "nonprivate" and name in cache:
                fit = cache[name]
            else:
                fit = fit_estimator(name, release, n, N, engine, spec.lam,
                                    child_seed(spec.master_seed, name, e_idx), spec.max_em_iters, ing.tying)
                cache[name] = fit
            log_z = engine.run(fit.theta_hat).log_partition
            ll = holdout_loglik(fit.theta_hat, test.records, test.weight_vector(), s, log_z)
            rows.append(MobilityRow(float(eps), name, ll, fit.converged, N))
    return rows, ing


def max_table_contribution(data: Dataset, structure: ModelStructure) -> float:
    c = individual_contributions(data, structure)
    return float(c.max()) if c.size else 0.0


def transition_tv(theta: np.ndarray, structure: ModelStructure, P: np.ndarray) -> np.ndarray:
    """Per-row total variation between a fitted chain's first transition and P."""
    mu = ExactEngine(build_junction_tree(structure)).run(theta).marginals
    pair = mu.table(1)
    cond = pair / np.maximum(pair.sum(axis=1, keepdims=True), 1e-300)
    return 0.5 * np.abs(cond - P).sum(axis=1)


def nan_safe_median(values: Iterable[float]) -> float:
    v = [x for x in values if not math.isnan(x)]
    return float(np.median(v)) if v else math.nan
