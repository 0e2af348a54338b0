"""Branching Wiener process simulator.

The process starts from one particle. Each generation, every particle dies
and leaves Y offspring (Y drawn from a finite offspring law), and each
offspring immediately diffuses for one unit of time: its position is the
parent's death position plus an independent standard d-dimensional Gaussian.
Snapshots are taken after displacement, so siblings are conditionally
independent given the parent's position.

Randomness is counter-based rather than sequential: every draw is a pure
hash of (seed, particle lineage id, purpose tag), where a child's 128-bit
lineage id is itself a hash of (parent id, birth rank).  Two consequences:

* runs are bitwise reproducible for a fixed seed regardless of worker count
  or particle processing order, and
* a stored snapshot can be continued under a fresh seed with randomness
  independent of the original run.

The hash is the splitmix64 finalizer; uniforms feed the exact inverse
Gaussian CDF (scipy's ndtri).  The sampler name recorded in snapshot file
headers is ``splitmix64-ndtri``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy.special import ndtri

from .errors import PopulationCapError, ValidationError
from . import regions as _regions

SAMPLER_NAME = "splitmix64-ndtri"
DEFAULT_POPULATION_CAP = 10**8
SNAPSHOT_FORMAT_VERSION = 1

_U64 = np.uint64
_MASK = (1 << 64) - 1
_M1 = _U64(0xBF58476D1CE4E5B9)
_M2 = _U64(0x94D049BB133111EB)
_GOLDEN = 0x9E3779B97F4A7C15
_SALT = 0xC2B2AE3D27D4EB4F
_TAG_OFFSPRING = 0x01D306AA5F35F1D1
_TAG_POSITION = 0x7C15E4D5B9A30001
_TAG_STRIDE = 0x636F6F7264313375

_INV_2_53 = 2.0**-53


def _mix(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, elementwise on uint64 arrays.

    Scalar keys go through :func:`_mix_int` instead — numpy warns on scalar
    uint64 wraparound but is silent (and correct) for arrays.
    """
    x = (x ^ (x >> _U64(30))) * _M1
    x = (x ^ (x >> _U64(27))) * _M2
    return x ^ (x >> _U64(31))


def _mix_int(x: int) -> int:
    """splitmix64 finalizer on a Python int (explicit 64-bit masking)."""
    x &= _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def _draw_u01(seed: int, id_hi, id_lo, tag: int):
    """Uniform(0,1) keyed by (seed, lineage id, tag); never returns 0 or 1."""
    key = _U64((seed * _GOLDEN + tag) & _MASK)
    h = _mix(id_lo ^ key)
    h = _mix(h + id_hi)
    h = _mix(h ^ _U64(tag & _MASK))
    return ((h >> _U64(11)).astype(np.float64) + 0.5) * _INV_2_53


def _child_ids(parent_hi, parent_lo, rank):
    """128-bit id of the rank-th child (rank counts from 0 among siblings);
    rank is a uint64 array."""
    r = rank + _U64(1)
    a = _mix(parent_lo ^ (_U64(_GOLDEN) * r))
    b = _mix(parent_hi ^ (_U64(_SALT) * r))
    return _mix(b + parent_lo), _mix(a + parent_hi)


def _root_ids(seed: int, count: int):
    idx = np.arange(1, count + 1, dtype=np.uint64)
    s0 = _U64(_mix_int(seed * _GOLDEN + 1))
    s1 = _U64(_mix_int(seed * _SALT + 2))
    return _mix(s0 ^ (idx * _M1)), _mix(s1 ^ (idx * _M2))


def _check_seed(seed) -> int:
    if not isinstance(seed, (int, np.integer)):
        raise ValidationError(f"seed must be an integer, got {seed!r}")
    if not 0 <= int(seed) < 2**64:
        raise ValidationError(f"seed {seed} outside [0, 2^64)")
    return int(seed)


@dataclass(frozen=True)
class OffspringLaw:
    """Finite offspring distribution p_0..p_L.

    Strict (production) laws must be supercritical with spread: mean > 1 and
    variance > 0.  ``test_mode=True`` admits any valid pmf — deterministic
    doubling, pure death, critical laws — for controlled experiments.
    """

    pmf: tuple[float, ...]
    test_mode: bool = False

    def __post_init__(self):
        pmf = tuple(float(p) for p in self.pmf)
        object.__setattr__(self, "pmf", pmf)
        if len(pmf) == 0:
            raise ValidationError("pmf must be non-empty")
        if any(not (p >= 0 and math.isfinite(p)) for p in pmf):
            raise ValidationError("pmf entries must be finite and >= 0")
        if abs(math.fsum(pmf) - 1.0) > 1e-12:
            raise ValidationError(f"pmf sums to {math.fsum(pmf)!r}, not 1")
        mean = math.fsum(ell * p for ell, p in enumerate(pmf))
        var = math.fsum((ell - mean) ** 2 * p for ell, p in enumerate(pmf))
        if not self.test_mode:
            if not mean > 1.0:
                raise ValidationError(
                    f"offspring mean {mean} is not supercritical (need > 1, "
                    "or pass test_mode=True)"
                )
            if not var > 0.0:
                raise ValidationError(
                    "offspring variance is 0 (need > 0, or pass test_mode=True)"
                )
        object.__setattr__(self, "_mean", mean)
        object.__setattr__(self, "_variance", var)
        cum = np.cumsum(np.asarray(pmf, dtype=np.float64))
        cum[-1] = 1.0
        cum.setflags(write=False)
        object.__setattr__(self, "_cumulative", cum)
        det = None
        for ell, p in enumerate(pmf):
            if p == 1.0:
                det = ell
        object.__setattr__(self, "_deterministic", det)

    @property
    def mean(self) -> float:
        return self._mean

    @property
    def variance(self) -> float:
        return self._variance

    @property
    def max_children(self) -> int:
        return len(self.pmf) - 1

    @property
    def deterministic_value(self):
        """The fixed offspring count when the pmf is a point mass, else None."""
        return self._deterministic

    def factorial_moment(self, k: int) -> float:
        """E[Y (Y-1) ... (Y-k+1)] for k <= 8."""
        if not 0 <= k <= 8:
            raise ValidationError(f"factorial moment order {k} outside [0, 8]")
        return math.fsum(
            p * math.perm(ell, k)
            for ell, p in enumerate(self.pmf)
            if ell >= k
        )


@dataclass(eq=False)
class Snapshot:
    """The particle population at one generation.

    ``positions`` has shape (n, d).  ``id_hi``/``id_lo`` hold the two words
    of each particle's 128-bit lineage id; they are None for snapshots read
    back from disk (the file format stores positions only), in which case
    the snapshot can be analyzed but not advanced.
    """

    t: int
    positions: np.ndarray
    id_hi: np.ndarray | None = None
    id_lo: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2:
            raise ValidationError("positions must have shape (n, d)")
        if self.t < 0:
            raise ValidationError(f"negative generation index {self.t}")
        if (self.id_hi is None) != (self.id_lo is None):
            raise ValidationError("id_hi and id_lo must be set together")
        if self.id_hi is not None:
            self.id_hi = np.ascontiguousarray(self.id_hi, dtype=np.uint64)
            self.id_lo = np.ascontiguousarray(self.id_lo, dtype=np.uint64)
            if self.id_hi.shape != (self.n,) or self.id_lo.shape != (self.n,):
                raise ValidationError("lineage id arrays must match positions")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    @property
    def has_ids(self) -> bool:
        return self.id_hi is not None


_CONFIG_KEYS = {
    "d",
    "pmf",
    "seed",
    "t_max",
    "population_cap",
    "snapshot_times",
    "initial_position",
    "test_mode",
}


@dataclass(frozen=True)
class SimConfig:
    """Everything needed to reproduce a run."""

    d: int
    pmf: tuple[float, ...]
    seed: int
    t_max: int
    population_cap: int = DEFAULT_POPULATION_CAP
    snapshot_times: tuple[int, ...] | None = None
    initial_position: tuple[float, ...] | None = None
    test_mode: bool = False

    def __post_init__(self):
        if self.d < 1:
            raise ValidationError(f"dimension {self.d} must be >= 1")
        object.__setattr__(self, "pmf", tuple(float(p) for p in self.pmf))
        _check_seed(self.seed)
        if self.t_max < 0:
            raise ValidationError(f"t_max {self.t_max} must be >= 0")
        if self.population_cap < 1:
            raise ValidationError("population_cap must be >= 1")
        times = self.snapshot_times
        if times is None:
            times = (self.t_max,)
        times = tuple(sorted(int(t) for t in times))
        if len(set(times)) != len(times):
            raise ValidationError("snapshot_times contains duplicates")
        if times and (times[0] < 0 or times[-1] > self.t_max):
            raise ValidationError(
                f"snapshot_times {times} outside [0, t_max={self.t_max}]"
            )
        object.__setattr__(self, "snapshot_times", times)
        pos = self.initial_position
        if pos is None:
            pos = (0.0,) * self.d
        pos = tuple(float(c) for c in pos)
        if len(pos) != self.d:
            raise ValidationError(
                f"initial_position has dim {len(pos)}, config says {self.d}"
            )
        if not all(math.isfinite(c) for c in pos):
            raise ValidationError("initial_position must be finite")
        object.__setattr__(self, "initial_position", pos)
        # Validates the pmf eagerly so bad configs fail at construction.
        self.law  # noqa: B018

    @property
    def law(self) -> OffspringLaw:
        return OffspringLaw(self.pmf, test_mode=self.test_mode)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "pmf": list(self.pmf),
            "seed": self.seed,
            "t_max": self.t_max,
            "population_cap": self.population_cap,
            "snapshot_times": list(self.snapshot_times),
            "initial_position": list(self.initial_position),
            "test_mode": self.test_mode,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SimConfig":
        if not isinstance(obj, dict):
            raise ValidationError("config must be a JSON object")
        unknown = set(obj) - _CONFIG_KEYS
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        missing = {"d", "pmf", "seed", "t_max"} - set(obj)
        if missing:
            raise ValidationError(f"config missing keys: {sorted(missing)}")
        kwargs = dict(obj)
        if kwargs.get("pmf") is not None:
            kwargs["pmf"] = tuple(kwargs["pmf"])
        if kwargs.get("snapshot_times") is not None:
            kwargs["snapshot_times"] = tuple(kwargs["snapshot_times"])
        if kwargs.get("initial_position") is not None:
            kwargs["initial_position"] = tuple(kwargs["initial_position"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ValidationError(str(exc)) from exc

    @classmethod
    def from_json(cls, text_or_path) -> "SimConfig":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            with open(text, "r", encoding="utf-8") as fh:
                text = fh.read()
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"bad config JSON: {exc}") from exc
        return cls.from_dict(obj)


def initial_snapshot(cfg: SimConfig) -> Snapshot:
    hi, lo = _root_ids(cfg.seed, 1)
    pos = np.asarray([cfg.initial_position], dtype=np.float64)
    return Snapshot(t=0, positions=pos, id_hi=hi, id_lo=lo)


def _offspring_counts(law: OffspringLaw, seed: int, hi, lo) -> np.ndarray:
    det = law.deterministic_value
    if det is not None:
        # Point-mass law: the draw would be constant; skipping it changes
        # nothing because counter-based draws consume no shared state.
        return np.full(hi.shape[0], det, dtype=np.int64)
    u = _draw_u01(seed, hi, lo, _TAG_OFFSPRING)
    return np.searchsorted(law._cumulative, u, side="right").astype(np.int64)


def _make_children(positions, hi, lo, counts, seed: int, d: int):
    total = int(counts.sum())
    if total == 0:
        return (
            np.empty((0, d), dtype=np.float64),
            np.empty(0, dtype=np.uint64),
            np.empty(0, dtype=np.uint64),
        )
    parents = np.repeat(np.arange(counts.shape[0]), counts)
    offsets = np.repeat(np.cumsum(counts) - counts, counts)
    ranks = (np.arange(total, dtype=np.int64) - offsets).astype(np.uint64)
    chi, clo = _child_ids(hi[parents], lo[parents], ranks)
    new_pos = positions[parents].copy()
    tag = _TAG_POSITION
    for j in range(d):
        new_pos[:, j] += ndtri(_draw_u01(seed, chi, clo, tag))
        tag = (tag + _TAG_STRIDE) & _MASK
    return new_pos, chi, clo


def _chunk_slices(n: int, workers: int) -> list[slice]:
    chunks = max(1, min(workers, n))
    bounds = np.linspace(0, n, chunks + 1, dtype=np.int64)
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if a < b]


def step(
    s: Snapshot,
    law: OffspringLaw,
    seed: int,
    *,
    population_cap: int | None = DEFAULT_POPULATION_CAP,
    workers: int = 1,
) -> Snapshot:
    """Advance one generation: branch at the parent position, then diffuse.

    Output is a pure function of (snapshot, law, seed); the worker count
    only partitions the work.
    """
    if not s.has_ids:
        raise ValidationError(
            "snapshot has no lineage ids (loaded from file?) and cannot be advanced"
        )
    seed = _check_seed(seed)
    d = s.d
    if s.n == 0:
        return Snapshot(
            t=s.t + 1,
            positions=np.empty((0, d)),
            id_hi=np.empty(0, dtype=np.uint64),
            id_lo=np.empty(0, dtype=np.uint64),
        )
    slices = _chunk_slices(s.n, workers)
    counts = [
        _offspring_counts(law, seed, s.id_hi[sl], s.id_lo[sl]) for sl in slices
    ]
    total = int(sum(int(c.sum()) for c in counts))
    if population_cap is not None and total > population_cap:
        raise PopulationCapError(s.t + 1, total, population_cap)

    def build(i: int):
        sl = slices[i]
        return _make_children(
            s.positions[sl], s.id_hi[sl], s.id_lo[sl], counts[i], seed, d
        )

    if len(slices) == 1:
        parts = [build(0)]
    else:
        with ThreadPoolExecutor(max_workers=len(slices)) as pool:
            parts = list(pool.map(build, range(len(slices))))
    pos = np.concatenate([p[0] for p in parts], axis=0)
    hi = np.concatenate([p[1] for p in parts])
    lo = np.concatenate([p[2] for p in parts])
    return Snapshot(t=s.t + 1, positions=pos, id_hi=hi, id_lo=lo)


class SnapshotWriter:
    """Single-owner line-oriented snapshot file writer.

    First line is a header record; each snapshot becomes one record with
    positions flattened row-major.  All floats are written in Python's
    shortest round-trip decimal form, so reading the file back reproduces
    the binary values exactly.
    """

    def __init__(self, path, *, d: int, pmf, seed: int):
        self._fh = open(path, "w", encoding="utf-8")
        header = {
            "type": "header",
            "version": SNAPSHOT_FORMAT_VERSION,
            "d": d,
            "pmf": [float(p) for p in pmf],
            "seed": int(seed),
            "sampler": SAMPLER_NAME,
        }
        self._fh.write(json.dumps(header, separators=(",", ":")) + "\n")

    def write(self, s: Snapshot) -> None:
        record = {
            "type": "snapshot",
            "t": s.t,
            "n": s.n,
            "positions": s.positions.ravel().tolist(),
        }
        self._fh.write(json.dumps(record, separators=(",", ":")) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "SnapshotWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_snapshot_file(path, snapshots: Sequence[Snapshot], *, d, pmf, seed) -> None:
    with SnapshotWriter(path, d=d, pmf=pmf, seed=seed) as w:
        for s in snapshots:
            w.write(s)


def read_snapshot_file(path) -> tuple[dict, list[Snapshot]]:
    """Read a snapshot file; returns (header, snapshots-without-ids)."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"bad snapshot header: {exc}") from exc
        if header.get("type") != "header":
            raise ValidationError("snapshot file does not start with a header record")
        if header.get("version") != SNAPSHOT_FORMAT_VERSION:
            raise ValidationError(f"unsupported format version {header.get('version')}")
        d = int(header["d"])
        snaps = []
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"bad record on line {line_no}: {exc}") from exc
            if rec.get("type") != "snapshot":
                raise ValidationError(f"unexpected record type on line {line_no}")
            flat = np.asarray(rec["positions"], dtype=np.float64)
            n = int(rec["n"])
            if flat.size != n * d:
                raise ValidationError(
                    f"line {line_no}: {flat.size} coordinates for n={n}, d={d}"
                )
            snaps.append(Snapshot(t=int(rec["t"]), positions=flat.reshape(n, d)))
    return header, snaps


def run(cfg: SimConfig, out=None, *, workers: int = 1) -> list[Snapshot]:
    """Run the process to t_max; returns the requested snapshots.

    With ``out`` set, snapshots stream to that path as they are produced;
    on a population-cap abort the already-written times remain in the file
    as a valid partial result.
    """
    law = cfg.law
    wanted = set(cfg.snapshot_times)
    kept: list[Snapshot] = []
    writer = None
    try:
        if out is not None:
            writer = SnapshotWriter(out, d=cfg.d, pmf=cfg.pmf, seed=cfg.seed)
        s = initial_snapshot(cfg)
        if 0 in wanted:
            kept.append(s)
            if writer:
                writer.write(s)
        for _ in range(cfg.t_max):
            s = step(
                s,
                law,
                cfg.seed,
                population_cap=cfg.population_cap,
                workers=workers,
            )
            if s.t in wanted:
                kept.append(s)
                if writer:
                    writer.write(s)
    finally:
        if writer:
            writer.close()
    return kept


def run_surviving(cfg: SimConfig, *, max_attempts: int = 100, workers: int = 1):
    """Rejection mode: rerun with derived seeds until the final generation is
    non-empty.  Returns (snapshots, seed_used).  The returned runs are biased
    by construction — they sample the law conditioned on survival to t_max.
    """
    wanted = cfg.snapshot_times
    times = wanted if cfg.t_max in wanted else tuple(sorted((*wanted, cfg.t_max)))
    for attempt in range(max_attempts):
        seed = (cfg.seed + attempt) % 2**64
        trial = SimConfig(
            d=cfg.d,
            pmf=cfg.pmf,
            seed=seed,
            t_max=cfg.t_max,
            population_cap=cfg.population_cap,
            snapshot_times=times,
            initial_position=cfg.initial_position,
            test_mode=cfg.test_mode,
        )
        snaps = run(trial, workers=workers)
        if snaps[-1].n > 0:
            return [s for s in snaps if s.t in wanted], seed
    raise RuntimeError(f"no surviving run in {max_attempts} attempts")


def count(s: Snapshot, region) -> int:
    """ψ(A, t): number of particles of the snapshot inside the region."""
    if s.d != region.dim:
        raise ValidationError(f"snapshot dim {s.d} != region dim {region.dim}")
    if s.n == 0:
        return 0
    return int(np.count_nonzero(_regions.contains(region, s.positions)))


def max_radius(s: Snapshot) -> float:
    """Largest particle distance from the origin."""
    if s.n == 0:
        raise ValidationError("empty snapshot has no radius")
    sq = np.einsum("ij,ij->i", s.positions, s.positions)
    return float(math.sqrt(float(sq.max())))


def merge_snapshots(snaps: Sequence[Snapshot]) -> Snapshot:
    """Concatenate same-time snapshots (e.g. independently seeded runs) into
    one population.  Lineage ids are kept only if every input has them."""
    snaps = list(snaps)
    if not snaps:
        raise ValidationError("nothing to merge")
    t = snaps[0].t
    d = snaps[0].d
    for s in snaps[1:]:
        if s.t != t or s.d != d:
            raise ValidationError("snapshots disagree on t or d")
    pos = np.concatenate([s.positions for s in snaps], axis=0)
    if all(s.has_ids for s in snaps):
        hi = np.concatenate([s.id_hi for s in snaps])
        lo = np.concatenate([s.id_lo for s in snaps])
        return Snapshot(t=t, positions=pos, id_hi=hi, id_lo=lo)
    return Snapshot(t=t, positions=pos)


def radius_profile(cfg: SimConfig, *, workers: int = 1) -> list[tuple[int, float]]:
    """(t, max_radius) for every generation up to t_max (stops at extinction).

    Memory-light: nothing is retained beyond the current generation.
    """
    law = cfg.law
    s = initial_snapshot(cfg)
    out = [(0, max_radius(s))]
    for _ in range(cfg.t_max):
        s = step(s, law, cfg.seed, population_cap=cfg.population_cap, workers=workers)
        if s.n == 0:
            break
        out.append((s.t, max_radius(s)))
    return out


def ensemble_states(
    law: OffspringLaw,
    d: int,
    n_replicas: int,
    t_max: int,
    seed: int,
    *,
    population_cap: int | None = DEFAULT_POPULATION_CAP,
    initial_position=None,
) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
    """Advance ``n_replicas`` independent runs in lockstep.

    Yields (t, positions, replica_index) for t = 0..t_max, where
    ``replica_index[i]`` says which replica particle row i belongs to.  The
    population cap applies to the whole batch.  Replicas get distinct root
    lineages derived from (seed, replica), so the batch is statistically
    identical to independent single runs; use `run` when one trajectory must
    be reproduced exactly.
    """
    if n_replicas < 1:
        raise ValidationError("need at least one replica")
    if d < 1:
        raise ValidationError(f"dimension {d} must be >= 1")
    seed = _check_seed(seed)
    hi, lo = _root_ids(seed, n_replicas)
    if initial_position is None:
        pos = np.zeros((n_replicas, d))
    else:
        pos = np.tile(np.asarray(initial_position, dtype=np.float64), (n_replicas, 1))
    rep = np.arange(n_replicas, dtype=np.int64)
    yield 0, pos, rep
    for t in range(1, t_max + 1):
        counts = _offspring_counts(law, seed, hi, lo)
        total = int(counts.sum())
        if population_cap is not None and total > population_cap:
            raise PopulationCapError(t, total, population_cap)
        parents = np.repeat(np.arange(counts.shape[0]), counts)
        rep = rep[parents]
        pos, hi, lo = _make_children(pos, hi, lo, counts, seed, d)
        yield t, pos, rep
