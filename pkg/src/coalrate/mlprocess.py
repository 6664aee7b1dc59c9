"""Exact simulation of the Marcus-Lushnikov coalescent.

N particles, each of weight 1/n.  Every unordered pair (i, j) merges into a
particle of mass x_i + x_j at rate K(x_i, x_j) / n, so the total jump rate
is Lambda = sum_{i<j} K(x_i, x_j) / n.

The default ``direct`` method keeps, for every particle, its row rate
sum_{j != i} K(x_i, x_j).  An event samples i proportionally to its row and
then j proportionally to K(x_i, x_j); both rows and Lambda are updated in
O(N) and rebuilt exactly from scratch at a slowly growing cadence to bound
floating-point drift.  The ``rejection`` method thins a uniform pair
proposal against kappa0 times the majorant's maximum over current masses.

Random numbers come from numpy's PCG64 bit generator.  Replicate seeds are
derived with :func:`replicate_seed`, which hashes ``(base_seed, *keys)``
through numpy's SeedSequence.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvariantViolation, ValidationError
from .kernels import Kernel
from .measures import DiscreteMeasure

__all__ = [
    "Event",
    "ParticleSystem",
    "Snapshot",
    "TrajectoryLog",
    "init",
    "step",
    "run_until",
    "moment_trajectory",
    "check_trajectory",
    "replicate_seed",
]

_BLOCK = 512


def replicate_seed(base_seed: int, *keys: int) -> int:
    """64-bit seed from SeedSequence(entropy=[base_seed, *keys])."""
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return int(ss.generate_state(1, np.uint64)[0])


class Event(NamedTuple):
    t: float
    dt: float
    i: int
    j: int
    mass_i: float
    mass_j: float
    new_mass: float


class ParticleSystem:
    """Mutable Marcus-Lushnikov state; confined to one thread at a time."""

    def __init__(self, masses, n, kernel: Kernel, seed: int, method="direct", rebuild_every=None, t=0.0):
        masses = np.array(masses, dtype=float).ravel()
        if masses.size and np.any(masses <= 0):
            raise ValidationError("particle masses must be positive")
        if method not in ("direct", "rejection"):
            raise ValidationError(f"unknown pair-selection method {method!r}")
        self.x = masses
        self.m = masses.size
        self.n = int(n)
        self.kernel = kernel
        self.seed = int(seed)
        self.rng = np.random.Generator(np.random.PCG64(self.seed))
        self.method = method
        self.rebuild_every = rebuild_every
        self.t = float(t)
        # the next event (or proposal) time is kept across advance() calls that stop short
        # of it, so where a trajectory is observed never changes the trajectory
        self._next_t = None
        self._last_event_t = self.t
        self.events = 0
        self.rebuilds = 0
        self._since_rebuild = 0
        self.row = np.zeros(self.m)
        self._pair_sum = 0.0
        if method == "direct":
            self.rebuild()
        else:
            self._x_lo = float(masses.min()) if self.m else 1.0
            self._x_hi = float(masses.max()) if self.m else 1.0

    # rates -----------------------------------------------------------------

    def _row_rates(self):
        m, x, k = self.m, self.x[: self.m], self.kernel
        row = np.empty(m)
        for start in range(0, m, _BLOCK):
            stop = min(start + _BLOCK, m)
            blk = np.asarray(k(x[start:stop, None], x[None, :]), dtype=float)
            blk[np.arange(stop - start), np.arange(start, stop)] = 0.0
            row[start:stop] = blk.sum(axis=1)
        return row

    def rebuild(self):
        """Recompute every row rate and Lambda exactly (O(N^2))."""
        self.row = self._row_rates()
        self._pair_sum = 0.5 * math.fsum(self.row)
        self._since_rebuild = 0
        self.rebuilds += 1

    def exact_total_rate(self):
        """Lambda recomputed from scratch, leaving the cache untouched."""
        if self.m < 2:
            return 0.0
        return 0.5 * math.fsum(self._row_rates()) / self.n

    @property
    def total_rate(self):
        """Lambda = sum_{i<j} K(x_i, x_j) / n (cached for the direct method)."""
        if self.method == "direct":
            return self._pair_sum / self.n
        return self.exact_total_rate()

    @property
    def masses(self):
        return self.x[: self.m]

    def measure(self):
        vals, counts = np.unique(self.x[: self.m], return_counts=True)
        return DiscreteMeasure.from_counts(vals, counts, self.n)

    def spawn(self, seed):
        """Copy of this state with a fresh random stream (skips the O(N^2) setup)."""
        clone = object.__new__(ParticleSystem)
        clone.__dict__.update(self.__dict__)
        clone.x = self.x.copy()
        clone.row = self.row.copy()
        clone.seed = int(seed)
        clone.rng = np.random.Generator(np.random.PCG64(clone.seed))
        clone._next_t = None
        return clone

    def _rebuild_due(self):
        if self.rebuild_every is None:
            # the gap grows like sqrt(events) but never below the particle count,
            # so the O(N^2) rebuild amortizes to O(N) per event
            gap = max(math.isqrt(max(self.events - 1, 0)) + 1, self.m)
        elif self.rebuild_every == 0:
            return False
        else:
            gap = self.rebuild_every
        return self._since_rebuild >= gap

    # dynamics ----------------------------------------------------------------

    def advance(self, t_limit=math.inf):
        """Fire the next event if it happens no later than ``t_limit``.

        Returns the Event, or None when the next event falls after
        ``t_limit`` (the clock then moves to ``t_limit`` and the pending
        event time is kept) or fewer than two particles remain.
        """
        if self.m < 2:
            if math.isfinite(t_limit):
                self.t = max(self.t, t_limit)
            return None
        if self.method == "direct":
            return self._advance_direct(t_limit)
        return self._advance_rejection(t_limit)

    def _advance_direct(self, t_limit):
        rate = self._pair_sum / self.n
        if rate <= 0.0:
            if math.isfinite(t_limit):
                self.t = t_limit
            return None
        if self._next_t is None:
            self._next_t = self.t + self.rng.standard_exponential() / rate
        if self._next_t > t_limit:
            self.t = t_limit
            return None
        self.t, self._next_t = self._next_t, None
        dt = self.t - self._last_event_t
        self._last_event_t = self.t
        m, x, row, k = self.m, self.x, self.row, self.kernel

        c = np.cumsum(row[:m])
        i = int(np.searchsorted(c, self.rng.random() * c[-1], side="right"))
        if i >= m or row[i] <= 0.0:
            i = int(np.flatnonzero(row[:m] > 0)[-1])
        xi = x[i]
        ki = np.asarray(k(xi, x[:m]), dtype=float)
        ki[i] = 0.0
        cj = np.cumsum(ki)
        j = int(np.searchsorted(cj, self.rng.random() * cj[-1], side="right"))
        if j >= m or ki[j] <= 0.0:
            j = int(np.flatnonzero(ki > 0)[-1])
        xj = x[j]
        z = xi + xj
        kj = np.asarray(k(xj, x[:m]), dtype=float)
        kj[j] = 0.0
        kz = np.asarray(k(z, x[:m]), dtype=float)

        row_i, row_j, kij = row[i], row[j], ki[j]
        row[:m] += kz - ki - kj
        rz = kz.sum() - kz[i] - kz[j]
        # pairs touching i or j leave (counting (i, j) once); pairs touching z arrive
        self._pair_sum += rz - (row_i + row_j - kij)

        lo, hi = (i, j) if i < j else (j, i)
        last = m - 1
        x[lo] = z
        row[lo] = rz
        if hi != last:
            x[hi] = x[last]
            row[hi] = row[last]
        self.m = last
        self.events += 1
        self._since_rebuild += 1
        if self._rebuild_due():
            self.rebuild()
        return Event(self.t, dt, i, j, float(xi), float(xj), float(z))

    def _advance_rejection(self, t_limit):
        m, x, k, rng = self.m, self.x, self.kernel, self.rng
        bound = self.kernel.max_rate(self._x_lo, self._x_hi)
        if not (math.isfinite(bound) and bound > 0):
            raise ValidationError("rejection sampling needs a finite positive rate bound")
        proposal_rate = 0.5 * m * (m - 1) * bound / self.n
        while True:
            if self._next_t is None:
                self._next_t = self.t + rng.standard_exponential() / proposal_rate
            if self._next_t > t_limit:
                self.t = t_limit
                return None
            self.t, self._next_t = self._next_t, None
            i = int(rng.integers(m))
            j = int(rng.integers(m - 1))
            if j >= i:
                j += 1
            kij = float(k(x[i], x[j]))
            if kij > bound * (1.0 + 1e-12):
                raise InvariantViolation(f"kernel value {kij} exceeds its rejection bound {bound}")
            if rng.random() * bound < kij:
                break
        xi, xj = x[i], x[j]
        z = xi + xj
        lo, hi = (i, j) if i < j else (j, i)
        last = m - 1
        x[lo] = z
        if hi != last:
            x[hi] = x[last]
        self.m = last
        self.events += 1
        self._x_hi = max(self._x_hi, float(z))
        dt = self.t - self._last_event_t
        self._last_event_t = self.t
        return Event(self.t, dt, i, j, float(xi), float(xj), float(z))


def init(mu0: DiscreteMeasure, kernel: Kernel, n: int, seed: int, method="direct", rebuild_every=None) -> ParticleSystem:
    """Expand ``mu0`` (weights k/n) into unit particles of weight 1/n."""
    if n < 1 or int(n) != n:
        raise ValidationError(f"n must be a positive integer, got {n}")
    counts = mu0.counts(int(n))
    masses = np.repeat(mu0.masses, counts)
    return ParticleSystem(masses, int(n), kernel, seed, method=method, rebuild_every=rebuild_every)


def step(sys: ParticleSystem):
    """One event of the process, or None in the terminal (< 2 particles) state."""
    return sys.advance(math.inf)


@dataclass(frozen=True)
class Snapshot:
    t: float
    masses: np.ndarray
    counts: np.ndarray
    n: int
    events: int

    @property
    def particles(self):
        return int(self.counts.sum())

    @property
    def measure(self):
        return DiscreteMeasure.from_counts(self.masses, self.counts, self.n)

    def moment(self, alpha):
        if alpha == 0:
            return float(self.counts.sum()) / self.n
        return math.fsum(self.counts * np.power(self.masses, float(alpha))) / self.n

    def to_json(self):
        atoms = [[m, int(c)] for m, c in zip(self.masses.tolist(), self.counts.tolist())]
        return json.dumps({"t": self.t, "atoms": atoms, "n": self.n})


@dataclass
class TrajectoryLog:
    n: int
    initial_particles: int
    snapshots: list = field(default_factory=list)
    events: int = 0
    final_time: float = 0.0
    start_events: int = 0

    def times(self):
        return np.array([s.t for s in self.snapshots])

    def to_jsonl(self, path=None):
        text = "".join(s.to_json() + "\n" for s in self.snapshots)
        if path is None:
            return text
        with open(path, "w") as fh:
            fh.write(text)
        return None

    @classmethod
    def from_jsonl(cls, path_or_text):
        if isinstance(path_or_text, (str, os.PathLike)) and os.path.exists(path_or_text):
            with open(path_or_text) as fh:
                lines = fh.read().splitlines()
        else:
            lines = str(path_or_text).splitlines()
        snaps = []
        for line in lines:
            if not line.strip():
                continue
            doc = json.loads(line)
            atoms = doc["atoms"]
            masses = np.array([a[0] for a in atoms], dtype=float)
            counts = np.array([a[1] for a in atoms], dtype=np.int64)
            snaps.append(Snapshot(float(doc["t"]), masses, counts, int(doc["n"]), -1))
        if not snaps:
            raise ValidationError("trajectory file holds no snapshots")
        n = snaps[0].n
        return cls(n=n, initial_particles=snaps[0].particles, snapshots=snaps,
                   final_time=snaps[-1].t)


def _snapshot(sys):
    vals, counts = np.unique(sys.x[: sys.m], return_counts=True)
    return Snapshot(sys.t, vals, counts.astype(np.int64), sys.n, sys.events)


def run_until(sys: ParticleSystem, T: float, snapshot_times=()) -> TrajectoryLog:
    """Run to time T recording the (cadlag) state at each snapshot time.

    The state recorded at time s includes every event with time <= s.
    """
    snaps = [float(s) for s in snapshot_times]
    if T < sys.t:
        raise ValidationError(f"horizon {T} lies before the current time {sys.t}")
    if any(b < a for a, b in zip(snaps, snaps[1:])):
        raise ValidationError("snapshot times must be sorted")
    if snaps and (snaps[0] < sys.t or snaps[-1] > T):
        raise ValidationError(f"snapshot times must lie in [{sys.t}, {T}]")
    start_events = sys.events
    log = TrajectoryLog(n=sys.n, initial_particles=sys.m, start_events=start_events)
    for s in snaps:
        while sys.advance(s) is not None:
            pass
        sys.t = s
        log.snapshots.append(_snapshot(sys))
    while sys.advance(T) is not None:
        pass
    sys.t = T
    log.events = sys.events - start_events
    log.final_time = T
    return log


def moment_trajectory(log: TrajectoryLog, alpha: float) -> np.ndarray:
    """M_alpha at every snapshot; for alpha <= 1 the series must not increase."""
    series = np.array([s.moment(alpha) for s in log.snapshots])
    if alpha < 1:
        rises = np.flatnonzero(series[1:] > series[:-1])
        if rises.size:
            k = int(rises[0])
            raise InvariantViolation(
                f"M_{alpha:g} increased between t={log.snapshots[k].t} and "
                f"t={log.snapshots[k + 1].t}: {series[k]!r} -> {series[k + 1]!r}"
            )
    elif alpha == 1 and series.size:
        # merged masses are rounded sums, so allow one rounding per event
        tol = 4.0 * np.finfo(float).eps * max(log.events, 1) * abs(series[0])
        dev = np.abs(series - series[0])
        if np.any(dev > tol):
            k = int(np.argmax(dev))
            raise InvariantViolation(f"M_1 drifted by {dev[k]!r} at t={log.snapshots[k].t}")
    return series


def check_trajectory(log: TrajectoryLog, alphas=(-1.0, 0.0, 0.5, 1.0), m1=None):
    """Check mass conservation, particle bookkeeping and moment monotonicity.

    ``m1`` is the expected first moment (defaults to the first snapshot's).
    Raises InvariantViolation on the first failure.
    """
    for a in alphas:
        moment_trajectory(log, a)
    if m1 is not None and log.snapshots:
        got = log.snapshots[0].moment(1.0)
        tol = 4.0 * np.finfo(float).eps * max(log.events, 1) * abs(m1)
        if abs(got - m1) > tol:
            raise InvariantViolation(f"M_1 changed from {m1!r} to {got!r}")
    for s in log.snapshots:
        if s.events < 0:
            continue
        fired = s.events - log.start_events
        if s.particles + fired != log.initial_particles:
            raise InvariantViolation(
                f"at t={s.t}: {s.particles} particles after {fired} events, "
                f"started from {log.initial_particles}"
            )
