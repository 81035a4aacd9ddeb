"""Exact simulation of the scaled jump process.

Counts are integers throughout; rate expressions see ``x_C = X_C / N`` for
continuous species and raw counts for discrete ones.  Two samplers of the same
law are provided (Gillespie's direct method and the random time change /
next reaction method).  Each exists as a numba kernel and a numpy lockstep
kernel, chosen by ``backend`` or the ``PDPNET_DISABLE_NUMBA`` flag.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import _backend
from . import _kernels as K
from .model import (ClassifiedModel, CompiledNetwork, PropensityError, RClass,
                    compile_network, propensity)
from .rate_expr import DomainError
from .rng import Stream, seed_key

__all__ = [
    "SimGuards", "JumpState", "Trajectory", "SimulationError", "Simulator",
    "EnsembleResult", "simulate_direct", "simulate_time_change", "run_ensemble",
    "simulate_split", "SplitTrajectory", "write_trajectory_csv", "write_probe_csv",
]

METHODS = {"direct": 0, "time_change": 1}


class SimulationError(ValueError):
    """A transition would drive a count negative, or a rate left its domain."""


@dataclass(frozen=True)
class SimGuards:
    max_jumps: int = 10_000_000
    max_radius: float = 1e6

    def __post_init__(self):
        if self.max_jumps <= 0 or not self.max_radius > 0:
            raise ValueError("guards must be positive")


@dataclass(frozen=True)
class JumpState:
    t: float
    counts: Mapping[str, int]

    def x(self, net: CompiledNetwork) -> dict:
        """Scaled view: continuous species divided by N."""
        return {s: (self.counts[s] / net.N if c else float(self.counts[s]))
                for s, c in zip(net.species, net.continuous)}


@dataclass
class Trajectory:
    species: tuple
    reaction_names: tuple
    N: int
    stoich: np.ndarray
    continuous: np.ndarray
    initial: np.ndarray      # (S,) counts at t = 0
    times: np.ndarray        # (n,) event times
    reactions: np.ndarray    # (n,) reaction indices
    end_time: float
    truncated: bool = False
    jump_cap_hit: bool = False

    @property
    def jump_count(self) -> int:
        return int(self.times.shape[0])

    @property
    def states(self) -> np.ndarray:
        """(n + 1, S) counts: the initial state then each post-event state."""
        steps = self.stoich[self.reactions] if self.reactions.size else np.zeros((0, len(self.species)), np.int64)
        return self.initial + np.vstack([np.zeros((1, len(self.species)), np.int64),
                                         np.cumsum(steps, axis=0)])

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def events(self):
        for t, r, s in zip(self.times, self.reactions, self.states[1:]):
            yield JumpState(float(t), dict(zip(self.species, s.tolist()))), self.reaction_names[r]

    def state_at(self, t) -> np.ndarray:
        """Counts of the right-continuous path at time(s) ``t``."""
        k = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="right")
        return self.states[k]

    def scaled(self, counts) -> np.ndarray:
        counts = np.asarray(counts)
        return np.where(self.continuous, counts / self.N, counts.astype(np.float64))


def _initial_counts(net: CompiledNetwork, x0) -> np.ndarray:
    if x0 is None:
        return net.initial_counts()
    counts = x0.counts if isinstance(x0, JumpState) else x0
    if isinstance(counts, Mapping):
        unknown = set(counts) - set(net.species)
        if unknown:
            raise KeyError(f"unknown species in initial state: {sorted(unknown)}")
        base = net.initial_counts()
        for i, s in enumerate(net.species):
            if s in counts:
                base[i] = int(counts[s])
        counts = base
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (len(net.species),) or (counts < 0).any():
        raise ValueError("initial counts must be a nonnegative vector over all species")
    return counts


def _use_numba(backend: Optional[str]) -> bool:
    if backend is None:
        return _backend.USE_NUMBA
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not _backend.HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    return backend == "numba"


@dataclass(frozen=True)
class Simulator:
    """Closure over everything but the random stream; picklable and reentrant."""

    net: CompiledNetwork
    t_end: float
    method: str = "direct"
    x0: Optional[np.ndarray] = None
    guards: SimGuards = field(default_factory=SimGuards)
    backend: Optional[str] = None

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        object.__setattr__(self, "x0", _initial_counts(self.net, self.x0))

    @classmethod
    def build(cls, classified: ClassifiedModel, N: int, eps: Optional[float], t_end: float,
              method: str = "direct", x0=None, guards: SimGuards = SimGuards(),
              backend: Optional[str] = None) -> "Simulator":
        net = compile_network(classified, N, eps)
        return cls(net, float(t_end), method, _initial_counts(net, x0), guards, backend)

    # -- raw batch: returns status arrays and probe matrix -------------------------
    def _batch(self, seed, streams, probes, record, workers=1):
        probes = np.asarray(probes, dtype=np.float64)
        streams = np.asarray(streams, dtype=np.uint64)
        m = METHODS[self.method]
        g = self.guards
        if not _use_numba(self.backend):
            return K.ssa_lockstep(m, self.net, self.x0, self.t_end, seed, streams,
                                  g.max_jumps, g.max_radius, probes, record)
        net = self.net
        key0 = seed_key(seed)

        def one(s):
            return K.ssa_one_nb(m, net.ops, net.args, net.offsets, net.factor, net.gate_slot,
                                net.gate_value, net.stoich, net.continuous, float(net.N),
                                self.x0, self.t_end, key0, np.uint64(s), g.max_jumps,
                                g.max_radius, probes, record, net.stack_size)

        if workers > 1 and len(streams) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outs = list(pool.map(one, streams))
        else:
            outs = [one(s) for s in streams]
        B, S, P = len(streams), len(net.species), len(probes)
        status = np.array([o[0] for o in outs], dtype=np.int64)
        info = np.array([o[1] for o in outs], dtype=np.int64)
        n = np.array([o[2] for o in outs], dtype=np.int64)
        t = np.array([o[3] for o in outs])
        counts = np.array([o[4] for o in outs], dtype=np.int64).reshape(B, S)
        probe_out = np.array([o[7] for o in outs]).reshape(B, P, S)
        events = [(o[5], o[6]) for o in outs] if record else None
        return status, info, n, t, counts, probe_out, events

    def _raise_fatal(self, status, info, counts):
        bad = np.flatnonzero(status >= K.NEGATIVE_COUNT)
        if bad.size == 0:
            return
        i = bad[0]
        name = self.net.model.reactions[info[i]].name
        state = dict(zip(self.net.species, counts[i].tolist()))
        if status[i] == K.NEGATIVE_COUNT:
            raise SimulationError(f"reaction {name} would make a count negative at state {state}")
        if status[i] == K.NEGATIVE_PROPENSITY:
            raise PropensityError(f"negative rate for reaction {name} at state {state}")
        raise DomainError(f"rate of reaction {name} is undefined at state {state}")

    def run(self, seed, stream: int = 0) -> Trajectory:
        return self.run_many(seed, [stream])[0]

    def run_many(self, seed, streams, workers: int = 1) -> list:
        """Full trajectories for the given streams of ``seed``."""
        status, info, n, t, counts, _, events = self._batch(seed, streams, np.empty(0), True, workers)
        self._raise_fatal(status, info, counts)
        net = self.net
        names = tuple(r.name for r in net.model.reactions)
        return [Trajectory(
            species=net.species, reaction_names=names, N=net.N, stoich=net.stoich,
            continuous=net.continuous, initial=self.x0.copy(),
            times=np.asarray(times, dtype=np.float64), reactions=np.asarray(rxn, dtype=np.int64),
            end_time=self.t_end if status[i] == K.OK else float(t[i]),
            truncated=bool(status[i] != K.OK), jump_cap_hit=bool(status[i] == K.JUMP_CAP))
            for i, (times, rxn) in enumerate(events)]


def simulate_direct(classified: ClassifiedModel, N: int, eps: Optional[float], x0, t_end: float,
                    seed: int, guards: SimGuards = SimGuards(), backend=None) -> Trajectory:
    """Gillespie direct method."""
    return Simulator.build(classified, N, eps, t_end, "direct", x0, guards, backend).run(seed)


def simulate_time_change(classified: ClassifiedModel, N: int, eps: Optional[float], x0,
                         t_end: float, seed: int, guards: SimGuards = SimGuards(),
                         backend=None) -> Trajectory:
    """Unit-rate Poisson clock per reaction, run on its internal time (next reaction method)."""
    return Simulator.build(classified, N, eps, t_end, "time_change", x0, guards, backend).run(seed)


@dataclass
class EnsembleResult:
    species: tuple
    probes: np.ndarray
    samples: np.ndarray        # (M, P, S) scaled values; NaN after an abort
    jump_counts: np.ndarray    # (M,)
    truncated: np.ndarray      # (M,) bool, any guard abort
    jump_cap_hit: np.ndarray   # (M,) bool

    @property
    def n_truncated(self) -> int:
        return int(self.truncated.sum())

    def matrix(self, species: str) -> np.ndarray:
        """(M, P) samples of one species."""
        return self.samples[:, :, self.species.index(species)]

    def column(self, species: str, probe_index: int) -> np.ndarray:
        return self.matrix(species)[:, probe_index]


def run_ensemble(sim: Simulator, M: int, probes: Sequence[float], master_seed: int,
                 workers: int = 1) -> EnsembleResult:
    """M independent trajectories; trajectory i reads stream i of ``master_seed``."""
    if M < 1:
        raise ValueError("M must be at least 1")
    probes = np.asarray(probes, dtype=np.float64)
    if probes.ndim != 1 or (probes < 0).any() or (probes > sim.t_end).any():
        raise ValueError("probe times must lie in [0, t_end]")
    if (np.diff(probes) < 0).any():
        raise ValueError("probe times must be sorted")
    status, info, n, _, counts, probe_out, _ = sim._batch(master_seed, np.arange(M), probes,
                                                          False, workers)
    sim._raise_fatal(status, info, counts)
    return EnsembleResult(sim.net.species, probes, probe_out, n,
                          status != K.OK, status == K.JUMP_CAP)


# --- auxiliary split process -------------------------------------------------------

@dataclass
class SplitTrajectory:
    species: tuple
    times: np.ndarray
    reactions: np.ndarray
    x1: np.ndarray   # (n + 1, S) small-jump continuous part, plus the discrete species
    x2: np.ndarray   # (n + 1, S) O(1) jumps from S2 (zero on discrete columns)
    truncated: bool = False


def simulate_split(classified: ClassifiedModel, N: int, x0, t_end: float, seed: int,
                   guards: SimGuards = SimGuards()) -> SplitTrajectory:
    """Direct method on the auxiliary system (x1_C, x2_C, X_D) with x_C = x1_C + x2_C.

    Propensities are computed on the sum.  The continuous displacement of an S2
    reaction goes to x2, every other displacement to x1; discrete species live
    in the x1 array and x1 may dip below zero.  Uniforms are consumed exactly like ``simulate_direct`` so
    the same seed yields the same event sequence.
    """
    net = compile_network(classified, N, None)
    counts = _initial_counts(net, x0)
    s2 = np.array([classified.class_of(r.name) == RClass.S2 for r in net.model.reactions])
    x1, x2 = counts.copy(), np.zeros_like(counts)
    stream = Stream(seed, 0)
    times, rxn, h1, h2 = [], [], [x1.copy()], [x2.copy()]
    t = 0.0
    truncated = False
    while True:
        x = x1 + x2
        a = propensity(classified, N, None, dict(zip(net.species, net.scaled(x))))
        cum = np.cumsum(a)
        total = cum[-1]
        if total <= 0:
            break
        t_next = t - math.log(stream.uniform()) / total
        if t_next > t_end:
            break
        if len(times) >= guards.max_jumps:
            truncated = True
            break
        mu = int(np.argmax(cum > stream.uniform() * total))
        if s2[mu]:
            x2 = x2 + np.where(net.continuous, net.stoich[mu], 0)
            x1 = x1 + np.where(net.continuous, 0, net.stoich[mu])
        else:
            x1 = x1 + net.stoich[mu]
        if ((x1 + x2) < 0).any():
            raise SimulationError(f"reaction {net.model.reactions[mu].name} would make a count negative")
        t = t_next
        times.append(t)
        rxn.append(mu)
        h1.append(x1.copy())
        h2.append(x2.copy())
        if np.abs(net.scaled(x1 + x2)).max() > guards.max_radius:
            truncated = True
            break
    return SplitTrajectory(net.species, np.array(times), np.array(rxn, dtype=np.int64),
                           np.array(h1), np.array(h2), truncated)


# --- CSV -----------------------------------------------------------------------------

def _fmt(v) -> str:
    return "%.17g" % v


def write_trajectory_csv(traj: Trajectory, out, scaled: bool = True) -> None:
    """``t,reaction,<species>``; the first row is the initial state with an empty reaction."""
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["t", "reaction", *traj.species])
    states = traj.states
    vals = traj.scaled(states) if scaled else states

    def cells(row):
        return [_fmt(v) if scaled else str(int(v)) for v in row]

    w.writerow(["0", "", *cells(vals[0])])
    for k in range(traj.jump_count):
        w.writerow([_fmt(traj.times[k]), traj.reaction_names[traj.reactions[k]], *cells(vals[k + 1])])


def write_probe_csv(result: EnsembleResult, out) -> None:
    """``probe_t,traj_index,<species>`` in probe-major order."""
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["probe_t", "traj_index", *result.species])
    M = result.samples.shape[0]
    for j, pt in enumerate(result.probes):
        for i in range(M):
            w.writerow([_fmt(pt), i, *(_fmt(v) for v in result.samples[i, j])])
