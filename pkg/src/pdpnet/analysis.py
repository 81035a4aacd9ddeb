"""Statistics that compare exact and limit ensembles."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .limits import build_limit, limit_initial_state
from .model import ClassifiedModel, compile_network, propensity
from .pdp import FlowConfig, PdpSpec, generator, run_pdp_ensemble
from .rng import derive_seed
from .ssa import SimGuards, Simulator, Trajectory, run_ensemble

__all__ = [
    "EmpiricalSample", "DistanceReport", "ks_distance", "wasserstein1", "StudyRow",
    "convergence_study", "write_study_csv", "MartingaleRow", "martingale_residual",
    "ssa_martingale", "pdp_martingale", "prelimit_generator", "test_functions",
    "write_martingale_csv", "occupation_time", "OccupationEstimate", "occupation_bound",
]


@dataclass(frozen=True)
class EmpiricalSample:
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if v.size == 0:
            raise ValueError(f"empty sample {self.label!r}")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"sample {self.label!r} has non-finite values")
        object.__setattr__(self, "values", v)


def _values(a) -> np.ndarray:
    return a.values if isinstance(a, EmpiricalSample) else EmpiricalSample(a).values


def ks_distance(a, b) -> float:
    """Sup distance between the two empirical CDFs, evaluated at every sample point."""
    a, b = np.sort(_values(a)), np.sort(_values(b))
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.abs(fa - fb).max())


def wasserstein1(a, b) -> float:
    """W1 between equal-size empirical measures: mean gap of the sorted samples."""
    a, b = _values(a), _values(b)
    if a.size != b.size:
        raise ValueError(f"sample sizes differ ({a.size} vs {b.size})")
    return float(np.abs(np.sort(a) - np.sort(b)).mean())


@dataclass(frozen=True)
class DistanceReport:
    ks: float
    wasserstein1: float
    n_a: int
    n_b: int
    probe_t: float


def _compare(a, b, t) -> DistanceReport:
    a = a[np.isfinite(a)]
    b = b[np.isfinite(b)]
    w1 = wasserstein1(a, b) if a.size == b.size else float("nan")
    return DistanceReport(ks_distance(a, b), w1, a.size, b.size, float(t))


# --- convergence study ---------------------------------------------------------

@dataclass(frozen=True)
class StudyRow:
    scale_N: int
    eps: Optional[float]
    probe_t: object      # float, or "time_avg"
    species: str
    ks: float
    w1: float
    n_ssa: int
    n_pdp: int
    truncated_frac: float


def convergence_study(classified: ClassifiedModel, scales: Sequence, t_probes: Sequence[float],
                      M: int, master_seed: int, method: str = "direct",
                      guards: SimGuards = SimGuards(), flow: FlowConfig = FlowConfig(),
                      workers: int = 1, limit_kwargs: Optional[Mapping] = None) -> list:
    """KS and W1 between exact ensembles at each scale and one limit ensemble.

    ``scales`` holds N values, or (N, eps) pairs for regime D.  The limit
    ensemble does not depend on the scale, so it is simulated once and reused.
    Regime D rows are followed by a ``time_avg`` row per species.
    """
    t_probes = np.asarray(t_probes, dtype=np.float64)
    t_end = float(t_probes.max())
    spec = build_limit(classified, **(limit_kwargs or {}))
    y0, nu0 = limit_initial_state(classified)
    pdp = run_pdp_ensemble(spec, (y0, nu0), t_end, M, t_probes, derive_seed(master_seed, 0), flow)
    rows = []
    for k, scale in enumerate(scales):
        N, eps = (scale if isinstance(scale, (tuple, list)) else (scale, None))
        if classified.model.needs_eps and eps is None:
            eps = classified.model.default_eps
        sim = Simulator.build(classified, int(N), eps, t_end, method, None, guards)
        ens = run_ensemble(sim, M, t_probes, derive_seed(master_seed, 1, k), workers)
        frac = ens.n_truncated / M
        for sp in spec.y_names:
            ks_row = []
            for j, t in enumerate(t_probes):
                rep = _compare(ens.matrix(sp)[:, j], pdp.matrix(sp)[:, j], t)
                ks_row.append(rep.ks)
                rows.append(StudyRow(int(N), eps, float(t), sp, rep.ks, rep.wasserstein1,
                                     rep.n_a, rep.n_b, frac))
            if classified.regime == "D":
                rows.append(StudyRow(int(N), eps, "time_avg", sp, float(np.mean(ks_row)),
                                     float("nan"), M, M, frac))
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return repr(float(v))  # shortest text that round-trips exactly


def write_study_csv(rows, out) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["scale_N", "eps", "probe_t", "species", "ks", "w1", "n_ssa", "n_pdp", "truncated_frac"])
    for r in rows:
        w.writerow([r.scale_N, _fmt(r.eps), _fmt(r.probe_t), r.species, _fmt(r.ks), _fmt(r.w1),
                    r.n_ssa, r.n_pdp, _fmt(r.truncated_frac)])


# --- martingale residuals ----------------------------------------------------------

def test_functions(continuous: Sequence[str], discrete: Sequence[str] = ()) -> dict:
    """Bounded smooth test functions over the named variables.

    Continuous coordinates are damped by a Gaussian envelope, discrete ones
    pass through a saturating map, and pairwise products couple them.
    """
    fns = {}

    def damp(name):
        return lambda s: s[name] * np.exp(-s[name] ** 2 / 100.0)

    def sat(name):
        return lambda s: 1.0 - np.exp(-s[name])

    for c in continuous:
        fns[f"damp_{c}"] = damp(c)
    for d in discrete:
        fns[f"sat_{d}"] = sat(d)
    names = [(f"damp_{c}", damp(c)) for c in continuous] + [(f"sat_{d}", sat(d)) for d in discrete]
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            (ni, fi), (nj, fj) = names[i], names[j]
            fns[f"{ni}*{nj}"] = (lambda a, b: lambda s: a(s) * b(s))(fi, fj)
    return fns


@dataclass(frozen=True)
class MartingaleRow:
    f_name: str
    r: float
    t: float
    residual: float
    se: float
    passed: bool
    unbounded: bool = False


def martingale_residual(increments: Mapping[str, Mapping[tuple, np.ndarray]],
                        bound_flags: Optional[Mapping[str, bool]] = None,
                        atol: float = 1e-6) -> list:
    """Report ``mean +- SE`` of ``f(x_t) - f(x_r) - int_r^t A f ds`` per function and pair.

    ``increments[f_name][(r, t)]`` holds one value per trajectory.  A row
    passes when ``|mean| <= 3 SE + atol``; the floor absorbs quadrature and
    finite-difference error, which is all that remains when a function only
    moves along the flow and its increments carry no sampling noise.
    """
    rows = []
    for name, per_pair in increments.items():
        for (r, t), v in per_pair.items():
            v = np.asarray(v, dtype=np.float64)
            v = v[np.isfinite(v)]
            mean = float(v.mean())
            se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
            rows.append(MartingaleRow(name, float(r), float(t), mean, se, bool(abs(mean) <= 3.0 * se + atol),
                                      bool((bound_flags or {}).get(name, False))))
    return rows


def prelimit_generator(classified: ClassifiedModel, N: int, eps: Optional[float] = None):
    """Generator of the scaled jump process acting on name-keyed test functions."""
    net = compile_network(classified, N, eps)
    steps = np.where(net.continuous, net.stoich / N, net.stoich.astype(np.float64))

    def A(f, state: Mapping) -> np.ndarray:
        a = propensity(classified, N, eps, state)
        f0 = np.asarray(f(state), dtype=np.float64)
        out = np.zeros(np.shape(f0))
        for r in range(steps.shape[0]):
            moved = {s: state[s] + steps[r, i] for i, s in enumerate(net.species)}
            out = out + a[..., r] * (np.asarray(f(moved), dtype=np.float64) - f0)
        return out
    return A


def _bounded(values, limit=1e6) -> bool:
    return bool(np.all(np.isfinite(values)) and np.abs(values).max(initial=0.0) <= limit)


def ssa_martingale(sim: Simulator, M: int, functions: Mapping[str, Callable], pairs: Sequence,
                   master_seed: int, classified: ClassifiedModel, chunk: int = 250) -> list:
    """Residuals of the exact generator on exact paths (integral exact between events)."""
    A = prelimit_generator(classified, sim.net.N, sim.net.eps)
    pairs = [(float(r), float(t)) for r, t in pairs]
    if max(t for _, t in pairs) > sim.t_end:
        raise ValueError("probe pairs must lie within the simulated horizon")
    inc = {name: {p: np.empty(M) for p in pairs} for name in functions}
    flags = {name: False for name in functions}
    names = sim.net.species
    for start in range(0, M, chunk):
        trajs = sim.run_many(master_seed, np.arange(start, min(start + chunk, M)))
        for i, tr in enumerate(trajs, start):
            states = tr.scaled(tr.states)
            st = {s: states[:, k] for k, s in enumerate(names)}
            knots = np.concatenate([[0.0], tr.times, [np.inf]])
            for name, f in functions.items():
                fv = np.asarray(f(st), dtype=np.float64)
                af = A(f, st)
                if not (_bounded(fv) and _bounded(af)):
                    flags[name] = True
                for r, t in pairs:
                    dur = np.clip(np.minimum(knots[1:], t) - np.maximum(knots[:-1], r), 0.0, None)
                    kr = np.searchsorted(tr.times, r, side="right")
                    kt = np.searchsorted(tr.times, t, side="right")
                    inc[name][(r, t)][i] = fv[kt] - fv[kr] - float(af @ dur)
    _warn_unbounded(flags)
    return martingale_residual(inc, flags)


def pdp_martingale(spec: PdpSpec, x0, M: int, functions: Mapping[str, Callable], pairs: Sequence,
                   master_seed: int, config: FlowConfig = FlowConfig()) -> list:
    """Residuals of a limit generator on its own paths (integrals ride along the RK4 steps)."""
    A = generator(spec)
    pairs = [(float(r), float(t)) for r, t in pairs]
    probes = np.unique([v for p in pairs for v in p])
    names = list(functions)

    def lifted(f):
        def g(st):
            y = np.stack([st[n] for n in spec.y_names], axis=1)
            nu = np.stack([st[n] for n in spec.mode_names], axis=1).astype(np.int64) if spec.d \
                else np.zeros((y.shape[0], 0), dtype=np.int64)
            return A(f, y, nu)
        return g

    ens = run_pdp_ensemble(spec, x0, float(probes.max()), M, probes, master_seed, config,
                           functionals=[lifted(functions[n]) for n in names])
    inc, flags = {}, {}
    for k, name in enumerate(names):
        inc[name] = {}
        fvals = [np.asarray(functions[name](ens.state(j)), dtype=np.float64) for j in range(len(probes))]
        flags[name] = not all(_bounded(v[np.isfinite(v)]) for v in fvals)
        for r, t in pairs:
            jr, jt = np.searchsorted(probes, r), np.searchsorted(probes, t)
            inc[name][(r, t)] = fvals[jt] - fvals[jr] - (ens.integrals[:, jt, k] - ens.integrals[:, jr, k])
    _warn_unbounded(flags)
    return martingale_residual(inc, flags)


def _warn_unbounded(flags):
    bad = [n for n, v in flags.items() if v]
    if bad:
        warnings.warn(f"test functions took unbounded values on visited states: {bad}")


def write_martingale_csv(rows, out) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["f_name", "r", "t", "residual", "se", "pass"])
    for row in rows:
        w.writerow([row.f_name, _fmt(row.r), _fmt(row.t), _fmt(row.residual), _fmt(row.se),
                    "true" if row.passed else "false"])


# --- occupation time ------------------------------------------------------------------

@dataclass(frozen=True)
class OccupationEstimate:
    mean: float
    se: float
    per_trajectory: np.ndarray = field(repr=False)


def _occupation_one(tr: Trajectory, theta_index: int, T: float) -> float:
    theta = tr.states[:, theta_index]
    knots = np.concatenate([[0.0], tr.times, [np.inf]])
    dur = np.clip(np.minimum(knots[1:], T) - knots[:-1], 0.0, None)
    return float(dur[theta == 1].sum())


def occupation_time(trajectories: Sequence[Trajectory], T: float, theta: str = "theta") -> OccupationEstimate:
    """Mean time spent with ``theta = 1`` on [0, T], computed exactly from event times."""
    if not trajectories:
        raise ValueError("no trajectories")
    species = trajectories[0].species
    if theta not in species:
        raise KeyError(f"trajectories carry no species {theta!r}")
    k = species.index(theta)
    occ = np.array([_occupation_one(tr, k, T) for tr in trajectories])
    se = float(occ.std(ddof=1) / np.sqrt(occ.size)) if occ.size > 1 else 0.0
    return OccupationEstimate(float(occ.mean()), se, occ)


def occupation_bound(eps: float, M_lambda: float, alpha: float, T: float) -> float:
    """Upper bound ``eps (M_lambda T + 1) / alpha`` on the expected time with theta = 1."""
    return eps * (M_lambda * T + 1.0) / alpha
