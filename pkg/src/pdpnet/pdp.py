"""Piecewise deterministic processes from their local characteristics.

A :class:`PdpSpec` carries a per-mode vector field, a jump rate and a
transition sampler, all vectorized over a batch axis:

* ``field(y, nu) -> dy``      with ``y`` of shape (B, n) and ``nu`` of shape (B, d);
* ``rate(y, nu) -> lam``      of shape (B,), nonnegative;
* ``transition(y, nu, u)``    with ``u`` of shape (B, n_uniforms) in (0, 1),
  returning ``(y', nu')``.

Jump times come from integrating the hazard along the flow with fixed-step
RK4 and bisecting inside the step where it crosses a unit exponential draw.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .rng import uniforms

__all__ = [
    "PdpSpec", "FlowConfig", "FlowError", "Segment", "JumpRecord", "PdpTrajectory",
    "PdpEnsemble", "integrate_flow", "sample_jump_time", "JumpTime", "hazard_flow",
    "simulate_pdp", "run_pdp_ensemble", "generator", "write_pdp_csv", "as_state",
]


class FlowError(ArithmeticError):
    """Non-finite flow or rate, a negative rate, or a radius breach during pure integration."""


@dataclass(frozen=True)
class PdpSpec:
    n: int
    field: Callable
    rate: Callable
    transition: Callable
    y_names: tuple = ()
    mode_names: tuple = ()
    initial_mode: tuple = ()
    n_uniforms: int = 1
    jump_operator: Optional[Callable] = None  # (f, y, nu) -> lam * integral of (f(z) - f) Q(dz)

    @property
    def d(self) -> int:
        return len(self.mode_names)


@dataclass(frozen=True)
class FlowConfig:
    dt_max: float = 1e-3
    hazard_bisect_tol: float = 1e-10
    max_jumps: int = 1_000_000
    max_radius: float = 1e6

    def __post_init__(self):
        if min(self.dt_max, self.hazard_bisect_tol, self.max_jumps, self.max_radius) <= 0:
            raise ValueError("flow configuration values must be positive")


def _rk4(f, y, h):
    """One classical RK4 step; ``h`` broadcasts against the leading axis of ``y``."""
    hh = np.asarray(h, dtype=np.float64).reshape((-1,) + (1,) * (y.ndim - 1)) if np.ndim(h) else h
    k1 = f(y)
    k2 = f(y + 0.5 * hh * k1)
    k3 = f(y + 0.5 * hh * k2)
    k4 = f(y + hh * k3)
    return y + hh / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_flow(field: Callable, y0, t_span: float, config: FlowConfig = FlowConfig()):
    """Fixed-step RK4 of ``dy/dt = field(y)``; returns ``(y_end, knot_times, knot_values)``."""
    if t_span < 0:
        raise ValueError("t_span must be nonnegative")
    y = np.array(y0, dtype=np.float64)
    times, values = [0.0], [y.copy()]
    t = 0.0
    with np.errstate(all="ignore"):
        while t < t_span:
            h = min(config.dt_max, t_span - t)
            y = _rk4(lambda z: np.asarray(field(z), dtype=np.float64), y, h)
            t = t_span if h == t_span - t else t + h
            if not np.all(np.isfinite(y)):
                raise FlowError(f"non-finite flow value at t={t}")
            if np.max(np.abs(y), initial=0.0) > config.max_radius:
                raise FlowError(f"flow left the radius {config.max_radius} at t={t}")
            times.append(t)
            values.append(y.copy())
    return y, np.array(times), np.array(values)


# --- augmented (y, Lambda) stepping shared by the samplers and the engine ----------

def _aug_field(spec_field, spec_rate, nu, n=None, extra=None):
    """Field of ``z = (y, I, Lambda)``: ``I`` integrates ``extra(y, nu)`` when given."""
    def f(z):
        y = z[:, :n] if n is not None else z[:, :-1]
        lam = np.asarray(spec_rate(y, nu), dtype=np.float64)
        if np.any(lam < 0):
            raise FlowError("negative jump rate")
        parts = [np.asarray(spec_field(y, nu), dtype=np.float64)]
        if extra is not None:
            parts.append(extra(y, nu))
        parts.append(lam[:, None])
        return np.concatenate(parts, axis=1)
    return f


def _check_finite(z, where):
    if not np.all(np.isfinite(z)):
        raise FlowError(f"non-finite state or hazard {where}")


def _bisect(f, z0, h, target, tol):
    """Smallest s in (0, h] (to ``tol``) with Lambda(s) >= target, using one RK4 step of size s.

    Bracketing search: an Illinois false-position point each round, followed by
    a probe half a tolerance beyond it, so the bracket [lo, hi] always holds the
    crossing and usually collapses in a few rounds.
    """
    base = z0[:, -1]

    def excess(s):
        return _rk4(f, z0, s)[:, -1] - base - target

    lo = np.zeros_like(h)
    hi = h.copy()
    f_lo = -target.copy()
    f_hi = excess(hi)
    side = np.zeros(h.shape, dtype=np.int8)
    for _ in range(200):
        open_ = hi - lo > tol
        if not open_.any():
            break
        with np.errstate(all="ignore"):
            c = lo - f_lo * (hi - lo) / (f_hi - f_lo)
        c = np.where(np.isfinite(c), c, 0.5 * (lo + hi))
        c = np.clip(c, lo + 0.25 * tol, hi - 0.25 * tol)
        c = np.where(open_, c, hi)
        fc = excess(c)
        up = open_ & (fc >= 0)
        dn = open_ & (fc < 0)
        f_lo = np.where(up & (side == 1), 0.5 * f_lo, f_lo)
        f_hi = np.where(dn & (side == -1), 0.5 * f_hi, f_hi)
        hi, f_hi = np.where(up, c, hi), np.where(up, fc, f_hi)
        lo, f_lo = np.where(dn, c, lo), np.where(dn, fc, f_lo)
        side = np.where(up, 1, np.where(dn, -1, side)).astype(np.int8)
        # probe just past the estimate to close the bracket from the other side
        d = np.where(up, c - 0.5 * tol, c + 0.5 * tol)
        d = np.clip(d, lo, hi)
        fd = excess(d)
        up2 = open_ & (fd >= 0)
        dn2 = open_ & (fd < 0)
        hi, f_hi = np.where(up2, d, hi), np.where(up2, fd, f_hi)
        lo, f_lo = np.where(dn2, d, lo), np.where(dn2, fd, f_lo)
    else:  # pragma: no cover
        raise FlowError("jump-time search did not converge")
    return hi, _rk4(f, z0, hi)


@dataclass(frozen=True)
class JumpTime:
    jumped: bool
    t: float
    y: np.ndarray


def hazard_flow(field: Callable, rate: Callable, y, nu, exp_draw, t_max, config: FlowConfig):
    """Batched hazard integration.

    Flows each row of ``y`` along ``field`` until the integrated ``rate`` reaches
    ``exp_draw`` or ``t_max`` elapses.  Returns ``(jumped, t, y_at_t)``.
    """
    y = np.array(y, dtype=np.float64, ndmin=2)
    B = y.shape[0]
    nu = np.asarray(nu).reshape(B, -1)
    E = np.broadcast_to(np.asarray(exp_draw, dtype=np.float64), (B,)).copy()
    t_max = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (B,))
    if np.any(E <= 0):
        raise ValueError("exponential draw must be positive")
    t = np.zeros(B)
    jumped = np.zeros(B, dtype=bool)
    z = np.concatenate([y, np.zeros((B, 1))], axis=1)
    active = t < t_max
    with np.errstate(all="ignore"):
        while active.any():
            idx = np.flatnonzero(active)
            f = _aug_field(field, rate, nu[idx])
            h = np.minimum(config.dt_max, t_max[idx] - t[idx])
            z0 = z[idx]
            z1 = _rk4(f, z0, h)
            _check_finite(z1, "during hazard integration")
            cross = z1[:, -1] >= E[idx]
            if cross.any():
                c = idx[cross]
                fc = _aug_field(field, rate, nu[c])
                s, zc = _bisect(fc, z0[cross], h[cross], E[c] - z0[cross, -1], config.hazard_bisect_tol)
                z[c] = zc
                t[c] += s
                jumped[c] = True
                active[c] = False
            keep = ~cross
            k = idx[keep]
            z[k] = z1[keep]
            done = h[keep] >= t_max[k] - t[k]
            t[k] = np.where(done, t_max[k], t[k] + h[keep])
            active[k[done]] = False
            far = np.abs(z[k, :-1]).max(axis=1, initial=0.0) > config.max_radius
            if far.any():
                raise FlowError(f"flow left the radius {config.max_radius}")
    return jumped, t, z[:, :-1]


def sample_jump_time(spec: PdpSpec, x0, exp_draw: float, t_max: float,
                     config: FlowConfig = FlowConfig()) -> JumpTime:
    """First jump time from ``x0 = (y, nu)`` for a given unit exponential realization."""
    y, nu = x0
    jumped, t, yt = hazard_flow(spec.field, spec.rate, np.atleast_1d(np.asarray(y, float))[None, :],
                                np.asarray(nu).reshape(1, -1), exp_draw, t_max, config)
    return JumpTime(bool(jumped[0]), float(t[0]), yt[0])


# --- engine ---------------------------------------------------------------------------

KNOT, JUMP_PRE, JUMP_POST = "flow_knot", "jump_pre", "jump_post"


@dataclass
class Segment:
    t_start: float
    t_end: float
    mode: tuple
    times: np.ndarray
    values: np.ndarray


@dataclass
class JumpRecord:
    t: float
    pre_y: np.ndarray
    pre_mode: tuple
    post_y: np.ndarray
    post_mode: tuple


@dataclass
class PdpTrajectory:
    spec: PdpSpec
    segments: list
    jumps: list
    end_time: float
    truncated: bool = False
    jump_cap_hit: bool = False

    @property
    def jump_count(self) -> int:
        return len(self.jumps)

    def final(self):
        seg = self.segments[-1]
        return seg.values[-1], seg.mode


@dataclass
class PdpEnsemble:
    y_names: tuple
    mode_names: tuple
    probes: np.ndarray
    y: np.ndarray            # (M, P, n)
    modes: np.ndarray        # (M, P, d)
    integrals: Optional[np.ndarray]  # (M, P, K) running integrals of the functionals
    jump_counts: np.ndarray
    truncated: np.ndarray
    jump_cap_hit: np.ndarray

    @property
    def n_truncated(self) -> int:
        return int(self.truncated.sum())

    def matrix(self, name: str) -> np.ndarray:
        if name in self.y_names:
            return self.y[:, :, self.y_names.index(name)]
        return self.modes[:, :, self.mode_names.index(name)].astype(np.float64)

    def state(self, probe_index: int) -> dict:
        return {n: self.matrix(n)[:, probe_index] for n in self.y_names + self.mode_names}


def as_state(spec: PdpSpec, y, nu) -> dict:
    """Name-keyed view used by test functions."""
    out = {n: y[:, i] for i, n in enumerate(spec.y_names)}
    out.update({n: nu[:, i].astype(np.float64) for i, n in enumerate(spec.mode_names)})
    return out


def _grid(t_end, dt_max, probes):
    k = int(np.ceil(t_end / dt_max - 1e-9))
    grid = np.minimum(np.arange(k + 1) * dt_max, t_end)
    grid = np.unique(np.concatenate([grid, probes, [t_end]]))
    return grid


def _engine(spec: PdpSpec, y0, nu0, t_end, seed, streams, config, probes, record=False,
            functionals=None):
    streams = np.asarray(streams, dtype=np.uint64)
    B = streams.shape[0]
    n, d = spec.n, spec.d
    probes = np.asarray(probes, dtype=np.float64)
    P = probes.shape[0]
    y = np.tile(np.asarray(y0, dtype=np.float64).reshape(1, n), (B, 1))
    nu = np.tile(np.asarray(nu0, dtype=np.int64).reshape(1, d), (B, 1))
    draws = np.zeros(B, dtype=np.uint64)
    K = len(functionals) if functionals else 0

    def draw(rows, k=1):
        out = np.empty((rows.size, k))
        for j in range(k):
            out[:, j] = uniforms(seed, streams[rows], draws[rows])
            draws[rows] += np.uint64(1)
        return out

    def funcs(yy, mm):
        st = as_state(spec, yy, mm)
        return np.stack([np.broadcast_to(np.asarray(g(st), dtype=np.float64), (yy.shape[0],))
                         for g in functionals], axis=1)

    extra = funcs if K else None

    E = -np.log(draw(np.arange(B))[:, 0])
    L = np.zeros(B)
    t = np.zeros(B)
    alive = np.ones(B, dtype=bool)
    jumps = np.zeros(B, dtype=np.int64)
    truncated = np.zeros(B, dtype=bool)
    capped = np.zeros(B, dtype=bool)
    py = np.full((B, P, n), np.nan)
    pm = np.full((B, P, d), -1, dtype=np.int64)
    I = np.zeros((B, K))
    pI = np.full((B, P, K), np.nan) if K else None
    logs = [[(0.0, KNOT, nu[i].copy(), y[i].copy())] for i in range(B)] if record else None

    grid = _grid(t_end, config.dt_max, probes)
    pj = 0
    while pj < P and probes[pj] <= 0.0:
        py[:, pj], pm[:, pj] = y, nu
        if K:
            pI[:, pj] = I
        pj += 1

    with np.errstate(all="ignore"):
        for T1 in grid[1:]:
            while True:
                idx = np.flatnonzero(alive & (t < T1))
                if idx.size == 0:
                    break
                h = T1 - t[idx]
                f = _aug_field(spec.field, spec.rate, nu[idx], n, extra)
                z0 = np.concatenate([y[idx], np.zeros((idx.size, K)), L[idx, None]], axis=1)
                z1 = _rk4(f, z0, h)
                _check_finite(z1, "in the PDP flow")
                cross = z1[:, -1] >= E[idx]
                if cross.any():
                    c = idx[cross]
                    # locate the crossing without the functionals, then take one full step to it
                    plain = np.r_[0:n, n + K]
                    fs = _aug_field(spec.field, spec.rate, nu[c])
                    s, zc = _bisect(fs, z0[cross][:, plain], h[cross], E[c] - z0[cross, -1],
                                    config.hazard_bisect_tol)
                    if K:
                        zc = _rk4(_aug_field(spec.field, spec.rate, nu[c], n, extra), z0[cross], s)
                    z1[cross] = zc
                    h = h.copy()
                    h[cross] = s
                new_t = np.where(cross, t[idx] + h, T1)
                y[idx] = z1[:, :n]
                if K:
                    I[idx] += z1[:, n:n + K]
                L[idx] = z1[:, -1]
                t[idx] = new_t
                if record:
                    for j, i in enumerate(idx):
                        logs[i].append((new_t[j], JUMP_PRE if cross[j] else KNOT, nu[i].copy(), y[i].copy()))
                if cross.any():
                    c = idx[cross]
                    over = jumps[c] >= config.max_jumps
                    if over.any():
                        capped[c[over]] = truncated[c[over]] = True
                        alive[c[over]] = False
                        c = c[~over]
                    if c.size:
                        u = draw(c, spec.n_uniforms)
                        y_new, nu_new = spec.transition(y[c], nu[c], u)
                        y[c] = np.asarray(y_new, dtype=np.float64).reshape(c.size, n)
                        nu[c] = np.asarray(nu_new, dtype=np.int64).reshape(c.size, d)
                        jumps[c] += 1
                        L[c] = 0.0
                        E[c] = -np.log(draw(c)[:, 0])
                        if record:
                            for i in c:
                                logs[i].append((t[i], JUMP_POST, nu[i].copy(), y[i].copy()))
                far = idx[np.abs(y[idx]).max(axis=1, initial=0.0) > config.max_radius]
                truncated[far] = True
                alive[far] = False
            while pj < P and probes[pj] <= T1:
                ok = alive
                py[ok, pj], pm[ok, pj] = y[ok], nu[ok]
                if K:
                    pI[ok, pj] = I[ok]
                pj += 1
            if not alive.any():
                break
    return dict(y=py, modes=pm, integrals=pI, jumps=jumps, truncated=truncated,
                capped=capped, t=t, final_y=y, final_nu=nu, logs=logs)


def _initial(spec, x0):
    if x0 is None:
        raise ValueError("initial state required")
    y0, nu0 = x0
    y0 = np.atleast_1d(np.asarray(y0, dtype=np.float64))
    nu0 = np.asarray(nu0 if nu0 is not None else (), dtype=np.int64).reshape(-1)
    if y0.shape != (spec.n,) or nu0.shape != (spec.d,):
        raise ValueError(f"initial state must have {spec.n} continuous and {spec.d} mode components")
    return y0, nu0


def _segments(log):
    segments, jumps = [], []
    cur = [log[0]]
    for rec in log[1:]:
        if rec[1] == JUMP_POST:
            pre = cur[-1]
            jumps.append(JumpRecord(float(pre[0]), pre[3], tuple(pre[2].tolist()), rec[3], tuple(rec[2].tolist())))
            segments.append(cur)
            cur = [rec]
        else:
            cur.append(rec)
    segments.append(cur)
    out = [Segment(float(s[0][0]), float(s[-1][0]), tuple(s[0][2].tolist()),
                   np.array([r[0] for r in s]), np.array([r[3] for r in s])) for s in segments]
    return out, jumps


def simulate_pdp(spec: PdpSpec, x0, t_end: float, seed: int,
                 config: FlowConfig = FlowConfig(), stream: int = 0) -> PdpTrajectory:
    """One path with full knot and jump records; stream 0 of ``seed`` by default."""
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    y0, nu0 = _initial(spec, x0)
    out = _engine(spec, y0, nu0, t_end, seed, [stream], config, np.empty(0), record=True)
    segs, jumps = _segments(out["logs"][0])
    return PdpTrajectory(spec, segs, jumps, float(out["t"][0]), bool(out["truncated"][0]),
                         bool(out["capped"][0]))


def run_pdp_ensemble(spec: PdpSpec, x0, t_end: float, M: int, probes: Sequence[float],
                     master_seed: int, config: FlowConfig = FlowConfig(),
                     functionals: Optional[Sequence[Callable]] = None,
                     batch: int = 4096) -> PdpEnsemble:
    """M paths in lockstep; path i reads stream i of ``master_seed`` regardless of batching.

    ``functionals`` are functions of the name-keyed state; their running time
    integrals, carried through the RK4 steps alongside the flow, are reported
    at each probe.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    probes = np.asarray(probes, dtype=np.float64)
    if (probes < 0).any() or (probes > t_end).any() or (np.diff(probes) < 0).any():
        raise ValueError("probe times must be sorted and lie in [0, t_end]")
    y0, nu0 = _initial(spec, x0)
    parts = [_engine(spec, y0, nu0, t_end, master_seed, np.arange(s, min(s + batch, M)),
                     config, probes, functionals=functionals)
             for s in range(0, M, batch)]
    cat = lambda k: np.concatenate([p[k] for p in parts])  # noqa: E731
    return PdpEnsemble(spec.y_names, spec.mode_names, probes, cat("y"), cat("modes"),
                       cat("integrals") if functionals else None, cat("jumps"),
                       cat("truncated"), cat("capped"))


# --- generator --------------------------------------------------------------------------

def generator(spec: PdpSpec, step: float = 1e-6):
    """``A f(y, nu) = F . grad f + lam * int (f(z) - f) Q(dz)`` for name-keyed test functions.

    Gradients are central differences with the given step; the jump part comes
    from ``spec.jump_operator``.
    """
    def A(f, y, nu):
        y = np.asarray(y, dtype=np.float64)
        F = np.asarray(spec.field(y, nu), dtype=np.float64)
        out = np.zeros(y.shape[0])
        for i in range(spec.n):
            if not np.any(F[:, i]):
                continue
            e = np.zeros(spec.n)
            e[i] = step
            grad = (np.asarray(f(as_state(spec, y + e, nu)), dtype=np.float64)
                    - np.asarray(f(as_state(spec, y - e, nu)), dtype=np.float64)) / (2 * step)
            out += F[:, i] * grad
        if spec.jump_operator is not None:
            out += spec.jump_operator(f, y, nu)
        return out
    return A


# --- CSV ------------------------------------------------------------------------------

def write_pdp_csv(traj: PdpTrajectory, out) -> None:
    """``t,event,mode,<y>``: knots of each segment, with jump_pre/jump_post rows at jumps."""
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["t", "event", "mode", *traj.spec.y_names])

    def mode(m):
        return ";".join(str(v) for v in m)

    for k, seg in enumerate(traj.segments):
        last = len(seg.times) - 1
        for j, (tt, yy) in enumerate(zip(seg.times, seg.values)):
            if j == 0 and k > 0:
                ev = JUMP_POST
            elif j == last and k < len(traj.segments) - 1:
                ev = JUMP_PRE
            else:
                ev = KNOT
            w.writerow(["%.17g" % tt, ev, mode(seg.mode), *("%.17g" % v for v in yy)])
