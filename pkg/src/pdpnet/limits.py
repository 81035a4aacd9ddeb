"""Limit processes of a classified network.

Each ``build_regime_*`` turns a :class:`~pdpnet.model.ClassifiedModel` into a
:class:`~pdpnet.pdp.PdpSpec`.  Rates are the scaled expressions of the model
file evaluated on batches of states; the averaging tools for regime C and the
fast-flow jump kernel for regime D live here too.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import rate_expr as rx
from .model import ClassifiedModel, ModelError, PropensityError, RClass, RegimeError
from .pdp import FlowConfig, FlowError, PdpSpec, _rk4, as_state, hazard_flow

__all__ = [
    "ErgodicityError", "CenteringError", "FastBlockSpec", "RegimeDConstants",
    "fast_block", "stationary_distribution", "averaged_rates", "invariant_law", "solve_poisson",
    "averaging_defect", "averaging_defect_vector", "build_regime_a", "build_regime_b",
    "build_regime_c", "build_regime_d", "build_limit", "limit_initial_state",
    "probe_regime_d_constants",
]


class ErgodicityError(ValueError):
    """The frozen fast chain has more than one closed communicating class."""


class CenteringError(ValueError):
    """Right-hand side of a Poisson equation is not centered under the invariant law."""


def _require(classified: ClassifiedModel, regime: str):
    if classified.regime != regime:
        raise RegimeError(f"model was classified under regime {classified.regime}, not {regime}")


def _eval_rates(classified: ClassifiedModel, idx: Sequence[int], state: Mapping, B: int) -> np.ndarray:
    """(B, len(idx)) raw scaled rates of reactions ``idx`` on a name-keyed batch of states."""
    model = classified.model
    fns = _compiled(model)
    out = np.empty((B, len(idx)))
    for j, i in enumerate(idx):
        out[:, j] = fns[i](state)
        if (out[:, j] < 0).any():
            raise PropensityError(f"negative rate for reaction {model.reactions[i].name}")
    return out


_COMPILED: dict = {}


def _compiled(model):
    key = id(model)
    hit = _COMPILED.get(key)
    if hit is None or hit[0] is not model:
        hit = (model, [rx.compile_numpy(r.rate, model.params) for r in model.reactions])
        _COMPILED[key] = hit
    return hit[1]


def _cdelta(classified, i, names):
    r = classified.model.reactions[i]
    return np.array([r.delta.get(n, 0) for n in names], dtype=np.float64)


def _ddelta(classified, i, names):
    r = classified.model.reactions[i]
    return np.array([r.delta.get(n, 0) for n in names], dtype=np.int64)


def _jump_spec(n, y_names, mode_names, initial_mode, drift, channel_rates, dy, dnu) -> PdpSpec:
    """Spec with a finite set of jump channels ``j``: rate ``channel_rates[:, j]``, move ``(dy[j], dnu[j])``."""
    J = len(dnu)
    dy = np.asarray(dy, dtype=np.float64).reshape(J, n)
    dnu = np.asarray(dnu, dtype=np.int64).reshape(J, len(mode_names))

    def rate(y, nu):
        return channel_rates(y, nu).sum(axis=1) if dy.shape[0] else np.zeros(y.shape[0])

    def transition(y, nu, u):
        lam = channel_rates(y, nu)
        cum = np.cumsum(lam, axis=1)
        j = np.argmax(cum > u[:, :1] * cum[:, -1:], axis=1)
        return y + dy[j], nu + dnu[j]

    def jump_operator(f, y, nu):
        out = np.zeros(y.shape[0])
        if not dy.shape[0]:
            return out
        lam = channel_rates(y, nu)
        f0 = np.asarray(f(as_state(spec, y, nu)), dtype=np.float64)
        for j in range(dy.shape[0]):
            fj = np.asarray(f(as_state(spec, y + dy[j], nu + dnu[j])), dtype=np.float64)
            out += lam[:, j] * (fj - f0)
        return out

    spec = PdpSpec(n=n, field=drift, rate=rate, transition=transition, y_names=tuple(y_names),
                   mode_names=tuple(mode_names), initial_mode=tuple(initial_mode), n_uniforms=1,
                   jump_operator=jump_operator)
    return spec


def _named(y_names, y, mode_names, nu, extra=None):
    st = {n: y[:, i] for i, n in enumerate(y_names)}
    st.update({n: nu[:, i].astype(np.float64) for i, n in enumerate(mode_names)})
    if extra:
        st.update(extra)
    return st


# --- regimes A and B ------------------------------------------------------------------

def _build_ab(classified: ClassifiedModel, with_s2: bool) -> PdpSpec:
    model = classified.model
    C, D = classified.C, classified.D
    n = len(C)
    drift_idx = classified.by_class(RClass.R_C, RClass.S1)
    jump_idx = classified.by_class(RClass.R_D, RClass.R_DC_SLOW)
    if with_s2:
        jump_idx = jump_idx + classified.by_class(RClass.S2)
    gamma = np.array([_cdelta(classified, i, C) for i in drift_idx]).reshape(-1, n)
    dy, dnu = [], []
    for i in jump_idx:
        r = model.reactions[i]
        if classified.classes[i] is RClass.S2:
            dy.append([r.sdelta.get(c, 0.0) for c in C])
        else:
            dy.append(np.zeros(n))  # the O(1/N) continuous displacement vanishes in the limit
        dnu.append(_ddelta(classified, i, D))

    def drift(y, nu):
        lam = _eval_rates(classified, drift_idx, _named(C, y, D, nu), y.shape[0])
        return lam @ gamma

    def channel_rates(y, nu):
        return _eval_rates(classified, jump_idx, _named(C, y, D, nu), y.shape[0])

    init = tuple(int(model.species_by_name(d).init) for d in D)
    return _jump_spec(n, C, D, init, drift, channel_rates, dy, dnu)


def build_regime_a(classified: ClassifiedModel) -> PdpSpec:
    """Flow from R_C and S1 reactions in each discrete mode; jumps from R_D and the slow R_DC."""
    _require(classified, "A")
    return _build_ab(classified, with_s2=False)


def build_regime_b(classified: ClassifiedModel) -> PdpSpec:
    """As regime A, plus S2 reactions that jump the continuous state by ``sdelta``."""
    _require(classified, "B")
    return _build_ab(classified, with_s2=True)


# --- averaging (regime C) ---------------------------------------------------------------

def stationary_distribution(Q) -> np.ndarray:
    """Invariant law of a finite generator matrix (rows sum to zero)."""
    Q = np.asarray(Q, dtype=np.float64)
    K = Q.shape[0]
    if Q.ndim != 2 or Q.shape != (K, K) or K == 0:
        raise ValueError("generator must be a non-empty square matrix")
    off = Q - np.diag(np.diag(Q))
    scale = max(1.0, float(np.abs(Q).max()))
    if (off < 0).any() or np.abs(Q.sum(axis=1)).max() > 1e-12 * scale * K:
        raise ValueError("not a generator matrix: off-diagonals must be >= 0 and rows sum to 0")
    _check_ergodic(off > 0)
    A = Q.T.copy()
    A[-1, :] = 1.0
    b = np.zeros(K)
    b[-1] = 1.0
    try:
        nu = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - excluded by the ergodicity check
        raise ErgodicityError("singular stationary system") from exc
    return nu


def _check_ergodic(pattern: np.ndarray):
    K = pattern.shape[0]
    if K == 1:
        return
    n_comp, labels = connected_components(csr_matrix(pattern), directed=True, connection="strong")
    if n_comp == 1:
        return
    leaves = np.ones(n_comp, dtype=bool)
    src, dst = np.nonzero(pattern)
    for a, b in zip(labels[src], labels[dst]):
        if a != b:
            leaves[a] = False
    closed = np.flatnonzero(leaves)
    if closed.size > 1:
        classes = [np.flatnonzero(labels == c).tolist() for c in closed]
        raise ErgodicityError(f"fast chain is not uniquely ergodic; closed classes (state indices): {classes}")


def _stationary_batch(Q: np.ndarray) -> np.ndarray:
    """Row-wise invariant laws for a stack of generators (B, K, K)."""
    B, K, _ = Q.shape
    if K == 1:
        return np.ones((B, 1))
    flat = Q.reshape(B, -1)
    uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    if uniq.shape[0] <= 8:
        nus = np.array([stationary_distribution(q.reshape(K, K)) for q in uniq])
        return nus[inverse]
    patterns = np.unique(uniq.reshape(-1, K, K) > 0, axis=0)
    for p in patterns:
        _check_ergodic(p & ~np.eye(K, dtype=bool))
    A = np.swapaxes(uniq.reshape(-1, K, K), 1, 2).copy()
    A[:, -1, :] = 1.0
    b = np.zeros((A.shape[0], K, 1))
    b[:, -1, 0] = 1.0
    return np.linalg.solve(A, b)[:, :, 0][inverse]


@dataclass(frozen=True)
class FastBlockSpec:
    """The fast discrete block: enumerated states and the frozen-slow-variable generator."""

    classified: ClassifiedModel
    species: tuple        # fast species names
    states: np.ndarray    # (K, m) integer states, lexicographic
    moves: tuple          # (reaction index, (m,) change) for S1 reactions that move the block

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def index_of(self, state) -> int:
        state = np.asarray(state, dtype=np.int64).reshape(-1)
        hit = np.flatnonzero((self.states == state).all(axis=1))
        if hit.size == 0:
            raise KeyError(f"{tuple(state)} is outside the fast range")
        return int(hit[0])

    def _expand(self, y, nu):
        """Batch of slow states -> (B*K) full states with the fast block enumerated."""
        cl = self.classified
        B, K = y.shape[0], self.size
        st = {n: np.repeat(y[:, i], K) for i, n in enumerate(cl.C)}
        st.update({n: np.repeat(nu[:, i].astype(np.float64), K) for i, n in enumerate(cl.D1)})
        st.update({n: np.tile(self.states[:, i].astype(np.float64), B) for i, n in enumerate(self.species)})
        return st

    def generator_batch(self, y, nu) -> np.ndarray:
        B, K = y.shape[0], self.size
        Q = np.zeros((B, K, K))
        if not self.moves:
            return Q
        st = self._expand(y, nu)
        lam = _eval_rates(self.classified, [i for i, _ in self.moves], st, B * K).reshape(B, K, -1)
        lookup = {tuple(s): k for k, s in enumerate(self.states.tolist())}
        for j, (i, step) in enumerate(self.moves):
            for k in range(K):
                target = lookup.get(tuple((self.states[k] + step).tolist()))
                rate = lam[:, k, j]
                if target is None:
                    if np.any(rate > 0):
                        name = self.classified.model.reactions[i].name
                        raise ModelError(f"reaction {name} leaves the declared fast range from state "
                                         f"{dict(zip(self.species, self.states[k].tolist()))}")
                    continue
                Q[:, k, target] += rate
        idx = np.arange(K)
        Q[:, idx, idx] = -Q.sum(axis=2)
        return Q

    def generator_at(self, x_C, X_D1=None) -> np.ndarray:
        y, nu = _slow_point(self.classified, x_C, X_D1)
        return self.generator_batch(y, nu)[0]


def _slow_point(classified, x_C, X_D1):
    def vec(v, names, dtype):
        if v is None:
            v = {}
        if isinstance(v, Mapping):
            missing = [n for n in names if n not in v]
            if missing:
                raise KeyError(f"missing values for {missing}")
            v = [v[n] for n in names]
        return np.asarray(v, dtype=dtype).reshape(1, len(names))
    return vec(x_C, classified.C, np.float64), vec(X_D1, classified.D1, np.int64)


def fast_block(classified: ClassifiedModel) -> FastBlockSpec:
    _require(classified, "C")
    model = classified.model
    names = classified.D2
    ranges = [range(model.species_by_name(n).fast_range[0], model.species_by_name(n).fast_range[1] + 1)
              for n in names]
    states = np.array(list(itertools.product(*ranges)), dtype=np.int64).reshape(-1, len(names))
    moves = []
    for i in classified.by_class(RClass.S1):
        step = _ddelta(classified, i, names)
        if step.any():
            moves.append((i, step))
    return FastBlockSpec(classified, names, states, tuple(moves))


class _Averager:
    """Batched averaged rates with the invariant law recomputed at every evaluation point."""

    def __init__(self, classified: ClassifiedModel):
        self.cl = classified
        self.fast = fast_block(classified)

    def nu(self, y, nu):
        return _stationary_batch(self.fast.generator_batch(y, nu))

    def rates(self, idx, y, nu, weights=None):
        """(B, len(idx)) averaged scaled rates."""
        B, K = y.shape[0], self.fast.size
        if weights is None:
            weights = self.nu(y, nu)
        lam = _eval_rates(self.cl, idx, self.fast._expand(y, nu), B * K).reshape(B, K, -1)
        return np.einsum("bk,bkj->bj", weights, lam)


def averaged_rates(classified: ClassifiedModel, x_C, X_D1=None) -> dict:
    """Rates of every reaction averaged against the invariant law of the fast block."""
    avg = _Averager(classified)
    y, nu = _slow_point(classified, x_C, X_D1)
    lam = avg.rates(range(len(classified.model.reactions)), y, nu)[0]
    return {r.name: float(v) for r, v in zip(classified.model.reactions, lam)}


def invariant_law(classified: ClassifiedModel, x_C, X_D1=None):
    """``(states, nu)``: the fast-block states and their stationary weights at a slow point."""
    fb = fast_block(classified)
    return fb.states, stationary_distribution(fb.generator_at(x_C, X_D1))


def solve_poisson(Q, g, nu: Optional[np.ndarray] = None) -> np.ndarray:
    """Centered solution of ``Q h = g`` (with ``nu . h = 0``)."""
    Q = np.asarray(Q, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if nu is None:
        nu = stationary_distribution(Q)
    else:
        _check_ergodic((Q - np.diag(np.diag(Q))) > 0)
    if abs(float(nu @ g)) > 1e-12 * max(1.0, float(np.abs(g).max())):
        raise CenteringError(f"right-hand side is not centered: nu . g = {float(nu @ g):.3e}")
    A = np.vstack([Q, nu[None, :]])
    b = np.concatenate([g, [0.0]])
    h = np.linalg.lstsq(A, b, rcond=None)[0]
    resid = float(np.abs(Q @ h - g).max())
    if resid > 1e-10:
        raise ArithmeticError(f"Poisson solve residual {resid:.3e} exceeds 1e-10")
    return h


def _fd_grad(f, state, names, step=1e-6):
    out = []
    for n in names:
        up = dict(state)
        dn = dict(state)
        up[n] = state[n] + step
        dn[n] = state[n] - step
        out.append((np.asarray(f(up), dtype=np.float64) - np.asarray(f(dn), dtype=np.float64)) / (2 * step))
    return np.stack(out, axis=-1) if out else np.zeros(np.shape(next(iter(state.values()), 0.0)) + (0,))


def averaging_defect_vector(f: Callable, classified: ClassifiedModel, x_C, X_D1=None,
                            grad: Optional[Callable] = None) -> np.ndarray:
    """The defect ``g(k)`` for every fast state ``k``, checked to be centered.

    ``f`` takes a name-keyed state of the slow variables; ``grad`` (optional)
    returns its gradient in the continuous species, otherwise central
    differences with step 1e-6 are used.
    """
    avg = _Averager(classified)
    cl = classified
    y, nu = _slow_point(cl, x_C, X_D1)
    K = avg.fast.size
    weights = avg.nu(y, nu)
    full = avg.fast._expand(y, nu)
    slow = {n: y[:, i] for i, n in enumerate(cl.C)}
    slow.update({n: nu[:, i].astype(np.float64) for i, n in enumerate(cl.D1)})
    g = np.zeros(K)

    s1 = cl.by_class(RClass.S1)
    if s1:
        lam = _eval_rates(cl, s1, full, K)
        bar = weights[0] @ lam
        gamma = np.array([_cdelta(cl, i, cl.C) for i in s1]).reshape(len(s1), -1)
        gf = np.asarray(grad(slow), dtype=np.float64).reshape(-1) if grad else _fd_grad(f, slow, cl.C)[0]
        g += ((bar[None, :] - lam) @ gamma) @ gf
    slow_jumps = cl.by_class(RClass.R_DC_SLOW, RClass.R_D)
    if slow_jumps:
        lam = _eval_rates(cl, slow_jumps, full, K)
        bar = weights[0] @ lam
        f0 = float(np.asarray(f(slow)).reshape(-1)[0])
        for j, i in enumerate(slow_jumps):
            moved = dict(slow)
            step = _ddelta(cl, i, cl.D1)
            for m, name in enumerate(cl.D1):
                moved[name] = slow[name] + step[m]
            df = float(np.asarray(f(moved)).reshape(-1)[0]) - f0
            g += df * (bar[j] - lam[:, j])
    centre = float(weights[0] @ g)
    if abs(centre) > 1e-10 * max(1.0, float(np.abs(g).max())):
        raise CenteringError(f"averaging defect is not centered: nu . g = {centre:.3e}")
    return g


def averaging_defect(f: Callable, classified: ClassifiedModel, x: Mapping,
                     grad: Optional[Callable] = None) -> float:
    """Defect at one full state ``x`` (continuous, slow discrete and fast species)."""
    fast = fast_block(classified)
    g = averaging_defect_vector(f, classified, {n: x[n] for n in classified.C},
                                {n: x[n] for n in classified.D1}, grad)
    return float(g[fast.index_of([x[n] for n in fast.species])])


def build_regime_c(classified: ClassifiedModel) -> PdpSpec:
    """Averaged PDP on (x_C, X_D1)."""
    _require(classified, "C")
    avg = _Averager(classified)
    C, D1 = classified.C, classified.D1
    n = len(C)
    drift_idx = classified.by_class(RClass.R_C, RClass.S1)
    jump_idx = classified.by_class(RClass.R_D, RClass.R_DC_SLOW)
    gamma = np.array([_cdelta(classified, i, C) for i in drift_idx]).reshape(-1, n)
    dnu = [_ddelta(classified, i, D1) for i in jump_idx]

    def drift(y, nu):
        return avg.rates(drift_idx, y, nu) @ gamma

    def channel_rates(y, nu):
        return avg.rates(jump_idx, y, nu)

    init = tuple(int(classified.model.species_by_name(d).init) for d in D1)
    return _jump_spec(n, C, D1, init, drift, channel_rates, np.zeros((len(jump_idx), n)), dnu)


# --- singular switching (regime D) ---------------------------------------------------------

@dataclass(frozen=True)
class RegimeDConstants:
    alpha: float       # lower bound of the scaled off-switch rate over the box
    M_lambda: float    # upper bound of the on-switch rate over the box
    box: tuple = ()    # ((name, lo, hi), ...)
    margin: float = 0.0


def _theta_parts(classified: ClassifiedModel):
    model = classified.model
    on = [i for i in classified.by_class(RClass.THETA_FLIP) if model.reactions[i].gate == 0]
    off = [i for i in classified.by_class(RClass.THETA_FLIP) if model.reactions[i].gate == 1]
    slow = [i for i in classified.by_class(RClass.S1) if model.reactions[i].gate == 0]
    fast = [i for i in classified.by_class(RClass.S1) if model.reactions[i].gate == 1]
    return on, off, slow, fast


def _theta_state(classified, y, theta_value):
    st = {n: y[:, i] for i, n in enumerate(classified.C)}
    st[classified.model.theta] = np.full(y.shape[0], float(theta_value))
    return st


def probe_regime_d_constants(classified: ClassifiedModel, box: Optional[Mapping] = None,
                             grid: int = 21, margin: float = 0.0) -> RegimeDConstants:
    """Grid estimates of the switching-rate bounds; a nonzero margin widens them."""
    _require(classified, "D")
    C = classified.C
    box = dict(box or {})
    for c in C:
        box.setdefault(c, (0.0, 10.0))
    axes = [np.linspace(box[c][0], box[c][1], grid) for c in C]
    pts = np.array(list(itertools.product(*axes))).reshape(-1, len(C))
    on, off, _, _ = _theta_parts(classified)
    B = pts.shape[0]
    lam_on = _eval_rates(classified, on, _theta_state(classified, pts, 0), B).sum(axis=1)
    lam_off = _eval_rates(classified, off, _theta_state(classified, pts, 1), B).sum(axis=1)
    return RegimeDConstants(alpha=float(lam_off.min()) * (1.0 - margin),
                            M_lambda=float(lam_on.max()) * (1.0 + margin),
                            box=tuple((c, float(box[c][0]), float(box[c][1])) for c in C),
                            margin=margin)


def build_regime_d(classified: ClassifiedModel, constants: Optional[RegimeDConstants] = None,
                   config: FlowConfig = FlowConfig(), jump_sampler: str = "hazard_time",
                   kernel_nodes: int = 40, kernel_step: float = 0.25) -> PdpSpec:
    """Single-mode PDP whose jumps land on the fast flow at an exponential hazard time.

    Jump targets solve ``int_0^t lam1(phi1(s, x)) ds = E`` for a unit exponential
    ``E``.  With ``jump_sampler="time"`` this is found by RK4 in real time plus
    bisection (``config``); the default ``"hazard_time"`` integrates
    ``dy/dLambda = F1(y) / lam1(y)`` from 0 to ``E`` instead, which is the same
    point and much cheaper since no crossing has to be located.  The jump part
    of the generator uses Gauss-Laguerre quadrature in hazard time.
    ``kernel_step`` bounds the hazard-time RK4 substeps.
    """
    _require(classified, "D")
    if jump_sampler not in ("hazard_time", "time"):
        raise ValueError(f"unknown jump sampler {jump_sampler!r}")
    if constants is None:
        constants = probe_regime_d_constants(classified)
    if not constants.alpha > 0:
        raise RegimeError(f"off-switch rate lower bound alpha = {constants.alpha} is not positive; "
                          "jump targets would not be reached")
    C = classified.C
    n = len(C)
    on, off, slow, fast = _theta_parts(classified)
    g0 = np.array([_cdelta(classified, i, C) for i in slow]).reshape(-1, n)
    g1 = np.array([_cdelta(classified, i, C) for i in fast]).reshape(-1, n)

    def drift(y, nu):
        return _eval_rates(classified, slow, _theta_state(classified, y, 0), y.shape[0]) @ g0

    def rate(y, nu):
        return _eval_rates(classified, on, _theta_state(classified, y, 0), y.shape[0]).sum(axis=1)

    def field1(y, nu):
        return _eval_rates(classified, fast, _theta_state(classified, y, 1), y.shape[0]) @ g1

    def hazard1(y, nu):
        return _eval_rates(classified, off, _theta_state(classified, y, 1), y.shape[0]).sum(axis=1)

    def per_hazard(z):
        lam = hazard1(z, None)
        if np.any(lam <= 0):
            raise FlowError("off-switch rate vanished on the fast flow")
        return field1(z, None) / lam[:, None]

    def advance(z, gap):
        """Move each row ``gap`` hazard units along the fast flow."""
        gap = np.broadcast_to(np.asarray(gap, dtype=np.float64), (z.shape[0],))
        steps = max(1, int(np.ceil(gap.max(initial=0.0) / kernel_step)))
        with np.errstate(all="ignore"):
            for _ in range(steps):
                z = _rk4(per_hazard, z, gap / steps)
        if not np.all(np.isfinite(z)):
            raise FlowError("non-finite value on the fast flow")
        return z

    def transition(y, nu, u):
        E = -np.log(u[:, 0])
        if jump_sampler == "hazard_time":
            return advance(np.asarray(y, dtype=np.float64), E), nu
        horizon = 10.0 * E / constants.alpha + 10.0 * config.dt_max
        jumped, _, target = hazard_flow(field1, hazard1, y, nu, E, horizon, config)
        if not jumped.all():
            raise FlowError("fast-flow jump target not reached; the off-switch rate fell below alpha")
        return target, nu

    nodes, weights = np.polynomial.laguerre.laggauss(kernel_nodes)
    # the weight tail past this point is below 1e-16, far under any bounded test function's scale
    tail = np.cumsum(weights[::-1])[::-1]
    keep = tail > 1e-16
    nodes, weights = nodes[keep], weights[keep]

    def jump_operator(f, y, nu):
        lam0 = rate(y, nu)
        f0 = np.asarray(f(as_state(spec, y, nu)), dtype=np.float64)
        acc = np.zeros(y.shape[0])
        z = np.asarray(y, dtype=np.float64)
        level = 0.0
        for node, w in zip(nodes, weights):
            z = advance(z, node - level)
            level = node
            fk = np.asarray(f(as_state(spec, z, nu)), dtype=np.float64)
            acc += w * (fk - f0)
        return lam0 * acc

    spec = PdpSpec(n=n, field=drift, rate=rate, transition=transition, y_names=tuple(C),
                   mode_names=(), initial_mode=(), n_uniforms=1, jump_operator=jump_operator)
    return spec


# --- dispatch ------------------------------------------------------------------------

def build_limit(classified: ClassifiedModel, **kwargs) -> PdpSpec:
    builders = {"A": build_regime_a, "B": build_regime_b, "C": build_regime_c, "D": build_regime_d}
    return builders[classified.regime](classified, **kwargs)


def limit_initial_state(classified: ClassifiedModel):
    """``(y0, nu0)`` of the limit process from the model's declared initial values."""
    model = classified.model
    y0 = np.array([model.species_by_name(c).init for c in classified.C], dtype=np.float64)
    if classified.regime == "D":
        return y0, np.zeros(0, dtype=np.int64)
    modes = classified.D1 if classified.regime == "C" else classified.D
    return y0, np.array([int(model.species_by_name(d).init) for d in modes], dtype=np.int64)
