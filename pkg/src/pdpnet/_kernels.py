"""Hot loops of the exact simulators.

Two interchangeable implementations of each method:

* ``*_nb``: numba-compiled, one trajectory per call, rate expressions run on a
  small stack machine;
* ``*_lockstep``: pure numpy, all trajectories of a batch advance one event per
  iteration, rate expressions evaluated with numpy on the whole batch.

Both read uniforms from the same per-trajectory Philox streams in the same
order, so they produce the same event sequences.
"""
import math

import numpy as np

from . import rate_expr as rx
from ._backend import njit
from .rng import new_state_nb, next_uniform_nb, uniforms

def _neg_log(u):
    # libm log, as in the compiled kernel; numpy's SIMD log can be off by an ulp
    return -np.fromiter(map(math.log, u), np.float64, len(u))


# per-trajectory status codes
OK, JUMP_CAP, RADIUS, NEGATIVE_COUNT, NEGATIVE_PROPENSITY, DOMAIN = range(6)

_OP_CONST = rx.OP_CONST
_OP_VAR = rx.OP_VAR
_OP_NEG = rx.OP_NEG
_OP_ADD = rx.OP_ADD
_OP_SUB = rx.OP_SUB
_OP_MUL = rx.OP_MUL
_OP_DIV = rx.OP_DIV
_OP_POW = rx.OP_POW
_OP_EXP = rx.OP_EXP
_OP_HILL = rx.OP_HILL


@njit
def _pow_nb(a, b):
    if a == 0.0 and b < 0.0:
        return np.nan
    return a ** b


@njit
def eval_program_nb(ops, args, start, stop, vals, stack):
    sp = 0
    for pc in range(start, stop):
        op = ops[pc]
        if op == _OP_CONST:
            stack[sp] = args[pc]
            sp += 1
        elif op == _OP_VAR:
            stack[sp] = vals[np.int64(args[pc])]
            sp += 1
        elif op == _OP_NEG:
            stack[sp - 1] = -stack[sp - 1]
        elif op == _OP_EXP:
            stack[sp - 1] = np.exp(stack[sp - 1])
        elif op == _OP_HILL:
            n = stack[sp - 1]
            k = stack[sp - 2]
            x = stack[sp - 3]
            sp -= 2
            xn = _pow_nb(x, n)
            den = _pow_nb(k, n) + xn
            if den == 0.0:
                return np.nan
            stack[sp - 1] = xn / den
        else:
            b = stack[sp - 1]
            a = stack[sp - 2]
            sp -= 1
            if op == _OP_ADD:
                stack[sp - 1] = a + b
            elif op == _OP_SUB:
                stack[sp - 1] = a - b
            elif op == _OP_MUL:
                stack[sp - 1] = a * b
            elif op == _OP_DIV:
                if b == 0.0:
                    return np.nan
                stack[sp - 1] = a / b
            else:
                stack[sp - 1] = _pow_nb(a, b)
    return stack[0]


@njit
def _propensities_nb(ops, args, offsets, factor, gate_slot, gate_value, vals, stack, out):
    """Fill ``out``; return (status, offending reaction)."""
    for r in range(factor.shape[0]):
        if gate_value[r] >= 0 and vals[gate_slot] != gate_value[r]:
            out[r] = 0.0
            continue
        v = eval_program_nb(ops, args, offsets[r], offsets[r + 1], vals, stack)
        if not np.isfinite(v):
            return DOMAIN, r
        if v < 0.0:
            return NEGATIVE_PROPENSITY, r
        out[r] = factor[r] * v
    return OK, -1


@njit
def _scale_nb(counts, cont, n_scale, vals):
    for s in range(counts.shape[0]):
        if cont[s]:
            vals[s] = counts[s] / n_scale
        else:
            vals[s] = np.float64(counts[s])


@njit
def _radius_nb(vals):
    m = 0.0
    for s in range(vals.shape[0]):
        if abs(vals[s]) > m:
            m = abs(vals[s])
    return m


@njit
def _apply_nb(counts, stoich, r):
    """Apply reaction ``r``; return False (and leave counts untouched) if a count would go negative."""
    for s in range(counts.shape[0]):
        if counts[s] + stoich[r, s] < 0:
            return False
    for s in range(counts.shape[0]):
        counts[s] += stoich[r, s]
    return True


@njit
def _grow(times, rxn, n):
    if n < times.shape[0]:
        return times, rxn
    t2 = np.empty(2 * times.shape[0])
    r2 = np.empty(2 * times.shape[0], dtype=np.int64)
    t2[:n] = times[:n]
    r2[:n] = rxn[:n]
    return t2, r2


@njit
def ssa_one_nb(method, ops, args, offsets, factor, gate_slot, gate_value, stoich, cont,
               n_scale, counts0, t_end, key0, key1, max_jumps, max_radius, probes,
               record, stack_size):
    """One trajectory; ``method`` 0 = direct, 1 = random time change (next reaction)."""
    S = counts0.shape[0]
    R = factor.shape[0]
    P = probes.shape[0]
    counts = counts0.copy()
    vals = np.empty(S)
    _scale_nb(counts, cont, n_scale, vals)
    stack = np.empty(stack_size)
    a = np.empty(R)
    st = new_state_nb(key0, key1)
    probe_out = np.full((P, S), np.nan)
    ip = 0
    times = np.empty(256 if record else 1)
    rxn = np.empty(256 if record else 1, dtype=np.int64)
    n = 0
    t = 0.0
    status = OK
    info = -1
    internal = np.zeros(R)
    next_fire = np.zeros(R)
    if method == 1:
        for r in range(R):
            next_fire[r] = -np.log(next_uniform_nb(st))
    while True:
        code, bad = _propensities_nb(ops, args, offsets, factor, gate_slot, gate_value,
                                     vals, stack, a)
        if code != OK:
            status = code
            info = bad
            break
        mu = -1
        if method == 0:
            total = 0.0
            for r in range(R):
                total += a[r]
            if total > 0.0:
                wait = -np.log(next_uniform_nb(st)) / total
            else:
                wait = np.inf
        else:
            wait = np.inf
            for r in range(R):
                if a[r] > 0.0:
                    dt = (next_fire[r] - internal[r]) / a[r]
                    if dt < wait:
                        wait = dt
                        mu = r
        t_next = t + wait
        while ip < P and probes[ip] < t_next:
            for s in range(S):
                probe_out[ip, s] = vals[s]
            ip += 1
        if t_next > t_end:
            break
        if n >= max_jumps:
            status = JUMP_CAP
            break
        if method == 0:
            target = next_uniform_nb(st) * total
            c = 0.0
            for r in range(R):
                c += a[r]
                if c > target:
                    mu = r
                    break
        else:
            for r in range(R):
                internal[r] += a[r] * wait
            internal[mu] = next_fire[mu]
            next_fire[mu] += -np.log(next_uniform_nb(st))
        if not _apply_nb(counts, stoich, mu):
            status = NEGATIVE_COUNT
            info = mu
            break
        t = t_next
        if record:
            times, rxn = _grow(times, rxn, n)
            times[n] = t
            rxn[n] = mu
        n += 1
        _scale_nb(counts, cont, n_scale, vals)
        if _radius_nb(vals) > max_radius:
            status = RADIUS
            info = mu
            break
    return status, info, n, t, counts, times[:n].copy(), rxn[:n].copy(), probe_out


# --- numpy lockstep -----------------------------------------------------------------

def _batch_propensities(net, counts):
    vals = net.scaled(counts)
    species = {name: vals[:, i] for i, name in enumerate(net.species)}
    binding = rx.Binding(species, net.model.params)
    B = counts.shape[0]
    out = np.empty((B, len(net.model.reactions)))
    status = np.zeros(B, dtype=np.int64)
    info = np.full(B, -1, dtype=np.int64)
    with np.errstate(all="ignore"):
        for r, reaction in enumerate(net.model.reactions):
            try:
                v = np.broadcast_to(rx._eval(reaction.rate, binding.lookup), (B,)).astype(np.float64)
            except rx.DomainError:
                v = np.full(B, np.nan)
                # isolate the rows that fail
                for i in range(B):
                    one = rx.Binding({k: x[i] for k, x in species.items()}, net.model.params)
                    try:
                        v[i] = rx._eval(reaction.rate, one.lookup)
                    except rx.DomainError:
                        v[i] = np.nan
            if net.gate_value[r] >= 0:
                v = np.where(vals[:, net.gate_slot] == net.gate_value[r], v, 0.0)
            fresh = status == OK
            dom = fresh & ~np.isfinite(v)
            status[dom] = DOMAIN
            info[dom] = r
            neg = fresh & ~dom & (v < 0)
            status[neg] = NEGATIVE_PROPENSITY
            info[neg] = r
            out[:, r] = net.factor[r] * v
    return out, status, info, vals


def ssa_lockstep(method, net, counts0, t_end, seed, streams, max_jumps, max_radius,
                 probes, record):
    streams = np.asarray(streams, dtype=np.uint64)
    B = streams.shape[0]
    S = counts0.shape[0]
    R = net.stoich.shape[0]
    P = probes.shape[0]
    counts = np.tile(counts0, (B, 1))
    t = np.zeros(B)
    n = np.zeros(B, dtype=np.int64)
    draws = np.zeros(B, dtype=np.uint64)
    status = np.zeros(B, dtype=np.int64)
    info = np.full(B, -1, dtype=np.int64)
    probe_out = np.full((B, P, S), np.nan)
    ip = np.zeros(B, dtype=np.int64)
    alive = np.ones(B, dtype=bool)
    log_rows, log_t, log_r = [], [], []
    internal = np.zeros((B, R))
    next_fire = np.zeros((B, R))
    if method == 1:
        for r in range(R):
            next_fire[:, r] = _neg_log(uniforms(seed, streams, draws))
            draws += np.uint64(1)

    while alive.any():
        idx = np.flatnonzero(alive)
        a, code, bad, vals = _batch_propensities(net, counts[idx])
        failed = code != OK
        if failed.any():
            status[idx[failed]] = code[failed]
            info[idx[failed]] = bad[failed]
            alive[idx[failed]] = False
            keep = ~failed
            idx, a, vals = idx[keep], a[keep], vals[keep]
            if idx.size == 0:
                continue
        with np.errstate(divide="ignore", invalid="ignore"):
            if method == 0:
                cum = np.cumsum(a, axis=1)
                total = cum[:, -1]
                pos = total > 0
                wait = np.full(idx.size, np.inf)
                u = uniforms(seed, streams[idx[pos]], draws[idx[pos]])
                draws[idx[pos]] += np.uint64(1)
                wait[pos] = _neg_log(u) / total[pos]
            else:
                dt = np.where(a > 0, (next_fire[idx] - internal[idx]) / a, np.inf)
                mu = np.argmin(dt, axis=1)
                wait = dt[np.arange(idx.size), mu]
        t_next = t[idx] + wait
        # probes strictly before the next event see the current state
        for j in range(P):
            hit = (ip[idx] == j) & (probes[j] < t_next)
            while hit.any():
                rows = idx[hit]
                probe_out[rows, ip[rows], :] = vals[hit]
                ip[rows] += 1
                hit = hit & (ip[idx] < P) & (probes[np.minimum(ip[idx], P - 1)] < t_next)
        done = t_next > t_end
        alive[idx[done]] = False
        capped = ~done & (n[idx] >= max_jumps)
        status[idx[capped]] = JUMP_CAP
        alive[idx[capped]] = False
        go = ~done & ~capped
        if not go.any():
            continue
        rows = idx[go]
        if method == 0:
            u = uniforms(seed, streams[rows], draws[rows])
            draws[rows] += np.uint64(1)
            target = u * total[go]
            mu_rows = np.argmax(cum[go] > target[:, None], axis=1)
        else:
            mu_rows = mu[go]
            w = wait[go]
            internal[rows] += a[go] * w[:, None]
            internal[rows, mu_rows] = next_fire[rows, mu_rows]
            u = uniforms(seed, streams[rows], draws[rows])
            draws[rows] += np.uint64(1)
            next_fire[rows, mu_rows] += _neg_log(u)
        new = counts[rows] + net.stoich[mu_rows]
        negative = (new < 0).any(axis=1)
        if negative.any():
            status[rows[negative]] = NEGATIVE_COUNT
            info[rows[negative]] = mu_rows[negative]
            alive[rows[negative]] = False
            ok = ~negative
            rows, mu_rows, new = rows[ok], mu_rows[ok], new[ok]
            t_go = t_next[go][ok]
        else:
            t_go = t_next[go]
        counts[rows] = new
        t[rows] = t_go
        n[rows] += 1
        if record:
            log_rows.append(rows)
            log_t.append(t_go)
            log_r.append(mu_rows)
        far = np.abs(net.scaled(new)).max(axis=1, initial=0.0) > max_radius
        status[rows[far]] = RADIUS
        info[rows[far]] = mu_rows[far]
        alive[rows[far]] = False

    events = None
    if record:
        if log_rows:
            all_rows = np.concatenate(log_rows)
            all_t = np.concatenate(log_t)
            all_r = np.concatenate(log_r)
            order = np.argsort(all_rows, kind="stable")
            all_rows, all_t, all_r = all_rows[order], all_t[order], all_r[order]
            cuts = np.searchsorted(all_rows, np.arange(B + 1))
            events = [(all_t[cuts[i]:cuts[i + 1]], all_r[cuts[i]:cuts[i + 1]]) for i in range(B)]
        else:
            events = [(np.empty(0), np.empty(0, dtype=np.int64)) for _ in range(B)]
    return status, info, n, t, counts, probe_out, events
