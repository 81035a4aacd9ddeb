"""``pdpnet`` command line: validate, simulate, study, avg-rates, martingale.

Exit codes: 0 success, 1 model or validation error, 2 runtime guard abort,
3 failed ``--assert`` check.  Argument errors exit 2 through argparse.
"""
from __future__ import annotations

import argparse
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import analysis
from .limits import (ErgodicityError, CenteringError, build_limit, invariant_law,
                     averaged_rates, limit_initial_state, probe_regime_d_constants)
from .model import (REFERENCE_MODELS, ModelError, PropensityError, classify, load_model,
                    reference_model)
from .pdp import FlowConfig, FlowError, run_pdp_ensemble, simulate_pdp, write_pdp_csv
from .rate_expr import BindError, DomainError
from .rng import derive_seed
from .ssa import (SimGuards, SimulationError, Simulator, run_ensemble, write_probe_csv,
                  write_trajectory_csv)

EXIT_OK, EXIT_MODEL, EXIT_GUARD, EXIT_ASSERT = 0, 1, 2, 3


class GuardAbort(RuntimeError):
    pass


class AssertFailure(RuntimeError):
    pass


def _load(spec: str):
    if os.path.exists(spec):
        return load_model(spec)
    if spec.lower() in REFERENCE_MODELS:
        return reference_model(spec)
    raise ModelError(f"no model file {spec!r} (bundled: {', '.join(REFERENCE_MODELS)})")


def _floats(text: str) -> list:
    """``"1,2,5"`` or ``"1:9"`` (inclusive integer range) or ``"0:10:0.5"``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if ":" in part:
            bits = [float(b) for b in part.split(":")]
            lo, hi = bits[0], bits[1]
            step = bits[2] if len(bits) > 2 else 1.0
            k = int(np.floor((hi - lo) / step + 1e-9))
            out.extend(lo + step * np.arange(k + 1))
        elif part:
            out.append(float(part))
    return [float(v) for v in out]


def _pairs(text: str) -> list:
    pairs = []
    for part in text.split(","):
        r, t = part.split(":")
        pairs.append((float(r), float(t)))
    return pairs


def _assignments(items) -> dict:
    out = {}
    for item in items or ():
        key, _, val = item.partition("=")
        if not _:
            raise ModelError(f"expected NAME=VALUE, got {item!r}")
        out[key.strip()] = float(val)
    return out


def _out_dir(args) -> Path:
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _guards(args) -> SimGuards:
    return SimGuards(max_jumps=args.max_jumps, max_radius=args.max_radius)


def _flow(args) -> FlowConfig:
    return FlowConfig(dt_max=args.dt_max, max_jumps=args.max_jumps, max_radius=args.max_radius)


def _scale(model, args):
    N = args.N if args.N is not None else model.default_N
    eps = args.eps if args.eps is not None else model.default_eps
    return N, eps


def _fmt(v) -> str:
    return "%.17g" % v


# --- subcommands --------------------------------------------------------------------

def cmd_validate(args) -> int:
    model = _load(args.model)
    cl = classify(model, args.regime)
    print(f"model {model.name}: regime {args.regime}")
    width = max(len(r.name) for r in model.reactions)
    for r in model.reactions:
        print(f"  {r.name:<{width}}  {cl.class_of(r.name).value}")
    print(f"  C = {list(cl.C)}  D = {list(cl.D)}  D1 = {list(cl.D1)}  D2 = {list(cl.D2)}")
    if args.regime == "D":
        k = probe_regime_d_constants(cl)
        box = ", ".join(f"{n} in [{lo:g}, {hi:g}]" for n, lo, hi in k.box)
        print(f"  alpha = {k.alpha:.17g}  M_lambda = {k.M_lambda:.17g}  ({box})")
    return EXIT_OK


def cmd_simulate(args) -> int:
    model = _load(args.model)
    cl = classify(model, args.regime)
    out = _out_dir(args)
    N, eps = _scale(model, args)
    probes = _floats(args.probes) if args.probes else [args.t_end]
    if args.engine == "exact":
        sim = Simulator.build(cl, N, eps, args.t_end, args.method, None, _guards(args))
        if args.samples == 1:
            tr = sim.run(args.seed)
            path = out / "trajectory.csv"
            with open(path, "w", newline="") as fh:
                write_trajectory_csv(tr, fh)
            print(f"wrote {path}: {tr.jump_count} events, truncated={tr.truncated}, "
                  f"jump_cap_hit={tr.jump_cap_hit}")
            aborted = tr.truncated
        else:
            ens = run_ensemble(sim, args.samples, probes, args.seed, args.workers)
            path = out / "ensemble.csv"
            with open(path, "w", newline="") as fh:
                write_probe_csv(ens, fh)
            print(f"wrote {path}: {args.samples} trajectories, mean events "
                  f"{ens.jump_counts.mean():.6g}, truncated {ens.n_truncated}, "
                  f"jump cap hits {int(ens.jump_cap_hit.sum())}")
            aborted = ens.n_truncated > 0
    else:
        spec = build_limit(cl)
        x0 = limit_initial_state(cl)
        if args.samples == 1:
            tr = simulate_pdp(spec, x0, args.t_end, args.seed, _flow(args))
            path = out / "pdp_trajectory.csv"
            with open(path, "w", newline="") as fh:
                write_pdp_csv(tr, fh)
            print(f"wrote {path}: {tr.jump_count} jumps, truncated={tr.truncated}, "
                  f"jump_cap_hit={tr.jump_cap_hit}")
            aborted = tr.truncated
        else:
            ens = run_pdp_ensemble(spec, x0, args.t_end, args.samples, probes, args.seed, _flow(args))
            path = out / "pdp_ensemble.csv"
            names = spec.y_names + spec.mode_names
            with open(path, "w", newline="") as fh:
                fh.write(",".join(["probe_t", "traj_index", *names]) + "\n")
                for j, pt in enumerate(ens.probes):
                    cols = [ens.matrix(n)[:, j] for n in names]
                    for i in range(args.samples):
                        fh.write(",".join([_fmt(pt), str(i), *(_fmt(c[i]) for c in cols)]) + "\n")
            print(f"wrote {path}: {args.samples} paths, mean jumps {ens.jump_counts.mean():.6g}, "
                  f"truncated {ens.n_truncated}, jump cap hits {int(ens.jump_cap_hit.sum())}")
            aborted = ens.n_truncated > 0
    if aborted:
        raise GuardAbort("a guard stopped at least one path early")
    return EXIT_OK


def cmd_study(args) -> int:
    model = _load(args.model)
    cl = classify(model, args.regime)
    Ns = [int(v) for v in _floats(args.scales)]
    if args.eps_list:
        eps = _floats(args.eps_list)
        if len(eps) != len(Ns):
            raise ModelError("--eps-list must have one entry per scale")
        scales = list(zip(Ns, eps))
    else:
        scales = Ns
    probes = _floats(args.probes)
    rows = analysis.convergence_study(cl, scales, probes, args.samples, args.seed,
                                      method=args.method, guards=_guards(args), flow=_flow(args),
                                      workers=args.workers)
    path = _out_dir(args) / "study.csv"
    with open(path, "w", newline="") as fh:
        analysis.write_study_csv(rows, fh)
    print(f"wrote {path}: {len(rows)} rows")
    if args.assert_ks is not None:
        summary = _study_summary(rows, args.regime == "D")
        for sp, series in summary.items():
            ok = series[-1] < args.assert_ks and (len(series) == 1 or series[-1] < series[0])
            print(f"  {sp}: KS by scale {['%.4f' % v for v in series]} -> {'pass' if ok else 'FAIL'}")
            if not ok:
                raise AssertFailure(f"convergence check failed for {sp}")
    return EXIT_OK


def _study_summary(rows, time_avg: bool) -> dict:
    """Per species, the KS series over scales (time-averaged rows in regime D, else the last probe)."""
    out = {}
    for r in rows:
        if time_avg != (r.probe_t == "time_avg"):
            continue
        out.setdefault(r.species, {})[r.scale_N] = r.ks
    return {sp: [v for _, v in sorted(d.items())] for sp, d in out.items()}


def cmd_avg_rates(args) -> int:
    model = _load(args.model)
    cl = classify(model, "C")
    x = _assignments(args.x)
    xd = {k: int(v) for k, v in _assignments(args.xd).items()}
    states, nu = invariant_law(cl, x, xd)
    rates = averaged_rates(cl, x, xd)
    w = sys.stdout
    w.write("kind,key,value\n")
    for s, p in zip(states, nu):
        label = ";".join(f"{n}={v}" for n, v in zip(cl.D2, s.tolist()))
        w.write(f"nu,{label},{_fmt(p)}\n")
    for name, v in rates.items():
        w.write(f"rate,{name},{_fmt(v)}\n")
    return EXIT_OK


def cmd_martingale(args) -> int:
    model = _load(args.model)
    cl = classify(model, args.regime)
    N, eps = _scale(model, args)
    pairs = _pairs(args.pairs)
    t_end = max(t for _, t in pairs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if args.engine == "exact":
            sim = Simulator.build(cl, N, eps, t_end, args.method, None, _guards(args))
            fns = analysis.test_functions(cl.C, cl.D)
            rows = analysis.ssa_martingale(sim, args.samples, fns, pairs, args.seed, cl)
        else:
            spec = build_limit(cl)
            fns = analysis.test_functions(spec.y_names, spec.mode_names)
            rows = analysis.pdp_martingale(spec, limit_initial_state(cl), args.samples, fns, pairs,
                                           args.seed, _flow(args))
    path = _out_dir(args) / "martingale.csv"
    with open(path, "w", newline="") as fh:
        analysis.write_martingale_csv(rows, fh)
    n_fail = sum(not r.passed for r in rows)
    n_unb = sum(r.unbounded for r in rows)
    print(f"wrote {path}: {len(rows)} rows, {n_fail} outside 3 SE, {n_unb} flagged unbounded")
    if args.check and n_fail:
        raise AssertFailure(f"{n_fail} martingale residuals outside 3 SE")
    return EXIT_OK


# --- parser -------------------------------------------------------------------------------

def _common(p, seed=True):
    p.add_argument("--model", required=True, help="model file, or a bundled name (gene1, gene1f, gene1b, burst1)")
    p.add_argument("--regime", required=True, choices=["A", "B", "C", "D"])
    if seed:
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--N", type=int, default=None)
        p.add_argument("--eps", type=float, default=None)
        p.add_argument("--method", choices=["direct", "time_change"], default="direct")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", default=".")
        p.add_argument("--max-jumps", type=int, default=10_000_000)
        p.add_argument("--max-radius", type=float, default=1e6)
        p.add_argument("--dt-max", type=float, default=1e-3)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pdpnet", description="Multiscale reaction networks and their PDP limits.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="classify a model under a regime")
    _common(p, seed=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="exact or limit-PDP paths to CSV")
    _common(p)
    p.add_argument("--engine", choices=["exact", "pdp"], default="exact")
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--probes", default=None, help="probe times for ensembles (default: t_end)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("study", help="KS/W1 of exact ensembles against the limit")
    _common(p)
    p.add_argument("--scales", required=True, help="comma separated N values")
    p.add_argument("--eps-list", default=None, help="comma separated eps values, one per scale")
    p.add_argument("--probes", required=True)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--assert", dest="assert_ks", type=float, nargs="?", const=0.05, default=None,
                   metavar="KS_MAX", help="exit 3 unless the last scale beats the first and KS_MAX")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("avg-rates", help="invariant law and averaged rates of the fast block")
    p.add_argument("--model", required=True)
    p.add_argument("--x", nargs="*", default=[], metavar="NAME=VALUE", help="continuous species values")
    p.add_argument("--xd", nargs="*", default=[], metavar="NAME=VALUE", help="slow discrete species values")
    p.set_defaults(func=cmd_avg_rates)

    p = sub.add_parser("martingale", help="martingale residuals of a generator on its own paths")
    _common(p)
    p.add_argument("--engine", choices=["exact", "pdp"], default="exact")
    p.add_argument("--pairs", default="0:1,0:2", help="r:t pairs")
    p.add_argument("--samples", type=int, default=5000)
    p.add_argument("--assert", dest="check", action="store_true", help="exit 3 if any residual fails")
    p.set_defaults(func=cmd_martingale)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ModelError, BindError, ErgodicityError, CenteringError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (GuardAbort, SimulationError, PropensityError, DomainError, FlowError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except AssertFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_ASSERT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
