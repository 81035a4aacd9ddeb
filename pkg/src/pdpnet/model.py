"""Multiscale reaction networks: declaration, file format, regime classification.

Rates are written in scaled form (the O(1) rate seen by the rescaled state);
the simulator multiplies them by the reaction's order factor (1, N, N/eps or
1/eps).  Continuous species enter rate expressions as concentrations
``X/N``, discrete species as counts.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Mapping, Optional

import numpy as np

from . import rate_expr as rx

__all__ = [
    "ModelError", "RegimeError", "PropensityError",
    "SpeciesDecl", "ReactionDecl", "NetworkModel", "ClassifiedModel", "CompiledNetwork",
    "Order", "RClass", "REGIMES",
    "parse_model", "load_model", "reference_model", "classify", "propensity",
    "order_factor", "compile_network", "REFERENCE_MODELS",
]

REGIMES = ("A", "B", "C", "D")


class ModelError(ValueError):
    """Invalid model text or declaration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class RegimeError(ModelError):
    """The model cannot be read in the requested scaling regime."""


class PropensityError(ValueError):
    pass


class Order(str, Enum):
    UNIT = "unit"
    N = "N"
    N_OVER_EPS = "N_over_eps"
    ONE_OVER_EPS = "one_over_eps"


class RClass(str, Enum):
    R_C = "R_C"
    R_D = "R_D"
    R_DC_SLOW = "R_DC_slow"
    S1 = "S1"
    S2 = "S2"
    THETA_FLIP = "theta_flip"


@dataclass(frozen=True)
class SpeciesDecl:
    name: str
    kind: str  # "continuous" | "discrete"
    init: float
    fast_range: Optional[tuple] = None  # (0, K_max), discrete only
    is_theta: bool = False

    @property
    def continuous(self) -> bool:
        return self.kind == "continuous"


@dataclass(frozen=True)
class ReactionDecl:
    name: str
    delta: Mapping[str, int]
    rate: rx.RateExpr
    order: Order
    sdelta: Mapping[str, float] = field(default_factory=dict)
    gate: Optional[int] = None  # theta value required for the reaction to fire
    line: Optional[int] = None


@dataclass(frozen=True)
class NetworkModel:
    name: str
    species: tuple
    reactions: tuple
    params: Mapping[str, float]
    default_N: int
    default_eps: Optional[float] = None

    @property
    def species_names(self) -> tuple:
        return tuple(s.name for s in self.species)

    def species_by_name(self, name: str) -> SpeciesDecl:
        for s in self.species:
            if s.name == name:
                return s
        raise KeyError(name)

    @property
    def continuous(self) -> tuple:
        return tuple(s.name for s in self.species if s.continuous)

    @property
    def discrete(self) -> tuple:
        return tuple(s.name for s in self.species if not s.continuous)

    @property
    def theta(self) -> Optional[str]:
        for s in self.species:
            if s.is_theta:
                return s.name
        return None

    @property
    def needs_eps(self) -> bool:
        return any(r.order in (Order.N_OVER_EPS, Order.ONE_OVER_EPS) for r in self.reactions)


# --- file format ------------------------------------------------------------------

_NAME = re.compile(r"[A-Za-z_][A-Za-z_0-9]*$")
_SECTIONS = ("model", "params", "species", "reactions")


def _check_name(name: str, lineno: int) -> str:
    if not _NAME.match(name):
        raise ModelError(f"invalid identifier {name!r}", lineno)
    if name in rx.BUILTINS:
        raise ModelError(f"{name!r} is a builtin function name", lineno)
    return name


def _number(text: str, lineno: int, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ModelError(f"{what}: not a number: {text!r}", lineno) from None


def _assignments(text: str, lineno: int, cast, what: str) -> dict:
    out = {}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise ModelError(f"{what}: expected name=value, got {item!r}", lineno)
        key, value = (p.strip() for p in item.split("=", 1))
        if key in out:
            raise ModelError(f"{what}: species {key!r} listed twice", lineno)
        out[key] = cast(value, lineno, what)
    return out


def _int_change(text: str, lineno: int, what: str) -> int:
    v = _number(text, lineno, what)
    if v != int(v):
        raise ModelError(f"{what}: stoichiometry must be an integer, got {text!r}", lineno)
    return int(v)


def _parse_species(line: str, lineno: int) -> SpeciesDecl:
    parts = line.split()
    if len(parts) < 3:
        raise ModelError("species line needs: name kind init [fast=0..K] [theta]", lineno)
    name = _check_name(parts[0], lineno)
    kind = parts[1]
    if kind not in ("continuous", "discrete"):
        raise ModelError(f"species kind must be continuous or discrete, got {kind!r}", lineno)
    init = _number(parts[2], lineno, f"initial value of {name}")
    fast = None
    theta = False
    for extra in parts[3:]:
        if extra == "theta":
            theta = True
        elif extra.startswith("fast="):
            m = re.fullmatch(r"fast=(\d+)\.\.(\d+)", extra)
            if not m:
                raise ModelError(f"fast range must look like fast=0..K, got {extra!r}", lineno)
            lo, hi = int(m.group(1)), int(m.group(2))
            if lo != 0 or hi < lo:
                raise ModelError(f"fast range must be 0..K with K >= 0, got {extra!r}", lineno)
            fast = (lo, hi)
        else:
            raise ModelError(f"unknown species attribute {extra!r}", lineno)
    if kind == "continuous":
        if init < 0:
            raise ModelError(f"continuous species {name} has negative initial value", lineno)
        if fast is not None or theta:
            raise ModelError(f"fast/theta attributes are only allowed on discrete species ({name})", lineno)
    else:
        if init < 0 or init != int(init):
            raise ModelError(f"discrete species {name} needs a nonnegative integer initial value", lineno)
        init = int(init)
        if fast is not None and not fast[0] <= init <= fast[1]:
            raise ModelError(f"initial value of {name} outside its fast range", lineno)
        if theta and init not in (0, 1):
            raise ModelError(f"theta species {name} must start in 0 or 1", lineno)
        if theta and fast is not None:
            raise ModelError(f"theta species {name} cannot be in the fast block", lineno)
    return SpeciesDecl(name, kind, init, fast, theta)


def _parse_reaction(line: str, lineno: int) -> dict:
    fields = [f.strip() for f in line.split("|")]
    name = _check_name(fields[0], lineno)
    out = {"name": name, "delta": {}, "sdelta": {}, "rate": None, "order": None,
           "gate": None, "line": lineno}
    seen = set()
    for f in fields[1:]:
        m = re.match(r"(delta|sdelta)\s*:(.*)$", f)
        if m:
            key, body = m.group(1), m.group(2)
            cast = _int_change if key == "delta" else _number
            out[key] = _assignments(body, lineno, cast, f"{name} {key}")
        else:
            m = re.match(r"(rate|order|gate)\s*=(.*)$", f)
            if not m:
                raise ModelError(f"reaction {name}: cannot read field {f!r}", lineno)
            key, body = m.group(1), m.group(2).strip()
            if key == "rate":
                try:
                    out["rate"] = rx.parse_rate_expr(body)
                except rx.RateSyntaxError as e:
                    raise ModelError(f"reaction {name}: rate: {e}", lineno) from None
            elif key == "order":
                try:
                    out["order"] = Order(body)
                except ValueError:
                    raise ModelError(f"reaction {name}: unknown order {body!r}", lineno) from None
            else:
                if body not in ("theta0", "theta1"):
                    raise ModelError(f"reaction {name}: gate must be theta0 or theta1", lineno)
                out["gate"] = int(body[-1])
        if key in seen:
            raise ModelError(f"reaction {name}: field {key!r} given twice", lineno)
        seen.add(key)
    if out["rate"] is None:
        raise ModelError(f"reaction {name}: missing rate", lineno)
    if out["order"] is None:
        raise ModelError(f"reaction {name}: missing order", lineno)
    return out


def parse_model(text: str) -> NetworkModel:
    section = None
    header: dict = {}
    params: dict = {}
    species: list = []
    raw_reactions: list = []
    names: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"\[(\w+)\]", line)
        if m:
            section = m.group(1)
            if section not in _SECTIONS:
                raise ModelError(f"unknown section [{section}]", lineno)
            continue
        if section is None:
            raise ModelError("content before the first [section]", lineno)
        if section in ("model", "params"):
            if "=" not in line:
                raise ModelError("expected key = value", lineno)
            key, value = (p.strip() for p in line.split("=", 1))
            if section == "model":
                if key not in ("name", "N", "eps"):
                    raise ModelError(f"unknown [model] key {key!r}", lineno)
                header[key] = (value, lineno)
            else:
                _check_name(key, lineno)
                if key in names:
                    raise ModelError(f"duplicate name {key!r} (first at line {names[key]})", lineno)
                names[key] = lineno
                params[key] = _number(value, lineno, f"parameter {key}")
        elif section == "species":
            decl = _parse_species(line, lineno)
            if decl.name in names:
                raise ModelError(f"duplicate name {decl.name!r} (first at line {names[decl.name]})", lineno)
            names[decl.name] = lineno
            species.append(decl)
        else:
            raw_reactions.append(_parse_reaction(line, lineno))

    name = header.get("name", ("unnamed", None))[0]
    if "N" not in header:
        raise ModelError("[model] section must set N")
    n_text, n_line = header["N"]
    n_val = _number(n_text, n_line, "N")
    if n_val <= 0 or n_val != int(n_val):
        raise ModelError("N must be a positive integer", n_line)
    eps = None
    if "eps" in header:
        eps = _number(header["eps"][0], header["eps"][1], "eps")
        if not eps > 0:
            raise ModelError("eps must be positive", header["eps"][1])

    kinds = {s.name: s for s in species}
    if sum(s.is_theta for s in species) > 1:
        raise ModelError("at most one species may be marked theta")
    reactions = []
    rnames: dict = {}
    for r in raw_reactions:
        ln = r["line"]
        if r["name"] in rnames:
            raise ModelError(f"duplicate reaction name {r['name']!r} (first at line {rnames[r['name']]})", ln)
        rnames[r["name"]] = ln
        for sp in list(r["delta"]) + list(r["sdelta"]):
            if sp not in kinds:
                raise ModelError(f"reaction {r['name']}: unknown species {sp!r}", ln)
        for sp in r["sdelta"]:
            if not kinds[sp].continuous:
                raise ModelError(f"reaction {r['name']}: sdelta on discrete species {sp!r}", ln)
            if r["delta"].get(sp, 0) != 0:
                raise ModelError(f"reaction {r['name']}: both delta and sdelta on {sp!r}", ln)
        if any(v != 0 for v in r["sdelta"].values()) and r["order"] is not Order.UNIT:
            raise ModelError(f"reaction {r['name']}: sdelta requires order = unit", ln)
        for ident in rx.identifiers(r["rate"]):
            if ident not in kinds and ident not in params:
                raise ModelError(f"reaction {r['name']}: unbound identifier {ident!r} in rate", ln)
        if r["order"] in (Order.N_OVER_EPS, Order.ONE_OVER_EPS) and eps is None:
            raise ModelError(f"reaction {r['name']}: order {r['order'].value} needs eps in [model]", ln)
        if r["gate"] is not None and not any(s.is_theta for s in species):
            raise ModelError(f"reaction {r['name']}: gate given but no theta species", ln)
        reactions.append(ReactionDecl(
            name=r["name"],
            delta={k: v for k, v in r["delta"].items() if v != 0},
            sdelta={k: v for k, v in r["sdelta"].items() if v != 0},
            rate=r["rate"], order=r["order"], gate=r["gate"], line=ln))
    if not species:
        raise ModelError("model declares no species")
    return NetworkModel(name=name, species=tuple(species), reactions=tuple(reactions),
                        params=dict(params), default_N=int(n_val), default_eps=eps)


def load_model(path) -> NetworkModel:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())


REFERENCE_MODELS = ("gene1", "gene1f", "gene1b", "burst1")


def reference_model(name: str) -> NetworkModel:
    """One of the bundled reference networks (GENE1, GENE1F, GENE1B, BURST1)."""
    fname = f"{name.lower()}.net"
    text = resources.files(__package__).joinpath("models", fname).read_text(encoding="utf-8")
    return parse_model(text)


# --- classification -------------------------------------------------------------

@dataclass(frozen=True)
class ClassifiedModel:
    model: NetworkModel
    regime: str
    classes: tuple  # RClass per reaction, in file order
    compatible: frozenset  # regimes under which the model classifies

    @property
    def species(self) -> tuple:
        return self.model.species_names

    @property
    def C(self) -> tuple:
        return self.model.continuous

    @property
    def D(self) -> tuple:
        return self.model.discrete

    @property
    def D2(self) -> tuple:
        if self.regime != "C":
            return ()
        return tuple(s.name for s in self.model.species if s.fast_range is not None)

    @property
    def D1(self) -> tuple:
        if self.regime == "D":
            return ()
        fast = set(self.D2)
        return tuple(n for n in self.D if n not in fast)

    def by_class(self, *classes) -> tuple:
        return tuple(i for i, c in enumerate(self.classes) if c in classes)

    def class_of(self, reaction_name: str) -> RClass:
        for r, c in zip(self.model.reactions, self.classes):
            if r.name == reaction_name:
                return c
        raise KeyError(reaction_name)

    def class_table(self) -> dict:
        return {r.name: c.value for r, c in zip(self.model.reactions, self.classes)}


def _classify_reaction(model: NetworkModel, r: ReactionDecl, regime: str) -> RClass:
    cont = set(model.continuous)
    disc = set(model.discrete)
    fast = {s.name for s in model.species if s.fast_range is not None} if regime == "C" else set()
    slow_disc = disc - fast
    reads = rx.identifiers(r.rate) - set(model.params)
    touches_c = any(k in cont for k in r.delta) or bool(r.sdelta)
    touched_d = {k for k in r.delta if k in disc}
    where = f"reaction {r.name}"

    def reject(msg):
        raise RegimeError(f"{where}: {msg} (regime {regime})", r.line)

    if regime == "D":
        theta = model.theta
        if theta is None:
            reject("regime D needs a species marked theta")
        if r.gate is None:
            reject("every regime-D reaction needs a gate (theta0 or theta1)")
        if r.sdelta:
            reject("sdelta jumps are not part of regime D")
        if theta in r.delta:
            if set(r.delta) != {theta}:
                reject("a theta flip may change nothing but theta")
            step = r.delta[theta]
            if step == 1 and r.gate == 0 and r.order is Order.UNIT:
                return RClass.THETA_FLIP
            if step == -1 and r.gate == 1 and r.order is Order.ONE_OVER_EPS:
                return RClass.THETA_FLIP
            reject("theta flips must be +1 (gate theta0, order unit) or -1 (gate theta1, order one_over_eps)")
        if touched_d:
            reject("only theta may be discrete in regime D")
        want = Order.N if r.gate == 0 else Order.N_OVER_EPS
        if r.order is not want:
            reject(f"reactions gated on theta{r.gate} must have order {want.value}")
        return RClass.S1

    if r.gate is not None:
        reject("theta gates are only meaningful in regime D")
    if r.order in (Order.N_OVER_EPS, Order.ONE_OVER_EPS):
        reject(f"order {r.order.value} is only meaningful in regime D")

    if r.order is Order.N:
        if touches_c and not touched_d and reads <= cont:
            return RClass.R_C
        if regime == "C":
            if touched_d & slow_disc:
                reject("order-N reactions may not change slow discrete species")
            if not touches_c and not touched_d:
                reject("order-N reaction changes nothing")
            return RClass.S1
        if touched_d:
            reject("order-N reactions may not change discrete species (gamma^D must vanish)")
        if not touches_c:
            reject("order-N reaction changes nothing")
        return RClass.S1

    # order unit
    if r.sdelta:
        if regime != "B":
            reject("sdelta (O(1) continuous jumps) needs regime B")
        return RClass.S2
    if not touches_c and reads <= disc:
        return RClass.R_D
    return RClass.R_DC_SLOW


def _classes(model: NetworkModel, regime: str) -> tuple:
    if regime == "D":
        if model.theta is None:
            raise RegimeError("regime D needs a species marked theta")
        extra = [n for n in model.discrete if n != model.theta]
        if extra:
            raise RegimeError(f"regime D allows no discrete species besides theta, found {extra}")
        if model.default_eps is None:
            raise RegimeError("regime D needs eps in [model]")
    elif model.theta is not None:
        raise RegimeError("a theta species is only meaningful in regime D")
    # fast ranges annotate regime C only and are ignored elsewhere
    return tuple(_classify_reaction(model, r, regime) for r in model.reactions)


def classify(model: NetworkModel, regime: str) -> ClassifiedModel:
    """Assign every reaction its class under ``regime``; raise RegimeError if it does not fit."""
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}; expected one of {', '.join(REGIMES)}")
    classes = _classes(model, regime)
    compatible = {regime}
    for other in REGIMES:
        if other != regime:
            try:
                _classes(model, other)
            except RegimeError:
                continue
            compatible.add(other)
    return ClassifiedModel(model=model, regime=regime, classes=classes,
                           compatible=frozenset(compatible))


# --- propensities -----------------------------------------------------------------

def order_factor(order: Order, N: float, eps: Optional[float]) -> float:
    if order is Order.UNIT:
        return 1.0
    if order is Order.N:
        return float(N)
    if eps is None:
        raise PropensityError(f"order {order.value} needs eps")
    if order is Order.N_OVER_EPS:
        return float(N) / eps
    return 1.0 / eps


def _as_binding(model: NetworkModel, state) -> rx.Binding:
    if isinstance(state, rx.Binding):
        return state
    return rx.Binding(dict(state), model.params)


def propensity(classified: ClassifiedModel, N: int, eps: Optional[float], state) -> np.ndarray:
    """Per-reaction propensities at ``state`` (scaled species values).

    ``state`` maps every species to a value (or to arrays of values for a batch;
    the result then has shape ``(batch, R)``).
    """
    model = classified.model
    binding = _as_binding(model, state)
    missing = [n for n in model.species_names if n not in binding.species]
    if missing:
        raise rx.BindError(f"state does not bind species {missing}")
    theta = model.theta
    out = []
    for r in model.reactions:
        factor = order_factor(r.order, N, eps)
        value = np.asarray(rx.eval_rate(r.rate, binding), dtype=np.float64)
        if r.gate is not None:
            open_ = np.asarray(binding.species[theta]) == r.gate
            value = np.where(open_, value, 0.0)
        if np.any(value < 0):
            raise PropensityError(
                f"negative rate for reaction {r.name} at state {_describe(binding.species, value < 0)}")
        out.append(factor * value)
    shape = np.broadcast_shapes(*(np.shape(v) for v in out)) if out else ()
    return np.stack([np.broadcast_to(v, shape) for v in out], axis=-1) if out else np.zeros(shape + (0,))


def _describe(species: Mapping, mask) -> dict:
    if np.ndim(mask) == 0:
        return {k: float(np.asarray(v)) for k, v in species.items()}
    i = int(np.argmax(np.broadcast_to(mask, np.shape(mask))))
    return {k: float(np.broadcast_to(v, np.shape(mask))[i]) for k, v in species.items()}


# --- compiled arrays for the kernels ------------------------------------------------

@dataclass(frozen=True)
class CompiledNetwork:
    """Flat numeric form of a model at fixed (N, eps), consumed by the SSA kernels."""

    model: NetworkModel
    N: int
    eps: Optional[float]
    species: tuple
    continuous: np.ndarray  # (S,) bool
    stoich: np.ndarray      # (R, S) int64 count changes (sdelta already scaled by N)
    factor: np.ndarray      # (R,) order factors
    gate_slot: int          # theta index, or -1
    gate_value: np.ndarray  # (R,) required theta value, -1 when ungated
    ops: np.ndarray
    args: np.ndarray
    offsets: np.ndarray     # (R + 1,) program boundaries
    stack_size: int

    def scaled(self, counts: np.ndarray) -> np.ndarray:
        """Counts -> the values rate expressions see (x_C = X_C / N, X_D)."""
        counts = np.asarray(counts)
        return np.where(self.continuous, counts / self.N, counts.astype(np.float64))

    def initial_counts(self) -> np.ndarray:
        out = np.zeros(len(self.species), dtype=np.int64)
        for i, s in enumerate(self.model.species):
            out[i] = int(round(self.N * s.init)) if s.continuous else int(s.init)
        return out


def compile_network(classified: ClassifiedModel | NetworkModel, N: int,
                    eps: Optional[float] = None) -> CompiledNetwork:
    model = classified.model if isinstance(classified, ClassifiedModel) else classified
    if N <= 0 or int(N) != N:
        raise ValueError("N must be a positive integer")
    if model.needs_eps and eps is None:
        raise PropensityError("this model needs eps")
    names = model.species_names
    slots = {n: i for i, n in enumerate(names)}
    S, R = len(names), len(model.reactions)
    stoich = np.zeros((R, S), dtype=np.int64)
    factor = np.zeros(R)
    gate_value = np.full(R, -1, dtype=np.int64)
    ops, args, offsets = [], [], [0]
    stack = 1
    for j, r in enumerate(model.reactions):
        for sp, d in r.delta.items():
            stoich[j, slots[sp]] += d
        for sp, d in r.sdelta.items():
            stoich[j, slots[sp]] += int(round(N * d))
        factor[j] = order_factor(r.order, N, eps)
        if r.gate is not None:
            gate_value[j] = r.gate
        o, a, depth = rx.compile_program(r.rate, slots, model.params)
        ops.extend(o)
        args.extend(a)
        offsets.append(len(ops))
        stack = max(stack, depth)
    theta = model.theta
    return CompiledNetwork(
        model=model, N=int(N), eps=eps, species=names,
        continuous=np.array([s.continuous for s in model.species], dtype=bool),
        stoich=stoich, factor=factor,
        gate_slot=slots[theta] if theta is not None else -1,
        gate_value=gate_value,
        ops=np.array(ops, dtype=np.int64), args=np.array(args, dtype=np.float64),
        offsets=np.array(offsets, dtype=np.int64), stack_size=stack)
