"""Pulse programs as an event list, the named cooling sequences, and delay plans.

A program is data: an ordered tuple of events plus named durations. The
builders below only assemble events; ``execute`` runs them on a state.

Selective pulses are instantaneous. Where the soft refocusing pulse of a
refocusing echo costs coupling-evolution time, the builders insert explicit
``t_half`` delays around it, so a refocusing delay of d4/k - t/2 gives a
total coupling evolution of 2 d4 / k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import SpinState, SpinSystem, polarizations, resolve_targets, thermal_state
from .dynamics import DEFAULT_SELECTIVE_DURATION, Delay, Pulse, apply_pulse, evolve_delay


class SequenceError(ValueError):
    pass


@dataclass(frozen=True)
class Acquire:
    species: str


@dataclass(frozen=True)
class Mark:
    """No-op event naming a point in the program (e.g. the end of the relay)."""

    name: str


Event = Pulse | Delay | Acquire | Mark


@dataclass(frozen=True)
class SequenceProgram:
    events: tuple
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "params", dict(self.params))
        if sum(isinstance(e, Acquire) for e in self.events) > 1:
            raise SequenceError("at most one ACQUIRE per program")

    def __eq__(self, other):
        return (
            isinstance(other, SequenceProgram)
            and self.events == other.events
            and self.params == other.params
        )

    def unbound(self) -> set[str]:
        names = {e.duration for e in self.events if isinstance(e, Delay) and isinstance(e.duration, str)}
        return names - set(self.params)

    def bind(self, **params: float) -> "SequenceProgram":
        return SequenceProgram(self.events, {**self.params, **params})

    def __add__(self, other: "SequenceProgram") -> "SequenceProgram":
        for k in set(self.params) & set(other.params):
            if self.params[k] != other.params[k]:
                raise SequenceError(f"conflicting values for parameter {k!r}")
        return SequenceProgram(self.events + other.events, {**self.params, **other.params})

    def marks(self) -> list[str]:
        return [e.name for e in self.events if isinstance(e, Mark)]

    def total_delay(self) -> float:
        return sum(self._seconds(e) for e in self.events if isinstance(e, Delay))

    def _seconds(self, d: Delay) -> float:
        if isinstance(d.duration, str):
            if d.duration not in self.params:
                raise SequenceError(f"parameter {d.duration!r} is not bound")
            return float(self.params[d.duration])
        return float(d.duration)


@dataclass(frozen=True)
class DelayPlan:
    j_ch: float
    j_cc: float
    k: int
    t: float
    d4: float
    d5: float
    d7: float
    d14: float

    def as_params(self) -> dict[str, float]:
        return {"d4": self.d4, "d5": self.d5, "d7": self.d7, "d14": self.d14, "t": self.t, "t_half": self.t / 2}


def compute_delays(j_ch: float, j_cc: float, k: int = 1, t: float = 1e-3) -> DelayPlan:
    """Transfer delays for a given pair of couplings and soft-pulse length.

    d4 = 1/(4 J_CH), d7 = 1/(4 J_CC), d5 = d4/k - t/2, d14 = d4 - t/2.
    """
    if not (j_ch > 0 and j_cc > 0):
        raise SequenceError("couplings must be positive")
    if k not in (1, 2):
        raise SequenceError(f"k must be 1 or 2, got {k}")
    if t < 0:
        raise SequenceError("pulse duration must be >= 0")
    d4 = 1 / (4 * j_ch)
    d7 = 1 / (4 * j_cc)
    d5 = d4 / k - t / 2
    d14 = d4 - t / 2
    if d5 <= 0 or d14 <= 0:
        raise SequenceError(f"soft pulse of {t} s too long for J_CH = {j_ch} Hz")
    return DelayPlan(j_ch, j_cc, k, t, d4, d5, d7, d14)


def plan_for(system: SpinSystem, t: float = 1e-3, source: str = "@H1", target: str = "C2",
             relay_to: str = "C1") -> DelayPlan:
    """Delay plan built from the couplings stored in a molecule."""
    tgt = system.index(target)
    src = [i for i in resolve_targets(system, source) if system.j_couplings[i, tgt] != 0]
    if not src:
        raise SequenceError(f"no {source} spin couples to {target}")
    j_ch = float(np.mean([system.j_couplings[i, tgt] for i in src]))
    j_cc = float(system.j_couplings[tgt, system.index(relay_to)]) if relay_to in system.labels else j_ch
    return compute_delays(j_ch, j_cc if j_cc > 0 else j_ch, len(src), t)


# -- building blocks ---------------------------------------------------------

# Phase of the storage pulse returning the refocused in-phase target
# magnetization to +z (fixed by the rotation convention in dynamics).
FLIPBACK_PHASE = 270.0


def _pulse(targets: str, angle: float, phase: float, selective: bool, t: float) -> Pulse:
    return Pulse(targets, angle, phase, selective, t if selective else 0.0)


def transfer_events(
    source: str,
    target: str,
    defocus: str,
    refocus: str,
    *,
    selective_source: bool = False,
    selective_target: bool = False,
    pad: bool = False,
    decouple: str | None = None,
    t: float = 0.0,
) -> list:
    """Refocused INEPT from ``source`` to ``target`` ending with target along +z."""
    ss, st = selective_source, selective_target
    ev: list = [
        _pulse(source, 90, 0, ss, t),
        Delay(defocus, decouple),
        _pulse(source, 180, 0, ss, t),
        _pulse(target, 180, 0, st, t),
        Delay(defocus, decouple),
        _pulse(source, 90, 90, ss, t),
        _pulse(target, 90, 0, st, t),
        Delay(refocus, decouple),
    ]
    if pad:
        ev.append(Delay("t_half", decouple))
    ev += [_pulse(source, 180, 0, ss, t), _pulse(target, 180, 0, st, t)]
    if pad:
        ev.append(Delay("t_half", decouple))
    ev += [Delay(refocus, decouple), _pulse(target, 90, FLIPBACK_PHASE, st, t)]
    return ev


def _check_transfer(system: SpinSystem, source: str, target: str) -> list[int]:
    src = resolve_targets(system, source)
    tgt = system.index(target)
    if tgt in src:
        raise SequenceError("target may not be part of the source")
    if len({system.species[i] for i in src}) != 1:
        raise SequenceError("source spins must share a species")
    if system.species[src[0]] == system.species[tgt] and len(src) > 1:
        raise SequenceError("homonuclear transfer needs a single source spin")
    if not any(system.j_couplings[i, tgt] != 0 for i in src):
        raise SequenceError(f"no coupling between {source} and {target}")
    return src


def refocused_inept(
    system: SpinSystem,
    source: str,
    target: str,
    plan: DelayPlan,
    selective_on_target: bool = True,
    refocus: str = "d5",
) -> SequenceProgram:
    """Refocused INEPT H -> C with the plan's d4 and refocusing delay."""
    _check_transfer(system, source, target)
    pad = selective_on_target and plan.t > 0
    ev = transfer_events(source, target, "d4", refocus, selective_target=selective_on_target,
                         pad=pad, t=plan.t)
    params = {"d4": plan.d4, refocus: getattr(plan, refocus)}
    if pad:
        params["t_half"] = plan.t / 2
    return SequenceProgram(ev, params)


def hcc_relay(system: SpinSystem, plan: DelayPlan, source: str = "@H1",
              middle: str = "C2", target: str = "C1") -> SequenceProgram:
    """H -> C2 -> C1 relay: INEPT onto C2, then proton-decoupled INEPT C2 -> C1."""
    for lab in (middle, target):
        system.index(lab)
    first = refocused_inept(system, source, middle, plan, selective_on_target=True)
    src_species = system.species[resolve_targets(system, source)[0]]
    if system.j_couplings[system.index(middle), system.index(target)] != 0:
        _check_transfer(system, middle, target)
    decouple = src_species if src_species != system.species[system.index(middle)] else None
    ev = transfer_events(middle, target, "d7", "d7", selective_source=True, selective_target=True,
                         decouple=decouple, t=plan.t)
    return first + SequenceProgram(ev + [Mark("relay")], {"d7": plan.d7})


def hcc_wait(system: SpinSystem, plan: DelayPlan, d3: float) -> SequenceProgram:
    if d3 < 0:
        raise SequenceError("d3 must be >= 0")
    return hcc_relay(system, plan) + SequenceProgram([Delay("d3"), Mark("wait")], {"d3": d3})


def potent(system: SpinSystem, plan: DelayPlan, d2: float, d3: float, plus_variant: bool = False,
           source: str = "@H1", middle: str = "C2") -> SequenceProgram:
    """Relay, first reset d2, second transfer onto C2, final delay d3.

    The second transfer refocuses with d14 for a single source proton; for
    k > 1 source protons d14 would null the transfer, so d5 is used instead.
    """
    if d2 < 0 or d3 < 0:
        raise SequenceError("delays must be >= 0")
    prog = hcc_relay(system, plan, source=source, middle=middle)
    ev: list = [Delay("d2"), Mark("reset")]
    if plus_variant:
        ev.append(_pulse(middle, 90, 0, True, plan.t))
    prog = prog + SequenceProgram(ev, {"d2": d2})
    refocus = "d14" if plan.k == 1 else "d5"
    prog = prog + refocused_inept(system, source, middle, plan, True, refocus=refocus)
    return prog + SequenceProgram([Mark("transfer2"), Delay("d3")], {"d3": d3})


# -- execution ----------------------------------------------------------------


@dataclass
class Execution:
    state: SpinState
    marks: dict[str, SpinState]
    acquired: str | None


def execute(
    program: SequenceProgram,
    system: SpinSystem,
    state: SpinState | None = None,
    *,
    method: str = "exact",
    step: float | None = None,
    relaxation: bool = True,
    at_mark: Callable[[str, SpinState], SpinState] | None = None,
) -> Execution:
    """Run ``program`` from ``state`` (thermal by default).

    ``relaxation=False`` disables relaxation in every delay. ``at_mark`` may
    replace the state at each Mark (used to anchor measured transfer factors).
    """
    missing = program.unbound()
    if missing:
        raise SequenceError(f"unbound parameters: {sorted(missing)}")
    st = thermal_state(system) if state is None else state
    marks: dict[str, SpinState] = {}
    acquired = None
    for ev in program.events:
        if isinstance(ev, Pulse):
            st = apply_pulse(st, system, ev)
        elif isinstance(ev, Delay):
            dur = program._seconds(ev)
            d = Delay(dur, ev.decouple, ev.relaxation and relaxation)
            st = evolve_delay(st, system, d, method=method, step=step)
        elif isinstance(ev, Mark):
            if at_mark is not None:
                st = at_mark(ev.name, st)
            marks[ev.name] = st
        elif isinstance(ev, Acquire):
            acquired = ev.species
    return Execution(st, marks, acquired)


def run_program(program: SequenceProgram, system: SpinSystem, state: SpinState | None = None, **kw) -> SpinState:
    return execute(program, system, state, **kw).state


def optimize_d7(
    system: SpinSystem,
    plan: DelayPlan,
    search_halfwidth: float = 1.0,
    step: float = 0.01,
    target: str = "C1",
    relaxation: bool = True,
) -> float:
    """Scan J_CC on a grid around the plan's value and return the best d7.

    Each candidate J is converted to d7 = 1/(4 J); the relay is simulated and
    the candidate maximizing the target polarization wins. Ties go to the
    smallest d7.
    """
    if not step > 0:
        raise SequenceError("scan step must be positive")
    if search_halfwidth < 0:
        raise SequenceError("empty search range")
    nside = int(math.floor(search_halfwidth / step + 1e-9))
    cands = plan.j_cc + step * np.arange(-nside, nside + 1)
    cands = cands[cands > 0]
    if cands.size == 0:
        raise SequenceError("empty search range")
    base = hcc_relay(system, plan)
    idx = system.index(target)
    best_d7, best_val = None, -math.inf
    for j in cands:
        d7 = 1 / (4 * j)
        val = polarizations(run_program(base.bind(d7=d7), system, relaxation=relaxation))[idx]
        if val > best_val + 1e-12 or (abs(val - best_val) <= 1e-12 and d7 < best_d7):
            best_d7, best_val = d7, val
    return float(best_d7)


def inversion_recovery(
    system: SpinSystem,
    spin: str,
    tau_count: int = 17,
    tau_min: float | None = None,
    tau_max: float | None = None,
) -> list[tuple[float, float]]:
    """Simulated 180 - tau - read experiment on one spin, log-spaced tau.

    Defaults span T1/64 to 8 T1 of the chosen spin.
    """
    i = system.index(spin)
    t1 = float(system.t1[i])
    tau_min = t1 / 64 if tau_min is None else tau_min
    tau_max = 8 * t1 if tau_max is None else tau_max
    if tau_count < 3 or not (0 < tau_min < tau_max):
        raise SequenceError("need tau_count >= 3 and 0 < tau_min < tau_max")
    thermal = thermal_state(system)
    inverted = apply_pulse(thermal, system, Pulse(spin, 180, 0, True, DEFAULT_SELECTIVE_DURATION))
    out = []
    for tau in np.geomspace(tau_min, tau_max, tau_count):
        st = evolve_delay(inverted, system, Delay(float(tau)))
        out.append((float(tau), float(polarizations(st)[i])))
    return out


def inversion_recovery_program(system: SpinSystem, spin: str, tau: float) -> SequenceProgram:
    t = DEFAULT_SELECTIVE_DURATION
    species = system.species[system.index(spin)]
    return SequenceProgram(
        [Pulse(spin, 180, 0, True, t), Delay("tau"), Mark("recovered"), Pulse(spin, 90, 90, True, t),
         Acquire(species)],
        {"tau": tau},
    )


BUILTIN_SEQUENCES = ("inept", "hcc", "hcc_wait", "potent", "potent_plus", "inversion_recovery")
