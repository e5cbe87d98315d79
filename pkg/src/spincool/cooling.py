"""Selective reset, three-spin compression, AC schedules and cooling limits."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    SpinState,
    SpinSystem,
    entropy_deficit,
    entropy_proxy,
    polarizations,
    thermal_state,
)
from .dynamics import Delay
from .sequences import (
    DelayPlan,
    SequenceProgram,
    run_program,
    transfer_events,
)


class CoolingError(ValueError):
    pass


@dataclass(frozen=True)
class ResetSpec:
    computation: str
    reset: str
    delay: float

    def __post_init__(self):
        if self.computation == self.reset:
            raise CoolingError("computation and reset spin must differ")
        if self.delay < 0:
            raise CoolingError("reset delay must be >= 0")


@dataclass(frozen=True)
class CompressSpec:
    spins: tuple[str, str, str]
    pump: str

    def __post_init__(self):
        object.__setattr__(self, "spins", tuple(self.spins))
        if len(self.spins) != 3 or len(set(self.spins)) != 3:
            raise CoolingError(f"compression needs 3 distinct spins, got {self.spins}")
        if self.pump not in self.spins:
            raise CoolingError(f"pump {self.pump!r} not among {self.spins}")


@dataclass(frozen=True)
class Repeat:
    count: int
    steps: tuple

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if self.count < 1:
            raise CoolingError("REPEAT count must be >= 1")


@dataclass(frozen=True)
class RatioTable:
    entries: dict

    def __post_init__(self):
        if any(not r > 0 for r in self.entries.values()):
            raise CoolingError("T1 ratios must be positive")

    def __getitem__(self, key):
        return self.entries[key]

    def __len__(self):
        return len(self.entries)


def t1_ratio(t1_c: float, t1_r: float) -> float:
    """R(c, r): thermalization time of the computation spin over that of the reset spin."""
    if not (t1_c > 0 and t1_r > 0):
        raise CoolingError("relaxation times must be positive")
    return t1_c / t1_r


def spin_temperature(factor: float, t_equilibrium: float) -> float:
    """Effective spin temperature of a spin cooled by ``factor``."""
    if not factor > 0:
        raise CoolingError("cooling factor must be positive")
    return t_equilibrium / factor


def ac_ideal_limit(n_computation: int, pt_factor: float = 1.0) -> float:
    """Ideal algorithmic-cooling gain with a single reset spin: 2^(n-1) on top of PT."""
    if n_computation < 1:
        raise CoolingError("need at least one computation spin")
    return 2.0 ** (n_computation - 1) * pt_factor


# -- selective reset --------------------------------------------------------------


def _transfer_path(system: SpinSystem, computation: str, reset: str) -> list[int]:
    c, r = system.index(computation), system.index(reset)
    j = system.j_couplings
    if j[c, r] != 0:
        return [r, c]
    for m in range(system.n):
        if m not in (c, r) and j[r, m] != 0 and j[m, c] != 0:
            return [r, m, c]
    raise CoolingError(f"no coupling path from {reset} to {computation}")


def reset_program(system: SpinSystem, computation: str, reset: str, delay: float,
                  plan: DelayPlan | None = None) -> SequenceProgram:
    """Transfer from ``reset`` to ``computation`` followed by a relaxation delay.

    Direct coupling gives one refocused INEPT; a two-hop path gives a relay
    (the second hop decoupled from the reset species when heteronuclear).
    Delays come from the system's own couplings unless a plan is given.
    """
    path = _transfer_path(system, computation, reset)
    labels = [system.labels[i] for i in path]
    j = system.j_couplings
    events: list = []
    params: dict[str, float] = {}
    for hop, (a, b) in enumerate(zip(path, path[1:])):
        jab = abs(j[a, b])
        if plan is not None and hop == 0:
            dd = plan.d4
        elif plan is not None:
            dd = plan.d7
        else:
            dd = 1 / (4 * jab)
        name = f"dr{hop}"
        params[name] = dd
        decouple = None
        if hop > 0 and system.species[path[0]] != system.species[a]:
            decouple = system.species[path[0]]
        events += transfer_events(labels[hop], labels[hop + 1], name, name, selective_source=True,
                                  selective_target=True, decouple=decouple)
    events.append(Delay("reset_delay"))
    params["reset_delay"] = delay
    return SequenceProgram(events, params)


def selective_reset(state: SpinState, system: SpinSystem, computation: str, reset: str,
                    plan: DelayPlan | None = None, delay: float = 0.0, **run_kw) -> SpinState:
    prog = reset_program(system, computation, reset, delay, plan)
    return run_program(prog, system, state, **run_kw)


# -- compression ------------------------------------------------------------------


def sorting_permutation(populations: Sequence[float]) -> np.ndarray:
    """Order in which old basis states fill new basis states 0..7.

    New state p (pump bit most significant, pump up first) receives the
    population of old state ``order[p]``; ties keep their original order.
    """
    pops = np.asarray(populations, dtype=float)
    return np.argsort(-pops, kind="stable")


def _reduced_diagonal(dev: np.ndarray, axes: list[int], n: int) -> np.ndarray:
    d = np.real(np.diag(dev)).reshape((2,) * n)
    rest = [k for k in range(n) if k not in axes]
    d = np.transpose(d, axes + rest).reshape(8, -1)
    return d.sum(axis=1)


def three_bit_compression(state: SpinState, system: SpinSystem, spins: Sequence[str],
                          pump: str | int = 0) -> SpinState:
    """Population-sorting permutation on three spins, maximizing the pump polarization.

    ``pump`` is a label or an index into ``spins``. The 8x8 permutation is
    chosen from the reduced three-spin populations and acts as identity on
    every other spin.
    """
    spins = list(spins)
    if len(spins) != 3 or len(set(spins)) != 3:
        raise CoolingError(f"compression needs 3 distinct spins, got {spins}")
    pump_label = spins[pump] if isinstance(pump, int) else pump
    if pump_label not in spins:
        raise CoolingError(f"pump {pump_label!r} not among {spins}")
    order_labels = [pump_label] + [s for s in spins if s != pump_label]
    axes = [system.index(s) for s in order_labels]
    n = system.n
    rest = [k for k in range(n) if k not in axes]
    perm = sorting_permutation(_reduced_diagonal(state.deviation, axes, n))
    t = state.deviation.reshape((2,) * (2 * n))
    t = np.transpose(t, axes + rest + [n + a for a in axes] + [n + r for r in rest])
    r = 2 ** len(rest)
    t = t.reshape(8, r, 8, r)
    t = t[perm][:, :, perm]
    t = t.reshape((2,) * (2 * n))
    inv = np.argsort(axes + rest)
    t = np.transpose(t, list(inv) + [n + i for i in inv])
    return SpinState(t.reshape(state.dim, state.dim), state.epsilon_ref)


# -- entropy ----------------------------------------------------------------------


@dataclass(frozen=True)
class ShannonCheck:
    entropy_before: float
    entropy_after: float
    bypassed: bool
    deficit_before: float
    deficit_after: float

    @property
    def delta(self) -> float:
        return self.entropy_after - self.entropy_before


def shannon_bound_check(before: SpinState, after: SpinState, system: SpinSystem | None = None,
                        eps0: float = 1e-5, rtol: float = 1e-6) -> ShannonCheck:
    """Compare information content before and after a cooling step.

    ``entropy_before``/``entropy_after`` are the sum of squared polarizations
    (entropy removed, eps^2/ln4 units). The bound counts as bypassed only if
    this proxy grew and the exact von Neumann entropy of the full state fell,
    so purely unitary steps never qualify.
    """
    if before.dim != after.dim or (system is not None and system.dim != before.dim):
        raise CoolingError("states belong to different spin systems")
    pb, pa = entropy_proxy(before), entropy_proxy(after)
    db, da = entropy_deficit(before, eps0), entropy_deficit(after, eps0)
    bypassed = pa > pb * (1 + rtol) and da > db * (1 + rtol)
    return ShannonCheck(pb, pa, bool(bypassed), db, da)


# -- schedules --------------------------------------------------------------------


def _flatten(schedule) -> list:
    out = []
    for step in schedule:
        if isinstance(step, Repeat):
            for _ in range(step.count):
                out += _flatten(step.steps)
        else:
            out.append(step)
    return out


def apply_step(state: SpinState, system: SpinSystem, item, **run_kw) -> SpinState:
    if isinstance(item, ResetSpec):
        return selective_reset(state, system, item.computation, item.reset, delay=item.delay, **run_kw)
    if isinstance(item, CompressSpec):
        return three_bit_compression(state, system, item.spins, item.pump)
    raise CoolingError(f"unknown schedule step {item!r}")


@dataclass
class ACResult:
    initial: SpinState
    final: SpinState
    trajectory: list = field(default_factory=list)


def run_schedule(system: SpinSystem, schedule, rounds: int = 1, state: SpinState | None = None,
                 **run_kw) -> ACResult:
    if not schedule:
        raise CoolingError("empty schedule")
    if rounds < 1:
        raise CoolingError("rounds must be >= 1")
    steps = _flatten(schedule)
    start = thermal_state(system) if state is None else state
    st = start
    traj = [polarizations(st)]
    for _ in range(rounds):
        for item in steps:
            st = apply_step(st, system, item, **run_kw)
        traj.append(polarizations(st))
    return ACResult(start, st, traj)


def run_ac(system: SpinSystem, schedule, rounds: int = 1, **run_kw):
    """Execute ``schedule`` ``rounds`` times from the thermal state and report."""
    from .analysis import cooling_report

    res = run_schedule(system, schedule, rounds, **run_kw)
    return cooling_report(res.final, system, before=res.initial, trajectory=res.trajectory)


_TOKEN = re.compile(r"\{|\}|[^\s{}]+")


def parse_schedule(text: str) -> list:
    """Parse the schedule language.

    ``RESET <comp> <reset> <delay_s>``, ``COMPRESS <a> <b> <c> PUMP <x>``,
    ``REPEAT <n> { ... }``; ``#`` starts a comment.
    """
    tokens = []
    for lineno, line in enumerate(text.splitlines(), 1):
        code = line.split("#", 1)[0]
        for m in _TOKEN.finditer(code):
            tokens.append((m.group(), lineno, m.start() + 1))
    pos = 0

    eof = ("<eof>", len(text.splitlines()) + 1, 1)

    def err(msg, tok=None):
        if tok is None:
            tok = tokens[pos] if pos < len(tokens) else eof
        return CoolingError(f"schedule:{tok[1]}:{tok[2]}: {msg}")

    def take(n):
        nonlocal pos
        if pos + n > len(tokens):
            raise err("unexpected end of input", eof)
        out = tokens[pos:pos + n]
        pos += n
        return out

    def number(tok, kind):
        try:
            return kind(tok[0])
        except ValueError:
            raise err(f"expected a number, got {tok[0]!r}", tok) from None

    def block(closing: bool):
        nonlocal pos
        steps = []
        while pos < len(tokens):
            tok = tokens[pos]
            word = tok[0]
            if word == "}":
                if not closing:
                    raise err("unmatched '}'", tok)
                pos += 1
                return steps
            pos += 1
            try:
                if word == "RESET":
                    c, r, d = take(3)
                    steps.append(ResetSpec(c[0], r[0], number(d, float)))
                elif word == "COMPRESS":
                    a, b, c, kw, p = take(5)
                    if kw[0] != "PUMP":
                        raise err("expected PUMP", kw)
                    steps.append(CompressSpec((a[0], b[0], c[0]), p[0]))
                elif word == "REPEAT":
                    (cnt,) = take(1)
                    (brace,) = take(1)
                    if brace[0] != "{":
                        raise err("expected '{'", brace)
                    steps.append(Repeat(number(cnt, int), tuple(block(True))))
                else:
                    raise err(f"unknown directive {word!r}", tok)
            except CoolingError as e:
                if str(e).startswith("schedule:"):
                    raise
                raise err(str(e), tok) from None
        if closing:
            raise err("missing '}'", eof)
        return steps

    return block(False)


def format_schedule(schedule, indent: int = 0) -> str:
    pad = "  " * indent
    lines = []
    for step in schedule:
        if isinstance(step, ResetSpec):
            lines.append(f"{pad}RESET {step.computation} {step.reset} {step.delay!r}")
        elif isinstance(step, CompressSpec):
            a, b, c = step.spins
            lines.append(f"{pad}COMPRESS {a} {b} {c} PUMP {step.pump}")
        elif isinstance(step, Repeat):
            lines.append(f"{pad}REPEAT {step.count} {{")
            lines.append(format_schedule(step.steps, indent + 1).rstrip("\n"))
            lines.append(f"{pad}}}")
    return "\n".join(lines) + "\n"


__all__ = [
    "ResetSpec",
    "CompressSpec",
    "Repeat",
    "RatioTable",
    "t1_ratio",
    "spin_temperature",
    "ac_ideal_limit",
    "selective_reset",
    "three_bit_compression",
    "shannon_bound_check",
    "run_ac",
    "run_schedule",
    "parse_schedule",
    "format_schedule",
]
