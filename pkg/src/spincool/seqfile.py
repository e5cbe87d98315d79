"""Text format for pulse programs.

One event per line::

    SET d4 0.00171
    PULSE @H1 90 0
    PULSE C2 180 0 SELECTIVE 0.001
    DELAY d4 DECOUPLE H1 NORELAX
    MARK relay
    ACQUIRE C13

Targets are ``ALL``, ``@<species>`` or comma-separated labels. Pulse angles
and phases are degrees; a SELECTIVE pulse may carry its nominal duration
(seconds, default 1 ms). ``#`` starts a comment.
"""

from __future__ import annotations

from .dynamics import DEFAULT_SELECTIVE_DURATION, Delay, Pulse
from .sequences import Acquire, Mark, SequenceError, SequenceProgram


class SequenceSyntaxError(SequenceError):
    def __init__(self, msg: str, line: int, col: int, source: str = "<sequence>"):
        super().__init__(f"{source}:{line}:{col}: {msg}")
        self.line, self.col = line, col


def _tokens(line: str):
    out = []
    i = 0
    while i < len(line):
        if line[i].isspace():
            i += 1
            continue
        j = i
        while j < len(line) and not line[j].isspace():
            j += 1
        out.append((line[i:j], i + 1))
        i = j
    return out


def parse_sequence(text: str, source: str = "<sequence>") -> SequenceProgram:
    events: list = []
    params: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        toks = _tokens(raw.split("#", 1)[0])
        if not toks:
            continue

        def err(msg, k=0):
            col = toks[k][1] if k < len(toks) else len(raw) + 1
            return SequenceSyntaxError(msg, lineno, col, source)

        def num(k, what):
            if k >= len(toks):
                raise err(f"missing {what}", k)
            try:
                return float(toks[k][0])
            except ValueError:
                raise err(f"{what} must be a number, got {toks[k][0]!r}", k) from None

        word = toks[0][0]
        args = [t[0] for t in toks]
        if word == "SET":
            if len(toks) != 3:
                raise err("expected: SET <name> <seconds>")
            if args[1] in params:
                raise err(f"parameter {args[1]!r} set twice", 1)
            params[args[1]] = num(2, "value")
        elif word == "PULSE":
            if len(toks) < 4:
                raise err("expected: PULSE <targets> <angle_deg> <phase_deg> [SELECTIVE [<seconds>]]")
            angle, phase = num(2, "angle"), num(3, "phase")
            selective, dur = False, 0.0
            if len(toks) > 4:
                if args[4] != "SELECTIVE":
                    raise err(f"unexpected {args[4]!r}", 4)
                selective = True
                dur = num(5, "duration") if len(toks) > 5 else DEFAULT_SELECTIVE_DURATION
                if len(toks) > 6:
                    raise err(f"unexpected {args[6]!r}", 6)
            try:
                events.append(Pulse(args[1], angle, phase, selective, dur))
            except ValueError as e:
                raise err(str(e)) from None
        elif word == "DELAY":
            if len(toks) < 2:
                raise err("expected: DELAY <name|seconds> [DECOUPLE <species>] [NORELAX]")
            try:
                dur: float | str = float(args[1])
            except ValueError:
                dur = args[1]
            decouple, relax = None, True
            k = 2
            while k < len(toks):
                if args[k] == "DECOUPLE":
                    if k + 1 >= len(toks):
                        raise err("DECOUPLE needs a species", k)
                    decouple = args[k + 1]
                    k += 2
                elif args[k] == "NORELAX":
                    relax = False
                    k += 1
                else:
                    raise err(f"unexpected {args[k]!r}", k)
            try:
                events.append(Delay(dur, decouple, relax))
            except ValueError as e:
                raise err(str(e), 1) from None
        elif word == "ACQUIRE":
            if len(toks) != 2:
                raise err("expected: ACQUIRE <species>")
            if any(isinstance(e, Acquire) for e in events):
                raise err("at most one ACQUIRE per program")
            events.append(Acquire(args[1]))
        elif word == "MARK":
            if len(toks) != 2:
                raise err("expected: MARK <name>")
            events.append(Mark(args[1]))
        else:
            raise err(f"unknown directive {word!r}")
    return SequenceProgram(events, params)


def format_sequence(program: SequenceProgram) -> str:
    lines = [f"SET {k} {float(v)!r}" for k, v in program.params.items()]
    for e in program.events:
        if isinstance(e, Pulse):
            s = f"PULSE {e.targets} {float(e.angle_deg)!r} {float(e.phase_deg)!r}"
            if e.selective:
                s += f" SELECTIVE {float(e.nominal_duration)!r}"
        elif isinstance(e, Delay):
            d = e.duration if isinstance(e.duration, str) else repr(float(e.duration))
            s = f"DELAY {d}"
            if e.decouple:
                s += f" DECOUPLE {e.decouple}"
            if not e.relaxation:
                s += " NORELAX"
        elif isinstance(e, Acquire):
            s = f"ACQUIRE {e.species}"
        elif isinstance(e, Mark):
            s = f"MARK {e.name}"
        else:
            raise SequenceError(f"cannot serialize {e!r}")
        lines.append(s)
    return "\n".join(lines) + "\n"
