"""Pulse-sequence IR and its line-oriented text form (``.seq``).

Spin numbers in the text are 1-based; the IR stores 0-based indices.
Grammar (one statement per line, ``#`` starts a comment)::

    pulse   SPINS FLIP PHASE          e.g.  pulse s3 90 y   |  pulse all 90 +y
    delay   DURATION [active=PAIRS]   e.g.  delay 5.31375ms active=J12
    zrot    SPIN ANGLE                e.g.  zrot s4 -90
    grad
    acquire SPIN [decouple=SPINS]     e.g.  acquire s5 decouple=s3,s4
    @name TEXT  /  @gate TEXT         sequence metadata
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterator, Union

from .errors import ParseError, ValidationError

PHASE_NAMES = {0.0: "x", 90.0: "y", 180.0: "-x", 270.0: "-y"}
_NAMED_PHASES = {"x": 0.0, "+x": 0.0, "y": 90.0, "+y": 90.0, "-x": 180.0, "-y": 270.0}
_UNITS = {"s": 1.0, "ms": 1e3, "us": 1e6, "µs": 1e6, "μs": 1e6, "ns": 1e9}
_NUMBER = re.compile(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?")
_DURATION = re.compile(r"(" + _NUMBER.pattern + r")(s|ms|us|µs|μs|ns)")
_SPIN = re.compile(r"s(\d+)")
_PAIR = re.compile(r"J(?:(\d+)_(\d+)|(\d)(\d))")


@dataclass(frozen=True)
class Pulse:
    """Ideal rotation of ``flip`` degrees about the axis at ``phase`` degrees.

    ``spins=None`` addresses every spin (a hard pulse).
    """

    spins: tuple[int, ...] | None
    flip: float
    phase: float = 0.0

    def __post_init__(self):
        if self.spins is not None:
            spins = tuple(sorted(set(int(s) for s in self.spins)))
            if not spins or spins[0] < 0:
                raise ValidationError("pulse needs non-negative spin indices", "spins")
            object.__setattr__(self, "spins", spins)
        if not (math.isfinite(self.flip) and -360 < self.flip <= 360):
            raise ValidationError("flip angle must lie in (-360, 360]", "flip")
        if not math.isfinite(self.phase):
            raise ValidationError("phase must be finite", "phase")
        object.__setattr__(self, "flip", float(self.flip))
        phase = float(self.phase) % 360.0
        # tiny negative phases wrap to exactly 360.0
        object.__setattr__(self, "phase", 0.0 if phase == 360.0 else phase)

    def targets(self, n: int) -> tuple[int, ...]:
        return tuple(range(n)) if self.spins is None else self.spins


@dataclass(frozen=True)
class Delay:
    """Free evolution; ``active=None`` lets every coupling evolve."""

    duration: float
    active: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        if not (math.isfinite(self.duration) and self.duration >= 0):
            raise ValidationError("duration must be finite and non-negative", "duration")
        object.__setattr__(self, "duration", float(self.duration))
        if self.active is not None:
            pairs = set()
            for k, l in self.active:
                if k == l or min(k, l) < 0:
                    raise ValidationError(f"invalid coupling pair ({k}, {l})", "active")
                pairs.add((min(k, l), max(k, l)))
            object.__setattr__(self, "active", tuple(sorted(pairs)))


@dataclass(frozen=True)
class Gradient:
    pass


@dataclass(frozen=True)
class ZRot:
    """Rotation ``exp(-i angle I_z)`` of one spin, angle in degrees."""

    spin: int
    angle: float

    def __post_init__(self):
        if self.spin < 0:
            raise ValidationError("negative spin index", "spin")
        if not math.isfinite(self.angle):
            raise ValidationError("angle must be finite", "angle")
        object.__setattr__(self, "angle", float(self.angle))


@dataclass(frozen=True)
class Acquire:
    spin: int
    decoupled: tuple[int, ...] = ()

    def __post_init__(self):
        dec = tuple(sorted(set(self.decoupled)))
        if self.spin < 0 or any(d < 0 for d in dec) or self.spin in dec:
            raise ValidationError("invalid acquisition spins", "decoupled")
        object.__setattr__(self, "decoupled", dec)


@dataclass(frozen=True)
class Comment:
    text: str

    def __post_init__(self):
        object.__setattr__(self, "text", " ".join(str(self.text).split()))


Event = Union[Pulse, Delay, Gradient, ZRot, Acquire, Comment]


@dataclass(frozen=True)
class Sequence:
    events: tuple = ()
    name: str = ""
    gate: str = ""

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def __len__(self):
        return len(self.events)

    def __add__(self, other: "Sequence") -> "Sequence":
        return Sequence(self.events + other.events, self.name, self.gate)

    def replace(self, events) -> "Sequence":
        return Sequence(tuple(events), self.name, self.gate)

    @property
    def pulses(self) -> list[Pulse]:
        return [e for e in self.events if isinstance(e, Pulse)]

    def max_spin(self) -> int:
        hi = -1
        for e in self.events:
            if isinstance(e, Pulse) and e.spins:
                hi = max(hi, e.spins[-1])
            elif isinstance(e, Delay) and e.active:
                hi = max(hi, max(l for _, l in e.active))
            elif isinstance(e, ZRot):
                hi = max(hi, e.spin)
            elif isinstance(e, Acquire):
                hi = max(hi, e.spin, *e.decoupled)
        return hi


def duration(seq: Sequence) -> float:
    """Total delay time in seconds (pulses are instantaneous)."""
    return math.fsum(e.duration for e in seq if isinstance(e, Delay))


def pulse_count(seq: Sequence) -> int:
    return sum(1 for e in seq if isinstance(e, Pulse))


# ---------------------------------------------------------------- rendering


def _fmt(value: float, scale: float = 1.0) -> str | None:
    """Shortest decimal ``x`` with ``float(x) / scale == value``."""
    for p in range(1, 18):
        text = f"{value * scale:.{p}g}"
        if float(text) / scale == value:
            return text
    return None


def _fmt_number(value: float) -> str:
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _fmt_duration(seconds: float) -> str:
    if seconds == 0:
        return "0s"
    unit = "s" if seconds >= 1 else "ms" if seconds >= 1e-3 else "µs"
    for u in (unit, "s"):
        text = _fmt(seconds, _UNITS[u])
        if text is not None and "e" not in text.lower():
            return text + u
    return repr(seconds) + "s"


def _fmt_phase(phase: float) -> str:
    return PHASE_NAMES.get(phase) or _fmt_number(phase)


def _fmt_spins(spins) -> str:
    return ",".join(f"s{s + 1}" for s in spins)


def _fmt_pair(k: int, l: int) -> str:
    a, b = k + 1, l + 1
    return f"J{a}{b}" if a < 10 and b < 10 else f"J{a}_{b}"


def render_event(e: Event) -> str:
    if isinstance(e, Pulse):
        spins = "all" if e.spins is None else _fmt_spins(e.spins)
        return f"pulse {spins} {_fmt_number(e.flip)} {_fmt_phase(e.phase)}"
    if isinstance(e, Delay):
        text = f"delay {_fmt_duration(e.duration)}"
        if e.active is not None:
            text += " active=" + (",".join(_fmt_pair(*p) for p in e.active) or "none")
        return text
    if isinstance(e, ZRot):
        return f"zrot s{e.spin + 1} {_fmt_number(e.angle)}"
    if isinstance(e, Gradient):
        return "grad"
    if isinstance(e, Acquire):
        text = f"acquire s{e.spin + 1}"
        if e.decoupled:
            text += " decouple=" + _fmt_spins(e.decoupled)
        return text
    if isinstance(e, Comment):
        return f"# {e.text}".rstrip()
    raise TypeError(f"not a sequence event: {e!r}")


def render_sequence(seq: Sequence) -> str:
    lines = []
    if seq.name:
        lines.append(f"@name {seq.name}")
    if seq.gate:
        lines.append(f"@gate {seq.gate}")
    lines.extend(render_event(e) for e in seq)
    return "\n".join(lines) + ("\n" if lines else "")


# ------------------------------------------------------------------ parsing


class _Line:
    def __init__(self, text: str, lineno: int):
        self.lineno = lineno
        self.tokens = [(m.group(0), m.start() + 1) for m in re.finditer(r"\S+", text)]

    def error(self, msg: str, col: int) -> ParseError:
        return ParseError(msg, self.lineno, col)


def _parse_number(tok: str, col: int, line: _Line) -> float:
    if not _NUMBER.fullmatch(tok):
        raise line.error(f"expected a number, got {tok!r}", col)
    return float(tok)


def _parse_spin(tok: str, col: int, line: _Line, n: int | None) -> int:
    m = _SPIN.fullmatch(tok)
    if not m:
        raise line.error(f"expected a spin like 's3', got {tok!r}", col)
    spin = int(m.group(1))
    if spin < 1 or (n is not None and spin > n):
        raise line.error(f"spin s{spin} out of range", col)
    return spin - 1


def _parse_spin_list(tok: str, col: int, line: _Line, n: int | None) -> tuple[int, ...]:
    out, offset = [], 0
    for part in tok.split(","):
        out.append(_parse_spin(part, col + offset, line, n))
        offset += len(part) + 1
    return tuple(out)


def _parse_phase(tok: str, col: int, line: _Line) -> float:
    if tok.lower() in _NAMED_PHASES:
        return _NAMED_PHASES[tok.lower()]
    if _NUMBER.fullmatch(tok):
        return float(tok)
    raise line.error(f"expected a phase (x, y, -x, -y or degrees), got {tok!r}", col)


def _parse_duration(tok: str, col: int, line: _Line) -> float:
    m = _DURATION.fullmatch(tok)
    if not m:
        if _NUMBER.fullmatch(tok):
            raise line.error(f"duration {tok!r} needs a unit (s, ms, us)", col)
        raise line.error(f"bad duration {tok!r}", col)
    value = float(m.group(1))
    if value < 0:
        raise line.error("duration must be non-negative", col)
    return value / _UNITS[m.group(2)]


def _parse_pairs(text: str, col: int, line: _Line, n: int | None):
    if text.lower() == "all":
        return None
    if text.lower() == "none":
        return ()
    pairs, offset = [], 0
    for part in text.split(","):
        m = _PAIR.fullmatch(part)
        if not m:
            raise line.error(f"expected a coupling like 'J12', got {part!r}", col + offset)
        a, b = (int(g) for g in (m.groups()[:2] if m.group(1) else m.groups()[2:]))
        if a < 1 or b < 1 or a == b or (n is not None and max(a, b) > n):
            raise line.error(f"coupling {part} out of range", col + offset)
        pairs.append((a - 1, b - 1))
        offset += len(part) + 1
    return tuple(pairs)


def _keyword(tok: str, key: str, col: int, line: _Line) -> str:
    if not tok.startswith(key + "="):
        raise line.error(f"expected '{key}=...', got {tok!r}", col)
    return tok[len(key) + 1:]


def _expect_args(line: _Line, lo: int, hi: int):
    count = len(line.tokens) - 1
    head, col = line.tokens[0]
    if count < lo:
        end = line.tokens[-1][1] + len(line.tokens[-1][0])
        raise line.error(f"'{head}' expects at least {lo} argument(s)", end)
    if count > hi:
        raise line.error("unexpected trailing token", line.tokens[hi + 1][1])


def _parse_statement(line: _Line, n: int | None) -> Event:
    head, hcol = line.tokens[0]
    args = line.tokens[1:]
    kw = head.lower()
    if kw == "pulse":
        _expect_args(line, 3, 3)
        (stok, scol), (ftok, fcol), (ptok, pcol) = args
        spins = None if stok.lower() == "all" else _parse_spin_list(stok, scol, line, n)
        flip = _parse_number(ftok, fcol, line)
        if not -360 < flip <= 360:
            raise line.error("flip angle must lie in (-360, 360]", fcol)
        return Pulse(spins, flip, _parse_phase(ptok, pcol, line))
    if kw == "delay":
        _expect_args(line, 1, 2)
        t = _parse_duration(*args[0], line)
        active = None
        if len(args) == 2:
            tok, col = args[1]
            active = _parse_pairs(_keyword(tok, "active", col, line), col + 7, line, n)
        return Delay(t, active)
    if kw == "zrot":
        _expect_args(line, 2, 2)
        spin = _parse_spin(*args[0], line, n)
        return ZRot(spin, _parse_number(*args[1], line))
    if kw in ("grad", "gradient"):
        _expect_args(line, 0, 0)
        return Gradient()
    if kw == "acquire":
        _expect_args(line, 1, 2)
        spin = _parse_spin(*args[0], line, n)
        dec = ()
        if len(args) == 2:
            tok, col = args[1]
            dec = _parse_spin_list(_keyword(tok, "decouple", col, line), col + 9, line, n)
            if spin in dec:
                raise line.error("observed spin cannot be decoupled", col)
        return Acquire(spin, dec)
    raise line.error(f"unknown keyword {head!r}", hcol)


def parse_sequence(text: Union[str, bytes], n: int | None = None) -> Sequence:
    """Parse ``.seq`` text. Every failure is a :class:`ParseError` with a location.

    When ``n`` is given, spin numbers above ``n`` are rejected.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not valid UTF-8 (byte {exc.start})", 1, 1) from None
    if not isinstance(text, str):
        raise ParseError("input must be text", 1, 1)
    events: list[Event] = []
    name = gate = ""
    acquired_at = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            events.append(Comment(stripped[1:]))
            continue
        if stripped.startswith("@"):
            key, _, value = stripped[1:].partition(" ")
            if key == "name":
                name = " ".join(value.split())
            elif key == "gate":
                gate = " ".join(value.split())
            else:
                raise ParseError(f"unknown directive @{key}", lineno, raw.index("@") + 1)
            continue
        body = raw.split("#", 1)[0]
        line = _Line(body, lineno)
        if acquired_at is not None:
            raise ParseError(
                f"acquire on line {acquired_at} must be the last statement", lineno,
                line.tokens[0][1],
            )
        try:
            event = _parse_statement(line, n)
        except ValidationError as exc:
            raise ParseError(str(exc), lineno, line.tokens[0][1]) from None
        if isinstance(event, Acquire):
            acquired_at = lineno
        events.append(event)
    return Sequence(tuple(events), name, gate)
