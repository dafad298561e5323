"""Peephole rewrites for pulse sequences.

Every rule keeps the sequence propagator fixed up to a global phase:

* ``cancel_inverse_pairs``   180_p then 180_(p+180) (or 180_p again) on the same spins -> nothing
* ``absorb_180_into_90``     180_p next to 90_(p+180) -> 90_p
* ``z_pulses_to_frame``      90_p, theta_(p+-90), 90_(p+180) -> virtual z rotation
* ``push_zrots``             z rotations move right through delays and merge
* ``mlev_rephase``           180_x/180_-x pulses take the MLEV-4 pattern x, -x, -x, x

"Adjacent" means adjacent on the affected spins' timeline: events that
commute with the pulse (pulses and z rotations on other spins, comments)
may sit in between.
"""
from __future__ import annotations

from .sequence import Acquire, Comment, Delay, Gradient, Pulse, Sequence, ZRot

MLEV4 = (0.0, 180.0, 180.0, 0.0)


def _overlaps(a, b) -> bool:
    if a is None or b is None:
        return True
    return bool(set(a) & set(b))


def _blocks(e, spins) -> bool:
    """Does ``e`` fail to commute with a transverse rotation of ``spins``?"""
    if isinstance(e, Comment):
        return False
    if isinstance(e, Pulse):
        return _overlaps(e.spins, spins)
    if isinstance(e, ZRot):
        return _overlaps((e.spin,), spins)
    return True


def _partner(events, i: int, spins):
    for j in range(i + 1, len(events)):
        if _blocks(events[j], spins):
            return j
    return None


def _same_axis(a: float, b: float) -> bool:
    return (a - b) % 360.0 == 0.0


def _opposite(a: float, b: float) -> bool:
    return (a - b) % 360.0 == 180.0


def cancel_inverse_pairs(seq: Sequence) -> Sequence:
    events = list(seq.events)
    i = 0
    while i < len(events):
        e = events[i]
        if isinstance(e, Pulse) and e.flip == 180:
            j = _partner(events, i, e.spins)
            if j is not None:
                f = events[j]
                # 180_p 180_p is -1, a global phase
                if isinstance(f, Pulse) and f.spins == e.spins and f.flip == 180 \
                        and (_opposite(e.phase, f.phase) or _same_axis(e.phase, f.phase)):
                    del events[j]
                    del events[i]
                    continue
        i += 1
    return seq.replace(events)


def absorb_180_into_90(seq: Sequence) -> Sequence:
    events = list(seq.events)
    i = 0
    while i < len(events):
        e = events[i]
        if isinstance(e, Pulse) and e.flip in (90, 180):
            j = _partner(events, i, e.spins)
            if j is not None:
                f = events[j]
                if isinstance(f, Pulse) and f.spins == e.spins and {e.flip, f.flip} == {90, 180} \
                        and _opposite(e.phase, f.phase):
                    axis = e.phase if e.flip == 180 else f.phase
                    events[i] = Pulse(e.spins, 90, axis)
                    del events[j]
                    continue
        i += 1
    return seq.replace(events)


def z_pulses_to_frame(seq: Sequence) -> Sequence:
    events = list(seq.events)
    i = 0
    while i < len(events):
        e = events[i]
        if isinstance(e, Pulse) and e.flip == 90 and e.spins is not None:
            j = _partner(events, i, e.spins)
            m = _partner(events, j, e.spins) if j is not None else None
            if m is not None:
                mid, last = events[j], events[m]
                if (isinstance(mid, Pulse) and isinstance(last, Pulse)
                        and mid.spins == e.spins == last.spins
                        and last.flip == 90 and _opposite(e.phase, last.phase)):
                    turn = (mid.phase - e.phase) % 360.0
                    if turn in (90.0, 270.0):
                        angle = -mid.flip if turn == 90.0 else mid.flip
                        del events[m]
                        del events[j]
                        events[i:i + 1] = [ZRot(s, angle) for s in e.spins]
                        continue
        i += 1
    return seq.replace(events)


def push_zrots(seq: Sequence) -> Sequence:
    """Move z rotations right past commuting events, then merge neighbours."""
    events = list(seq.events)
    moved = True
    while moved:
        moved = False
        for i in range(len(events) - 1):
            e, f = events[i], events[i + 1]
            if isinstance(e, ZRot) and not isinstance(f, (ZRot, Acquire)):
                if isinstance(f, (Delay, Gradient, Comment)) or (
                        isinstance(f, Pulse) and not _overlaps(f.spins, (e.spin,))):
                    events[i], events[i + 1] = f, e
                    moved = True
    out = []
    i = 0
    while i < len(events):
        if not isinstance(events[i], ZRot):
            out.append(events[i])
            i += 1
            continue
        total: dict[int, float] = {}
        while i < len(events) and isinstance(events[i], ZRot):
            total[events[i].spin] = total.get(events[i].spin, 0.0) + events[i].angle
            i += 1
        out.extend(ZRot(s, a) for s, a in sorted(total.items()) if a % 360.0 != 0.0)
    return seq.replace(out)


def mlev_rephase(seq: Sequence) -> Sequence:
    """Rephase 180_x/180_-x pulses per spin set to x, -x, -x, x, ... (global sign only)."""
    counters: dict = {}
    out = []
    for e in seq.events:
        if isinstance(e, Pulse) and e.flip == 180 and e.phase in (0.0, 180.0):
            c = counters.get(e.spins, 0)
            counters[e.spins] = c + 1
            e = Pulse(e.spins, 180, MLEV4[c % 4])
        out.append(e)
    return seq.replace(out)


RULES = (z_pulses_to_frame, absorb_180_into_90, cancel_inverse_pairs, push_zrots, mlev_rephase)


def simplify(seq: Sequence, rules=RULES, max_rounds: int = 1000) -> Sequence:
    """Apply ``rules`` until nothing changes."""
    for _ in range(max_rounds):
        before = seq.events
        for rule in rules:
            seq = rule(seq)
        if seq.events == before:
            return seq
    raise RuntimeError("rewrite rules did not reach a fixed point")
