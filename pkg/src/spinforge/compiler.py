"""Compile CNOT, SWAP and chain gates into pulse sequences.

A CNOT on coupled spins (k, l) is built as

    90_-y(l) . [exp(-i pi Ikz Ilz) with every other coupling refocused]
    . ZRot(k, -90) . ZRot(l, -90) . 90_y(l)

The coupling block lasts one grid-quantized delay.  The J_kl evolution runs
for ``min(T_q, 1/(2 J_kl))`` and any leftover grid time is spent in a fully
refocused pad, so rounding up never over-rotates the gate.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .algebra import cnot_matrix, swap_matrix
from .constants import DEFAULT_PHASE_TOL, STRICT_PHASE_TOL
from .errors import PlanningError, RoutingError, ValidationError
from .rewrite import MLEV4, simplify
from .sequence import Comment, Delay, Pulse, Sequence, ZRot, pulse_count
from .sequence import duration as seq_duration
from .simulator import sequence_unitary
from .system import SpinSystem, frame_grid

ROUNDING_MODES = ("nearest", "up")


def quantize_delay(t: float, grid: float, rounding: str = "nearest") -> float:
    """Snap ``t`` to a positive multiple of ``grid`` (``inf`` means no grid).

    ``rounding="nearest"`` breaks ties upward; ``"up"`` takes the ceiling.
    """
    if not (math.isfinite(t) and t >= 0):
        raise ValidationError("delay must be finite and non-negative", "t")
    if rounding not in ROUNDING_MODES:
        raise ValidationError(f"rounding must be one of {ROUNDING_MODES}", "rounding")
    if math.isinf(grid):
        return t
    if not grid > 0:
        raise ValidationError("grid must be positive", "grid")
    return grid_units(t, grid, rounding) * grid


def grid_units(t: float, grid: float, rounding: str = "nearest") -> int:
    ratio = t / grid
    # tolerate float noise on exact multiples
    snapped = round(ratio)
    if abs(ratio - snapped) < 1e-9:
        units = snapped
    elif rounding == "up":
        units = math.ceil(ratio)
    else:
        units = math.floor(ratio + 0.5)
    return max(1, int(units))


# ------------------------------------------------------------- refocusing


@dataclass(frozen=True)
class RefocusPlan:
    """Walsh sign rows over ``intervals`` equal sub-delays of length ``tau`` in total.

    ``residual`` holds ``((k, l), J, phase)`` for every nonzero coupling
    other than the target that still evolves, with ``phase = 2 pi J tau``.
    """

    intervals: int
    rows: tuple[tuple[int, ...], ...]
    residual: tuple[tuple[tuple[int, int], float, float], ...]
    tau: float
    target: tuple[int, int] | None = None
    start: tuple[int, ...] | None = None  # signs left by a preceding block

    @property
    def pulses(self) -> int:
        start = self.start or (1,) * len(self.rows)
        return sum(_flip_count(r, s) for r, s in zip(self.rows, start))

    @property
    def flipped(self) -> tuple[int, ...]:
        return tuple(k for k, r in enumerate(self.rows) if any(s < 0 for s in r))

    @property
    def residual_phase(self) -> float:
        return math.fsum(abs(p) for _, _, p in self.residual)

    def active_pairs(self) -> tuple[tuple[int, int], ...]:
        pairs = [p for p, _, _ in self.residual]
        if self.target is not None:
            pairs.append(self.target)
        return tuple(sorted(pairs))

    def to_dict(self) -> dict:
        return {
            "intervals": self.intervals,
            "rows": {str(k + 1): list(r) for k, r in enumerate(self.rows)},
            "pulses": self.pulses,
            "residual": [
                {"pair": [a + 1, b + 1], "j_hz": J, "phase_rad": p}
                for (a, b), J, p in self.residual
            ],
        }


def _flip_count(row, start: int = 1) -> int:
    signs = (start, *row, 1)
    return sum(a != b for a, b in zip(signs, signs[1:]))


@lru_cache(maxsize=None)
def _walsh_rows(m: int) -> np.ndarray:
    # row 0 is all-plus
    return np.array(list(itertools.product((1, -1), repeat=m)), dtype=np.int64)


def _search(system: SpinSystem, target, fixed: tuple[int, ...], m: int, tau: float, start=None):
    """All valid row assignments for ``m`` intervals, with (pulses, residual) scores."""
    n = system.n
    rows = _walsh_rows(m)
    start = start or (1,) * n
    free = [k for k in range(n) if k not in fixed]
    grids = np.meshgrid(*([np.arange(len(rows))] * len(free)), indexing="ij")
    choice = np.zeros((len(rows) ** len(free), n), dtype=np.int64)
    for k, g in zip(free, grids):
        choice[:, k] = g.ravel()
    pulses = np.zeros(len(choice), dtype=np.int64)
    for k in range(n):
        flips = np.array([_flip_count(r, start[k]) for r in rows])
        pulses += flips[choice[:, k]]
    valid = np.ones(len(choice), dtype=bool)
    residual = np.zeros(len(choice))
    for k, l, J in system.nonzero_couplings():
        if target is not None and {k, l} == set(target):
            continue
        overlap = (rows[choice[:, k]] * rows[choice[:, l]]).sum(axis=1)
        valid &= (overlap == 0) | (overlap == m)
        residual += np.where(overlap == m, abs(2 * np.pi * J * tau), 0.0)
    return rows, choice, valid, pulses, residual


def _build_plan(system, target, rows, assignment, m, tau, start=None) -> RefocusPlan:
    picked = tuple(tuple(int(s) for s in rows[i]) for i in assignment)
    residual = []
    for k, l, J in system.nonzero_couplings():
        if target is not None and {k, l} == set(target):
            continue
        if picked[k] == picked[l]:
            residual.append(((k, l), float(J), 2 * np.pi * J * tau))
    tgt = None if target is None else (min(target), max(target))
    return RefocusPlan(m, picked, tuple(residual), tau, tgt, None if start is None else tuple(start))


@lru_cache(maxsize=256)
def _plan(system, target, fixed, max_intervals, phase_tol, tau, start=None) -> RefocusPlan:
    if max_intervals not in (1, 2, 4):
        raise ValidationError("max_intervals must be 1, 2 or 4", "max_intervals")
    if not phase_tol >= 0:
        raise ValidationError("phase tolerance must be non-negative", "phase_tol")
    best_bad = None
    for m in (1, 2, 4):
        if m > max_intervals:
            break
        rows, choice, valid, pulses, residual = _search(system, target, fixed, m, tau, start)
        ok = valid & (residual <= phase_tol)
        if ok.any():
            idx = np.flatnonzero(ok)
            pick = idx[np.lexsort((residual[idx], pulses[idx]))[0]]
            return _build_plan(system, target, rows, choice[pick], m, tau, start)
        if valid.any():
            idx = np.flatnonzero(valid)
            best_bad = _build_plan(system, target, rows, choice[idx[np.argmin(residual[idx])]], m, tau,
                                   start)
    names = [] if best_bad is None else [f"J{a + 1}{b + 1}" for (a, b), _, _ in best_bad.residual]
    raise PlanningError(
        f"no refocusing plan within {phase_tol:g} rad using up to {max_intervals} intervals"
        + (f"; unrefocused couplings: {', '.join(names)}" if names else ""),
        couplings=names,
    )


def plan_refocusing(system: SpinSystem, k: int, l: int, max_intervals: int = 4,
                    phase_tol: float = DEFAULT_PHASE_TOL, tau: float | None = None) -> RefocusPlan:
    """Cheapest Walsh assignment keeping only J_kl (plus tolerated residuals) active.

    Plans are ranked by (intervals, 180-degree pulses, residual phase);
    ``tau`` defaults to ``1/(2 |J_kl|)``.
    """
    n = system.n
    for s in (k, l):
        if not 0 <= s < n:
            raise ValidationError(f"spin {s + 1} out of range for {n} spins", "spins")
    J = system.J[k, l]
    if k == l or J == 0:
        raise ValidationError(f"spins {k + 1} and {l + 1} are not coupled", "spins")
    if tau is None:
        tau = 1 / (2 * abs(J))
    return _plan(system, (k, l), (k, l), max_intervals, float(phase_tol), float(tau))


def plan_full_refocusing(system: SpinSystem, tau: float, max_intervals: int = 4,
                         start=None) -> RefocusPlan:
    """Plan that refocuses every coupling exactly (used for idle padding).

    ``start`` gives the spins' signs left by a preceding block, so flips
    can be saved by continuing from them.
    """
    if start is None:
        return _plan(system, None, (0,), max_intervals, 0.0, float(tau))
    return _plan(system, None, (), max_intervals, 0.0, float(tau), tuple(int(x) for x in start))


def refocus_events(plan: RefocusPlan, counters: dict | None = None, signs: list | None = None,
                   restore: bool = True) -> list:
    """Delays and 180-degree flips realising ``plan``; phases follow MLEV-4 per spin.

    ``signs`` holds each spin's current inversion state and is updated in
    place; with ``restore=False`` the block may leave spins inverted.
    """
    counters = {} if counters is None else counters
    signs = [1] * len(plan.rows) if signs is None else signs
    events = []
    m = plan.intervals

    def flip_to(target):
        for s, sign in enumerate(target):
            if sign != signs[s]:
                c = counters.get(s, 0)
                counters[s] = c + 1
                events.append(Pulse((s,), 180, MLEV4[c % 4]))
                signs[s] = sign

    for i in range(m):
        flip_to([r[i] for r in plan.rows])
        events.append(Delay(plan.tau / m))
    if restore:
        flip_to([1] * len(plan.rows))
    return events


# ------------------------------------------------------------------ gates


@dataclass
class GateReport:
    name: str
    sequence: Sequence
    idealized: Sequence
    fidelity: float
    duration: float
    grid: float
    grid_units: int | None
    pulses_before: int
    pulses_after: int
    residual: list = field(default_factory=list)
    plans: list = field(default_factory=list)
    rotation_error: float = 0.0

    def to_dict(self) -> dict:
        return {
            "gate": self.name,
            "fidelity": self.fidelity,
            "duration_s": self.duration,
            "duration_ms": self.duration * 1e3,
            "grid_s": None if math.isinf(self.grid) else self.grid,
            "grid_units": self.grid_units,
            "pulse_count_before": self.pulses_before,
            "pulse_count_after": self.pulses_after,
            "rotation_error_rad": self.rotation_error,
            "residual": [
                {"gate": g, "pair": [a + 1, b + 1], "j_hz": J, "phase_rad": p}
                for g, (a, b), J, p in self.residual
            ],
            "plans": self.plans,
        }


def gate_fidelity(seq: Sequence, target: np.ndarray, system: SpinSystem) -> float:
    """``|tr(U_t^dag U_c)| / 2^n`` with deferred frame rotations applied."""
    u = sequence_unitary(seq, system)
    if u.shape != target.shape:
        raise ValidationError(f"target shape {target.shape} does not match {u.shape}", "target")
    return float(min(1.0, abs(np.trace(target.conj().T @ u)) / u.shape[0]))


@dataclass
class _Parts:
    name: str
    events: list
    ideal: list
    residual: list
    plans: list
    rotation_error: float


def _check_pair(system: SpinSystem, k: int, l: int):
    n = system.n
    for s in (k, l):
        if not isinstance(s, (int, np.integer)) or not 0 <= s < n:
            raise ValidationError(f"spin {s + 1 if isinstance(s, int) else s} out of range 1..{n}", "spins")
    if k == l:
        raise ValidationError("control and target must differ", "spins")


def _cnot_parts(system: SpinSystem, k: int, l: int, phase_tol: float, max_intervals: int,
                rounding: str) -> _Parts:
    _check_pair(system, k, l)
    J = float(system.J[k, l])
    if not system.adjacent(k, l) or J == 0:
        raise RoutingError(f"spins {k + 1} and {l + 1} are not adjacent; routing required")
    tau = 1 / (2 * abs(J))
    grid = frame_grid(system)
    total = quantize_delay(tau, grid, rounding)
    active = min(total, tau)
    pad = total - active
    plan = plan_refocusing(system, k, l, max_intervals, phase_tol, tau=active)
    name = f"CNOT{k + 1}{l + 1}"
    zr = -90.0 if J > 0 else 90.0
    counters: dict = {}
    signs = [1] * system.n
    has_pad = pad > 1e-15
    body = refocus_events(plan, counters, signs, restore=not has_pad)
    ideal = [Delay(active, plan.active_pairs())]
    plans = [{"gate": name, "role": "coupling", **plan.to_dict()}]
    if has_pad:
        pad_plan = plan_full_refocusing(system, pad, max_intervals, start=signs)
        body += refocus_events(pad_plan, counters, signs)
        ideal.append(Delay(pad, ()))
        plans.append({"gate": name, "role": "pad", **pad_plan.to_dict()})
    head = [Comment(name), Pulse((l,), 90, 270)]
    tail = [ZRot(k, zr), ZRot(l, zr), Pulse((l,), 90, 90)]
    residual = [(name, p, Jr, ph) for p, Jr, ph in plan.residual]
    err = 2 * np.pi * abs(J) * (active - tau)
    return _Parts(name, head + body + tail, head + ideal + tail, residual, plans, err)


def _report(system, parts: list[_Parts], name: str, target: np.ndarray, do_simplify: bool) -> GateReport:
    events = [e for p in parts for e in p.events]
    ideal = [e for p in parts for e in p.ideal]
    raw = Sequence(tuple(events), name=name, gate=name)
    seq = simplify(raw) if do_simplify else raw
    grid = frame_grid(system)
    dur = seq_duration(seq)
    units = None if math.isinf(grid) else grid_units(dur, grid)
    return GateReport(
        name=name,
        sequence=seq,
        idealized=Sequence(tuple(ideal), name=name, gate=name),
        fidelity=gate_fidelity(seq, target, system),
        duration=dur,
        grid=grid,
        grid_units=units,
        pulses_before=pulse_count(raw),
        pulses_after=pulse_count(seq),
        residual=[r for p in parts for r in p.residual],
        plans=[pl for p in parts for pl in p.plans],
        rotation_error=max((abs(p.rotation_error) for p in parts), default=0.0),
    )


def compile_cnot(system: SpinSystem, k: int, l: int, *, phase_tol: float = DEFAULT_PHASE_TOL,
                 max_intervals: int = 4, rounding: str = "nearest",
                 simplify_result: bool = True) -> GateReport:
    """Compile CNOT with control ``k`` and target ``l`` (0-based, adjacent on the chain).

    Parameters
    ----------
    phase_tol : float
        Largest total residual coupling phase (rad) the refocusing plan may leave.
    rounding : {"nearest", "up"}
        Grid rounding of the gate length.  With ``"up"`` the coupling
        evolution is exact; ``"nearest"`` may under-rotate by a few microradians.
    """
    parts = _cnot_parts(system, k, l, phase_tol, max_intervals, rounding)
    return _report(system, [parts], parts.name, cnot_matrix(k, l, system.n), simplify_result)


def compile_swap(system: SpinSystem, k: int, l: int, *, phase_tol: float = STRICT_PHASE_TOL,
                 max_intervals: int = 4, rounding: str = "nearest") -> GateReport:
    """SWAP as CNOT_kl . CNOT_lk . CNOT_kl."""
    parts = [_cnot_parts(system, a, b, phase_tol, max_intervals, rounding)
             for a, b in ((k, l), (l, k), (k, l))]
    name = f"SWAP{k + 1}{l + 1}"
    return _report(system, parts, name, swap_matrix(k, l, system.n), True)


def route_cnot(system: SpinSystem, j: int, k: int, *, phase_tol: float = STRICT_PHASE_TOL,
               max_intervals: int = 4, rounding: str = "nearest") -> GateReport:
    """CNOT between any two chain spins, moving the control next to the target with SWAPs."""
    _check_pair(system, j, k)
    if j not in system.chain or k not in system.chain:
        raise RoutingError(f"spins {j + 1} and {k + 1} are not both on the coupling chain")
    pj, pk = system.chain_position(j), system.chain_position(k)
    step = 1 if pk > pj else -1
    path = [system.chain[i] for i in range(pj, pk + step, step)]
    for a, b in zip(path, path[1:]):
        if system.J[a, b] == 0:
            raise RoutingError(f"chain link {a + 1}-{b + 1} has no coupling")
    swaps = list(zip(path, path[1:]))[:-1]
    parts = []
    for a, b in swaps:
        parts += [_cnot_parts(system, x, y, phase_tol, max_intervals, rounding)
                  for x, y in ((a, b), (b, a), (a, b))]
    parts.append(_cnot_parts(system, path[-2], k, phase_tol, max_intervals, rounding))
    for a, b in reversed(swaps):
        parts += [_cnot_parts(system, x, y, phase_tol, max_intervals, rounding)
                  for x, y in ((a, b), (b, a), (a, b))]
    name = f"CNOT{j + 1}{k + 1}"
    return _report(system, parts, name, cnot_matrix(j, k, system.n), True)


def chain_unitary(system: SpinSystem) -> np.ndarray:
    """Product of canonical CNOTs along consecutive chain links, first link applied first."""
    n = system.n
    u = np.eye(2**n)
    for a, b in zip(system.chain, system.chain[1:]):
        u = cnot_matrix(a, b, n) @ u
    return u


def compile_balanced_chain(system: SpinSystem, *, phase_tol: float = DEFAULT_PHASE_TOL,
                           max_intervals: int = 4, rounding: str = "nearest") -> GateReport:
    """CNOTs along the whole coupling chain, concatenated and simplified."""
    if len(system.chain) < 2:
        raise ValidationError("system needs a coupling chain of at least two spins", "chain")
    parts = [_cnot_parts(system, a, b, phase_tol, max_intervals, rounding)
             for a, b in zip(system.chain, system.chain[1:])]
    return _report(system, parts, "balanced-chain", chain_unitary(system), True)
