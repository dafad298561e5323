"""Deutsch-Jozsa experiments on a five-spin chain.

The pseudopure input is never prepared as a whole.  Each of its product
operator terms is started separately, pushed through ``U_90`` and the
function propagator, and read out; the per-spin sums over terms give the
temporally averaged spectrum.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .algebra import (BooleanFunction, OperatorTerm, SpinState, cnot_matrix, conjugate,
                      decompose, matrix_of_term, permutation_propagator, rotation_propagator)
from .compiler import chain_unitary, compile_balanced_chain, quantize_delay
from .constants import COEFF_CUTOFF, DEFAULT_THRESHOLD
from .errors import IncompleteTableError, PreparationError, UnsupportedError, ValidationError
from .sequence import Delay, Gradient, Pulse, Sequence
from .simulator import SimOptions, Stick, run, signal_amplitude, stick_spectrum
from .system import SpinSystem, frame_grid

MODES = ("ideal", "compiled")
PHASE_CYCLE = ((0.0, 90.0, 0.0), (180.0, 90.0, 180.0), (0.0, 270.0, 0.0), (180.0, 270.0, 180.0))
"""Four steps of (phi_a, phi_b, receiver) in degrees."""

F0 = BooleanFunction.constant(4, 0)
FB = BooleanFunction.from_callable(4, lambda a, b, c, d: a ^ b ^ c ^ d)


@dataclass(frozen=True)
class PseudopureTerm:
    term: OperatorTerm
    sign: int

    @property
    def spins(self) -> tuple[int, ...]:
        return self.term.spins

    @property
    def order(self) -> int:
        return self.term.order

    def __str__(self):
        return str(self.term)


def pseudopure_terms(n: int = 5) -> list[PseudopureTerm]:
    """The ``2^n - 1`` z-product terms of ``2^(n-1) |0...01><0...01| - 1/2``.

    Ordered by binary counting over spin subsets, spin 1 as lowest bit.
    """
    if n < 1:
        raise ValidationError("need at least one spin", "n")
    out = []
    for mask in range(1, 2**n):
        spins = [k for k in range(n) if mask >> k & 1]
        sign = -1 if n - 1 in spins else 1
        coeff = sign * 2.0 ** (len(spins) - 1)
        out.append(PseudopureTerm(OperatorTerm.of(coeff, {k: "z" for k in spins}), sign))
    return out


def pseudopure_matrix(n: int = 5) -> np.ndarray:
    """``2^(n-1) |0...01><0...01| - 1/2`` (traceless part of the pseudopure input)."""
    dim = 2**n
    m = -0.5 * np.eye(dim, dtype=complex)
    m[1, 1] += 2.0 ** (n - 1)
    return m


def term_index(term: PseudopureTerm | OperatorTerm) -> int:
    t = term.term if isinstance(term, PseudopureTerm) else term
    return sum(1 << k for k in t.spins) - 1


# ---------------------------------------------------------------- propagators


def u90(n: int, phase: float = 90.0) -> np.ndarray:
    """Hard 90-degree pulse, a y pulse by default."""
    return _u90(n, float(phase)).copy()


@lru_cache(maxsize=64)
def _u90(n: int, phase: float) -> np.ndarray:
    return rotation_propagator(None, 90.0, phase, n)


@lru_cache(maxsize=512)
def _rotated_term(term: OperatorTerm, n: int, phi_b: float) -> np.ndarray:
    """Matrix of ``term`` after the read pulse; shared by every function."""
    u = _u90(n, phi_b)
    m = u @ matrix_of_term(term, n) @ u.conj().T
    m.flags.writeable = False
    return m


def oracle_unitary(f: BooleanFunction, system: SpinSystem | None = None) -> np.ndarray:
    """Ideal function propagator.

    Parity is realised as the CNOT chain along the coupling chain, the
    cheaper operator with the same effect on the value bit; every other
    function uses the plain permutation ``|x, y> -> |x, y XOR f(x)>``.
    """
    n = f.arity + 1
    if f == FB and n == 5:
        if system is None:
            u = np.eye(2**n)
            for k in range(n - 1):
                u = cnot_matrix(k, k + 1, n) @ u
            return u
        return chain_unitary(system)
    return permutation_propagator(f, n)


def balanced_chain_unitary(n: int = 5) -> np.ndarray:
    """Basis map ``x_k -> x_1 XOR ... XOR x_k`` for every k."""
    dim = 2**n
    u = np.zeros((dim, dim))
    for src in range(dim):
        bits = [(src >> (n - 1 - k)) & 1 for k in range(n)]
        acc = list(itertools.accumulate(bits, lambda a, b: a ^ b))
        dst = sum(b << (n - 1 - k) for k, b in enumerate(acc))
        u[dst, src] = 1.0
    return u


def _permutation(f: BooleanFunction) -> np.ndarray:
    idx = np.arange(2 ** (f.arity + 1))
    return idx ^ np.asarray(f.table)[idx >> 1]


# ---------------------------------------------------------------- term sets


def experiment_terms(n: int = 5) -> dict[int, list[tuple[PseudopureTerm, int]]]:
    """(initial term, observed spin) pairs for the three experiment sets."""
    by_spins = {t.spins: t for t in pseudopure_terms(n)}
    return {
        1: [(by_spins[(k,)], k) for k in range(n)],
        2: [(by_spins[(k, k + 1)], k) for k in range(n - 1)],
        3: [(by_spins[(k - 1, k)], k) for k in range(1, n)],
    }


def detectable_subset(system: SpinSystem, functions) -> list[PseudopureTerm]:
    """Terms giving a nonzero signal on some spin for at least one function."""
    functions = list(functions)
    if not functions:
        raise ValidationError("need at least one function", "functions")
    n = system.n
    rot = u90(n)
    keep = []
    for t in pseudopure_terms(n):
        s0 = conjugate(SpinState.from_terms([t.term], n), rot)
        for f in functions:
            s = conjugate(s0, oracle_unitary(f, system))
            if any(abs(signal_amplitude(s, k, system)) > 1e-9 for k in range(n)):
                keep.append(t)
                break
    return keep


# ---------------------------------------------------------------- preparation


def thermal_state(system: SpinSystem) -> SpinState:
    """Deviation density ``sum_k (nu_k / nu_1) I_kz``."""
    nu = np.asarray(system.nu, dtype=float)
    terms = [OperatorTerm.of(abs(nu[k] / nu[0]), {k: "z"}) for k in range(system.n)]
    return SpinState.from_terms(terms, system.n)


def _segment(system: SpinSystem, spins: tuple[int, ...]) -> list[int]:
    chain = list(system.chain)
    if any(s not in chain for s in spins):
        raise PreparationError(f"spins {[s + 1 for s in spins]} are not all on the coupling chain")
    pos = sorted(chain.index(s) for s in spins)
    if pos != list(range(pos[0], pos[0] + len(pos))):
        raise PreparationError(f"target spins {[s + 1 for s in spins]} are not a contiguous chain segment")
    return [chain[p] for p in pos]


def _inept_delay(system: SpinSystem, a: int, b: int) -> list:
    J = system.J[a, b]
    if J == 0:
        raise PreparationError(f"spins {a + 1} and {b + 1} are not coupled")
    tau = 1 / (2 * abs(J))
    total = quantize_delay(tau, frame_grid(system), "up")
    out = [Delay(tau, ((a, b),))]
    if total - tau > 1e-15:
        out.append(Delay(total - tau, ()))
    return out


def _extend(system, a, b):
    """``c I_az -> c 2 I_az I_bz`` (up to sign), with ``a`` the last spin of the product."""
    return [Pulse((a,), 90, 0)] + _inept_delay(system, a, b) + [Pulse((a,), 90, 270)]


def _transfer(system, a, b):
    """``2 I_az I_bz -> I_bz`` (up to sign)."""
    return [Pulse((b,), 90, 0)] + _inept_delay(system, a, b) + [Pulse((b,), 90, 270)]


def _coefficient(state: SpinState, term: OperatorTerm) -> float:
    for t in decompose(state):
        if t.factors == term.factors:
            return t.coeff
    return 0.0


def prepare_term_sequence(system: SpinSystem, target: PseudopureTerm | OperatorTerm,
                          phi_a: float = 0.0) -> Sequence:
    """Pulse sequence turning the thermal state into ``target`` via INEPT transfers.

    ``phi_a`` is added to the phase of the first pulse on the first chain
    spin; 180 inverts the prepared term.
    """
    term = target.term if isinstance(target, PseudopureTerm) else target
    if not term.factors or any(ax != "z" for _, ax in term.factors):
        raise PreparationError("target must be a nonempty product of z operators")
    n = system.n
    if any(k >= n for k in term.spins):
        raise PreparationError(f"target addresses spins outside a {n}-spin system")
    seg = _segment(system, term.spins)
    chain = list(system.chain)
    start = chain[0]
    events = [Pulse(tuple(k for k in range(n) if k != start), 90, 0), Gradient()]
    # walk single-spin polarization down the chain, then grow the product
    for p in range(chain.index(seg[0])):
        events += _extend(system, chain[p], chain[p + 1]) + _transfer(system, chain[p], chain[p + 1])
    for a, b in zip(seg, seg[1:]):
        events += _extend(system, a, b)

    seq = Sequence(tuple(events), name="prep " + str(term))
    got = _coefficient(run(seq, thermal_state(system), system), term)
    ratio = got / term.coeff
    if abs(abs(ratio) - 1) > 1e-6:
        raise PreparationError(f"preparation reached relative coefficient {ratio:.6g}")
    if ratio < 0:
        last = events[-1]
        if isinstance(last, Pulse) and last.flip == 90 and len(events) > 2:
            events[-1] = Pulse(last.spins, 90, last.phase + 180)
        else:
            events.append(Pulse((start,), 180, 0))
    if phi_a % 360:
        for i, e in enumerate(events):
            if isinstance(e, Pulse) and e.spins == (start,):
                events[i] = Pulse(e.spins, e.flip, e.phase + phi_a)
                break
    return Sequence(tuple(events), name="prep " + str(term))


def _has_phi_a_pulse(seq: Sequence, system: SpinSystem) -> bool:
    return any(isinstance(e, Pulse) and e.spins == (system.chain[0],) for e in seq)


# ---------------------------------------------------------------- experiments


@dataclass(frozen=True)
class SignalRow:
    set: int
    term_index: int
    term: str
    spin: int  # 0-based
    amplitude: float


@dataclass
class SignalTable:
    rows: list[SignalRow] = field(default_factory=list)
    evaluations: dict[str, int] = field(default_factory=dict)
    spectra: dict[tuple[int, int], list[Stick]] = field(default_factory=dict)

    def get(self, set_: int, spin: int) -> float | None:
        for r in self.rows:
            if r.set == set_ and r.spin == spin:
                return r.amplitude
        return None

    def amplitudes(self, set_: int) -> dict[int, float]:
        return {r.spin: r.amplitude for r in self.rows if r.set == set_}

    def averaged(self) -> dict[int, dict[int, float]]:
        """Per-set, per-spin sum over contributing initial terms."""
        out: dict[int, dict[int, float]] = {}
        for r in self.rows:
            out.setdefault(r.set, {})
            out[r.set][r.spin] = out[r.set].get(r.spin, 0.0) + r.amplitude
        return out

    def __add__(self, other: "SignalTable") -> "SignalTable":
        evals = dict(self.evaluations)
        for k, v in other.evaluations.items():
            evals[k] = evals.get(k, 0) + v
        return SignalTable(self.rows + other.rows, evals)

    @property
    def total_evaluations(self) -> int:
        return sum(self.evaluations.values())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["set", "term_index", "term", "spin", "amplitude"])
        for r in sorted(self.rows, key=lambda r: (r.set, r.term_index, r.spin)):
            w.writerow([r.set, r.term_index, r.term, r.spin + 1, f"{r.amplitude:.12g}"])
        return buf.getvalue()


@lru_cache(maxsize=8)
def _compiled_chain(system: SpinSystem) -> Sequence:
    return compile_balanced_chain(system).sequence


def _program(system: SpinSystem, f: BooleanFunction, mode: str, phi_b: float):
    """Return ``apply(state) -> state`` for ``U_90`` followed by the function program."""
    n = system.n
    if mode == "ideal":
        rot = u90(n, phi_b)
        if f == FB and n == 5:
            u = oracle_unitary(f, system) @ rot
            return lambda s: conjugate(s, u)
        perm = _permutation(f)

        def apply(s):
            r = conjugate(s, rot)
            m = np.empty_like(r.matrix)
            m[np.ix_(perm, perm)] = r.matrix
            return r.with_matrix(m)
        return apply
    if mode != "compiled":
        raise ValidationError(f"mode must be one of {MODES}", "mode")
    if f == F0:
        body: tuple = ()
    elif f == FB and n == 5:
        body = _compiled_chain(system).events
    else:
        raise UnsupportedError("compiled mode supports only the constant-zero and parity functions")
    seq = Sequence((Pulse(None, 90, phi_b),) + tuple(body))
    return seq


def _evaluate(system, f, mode, opts, term, spin, full_preparation, phase_cycle,
              sticks: dict | None = None) -> float:
    n = system.n
    steps = PHASE_CYCLE if phase_cycle else ((0.0, 90.0, 0.0),)
    total = 0.0
    for phi_a, phi_b, rec in steps:
        if full_preparation:
            prep = prepare_term_sequence(system, term, phi_a)
            state = run(prep, thermal_state(system), system, opts)
            receiver = rec if _has_phi_a_pulse(prep, system) else 0.0
        else:
            state = None
            receiver = 0.0
        # a -y read pulse inverts every z factor of the term
        receiver += term.order * (phi_b - 90.0)
        if state is None and mode == "ideal" and not (f == FB and n == 5):
            # fast path: permute the cached post-pulse matrix
            perm = _permutation(f)
            m = np.empty((2**n, 2**n), dtype=complex)
            m[np.ix_(perm, perm)] = _rotated_term(term.term, n, phi_b)
            final = SpinState(m)
        else:
            if state is None:
                state = SpinState.from_terms([term.term], n)
            prog = _program(system, f, mode, phi_b)
            final = prog(state) if callable(prog) else run(prog, state, system, opts)
        weight = math.cos(math.radians(receiver))
        total += weight * signal_amplitude(final, spin, system)
        if sticks is not None:
            for st in stick_spectrum(final, spin, system.decoupled_for(spin), system):
                sticks[st.offset] = sticks.get(st.offset, 0j) + weight * st.amplitude / len(steps)
    total /= len(steps)
    # float noise below the term cutoff is reported as an exact zero
    return 0.0 if abs(total) <= COEFF_CUTOFF else total


def run_dj(system: SpinSystem, f: BooleanFunction, mode: str = "ideal",
           opts: SimOptions = SimOptions(), *, full_preparation: bool = False,
           phase_cycle: bool = False, sets=(1, 2, 3), spectra: bool = False) -> SignalTable:
    """Run experiment sets 1-3 for ``f`` and collect one amplitude per (set, spin).

    Parameters
    ----------
    mode : {"ideal", "compiled"}
        ``ideal`` applies exact propagators; ``compiled`` simulates the pulse
        sequences (only the constant-zero and parity functions compile).
    full_preparation : bool
        Build each initial term from thermal magnetization instead of setting it.
    phase_cycle : bool
        Average over the four-step (phi_a, phi_b, receiver) cycle.
    spectra : bool
        Also keep each row's stick spectrum, recorded with the system's
        detection decoupling.
    """
    n = system.n
    if f.arity != n - 1:
        raise ValidationError(f"function arity {f.arity} does not fit a {n}-spin system", "f")
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}", "mode")
    if mode == "compiled" and f not in (F0, FB):
        raise UnsupportedError("compiled mode supports only the constant-zero and parity functions")
    table = SignalTable()
    plan = experiment_terms(n)
    for s in sets:
        if s not in plan:
            raise ValidationError(f"unknown experiment set {s}", "sets")
        for term, spin in plan[s]:
            sticks: dict | None = {} if spectra else None
            amp = _evaluate(system, f, mode, opts, term, spin, full_preparation, phase_cycle, sticks)
            if sticks is not None:
                table.spectra[(s, spin)] = [Stick(o, complex(a)) for o, a in sorted(sticks.items())]
            table.rows.append(SignalRow(s, term_index(term), str(term), spin, amp))
            key = f"set{s}:{term}"
            table.evaluations[key] = table.evaluations.get(key, 0) + 1
    return table


def signals_from_state(system: SpinSystem, f: BooleanFunction, state: SpinState,
                       mode: str = "ideal", opts: SimOptions = SimOptions()) -> dict[int, float]:
    """Per-spin amplitudes after ``U_90`` and the function program, from any start state."""
    prog = _program(system, f, mode, 90.0)
    final = prog(state) if callable(prog) else run(prog, state, system, opts)
    return {k: signal_amplitude(final, k, system) for k in range(system.n)}


# ---------------------------------------------------------------- verdict


@dataclass
class Verdict:
    label: str  # Constant | Balanced | Inconclusive
    evidence: dict = field(default_factory=dict)
    deciding_spins: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "verdict": self.label,
            "deciding_spins": [k + 1 for k in self.deciding_spins],
            "evidence": {str(k + 1): v for k, v in sorted(self.evidence.items())},
        }


def classify(table: SignalTable, threshold: float = DEFAULT_THRESHOLD, n: int = 5) -> Verdict:
    """Constant, Balanced or Inconclusive from the input spins' signals.

    Constant needs every input spin's set-1 signal above ``1 - threshold``.
    A balanced function always pulls at least one of them down to 1/2 or
    less; a sign-reversed set-2 signal is reported as the preferred evidence.
    """
    if not 0 < threshold < 0.5:
        raise ValidationError("threshold must lie in (0, 0.5)", "threshold")
    set1 = table.amplitudes(1)
    inputs = list(range(n - 1))
    missing = [k + 1 for k in inputs if k not in set1]
    if missing:
        raise IncompleteTableError(f"set-1 rows missing for spins {missing}")
    set2 = table.amplitudes(2)
    evidence = {}
    for k in inputs:
        a1, a2 = set1[k], set2.get(k)
        if a2 is not None and a2 < -threshold:
            kind = "sign-reversal"
        elif a1 > 1 - threshold:
            kind = "full"
        elif abs(a1) <= threshold:
            kind = "null"
        else:
            kind = "reduced"
        evidence[k] = {"set1": a1, "set2": a2, "kind": kind}
    if all(abs(a) <= threshold for a in set1.values()) and \
            all(abs(a) <= threshold for a in set2.values()):
        return Verdict("Inconclusive", evidence, [])
    if all(evidence[k]["set1"] > 1 - threshold for k in inputs):
        return Verdict("Constant", evidence, inputs)
    reversed_ = [k for k in inputs if evidence[k]["kind"] == "sign-reversal"]
    deciding = reversed_ or [k for k in inputs if evidence[k]["kind"] != "full"]
    return Verdict("Balanced", evidence, deciding)


# ---------------------------------------------------------------- traces


def intermediate_trace(system: SpinSystem, initial_terms, compiled: bool = False):
    """Decompositions after ``U_90`` and after each chain CNOT, per initial term.

    Returns a list (one per term) of columns; each column is ``(label, terms)``.
    """
    from .compiler import compile_cnot
    from .simulator import run as run_seq

    n = system.n
    links = list(zip(system.chain, system.chain[1:]))
    gates = {}
    if compiled:
        gates = {ab: compile_cnot(system, *ab, rounding="up").sequence for ab in links}
    out = []
    for t in initial_terms:
        term = t.term if isinstance(t, PseudopureTerm) else t
        s = conjugate(SpinState.from_terms([term], n), u90(n))
        cols = [("rho_0", decompose(s.aligned()))]
        for a, b in links:
            if compiled:
                s = run_seq(gates[(a, b)], s, system)
            else:
                s = conjugate(s, cnot_matrix(a, b, n))
            cols.append((f"CNOT{a + 1}{b + 1}", decompose(s.aligned())))
        out.append(cols)
    return out


def balanced_functions(arity: int = 4):
    """Every balanced function of ``arity`` bits, in lexicographic order of the ones."""
    size = 2**arity
    for ones in itertools.combinations(range(size), size // 2):
        table = [0] * size
        for i in ones:
            table[i] = 1
        yield BooleanFunction(arity, table)


__all__ = [
    "F0", "FB", "PHASE_CYCLE", "PseudopureTerm", "SignalRow", "SignalTable", "Verdict",
    "balanced_chain_unitary", "balanced_functions", "classify", "detectable_subset",
    "experiment_terms", "intermediate_trace", "oracle_unitary", "prepare_term_sequence",
    "pseudopure_matrix", "pseudopure_terms", "run_dj", "signals_from_state", "term_index",
    "thermal_state", "u90",
]
