"""Run pulse sequences on dense density matrices and read out stick spectra.

Everything happens in the multiple rotating frame: the Hamiltonian holds
only weak ``2 pi J I_kz I_lz`` couplings, pulses are instantaneous.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import SpinState, _rotation_2x2, frame_alignment, z_rotation
from .constants import COEFF_CUTOFF
from .errors import NonUnitaryError, ValidationError
from .sequence import Acquire, Comment, Delay, Gradient, Pulse, Sequence, ZRot
from .system import SpinSystem


@dataclass(frozen=True)
class SimOptions:
    relaxation: bool = False
    frame_tracking: bool = True


@dataclass(frozen=True)
class Stick:
    offset: float  # Hz from the spin's rotating-frame centre
    amplitude: complex  # real part: absorptive x signal


def _bits(n: int, spin: int) -> np.ndarray:
    return (np.arange(2**n) >> (n - 1 - spin)) & 1


def pulse_unitary(flip: float, phases: dict[int, float], n: int) -> np.ndarray:
    """Simultaneous rotation by ``flip`` of each spin about its own phase axis (degrees)."""
    theta = np.deg2rad(flip)
    out = np.array([[1.0 + 0j]])
    for k in range(n):
        block = _rotation_2x2(theta, np.deg2rad(phases[k])) if k in phases else np.eye(2)
        out = np.kron(out, block)
    return out


def _pulse_phases(e: Pulse, frames: np.ndarray, n: int, tracking: bool) -> dict[int, float]:
    spins = e.targets(n)
    if any(k >= n for k in spins):
        raise ValidationError(f"pulse addresses spin {max(spins) + 1} of a {n}-spin system")
    return {k: e.phase + (frames[k] if tracking else 0.0) for k in spins}


def delay_diagonal(e: Delay, system: SpinSystem) -> np.ndarray:
    n = system.n
    if e.active is None:
        pairs = system.nonzero_couplings()
    else:
        for k, l in e.active:
            if l >= n:
                raise ValidationError(f"coupling J{k + 1}{l + 1} outside a {n}-spin system")
        pairs = [(k, l, system.J[k, l]) for k, l in e.active if system.J[k, l] != 0]
    phase = np.zeros(2**n)
    for k, l, J in pairs:
        phase += 2 * np.pi * J * e.duration * (0.5 - _bits(n, k)) * (0.5 - _bits(n, l))
    return np.exp(-1j * phase)


def relaxation_factors(system: SpinSystem, t: float) -> np.ndarray:
    """Elementwise T2 damping: element (a, b) decays for every spin whose bit differs.

    Such elements are exactly the span of product terms transverse in that spin.
    """
    n = system.n
    rate = np.zeros((2**n, 2**n))
    for k in range(n):
        b = _bits(n, k)
        rate += (b[:, None] != b[None, :]) * (t / system.T2[k])
    return np.exp(-rate)


def apply_gradient(state: SpinState) -> SpinState:
    """Idealized crusher: keep only all-longitudinal terms (the diagonal)."""
    return state.with_matrix(np.diag(np.diag(state.matrix)))


def run(seq: Sequence, state: SpinState, system: SpinSystem, opts: SimOptions = SimOptions()) -> SpinState:
    """Apply every event of ``seq`` to a copy of ``state``."""
    n = system.n
    if state.n != n:
        raise ValidationError(f"state has {state.n} spins, system has {n}", "state")
    out = state.copy()
    rho = out.matrix
    events = seq.events
    for i, e in enumerate(events):
        if isinstance(e, Pulse):
            u = pulse_unitary(e.flip, _pulse_phases(e, out._frame, n, opts.frame_tracking), n)
            rho = u @ rho @ u.conj().T
        elif isinstance(e, Delay):
            d = delay_diagonal(e, system)
            rho = rho * np.outer(d, d.conj())
            if opts.relaxation and e.duration > 0:
                rho = rho * relaxation_factors(system, e.duration)
        elif isinstance(e, ZRot):
            if e.spin >= n:
                raise ValidationError(f"zrot addresses spin {e.spin + 1} of a {n}-spin system")
            if opts.frame_tracking:
                out.shift_frame(e.spin, -e.angle)
            else:
                u = z_rotation(e.spin, e.angle, n)
                rho = u @ rho @ u.conj().T
        elif isinstance(e, Gradient):
            rho = np.diag(np.diag(rho))
        elif isinstance(e, Acquire):
            if any(not isinstance(x, Comment) for x in events[i + 1:]):
                raise ValidationError("acquire must be the last event", "events")
        elif not isinstance(e, Comment):
            raise TypeError(f"unknown event {e!r}")
    out.matrix = rho
    return out


def stick_spectrum(state: SpinState, spin: int, decoupled, system: SpinSystem) -> list[Stick]:
    """Single-quantum lines of ``spin`` with ideal decoupling of ``decoupled``.

    Scaled so that ``1 * I_kx`` gives total real amplitude 1; the receiver
    phase follows the spin's accumulated frame phase.
    """
    n = state.n
    if not 0 <= spin < n:
        raise IndexError(f"spin index {spin} out of range for {n} spins")
    decoupled = set(decoupled)
    rho = state.matrix
    kbit = 1 << (n - 1 - spin)
    receiver = np.exp(-1j * np.deg2rad(state._frame[spin]))
    norm = 2.0 / 2 ** (n - 1)
    active = [l for l in range(n) if l != spin and l not in decoupled and system.J[spin, l] != 0]
    lines: dict[float, complex] = {}
    for a in range(2**n):
        if a & kbit:
            continue
        b = a | kbit
        offset = sum(system.J[spin, l] * (0.5 - ((a >> (n - 1 - l)) & 1)) for l in active)
        key = round(float(offset), 9) + 0.0
        lines[key] = lines.get(key, 0j) + norm * rho[b, a] * receiver
    return [Stick(off, complex(amp)) for off, amp in sorted(lines.items())
            if abs(amp) > COEFF_CUTOFF]


def signal_amplitude(state: SpinState, spin: int, system: SpinSystem) -> float:
    """Total real (x) signal of ``spin`` with all other spins decoupled."""
    n = state.n
    if not 0 <= spin < n:
        raise IndexError(f"spin index {spin} out of range for {n} spins")
    # every line collapses onto one stick once all partners are decoupled
    kbit = 1 << (n - 1 - spin)
    lower = np.arange(2**n)[(np.arange(2**n) & kbit) == 0]
    total = state.matrix[lower | kbit, lower].sum() * 2.0 / 2 ** (n - 1)
    return float((total * np.exp(-1j * np.deg2rad(state._frame[spin]))).real)


def acquire(seq: Sequence, state: SpinState, system: SpinSystem, opts: SimOptions = SimOptions()):
    """Run ``seq`` and return the stick spectrum named by its final Acquire."""
    final = run(seq, state, system, opts)
    acq = [e for e in seq if isinstance(e, Acquire)]
    if not acq:
        raise ValidationError("sequence has no acquire statement", "events")
    return stick_spectrum(final, acq[-1].spin, acq[-1].decoupled, system)


def sequence_unitary(seq: Sequence, system: SpinSystem, frame_tracking: bool = True) -> np.ndarray:
    """Propagator of a unitary sequence, with deferred frame rotations applied at the end."""
    n = system.n
    u = np.eye(2**n, dtype=complex)
    frames = np.zeros(n)
    for e in seq:
        if isinstance(e, Pulse):
            u = pulse_unitary(e.flip, _pulse_phases(e, frames, n, frame_tracking), n) @ u
        elif isinstance(e, Delay):
            u = delay_diagonal(e, system)[:, None] * u
        elif isinstance(e, ZRot):
            if frame_tracking:
                frames[e.spin] -= e.angle
            else:
                u = z_rotation(e.spin, e.angle, n) @ u
        elif isinstance(e, (Gradient, Acquire)):
            raise NonUnitaryError(f"{type(e).__name__} is not a unitary operation")
    return frame_alignment(frames, n) @ u
