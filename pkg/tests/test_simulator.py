import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinforge.algebra import (OperatorTerm, SpinState, decompose, expectation, matrix_of_term,
                               term_dict, z_rotation)
from spinforge.dj import pseudopure_terms, thermal_state
from spinforge.errors import NonUnitaryError, ValidationError
from spinforge.sequence import Acquire, Delay, Gradient, Pulse, Sequence, ZRot, parse_sequence
from spinforge.simulator import (SimOptions, acquire, apply_gradient, run, sequence_unitary,
                                 signal_amplitude, stick_spectrum)

from .conftest import random_hermitian

T = OperatorTerm.of


def state(*terms, n=5):
    return SpinState.from_terms(list(terms), n)


def relax_by_terms(s: SpinState, system, t):
    """Oracle: damp every product term by its transverse spins' T2 factors."""
    out = []
    for term in decompose(s):
        f = np.prod([np.exp(-t / system.T2[k]) for k, a in term.factors if a != "z"])
        out.append(term.scaled(f))
    return SpinState.from_terms(out, s.n)


def test_u90_program_yields_rho_0(system):
    rho_i = state(*(t.term for t in pseudopure_terms()))
    out = run(parse_sequence("pulse all 90 y"), rho_i, system)
    d = term_dict(out)
    assert len(d) == 31
    assert all(a == "x" for f in d for _, a in f)
    assert d[((4, "x"),)] == pytest.approx(-1)
    assert d[((0, "x"),)] == pytest.approx(1)


def test_empty_program_is_identity(system, rng):
    s = SpinState(random_hermitian(rng, 5))
    assert np.allclose(run(Sequence(), s, system).matrix, s.matrix)


def test_relaxation_of_proton_over_t2(system):
    s = run(Sequence((Delay(0.25),)), state(T(1, {0: "x"})), system, SimOptions(relaxation=True))
    plain = run(Sequence((Delay(0.25),)), state(T(1, {0: "x"})), system)
    # I1x only ever carries spin-1 transverse character, so everything shrinks by e^-1
    assert np.allclose(s.matrix, np.exp(-1) * plain.matrix)
    assert abs(expectation(s, T(1, {0: "x"})) - np.exp(-1) * expectation(plain, T(1, {0: "x"}))) < 1e-12


def test_relaxation_matches_term_oracle(system, rng):
    s0 = SpinState(random_hermitian(rng, 5))
    t = 7.3e-3
    got = run(Sequence((Delay(t),)), s0, system, SimOptions(relaxation=True))
    want = relax_by_terms(run(Sequence((Delay(t),)), s0, system), system, t)
    assert np.allclose(got.matrix, want.matrix, atol=1e-12)


def test_gradient_examples(system):
    s = apply_gradient(state(T(1, {0: "x"}), T(1, {1: "z"})))
    assert term_dict(s) == pytest.approx({((1, "z"),): 1.0})
    zz = state(T(2, {0: "z", 1: "z"}))
    assert np.allclose(apply_gradient(zz).matrix, zz.matrix)


def test_gradient_matches_term_oracle(rng):
    s = SpinState(random_hermitian(rng, 4))
    keep = [t for t in decompose(s) if all(a == "z" for _, a in t.factors)]
    assert np.allclose(apply_gradient(s).matrix, SpinState.from_terms(keep, 4).matrix)


def test_thermal_state_preparation_leaves_proton(system):
    seq = parse_sequence("pulse s2,s3,s4,s5 90 x\ngrad")
    out = run(seq, thermal_state(system), system)
    assert term_dict(out) == pytest.approx({((0, "z"),): 1.0})


def test_negative_spin5_peak(system):
    sticks = stick_spectrum(state(T(-1, {4: "x"})), 4, [2, 3], system)
    assert len(sticks) == 1
    assert sticks[0].offset == 0 and sticks[0].amplitude == pytest.approx(-1)


def test_longitudinal_state_has_no_lines(system):
    s = state(T(2, {0: "z", 1: "z"}))
    assert all(stick_spectrum(s, k, [], system) == [] for k in range(5))


def test_antiphase_doublet(system):
    s = state(T(2, {0: "x", 1: "z"}))
    sticks = stick_spectrum(s, 0, [2], system)
    assert [x.offset for x in sticks] == pytest.approx([-47.05, 47.05])
    assert [x.amplitude.real for x in sticks] == pytest.approx([-0.5, 0.5])
    # without decoupling the small J13 splits each line once more
    full = stick_spectrum(s, 0, [], system)
    assert [x.offset for x in full] == pytest.approx([-48.4, -45.7, 45.7, 48.4])
    assert sum(x.amplitude.real for x in full) == pytest.approx(0)


def test_stick_offsets_are_half_coupling_sums(system, rng):
    s = SpinState(random_hermitian(rng, 5))
    allowed = set()
    for signs in np.ndindex(2, 2):
        allowed.add(round(0.5 * (94.1 * (1 - 2 * signs[0]) + 2.7 * (1 - 2 * signs[1])), 6))
    for x in stick_spectrum(s, 0, [], system):
        assert round(x.offset, 6) in allowed


def test_signal_amplitudes_of_rho_0(system):
    rho_0 = state(*(T(1, {k: "x"}) for k in range(4)), T(-1, {4: "x"}))
    amps = [signal_amplitude(rho_0, k, system) for k in range(5)]
    assert amps == pytest.approx([1, 1, 1, 1, -1])
    assert [signal_amplitude(SpinState.zero(5), k, system) for k in range(5)] == [0] * 5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 4), st.floats(-720, 720))
def test_signal_equals_stick_sum_and_ix_coefficient(system, seed, spin, frame):
    rng = np.random.default_rng(seed)
    s = SpinState(random_hermitian(rng, 5))
    s.shift_frame(spin, frame)
    others = [k for k in range(5) if k != spin]
    stick_sum = sum(x.amplitude.real for x in stick_spectrum(s, spin, others, system))
    amp = signal_amplitude(s, spin, system)
    assert amp == pytest.approx(stick_sum, abs=1e-12)
    assert amp == pytest.approx(expectation(s.aligned(), T(1, {spin: "x"})), abs=1e-12)


def test_zrot_frame_tracking_matches_explicit_rotation(system, rng):
    seq = Sequence((ZRot(1, 37.0), Pulse((1,), 90, 20), Delay(3e-3), ZRot(3, -90), Pulse(None, 45, 90)))
    s0 = SpinState(random_hermitian(rng, 5))
    tracked = run(seq, s0, system, SimOptions(frame_tracking=True)).aligned()
    explicit = run(seq, s0, system, SimOptions(frame_tracking=False))
    assert np.allclose(tracked.matrix, explicit.matrix, atol=1e-12)
    u_t = sequence_unitary(seq, system, frame_tracking=True)
    u_e = sequence_unitary(seq, system, frame_tracking=False)
    assert np.allclose(u_t, u_e, atol=1e-12)


def test_zrot_is_a_negative_frame_shift(system):
    s = run(Sequence((ZRot(2, 90),)), SpinState.zero(5), system)
    assert s.frame_phase[2] == pytest.approx(270)
    u = sequence_unitary(Sequence((ZRot(2, 90),)), system)
    assert np.allclose(u, z_rotation(2, 90, 5))


def test_events_preserve_hermiticity_and_trace(system, rng):
    seq = parse_sequence("pulse s1 90 x\ndelay 3ms\npulse all 33 17\ndelay 1ms active=J34\ngrad")
    s0 = SpinState(random_hermitian(rng, 5))
    for opts in (SimOptions(), SimOptions(relaxation=True)):
        s = run(seq, s0, system, opts)
        assert s.is_hermitian()
        assert abs(np.trace(s.matrix) - np.trace(s0.matrix)) < 1e-10


def test_active_delay_only_evolves_listed_pairs(system):
    s0 = state(T(1, {2: "x"}))
    s = run(Sequence((Delay(1 / (2 * 65.2), ((2, 3),)),)), s0, system)
    assert term_dict(s) == pytest.approx({((2, "y"), (3, "z")): 2.0})
    none = run(Sequence((Delay(0.1, ()),)), s0, system)
    assert np.allclose(none.matrix, s0.matrix)


def test_acquire_reads_spectrum(system):
    seq = parse_sequence("pulse s5 90 y\nacquire s5 decouple=s3,s4")
    sticks = acquire(seq, state(T(-1, {4: "z"})), system)
    assert [x.amplitude.real for x in sticks] == pytest.approx([-1])


def test_run_errors(system):
    with pytest.raises(ValidationError):
        run(Sequence((Acquire(0), Gradient())), SpinState.zero(5), system)
    with pytest.raises(ValidationError):
        run(Sequence(), SpinState.zero(3), system)
    with pytest.raises(ValidationError):
        run(Sequence((Pulse((7,), 90, 0),)), SpinState.zero(5), system)
    with pytest.raises(NonUnitaryError):
        sequence_unitary(Sequence((Gradient(),)), system)
    with pytest.raises(NonUnitaryError):
        sequence_unitary(Sequence((Acquire(0),)), system)


def test_matrix_term_signal_linearity(system, rng):
    terms = [T(rng.normal(), {0: "x", 1: "z"}), T(rng.normal(), {0: "x"}), T(rng.normal(), {0: "y"})]
    total = signal_amplitude(state(*terms), 0, system)
    parts = sum(signal_amplitude(state(t), 0, system) for t in terms)
    assert total == pytest.approx(parts)
    assert np.allclose(state(*terms).matrix, sum(matrix_of_term(t, 5) for t in terms))
