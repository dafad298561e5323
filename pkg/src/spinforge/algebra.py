"""Cartesian product operators, propagators and dense-matrix state evolution.

Spin ``k`` (0-based) is the ``k``-th tensor factor, so spin 0 is the most
significant bit of a computational-basis index. Single-spin operators are
``I_a = sigma_a / 2``; ``|0>`` is the ``I_z = +1/2`` (alpha) state.

Basis elements are bare products ``prod_k I_{k,axis}`` (no ``2**(q-1)``
prefactor), so the usual NMR coefficients 1, 2, 4, 8, 16 show up in the
coefficients themselves.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .constants import ALGEBRA_TOL, COEFF_CUTOFF
from .errors import NumericalConsistencyError, ParseError, ValidationError

AXES = ("x", "y", "z")

ID2 = np.eye(2, dtype=complex)
IX = np.array([[0, 1], [1, 0]], dtype=complex) / 2
IY = np.array([[0, -1j], [1j, 0]], dtype=complex) / 2
IZ = np.array([[1, 0], [0, -1]], dtype=complex) / 2
SPIN_OPS = {"x": IX, "y": IY, "z": IZ}

# maps (row, col) of a single-spin 2x2 block onto coefficients of (1, Ix, Iy, Iz)
_BASIS = (ID2, IX, IY, IZ)
_PROJECT = np.array([(b / np.trace(b @ b)).T.reshape(4) for b in _BASIS])
_LABELS = (None, "x", "y", "z")


@dataclass(frozen=True)
class OperatorTerm:
    """``coeff * prod_{k in factors} I_{k, axis}``.

    ``factors`` is a sorted tuple of ``(spin, axis)`` pairs; spins not listed
    carry the identity. Build with :meth:`of` to pass a plain mapping.
    """

    coeff: float
    factors: tuple[tuple[int, str], ...] = ()

    def __post_init__(self):
        spins = [k for k, _ in self.factors]
        if len(set(spins)) != len(spins):
            raise ValidationError("spin listed twice", path="factors")
        for k, axis in self.factors:
            if axis not in AXES:
                raise ValidationError(f"unknown axis {axis!r}", path="factors")
            if k < 0:
                raise ValidationError(f"negative spin index {k}", path="factors")
        if not np.isfinite(self.coeff):
            raise ValidationError("coefficient must be finite", path="coeff")
        object.__setattr__(self, "factors", tuple(sorted(self.factors)))

    @classmethod
    def of(cls, coeff: float, factors: Mapping[int, str] | None = None) -> "OperatorTerm":
        return cls(float(coeff), tuple((factors or {}).items()))

    @property
    def factor_map(self) -> dict[int, str]:
        return dict(self.factors)

    @property
    def spins(self) -> tuple[int, ...]:
        return tuple(k for k, _ in self.factors)

    @property
    def order(self) -> int:
        return len(self.factors)

    def scaled(self, s: float) -> "OperatorTerm":
        return OperatorTerm(self.coeff * s, self.factors)

    def __str__(self):
        body = "*".join(f"I{k + 1}{a}" for k, a in self.factors) or "1"
        c = f"{self.coeff:.12g}"
        if c == "1":
            return body
        if c == "-1":
            return "-" + body
        return f"{c}*{body}"


class BooleanFunction:
    """Truth table of ``f: {0,1}^m -> {0,1}``.

    Table index ``i`` encodes the input with ``x_1`` as most significant bit.
    """

    __slots__ = ("arity", "table")

    def __init__(self, arity: int, table: Iterable[int]):
        table = tuple(int(b) for b in table)
        if arity < 0:
            raise ValidationError("arity must be non-negative", path="arity")
        if len(table) != 2**arity:
            raise ValidationError(
                f"table has {len(table)} entries, expected {2**arity}", path="table"
            )
        if any(b not in (0, 1) for b in table):
            raise ValidationError("table entries must be 0 or 1", path="table")
        self.arity = arity
        self.table = table

    @classmethod
    def from_callable(cls, arity: int, fn) -> "BooleanFunction":
        rows = []
        for i in range(2**arity):
            bits = [(i >> (arity - 1 - j)) & 1 for j in range(arity)]
            rows.append(int(fn(*bits)) & 1)
        return cls(arity, rows)

    @classmethod
    def constant(cls, arity: int, value: int = 0) -> "BooleanFunction":
        return cls(arity, [value] * 2**arity)

    def __call__(self, index: int) -> int:
        return self.table[index]

    def __eq__(self, other):
        return isinstance(other, BooleanFunction) and self.table == other.table

    def __hash__(self):
        return hash(self.table)

    def __repr__(self):
        return f"BooleanFunction({self.arity}, {''.join(map(str, self.table))!r})"

    @property
    def is_constant(self) -> bool:
        return len(set(self.table)) == 1

    @property
    def is_balanced(self) -> bool:
        return 2 * sum(self.table) == len(self.table)


class SpinState:
    """Deviation density matrix of ``n`` spins plus per-spin frame phases (degrees)."""

    def __init__(self, matrix, frame_phase=None):
        matrix = np.array(matrix, dtype=complex)
        dim = matrix.shape[0]
        if matrix.ndim != 2 or matrix.shape != (dim, dim) or dim & (dim - 1) or dim < 2:
            raise ValidationError(f"expected a 2^n square matrix, got {matrix.shape}", "matrix")
        self.matrix = matrix
        self.n = dim.bit_length() - 1
        if frame_phase is None:
            frame_phase = np.zeros(self.n)
        frame_phase = np.array(frame_phase, dtype=float)
        if frame_phase.shape != (self.n,) or not np.all(np.isfinite(frame_phase)):
            raise ValidationError("frame_phase must hold one finite value per spin", "frame_phase")
        self._frame = frame_phase

    @classmethod
    def from_terms(cls, terms: Iterable[OperatorTerm], n: int) -> "SpinState":
        m = np.zeros((2**n, 2**n), dtype=complex)
        for t in terms:
            m += matrix_of_term(t, n)
        return cls(m)

    @classmethod
    def zero(cls, n: int) -> "SpinState":
        return cls(np.zeros((2**n, 2**n), dtype=complex))

    @property
    def frame_phase(self) -> np.ndarray:
        f = np.mod(self._frame, 360.0)
        return np.where(f == 360.0, 0.0, f)

    def shift_frame(self, spin: int, degrees: float):
        self._frame[spin] += degrees

    def copy(self) -> "SpinState":
        return SpinState(self.matrix.copy(), self._frame.copy())

    def with_matrix(self, matrix) -> "SpinState":
        return SpinState(matrix, self._frame.copy())

    def aligned(self) -> "SpinState":
        """State with all deferred frame rotations applied explicitly, frames reset."""
        u = frame_alignment(self._frame, self.n)
        return SpinState(u @ self.matrix @ u.conj().T)

    def is_hermitian(self, tol: float = ALGEBRA_TOL) -> bool:
        return bool(np.max(np.abs(self.matrix - self.matrix.conj().T), initial=0.0) <= tol)

    def __add__(self, other: "SpinState") -> "SpinState":
        return SpinState(self.matrix + other.matrix, self._frame.copy())

    def __repr__(self):
        return f"SpinState(n={self.n}, terms={len(decompose(self))})"


def _check_spin(k: int, n: int):
    if not 0 <= k < n:
        raise IndexError(f"spin index {k} out of range for {n} spins")


def embed(op: np.ndarray, spin: int, n: int) -> np.ndarray:
    """Single-spin operator on ``spin`` tensored with identity elsewhere."""
    _check_spin(spin, n)
    return np.kron(np.kron(np.eye(2**spin), op), np.eye(2 ** (n - spin - 1)))


def matrix_of_term(term: OperatorTerm, n: int) -> np.ndarray:
    fmap = term.factor_map
    for k in fmap:
        _check_spin(k, n)
    out = np.array([[term.coeff]], dtype=complex)
    for k in range(n):
        out = np.kron(out, SPIN_OPS[fmap[k]] if k in fmap else ID2)
    return out


def basis_coefficients(matrix: np.ndarray) -> np.ndarray:
    """Coefficient tensor of shape ``(4,)*n`` over the bare product basis.

    Axis order per spin is (identity, x, y, z). Uses the trace inner product
    ``c_B = tr(rho B) / tr(B B)`` one spin at a time.
    """
    dim = matrix.shape[0]
    n = dim.bit_length() - 1
    t = np.asarray(matrix, dtype=complex).reshape([2] * (2 * n))
    # interleave row/column indices -> (i1, j1, i2, j2, ...)
    order = [ax for k in range(n) for ax in (k, n + k)]
    t = t.transpose(order).reshape([4] * n)
    for k in range(n):
        t = np.moveaxis(np.tensordot(_PROJECT, t, axes=([1], [k])), 0, k)
    return t


def decompose(state, cutoff: float = COEFF_CUTOFF) -> list[OperatorTerm]:
    """Expand a Hermitian matrix (or :class:`SpinState`) over product operators."""
    matrix = state.matrix if isinstance(state, SpinState) else np.asarray(state)
    if np.max(np.abs(matrix - matrix.conj().T), initial=0.0) > ALGEBRA_TOL:
        raise ValidationError("matrix is not Hermitian", path="matrix")
    coeffs = basis_coefficients(matrix)
    if np.max(np.abs(coeffs.imag), initial=0.0) > ALGEBRA_TOL:
        raise NumericalConsistencyError("complex coefficient in Hermitian expansion")
    terms = []
    for idx in zip(*np.nonzero(np.abs(coeffs.real) > cutoff)):
        factors = tuple((k, _LABELS[a]) for k, a in enumerate(idx) if a)
        terms.append(OperatorTerm(float(coeffs.real[idx]), factors))
    terms.sort(key=lambda t: (t.order, t.factors))
    return terms


def term_dict(state) -> dict[tuple, float]:
    """``{factors: coeff}`` view of :func:`decompose`, handy for comparisons."""
    return {t.factors: t.coeff for t in decompose(state)}


def _rotation_2x2(theta: float, phi: float) -> np.ndarray:
    n_dot_sigma = 2 * (np.cos(phi) * IX + np.sin(phi) * IY)
    return np.cos(theta / 2) * ID2 - 1j * np.sin(theta / 2) * n_dot_sigma


def rotation_propagator(spins, angle: float, phase: float, n: int) -> np.ndarray:
    """``prod_k exp(-i theta (I_kx cos phi + I_ky sin phi))``; angles in degrees.

    ``spins=None`` addresses every spin.
    """
    spins = range(n) if spins is None else spins
    spins = set(spins)
    for k in spins:
        _check_spin(k, n)
    r = _rotation_2x2(np.deg2rad(angle), np.deg2rad(phase))
    out = np.array([[1.0 + 0j]])
    for k in range(n):
        out = np.kron(out, r if k in spins else ID2)
    return out


def z_rotation(spin: int, angle: float, n: int) -> np.ndarray:
    """``exp(-i angle I_kz)``, angle in degrees (diagonal)."""
    _check_spin(spin, n)
    half = np.deg2rad(angle) / 2
    bits = (np.arange(2**n) >> (n - 1 - spin)) & 1
    return np.diag(np.exp(np.where(bits, 1j * half, -1j * half)))


def frame_alignment(frames, n: int) -> np.ndarray:
    """Unitary applying the rotations deferred into frame phases (degrees)."""
    u = np.eye(2**n, dtype=complex)
    for k, f in enumerate(frames):
        if f % 360:
            u = z_rotation(k, -f, n) @ u
    return u


def _zz_diagonal(k: int, l: int, n: int) -> np.ndarray:
    idx = np.arange(2**n)
    sk = 0.5 - ((idx >> (n - 1 - k)) & 1)
    sl = 0.5 - ((idx >> (n - 1 - l)) & 1)
    return sk * sl


def coupling_propagator(k: int, l: int, J: float, t: float, n: int) -> np.ndarray:
    """``exp(-i 2 pi J t I_kz I_lz)`` for J in Hz and t in seconds."""
    _check_spin(k, n)
    _check_spin(l, n)
    if k == l:
        raise ValidationError("coupling needs two distinct spins", path="l")
    if t < 0:
        raise ValidationError("evolution time must be non-negative", path="t")
    if not np.isfinite(J):
        raise ValidationError("coupling constant must be finite", path="J")
    return np.diag(np.exp(-2j * np.pi * J * t * _zz_diagonal(k, l, n)))


def coupling_diagonal(pairs: Iterable[tuple[int, int, float]], t: float, n: int) -> np.ndarray:
    """Diagonal of the product of coupling propagators for ``(k, l, J)`` triples."""
    phase = np.zeros(2**n)
    for k, l, J in pairs:
        phase += 2 * np.pi * J * t * _zz_diagonal(k, l, n)
    return np.exp(-1j * phase)


def permutation_propagator(f: BooleanFunction, n: int) -> np.ndarray:
    """``|x, x_n> -> |x, x_n XOR f(x)>`` with the last spin as the value bit."""
    if f.arity != n - 1:
        raise ValidationError(f"function arity {f.arity} does not match {n - 1} inputs", "f")
    dim = 2**n
    u = np.zeros((dim, dim))
    for src in range(dim):
        u[src ^ f(src >> 1), src] = 1.0
    return u


def cnot_matrix(control: int, target: int, n: int) -> np.ndarray:
    """Canonical computational-basis CNOT."""
    _check_spin(control, n)
    _check_spin(target, n)
    dim = 2**n
    cbit, tbit = 1 << (n - 1 - control), 1 << (n - 1 - target)
    u = np.zeros((dim, dim))
    for src in range(dim):
        u[src ^ tbit if src & cbit else src, src] = 1.0
    return u


def swap_matrix(a: int, b: int, n: int) -> np.ndarray:
    dim = 2**n
    abit, bbit = 1 << (n - 1 - a), 1 << (n - 1 - b)
    u = np.zeros((dim, dim))
    for src in range(dim):
        va, vb = bool(src & abit), bool(src & bbit)
        dst = src
        if va != vb:
            dst = src ^ abit ^ bbit
        u[dst, src] = 1.0
    return u


def is_unitary(u: np.ndarray, tol: float = 1e-10) -> bool:
    return bool(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) < tol)


def conjugate(state: SpinState, u: np.ndarray) -> SpinState:
    """``U rho U^dagger`` (frame phases carried over)."""
    if u.shape != state.matrix.shape:
        raise ValidationError(
            f"propagator shape {u.shape} does not match state {state.matrix.shape}", "U"
        )
    return state.with_matrix(u @ state.matrix @ u.conj().T)


def expectation(state, term: OperatorTerm) -> float:
    """Coefficient of ``term`` in the state's expansion, in units of ``term``.

    ``tr(rho M) / tr(M M)`` with ``M`` the term's matrix, so a state holding
    ``c`` times a basis element gives ``c`` for that element.
    """
    matrix = state.matrix if isinstance(state, SpinState) else np.asarray(state)
    n = matrix.shape[0].bit_length() - 1
    m = matrix_of_term(term, n)
    value = np.trace(matrix @ m) / np.trace(m @ m).real
    if abs(value.imag) > ALGEBRA_TOL:
        raise NumericalConsistencyError(f"expectation has imaginary part {value.imag:.3g}")
    return float(value.real)


_TOKEN = re.compile(r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)"
                    r"|(?P<op>I)(?P<spin>\d+)(?P<axis>[xyz])|(?P<sym>[-+*]))")


def _raise_bad_token(text: str, pos: int):
    while pos < len(text) and text[pos].isspace():
        pos += 1
    op = re.compile(r"I(\d*)").match(text, pos)
    if op:
        end = op.end()
        got = repr(text[end]) if end < len(text) else "end of input"
        if not op.group(1):
            raise ParseError(f"expected a spin number after 'I', got {got}", 1, end + 1)
        raise ParseError(f"expected axis x, y or z, got {got}", 1, end + 1)
    raise ParseError(f"unexpected character {text[pos]!r}", 1, pos + 1)


def parse_term_expression(text: str) -> list[OperatorTerm]:
    """Parse ``2*I1x*I2z - I3z`` style sums (1-based spin numbers)."""
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            _raise_bad_token(text, pos)
        col = m.start() + len(m.group(0)) - len(m.group(0).lstrip()) + 1
        if m.group("num"):
            tokens.append(("num", float(m.group("num")), col))
        elif m.group("op"):
            spin = int(m.group("spin"))
            if spin < 1:
                raise ParseError("spin numbers start at 1", 1, col)
            tokens.append(("op", (spin - 1, m.group("axis")), col))
        else:
            tokens.append((m.group("sym"), None, col))
        pos = m.end()
    if not tokens:
        raise ParseError("empty term expression", 1, 1)

    terms = []
    i = 0
    sign = 1.0
    while i < len(tokens):
        coeff, factors, expect_factor = sign, {}, True
        while i < len(tokens):
            kind, val, col = tokens[i]
            if expect_factor:
                if kind in "+-":
                    coeff *= -1.0 if kind == "-" else 1.0
                elif kind == "num":
                    coeff *= val
                    expect_factor = False
                elif kind == "op":
                    if val[0] in factors:
                        raise ParseError(f"spin {val[0] + 1} appears twice in one product", 1, col)
                    factors[val[0]] = val[1]
                    expect_factor = False
                else:
                    raise ParseError(f"unexpected {kind!r}", 1, col)
                i += 1
            elif kind == "*":
                expect_factor = True
                i += 1
            else:
                break
        if expect_factor:
            col = tokens[i - 1][2] if i else 1
            raise ParseError("expression ends inside a product", 1, col)
        terms.append(OperatorTerm.of(coeff, factors))
        if i < len(tokens):
            kind, _, col = tokens[i]
            if kind not in "+-":
                raise ParseError(f"expected '+' or '-', got {kind!r}", 1, col)
            sign = -1.0 if kind == "-" else 1.0
            i += 1
            if i == len(tokens):
                raise ParseError("dangling operator", 1, col)
    return terms
