"""Command-line front end.

Exit codes: 0 success, 1 simulation or fidelity failure, 2 usage or
validation error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .algebra import BooleanFunction, SpinState, parse_term_expression
from .compiler import compile_balanced_chain, compile_cnot, compile_swap, route_cnot
from .constants import DEFAULT_PHASE_TOL, DEFAULT_THRESHOLD
from .dj import F0, FB, classify, run_dj
from .errors import (IncompleteTableError, ParseError, PlanningError, RoutingError, SpinforgeError,
                     UnsupportedError, ValidationError)
from .sequence import render_sequence
from .simulator import SimOptions, stick_spectrum
from .system import DEFAULT_SYSTEM, SYSTEM_ENV_VAR, bundled_system, load_system_file

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
# bumped whenever a CSV column or JSON key changes meaning; see docs/formats.md
FORMAT_VERSION = 1
USAGE_ERRORS = (ValidationError, ParseError, RoutingError, UnsupportedError, IncompleteTableError,
                FileNotFoundError, IsADirectoryError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n"


def _resolve_system(arg):
    """Return ``(system, label)`` from ``--system``, the env var, or the bundled file."""
    path = arg or os.environ.get(SYSTEM_ENV_VAR)
    if path:
        return load_system_file(path), str(path)
    return bundled_system(DEFAULT_SYSTEM), f"bundled:{DEFAULT_SYSTEM}"


def _spin_arg(text: str, n: int, what: str = "spin") -> int:
    try:
        k = int(text)
    except ValueError:
        raise ValidationError(f"{what} must be an integer, got {text!r}", what) from None
    if not 1 <= k <= n:
        raise ValidationError(f"{what} {k} out of range 1..{n}", what)
    return k - 1


def _spin_list(text: str | None, n: int) -> list[int]:
    if not text:
        return []
    return sorted({_spin_arg(t.strip(), n, "decouple") for t in text.split(",") if t.strip()})


class _Outputs:
    """Collects files so the manifest can list them; writes nothing without ``--out``."""

    def __init__(self, out: str | None):
        self.dir = Path(out) if out else None
        self.files: list[str] = []
        if self.dir is not None:
            if self.dir.exists() and not self.dir.is_dir():
                raise ValidationError(f"{self.dir} is not a directory", "out")
            self.dir.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str):
        if self.dir is None:
            return
        (self.dir / name).write_text(text, encoding="utf-8")
        self.files.append(name)

    def manifest(self, args, system_label: str, command: list[str]):
        if self.dir is None:
            return
        options = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out")}
        doc = {
            "format_version": FORMAT_VERSION,
            "version": __version__,
            "command": command,
            "system": system_label,
            "options": options,
            "seed": args.seed,
            "outputs": sorted(self.files + ["manifest.json"]),
        }
        (self.dir / "manifest.json").write_text(_dump_json(doc), encoding="utf-8")


# ------------------------------------------------------------------ compile


def cmd_compile(args, out: _Outputs) -> int:
    system, label = _resolve_system(args.system)
    n = system.n
    gate = args.gate
    spins = args.spins
    if gate in ("cnot", "swap", "route"):
        if len(spins) != 2:
            raise ValidationError(f"{gate} needs two spin indices", "spins")
        k, l = (_spin_arg(s, n) for s in spins)
    elif spins:
        raise ValidationError("balanced-chain takes no spin indices", "spins")
    kw = {"rounding": args.rounding, "max_intervals": args.max_intervals}
    if args.phase_tol is not None:
        kw["phase_tol"] = args.phase_tol
    try:
        if gate == "cnot":
            report = compile_cnot(system, k, l, **kw)
        elif gate == "swap":
            report = compile_swap(system, k, l, **kw)
        elif gate == "route":
            report = route_cnot(system, k, l, **kw)
        else:
            report = compile_balanced_chain(system, **kw)
    except PlanningError as exc:
        out.write("report.json", _dump_json({"format_version": FORMAT_VERSION,
                                             "gate": gate, "error": str(exc),
                                             "couplings": list(exc.couplings)}))
        out.manifest(args, label, ["compile", gate, *spins])
        raise
    doc = report.to_dict()
    doc["format_version"] = FORMAT_VERSION
    doc["min_fidelity"] = args.min_fidelity
    doc["passed"] = report.fidelity >= args.min_fidelity
    stem = report.name.lower()
    out.write(f"{stem}.seq", render_sequence(report.sequence))
    out.write("report.json", _dump_json(doc))
    out.manifest(args, label, ["compile", gate, *spins])
    print(f"{report.name}: fidelity {report.fidelity:.12f}, duration {report.duration * 1e3:.5f} ms"
          + (f" ({report.grid_units} grid units)" if report.grid_units is not None else ""))
    print(f"pulses: {report.pulses_before} before simplification, {report.pulses_after} after")
    for g, (a, b), J, ph in report.residual:
        print(f"residual J{a + 1}{b + 1} = {J:g} Hz in {g}: {ph:.6f} rad")
    if args.print_sequence or out.dir is None:
        sys.stdout.write(render_sequence(report.sequence))
    if not doc["passed"]:
        print(f"fidelity below {args.min_fidelity}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


# ------------------------------------------------------------------ run-dj


def parse_truth_table(text: str, arity: int = 4) -> BooleanFunction:
    """Truth table as ``2^arity`` binary digits, ``x1`` most significant.

    Whitespace, ``_`` separators and ``#`` comments are ignored.
    """
    digits = []
    for lineno, line in enumerate(text.splitlines(), 1):
        for col, ch in enumerate(line, 1):
            if ch == "#":
                break
            if ch in "01":
                digits.append((ch, lineno, col))
            elif not (ch.isspace() or ch == "_"):
                raise ParseError(f"unexpected character {ch!r} in truth table", lineno, col)
    need = 2**arity
    if len(digits) != need:
        if len(digits) > need:
            _, line, col = digits[need]
            raise ParseError(f"truth table has more than {need} entries", line, col)
        last = text.splitlines()
        raise ParseError(f"truth table has {len(digits)} entries, expected {need}",
                         max(len(last), 1), (len(last[-1]) + 1) if last else 1)
    return BooleanFunction(arity, [int(d) for d, _, _ in digits])


def _function_arg(args, n: int) -> tuple[BooleanFunction, str]:
    if args.truth_table and args.function:
        raise ValidationError("give either a function name or --truth-table, not both", "function")
    if args.truth_table:
        text = Path(args.truth_table).read_text()
        return parse_truth_table(text, n - 1), str(args.truth_table)
    name = args.function or "f0"
    if name == "f0":
        return BooleanFunction.constant(n - 1, 0), name
    if name == "fb":
        return BooleanFunction.from_callable(n - 1, lambda *x: sum(x) % 2), name
    raise ValidationError(f"unknown function {name!r} (use f0, fb or --truth-table)", "function")


def _spectra_csv(table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["set", "spin", "offset_hz", "real", "imag"])
    for (s, spin), sticks in sorted(table.spectra.items()):
        for st in sticks:
            w.writerow([s, spin + 1, f"{st.offset:.9g}", f"{st.amplitude.real:.12g}",
                        f"{st.amplitude.imag:.12g}"])
    return buf.getvalue()


def cmd_run_dj(args, out: _Outputs) -> int:
    system, label = _resolve_system(args.system)
    f, fname = _function_arg(args, system.n)
    if args.mode == "compiled" and system.n == 5 and f not in (F0, FB):
        raise UnsupportedError("compiled mode supports only f0 and fb")
    opts = SimOptions(relaxation=args.relaxation)
    table = run_dj(system, f, args.mode, opts, full_preparation=args.full_preparation,
                   phase_cycle=args.phase_cycle, spectra=True)
    verdict = classify(table, args.threshold, system.n)
    doc = verdict.to_dict()
    doc.update({
        "format_version": FORMAT_VERSION,
        "function": fname,
        "truth_table": "".join(map(str, f.table)),
        "mode": args.mode,
        "relaxation": args.relaxation,
        "threshold": args.threshold,
        "evaluations": table.total_evaluations,
        "classical_worst_case": 2 ** (f.arity - 1) + 1,
    })
    out.write("signals.csv", table.to_csv())
    out.write("verdict.json", _dump_json(doc))
    out.write("spectra.csv", _spectra_csv(table))
    out.manifest(args, label, ["run-dj", fname])
    for s, amps in sorted(table.averaged().items()):
        line = "  ".join(f"s{k + 1}={v:+.4f}" for k, v in sorted(amps.items()))
        print(f"set {s}: {line}")
    print(f"verdict: {verdict.label}"
          + (f" (spins {', '.join(str(k + 1) for k in verdict.deciding_spins)})"
             if verdict.deciding_spins else ""))
    return EXIT_OK


# ------------------------------------------------------------------ spectrum


def cmd_spectrum(args, out: _Outputs) -> int:
    system, label = _resolve_system(args.system)
    n = system.n
    if (args.expr is None) == (args.state_file is None):
        raise ValidationError("give exactly one of a term expression or --state-file", "state")
    if args.expr is not None:
        terms = parse_term_expression(args.expr)
        if any(k >= n for t in terms for k in t.spins):
            raise ValidationError(f"expression addresses spins outside 1..{n}", "expr")
        state = SpinState.from_terms(terms, n)
    else:
        m = np.load(args.state_file, allow_pickle=False)
        if m.shape != (2**n, 2**n):
            raise ValidationError(f"state matrix must be {2**n}x{2**n}, got {m.shape}", "state_file")
        state = SpinState(m)
    spin = _spin_arg(args.spin, n)
    dec = _spin_list(args.decouple, n)
    if spin in dec:
        raise ValidationError("observed spin cannot be decoupled", "decouple")
    sticks = stick_spectrum(state, spin, dec, system)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["offset_hz", "real", "imag"])
    for st in sticks:
        w.writerow([f"{st.offset:.9g}", f"{st.amplitude.real:.12g}", f"{st.amplitude.imag:.12g}"])
    sys.stdout.write(buf.getvalue())
    out.write("spectrum.csv", buf.getvalue())
    out.manifest(args, label, ["spectrum", args.expr or str(args.state_file)])
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--system", help=f"spin-system YAML file (default: ${SYSTEM_ENV_VAR} "
                                         "or the bundled glycine-fluoride system)")
    common.add_argument("--out", help="directory for output files")
    common.add_argument("--seed", type=int, default=0, help="recorded in the manifest")

    parser = _Parser(prog="spinforge", description="Compile and simulate NMR quantum-computing experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("compile", parents=[common], help="compile a gate to a pulse sequence")
    p.add_argument("gate", choices=["cnot", "swap", "route", "balanced-chain"])
    p.add_argument("spins", nargs="*", help="1-based control and target spins")
    p.add_argument("--phase-tol", type=float, default=None,
                   help=f"residual coupling phase budget in rad (CNOT default {DEFAULT_PHASE_TOL})")
    p.add_argument("--rounding", choices=["nearest", "up"], default="nearest")
    p.add_argument("--max-intervals", type=int, choices=[1, 2, 4], default=4)
    p.add_argument("--min-fidelity", type=float, default=0.9999)
    p.add_argument("--print-sequence", action="store_true")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("run-dj", parents=[common], help="run the Deutsch-Jozsa experiment sets")
    p.add_argument("function", nargs="?", choices=["f0", "fb"], help="built-in function")
    p.add_argument("--truth-table", help="file with 16 binary digits, x1 most significant")
    p.add_argument("--mode", choices=["ideal", "compiled"], default="ideal")
    p.add_argument("--relaxation", action="store_true", help="apply T2 damping during delays")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--full-preparation", action="store_true",
                   help="prepare each initial term from thermal magnetization")
    p.add_argument("--phase-cycle", action="store_true", help="average over the four-step phase cycle")
    p.set_defaults(func=cmd_run_dj)

    p = sub.add_parser("spectrum", parents=[common], help="stick spectrum of a state")
    p.add_argument("expr", nargs="?", help='product operator expression, e.g. "2*I1x*I2z"')
    p.add_argument("--state-file", help=".npy file holding a density matrix")
    p.add_argument("--spin", required=True, help="observed spin (1-based)")
    p.add_argument("--decouple", help="comma-separated spins to decouple")
    p.set_defaults(func=cmd_spectrum)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    try:
        out = _Outputs(args.out)
        return args.func(args, out)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SpinforgeError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
