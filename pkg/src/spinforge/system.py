"""Spin-system configuration: frequencies, couplings, T2 values, channels."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import UnsupportedConfigurationError, ValidationError

DEFAULT_SYSTEM = "glycine_fluoride"
SYSTEM_ENV_VAR = "SPINFORGE_SYSTEM"


@dataclass(frozen=True, eq=False)
class SpinSystem:
    """Validated spin network. All indices are 0-based."""

    labels: tuple[str, ...]
    nu: tuple[float, ...]  # Hz
    delta: tuple[float, ...]  # ppm, informational only
    J: np.ndarray  # Hz, symmetric, zero diagonal
    T2: tuple[float, ...]  # seconds
    channels: tuple[tuple[int, ...], ...]
    channel_names: tuple[str, ...]
    chain: tuple[int, ...]
    name: str = "system"
    detection_decouple: dict = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        return len(self.labels)

    def key(self) -> tuple:
        """Hashable identity covering every field."""
        return (
            self.name, self.labels, self.nu, self.delta, self.T2, self.channels,
            self.channel_names, self.chain, tuple(map(tuple, self.J.tolist())),
            tuple(sorted(self.detection_decouple.items())),
        )

    def __eq__(self, other):
        return isinstance(other, SpinSystem) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def coupling(self, k: int, l: int) -> float:
        return float(self.J[k, l])

    def nonzero_couplings(self) -> list[tuple[int, int, float]]:
        return [(k, l, J) for k, l, J in coupling_graph(self, 0.0)]

    def chain_position(self, spin: int) -> int:
        return self.chain.index(spin)

    def adjacent(self, k: int, l: int) -> bool:
        if k not in self.chain or l not in self.chain:
            return False
        return abs(self.chain.index(k) - self.chain.index(l)) == 1

    def decoupled_for(self, spin: int) -> tuple[int, ...]:
        return tuple(self.detection_decouple.get(spin, ()))


def _err(msg, path):
    return ValidationError(msg, path=path)


def system_from_dict(doc: dict) -> SpinSystem:
    if not isinstance(doc, dict):
        raise _err("config must be a mapping", "<root>")
    spins = doc.get("spins")
    if not isinstance(spins, list) or not spins:
        raise _err("missing or empty spin list", "spins")
    n = len(spins)
    labels, nu, delta, t2, chan = [], [], [], [], []
    for i, s in enumerate(spins):
        path = f"spins[{i}]"
        if not isinstance(s, dict):
            raise _err("spin entry must be a mapping", path)
        for key in ("nu_hz", "t2_ms"):
            if key not in s:
                raise _err("missing value", f"{path}.{key}")
        try:
            nu.append(float(s["nu_hz"]))
            t2.append(float(s["t2_ms"]) * 1e-3)
            delta.append(float(s.get("delta_ppm", 0.0)))
        except (TypeError, ValueError) as exc:
            raise _err(f"not a number ({exc})", path) from None
        if not t2[-1] > 0 or not math.isfinite(t2[-1]):
            raise _err("T2 must be positive", f"{path}.t2_ms")
        if not math.isfinite(nu[-1]):
            raise _err("frequency must be finite", f"{path}.nu_hz")
        labels.append(str(s.get("label", f"S{i + 1}")))
        chan.append(str(s.get("channel", labels[-1])))

    raw_j = doc.get("j_coupling_hz")
    if raw_j is None:
        raise _err("missing coupling matrix", "j_coupling_hz")
    try:
        J = np.array(raw_j, dtype=float)
    except (TypeError, ValueError):
        raise _err("coupling matrix must be numeric and rectangular", "j_coupling_hz") from None
    if J.shape != (n, n):
        raise _err(f"expected {n}x{n} matrix, got shape {J.shape}", "j_coupling_hz")
    if not np.all(np.isfinite(J)):
        raise _err("couplings must be finite", "j_coupling_hz")
    for k in range(n):
        if J[k, k] != 0:
            raise _err("diagonal must be zero", f"j_coupling_hz[{k}][{k}]")
        for l in range(k + 1, n):
            if J[k, l] != J[l, k]:
                raise _err(
                    f"asymmetric coupling ({J[k, l]} vs {J[l, k]})", f"j_coupling_hz[{k}][{l}]"
                )
    J.setflags(write=False)

    names = list(dict.fromkeys(chan))
    groups = tuple(tuple(i for i in range(n) if chan[i] == c) for c in names)
    for c, g in zip(names, groups):
        freqs = [nu[i] for i in g]
        if len(set(freqs)) != len(freqs):
            raise _err(f"duplicate frequency on channel {c!r}", f"spins[{g[1]}].nu_hz")

    raw_chain = doc.get("chain", list(range(1, n + 1)))
    try:
        chain = tuple(int(c) - 1 for c in raw_chain)
    except (TypeError, ValueError):
        raise _err("chain must list spin numbers", "chain") from None
    if sorted(chain) != list(range(n)):
        raise _err("chain must visit every spin exactly once", "chain")
    for a, b in zip(chain, chain[1:]):
        if J[a, b] == 0:
            raise _err(f"chain neighbours {a + 1} and {b + 1} are not coupled", "chain")

    decouple = {}
    for key, val in (doc.get("detection_decouple") or {}).items():
        try:
            spin = int(key) - 1
            others = tuple(int(v) - 1 for v in val)
        except (TypeError, ValueError):
            raise _err("entries must be spin numbers", f"detection_decouple.{key}") from None
        if not 0 <= spin < n or any(not 0 <= o < n or o == spin for o in others):
            raise _err("spin number out of range", f"detection_decouple.{key}")
        decouple[spin] = others

    return SpinSystem(
        labels=tuple(labels),
        nu=tuple(nu),
        delta=tuple(delta),
        J=J,
        T2=tuple(t2),
        channels=groups,
        channel_names=tuple(names),
        chain=chain,
        name=str(doc.get("name", "system")),
        detection_decouple=decouple,
    )


def load_system(text: str) -> SpinSystem:
    """Parse and validate a YAML spin-system document."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValidationError(f"malformed config: {exc}", path="<document>") from None
    return system_from_dict(doc)


def load_system_file(path) -> SpinSystem:
    return load_system(Path(path).read_text())


def default_system() -> SpinSystem:
    """The bundled system, or the file named by ``$SPINFORGE_SYSTEM``."""
    override = os.environ.get(SYSTEM_ENV_VAR)
    if override:
        return load_system_file(override)
    return bundled_system(DEFAULT_SYSTEM)


def bundled_system(name: str = DEFAULT_SYSTEM) -> SpinSystem:
    text = resources.files("spinforge.data").joinpath(f"{name}.yaml").read_text()
    return load_system(text)


def system_to_dict(system: SpinSystem) -> dict:
    chan_of = {i: system.channel_names[g] for g, grp in enumerate(system.channels) for i in grp}
    doc = {
        "name": system.name,
        "spins": [
            {
                "label": system.labels[i],
                "nu_hz": system.nu[i],
                "delta_ppm": system.delta[i],
                "t2_ms": system.T2[i] * 1e3,
                "channel": chan_of[i],
            }
            for i in range(system.n)
        ],
        "j_coupling_hz": [[float(v) for v in row] for row in system.J],
        "chain": [c + 1 for c in system.chain],
    }
    if system.detection_decouple:
        doc["detection_decouple"] = {
            k + 1: [v + 1 for v in vals] for k, vals in sorted(system.detection_decouple.items())
        }
    return doc


def serialize(system: SpinSystem) -> str:
    return yaml.safe_dump(system_to_dict(system), sort_keys=False)


def frame_grid(system: SpinSystem) -> float:
    """Gate-duration grid in seconds: ``1/|nu_a - nu_b|`` for the homonuclear pair.

    Returns ``math.inf`` when every channel drives a single spin.
    """
    shared = [g for g in system.channels if len(g) >= 2]
    if not shared:
        return math.inf
    if len(shared) > 1 or len(shared[0]) > 2:
        raise UnsupportedConfigurationError(
            "frame grid supports one channel with exactly two spins", path="channels"
        )
    a, b = shared[0]
    return 1.0 / abs(system.nu[a] - system.nu[b])


def coupling_graph(system: SpinSystem, threshold: float = 0.0) -> list[tuple[int, int, float]]:
    """Edges ``(k, l, J)`` with ``k < l`` and ``|J| > threshold``."""
    if threshold < 0:
        raise ValidationError("threshold must be non-negative", path="threshold")
    n = system.n
    return [
        (k, l, float(system.J[k, l]))
        for k in range(n)
        for l in range(k + 1, n)
        if abs(system.J[k, l]) > threshold
    ]
