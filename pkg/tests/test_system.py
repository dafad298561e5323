import math

import numpy as np
import pytest
import yaml

from spinforge.errors import UnsupportedConfigurationError, ValidationError
from spinforge.system import (SYSTEM_ENV_VAR, coupling_graph, default_system, frame_grid,
                              load_system, serialize, system_from_dict)

TWO_SPIN = """
spins:
  - {label: A, nu_hz: 500.0e6, t2_ms: 100, channel: 1H}
  - {label: B, nu_hz: 125.0e6, t2_ms: 100, channel: 13C}
j_coupling_hz: [[0, 10], [10, 0]]
"""


def edit(doc_text, fn):
    doc = yaml.safe_load(doc_text)
    fn(doc)
    return doc


def test_bundled_couplings(system):
    J = system.J
    assert (J[0, 1], J[1, 2], J[2, 3], J[3, 4], J[0, 2], J[2, 4]) == (94.1, 13.5, 65.2, 366.0, 2.7, 67.7)
    assert np.array_equal(J, J.T)
    assert system.chain == (0, 1, 2, 3, 4)
    assert system.labels == ("H", "N", "Calpha", "Cprime", "F")
    assert system.T2 == pytest.approx((0.25, 0.49, 0.45, 0.59, 0.26))
    assert system.nu[0] == 400133001.6


def test_coupling_matrix_is_read_only(system):
    with pytest.raises(ValueError):
        system.J[0, 1] = 1.0


def test_chain_links_are_graph_edges(system):
    edges = {(k, l) for k, l, _ in coupling_graph(system, 0)}
    for a, b in zip(system.chain, system.chain[1:]):
        assert (min(a, b), max(a, b)) in edges


def test_coupling_graph_thresholds(system):
    pairs = lambda th: {(k + 1, l + 1) for k, l, _ in coupling_graph(system, th)}
    assert pairs(0) == {(1, 2), (2, 3), (3, 4), (4, 5), (1, 3), (3, 5)}
    assert pairs(5) == {(1, 2), (2, 3), (3, 4), (4, 5), (3, 5)}
    assert pairs(1000) == set()
    with pytest.raises(ValidationError):
        coupling_graph(system, -1)


def test_frame_grid_bundled(system):
    grid = frame_grid(system)
    assert grid == pytest.approx(1 / abs(system.nu[2] - system.nu[3]))
    assert abs(grid - 81.75e-6) < 0.01e-6


def test_frame_grid_variants():
    assert math.isinf(frame_grid(load_system(TWO_SPIN)))
    doc = edit(TWO_SPIN, lambda d: d["spins"][1].update(channel="1H", nu_hz=500.01e6))
    assert frame_grid(system_from_dict(doc)) == pytest.approx(100e-6)


def test_frame_grid_rejects_three_on_one_channel():
    doc = {
        "spins": [{"nu_hz": 100e6 + i * 1e3, "t2_ms": 100, "channel": "13C"} for i in range(3)],
        "j_coupling_hz": [[0, 30, 0], [30, 0, 30], [0, 30, 0]],
    }
    with pytest.raises(UnsupportedConfigurationError):
        frame_grid(system_from_dict(doc))


def test_two_spin_system_is_valid():
    s = load_system(TWO_SPIN)
    assert s.n == 2 and s.J[0, 1] == 10
    assert s.chain == (0, 1)


@pytest.mark.parametrize("mutate,path", [
    (lambda d: d["j_coupling_hz"][0].__setitem__(1, 11), "j_coupling_hz[0][1]"),
    (lambda d: d["spins"][1].__setitem__("t2_ms", 0), "spins[1].t2_ms"),
    (lambda d: d["spins"][1].__setitem__("t2_ms", -5), "spins[1].t2_ms"),
    (lambda d: d["spins"][0].pop("nu_hz"), "spins[0].nu_hz"),
    (lambda d: d["j_coupling_hz"][1].__setitem__(1, 3), "j_coupling_hz[1][1]"),
    (lambda d: d.__setitem__("chain", [1, 1]), "chain"),
    (lambda d: d.__setitem__("j_coupling_hz", [[0, 1]]), "j_coupling_hz"),
])
def test_validation_names_the_field(mutate, path):
    with pytest.raises(ValidationError) as info:
        system_from_dict(edit(TWO_SPIN, mutate))
    assert info.value.path == path


def test_duplicate_channel_frequency():
    doc = edit(TWO_SPIN, lambda d: d["spins"][1].update(channel="1H", nu_hz=500.0e6))
    with pytest.raises(ValidationError, match="duplicate frequency"):
        system_from_dict(doc)


def test_chain_requires_couplings():
    doc = edit(TWO_SPIN, lambda d: d.__setitem__("j_coupling_hz", [[0, 0], [0, 0]]))
    with pytest.raises(ValidationError) as info:
        system_from_dict(doc)
    assert info.value.path == "chain"


def test_malformed_yaml():
    with pytest.raises(ValidationError):
        load_system("spins: [unclosed")
    with pytest.raises(ValidationError):
        load_system("- just a list")


def test_serialize_roundtrip(system):
    again = load_system(serialize(system))
    assert again == system
    assert again.labels == system.labels and again.nu == system.nu
    assert np.array_equal(again.J, system.J)
    assert again.detection_decouple == system.detection_decouple
    assert again.channels == system.channels


def test_env_var_overrides_default(tmp_path, monkeypatch):
    path = tmp_path / "two.yaml"
    path.write_text(TWO_SPIN)
    monkeypatch.setenv(SYSTEM_ENV_VAR, str(path))
    assert default_system().n == 2
    monkeypatch.delenv(SYSTEM_ENV_VAR)
    assert default_system().n == 5


def test_detection_decoupling(system):
    assert system.decoupled_for(4) == (2, 3)
    assert system.decoupled_for(0) == (1, 2)
    assert system.adjacent(3, 4) and not system.adjacent(0, 2)
