import numpy as np
import pytest

from reinsgame.errors import ConfigError
from reinsgame.experiments import FIGURES, SweepSpec, monotone_direction, run_sweep, write_sweep


def test_monotone_direction():
    v = [1.0, 2.0, 3.0]
    base = np.linspace(0, 1, 5)
    assert monotone_direction(v, [base, base + 1, base + 2]) == "increasing"
    assert monotone_direction(v[::-1], [base, base + 1, base + 2]) == "decreasing"
    assert monotone_direction(v, [base, base, base]) == "flat"
    assert monotone_direction(v, [base, base + 1, base - 1]) == "mixed"
    # touching curves still count as ordered
    assert monotone_direction([1, 2], [base, np.where(base > 0.5, base + 1, base)]) == "increasing"


def test_sweep_spec_validation():
    with pytest.raises(ConfigError):
        SweepSpec("r", ())
    with pytest.raises(ConfigError):
        SweepSpec("r", (0.1, float("inf")))
    with pytest.raises(ConfigError):
        SweepSpec("r", (0.1,), quantity="f")
    assert SweepSpec("insurers[0].psi3", (5,)).label(5.0) == "insurers[0].psi3=5"


def test_figure_table_covers_the_study():
    assert len(FIGURES) == 18
    asserted = [f for f in FIGURES if f[4] is not None]
    assert len(asserted) == 16
    assert {f[2] for f in FIGURES if f[4] is None} == {"insurers[1].psi3", "insurers[1].psi4"}


def test_sweep_parallel_matches_serial(spec):
    sw = SweepSpec("lambda_hat", (0.3, 0.9), "a", 0, 51)
    serial = run_sweep(spec, sw, workers=1)
    parallel = run_sweep(spec, sw, workers=2)
    assert np.array_equal(serial.curves, parallel.curves)
    assert serial.direction() == "increasing"


def test_peer_ambiguity_on_own_retention(spec):
    """Peer aversion to common-shock and idiosyncratic ambiguity push insurer 1 in opposite directions."""
    common = run_sweep(spec, SweepSpec("insurers[1].psi3", (3.0, 5.0, 7.0, 9.0), "a", 0, 101))
    idio = run_sweep(spec, SweepSpec("insurers[1].psi4", (5.0, 7.0, 9.0, 11.0), "a", 0, 101))
    assert common.direction() == "increasing"
    assert idio.direction() == "decreasing"


def test_write_sweep_outputs_are_reproducible(tmp_path, spec):
    res = run_sweep(spec, SweepSpec("insurers[0].theta", (0.2, 0.6), "Pi", 0, 21))
    first = write_sweep(res, tmp_path / "a", "s")
    second = write_sweep(res, tmp_path / "b", "s")
    for p, q in zip(first, second):
        assert p.read_bytes() == q.read_bytes()
    header = first[0].read_text().splitlines()[0]
    assert header == "t,insurers[0].theta=0.2,insurers[0].theta=0.6"
    assert not list((tmp_path / "a").glob("*.tmp"))
