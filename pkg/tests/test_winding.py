import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields

import numpy as np
import pytest

from oracles import dense_ladder_fr
from rdloc.errors import InvalidFaultError, InvalidGridError, InvalidModelError, SolverError
from rdloc.winding import (FaultSpec, FrequencyGrid, FrequencyResponse, WindingModel,
                           default_grid, default_model, dev_db, frequency_response, inject_fault,
                           ladder_system, linf_deviation_db, node_voltages, tridiagonal_residual)


def random_model(rng, n):
    return WindingModel(
        series_inductance=rng.uniform(0.5e-3, 5e-3, n),
        series_resistance=rng.uniform(0.0, 20.0, n),
        series_capacitance=rng.uniform(50e-12, 500e-12, n),
        ground_capacitance=rng.uniform(0.3e-9, 3e-9, n),
        measurement_resistance=rng.uniform(10.0, 10e3),
    )


def test_default_model_shape_and_invariants():
    m = default_model()
    assert m.n_sections == 4
    assert all(v > 0 for v in m.series_inductance + m.series_capacitance + m.ground_capacitance)
    assert all(v >= 0 for v in m.series_resistance)
    assert m.measurement_resistance > 0


def test_default_model_deterministic():
    a, b = default_model(), default_model()
    for f in fields(a):
        assert getattr(a, f.name) == getattr(b, f.name)


@pytest.mark.parametrize("kwargs", [
    dict(series_inductance=(0.0,)),
    dict(series_capacitance=(-1e-12,)),
    dict(ground_capacitance=(0.0,)),
    dict(series_resistance=(-1.0,)),
    dict(measurement_resistance=0.0),
])
def test_model_rejects_nonpositive_parameters(kwargs):
    base = dict(series_inductance=(1e-3,), series_resistance=(1.0,), series_capacitance=(1e-10,),
                ground_capacitance=(1e-9,), measurement_resistance=50.0)
    with pytest.raises(InvalidModelError):
        WindingModel(**{**base, **kwargs})


def test_model_rejects_ragged_sections():
    with pytest.raises(InvalidModelError):
        WindingModel((1e-3, 1e-3), (1.0,), (1e-10, 1e-10), (1e-9, 1e-9), 50.0)


def test_zero_depth_fault_is_identity():
    m = default_model()
    assert inject_fault(m, FaultSpec(2, 0.0)) == m


def test_fault_scales_only_one_ground_capacitance():
    m = default_model()
    f = inject_fault(m, FaultSpec(3, 12.0))
    assert f.ground_capacitance[2] == m.ground_capacitance[2] * 1.6
    for k in (0, 1, 3):
        assert f.ground_capacitance[k] == m.ground_capacitance[k]
    for name in ("series_inductance", "series_resistance", "series_capacitance"):
        assert getattr(f, name) == getattr(m, name)
    assert f.measurement_resistance == m.measurement_resistance


@pytest.mark.parametrize("section,depth", [(1, 3.0), (2, 6.0), (4, 12.0)])
def test_fault_changes_exactly_one_field(section, depth):
    m = default_model()
    f = inject_fault(m, FaultSpec(section, depth))
    changed = []
    for name in ("series_inductance", "series_resistance", "series_capacitance", "ground_capacitance"):
        a, b = getattr(m, name), getattr(f, name)
        changed += [(name, k) for k in range(m.n_sections) if a[k] != b[k]]
    assert changed == [("ground_capacitance", section - 1)]


@pytest.mark.parametrize("fault", [FaultSpec(5, 6.0), FaultSpec(0, 6.0), FaultSpec(2, -1.0),
                                   FaultSpec(2, float("nan"))])
def test_invalid_fault(fault):
    with pytest.raises(InvalidFaultError):
        inject_fault(default_model(), fault)


def test_grid_validation():
    with pytest.raises(InvalidGridError):
        FrequencyGrid([0.0, 1.0])
    with pytest.raises(InvalidGridError):
        FrequencyGrid([1.0, 1.0])
    with pytest.raises(InvalidGridError):
        FrequencyGrid([])
    g = default_grid()
    assert len(g) == 1000
    assert g.f_min == 20.0 and g.f_max == 2.5e6


def test_series_inductor_divider():
    # Cs and Cg negligible: |I_o/V_i| = 1/|R_m + jwL|
    rm = 50.0
    m = WindingModel((1e-3,), (0.0,), (1e-30,), (1e-30,), rm)
    f = 1e4 / (2 * math.pi)
    fr = frequency_response(m, FrequencyGrid([f]))
    expected = 1.0 / math.sqrt((1e4 * 1e-3) ** 2 + rm ** 2)
    assert fr.magnitude[0] == pytest.approx(expected, rel=1e-12)


def test_healthy_vs_zero_depth_curves_identical():
    g = default_grid()
    m = default_model()
    a = frequency_response(m, g)
    b = frequency_response(inject_fault(m, FaultSpec(3, 0.0)), g)
    assert np.array_equal(a.magnitude, b.magnitude)


def test_default_model_matches_dense_oracle_at_1khz():
    m = default_model()
    got = frequency_response(m, FrequencyGrid([1e3])).magnitude[0]
    want = dense_ladder_fr(m.series_inductance, m.series_resistance, m.series_capacitance,
                           m.ground_capacitance, m.measurement_resistance, 1e3)
    assert abs(got - want) / want < 1e-9


@pytest.mark.parametrize("n", range(1, 9))
def test_structured_solve_matches_dense_oracle(n):
    rng = np.random.default_rng(100 + n)
    m = random_model(rng, n)
    freqs = np.sort(10 ** rng.uniform(1.3, math.log10(2.5e6), 50))
    got = frequency_response(m, FrequencyGrid(freqs)).magnitude
    for f, g in zip(freqs, got):
        want = dense_ladder_fr(m.series_inductance, m.series_resistance, m.series_capacitance,
                               m.ground_capacitance, m.measurement_resistance, f)
        assert abs(g - want) / want < 1e-9


def test_residuals_small_on_default_grid():
    m = default_model()
    _, res = node_voltages(m, default_grid().points)
    assert np.all(res < 1e-9)


def test_residual_helper_detects_wrong_solution():
    m = default_model()
    lower, diag, upper, rhs = ladder_system(m, 2 * np.pi * np.array([1e3]))
    res = tridiagonal_residual(lower, diag, upper, rhs, np.zeros_like(rhs))
    assert res[0] == pytest.approx(1.0)


def test_solver_failure_names_frequency(monkeypatch):
    import rdloc.winding as w
    monkeypatch.setattr(w, "RESIDUAL_TOL", -1.0)
    with pytest.raises(SolverError) as exc:
        frequency_response(default_model(), FrequencyGrid([123.0, 456.0]))
    assert exc.value.frequency == 123.0


def test_response_deterministic_and_schedule_independent():
    m, g = default_model(), default_grid()
    whole = frequency_response(m, g).magnitude
    again = frequency_response(m, g).magnitude
    assert np.array_equal(whole, again)
    chunks = np.array_split(g.points, 7)
    with ThreadPoolExecutor(4) as pool:
        parts = list(pool.map(lambda c: frequency_response(m, FrequencyGrid(c)).magnitude, chunks[::-1]))
    assert np.array_equal(np.concatenate(parts[::-1]), whole)


def test_response_values_finite_nonnegative():
    fr = frequency_response(default_model(), default_grid())
    assert np.all(np.isfinite(fr.magnitude)) and np.all(fr.magnitude >= 0)
    with pytest.raises(InvalidGridError):
        FrequencyResponse(default_grid(), np.ones(3))


@pytest.mark.parametrize("section", [1, 2, 3, 4])
def test_fault_sensitivity_increases_with_depth(section):
    m, g = default_model(), default_grid()
    healthy = frequency_response(m, g)
    devs = [linf_deviation_db(healthy, frequency_response(inject_fault(m, FaultSpec(section, d)), g))
            for d in (6.0, 9.0, 12.0)]
    assert 0 < devs[0] < devs[1] < devs[2]


def test_dev_db_is_pointwise_decibel_difference():
    g = FrequencyGrid([1.0, 2.0])
    a = FrequencyResponse(g, [1.0, 1.0])
    b = FrequencyResponse(g, [10.0, 0.1])
    assert np.allclose(dev_db(a, b), [20.0, -20.0])
