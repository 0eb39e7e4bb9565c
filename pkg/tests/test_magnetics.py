import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from magskin.errors import InvalidParams, SingularEvaluation
from magskin.magnetics import (Dipole, DipoleArray, MagnetometerGrid, SensorReading, dipole_field, field_at,
                               fields_at_points, read_sensors, sample_grid)

coord = st.floats(-0.05, 0.05, allow_nan=False)
moment = st.floats(-1.0, 1.0, allow_nan=False)


def test_axial_closed_form():
    b = dipole_field(Dipole((0, 0, 0), (0, 0, 1)), (0, 0, 0.1))
    np.testing.assert_allclose(b, [0, 0, 2e-4], rtol=1e-12, atol=1e-20)


def test_equatorial_closed_form():
    b = dipole_field(Dipole((0, 0, 0), (0, 0, 1)), (0.1, 0, 0))
    np.testing.assert_allclose(b, [0, 0, -1e-4], rtol=1e-12, atol=1e-20)


def test_moment_doubling_doubles_field():
    p = (0.01, -0.02, 0.03)
    a = dipole_field(Dipole((0, 0, 0), (0.1, 0.2, 0.3)), p)
    b = dipole_field(Dipole((0, 0, 0), (0.2, 0.4, 0.6)), p)
    np.testing.assert_array_equal(2 * a, b)


def test_singular_evaluation():
    with pytest.raises(SingularEvaluation):
        dipole_field(Dipole((0, 0, 0), (0, 0, 1)), (0, 0, 5e-7))


def test_zero_moment_rejected():
    with pytest.raises(ValueError):
        Dipole((0, 0, 0), (0, 0, 0))


@given(st.tuples(coord, coord, coord), st.tuples(moment, moment, moment), st.tuples(coord, coord, coord))
def test_dipole_field_matches_scalar_oracle(pos, mom, pt):
    if not any(mom) or np.linalg.norm(np.subtract(pt, pos)) < 1e-4:
        return
    got = dipole_field(Dipole(pos, mom), pt)
    np.testing.assert_allclose(got, oracles.dipole_field(pos, mom, pt), rtol=1e-10, atol=1e-22)


def test_field_at_empty_and_single():
    assert np.array_equal(field_at([], (0, 0, 0.01)), np.zeros(3))
    d = Dipole((0.001, 0.002, 0.0), (0.1, 0, 1))
    np.testing.assert_allclose(field_at([d], (0, 0, 0.01)), dipole_field(d, (0, 0, 0.01)), rtol=1e-14)


def test_two_coincident_dipoles_double():
    d = Dipole((0.001, 0.002, 0.0), (0.1, 0, 1))
    np.testing.assert_allclose(field_at([d, d], (0, 0, 0.01)), 2 * dipole_field(d, (0, 0, 0.01)), rtol=1e-15)


def _random_set(rng, n):
    return DipoleArray(rng.uniform(0, 0.02, (n, 3)), rng.normal(0, 1e-5, (n, 3)))


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30), st.integers(1, 30))
def test_superposition(seed, na, nb):
    rng = np.random.default_rng(seed)
    a, b = _random_set(rng, na), _random_set(rng, nb)
    p = rng.uniform(-0.02, 0.04, 3) + np.array([0, 0, 0.03])
    whole = field_at(a + b, p)
    parts = field_at(a, p) + field_at(b, p)
    np.testing.assert_allclose(whole, parts, rtol=1e-12, atol=1e-12 * np.abs(parts).max())


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_translation_equivariance(seed):
    rng = np.random.default_rng(seed)
    dip = _random_set(rng, 20)
    grid = MagnetometerGrid.default()
    delta = rng.uniform(-0.1, 0.1, 3)
    base = read_sensors(dip, grid).values
    moved = read_sensors(dip.translated(delta), grid.translated(delta)).values
    np.testing.assert_allclose(moved, base, rtol=1e-12, atol=1e-12 * np.abs(base).max())


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_far_field_decay(seed):
    rng = np.random.default_rng(seed)
    n = 50
    dip = DipoleArray(rng.uniform(0, 0.02, (n, 3)),
                      np.column_stack([rng.normal(0, 0.05, (n, 2)), np.ones(n)]) * 1e-5)
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    c = np.array([0.01, 0.01, 0.001])
    r = 1.0
    ratio = np.linalg.norm(field_at(dip, c + 2 * r * u)) / np.linalg.norm(field_at(dip, c + r * u))
    assert 1 / 10 <= ratio <= 1 / 6


def test_grid_validation():
    g = MagnetometerGrid.default()
    with pytest.raises(ValueError):
        MagnetometerGrid(g.sensor_positions[:4])
    s = g.sensor_positions.copy()
    s[1] = s[0]
    with pytest.raises(ValueError):
        MagnetometerGrid(s)
    s = g.sensor_positions.copy()
    s[2, 2] += 1e-3
    with pytest.raises(ValueError):
        MagnetometerGrid(s)


def test_default_grid_layout():
    s = MagnetometerGrid.default().sensor_positions * 1e3
    np.testing.assert_allclose(s[:, :2], [[10, 10], [16, 10], [4, 10], [10, 16], [10, 4]])
    assert np.all(s[:, 2] == s[0, 2])


def test_read_sensors_empty_is_zero(grid):
    assert np.array_equal(read_sensors([], grid).values, np.zeros(15))


def test_dipole_above_sensor_zero(grid):
    gap = 2e-3
    s0 = grid.sensor_positions[0]
    d = Dipole(s0 + [0, 0, gap], (0, 0, 3e-6))
    v = read_sensors([d], grid).values
    assert v[2] == pytest.approx(1e-7 * 2 * 3e-6 / gap**3 * 1e6, rel=1e-12)
    assert v[2] == pytest.approx(dipole_field(d, s0)[2] * 1e6, rel=1e-12)


def test_offset_changes_reading(anyskin0, grid):
    a = read_sensors(anyskin0.dipoles, grid).values
    b = read_sensors(anyskin0.dipoles, grid, skin_offset=(1.0, 0.0)).values
    assert np.abs(a - b).max() > 0


def test_offset_limit(anyskin0, grid):
    with pytest.raises(InvalidParams):
        read_sensors(anyskin0.dipoles, grid, skin_offset=(4.0, 4.0))


def test_read_sensors_is_pure(anyskin0, grid):
    a = read_sensors(anyskin0.dipoles, grid, timestamp_us=7)
    b = read_sensors(anyskin0.dipoles, grid, timestamp_us=7)
    assert a == b and a.values.tobytes() == b.values.tobytes()


def test_compiled_grid_matches_scalar_oracle(anyskin0, grid):
    got = sample_grid(anyskin0.positions, anyskin0.moments, grid)
    ref = oracles.grid_reading_ut(anyskin0.positions.tolist(), anyskin0.moments.tolist(),
                                  grid.sensor_positions.tolist())
    np.testing.assert_allclose(got, ref, rtol=1e-11, atol=1e-9)


def test_compiled_grid_matches_numpy_path(reskin0, grid):
    got = sample_grid(reskin0.positions, reskin0.moments, grid)
    ref = fields_at_points(reskin0.positions, reskin0.moments, grid.sensor_positions).reshape(-1) * 1e6
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-9)


def test_sensor_reading_validation():
    with pytest.raises(ValueError):
        SensorReading(0, np.zeros(14))
    with pytest.raises(ValueError):
        SensorReading(0, np.full(15, np.nan))
    with pytest.raises(ValueError):
        SensorReading(-1, np.zeros(15))
    r = SensorReading(3, np.arange(15.0))
    assert r.xy.tolist() == [0, 1, 3, 4, 6, 7, 9, 10, 12, 13]
    assert r.z.tolist() == [2, 5, 8, 11, 14]
    with pytest.raises(ValueError):
        r.values[0] = 1.0
