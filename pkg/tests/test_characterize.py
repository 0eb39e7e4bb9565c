import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from magskin.characterize import (ConsistencyReport, cross_instance_std, misalignment_std, misalignment_values,
                                  normalized_std, signal_strength, table_report)
from magskin.errors import EmptyInput, InsufficientInstances, SelfAligningSkin
from magskin.magnetics import DipoleArray, SensorReading, sample_grid
from magskin.skins import generate_instance, preset


def test_signal_strength_examples():
    assert signal_strength([SensorReading(0, np.full(15, 10.0))]) == (10.0, 10.0)
    v = np.tile([20.0, -20.0, -5.0], 5)
    assert signal_strength([SensorReading(0, v), SensorReading(1, -v)]) == (20.0, 5.0)


def test_signal_strength_empty():
    with pytest.raises(EmptyInput):
        signal_strength([])


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_signal_strength_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(0, 100, (6, 15))
    a = signal_strength(v)
    rows = v[rng.permutation(6)]
    sensors = rows.reshape(6, 5, 3)[:, rng.permutation(5)].reshape(6, 15)
    np.testing.assert_allclose(signal_strength(sensors), a, rtol=1e-12)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8))
def test_normalized_std_matches_oracle(seed, n):
    rows = np.random.default_rng(seed).normal(50, 30, (n, 15))
    np.testing.assert_allclose(normalized_std(rows), oracles.normalized_std(rows.tolist()), rtol=1e-9)


def test_identical_instances_zero_std(anyskin0, grid):
    assert cross_instance_std([anyskin0] * 5, grid) == (0.0, 0.0)


def test_insufficient_instances(anyskin0, grid):
    with pytest.raises(InsufficientInstances):
        cross_instance_std([anyskin0], grid)
    with pytest.raises(InsufficientInstances):
        table_report(["anyskin"], n_instances=1)


def test_mixed_configs_rejected(anyskin0, reskin0, grid):
    with pytest.raises(ValueError):
        cross_instance_std([anyskin0, reskin0], grid)


def test_normalization_invariance(grid):
    cfg = preset("reskin_pm")
    insts = [generate_instance(cfg, s) for s in range(5)]
    k = 3.7
    scaled = [i.with_dipoles(DipoleArray(i.positions, i.moments * k)) for i in insts]
    np.testing.assert_allclose(cross_instance_std(scaled, grid), cross_instance_std(insts, grid), rtol=1e-9)
    base = np.stack([sample_grid(i.positions, i.moments, grid) for i in insts])
    big = np.stack([sample_grid(i.positions, i.moments, grid) for i in scaled])
    np.testing.assert_allclose(signal_strength(big), np.multiply(signal_strength(base), k), rtol=1e-9)


def test_misalignment_of_uniform_field_is_zero(reskin0, grid):
    empty = reskin0.with_dipoles(DipoleArray(np.zeros((0, 3)), np.zeros((0, 3))))
    vals = misalignment_values(empty, grid, background_ut=(30.0, -12.0, 45.0))
    assert vals.shape == (5, 15)
    assert misalignment_std(empty, grid, background_ut=(30.0, -12.0, 45.0)) == (0.0, 0.0)


def test_far_single_dipole_nearly_uniform(reskin0, grid):
    far = reskin0.with_dipoles(DipoleArray([[10e-3, 10e-3, 5.0]], [[0, 0, 1.0]]))
    sxy, sz = misalignment_std(far, grid)
    assert sz < 1e-6


def test_self_aligning_rejected(anyskin0, grid):
    with pytest.raises(SelfAligningSkin):
        misalignment_std(anyskin0, grid)


def test_bad_offset(reskin0, grid):
    with pytest.raises(ValueError):
        misalignment_std(reskin0, grid, offset_mm=0.0)


@pytest.fixture(scope="module")
def report(grid):
    return table_report(seed=0, grid=grid)


def test_report_shape_and_invariants(report):
    assert [r.preset for r in report.rows] == ["reskin", "reskin_pm", "reskin_pm_fp", "anyskin"]
    for r in report.rows:
        assert r.mean_bxy_ut >= 0 and r.mean_bz_ut >= 0 and r.norm_std_xy >= 0 and r.norm_std_z >= 0
    assert report.row("anyskin").self_aligning
    assert not report.row("reskin").self_aligning


def test_report_orderings(report):
    z = {r.preset: r.norm_std_z for r in report.rows}
    assert z["reskin"] > z["reskin_pm"] and z["reskin"] > z["reskin_pm_fp"]
    assert min(z["reskin_pm"], z["reskin_pm_fp"]) >= z["anyskin"]
    r = report.row("reskin")
    assert r.misalign_std_xy >= r.norm_std_xy and r.misalign_std_z >= r.norm_std_z
    a = report.row("anyskin")
    assert 0.75 * 1265 <= a.mean_bz_ut <= 1.25 * 1265 and a.mean_bz_ut > a.mean_bxy_ut


def test_report_deterministic(report, grid):
    assert table_report(seed=0, grid=grid).to_csv() == report.to_csv()


def test_csv_roundtrip(report):
    assert ConsistencyReport.rows_from_csv(report.to_csv()) == report.rows


def test_markdown_lists_every_preset(report):
    md = report.to_markdown()
    assert md.count("\n") == 2 + len(report.rows)
    assert "self-aligning" in md
