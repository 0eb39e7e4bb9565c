import numpy as np
import pytest

from magskin.errors import BadFile, DegenerateSkin, InvalidConfig, UnknownPreset
from magskin.skins import (PRESET_NAMES, FabricationConfig, SkinInstance, baseline_values, calibrate_moment_scale,
                           generate_instance, preset)


def test_preset_anyskin():
    c = preset("anyskin")
    assert (c.particle_class, c.magnetization, c.alignment) == ("fine", "pulse", "self_aligning")
    assert c.z_gap > 0


def test_preset_reskin():
    c = preset("reskin")
    assert (c.particle_class, c.magnetization, c.alignment) == ("coarse", "grid_cure", "manual")
    assert c.settle_bias > 0 and c.z_gap == 0


def test_preset_family():
    pm, fp, rs = preset("reskin_pm"), preset("reskin_pm_fp"), preset("reskin")
    assert (pm.particle_class, pm.magnetization, pm.alignment) == ("coarse", "pulse", "manual")
    assert (fp.particle_class, fp.magnetization, fp.alignment) == ("fine", "pulse", "manual")
    for c in (pm, fp, preset("anyskin")):
        assert c.dir_jitter_sigma < rs.dir_jitter_sigma
    for c in (pm, fp):
        assert c.moment_scale > rs.moment_scale


def test_unknown_preset():
    with pytest.raises(UnknownPreset):
        preset("bogus")


@pytest.mark.parametrize("kw", [dict(particle_class="gravel"), dict(skin_thickness=0.0),
                                dict(settle_bias=0.5), dict(moment_scale=-1.0), dict(particle_count=1.5)])
def test_config_validation(kw):
    base = dict(particle_class="fine", magnetization="pulse", alignment="manual")
    with pytest.raises(InvalidConfig):
        FabricationConfig(**{**base, **kw})


def test_settle_bias_only_for_coarse():
    with pytest.raises(InvalidConfig):
        FabricationConfig("coarse", "pulse", "manual", settle_bias=0.0)


def test_generation_is_deterministic():
    a = generate_instance(preset("reskin"), 42)
    b = generate_instance(preset("reskin"), 42)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.moments, b.moments)
    c = generate_instance(preset("reskin"), 43)
    assert not np.array_equal(a.positions, c.positions)


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_dipoles_inside_volume(name):
    for seed in range(3):
        inst = generate_instance(preset(name), seed)
        (x0, x1), (y0, y1), (z0, z1) = inst.bounds_mm()
        p = inst.positions * 1e3
        assert len(inst) == inst.config.particle_count
        assert np.all((p[:, 0] >= x0) & (p[:, 0] <= x1) & (p[:, 1] >= y0) & (p[:, 1] <= y1))
        assert np.all((p[:, 2] >= z0) & (p[:, 2] <= z1))


def test_coarse_settles_to_bottom():
    cfg = preset("reskin").replace(particle_count=10_000)
    z = generate_instance(cfg, 0).positions[:, 2] * 1e3 - cfg.z_gap
    assert z.mean() < cfg.skin_thickness / 2


def test_fine_uniform_in_depth():
    cfg = preset("anyskin").replace(particle_count=10_000)
    z = generate_instance(cfg, 0).positions[:, 2] * 1e3 - cfg.z_gap
    assert abs(z.mean() - cfg.skin_thickness / 2) <= 0.05 * cfg.skin_thickness / 2


@pytest.mark.parametrize("name", ["reskin_pm", "reskin_pm_fp", "anyskin"])
def test_pulse_moments_point_up(name):
    m = generate_instance(preset(name), 0).moments
    u = m / np.linalg.norm(m, axis=1, keepdims=True)
    assert u.mean(axis=0)[2] > 0.9


def test_grid_cure_cancels():
    inst = generate_instance(preset("reskin"), 0)
    per = inst.config.moment_scale
    assert abs(inst.moments[:, 2].mean()) < 0.2 * per
    assert np.any(inst.moments[:, 2] > 0) and np.any(inst.moments[:, 2] < 0)


def test_pulse_presets_stronger_than_grid_cure(grid):
    def bz(name):
        return np.mean([np.abs(baseline_values(generate_instance(preset(name), s), grid)[2::3]).mean()
                        for s in range(5)])
    weak = bz("reskin")
    for name in ("reskin_pm", "reskin_pm_fp", "anyskin"):
        assert bz(name) > weak


def test_calibration_hits_target(grid):
    cfg = preset("anyskin")
    scale = calibrate_moment_scale(cfg, grid, 1265.0, n_instances=5, seed=0)
    cal = cfg.replace(moment_scale=scale)
    bz = np.mean([np.abs(baseline_values(generate_instance(cal, s), grid)[2::3]).mean() for s in range(5)])
    assert 1252 <= bz <= 1278


def test_calibration_is_linear_in_target(grid):
    cfg = preset("reskin_pm")
    a = calibrate_moment_scale(cfg, grid, 500.0, n_instances=2)
    b = calibrate_moment_scale(cfg, grid, 1000.0, n_instances=2)
    assert b == pytest.approx(2 * a, rel=1e-12)


def test_calibration_degenerate(grid):
    with pytest.raises(DegenerateSkin):
        calibrate_moment_scale(preset("anyskin").replace(particle_count=0), grid)


def test_instance_file_roundtrip(tmp_path):
    inst = generate_instance(preset("reskin_pm_fp"), 7)
    path = tmp_path / "skin.bin"
    inst.save(path)
    back = SkinInstance.load(path)
    assert back.config == inst.config and back.seed == 7
    assert np.array_equal(back.positions, inst.positions) and np.array_equal(back.moments, inst.moments)
    first = path.read_bytes()
    inst.save(path)
    assert path.read_bytes() == first


def test_instance_file_rejects_garbage(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a skin file at all")
    with pytest.raises(BadFile):
        SkinInstance.load(path)
