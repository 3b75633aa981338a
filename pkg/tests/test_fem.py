import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.signal import find_peaks

from core.errors import ContractError
from core.fem import (DESK_RESOLUTION, DOF_PER_NODE, UZ, assemble, assemble_global, build_mesh,
                      kirchhoff_frequency, natural_frequencies, point_load, rotation_field, solve_frf,
                      solve_harmonic)
from core.model import BeadingPattern, PlateConfig, levels_from_magnitudes

SMALL = (10, 15)
DOUBLED = (61, 91)


def _kirchhoff_modes(cfg):
    return [kirchhoff_frequency(cfg, 1, 1), kirchhoff_frequency(cfg, 2, 1), kirchhoff_frequency(cfg, 1, 2)]


def test_kirchhoff_reference(plate):
    assert kirchhoff_frequency(plate, 1, 1) == pytest.approx(29.13, abs=0.05)
    assert kirchhoff_frequency(plate, 2, 1) == pytest.approx(56.03, abs=0.05)
    assert kirchhoff_frequency(plate, 1, 2) == pytest.approx(89.65, abs=0.05)


def test_mesh_layout(plate):
    mesh = build_mesh(plate, None, SMALL)
    assert mesh.node_count == 150
    assert len(mesh.triangles) == 2 * 9 * 14
    assert not mesh.z.any()
    assert mesh.boundary_nodes().size == 2 * 15 + 2 * 8


def test_mesh_follows_pattern_height(plate):
    pattern = BeadingPattern.for_plate(np.ones((12, 18)), plate)
    mesh = build_mesh(plate, pattern, SMALL)
    np.testing.assert_allclose(mesh.z, plate.bead_height)


def test_mesh_too_coarse(plate):
    with pytest.raises(ContractError):
        build_mesh(plate, None, (5, 20))


def test_total_mass(plate):
    mass, _, _ = assemble_global(build_mesh(plate, None, SMALL), plate)
    total = mass.reshape(-1, DOF_PER_NODE)[:, UZ].sum()
    assert total == pytest.approx(plate.density * plate.thickness * plate.length * plate.width)


def test_stiffness_symmetric(plate):
    _, stiffness, _ = assemble_global(build_mesh(plate, None, SMALL), plate)
    assert abs(stiffness - stiffness.T).max() <= 1e-8 * abs(stiffness).max()


def test_rigid_translation_has_no_strain(plate):
    mesh = build_mesh(plate, None, SMALL)
    _, stiffness, _ = assemble_global(mesh, plate)
    u = np.zeros((mesh.node_count, DOF_PER_NODE))
    u[:, UZ] = 1.0
    residual = stiffness @ u.ravel()
    assert np.abs(residual).max() <= 1e-8 * abs(stiffness).max()


def test_reciprocity():
    cfg = PlateConfig.preset("clamped")
    mesh = build_mesh(cfg, None, SMALL)
    system = assemble(mesh, cfg)
    rng = np.random.default_rng(0)
    interior = [mesh.node_index(i, j) for i in range(1, mesh.ny - 1) for j in range(1, mesh.nx - 1)]
    pairs = [rng.choice(interior, size=2, replace=False) for _ in range(5)]
    for freq in np.linspace(15.0, 290.0, 10):
        for a, b in pairs:
            u_a = solve_harmonic(system, freq, point_load(mesh, a))
            u_b = solve_harmonic(system, freq, point_load(mesh, b))
            assert u_a[b] == pytest.approx(u_b[a], rel=1e-8)
            assert abs(20.0 * math.log10(abs(u_a[b])) - 20.0 * math.log10(abs(u_b[a]))) < 1e-6


def test_sweep_shapes(plate):
    mesh = build_mesh(plate, None, SMALL)
    sweep = solve_frf(assemble(mesh, plate), [20.0, 60.0, 110.0], workers=2)
    frf, fields = sweep
    assert len(frf) == 3
    assert fields.shape == (3, mesh.node_count)
    assert np.all(np.isfinite(frf.levels))
    assert not sweep.errors


def test_sweep_rejects_nonpositive_frequency(plate):
    system = assemble(build_mesh(plate, None, SMALL), plate)
    with pytest.raises(ContractError):
        solve_frf(system, [0.0, 10.0])


def test_uniform_elevation_matches_flat(plate):
    freqs = [40.0, 95.0]
    flat = solve_frf(assemble(build_mesh(plate, None, SMALL), plate), freqs)
    raised_pattern = BeadingPattern.for_plate(np.ones((12, 18)), plate)
    raised = solve_frf(assemble(build_mesh(plate, raised_pattern, SMALL), plate), freqs)
    np.testing.assert_allclose(raised.frf.levels, flat.frf.levels, rtol=0, atol=1e-6)


def test_natural_frequencies_sorted(plate):
    system = assemble(build_mesh(plate, None, SMALL), plate)
    freqs = natural_frequencies(system, count=4)
    assert freqs.shape == (4,)
    assert np.all(freqs > 0)
    assert np.all(np.diff(freqs) >= 0)


def test_rotation_field_nonnegative(plate):
    field = rotation_field(plate, 100.0, 102.0, 1.0, resolution=SMALL)
    assert field.shape == SMALL
    assert np.all(field >= 0)
    assert field.max() > 0


def test_flat_plate_close_to_kirchhoff(plate):
    system = assemble(build_mesh(plate, None, DESK_RESOLUTION), plate)
    freqs = natural_frequencies(system, count=3)
    np.testing.assert_allclose(freqs, _kirchhoff_modes(plate), rtol=0.05)


def test_frf_peaks_match_kirchhoff(plate):
    system = assemble(build_mesh(plate, None, DESK_RESOLUTION), plate)
    frf = solve_frf(system, np.arange(20.0, 96.0, 1.0), workers=2).frf
    peaks, _ = find_peaks(frf.levels, prominence=3.0)
    assert peaks.size == 3
    np.testing.assert_allclose(frf.frequencies[peaks], _kirchhoff_modes(plate), rtol=0.05)


def test_mesh_refinement_converges(plate):
    coarse = natural_frequencies(assemble(build_mesh(plate, None, DESK_RESOLUTION), plate), count=3)
    fine = natural_frequencies(assemble(build_mesh(plate, None, DOUBLED), plate), count=3)
    np.testing.assert_allclose(coarse, fine, rtol=0.02)


def test_damping_lowers_resonance_level(plate):
    mesh = build_mesh(plate, None, SMALL)
    system = assemble(mesh, plate)
    resonance = float(natural_frequencies(system, count=1)[0])
    damped_cfg = replace(plate, loss_factor=2.0 * plate.loss_factor)
    light = solve_frf(system, [resonance]).frf.levels[0]
    heavy = solve_frf(assemble(mesh, damped_cfg), [resonance]).frf.levels[0]
    # 공진에서 응답은 1/η 에 비례하므로 약 6 dB 감소
    assert heavy < light - 3.0


def test_doubled_force_adds_six_db(plate):
    mesh = build_mesh(plate, None, SMALL)
    system = assemble(mesh, plate)
    force = point_load(mesh, system.load_node)
    freq = 73.0
    single = levels_from_magnitudes(np.abs(solve_harmonic(system, freq, force))[None, :])[0]
    double = levels_from_magnitudes(np.abs(solve_harmonic(system, freq, 2.0 * force))[None, :])[0]
    assert double - single == pytest.approx(20.0 * math.log10(2.0), abs=1e-9)


def test_rotation_field_point_symmetric_for_centred_load():
    # 대각선 분할 격자는 180° 회전 대칭이므로 중앙 하중에서 기준 필드도 같은 대칭
    cfg = PlateConfig(load_x=0.45, load_y=0.30)
    field = rotation_field(cfg, 60.0, 64.0, 2.0, resolution=(11, 15))
    np.testing.assert_allclose(field, field[::-1, ::-1], rtol=0, atol=1e-8 * field.max())


def test_beads_stiffen_plate(plate):
    grid = np.zeros((48, 72))
    grid[8:40, 20:24] = 1.0
    grid[8:40, 48:52] = 1.0
    from core.constraints import postprocess

    beaded = postprocess(BeadingPattern.for_plate(grid, plate), plate)
    flat_first = natural_frequencies(assemble(build_mesh(plate), plate), count=1)[0]
    beaded_first = natural_frequencies(assemble(build_mesh(plate, beaded), plate), count=1)[0]
    assert beaded_first > flat_first
