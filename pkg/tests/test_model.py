import numpy as np
import pytest
from pydantic import ValidationError
from scipy import integrate

from conftest import make_model
from kgcouple.errors import SupportTooLargeError
from kgcouple.model import (
    ModelConfig,
    ProfileSpec,
    a3_continuum_minimum,
    a3_minimum,
    a3_radial_zeros,
    build_coupling,
    build_profile,
    check_conditions,
    coupling_matrix,
    coupling_matrix_oracle,
)
from kgcouple.spectral import GridSpec


@pytest.mark.parametrize("shape", ["truncated-gaussian", "bspline-bump"])
def test_profile_compact_support(shape):
    spec = ProfileSpec(amplitude=0.7, support_radius=1.5, shape=shape)
    r = np.linspace(0.0, 3.0, 301)
    values = spec.radial(r)
    assert values[0] == pytest.approx(0.7)
    assert np.all(values[r >= 1.5] == 0.0)
    assert np.all(values[r < 1.4] > 0.0)


@pytest.mark.parametrize("shape", ["truncated-gaussian", "bspline-bump"])
def test_radial_transform_matches_quadrature(shape):
    spec = ProfileSpec(amplitude=1.0, support_radius=1.5, width=0.4, shape=shape)
    for k in (0.0, 1.0, 3.7):
        expected, _ = integrate.quad(
            lambda r: 4 * np.pi * r**2 * spec.radial(r) * np.sinc(k * r / np.pi), 0.0, 1.5, limit=200
        )
        assert spec.radial_transform(k)[0] == pytest.approx(expected, rel=1e-6, abs=1e-10)


def test_radial_transform_zero_amplitude():
    spec = ProfileSpec(amplitude=0.0, support_radius=1.0)
    assert np.all(spec.radial_transform(np.array([0.0, 2.0])) == 0.0)


def test_lattice_transform_approaches_continuum():
    spec = ProfileSpec(amplitude=1.0, support_radius=1.5, width=0.5)
    errors = []
    for n in (16, 32):
        grid = GridSpec(box_length=8.0, grid_n=n)
        _, sf = build_profile(spec, grid)
        mask = grid.k_norm < 3.0
        expected = spec.radial_transform(grid.k_norm[mask])
        errors.append(np.max(np.abs(sf.coeffs[mask].real - expected)))
        assert sf.hermitian_defect() < 1e-12
    assert errors[1] < errors[0]
    assert errors[1] < 1e-2 * abs(spec.radial_transform(0.0)[0])


def test_build_profile_support_guard():
    grid = GridSpec(box_length=8.0, grid_n=8)
    with pytest.raises(SupportTooLargeError, match="must be below L/4"):
        build_profile(ProfileSpec(amplitude=1.0, support_radius=2.0), grid)


def test_model_support_guard_is_a_validation_error():
    with pytest.raises(ValidationError, match="support guard"):
        make_model(support_radius=4.0, box_length=16.0)


def test_model_shape_checks():
    profile = ProfileSpec(amplitude=0.1, support_radius=1.0)
    with pytest.raises(ValidationError, match="masses has 1 entries but d=2"):
        ModelConfig(d=2, masses=(1.0,), omega=1.0, profiles=(profile, profile))
    with pytest.raises(ValidationError, match="masses must be nonnegative"):
        ModelConfig(d=1, masses=(-1.0,), omega=1.0, profiles=(profile,))
    with pytest.raises(ValidationError, match="omega"):
        ModelConfig(d=1, masses=(1.0,), profiles=(profile,))


def test_model_properties():
    model = make_model(masses=(0.0, 2.0, 1.5))
    assert model.m_star == 1.5
    assert model.max_support == 1.5
    assert model.grid.grid_n == model.grid_n
    updated = model.with_updates(omega=3.0)
    assert updated.omega == 3.0 and updated.masses == model.masses
    assert make_model(masses=(0.0,)).m_star == 0.0


def test_build_coupling_is_cached_and_read_only(small_model):
    a = build_coupling(small_model)
    assert build_coupling(small_model) is a
    assert a.rho.shape == (1, 16, 16, 16)
    assert a.grad_rho_hat.shape == (1, 3, 16, 16, 16)
    with pytest.raises(ValueError):
        a.rho[0, 0, 0, 0] = 1.0
    assert not a.is_zero


def test_coupling_matrix_is_isotropic_and_matches_radial_oracle():
    model = make_model(width=0.6, grid_n=32)
    K0 = coupling_matrix(model, 0.0)
    assert np.allclose(K0, K0.T)
    assert np.allclose(K0 - np.diag(np.diag(K0)), 0.0, atol=1e-12 * abs(K0[0, 0]))
    assert K0[0, 0] == pytest.approx(K0[1, 1], rel=1e-12)
    assert K0[0, 0] == pytest.approx(coupling_matrix_oracle(model, 0.0), rel=5e-2)


def test_conditions_hold_for_weak_coupling(small_model):
    report = check_conditions(small_model)
    assert report.all_hold
    assert report.failures() == []
    assert report.m_star == 1.0
    assert all(e > 0 for e in report.eig_A1)
    assert np.asarray(report.K).shape == (3, 3)


def test_strong_coupling_fails_a1p():
    report = check_conditions(make_model(amplitude=40.0))
    assert not report.a1p_holds
    assert "A1'" in report.failures()


def test_uncoupled_model_fails_a3(uncoupled_model):
    report = check_conditions(uncoupled_model)
    assert not report.a3_holds
    assert report.a1_holds and report.a1p_holds
    assert report.failures() == ["A3"]


def test_mixed_masses_mark_a1_undefined(caplog):
    model = make_model(masses=(0.0, 1.0))
    with caplog.at_level("WARNING", logger="kgcouple.model"):
        report = check_conditions(model)
    assert not report.a1_holds
    assert np.all(np.isnan(np.asarray(report.K)))
    assert "A1 matrix undefined" in caplog.text


def test_a3_minimum_is_positive(small_model):
    minimum, scale = a3_minimum(small_model)
    assert 0 < minimum < scale


def test_bspline_fails_a3_where_truncated_gaussian_holds():
    gaussian = check_conditions(make_model(support_radius=1.0, grid_n=64))
    bspline = check_conditions(make_model(support_radius=1.0, grid_n=64, shape="bspline-bump"))
    assert gaussian.a3_holds
    assert gaussian.a3_radial_zeros == []
    assert not bspline.a3_holds
    assert "A3" in bspline.failures()
    assert bspline.a3_radial_zeros[0] == pytest.approx(4.493409457909064 / 0.5, rel=1e-10)


def test_a3_is_decided_on_the_lattice(caplog):
    model = make_model(support_radius=1.0, grid_n=64)
    minimum, scale = a3_minimum(model)
    with caplog.at_level("INFO", logger="kgcouple.model"):
        report = check_conditions(model)
    assert report.a3_min_abs == minimum
    assert minimum > model.a3_threshold * scale
    assert report.a3_continuum_min == pytest.approx(a3_continuum_minimum(model))
    assert report.a3_continuum_min <= minimum
    assert "A3=True" in caplog.text


def test_bspline_transform_zeros_are_roots():
    spec = ProfileSpec(amplitude=1.0, support_radius=1.0, shape="bspline-bump")
    zeros = spec.transform_zeros(30.0)
    assert len(zeros) == 4
    assert np.all(np.diff(zeros) > 0)
    ball = 4.0 * np.pi * 0.5**3 / 3.0
    assert np.all(np.abs(spec.radial_transform(np.asarray(zeros))) < 1e-20 * ball)
    assert ProfileSpec(amplitude=1.0, support_radius=1.0).transform_zeros(30.0) == []


def test_radial_zeros_outside_lattice_range_are_ignored():
    # first bspline zero sits at 4.4934/0.75 ≈ 5.99, beyond the N=8 lattice
    model = make_model(grid_n=8, shape="bspline-bump")
    assert float(model.grid.k_norm.max()) < 5.9
    assert a3_radial_zeros(model) == []


def test_large_omega_satisfies_a1():
    report = check_conditions(make_model(omega=100.0))
    assert report.a1_holds and report.a1p_holds
    assert min(report.eig_A1) == pytest.approx(100.0**2 - 1.0 - report.K[0][0], rel=1e-12)


def test_zero_profile_gives_zero_coupling():
    report = check_conditions(make_model(masses=(0.0,), omega=1.0, amplitude=0.0))
    assert np.all(np.asarray(report.K) == 0.0)
    assert np.all(np.asarray(report.K0) == 0.0)
    assert report.a1_holds and report.a1p_holds
    assert not report.a3_holds


def test_profile_transform_converges_under_grid_refinement():
    spec = ProfileSpec(amplitude=0.5, support_radius=1.0, width=0.3)
    index = np.r_[0:16, -15:0]
    shared = {}
    for n in (32, 64, 128):
        _, sf = build_profile(spec, GridSpec(box_length=16.0, grid_n=n))
        rows = index % n
        shared[n] = sf.coeffs[np.ix_(rows, rows, rows)].real
    scale = np.abs(shared[128]).max()
    coarse = np.abs(shared[64] - shared[32]).max() / scale
    fine = np.abs(shared[128] - shared[64]).max() / scale
    assert fine < 2e-4
    assert fine < 0.2 * coarse


def test_massless_coupling_matches_radial_oracle():
    model = make_model(masses=(0.0,), amplitude=0.5, support_radius=1.0, width=0.3, grid_n=64)
    K0 = coupling_matrix(model, 0.0)
    assert K0[0, 0] == pytest.approx(coupling_matrix_oracle(model, 0.0), rel=1e-2)
