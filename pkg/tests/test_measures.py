import numpy as np
import pytest
from pydantic import ValidationError

from conftest import make_model
from kgcouple.dynamics import TestFunctional
from kgcouple.errors import NotPSDError, SupportTooLargeError
from kgcouple.measures import (
    CovarianceSpec,
    _jackknife_se,
    assemble_spectral_density,
    ensemble_run,
    exact_Qt,
    exact_Qt_series,
    free_transport,
    initial_form,
    limit_covariance,
    quadratic_form_limit,
    sample_initial,
    transport_defect,
)
from kgcouple.spectral import GridSpec


@pytest.fixture
def spec():
    return CovarianceSpec(bump_radius=1.5, bump_width=0.5, c00=((1.0,),), c01=((0.5,),), c11=((2.0,),))


def test_covariance_spec_validation():
    with pytest.raises(ValidationError, match="transpose of c01"):
        CovarianceSpec(c01=((0.5,),), c10=((0.2,),))
    with pytest.raises(ValidationError, match="symmetric"):
        CovarianceSpec(c00=((1.0, 0.3), (0.0, 1.0)), c01=((0.0, 0.0), (0.0, 0.0)), c11=((1.0, 0.0), (0.0, 1.0)))
    with pytest.raises(ValidationError, match="must be 1x1"):
        CovarianceSpec(c11=((1.0, 0.0), (0.0, 1.0)))
    spec = CovarianceSpec(c01=((0.5,),))
    assert np.allclose(spec.coefficient_matrix(), [[1.0, 0.5], [0.5, 1.0]])
    assert np.allclose(np.diag(spec.particle_covariance()), [0.25] * 6)


def test_correlation_is_normalized_at_the_origin(spec):
    grid = GridSpec(box_length=8.0, grid_n=16)
    density = assemble_spectral_density(spec, grid)
    corr = density.correlation()
    assert corr[0, 0, 0, 0, 0] == pytest.approx(1.0)
    assert corr[1, 1, 0, 0, 0] == pytest.approx(2.0)
    assert corr[0, 1, 0, 0, 0] == pytest.approx(0.5)
    assert np.all(density.g_hat >= 0)
    assert not density.blocks.flags.writeable


def test_correlation_is_compactly_supported(spec):
    grid = GridSpec(box_length=16.0, grid_n=32)
    corr = assemble_spectral_density(spec, grid).correlation()[0, 0]
    assert np.max(np.abs(corr[grid.radius > 3.0 + grid.spacing])) < 1e-10


def test_non_psd_density_reports_mode():
    grid = GridSpec(box_length=8.0, grid_n=8)
    bad = CovarianceSpec(c01=((2.0,),))
    with pytest.raises(NotPSDError, match="not PSD") as exc:
        assemble_spectral_density(bad, grid)
    assert exc.value.eigenvalue < 0
    assert len(exc.value.k_index) == 3


def test_correlation_support_guard():
    with pytest.raises(SupportTooLargeError, match="below L/2"):
        assemble_spectral_density(CovarianceSpec(bump_radius=2.5), GridSpec(box_length=8.0, grid_n=8))


def test_sample_initial_reproduces_covariance(spec):
    model = make_model(box_length=8.0, grid_n=8, support_radius=1.0)
    draws = [sample_initial(spec, model, seed) for seed in range(200)]
    phi = np.stack([Y.field.phi for Y in draws])
    pi = np.stack([Y.field.pi for Y in draws])
    assert np.mean(phi**2) == pytest.approx(1.0, rel=0.1)
    assert np.mean(pi**2) == pytest.approx(2.0, rel=0.1)
    assert np.mean(phi * pi) == pytest.approx(0.5, abs=0.1)
    q = np.stack([Y.particle.q for Y in draws])
    assert np.var(q) == pytest.approx(0.25, rel=0.2)


def test_sample_initial_is_seeded(spec, small_model):
    a = sample_initial(spec, small_model, 11)
    b = sample_initial(spec, small_model, 11)
    assert np.array_equal(a.field.phi, b.field.phi)
    assert np.array_equal(a.particle.p, b.particle.p)
    with pytest.raises(ValueError, match="covariance has d=1"):
        sample_initial(spec, make_model(masses=(1.0, 1.0)), 0)


def test_limit_covariance_is_invariant_under_free_flow(spec, small_model):
    limit = limit_covariance(spec, small_model)
    scale = np.abs(limit.blocks).max()
    assert transport_defect(limit, small_model, 1.0) < 1e-12 * scale
    assert transport_defect(limit, small_model, 7.3) < 1e-12 * scale
    initial = assemble_spectral_density(spec, small_model.grid)
    assert transport_defect(initial, small_model, 1.0) > 1e-3 * scale


def test_limit_covariance_is_a_fixed_point(spec, small_model):
    limit = limit_covariance(spec, small_model)
    again = limit_covariance(limit, small_model)
    assert np.allclose(again.blocks, limit.blocks, atol=1e-14 * np.abs(limit.blocks).max())


def test_limit_covariance_drops_mixed_mass_blocks():
    model = make_model(masses=(0.0, 1.0))
    spec = CovarianceSpec(
        c00=((1.0, 0.3), (0.3, 1.0)),
        c01=((0.0, 0.0), (0.0, 0.0)),
        c11=((1.0, 0.2), (0.2, 1.0)),
    )
    limit = limit_covariance(spec, model)
    assert np.all(limit.block(0, 0)[0, 1] == 0)
    assert np.all(limit.block(1, 1)[1, 0] == 0)
    assert transport_defect(limit, model, 2.0) < 1e-12 * np.abs(limit.blocks).max()


def test_free_transport_at_zero_is_identity(spec, small_model):
    density = assemble_spectral_density(spec, small_model.grid)
    assert np.allclose(free_transport(density, small_model, 0.0).blocks, density.blocks)


def test_quadratic_form_limit_is_positive(spec, small_model, random_functional):
    Z = random_functional(small_model)
    limit = limit_covariance(spec, small_model)
    assert quadratic_form_limit(limit, (Z.psi0, Z.psi1)) > 0


def test_exact_Qt_at_zero_is_the_initial_form(spec, small_model, random_functional):
    Z1, Z2 = random_functional(small_model, 1), random_functional(small_model, 2)
    density = assemble_spectral_density(spec, small_model.grid)
    assert exact_Qt(Z1, Z2, 0.0, spec, small_model) == pytest.approx(initial_form(density, Z1, Z2))
    series = exact_Qt_series([Z1, Z2], [1.0, 0.0, 0.5], spec, small_model, dt=0.05)
    assert series.shape == (3, 2, 2)
    assert np.allclose(series, np.transpose(series, (0, 2, 1)))
    assert series[1, 0, 1] == pytest.approx(initial_form(density, Z1, Z2))
    assert series[0, 0, 1] == pytest.approx(exact_Qt(Z1, Z2, 1.0, spec, small_model, dt=0.05))


def test_ensemble_agrees_with_exact_second_moments(spec, small_model, random_functional):
    Zs = [random_functional(small_model, 1), random_functional(small_model, 2)]
    times = [0.0, 1.0, 2.0]
    stats = ensemble_run(spec, small_model, Zs, times, M=300, base_seed=4, propagation="pullback", dt=0.05, threads=2)
    exact = exact_Qt_series(Zs, times, spec, small_model, dt=0.05)
    assert stats.Q_emp.shape == (3, 2, 2)
    assert np.all(np.abs(stats.Q_emp - exact) < 5.0 * stats.Q_se + 1e-12)
    assert np.all(np.abs(stats.means) < 5.0 * stats.mean_se)
    assert np.all(stats.gauss_gap < 5.0 * stats.gauss_gap_se + 0.05)
    assert stats.moment_means is None
    assert len(stats.seeds) == 300


def test_ensemble_does_not_depend_on_thread_count(spec, small_model, random_functional):
    Zs = [random_functional(small_model)]
    one = ensemble_run(spec, small_model, Zs, [0.5], M=6, base_seed=9, propagation="pullback", dt=0.05, threads=1)
    many = ensemble_run(spec, small_model, Zs, [0.5], M=6, base_seed=9, propagation="pullback", dt=0.05, threads=3)
    assert np.array_equal(one.Q_emp, many.Q_emp)
    assert one.seeds == many.seeds


def test_forward_and_pullback_ensembles_agree(spec, small_model, random_functional):
    Zs = [random_functional(small_model)]
    kwargs = dict(M=4, base_seed=2, dt=0.05, threads=1, functional_ids=["Z"])
    forward = ensemble_run(spec, small_model, Zs, [0.5, 1.0], propagation="forward", **kwargs)
    pullback = ensemble_run(spec, small_model, Zs, [0.5, 1.0], propagation="pullback", **kwargs)
    assert np.allclose(forward.means, pullback.means, rtol=1e-8, atol=1e-12)
    assert forward.moment_means.shape == (2,)
    assert forward.moment_check is True
    assert forward.functional_ids == ["Z"]


def test_pullback_ensemble_logs_skipped_moment_check(spec, small_model, random_functional, caplog):
    Zs = [random_functional(small_model)]
    with caplog.at_level("INFO", logger="kgcouple.measures"):
        stats = ensemble_run(spec, small_model, Zs, [0.5], M=4, base_seed=3, propagation="pullback", dt=0.05, threads=1)
    assert stats.moment_check is None
    assert "Uniform moment check skipped" in caplog.text


def test_ensemble_argument_checks(spec, small_model):
    Z = TestFunctional.zeros(small_model)
    with pytest.raises(ValueError, match="at least 2"):
        ensemble_run(spec, small_model, [Z], [0.0], M=1, base_seed=0)
    with pytest.raises(ValueError, match="nondecreasing"):
        ensemble_run(spec, small_model, [Z], [1.0, 0.0], M=2, base_seed=0)
    with pytest.raises(ValueError, match="Unknown propagation"):
        ensemble_run(spec, small_model, [Z], [0.0], M=2, base_seed=0, propagation="sideways")


def test_jackknife_of_the_mean_is_the_standard_error():
    values = np.random.default_rng(0).standard_normal((50, 4))
    se = _jackknife_se(values, lambda s: s)
    assert np.allclose(se, values.std(axis=0, ddof=1) / np.sqrt(50))
