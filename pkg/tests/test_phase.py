import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fanophase import (
    DataError,
    FitError,
    PhaseCurve,
    PhysicalModel,
    compute_xi,
    decompose_channels,
    derive_lineshape,
    estimate_R0,
    fit_phase,
    fit_rational,
    reconstruct_rho_eg,
    reflectance_eq1,
    retrieve_phase,
    synthesize,
)
from fanophase.cavity import bound_state_phase
from fanophase.phase import rho_from_amplitude

ANGLES = [-5.0, -4.0, -3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 4.0, 5.0]


class ModelCurve:
    """Forward-model intensity with the interface of a normalised rational fit."""

    def __init__(self, model, angle):
        self.lp = derive_lineshape(model, angle)

    def __call__(self, eps):
        return reflectance_eq1(self.lp, eps)

    def tail_amplitude(self):
        return math.sqrt(self.lp.sigma0)


def exact_xi(model, angles, eps):
    """xi rows with the bound-state arm of each angle as |R(0, eps)|."""
    rows, valid, phis = [], [], []
    for a in angles:
        lp = derive_lineshape(model, a)
        ch = decompose_channels(lp, eps)
        xc = compute_xi(reflectance_eq1(lp, eps), ch.r_n, ch.r_c)
        rows.append(xc.xi)
        valid.append(xc.valid)
        phis.append(lp.phi)
    return np.array(rows), np.array(valid), np.array(phis)


def noiseless_curves(model, angles, grid):
    return {a: fit_rational(synthesize(model, a, grid, exposure=1e5, noiseless=True)) for a in angles}


def phi_of(model):
    return lambda a: derive_lineshape(model, a).phi


# ---------------------------------------------------------------- estimate_R0


@pytest.mark.parametrize("ratio", [0.01, 0.05, 0.1])
def test_R0_estimate_close_to_resonant_amplitude(ratio):
    model = PhysicalModel(gamma=1.0, kappa=100.0, kappa_r=50.0, coupling_strength=5e6, delta_c_slope=100.0 * ratio)
    eps = np.linspace(-10, 10, 401)
    est = estimate_R0(ModelCurve(model, 1.0), ModelCurve(model, -1.0), eps)
    true = np.sqrt(reflectance_eq1(derive_lineshape(model, 0.0), eps))
    assert np.max(np.abs(est / true - 1)) < 1e-2


def test_R0_of_identical_curves():
    y = np.linspace(0, 1, 11) ** 2
    assert np.allclose(estimate_R0(y, y), np.sqrt(y), rtol=1e-15)


def test_R0_with_one_zero_curve():
    y = np.linspace(0.1, 1, 11)
    assert np.allclose(estimate_R0(y, np.zeros_like(y)), 0.5 * np.sqrt(y), rtol=1e-15)


def test_R0_returns_function_for_callables(superradiant):
    f = estimate_R0(ModelCurve(superradiant, 1.0), ModelCurve(superradiant, -1.0))
    assert callable(f)
    assert f(np.array([0.0])).shape == (1,)


def test_R0_needs_both_curves(superradiant):
    with pytest.raises(DataError):
        estimate_R0(ModelCurve(superradiant, 1.0), None)


# ---------------------------------------------------------------- xi


def test_xi_anchor(canonical):
    # intensity 0.25, |R(0)| = r_n = 0.5, tail sqrt(sigma0) = sqrt(0.5)
    lp = derive_lineshape(canonical, 2.0)
    xc = compute_xi(np.array([reflectance_eq1(lp, 0.0)]), np.array([0.5]), math.sqrt(lp.sigma0))
    assert xc.xi[0] == pytest.approx(-1 / math.sqrt(2), abs=1e-15)
    assert xc.xi[0] == pytest.approx(math.cos(lp.phi - math.pi / 2), abs=1e-15)
    assert xc.valid[0]


def test_xi_extremes():
    r0, tail = np.array([0.3, 0.7]), 0.4
    assert np.allclose(compute_xi((r0 + tail) ** 2, r0, tail).xi, 1.0, atol=1e-15)
    assert np.allclose(compute_xi((r0 - tail) ** 2, r0, tail).xi, -1.0, atol=1e-15)


def test_xi_flags_and_clamps():
    r0 = np.array([1.0, 1.0, 1e-3])
    xc = compute_xi(np.array([10.0, 1.0, 1.0]), r0, 0.5)
    assert xc.xi[0] == pytest.approx(1.05)
    assert list(xc.valid) == [False, True, False]


def test_xi_rejects_zero_tail():
    with pytest.raises(FitError):
        compute_xi(np.ones(3), np.ones(3), 0.0)


models = st.builds(
    lambda g, k, cs, sl: PhysicalModel(gamma=g, kappa=k, kappa_r=k / 2, coupling_strength=cs, delta_c_slope=sl),
    st.floats(0.1, 10.0), st.floats(1.0, 100.0), st.floats(0.1, 1e5), st.floats(0.05, 20.0),
)


@settings(max_examples=60, deadline=None)
@given(models, st.sampled_from(ANGLES))
def test_xi_identity(model, angle):
    eps = np.linspace(-20, 20, 801)
    lp = derive_lineshape(model, angle)
    ch = decompose_channels(lp, eps)
    xc = compute_xi(reflectance_eq1(lp, eps), ch.r_n, ch.r_c)
    expected = np.cos(lp.phi + ch.phi_n)
    # the numerator cancels intensities of size ~1 before division by
    # 2 r0 T, so round-off is amplified by that condition number
    intensity = reflectance_eq1(lp, eps)
    cond = (intensity + ch.r_n**2 + ch.r_c**2) / (2 * ch.r_n * ch.r_c)
    tol = np.maximum(1e-12, 1e-14 * cond)
    assert np.all((np.abs(xc.xi - expected) < tol)[xc.valid])
    assert np.all(np.abs(xc.raw[xc.valid]) <= 1 + 1e-9)


# ---------------------------------------------------------------- fit_phase


@pytest.mark.parametrize("fixture", ["canonical", "superradiant"])
def test_cosine_fit_inverts_exact_xi(fixture, request):
    model = request.getfixturevalue(fixture)
    eps = np.linspace(-10, 10, 401)
    xi, valid, phis = exact_xi(model, ANGLES, eps)
    pc = fit_phase(eps, xi, valid, phis, n_boot=0)
    sel = np.abs(eps) <= 5
    assert pc.valid[sel].all()
    assert np.max(np.abs(pc.phi_n - bound_state_phase(eps))[sel]) < 1e-6
    assert pc.phi_n[200] == pytest.approx(-math.pi / 2, abs=1e-9)


def test_cosine_fit_needs_three_angles(superradiant):
    eps = np.linspace(-2, 2, 5)
    xi, valid, phis = exact_xi(superradiant, [1.0, 2.0], eps)
    pc = fit_phase(eps, xi, valid, phis, n_boot=0)
    assert not pc.valid.any()
    assert np.all(np.isnan(pc.phi_n))
    assert list(pc.n_angles) == [2] * 5


def test_flat_objective_is_flagged(superradiant):
    eps = np.linspace(-2, 2, 5)
    xi, valid, phis = exact_xi(superradiant, ANGLES, eps)
    pc = fit_phase(eps, xi, valid, phis, weights=np.full(xi.shape, 1e-6), n_boot=0)
    assert not pc.valid.any()
    assert np.all(np.isfinite(pc.phi_n))


def test_phase_range_and_band(superradiant):
    eps = np.linspace(-10, 10, 101)
    xi, valid, phis = exact_xi(superradiant, ANGLES, eps)
    rng = np.random.default_rng(0)
    pc = fit_phase(eps, xi + 0.02 * rng.standard_normal(xi.shape), valid, phis, n_boot=100, seed=1)
    ok = pc.valid
    assert np.all((pc.phi_n[ok] > -math.pi) & (pc.phi_n[ok] <= math.pi))
    assert np.all(pc.err_lo[ok] >= 0) and np.all(pc.err_hi[ok] >= 0)
    assert np.median(pc.err_lo[ok] + pc.err_hi[ok]) > 0
    again = fit_phase(eps, xi + 0.02 * np.random.default_rng(0).standard_normal(xi.shape), valid, phis, n_boot=100, seed=1)
    assert np.array_equal(pc.err_lo, again.err_lo, equal_nan=True)


def test_phase_curve_serialisation(superradiant):
    eps = np.linspace(-3, 3, 31)
    xi, valid, phis = exact_xi(superradiant, ANGLES, eps)
    pc = fit_phase(eps, xi, valid, phis, n_boot=10)
    back = PhaseCurve.from_dict(pc.to_dict())
    assert np.array_equal(back.phi_n, pc.phi_n) and np.array_equal(back.valid, pc.valid)
    assert back.id == pc.id
    header, *rows = pc.to_text().strip().split("\n")
    assert header.split()[1:] == ["epsilon", "phi_n", "err_lo", "err_hi", "valid"]
    assert len(rows) == 31


# ---------------------------------------------------------------- pipeline


def test_pipeline_noiseless(superradiant, grid):
    ret = retrieve_phase(noiseless_curves(superradiant, ANGLES, grid), phi_of(superradiant), grid, n_boot=0)
    pc = ret.phase
    sel = np.abs(grid) <= 5
    assert pc.valid[sel].all()
    assert np.max(np.abs(pc.phi_n - bound_state_phase(grid))[sel]) < 1e-3
    assert pc.phi_n[200] == -math.pi / 2


def test_pipeline_with_noise(superradiant, grid):
    curves = {
        a: fit_rational(synthesize(superradiant, a, grid, exposure=1e5, baseline=10.0, seed=int(a + 10)))
        for a in ANGLES
    }
    pc = retrieve_phase(curves, phi_of(superradiant), grid, n_boot=50).phase
    sel = np.abs(grid) <= 3
    err = np.abs(pc.phi_n - bound_state_phase(grid))
    assert np.all(~pc.valid[sel] | (err[sel] < 0.3))


def test_adding_angles_never_hurts(superradiant):
    eps = np.linspace(-10, 10, 401)
    prev = None
    for n in (2, 3, 4, 5):
        angles = [s * k for k in range(1, n + 1) for s in (1.0, -1.0)]
        curves = {a: ModelCurve(superradiant, a) for a in angles}
        pc = retrieve_phase(curves, phi_of(superradiant), eps, weighting="uniform", n_boot=0).phase
        err = np.where(pc.valid, np.abs(pc.phi_n - bound_state_phase(eps)), np.nan)
        if prev is not None:
            both = np.isfinite(err) & np.isfinite(prev)
            assert np.all(err[both] <= prev[both] + 1e-12)
        prev = err


def test_phase_is_continuous(superradiant, grid):
    for seed in (0, 1):
        curves = {
            a: fit_rational(synthesize(superradiant, a, grid, exposure=1e5, seed=seed * 100 + int(a + 10)))
            for a in ANGLES
        }
        pc = retrieve_phase(curves, phi_of(superradiant), grid, n_boot=0).phase
        idx = np.nonzero(pc.valid)[0]
        runs = np.split(idx, np.nonzero(np.diff(idx) > 1)[0] + 1)
        for run in runs:
            assert np.all(np.abs(np.diff(pc.phi_n[run])) < 0.5)


def test_pipeline_needs_reference_angles(superradiant, grid):
    curves = noiseless_curves(superradiant, [2.0, 3.0, -2.0, -3.0, -1.0], grid)
    with pytest.raises(DataError, match=r"missing \+1"):
        retrieve_phase(curves, phi_of(superradiant), grid)


def test_pipeline_needs_three_angles(superradiant, grid):
    curves = noiseless_curves(superradiant, [1.0, -1.0], grid)
    with pytest.raises(DataError, match="at least 3"):
        retrieve_phase(curves, phi_of(superradiant), grid)


# ---------------------------------------------------------------- rho_eg


@pytest.fixture
def exact_phase(superradiant, grid):
    xi, valid, phis = exact_xi(superradiant, ANGLES, grid)
    return fit_phase(grid, xi, valid, phis, n_boot=0)


def test_rho_magnitude_is_lorentzian_amplitude(superradiant, grid, exact_phase):
    spec = synthesize(superradiant, 0.0, grid, exposure=1e5, noiseless=True)
    rho = reconstruct_rho_eg(spec, exact_phase, baseline=0.0)
    assert np.allclose(np.abs(rho.rho), 1 / np.sqrt(1 + grid**2), rtol=1e-6, atol=0)
    assert np.argmax(np.abs(rho.rho)) == 200


def test_rho_with_fitted_baseline(superradiant, grid, exact_phase):
    spec = synthesize(superradiant, 0.0, grid, exposure=1e5, baseline=50.0, noiseless=True)
    rho = reconstruct_rho_eg(spec, exact_phase)
    assert rho.baseline == pytest.approx(50.0, rel=1e-6)
    assert np.allclose(np.abs(rho.rho), 1 / np.sqrt(1 + grid**2), rtol=1e-6, atol=0)


def test_rho_phase_and_symmetry(superradiant, grid, exact_phase):
    spec = synthesize(superradiant, 0.0, grid, exposure=1e5, noiseless=True)
    rho = reconstruct_rho_eg(spec, exact_phase, baseline=0.0).rho
    assert np.angle(rho[200]) == pytest.approx(-math.pi / 2, abs=1e-9)
    assert np.allclose(rho, -np.conj(rho[::-1]), rtol=0, atol=1e-6)


def test_rho_from_pipeline_phase(superradiant, grid):
    ret = retrieve_phase(noiseless_curves(superradiant, ANGLES, grid), phi_of(superradiant), grid, n_boot=0)
    spec = synthesize(superradiant, 0.0, grid, exposure=1e5, noiseless=True)
    rho = reconstruct_rho_eg(spec, ret.phase, baseline=0.0)
    assert np.angle(rho.rho[200]) == -math.pi / 2
    assert rho.phase_source == ret.phase.id
    assert rho.magnitude_source == spec.content_hash()


def test_rho_clips_below_baseline(superradiant, grid, exact_phase):
    spec = synthesize(superradiant, 0.0, grid, exposure=1e3, baseline=0.0, seed=1)
    rho = reconstruct_rho_eg(spec, exact_phase, baseline=200.0)
    assert rho.clipped.any()
    assert np.all(rho.rho[rho.clipped] == 0)
    assert not rho.valid[rho.clipped].any()
    assert rho.notes


def test_rho_rejects_energy_grid(superradiant, exact_phase):
    spec = synthesize(superradiant, 0.0, np.linspace(-1e5, 1e5, 401), noiseless=True, units="energy")
    with pytest.raises(DataError):
        reconstruct_rho_eg(spec, exact_phase, baseline=0.0)


def test_rho_rejects_short_spectrum(superradiant, exact_phase):
    spec = synthesize(superradiant, 0.0, np.linspace(-5, 5, 201), noiseless=True)
    with pytest.raises(DataError, match="beyond"):
        reconstruct_rho_eg(spec, exact_phase, baseline=0.0)


def test_rho_from_estimated_amplitude(superradiant, grid, exact_phase):
    r0 = estimate_R0(ModelCurve(superradiant, 1.0), ModelCurve(superradiant, -1.0), grid)
    rho = rho_from_amplitude(grid, r0, exact_phase)
    assert np.abs(rho.rho).max() == pytest.approx(1.0)
    assert np.allclose(np.abs(rho.rho), 1 / np.sqrt(1 + grid**2), rtol=1e-3)
    header, *_ = rho.to_text().split("\n")
    assert header == "# epsilon abs phase re im valid"


def test_continuum_floor_flags_far_wings(superradiant):
    eps = np.linspace(-200, 200, 801)
    curves = {a: ModelCurve(superradiant, a) for a in ANGLES}
    floor = math.sqrt(derive_lineshape(superradiant, 1.0).sigma0)
    ret = retrieve_phase(curves, phi_of(superradiant), eps, weighting="uniform", n_boot=0)
    flagged = ~ret.phase.valid
    assert not flagged[np.abs(eps) <= 10].any()
    assert flagged[np.abs(eps) >= 100].all()
    bare = retrieve_phase(curves, phi_of(superradiant), eps, weighting="uniform", n_boot=0, continuum_margin=0.0)
    # the margin only adds flags, and only where R0 sits near the continuum tail
    extra = flagged & bare.phase.valid
    assert extra.any() and not (bare.phase.valid == False)[~flagged].any()
    assert np.all(ret.r0[extra] <= 2 * floor)
