"""
Fitting synthetic spectra
=========================

A real-q Fano curve describes every spectrum of the model exactly, but its
q is an effective value that mixes Re q and Im q. Fitting a series of
angles then gives the collective Lamb shift and the superradiant width as
functions of the cavity detuning.
"""
# %%
import numpy as np

from fanophase import (
    PhysicalModel,
    derive_lineshape,
    equivalent_real_fano,
    extract_angle_series,
    fit_fano,
    synthesize,
)

model = PhysicalModel(gamma=0.5, kappa=2.0, kappa_r=1.0, coupling_strength=1.0, delta_c_slope=1.0)
lp = derive_lineshape(model, 2.0)
energy = lp.delta_ls + 0.5 * lp.gamma_total * np.linspace(-10, 10, 401)

# %%
truth = equivalent_real_fano(lp, exposure=1e5)
print("physical q:", lp.q, " effective real q:", truth["q_re"])

spec = synthesize(model, 2.0, energy, exposure=1e5, seed=1, units="energy")
fit = fit_fano(spec, n_starts=32, seed=1)
for name in ("x0", "gamma_total", "q_re"):
    print(f"{name:12s} fit {getattr(fit, name):9.5f} +- {fit.errors[name]:.5f}   truth {truth[name]:9.5f}")
print(f"reduced chi2 {fit.reduced_chi2:.3f}")

# %%
# Angle series on the epsilon grid of a strongly coupled cavity.
sr = PhysicalModel(gamma=1.0, kappa=100.0, kappa_r=50.0, coupling_strength=5e6, delta_c_slope=10.0)
results = {}
for a in (-5, -3, -1, 1, 3, 5):
    lpa = derive_lineshape(sr, a)
    e = lpa.delta_ls + 0.5 * lpa.gamma_total * np.linspace(-10, 10, 401)
    results[float(a)] = fit_fano(synthesize(sr, a, e, exposure=1e5, seed=a + 10, units="energy"), seed=0)
series = extract_angle_series(results, delta_c_slope=10.0)
print(series.to_text())
