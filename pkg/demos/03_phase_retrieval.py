"""
Reconstructing the nuclear phase
================================

The empty cavity acts as a reference arm. Its phase is known at each
angle, so fitting xi = cos(phi + phi_N) across angles gives the phase of
the nuclear response, and with the resonant spectrum the complex
coherence rho_eg.
"""
# %%
import sys
from pathlib import Path

import numpy as np

from fanophase import (
    PhysicalModel,
    derive_lineshape,
    fit_rational,
    reconstruct_rho_eg,
    retrieve_phase,
    synthesize,
)
from fanophase.cavity import bound_state_phase
from fanophase.svg import Plot

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo_out")
out.mkdir(parents=True, exist_ok=True)

model = PhysicalModel(gamma=1.0, kappa=100.0, kappa_r=50.0, coupling_strength=5e6, delta_c_slope=1.0)
angles = [-5.0, -4.0, -3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 4.0, 5.0]
eps = np.linspace(-10, 10, 401)

# %%
curves = {
    a: fit_rational(synthesize(model, a, eps, exposure=1e5, baseline=10.0, seed=int(a + 10)))
    for a in angles
}
ret = retrieve_phase(curves, lambda a: derive_lineshape(model, a).phi, eps, n_boot=100)
pc = ret.phase
err = np.abs(pc.phi_n - bound_state_phase(eps))
for lo, hi in [(0, 1), (1, 3), (3, 6), (6, 10.1)]:
    sel = (np.abs(eps) >= lo) & (np.abs(eps) < hi) & pc.valid
    print(f"{lo:4.0f} <= |eps| < {hi:4.1f}: max error {err[sel].max():.4f} rad, "
          f"median band {np.median(pc.err_lo[sel] + pc.err_hi[sel]):.4f}")

# %%
plot = Plot(title="nuclear phase", xlabel="epsilon", ylabel="phi_N (rad)")
plot.band(eps[pc.valid], (pc.phi_n - pc.err_lo)[pc.valid], (pc.phi_n + pc.err_hi)[pc.valid])
plot.line(eps, bound_state_phase(eps), label="arg 1/(eps + i)", dashed=True)
plot.line(eps[pc.valid], pc.phi_n[pc.valid], label="reconstructed")
plot.save(out / "phase.svg")

# %%
resonant = synthesize(model, 0.0, eps, exposure=1e5, baseline=10.0, seed=0)
rho = reconstruct_rho_eg(resonant, pc)
print("phase of rho_eg at eps = 0:", np.angle(rho.rho[200]))
print("max | |rho| - 1/sqrt(1 + eps^2) |:", np.max(np.abs(np.abs(rho.rho) - 1 / np.sqrt(1 + eps**2))))
print("wrote", out / "phase.svg")
