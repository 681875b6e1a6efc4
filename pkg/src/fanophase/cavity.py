"""
Forward model of a thin-film x-ray cavity with an embedded layer of resonant
nuclei.

Units
-----
All rates and detunings are dimensionless multiples of the natural nuclear
line width gamma (so ``gamma = 1`` in the usual convention). Angles are in
microradians. Conversion to physical units (neV, keV) happens only in the
configuration layer, see :data:`GAMMA_NEV` and :data:`OMEGA0_KEV`.

The reflectance is available in three algebraically equivalent forms:

* :func:`reflectance_eq1` -- continuum amplitude plus Lorentzian bound state,
* :func:`reflectance_fano` -- Fano profile with complex ``q``,
* :func:`reflectance_io` -- complex amplitude ``R_C + R_N`` of the
  input-output treatment (valid away from critical coupling as well).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

#: natural line width of the 14.4 keV transition of 57Fe, in neV
GAMMA_NEV = 4.7
#: transition energy of 57Fe, in keV
OMEGA0_KEV = 14.4

_CRITICAL_RTOL = 1e-12


@dataclass(frozen=True)
class PhysicalModel:
    """Nuclear and cavity constants; the single source of truth for the model.

    ``coupling_strength`` is the lumped product (2/3)|g|^2 N, the only way
    the coupling constant and the number of nuclei enter the formulas.
    ``delta_c_slope`` linearises the cavity detuning around ``theta_min``:
    Delta_C = delta_c_slope * (theta - theta_min).
    """

    gamma: float = 1.0
    omega0: float = 0.0
    kappa: float = 50.0
    kappa_r: float = 25.0
    coupling_strength: float = 250.0
    delta_c_slope: float = 20.0
    theta_min: float = 0.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.kappa_r <= 0:
            raise ValueError("kappa_r must be positive")
        if self.coupling_strength < 0:
            raise ValueError("coupling_strength must be non-negative")

    @property
    def critical_coupling(self) -> bool:
        return abs(self.kappa - 2.0 * self.kappa_r) <= _CRITICAL_RTOL * self.kappa

    def delta_c(self, delta_theta):
        return self.delta_c_slope * delta_theta

    def model_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class LineshapeParams:
    """Per-angle line-shape quantities derived from a :class:`PhysicalModel`.

    At Delta_C = 0 the real part of ``q`` is stored as ``+inf`` and ``phi``
    takes its limiting value 0; all reflectance routines use forms that stay
    finite there.
    """

    delta_theta: float
    delta_c: float
    sigma0: float
    delta_ls: float
    gamma_sr: float
    gamma_total: float
    q: complex
    phi: float
    gamma: float = 1.0

    @property
    def bound_weight(self) -> float:
        """gamma_SR / Gamma, the weight of the nuclear amplitude."""
        return self.gamma_sr / self.gamma_total

    @property
    def loss_ratio(self) -> float:
        """gamma / Gamma = Im(q)."""
        return self.gamma / self.gamma_total

    @property
    def scaled_q_re(self) -> float:
        """sqrt(sigma0) * Re(q), finite also at Delta_C = 0.

        Uses kappa/sqrt(kappa^2 + Delta_C^2) = sqrt(1 - sigma0), so the
        cavity loss rate is not needed. The sign at Delta_C = 0 follows the
        ``+inf`` convention and never matters since sigma0 vanishes there.
        """
        sign = -1.0 if self.delta_c < 0 else 1.0
        return sign * self.bound_weight * math.sqrt(1.0 - self.sigma0)


@dataclass(frozen=True)
class ChannelDecomposition:
    r_c: float
    r_n: np.ndarray
    phi: float
    phi_n: np.ndarray

    def amplitude(self):
        """r_c e^{-i phi} + r_n e^{i phi_N}"""
        return self.r_c * np.exp(-1j * self.phi) + self.r_n * np.exp(1j * self.phi_n)


def continuum_phase(kappa, delta_c):
    """arg(kappa/Delta_C - i) without dividing by Delta_C; 0 at Delta_C = 0."""
    if delta_c == 0:
        return 0.0
    return math.atan2(-abs(delta_c), math.copysign(kappa, delta_c))


def derive_lineshape(model: PhysicalModel, delta_theta: float) -> LineshapeParams:
    """Collective Lamb shift, superradiant width, Fano q and continuum phase
    at relative incidence angle ``delta_theta`` (microradians)."""
    delta_theta = float(delta_theta)
    if not math.isfinite(delta_theta):
        raise ValueError("delta_theta must be finite")
    kappa = model.kappa
    dc = model.delta_c(delta_theta)
    denom = kappa * kappa + dc * dc
    delta_ls = -model.coupling_strength * dc / denom
    gamma_sr = 2.0 * model.coupling_strength * kappa / denom
    gamma_total = model.gamma + gamma_sr
    sigma0 = dc * dc / denom
    q_im = model.gamma / gamma_total
    if dc == 0:
        q = complex(math.inf, q_im)
    else:
        q = complex(gamma_sr / gamma_total * kappa / dc, q_im)
    return LineshapeParams(
        delta_theta=delta_theta,
        delta_c=dc,
        sigma0=sigma0,
        delta_ls=delta_ls,
        gamma_sr=gamma_sr,
        gamma_total=gamma_total,
        q=q,
        phi=continuum_phase(kappa, dc),
        gamma=model.gamma,
    )


def _as_finite(epsilon, name="epsilon"):
    x = np.asarray(epsilon, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} must be finite")
    return x


def _ret(x):
    return x[()] if x.ndim == 0 else x


def reflectance_eq1(lp: LineshapeParams, epsilon):
    """|sqrt(sigma0) e^{-i phi} + (gamma_SR/Gamma) / (epsilon + i)|^2

    Reflected intensity at critical coupling as a function of the
    dimensionless energy ``epsilon``.
    """
    eps = _as_finite(epsilon)
    amp = math.sqrt(lp.sigma0) * np.exp(-1j * lp.phi) + lp.bound_weight / (eps + 1j)
    return _ret(np.abs(amp) ** 2)


def reflectance_fano(lp: LineshapeParams, epsilon):
    """sigma0 |epsilon + q|^2 / (1 + epsilon^2)

    Evaluated as ((sqrt(sigma0) eps + sqrt(sigma0) Re q)^2
    + sigma0 Im(q)^2) / (1 + eps^2), which is finite at Delta_C = 0.
    """
    eps = _as_finite(epsilon)
    s = math.sqrt(lp.sigma0)
    re = s * eps + lp.scaled_q_re
    im = s * lp.q.imag
    return _ret((re * re + im * im) / (1.0 + eps * eps))


def reflectance_io(model: PhysicalModel, delta_theta: float, detuning):
    """Complex reflection amplitude R = R_C + R_N at probe detuning
    ``detuning`` = omega - omega0 (units of gamma).

    Does not assume critical coupling.
    """
    det = _as_finite(detuning, "detuning")
    lp = derive_lineshape(model, delta_theta)
    cav = model.kappa + 1j * lp.delta_c
    # -1 + 2 kappa_R / cav, written without cancellation for small Delta_C
    r_c = ((2.0 * model.kappa_r - model.kappa) - 1j * lp.delta_c) / cav
    r_n = (
        -2j * model.kappa_r / cav**2
        * model.coupling_strength
        / ((det - lp.delta_ls) + 0.5j * lp.gamma_total)
    )
    return _ret(r_c + r_n)


def decompose_channels(lp: LineshapeParams, epsilon) -> ChannelDecomposition:
    """Split the reflectance into continuum and bound-state arms.

    The relative phase is attributed to the continuum so that the nuclear
    phase ``phi_n = arg(1/(eps + i))`` depends on energy only.
    """
    eps = _as_finite(epsilon)
    r_n = lp.bound_weight / np.sqrt(1.0 + eps * eps)
    phi_n = np.arctan2(-1.0, eps)
    return ChannelDecomposition(
        r_c=math.sqrt(lp.sigma0), r_n=_ret(r_n), phi=lp.phi, phi_n=_ret(phi_n)
    )


def epsilon_to_energy(lp: LineshapeParams, epsilon):
    """omega - omega0 = Delta_LS + epsilon * Gamma / 2"""
    eps = np.asarray(epsilon, dtype=float)
    return _ret(lp.delta_ls + eps * (0.5 * lp.gamma_total))


def energy_to_epsilon(lp: LineshapeParams, energy):
    """epsilon = (omega - omega0 - Delta_LS) / (Gamma / 2)"""
    e = np.asarray(energy, dtype=float)
    return _ret((e - lp.delta_ls) / (0.5 * lp.gamma_total))


def bound_state_phase(epsilon):
    """arg(1/(epsilon + i)), the phase of an ideal two-level Lorentzian."""
    return _ret(np.arctan2(-1.0, np.asarray(epsilon, dtype=float)))
