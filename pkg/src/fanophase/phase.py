"""
Interferometric retrieval of the nuclear phase and assembly of rho_eg.

With the reflectance written as two interfering arms,
|R(dtheta, eps)|^2 = |r_c(dtheta) e^{-i phi} + r_n(eps) e^{i phi_N}|^2,
the normalised cross term

    xi = (|R(dtheta, eps)|^2 - |R(0, eps)|^2 - |R(dtheta, inf)|^2)
         / (2 |R(0, eps)| |R(dtheta, inf)|)

equals cos(phi(dtheta) + phi_N(eps)). With phi(dtheta) known from the cavity
model, phi_N follows per energy from a cosine fit over all angles.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DataError, FitError
from .spectra import Spectrum

#: points with |R(0, eps)| below this fraction of its maximum are flagged
CONDITIONING = 1e-2
#: xi values are clamped to [-1 - XI_SLACK, 1 + XI_SLACK]; points outside are flagged
XI_SLACK = 0.05
#: |R(0, eps)| estimated from +-1 urad carries their continuum amplitude,
#: which does not vanish at large |eps|; points where the estimate is not
#: at least this multiple of that floor are flagged
CONTINUUM_MARGIN = 2.0
N_SCAN = 721
FLAT_OBJECTIVE = 1e-3
MIN_ANGLES = 3

_SCAN = np.linspace(-math.pi, math.pi, N_SCAN)
_STEP = _SCAN[1] - _SCAN[0]


def _wrap(phase):
    """Map onto (-pi, pi]."""
    w = np.mod(np.asarray(phase, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    return np.where(w == -math.pi, math.pi, w)


def _digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


@dataclass
class PhaseCurve:
    epsilon: np.ndarray
    phi_n: np.ndarray
    err_lo: np.ndarray
    err_hi: np.ndarray
    valid: np.ndarray
    n_angles: np.ndarray = None
    method: str = "cosine scan + residual bootstrap"

    @property
    def id(self):
        return _digest(self.epsilon, self.phi_n, self.valid.astype(float))

    def to_dict(self):
        return {
            "id": self.id,
            "method": self.method,
            "epsilon": self.epsilon.tolist(),
            "phi_n": [None if not math.isfinite(v) else float(v) for v in self.phi_n],
            "err_lo": [None if not math.isfinite(v) else float(v) for v in self.err_lo],
            "err_hi": [None if not math.isfinite(v) else float(v) for v in self.err_hi],
            "valid": [bool(v) for v in self.valid],
            "n_angles": [int(v) for v in self.n_angles],
        }

    @classmethod
    def from_dict(cls, d):
        f = lambda xs: np.array([math.nan if v is None else v for v in xs], dtype=float)  # noqa: E731
        return cls(
            epsilon=np.array(d["epsilon"], dtype=float),
            phi_n=f(d["phi_n"]),
            err_lo=f(d["err_lo"]),
            err_hi=f(d["err_hi"]),
            valid=np.array(d["valid"], dtype=bool),
            n_angles=np.array(d["n_angles"], dtype=int),
            method=d.get("method", ""),
        )

    def to_text(self):
        lines = ["# epsilon phi_n err_lo err_hi valid"]
        for row in zip(self.epsilon, self.phi_n, self.err_lo, self.err_hi, self.valid):
            lines.append(f"{row[0]:.10g} {row[1]:.10g} {row[2]:.6g} {row[3]:.6g} {int(row[4])}")
        return "\n".join(lines) + "\n"


@dataclass
class RhoEgEstimate:
    """rho_eg(eps) up to a global positive scale (max |rho_eg| = 1) and phase."""

    epsilon: np.ndarray
    rho: np.ndarray
    valid: np.ndarray
    clipped: np.ndarray
    magnitude_source: str
    phase_source: str
    baseline: float = 0.0
    notes: list = field(default_factory=list)

    @property
    def magnitude(self):
        return np.abs(self.rho)

    @property
    def phase(self):
        return np.angle(self.rho)

    def to_dict(self):
        def fin(xs):
            return [None if not math.isfinite(v) else float(v) for v in xs]

        return {
            "epsilon": self.epsilon.tolist(),
            "re": fin(self.rho.real),
            "im": fin(self.rho.imag),
            "abs": fin(np.abs(self.rho)),
            "phase": fin(np.angle(self.rho)),
            "valid": [bool(v) for v in self.valid],
            "clipped": [bool(v) for v in self.clipped],
            "magnitude_source": self.magnitude_source,
            "phase_source": self.phase_source,
            "baseline": self.baseline,
            "notes": list(self.notes),
        }

    def to_text(self):
        lines = ["# epsilon abs phase re im valid"]
        for e, r, v in zip(self.epsilon, self.rho, self.valid):
            lines.append(f"{e:.10g} {abs(r):.10g} {np.angle(r):.10g} {r.real:.10g} {r.imag:.10g} {int(v)}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- R(0, eps)


def _amplitude(curve, eps):
    vals = curve(eps) if callable(curve) else np.asarray(curve, dtype=float)
    return np.sqrt(np.clip(vals, 0.0, None))


def estimate_R0(curve_plus, curve_minus, epsilon=None):
    """|R(0, eps)| as the mean of the amplitudes at +dtheta and -dtheta.

    Curves are normalised intensities, either callables of epsilon (e.g.
    :class:`~fanophase.fitting.RationalFitResult`) or arrays on a common grid.
    Returns an array when ``epsilon`` is given or both curves are arrays,
    otherwise a function of epsilon.
    """
    if curve_plus is None or curve_minus is None:
        raise DataError("estimating |R(0, eps)| needs curves at both +1 and -1 urad")

    def r0(eps):
        return 0.5 * (_amplitude(curve_plus, eps) + _amplitude(curve_minus, eps))

    if epsilon is None:
        if not callable(curve_plus) and not callable(curve_minus):
            return r0(None)
        return r0
    return r0(np.asarray(epsilon, dtype=float))


# ---------------------------------------------------------------- xi


@dataclass
class XiCurve:
    xi: np.ndarray
    valid: np.ndarray
    raw: np.ndarray


def compute_xi(intensity, r0, tail_value, conditioning=CONDITIONING, slack=XI_SLACK) -> XiCurve:
    """Normalised interference term for one angle.

    ``intensity`` is |R(dtheta, eps)|^2, ``r0`` is |R(0, eps)| (both arrays on
    one epsilon grid) and ``tail_value`` is the amplitude |R(dtheta, +-inf)|.
    Points where r0 falls below ``conditioning * max(r0)`` or where xi leaves
    [-1 - slack, 1 + slack] are flagged; xi is clamped to that interval.
    """
    intensity = np.asarray(intensity, dtype=float)
    r0 = np.asarray(r0, dtype=float)
    if intensity.shape != r0.shape:
        raise ValueError("intensity and r0 must share one grid")
    if not tail_value > 0 or not math.isfinite(tail_value):
        raise FitError("tail value |R(dtheta, inf)| is zero; angle too close to theta_min")
    rmax = float(np.max(r0)) if r0.size else 0.0
    if not rmax > 0:
        raise FitError("|R(0, eps)| vanishes everywhere")
    ok = r0 >= conditioning * rmax
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = (intensity - r0 * r0 - tail_value * tail_value) / (2.0 * r0 * tail_value)
    ok &= np.isfinite(raw) & (np.abs(raw) <= 1.0 + slack)
    xi = np.clip(np.where(np.isfinite(raw), raw, 0.0), -1.0 - slack, 1.0 + slack)
    return XiCurve(xi=xi, valid=ok, raw=raw)


def xi_variance(var_intensity, r0, tail_value):
    """First-order variance of xi from the variance of |R(dtheta, eps)|^2."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.asarray(var_intensity) / (2.0 * np.asarray(r0) * tail_value) ** 2


# ---------------------------------------------------------------- cosine fit


def _scan_objective(xi, phis, w):
    """Sum_k w_k (xi_k - cos(phi_k + p))^2 on the scan grid; xi, w: (K, ...)."""
    c = np.cos(phis[:, None] + _SCAN[None, :])  # (K, S)
    return (
        np.sum(w * xi * xi, axis=0)[..., None]
        - 2.0 * np.einsum("k...,ks->...s", w * xi, c)
        + np.einsum("k...,ks->...s", w, c * c)
    )


def _refine(xi, phis, w, p0):
    def f(p):
        return float(np.sum(w * (xi - np.cos(phis + p)) ** 2))

    res = minimize_scalar(f, bounds=(p0 - _STEP, p0 + _STEP), method="bounded", options={"xatol": 1e-13})
    return res.x if res.fun <= f(p0) else p0


def _parabolic(obj, idx):
    """Sub-grid minimum of a scan by three-point parabola (vectorised)."""
    n = obj.shape[-1]
    im = np.clip(idx - 1, 0, n - 1)
    ip = np.clip(idx + 1, 0, n - 1)
    take = lambda j: np.take_along_axis(obj, j[..., None], -1)[..., 0]  # noqa: E731
    y0, y1, y2 = take(im), take(idx), take(ip)
    den = y0 - 2.0 * y1 + y2
    with np.errstate(divide="ignore", invalid="ignore"):
        shift = np.where(den > 0, 0.5 * (y0 - y2) / den, 0.0)
    return _SCAN[idx] + np.clip(shift, -1.0, 1.0) * _STEP


def fit_phase(epsilon, xi, valid, phis, weights=None, n_boot=200, seed=0) -> PhaseCurve:
    """Per-energy cosine fit phi_N = argmin sum_k w_k [xi_k - cos(phi_k + phi_N)]^2.

    Parameters
    ----------
    epsilon : (N,) grid
    xi, valid : (K, N) arrays, one row per angle
    phis : (K,) continuum phase phi(dtheta_k)
    weights : (K, N) optional non-negative weights (default uniform)
    n_boot : residual-bootstrap replicas for the error band (0 disables)

    A 721-point scan over [-pi, pi] locates the global minimum, refined by a
    bounded scalar search. Points with fewer than three valid angles are
    NaN and invalid; points whose objective varies by less than 1e-3 over
    the scan are flagged invalid.
    """
    epsilon = np.asarray(epsilon, dtype=float)
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    valid = np.atleast_2d(np.asarray(valid, dtype=bool))
    phis = np.asarray(phis, dtype=float)
    n_ang, n_eps = xi.shape
    if valid.shape != xi.shape or phis.shape != (n_ang,) or epsilon.shape != (n_eps,):
        raise ValueError("inconsistent shapes for xi / valid / phis / epsilon")
    w = np.ones_like(xi) if weights is None else np.asarray(weights, dtype=float).copy()
    w = np.where(valid & np.isfinite(w) & (w > 0), w, 0.0)
    n_valid = np.count_nonzero(w > 0, axis=0)

    phi_n = np.full(n_eps, math.nan)
    err_lo = np.full(n_eps, math.nan)
    err_hi = np.full(n_eps, math.nan)
    ok = n_valid >= MIN_ANGLES

    obj = _scan_objective(xi, phis, w).reshape(n_eps, N_SCAN) if n_ang else np.zeros((n_eps, N_SCAN))
    flat = (obj.max(axis=1) - obj.min(axis=1)) < FLAT_OBJECTIVE
    rng = np.random.default_rng(seed)
    for j in np.nonzero(ok)[0]:
        sel = w[:, j] > 0
        x_j, p_j, w_j = xi[sel, j], phis[sel], w[sel, j]
        best = _refine(x_j, p_j, w_j, _SCAN[int(np.argmin(obj[j]))])
        phi_n[j] = float(_wrap(best))
        if n_boot > 0:
            resid = x_j - np.cos(p_j + best)
            draws = rng.integers(0, resid.size, size=(n_boot, resid.size))
            xb = (np.cos(p_j + best)[None, :] + resid[draws]).T  # (K, B)
            ob = _scan_objective(xb, p_j, np.broadcast_to(w_j[:, None], xb.shape))
            pb = _parabolic(ob, np.argmin(ob, axis=-1))
            dev = _wrap(pb - best)
            lo, hi = np.percentile(dev, [15.865525393145708, 84.13447460685429])
            err_lo[j] = max(-lo, 0.0)
            err_hi[j] = max(hi, 0.0)
        else:
            err_lo[j] = err_hi[j] = 0.0
    return PhaseCurve(
        epsilon=epsilon,
        phi_n=phi_n,
        err_lo=err_lo,
        err_hi=err_hi,
        valid=ok & ~flat,
        n_angles=n_valid,
    )


# ---------------------------------------------------------------- pipeline


@dataclass
class Retrieval:
    """Intermediate products of :func:`retrieve_phase`."""

    phase: PhaseCurve
    angles: np.ndarray
    phis: np.ndarray
    r0: np.ndarray
    xi: np.ndarray
    xi_valid: np.ndarray
    weights: np.ndarray


def retrieve_phase(curves, phi_of_angle, epsilon, reference_angle=1.0, weighting="inverse-variance",
                   n_boot=200, seed=0, conditioning=CONDITIONING,
                   continuum_margin=CONTINUUM_MARGIN) -> Retrieval:
    """Full cosine-fit pipeline from normalised per-angle curves.

    ``curves`` maps angle (urad) -> normalised rational fit. The curves at
    +-``reference_angle`` provide |R(0, eps)|; every curve at a non-zero
    angle contributes a xi row. ``phi_of_angle`` is a callable or mapping
    giving the continuum phase for each angle.

    Besides the conditioning cut of :func:`compute_xi`, energies where the
    |R(0, eps)| estimate does not exceed ``continuum_margin`` times the
    larger asymptotic amplitude of the two reference curves are flagged:
    there the estimate is dominated by the reference continuum rather than
    by the resonant line (0 disables the cut).
    """
    epsilon = np.asarray(epsilon, dtype=float)
    curves = {float(k): v for k, v in curves.items()}
    plus = curves.get(float(reference_angle))
    minus = curves.get(-float(reference_angle))
    if plus is None or minus is None:
        raise DataError(
            f"|R(0, eps)| is estimated from the fits at +-{reference_angle:g} urad; "
            f"missing {'+' if plus is None else '-'}{reference_angle:g} urad"
        )
    r0 = estimate_R0(plus, minus, epsilon)
    above_floor = r0 > continuum_margin * max(plus.tail_amplitude(), minus.tail_amplitude())
    angles = np.array(sorted(a for a in curves if a != 0.0))
    if angles.size < MIN_ANGLES:
        raise DataError(f"phase retrieval needs at least {MIN_ANGLES} non-zero angles, got {angles.size}")
    get_phi = phi_of_angle if callable(phi_of_angle) else (lambda a: phi_of_angle[a])
    phis = np.array([get_phi(a) for a in angles], dtype=float)

    xi = np.empty((angles.size, epsilon.size))
    ok = np.empty_like(xi, dtype=bool)
    var = np.full_like(xi, math.nan)
    for k, a in enumerate(angles):
        curve = curves[a]
        tail = curve.tail_amplitude()
        xc = compute_xi(curve(epsilon), r0, tail, conditioning=conditioning)
        xi[k], ok[k] = xc.xi, xc.valid & above_floor
        if weighting == "inverse-variance" and hasattr(curve, "variance"):
            var[k] = xi_variance(curve.variance(epsilon), r0, tail)

    if weighting == "inverse-variance" and np.all(np.isfinite(var[ok])) and np.all(var[ok] > 0):
        weights = np.where(ok, 1.0 / np.where(ok, var, 1.0), 0.0)
        # per-energy normalisation keeps the flatness test scale-free
        colmax = weights.max(axis=0)
        weights = np.where(colmax > 0, weights / np.where(colmax > 0, colmax, 1.0), 0.0)
    else:
        weights = ok.astype(float)
    phase = fit_phase(epsilon, xi, ok, phis, weights, n_boot=n_boot, seed=seed)
    return Retrieval(phase, angles, phis, r0, xi, ok, weights)


def reconstruct_rho_eg(theta_min_spectrum: Spectrum, phase: PhaseCurve, baseline=None, noise_floor=3.0) -> RhoEgEstimate:
    """rho_eg(eps) ~ sigma_eg(eps) e^{i phi_N(eps)}, normalised to max |rho_eg| = 1.

    The magnitude is sqrt(counts - baseline) of the spectrum at theta_min,
    interpolated onto the phase grid. ``baseline=None`` takes it from a
    Fano fit of that spectrum. Negative counts-after-baseline are clipped to
    zero and flagged; beyond ``noise_floor`` sigma they are also noted.
    """
    spec = theta_min_spectrum
    if spec.units != "epsilon":
        raise DataError("theta_min spectrum must be on an epsilon grid (see fitting.to_epsilon)")
    notes = []
    if baseline is None:
        from .fitting import fit_fano

        baseline = fit_fano(spec, n_starts=8, seed=0).baseline
    x, y, s = spec.unmasked()
    eps = phase.epsilon
    if eps.min() < x.min() or eps.max() > x.max():
        raise DataError("phase grid extends beyond the theta_min spectrum")
    net = np.interp(eps, x, y - baseline)
    sig = np.interp(eps, x, s)
    clipped = net < 0
    if np.any(net < -noise_floor * sig):
        notes.append("counts below baseline beyond the noise floor were clipped to zero")
    mag = np.sqrt(np.where(clipped, 0.0, net))
    peak = mag.max()
    if not peak > 0:
        raise DataError("theta_min spectrum has no signal above baseline")
    mag = mag / peak
    phi = np.where(phase.valid, phase.phi_n, math.nan)
    rho = mag * np.exp(1j * phi)
    rho = np.where(clipped, 0.0 + 0.0j, rho)
    return RhoEgEstimate(
        epsilon=eps.copy(),
        rho=rho,
        valid=phase.valid & ~clipped,
        clipped=clipped,
        magnitude_source=str(spec.meta.get("source_id", spec.content_hash())),
        phase_source=phase.id,
        baseline=float(baseline),
        notes=notes,
    )


def rho_from_amplitude(epsilon, amplitude, phase: PhaseCurve, source="estimated |R(0, eps)|") -> RhoEgEstimate:
    """rho_eg from an amplitude array on the phase grid (no theta_min spectrum)."""
    amplitude = np.asarray(amplitude, dtype=float)
    peak = amplitude.max()
    if not peak > 0:
        raise DataError("amplitude vanishes everywhere")
    phi = np.where(phase.valid, phase.phi_n, math.nan)
    return RhoEgEstimate(
        epsilon=np.asarray(epsilon, dtype=float).copy(),
        rho=amplitude / peak * np.exp(1j * phi),
        valid=phase.valid.copy(),
        clipped=np.zeros(amplitude.shape, dtype=bool),
        magnitude_source=source,
        phase_source=phase.id,
        notes=["magnitude from the mean of the +-reference-angle amplitudes"],
    )


def write_json(obj, path):
    Path(path).write_text(json.dumps(obj.to_dict(), sort_keys=True, indent=1, allow_nan=False) + "\n", encoding="utf-8")
