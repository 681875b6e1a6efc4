"""
Least-squares recovery of line-shape parameters from spectra.

Generic Fano fit
----------------
The fitted model is

    f(x) = A * (e + q)^2 / (1 + e^2) + B,    e = (x - x0) / (Gamma / 2)

with real ``q``. Internally the optimiser works with the equivalent form
``C0 + (c1 e + c2) / (1 + e^2)``, which is linear in (C0, c1, c2) and stays
regular in the Lorentzian limit ``q -> inf``. The mapping back is

    r = hypot(c1, c2),  A = (r - c2) / 2,  B = C0 - A,  1/q = (r - c2) / c1.

A complex q of the forward model is not a separate fit parameter: its
imaginary part is absorbed into A, B and an effective real q
(:func:`equivalent_real_fano`).

Rational fit
------------
``R_rat = (a0 + a1 e + a2 e^2) / (1 + b1 e + b2 e^2)`` with the gauge b0 = 1,
normalised affinely so that its extrema map onto [0, 1].
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .cavity import LineshapeParams
from .errors import DataError, FitError
from .spectra import Spectrum

MIN_POINTS = 8
FANO_PARAMS = ("x0", "gamma_total", "q_re", "inv_q", "amplitude", "baseline")

_FTOL = 1e-10
_XTOL = 1e-12
_MAX_NFEV = 500
_GAMMA_RANGE = (0.2, 50.0)
_Q_RANGE = (-10.0, 10.0)


# ---------------------------------------------------------------- helpers


def real_fano_from_linear(c0, c1, c2):
    """(C0, c1, c2) -> (amplitude, q_re, inv_q, baseline), amplitude >= 0."""
    r = math.hypot(c1, c2)
    amp = 0.5 * (r - c2)
    if c1 == 0.0:
        inv_q = 0.0 if c2 >= 0 else math.inf
    elif c2 >= 0:
        inv_q = c1 / (c2 + r)
    else:
        inv_q = (r - c2) / c1
    if inv_q == 0.0:
        q_re = math.inf
    elif math.isinf(inv_q):
        q_re = 0.0
    else:
        q_re = 1.0 / inv_q
    return amp, q_re, inv_q, c0 - amp


def equivalent_real_fano(lp: LineshapeParams, exposure=1.0, baseline=0.0):
    """Parameters a real-q Fano fit converges to for a forward-model spectrum.

    Returns a dict with q_re, inv_q, amplitude, baseline, x0 (= Delta_LS)
    and gamma_total for a spectrum ``exposure * |R|^2 + baseline`` on a raw
    energy grid.
    """
    s = math.sqrt(lp.sigma0)
    u = lp.scaled_q_re
    c0 = lp.sigma0
    c1 = 2.0 * s * u
    c2 = u * u + lp.sigma0 * (lp.q.imag**2 - 1.0)
    amp, q_re, inv_q, base = real_fano_from_linear(c0, c1, c2)
    return {
        "x0": lp.delta_ls,
        "gamma_total": lp.gamma_total,
        "q_re": q_re,
        "inv_q": inv_q,
        "amplitude": exposure * amp,
        "baseline": exposure * base + baseline,
    }


def _fano_linear_model(p, x):
    x0, g, c0, c1, c2 = p
    e = (x - x0) / (0.5 * g)
    d = 1.0 + e * e
    return c0 + (c1 * e + c2) / d


def _fano_jac(p, x):
    x0, g, c0, c1, c2 = p
    e = (x - x0) / (0.5 * g)
    d = 1.0 + e * e
    n = c1 * e + c2
    df_de = (c1 * d - 2.0 * e * n) / (d * d)
    jac = np.empty((x.size, 5))
    jac[:, 0] = df_de * (-2.0 / g)
    jac[:, 1] = df_de * (-e / g)
    jac[:, 2] = 1.0
    jac[:, 3] = e / d
    jac[:, 4] = 1.0 / d
    return jac


def _covariance(jac):
    """(J^T J)^-1 of a sigma-weighted Jacobian via SVD (pseudo-inverse)."""
    _, s, vt = np.linalg.svd(jac, full_matrices=False)
    tol = np.finfo(float).eps * max(jac.shape) * (s[0] if s.size else 0.0)
    inv = np.where(s > tol, 1.0 / np.where(s > tol, s, 1.0) ** 2, 0.0)
    return (vt.T * inv) @ vt


def _check_data(spectrum, what):
    if spectrum.n_unmasked < MIN_POINTS:
        raise DataError(
            f"insufficient unmasked points for {what}: "
            f"{spectrum.n_unmasked} < {MIN_POINTS}"
        )
    x, y, s = spectrum.unmasked()
    if not np.all(np.isfinite(s)) or np.any(s <= 0):
        raise DataError(f"degenerate weights for {what}")
    return x, y, s


# ---------------------------------------------------------------- Fano fit


@dataclass
class FanoFitResult:
    x0: float
    gamma_total: float
    q_re: float
    inv_q: float
    amplitude: float
    baseline: float
    chi2: float
    dof: int
    errors: dict
    n_starts: int
    n_converged: int
    seed: int = None
    units: str = "epsilon"
    angle: float = None
    input_hash: str = None
    linear_params: np.ndarray = field(default=None, repr=False)
    covariance: np.ndarray = field(default=None, repr=False)

    @property
    def reduced_chi2(self):
        return self.chi2 / self.dof if self.dof > 0 else math.nan

    def __call__(self, x):
        return _fano_linear_model(self.linear_params, np.asarray(x, dtype=float))

    def to_epsilon(self, x):
        return (np.asarray(x, dtype=float) - self.x0) / (0.5 * self.gamma_total)

    def params(self):
        return {k: getattr(self, k) for k in FANO_PARAMS}

    def to_dict(self):
        return {
            "kind": "fano",
            "params": _jsonable(self.params()),
            "errors": _jsonable(self.errors),
            "chi2": self.chi2,
            "dof": self.dof,
            "n_starts": self.n_starts,
            "n_converged": self.n_converged,
            "seed": self.seed,
            "units": self.units,
            "angle_urad": self.angle,
            "input_hash": self.input_hash,
            "linear_params": [float(v) for v in self.linear_params],
            "covariance": np.asarray(self.covariance).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        p = {k: _unjson(v) for k, v in d["params"].items()}
        return cls(
            **p,
            chi2=d["chi2"],
            dof=d["dof"],
            errors={k: _unjson(v) for k, v in d["errors"].items()},
            n_starts=d["n_starts"],
            n_converged=d["n_converged"],
            seed=d.get("seed"),
            units=d.get("units", "epsilon"),
            angle=d.get("angle_urad"),
            input_hash=d.get("input_hash"),
            linear_params=np.array(d["linear_params"]),
            covariance=np.array(d["covariance"]),
        )


def _jsonable(d):
    out = {}
    for k, v in d.items():
        v = float(v)
        out[k] = v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return out


def _unjson(v):
    return float(v)


def _fano_starts(x, n_starts, rng):
    lo, hi = x.min(), x.max()
    span = hi - lo
    log_g = rng.uniform(math.log(_GAMMA_RANGE[0]), math.log(_GAMMA_RANGE[1]), n_starts)
    widths = np.exp(log_g) * span / 20.0
    qs = rng.uniform(*_Q_RANGE, n_starts)
    centres = rng.uniform(lo + 0.25 * span, hi - 0.25 * span, n_starts)
    return centres, widths, qs


def _initial_linear(x, y, s, x0, g, q):
    """Amplitude and baseline for a fixed start (x0, Gamma, q), by weighted LS."""
    e = (x - x0) / (0.5 * g)
    d = 1.0 + e * e
    basis = np.column_stack([(e + q) ** 2 / d, np.ones_like(x)]) / s[:, None]
    (amp, base), *_ = np.linalg.lstsq(basis, y / s, rcond=None)
    return np.array([x0, g, amp + base, 2.0 * amp * q, amp * (q * q - 1.0)])


def _local_fano(x, y, s, p0):
    def fun(p):
        return (_fano_linear_model(p, x) - y) / s

    def jac(p):
        return _fano_jac(p, x) / s[:, None]

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            res = least_squares(
                fun, p0, jac=jac, method="lm", x_scale="jac", ftol=_FTOL, xtol=_XTOL,
                gtol=1e-15, max_nfev=_MAX_NFEV,
            )
        except (ValueError, np.linalg.LinAlgError):
            return None
    if res.status <= 0 or not np.all(np.isfinite(res.x)) or res.x[1] == 0:
        return None
    p = res.x.copy()
    jac_w = res.jac
    if p[1] < 0:
        # Gamma -> -Gamma is the same curve with c1 -> -c1
        p[1] = -p[1]
        p[3] = -p[3]
        jac_w = jac_w * np.array([1.0, -1.0, 1.0, -1.0, 1.0])
    chi2 = float(np.sum(((_fano_linear_model(p, x) - y) / s) ** 2))
    if not math.isfinite(chi2):
        return None
    return p, chi2, jac_w


def _derived_errors(p, cov):
    """Standard errors of (x0, Gamma, q, 1/q, A, B) by the delta method."""

    def derived(v):
        amp, q_re, inv_q, base = real_fano_from_linear(v[2], v[3], v[4])
        return np.array([v[0], v[1], q_re, inv_q, amp, base])

    base_val = derived(p)
    grad = np.zeros((6, 5))
    grad[0, 0] = 1.0
    grad[1, 1] = 1.0
    for j in (2, 3, 4):
        h = 1e-6 * max(abs(p[j]), np.sqrt(max(cov[j, j], 0.0)), 1e-12)
        up, dn = p.copy(), p.copy()
        up[j] += h
        dn[j] -= h
        grad[:, j] = (derived(up) - derived(dn)) / (2.0 * h)
    var = np.einsum("ij,jk,ik->i", grad, cov, grad)
    err = np.sqrt(np.maximum(var, 0.0))
    err[~np.isfinite(base_val)] = math.inf
    err[~np.isfinite(err)] = math.inf
    return dict(zip(FANO_PARAMS, err))


def _make_fano_result(p, chi2, jac_w, n_points, spectrum, n_starts, n_converged, seed):
    cov = _covariance(jac_w)
    amp, q_re, inv_q, base = real_fano_from_linear(p[2], p[3], p[4])
    return FanoFitResult(
        x0=float(p[0]),
        gamma_total=float(p[1]),
        q_re=q_re,
        inv_q=inv_q,
        amplitude=amp,
        baseline=base,
        chi2=chi2,
        dof=n_points - 5,
        errors=_derived_errors(p, cov),
        n_starts=n_starts,
        n_converged=n_converged,
        seed=seed,
        units=spectrum.units,
        angle=spectrum.angle,
        input_hash=spectrum.content_hash(),
        linear_params=p,
        covariance=cov,
    )


def fit_fano(spectrum: Spectrum, n_starts=16, seed=0) -> FanoFitResult:
    """Multi-start weighted least-squares fit of a generic Fano profile.

    Starts are drawn from a private generator: Gamma log-uniform over
    [0.2, 50] * span/20, q uniform over [-10, 10] and x0 uniform over the
    central half of the unmasked grid. The lowest chi^2 among converged
    starts wins; ties go to the lowest start index.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    x, y, s = _check_data(spectrum, "Fano fit")
    rng = np.random.default_rng(seed)
    centres, widths, qs = _fano_starts(x, n_starts, rng)

    best = None
    n_converged = 0
    for i in range(n_starts):
        p0 = _initial_linear(x, y, s, centres[i], widths[i], qs[i])
        if not np.all(np.isfinite(p0)):
            continue
        out = _local_fano(x, y, s, p0)
        if out is None:
            continue
        n_converged += 1
        if best is None or out[1] < best[1]:
            best = out
    if best is None:
        raise FitError(f"no start converged ({n_starts} starts)")
    return _make_fano_result(*best, x.size, spectrum, n_starts, n_converged, seed)


def refit_fano(spectrum: Spectrum, start: FanoFitResult) -> FanoFitResult:
    """Single local fit started from a previous solution."""
    x, y, s = _check_data(spectrum, "Fano fit")
    out = _local_fano(x, y, s, np.asarray(start.linear_params, dtype=float))
    if out is None:
        raise FitError("local refit did not converge")
    return _make_fano_result(*out, x.size, spectrum, 1, 1, None)


def to_epsilon(spectrum: Spectrum, fit: FanoFitResult) -> Spectrum:
    """Rescale a raw-energy spectrum onto epsilon with a fitted centre and width."""
    if spectrum.units == "epsilon":
        return spectrum
    meta = dict(spectrum.meta)
    meta["epsilon_from"] = {"x0": fit.x0, "gamma_total": fit.gamma_total}
    if "mask_intervals" in meta:
        meta["mask_intervals"] = [
            [float(fit.to_epsilon(lo)), float(fit.to_epsilon(hi))] for lo, hi in meta["mask_intervals"]
        ]
    return Spectrum(
        spectrum.angle,
        fit.to_epsilon(spectrum.grid),
        spectrum.counts,
        spectrum.sigma,
        spectrum.mask,
        units="epsilon",
        meta=meta,
    )


# ---------------------------------------------------------------- bootstrap


@dataclass(frozen=True)
class BootstrapBand:
    lo: float
    hi: float
    std: float
    median: float

    @property
    def width(self):
        return self.hi - self.lo


def bootstrap_errors(spectrum: Spectrum, fit: FanoFitResult, n_rep=200, seed=0):
    """Residual-resampling bootstrap of a Fano fit.

    Standardised residuals (y - f)/sigma are resampled with replacement and
    added back to the fitted curve; each replica is refitted from the best
    solution. Returns ``{param: BootstrapBand}`` with the central 68 %
    interval.
    """
    if fit.n_converged < 1:
        raise FitError("bootstrap needs a converged fit")
    x, y, s = _check_data(spectrum, "bootstrap")
    good = ~spectrum.mask
    f = fit(x)
    resid = (y - f) / s
    rng = np.random.default_rng(seed)
    samples = np.empty((n_rep, len(FANO_PARAMS)))
    for k in range(n_rep):
        draw = resid[rng.integers(0, resid.size, resid.size)]
        counts = spectrum.counts.copy()
        counts[good] = np.maximum(f + s * draw, 0.0)
        replica = Spectrum(spectrum.angle, spectrum.grid, counts, spectrum.sigma, spectrum.mask, units=spectrum.units)
        rf = refit_fano(replica, fit)
        samples[k] = [getattr(rf, name) for name in FANO_PARAMS]
    bands = {}
    for j, name in enumerate(FANO_PARAMS):
        col = samples[:, j]
        lo, med, hi = np.percentile(col, [15.865525393145708, 50.0, 84.13447460685429])
        bands[name] = BootstrapBand(float(lo), float(hi), float(np.std(col)), float(med))
    return bands


# ---------------------------------------------------------------- rational fit


@dataclass
class RationalFitResult:
    a: np.ndarray
    b: np.ndarray
    chi2: float
    dof: int
    lo: float
    hi: float
    domain: str
    fit_range: tuple
    covariance: np.ndarray = field(default=None, repr=False)
    angle: float = None
    input_hash: str = None
    penalized: bool = False

    def raw(self, eps):
        e = np.asarray(eps, dtype=float)
        num = self.a[0] + self.a[1] * e + self.a[2] * e * e
        den = self.b[0] + self.b[1] * e + self.b[2] * e * e
        return num / den

    def __call__(self, eps):
        """Normalised curve, 0 <= R_rat <= 1 on the fit range."""
        return (self.raw(eps) - self.lo) / (self.hi - self.lo)

    @property
    def coefficients(self):
        return np.concatenate([self.a, self.b])

    def tail(self):
        """Normalised |eps| -> inf limit (an intensity)."""
        if self.b[2] != 0:
            raw = self.a[2] / self.b[2]
        elif self.a[2] == 0 and self.b[1] != 0:
            raw = self.a[1] / self.b[1]
        else:
            raise FitError("rational fit has no finite asymptote")
        return (raw - self.lo) / (self.hi - self.lo)

    def tail_amplitude(self):
        return math.sqrt(max(self.tail(), 0.0))

    def variance(self, eps):
        """Delta-method variance of the normalised curve (normalisation held fixed)."""
        e = np.asarray(eps, dtype=float)
        num = self.a[0] + self.a[1] * e + self.a[2] * e * e
        den = self.b[0] + self.b[1] * e + self.b[2] * e * e
        g = np.stack([1.0 / den, e / den, e * e / den, -num * e / den**2, -num * e * e / den**2], axis=-1)
        var = np.einsum("...i,ij,...j->...", g, self.covariance, g)
        return np.maximum(var, 0.0) / (self.hi - self.lo) ** 2

    def to_dict(self):
        return {
            "kind": "rational",
            "a": [float(v) for v in self.a],
            "b": [float(v) for v in self.b],
            "chi2": self.chi2,
            "dof": self.dof,
            "normalization": {"lo": self.lo, "hi": self.hi, "domain": self.domain},
            "fit_range": list(self.fit_range),
            "covariance": np.asarray(self.covariance).tolist(),
            "angle_urad": self.angle,
            "input_hash": self.input_hash,
            "penalized": self.penalized,
        }

    @classmethod
    def from_dict(cls, d):
        norm = d["normalization"]
        return cls(
            a=np.array(d["a"]),
            b=np.array(d["b"]),
            chi2=d["chi2"],
            dof=d["dof"],
            lo=norm["lo"],
            hi=norm["hi"],
            domain=norm["domain"],
            fit_range=tuple(d["fit_range"]),
            covariance=np.array(d["covariance"]),
            angle=d.get("angle_urad"),
            input_hash=d.get("input_hash"),
            penalized=d.get("penalized", False),
        )


def _rat_eval(p, x):
    a0, a1, a2, b1, b2 = p
    return (a0 + a1 * x + a2 * x * x) / (1.0 + b1 * x + b2 * x * x)


def _rat_jac(p, x):
    a0, a1, a2, b1, b2 = p
    den = 1.0 + b1 * x + b2 * x * x
    num = a0 + a1 * x + a2 * x * x
    return np.column_stack([1.0 / den, x / den, x * x / den, -num * x / den**2, -num * x * x / den**2])


_POLE_TOL = 1e-10


def _den_scale(b1, b2, m):
    return 1.0 + abs(b1) * m + abs(b2) * m * m


def _pole_in(b1, b2, lo, hi):
    """True when 1 + b1 e + b2 e^2 vanishes (or nearly) somewhere in [lo, hi].

    Works on the minimum of the denominator rather than on polynomial
    roots, so double roots are not lost to round-off.
    """
    pts = [lo, hi]
    if b2 != 0:
        vertex = -b1 / (2.0 * b2)
        if lo < vertex < hi:
            pts.append(vertex)
    den = min(1.0 + b1 * e + b2 * e * e for e in pts)
    return den <= _POLE_TOL * _den_scale(b1, b2, max(abs(lo), abs(hi)))


def _pole_free_line(b1, b2):
    """True when the denominator is bounded away from zero on the real line."""
    if not b2 > 0:
        return False
    floor = 1.0 - b1 * b1 / (4.0 * b2)
    return floor > _POLE_TOL * _den_scale(b1, b2, abs(b1) / (2.0 * b2))


def _critical_points(a, b):
    """Stationary points of (a0+a1 e+a2 e^2)/(b0+b1 e+b2 e^2)."""
    a0, a1, a2 = a
    b0, b1, b2 = b
    coeffs = [a2 * b1 - a1 * b2, 2.0 * (a2 * b0 - a0 * b2), a1 * b0 - a0 * b1]
    while coeffs and coeffs[0] == 0:
        coeffs = coeffs[1:]
    if len(coeffs) < 2:
        return np.array([])
    roots = np.roots(coeffs)
    return roots[np.abs(roots.imag) <= 1e-12 * np.maximum(1.0, np.abs(roots.real))].real


def fit_rational(spectrum: Spectrum, penalty=1e4) -> RationalFitResult:
    """Weighted fit of R_rat with b0 = 1, normalised to [0, 1].

    A linearised solve seeds a Levenberg-Marquardt refinement. If the
    denominator acquires a root inside the fit range the fit is repeated
    with a penalty on small denominators; a remaining root raises
    :class:`FitError`.

    The normalisation uses the extrema of the fitted function over the
    whole real line (including the asymptote) when the denominator has no
    real root, otherwise the extrema over the fit range.
    """
    x, y, s = _check_data(spectrum, "rational fit")
    lo_x, hi_x = float(x.min()), float(x.max())

    lin = np.column_stack([np.ones_like(x), x, x * x, -y * x, -y * x * x]) / s[:, None]
    p0, *_ = np.linalg.lstsq(lin, y / s, rcond=None)

    def fun(p):
        return (_rat_eval(p, x) - y) / s

    def jac(p):
        return _rat_jac(p, x) / s[:, None]

    res = _solve_rational(fun, jac, p0)
    penalized = False
    if res is None or _pole_in(res.x[3], res.x[4], lo_x, hi_x):
        penalized = True
        tau = 1e-3
        scale = math.sqrt(penalty)

        def fun_pen(p):
            den = 1.0 + p[3] * x + p[4] * x * x
            return np.concatenate([fun(p), scale * np.maximum(tau - den, 0.0)])

        def jac_pen(p):
            den = 1.0 + p[3] * x + p[4] * x * x
            active = (den < tau)[:, None]
            jp = np.zeros((x.size, 5))
            jp[:, 3] = -x
            jp[:, 4] = -x * x
            return np.vstack([jac(p), scale * active * jp])

        start = p0 if res is None else res.x
        start = np.array(start, dtype=float)
        if _pole_in(start[3], start[4], lo_x, hi_x):
            start[3:] = 0.0
        res = _solve_rational(fun_pen, jac_pen, start)
        if res is None or _pole_in(res.x[3], res.x[4], lo_x, hi_x):
            raise FitError("pole in fit range")

    p = res.x
    a = p[:3].copy()
    b = np.array([1.0, p[3], p[4]])
    chi2 = float(np.sum(fun(p) ** 2))
    cov = _covariance(jac(p))

    crit = _critical_points(a, b)
    if _pole_free_line(b[1], b[2]):
        domain = "real-line"
        pts = np.concatenate([crit, [0.0]])
        vals = list(_rat_eval(p, pts)) + [a[2] / b[2]]
    else:
        domain = "fit-range"
        pts = np.concatenate([crit[(crit >= lo_x) & (crit <= hi_x)], [lo_x, hi_x]])
        vals = list(_rat_eval(p, pts))
    lo, hi = float(min(vals)), float(max(vals))
    if not hi > lo:
        raise FitError("rational fit is constant; cannot normalise")
    return RationalFitResult(
        a=a, b=b, chi2=chi2, dof=x.size - 5, lo=lo, hi=hi, domain=domain,
        fit_range=(lo_x, hi_x), covariance=cov, angle=spectrum.angle,
        input_hash=spectrum.content_hash(), penalized=penalized,
    )


def _solve_rational(fun, jac, p0):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            res = least_squares(fun, p0, jac=jac, method="lm", x_scale="jac", ftol=1e-15, xtol=1e-15, gtol=1e-15, max_nfev=2000)
        except (ValueError, np.linalg.LinAlgError):
            return None
    if res.status < 0 or not np.all(np.isfinite(res.x)):
        return None
    return res


# ---------------------------------------------------------------- angle series


@dataclass
class AngleSeries:
    """Fit results tabulated against the relative incidence angle.

    ``model`` holds the consistency fit of the cavity predictions (gamma,
    gamma_sr0 = 2 coupling/kappa, slope_ratio = delta_C/kappa per urad and,
    when the detuning slope is supplied, kappa and coupling_strength).
    """

    rows: list
    model: dict = None
    warnings: list = field(default_factory=list)

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def to_dict(self):
        return {"rows": [_jsonable(r) for r in self.rows], "model": self.model, "warnings": list(self.warnings)}

    def to_text(self):
        cols = ("angle_urad", "gamma_total", "gamma_total_err", "delta_ls", "delta_ls_err", "q_re", "q_re_err", "inv_q", "inv_q_err")
        lines = ["# " + " ".join(cols)]
        for r in self.rows:
            lines.append(" ".join(f"{float(r[c]):.10g}" for c in cols))
        return "\n".join(lines) + "\n"


def _predict_series(params, angles):
    gamma, g0, ratio = params
    d = ratio * angles
    gamma_sr = g0 / (1.0 + d * d)
    gamma_total = gamma + gamma_sr
    delta_ls = -0.5 * g0 * d / (1.0 + d * d)
    sigma0 = d * d / (1.0 + d * d)
    u = np.where(d < 0, -1.0, 1.0) * gamma_sr / gamma_total * np.sqrt(1.0 - sigma0)
    c1 = 2.0 * np.sqrt(sigma0) * u
    c2 = u * u + sigma0 * ((gamma / gamma_total) ** 2 - 1.0)
    r = np.hypot(c1, c2)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_q = np.where(c2 >= 0, c1 / (c2 + r), (r - c2) / np.where(c1 == 0, 1.0, c1))
    return gamma_total, delta_ls, inv_q


def extract_angle_series(results, delta_c_slope=None) -> AngleSeries:
    """Tabulate (angle, Gamma, Delta_LS, q) and fit the cavity predictions.

    ``results`` is a sequence of :class:`FanoFitResult` (each carrying its
    angle) or a mapping angle -> result. The line shapes determine gamma,
    gamma_SR(0) and delta_C/kappa only; kappa itself follows when the
    detuning slope ``delta_c_slope`` (gamma per urad) is known.
    """
    if isinstance(results, dict):
        items = sorted((float(k), v) for k, v in results.items())
    else:
        items = sorted(((float(r.angle), r) for r in results), key=lambda t: t[0])
    if not items:
        raise DataError("no fit results")
    rows = []
    for angle, r in items:
        rows.append({
            "angle_urad": angle,
            "gamma_total": r.gamma_total, "gamma_total_err": r.errors["gamma_total"],
            "delta_ls": r.x0, "delta_ls_err": r.errors["x0"],
            "q_re": r.q_re, "q_re_err": r.errors["q_re"],
            "inv_q": r.inv_q, "inv_q_err": r.errors["inv_q"],
        })
    series = AngleSeries(rows)
    units = {r.units for _, r in items}
    if len(items) < 2:
        series.warnings.append("single angle: cavity parameters not extracted")
        return series
    if units != {"energy"}:
        series.warnings.append("spectra not on a raw energy grid: cavity parameters not extracted")
        return series

    angles = series.column("angle_urad")
    obs = np.concatenate([series.column("gamma_total"), series.column("delta_ls"), series.column("inv_q")])
    err = np.concatenate([series.column("gamma_total_err"), series.column("delta_ls_err"), series.column("inv_q_err")])
    floor = 1e-9 * np.maximum(np.abs(obs), 1.0)
    err = np.where(np.isfinite(err), np.maximum(err, floor), np.inf)

    def resid(p):
        return (np.concatenate(_predict_series(p, angles)) - obs) / err

    gmin, gmax = series.column("gamma_total").min(), series.column("gamma_total").max()
    best = None
    for frac in (0.1, 0.3, 0.6, 0.9):
        gamma0 = frac * gmin
        g0 = max(gmax - gamma0, 1e-6)
        nz = angles != 0
        ratio = np.median(np.abs(2.0 * series.column("delta_ls")[nz] / (g0 * angles[nz]))) if nz.any() else 0.1
        for p0 in ([gamma0, g0, max(ratio, 1e-4)], [gamma0, g0, 0.3 / max(np.abs(angles).max(), 1e-9)]):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = least_squares(resid, p0, bounds=([0, 0, 0], [np.inf, np.inf, np.inf]), x_scale="jac", ftol=1e-14, xtol=1e-14, gtol=1e-14)
            if best is None or res.cost < best.cost:
                best = res
    cov = _covariance(best.jac)
    perr = np.sqrt(np.maximum(np.diag(cov), 0.0))
    gamma, g0, ratio = (float(v) for v in best.x)
    model = {
        "gamma": gamma, "gamma_err": float(perr[0]),
        "gamma_sr0": g0, "gamma_sr0_err": float(perr[1]),
        "slope_ratio": ratio, "slope_ratio_err": float(perr[2]),
        "chi2": float(2.0 * best.cost),
        "kappa": None, "coupling_strength": None, "delta_c_slope": None,
    }
    if delta_c_slope is not None:
        kappa = delta_c_slope / ratio
        model.update(
            delta_c_slope=float(delta_c_slope),
            kappa=float(kappa),
            kappa_err=float(kappa * perr[2] / ratio),
            coupling_strength=float(0.5 * g0 * kappa),
        )
    series.model = model
    return series
