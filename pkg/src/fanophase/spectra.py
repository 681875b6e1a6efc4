"""
Synthetic and measured-style reflectance spectra.

A :class:`Spectrum` holds counts on an ordered grid, either the dimensionless
energy ``epsilon`` or the raw energy offset ``omega - omega0`` in units of
gamma (``units="energy"``), together with per-point uncertainties and an
exclusion mask.

Text file layout (UTF-8, ``\\n`` line endings)::

    # fanophase-spectrum v1
    # angle_urad=2.0
    # units=epsilon
    # seed=7
    # model_hash="3f2a..."
    # mask_intervals=[[-0.5, 0.5]]
    # columns=epsilon counts sigma mask
    -10.0 1234.0 35.12833614050059 0
    ...

Header values other than ``angle_urad`` and ``units`` are JSON encoded.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .cavity import (
    PhysicalModel,
    derive_lineshape,
    energy_to_epsilon,
)
from .errors import DataError, SpectrumFormatError

UNITS = ("epsilon", "energy")
_MAGIC = "fanophase-spectrum v1"
_COLUMNS = "epsilon counts sigma mask"


@dataclass(eq=False)
class Spectrum:
    angle: float
    grid: np.ndarray
    counts: np.ndarray
    sigma: np.ndarray
    mask: np.ndarray = None
    units: str = "epsilon"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.angle = float(self.angle)
        self.grid = np.asarray(self.grid, dtype=float)
        self.counts = np.asarray(self.counts, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.mask is None:
            self.mask = np.zeros(self.grid.shape, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.units not in UNITS:
            raise DataError(f"units must be one of {UNITS}, got {self.units!r}")
        if self.grid.ndim != 1 or self.grid.size == 0:
            raise DataError("grid must be a non-empty 1-d array")
        n = self.grid.size
        for name in ("counts", "sigma", "mask"):
            if getattr(self, name).shape != (n,):
                raise DataError(
                    f"length mismatch: {name} has shape "
                    f"{getattr(self, name).shape}, grid has {n} points"
                )
        if not np.all(np.isfinite(self.grid)):
            raise DataError("grid contains non-finite values")
        if np.any(np.diff(self.grid) <= 0):
            raise DataError("grid not increasing")
        if not np.all(np.isfinite(self.counts)) or np.any(self.counts < 0):
            raise DataError("counts must be finite and non-negative")
        if not np.all(np.isfinite(self.sigma)):
            raise DataError("sigma contains non-finite values")
        if np.any(self.sigma[~self.mask] <= 0):
            raise DataError("sigma must be positive at unmasked points")

    def __len__(self):
        return self.grid.size

    @property
    def n_unmasked(self) -> int:
        return int(np.count_nonzero(~self.mask))

    @property
    def weights(self):
        """Least-squares weights 1/sigma^2; exactly zero on masked points."""
        w = np.zeros_like(self.sigma)
        good = ~self.mask
        w[good] = 1.0 / self.sigma[good] ** 2
        return w

    def unmasked(self):
        good = ~self.mask
        return self.grid[good], self.counts[good], self.sigma[good]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.angle!r}|{self.units}".encode())
        for arr in (self.grid, self.counts, self.sigma):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        h.update(self.mask.astype(np.uint8).tobytes())
        return h.hexdigest()[:16]

    def to_dict(self):
        return {
            "angle_urad": self.angle,
            "units": self.units,
            "grid": self.grid.tolist(),
            "counts": self.counts.tolist(),
            "sigma": self.sigma.tolist(),
            "mask": [bool(m) for m in self.mask],
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                angle=d["angle_urad"],
                grid=d["grid"],
                counts=d["counts"],
                sigma=d["sigma"],
                mask=d["mask"],
                units=d.get("units", "epsilon"),
                meta=dict(d.get("meta", {})),
            )
        except KeyError as exc:
            raise DataError(f"spectrum record lacks key {exc.args[0]!r}") from None


def make_grid(start, stop, num):
    grid = np.linspace(float(start), float(stop), int(num))
    if grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise DataError("invalid grid specification")
    return grid


def noiseless_intensity(model, delta_theta, grid, units="epsilon", instrument_fwhm=None):
    """|R|^2 on ``grid``, optionally folded with a Lorentzian analyzer line.

    The profile is sigma0 + Re[(a + i b) / (eps + i)] with
    a = 2 sigma0 Re(q), b = sigma0 (|q|^2 - 1). Convolving the analytic
    function 1/(eps + i) with a Lorentzian of half width w (epsilon units)
    shifts the pole to eps + i(1 + w), so the folded curve is exact.
    ``instrument_fwhm`` is given in grid units.
    """
    lp = derive_lineshape(model, delta_theta)
    grid = np.asarray(grid, dtype=float)
    if units == "energy":
        eps = energy_to_epsilon(lp, grid)
        w = 0.0 if not instrument_fwhm else instrument_fwhm / lp.gamma_total
    elif units == "epsilon":
        eps = grid
        w = 0.0 if not instrument_fwhm else 0.5 * instrument_fwhm
    else:
        raise DataError(f"unknown units {units!r}")
    s = math.sqrt(lp.sigma0)
    u = lp.scaled_q_re
    a = 2.0 * s * u
    b = u * u + lp.sigma0 * (lp.q.imag**2 - 1.0)
    return lp.sigma0 + np.real((a + 1j * b) / (eps + 1j * (1.0 + w)))


def synthesize(
    model: PhysicalModel,
    delta_theta,
    grid,
    exposure=1e5,
    baseline=0.0,
    seed=0,
    *,
    noiseless=False,
    units="epsilon",
    instrument_fwhm=None,
) -> Spectrum:
    """Counting spectrum with Poisson noise.

    counts_i ~ Poisson(exposure * |R(x_i)|^2 + baseline), with a private
    generator seeded by ``seed``; ``sigma_i = sqrt(max(counts_i, 1))``.
    With ``noiseless=True`` the expected counts are returned unchanged.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or not np.all(np.isfinite(grid)):
        raise DataError("invalid grid")
    if np.any(np.diff(grid) <= 0):
        raise DataError("grid not increasing")
    if exposure < 0:
        raise DataError("exposure must be non-negative")
    if baseline < 0:
        raise DataError("baseline must be non-negative")
    if instrument_fwhm is not None and instrument_fwhm < 0:
        raise DataError("instrument_fwhm must be non-negative")

    mean = exposure * noiseless_intensity(model, delta_theta, grid, units, instrument_fwhm) + baseline
    if noiseless:
        counts = mean
    else:
        rng = np.random.default_rng(seed)
        counts = rng.poisson(mean).astype(float)
    sigma = np.sqrt(np.maximum(counts, 1.0))
    meta = {
        "source": "synthetic",
        "seed": None if noiseless else int(seed),
        "model_hash": model.model_hash(),
        "exposure": float(exposure),
        "baseline": float(baseline),
        "noiseless": bool(noiseless),
    }
    if instrument_fwhm:
        meta["instrument_fwhm"] = float(instrument_fwhm)
    return Spectrum(delta_theta, grid, counts, sigma, units=units, meta=meta)


def _merge_intervals(intervals):
    out = []
    for lo, hi in sorted(intervals):
        if out and lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return out


def apply_mask(spectrum: Spectrum, intervals) -> Spectrum:
    """Exclude every grid point inside any closed interval ``[lo, hi]``."""
    intervals = [(float(lo), float(hi)) for lo, hi in intervals]
    for lo, hi in intervals:
        if not lo <= hi:
            raise ValueError(f"mask interval ({lo}, {hi}) is not ordered")
    if not intervals:
        return spectrum
    mask = spectrum.mask.copy()
    for lo, hi in intervals:
        mask |= (spectrum.grid >= lo) & (spectrum.grid <= hi)
    meta = dict(spectrum.meta)
    meta["mask_intervals"] = _merge_intervals(
        [list(iv) for iv in meta.get("mask_intervals", [])] + [list(iv) for iv in intervals]
    )
    return replace(spectrum, mask=mask, meta=meta)


def write_spectrum(spectrum: Spectrum, path):
    path = Path(path)
    lines = [f"# {_MAGIC}", f"# angle_urad={spectrum.angle!r}", f"# units={spectrum.units}"]
    for key in sorted(spectrum.meta):
        lines.append(f"# {key}={json.dumps(spectrum.meta[key], sort_keys=True)}")
    lines.append(f"# columns={_COLUMNS}")
    for x, c, s, m in zip(spectrum.grid, spectrum.counts, spectrum.sigma, spectrum.mask):
        lines.append(f"{float(x)!r} {float(c)!r} {float(s)!r} {int(m)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_spectrum(path) -> Spectrum:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SpectrumFormatError(f"cannot read file: {exc.strerror}", path) from None

    header = {}
    rows = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" not in body:
                continue
            key, _, value = body.partition("=")
            header[key.strip()] = (value.strip(), lineno)
            continue
        tokens = line.split(" ")
        if len(tokens) != 4:
            raise SpectrumFormatError(
                f"expected 4 columns ({_COLUMNS}), found {len(tokens)}", path, lineno
            )
        try:
            x, c, s = (float(t) for t in tokens[:3])
        except ValueError:
            raise SpectrumFormatError("non-numeric value", path, lineno) from None
        if tokens[3] not in ("0", "1"):
            raise SpectrumFormatError(f"mask column must be 0 or 1 (column 4), got {tokens[3]!r}", path, lineno)
        for col, name, val in ((1, "epsilon", x), (2, "counts", c), (3, "sigma", s)):
            if not math.isfinite(val):
                raise SpectrumFormatError(
                    f"non-finite {name} in row {len(rows) + 1} (column {col})", path, lineno
                )
        if c < 0:
            raise SpectrumFormatError(f"negative count in row {len(rows) + 1} (column 2)", path, lineno)
        rows.append((x, c, s, tokens[3] == "1", lineno))

    if not rows:
        raise SpectrumFormatError("no data rows", path)
    if "angle_urad" not in header:
        raise SpectrumFormatError("missing header key angle_urad", path)
    try:
        angle = float(header["angle_urad"][0])
    except ValueError:
        raise SpectrumFormatError("angle_urad is not a number", path, header["angle_urad"][1]) from None
    units = header.get("units", ("epsilon", None))[0]
    if units not in UNITS:
        raise SpectrumFormatError(f"unknown units {units!r}", path, header["units"][1])

    meta = {}
    for key, (value, lineno) in header.items():
        if key in ("angle_urad", "units", "columns"):
            continue
        try:
            meta[key] = json.loads(value)
        except json.JSONDecodeError:
            raise SpectrumFormatError(f"header value for {key!r} is not valid JSON", path, lineno) from None

    grid = np.array([r[0] for r in rows])
    bad = np.nonzero(np.diff(grid) <= 0)[0]
    if bad.size:
        raise SpectrumFormatError("grid not increasing", path, rows[bad[0] + 1][4])
    try:
        return Spectrum(
            angle,
            grid,
            [r[1] for r in rows],
            [r[2] for r in rows],
            [r[3] for r in rows],
            units=units,
            meta=meta,
        )
    except DataError as exc:
        raise SpectrumFormatError(str(exc), path) from None


def write_spectrum_json(spectrum: Spectrum, path):
    path = Path(path)
    path.write_text(json.dumps(spectrum.to_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return path


def read_spectrum_json(path) -> Spectrum:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SpectrumFormatError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    return Spectrum.from_dict(data)
