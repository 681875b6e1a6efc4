"""
fanophase
=========

Cavity-nucleus Fano interference: forward model of the reflectance of a
thin-film x-ray cavity with resonant nuclei, synthesis and fitting of
spectra, and interferometric reconstruction of the nuclear phase and the
off-diagonal density-matrix element rho_eg.
"""

__version__ = "0.1.0"

from .cavity import (  # noqa: E402
    ChannelDecomposition,
    LineshapeParams,
    PhysicalModel,
    bound_state_phase,
    decompose_channels,
    derive_lineshape,
    energy_to_epsilon,
    epsilon_to_energy,
    reflectance_eq1,
    reflectance_fano,
    reflectance_io,
)
from .errors import ConfigError, DataError, FitError, SpectrumFormatError  # noqa: E402
from .fitting import (  # noqa: E402
    AngleSeries,
    FanoFitResult,
    RationalFitResult,
    bootstrap_errors,
    equivalent_real_fano,
    extract_angle_series,
    fit_fano,
    fit_rational,
    to_epsilon,
)
from .phase import (  # noqa: E402
    PhaseCurve,
    RhoEgEstimate,
    compute_xi,
    estimate_R0,
    fit_phase,
    reconstruct_rho_eg,
    retrieve_phase,
)
from .spectra import (  # noqa: E402
    Spectrum,
    apply_mask,
    read_spectrum,
    read_spectrum_json,
    synthesize,
    write_spectrum,
    write_spectrum_json,
)
