"""Anisoplanatic tilt statistics, registration-aware r0 estimation and BMWF restoration."""

from .errors import (AliasingError, AnisotiltError, ConfigError, DataError, FitError,
                     NumericalError, OutOfRangeError, QuadratureError,
                     SpectralValidityError, ZeroTurbulenceError)
from .stats import (Cn2Profile, OpticalConfig, Quadrature, fried_parameter,
                    isoplanatic_angle, isoplanatic_angle_pixels, table1_config,
                    tabulate_correlations, tilt_corr_parallel, tilt_corr_perp,
                    tilt_corr_total, tilt_variance_px)
from .corr2d import TiltAutocorr2D, build_autocorr_grid
from .regmodel import (AlphaMap, RegistrationSpec, global_alpha_map, patch_tilt_variance,
                       registration_alpha, residual_tilt_variance, tilt_correction_factor)
from .otf import OtfModel, otf_combined, psf_spatial, sigma_G2, sigma_g2, wiener_transfer
from .friedest import ImageSequence, estimate_r0, estimate_r0_windows, r0_from_sigma
from .mitigation import MitigationConfig, bma_register, bmwf, global_register
from .synth import SynthConfig, degrade_sequence, synth_tilt_fields, synthetic_scene
from .metrics import psnr, ssim

__version__ = "0.1.0"
