"""Spectral solvers, norms and Monte Carlo checks for linear SPDEs driven by stable jumps."""

from ._kernels import BACKEND, HAS_NUMBA
from .errors import ConfigurationError, ContractError, EvaluationError, NumericalError, ShapeError, SpideError
from .grid import (Field, LPFilterBank, SpectralGrid, apply_multiplier, bessel_potential, forward,
                   fractional_derivative, inverse, lp_blocks, lp_partition, make_grid, read_snapshot, shift_field,
                   write_snapshot)
from .noise import JumpEvent, MarkMeasure, NoisePath, compensated_integral, make_path, stream
from .norms import (NormSpec, NormValue, besov_norm, equivalent_H_norm, mc_norm, mixed_jump_norm, mollify,
                    sobolev_norm, spacetime_norm, steklov_smooth)
from .propagator import (Kernel, SolutionBundle, duhamel_R, fundamental_kernel, lambda_and_I, path_for,
                         semigroup_T, solve_mild, stoch_conv_poisson, stoch_conv_wiener, weak_residual)
from .symbols import (CoefficientSet, YRule, apply_generator, generator_symbol, preset, symbol_closed_form,
                      symbol_quadrature, truncation_correction, validate_A, validate_A0)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
