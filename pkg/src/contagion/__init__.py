"""Set-valued default contagion model with closed-form CDO tranche pricing.

The defaulted set of a portfolio is a conditional Markov chain whose
transition rates scale with a macro factor.  This package evaluates its
transition kernels, prices tranches in closed form under an affine
jump-diffusion factor, checks both against Monte Carlo, and calibrates the
homogeneous model to tranche quotes.
"""
from .ajd import AJDParams, OracleDomainError, expectation, riccati_oracle, transform
from .calibration import (CalibrationBox, CalibrationFailed, CalibrationResult,
                          CalibrationSettings, NoRoot, QuoteSet, TrancheQuote, aape,
                          calibrate, implied_rho, load_quotes, model_quotes, objective)
from .hypoexp import RateCollision, alpha_coeffs, hypoexp_mix
from .kernel import KernelQuery, kernel_factorized, kernel_general, kernel_row
from .model import ContagionSpec, ContractViolation, ObligorSet, RecoveryVector
from .precision import DEFAULT_PRECISION, PrecisionLoss, PrecisionPolicy
from .pricing import (DegenerateTranche, LossCurve, TrancheDeck, attach_detach_times,
                      expected_tranche_loss_general, expected_tranche_loss_hcm,
                      expected_tranche_loss_ncm, index_spread, loss_curve, spreads,
                      suggest_precision, tranche_spread, upfront_rate)
from .simulator import MCEstimate, martingale_check, mc_expectation, mc_tranche_spread

__version__ = "0.1.0"
