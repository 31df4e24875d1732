"""Extended-precision policy shared by the closed-form pricing paths.

The hypoexponential coefficients alternate in sign and can be many orders of
magnitude larger than the probabilities they combine into, so every
coefficient table and every Laplace-transform value that multiplies one is
carried in MPFR arithmetic (via gmpy2) at ``mantissa_bits`` of precision.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass

import gmpy2
from gmpy2 import mpfr

__all__ = ["PrecisionPolicy", "PrecisionLoss", "DEFAULT_PRECISION", "mpfr"]


class PrecisionLoss(ArithmeticError):
    """Cancellation in a coefficient sum ate through the working precision."""


@dataclass(frozen=True)
class PrecisionPolicy:
    mantissa_bits: int = 1024
    collision_rel_tol: float = 1e-12

    def __post_init__(self):
        if int(self.mantissa_bits) < 53:
            raise ValueError("mantissa_bits must be at least 53")
        if not self.collision_rel_tol >= 0.0:
            raise ValueError("collision_rel_tol must be nonnegative")

    @contextlib.contextmanager
    def context(self):
        """Run a block with MPFR at this policy's precision.

        The exponent range is widened so that ladders with large ``|delta|``
        (weights like ``exp(delta * n**2 / 2)``) do not overflow.
        """
        with gmpy2.context(
            precision=int(self.mantissa_bits),
            emax=gmpy2.get_emax_max(),
            emin=gmpy2.get_emin_min(),
        ) as ctx:
            yield ctx

    def doubled(self) -> "PrecisionPolicy":
        return PrecisionPolicy(2 * int(self.mantissa_bits), self.collision_rel_tol)

    def check_cancellation(self, magnitude, result_scale=1.0, what="coefficient sum"):
        """Raise :class:`PrecisionLoss` if summing terms of size ``magnitude``
        to a result of size ``result_scale`` leaves fewer than 64 good bits."""
        if magnitude == 0:
            return
        lost = float(gmpy2.log2(abs(mpfr(magnitude)))) - float(
            gmpy2.log2(mpfr(max(abs(result_scale), 1e-300)))
        )
        if lost > int(self.mantissa_bits) - 64:
            raise PrecisionLoss(
                f"{what}: ~{lost:.0f} bits cancel, more than {self.mantissa_bits} "
                "carried minus 64 kept; raise mantissa_bits"
            )


DEFAULT_PRECISION = PrecisionPolicy()
