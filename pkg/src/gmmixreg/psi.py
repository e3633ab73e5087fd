"""Robust criterion functions for the Huber and Tukey bisquare families.

Each :class:`PsiKernel` bundles a family with its tuning constant ``c`` (applied
to standardized residuals) and provides

* ``rho``: the loss,
* ``psi``: its derivative,
* ``weight``: the residual weight ``psi(t)/t`` (1 at ``t = 0``),
* ``chi``: ``psi(t)*t - rho(t)``, the function driving the M-scale update.

For Tukey the loss is normalized so that it saturates at ``c**2 / 6``.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import _kernels
from .errors import DomainError, InvalidDimensionsError

HUBER_C = 1.345
TUKEY_C = 4.685

# standard normal mass beyond +-12 is below 1e-30
_QUAD_LIMIT = 12.0


class Family(enum.Enum):
    HUBER = "huber"
    TUKEY = "tukey"

    @property
    def code(self) -> int:
        return _kernels.HUBER if self is Family.HUBER else _kernels.TUKEY


@dataclass(frozen=True)
class PsiKernel:
    family: Family
    c: float

    def __post_init__(self):
        if not isinstance(self.family, Family):
            object.__setattr__(self, "family", Family(self.family))
        c = float(self.c)
        if not (math.isfinite(c) and c > 0):
            raise DomainError(f"tuning constant must be positive and finite, got {self.c!r}")
        object.__setattr__(self, "c", c)

    @classmethod
    def huber(cls, c: float = HUBER_C) -> "PsiKernel":
        return cls(Family.HUBER, c)

    @classmethod
    def tukey(cls, c: float = TUKEY_C) -> "PsiKernel":
        return cls(Family.TUKEY, c)

    @classmethod
    def default(cls, family: Family | str) -> "PsiKernel":
        family = Family(family)
        return cls.huber() if family is Family.HUBER else cls.tukey()

    def rho(self, t):
        return _apply(_kernels.rho_values, self, t)

    def psi(self, t):
        return _apply(_kernels.psi_values, self, t)

    def weight(self, t):
        return _apply(_kernels.weight_values, self, t)

    def chi(self, t):
        return _apply(_kernels.chi_values, self, t)

    def normal_chi_mean(self) -> float:
        """E[chi(T)] for T standard normal."""
        return _normal_chi_mean(self.family, self.c)


def _apply(kernel_fn, k: PsiKernel, t):
    arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("residuals must be finite")
    out = kernel_fn(k.family.code, k.c, np.ascontiguousarray(arr.ravel()))
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


def rho(k: PsiKernel, t):
    return k.rho(t)


def psi(k: PsiKernel, t):
    return k.psi(t)


def residual_weight(k: PsiKernel, t):
    return k.weight(t)


def chi(k: PsiKernel, t):
    return k.chi(t)


@functools.lru_cache(maxsize=64)
def _normal_chi_mean(family: Family, c: float) -> float:
    k = PsiKernel(family, c)

    def integrand(t: float) -> float:
        return float(k.chi(t)) * math.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)

    breaks = [-c, c] if c < _QUAD_LIMIT else None
    value, _ = integrate.quad(integrand, -_QUAD_LIMIT, _QUAD_LIMIT, points=breaks, epsabs=1e-13, epsrel=1e-13, limit=200)
    return value


def scale_constant_a(k: PsiKernel, n: int, p: int) -> float:
    """Consistency constant ``(n - p)/n * E_Phi[chi]`` of the M-scale update."""
    if not (n > p >= 1):
        raise InvalidDimensionsError(f"need n > p >= 1, got n={n}, p={p}")
    return (n - p) / n * k.normal_chi_mean()
