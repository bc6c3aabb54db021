"""Physical parameters, bath rates, jump operators and the no-jump generator.

Everything lives in the interaction picture at resonance with the rotating
wave approximation already applied: the free Hamiltonian never enters the
generator, only the drive term (lambda0/sqrt(2)) P and the anti-hermitian
decay part. Energy bookkeeping uses the bare level energies n (in units of
hbar*omega0) separately.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import RegimeWarning
from .fock import ladder_operators, matrix_exponential, number_operator, quadratures

__all__ = [
    "PhysicalParams",
    "Rates",
    "bath_occupation",
    "make_rates",
    "jump_operators",
    "nh_generator",
    "no_jump_propagator",
]


@dataclass(frozen=True)
class PhysicalParams:
    """Model parameters in natural units (hbar = 1, omega0 = 1 by default).

    gamma: system-bath coupling rate; beta: inverse temperature in units of
    1/(hbar*omega0); lambda0: drive amplitude; drive_time: length of the
    driving window (defaults to pi/lambda0); dim: Fock truncation.
    """

    gamma: float
    beta: float
    lambda0: float = 0.01
    omega0: float = 1.0
    drive_time: float | None = None
    dim: int = 10

    def __post_init__(self) -> None:
        if self.omega0 <= 0:
            raise ValueError(f"omega0 must be positive, got {self.omega0}")
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if self.lambda0 < 0:
            raise ValueError(f"lambda0 must be non-negative, got {self.lambda0}")
        if self.dim < 2:
            raise ValueError(f"dim must be at least 2, got {self.dim}")
        if self.drive_time is None:
            if self.lambda0 == 0:
                raise ValueError("drive_time must be given explicitly when lambda0 = 0")
            object.__setattr__(self, "drive_time", math.pi / self.lambda0)
        if self.drive_time < 0:
            raise ValueError(f"drive_time must be non-negative, got {self.drive_time}")
        if self.lambda0 > 0.1 * self.omega0:
            warnings.warn(
                f"lambda0 = {self.lambda0} is not small against omega0 = {self.omega0}; "
                "the weak-driving (rotating wave) assumption degrades",
                RegimeWarning,
                stacklevel=2,
            )
        if self.gamma > 0.1 * self.omega0:
            warnings.warn(
                f"gamma = {self.gamma} is not small against omega0 = {self.omega0}; "
                "the weak-coupling (Lindblad) assumption degrades",
                RegimeWarning,
                stacklevel=2,
            )


@dataclass(frozen=True)
class Rates:
    """Absorption/emission rates derived from gamma and the bath occupation.

    gamma0 = gamma (N+1) governs quanta emitted into the bath, gamma1 =
    gamma N quanta absorbed from it; detailed balance gamma1/gamma0 =
    exp(-beta) holds by construction.
    """

    gamma0: float
    gamma1: float
    gamma_sigma: float
    occupation: float

    @property
    def boltzmann_ratio(self) -> float:
        """gamma1/gamma0, valid even at gamma = 0 where both rates vanish."""
        return self.occupation / (self.occupation + 1.0)


def bath_occupation(beta: float) -> float:
    """Mean thermal occupation 1/(exp(beta) - 1), beta in units of 1/(hbar*omega0)."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    try:
        return 1.0 / math.expm1(beta)
    except OverflowError:
        return 0.0


def make_rates(params: PhysicalParams) -> Rates:
    occ = bath_occupation(params.beta)
    gamma0 = params.gamma * (occ + 1.0)
    gamma1 = params.gamma * occ
    return Rates(gamma0=gamma0, gamma1=gamma1, gamma_sigma=gamma0 + gamma1, occupation=occ)


def jump_operators(rates: Rates, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """C0 = sqrt(gamma0) a (photon emitted into the bath, heat +1) and
    C1 = sqrt(gamma1) a^+ (photon absorbed from the bath, heat -1)."""
    lowering, raising = ladder_operators(dim)
    c0 = np.sqrt(rates.gamma0) * lowering
    c1 = np.sqrt(rates.gamma1) * raising
    c0.flags.writeable = False
    c1.flags.writeable = False
    return c0, c1


def nh_generator(params: PhysicalParams, rates: Rates) -> np.ndarray:
    """Generator K of the conditional no-jump evolution U_nh(t) = exp(-i K t).

    K = (lambda0/sqrt(2)) P - (i/2)(gamma_sigma n + gamma1). Its hermitian
    part is the drive alone; the anti-hermitian part encodes the norm decay
    whose squared magnitude is the no-jump probability.
    """
    dim = params.dim
    _, p = quadratures(dim)
    decay = -0.5j * (rates.gamma_sigma * number_operator(dim) + rates.gamma1 * np.eye(dim))
    k = params.lambda0 / np.sqrt(2) * p + decay
    k.flags.writeable = False
    return k


def no_jump_propagator(params: PhysicalParams, rates: Rates, t: float) -> np.ndarray:
    """U_nh(t) = exp(-i K t)."""
    if t < 0:
        raise ValueError(f"propagation time must be non-negative, got {t}")
    return matrix_exponential(-1j * t * nh_generator(params, rates))
