"""Domain types and the U <-> u coordinate change."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict, field

import numpy as np


class DomainError(ValueError):
    """Argument outside the domain of a closed-form map."""


class DataError(ValueError):
    """Initial data violates a structural assumption."""


@dataclass(frozen=True)
class ModelParams:
    """Physical and data parameters of one experiment.

    Lengths are in the same units as ``M``; ``D1, D2, D3`` are dimensionless.
    """

    M: float = 1.0
    p: float = 2.0
    q: float = 2.0
    D1: float = 0.05
    D2: float = 0.05
    D3: float = 0.05
    v0: float = 10.0
    U0: float = 1e-3
    r_min: float = 1e-3
    r0: float = 0.4

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.M > 0:
            raise ValueError("M must be positive")
        if not (1.0 < self.p <= self.q < 3.0 * self.p - 1.0):
            raise ValueError(f"need 1 < p <= q < 3p-1, got p={self.p}, q={self.q}")
        if min(self.D1, self.D2, self.D3) < 0:
            raise ValueError("data amplitudes must be nonnegative")
        if self.D1 > self.D2:
            raise ValueError("need D1 <= D2")
        if not self.U0 > 0:
            raise ValueError("U0 must be positive")
        if not (0.0 < self.r_min < self.r0 < 2.0 * self.M):
            raise ValueError("need 0 < r_min < r0 < 2M")

    @property
    def is_vacuum(self) -> bool:
        return self.D1 == 0.0 and self.D2 == 0.0 and self.D3 == 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CellState:
    """Field values and first derivatives at one grid point, in the (U, v) gauge.

    ``w = r**2`` and ``sigma = ln(Omega_hat**2)``.
    """

    U: float
    v: float
    w: float
    sigma: float
    phi: float
    dU_w: float
    dU_sigma: float
    dU_phi: float
    dv_w: float
    dv_sigma: float
    dv_phi: float
    M: float = 1.0
    u: float = field(init=False)

    def __post_init__(self):
        if self.w < 0:
            raise DomainError("w must be nonnegative")
        object.__setattr__(self, "u", u_from_U(self.U, self.M) if self.U > 0 else -math.inf)

    @property
    def r(self) -> float:
        return math.sqrt(self.w)

    @property
    def omega2hat(self) -> float:
        return math.exp(self.sigma)

    @property
    def dU_r(self) -> float:
        return self.dU_w / (2.0 * self.r)

    @property
    def dv_r(self) -> float:
        return self.dv_w / (2.0 * self.r)

    def as_array(self) -> np.ndarray:
        """Packed layout used by the kernels: w, sigma, phi, then U- and v-derivatives."""
        return np.array([self.w, self.sigma, self.phi, self.dU_w, self.dU_sigma, self.dU_phi,
                         self.dv_w, self.dv_sigma, self.dv_phi])

    @classmethod
    def from_array(cls, U: float, v: float, x, M: float = 1.0) -> "CellState":
        return cls(U, v, *map(float, x[:9]), M=M)


@dataclass(frozen=True)
class DiagnosticRecord:
    m: float
    K: float
    dvr: float
    trapped: bool
    res_u: float = float("nan")
    res_v: float = float("nan")


def U_from_u(u, M):
    """Regular outgoing coordinate U = 4M exp(u / 4M)."""
    if np.ndim(u):
        return 4.0 * M * np.exp(np.asarray(u, dtype=float) / (4.0 * M))
    return 4.0 * M * math.exp(u / (4.0 * M))


def u_from_U(U, M):
    """Inverse of :func:`U_from_u`. ``U = 0`` is the horizon (u = -inf) and is rejected."""
    if np.ndim(U):
        U = np.asarray(U, dtype=float)
        if np.any(U <= 0):
            raise DomainError("U must be positive")
        return 4.0 * M * np.log(U / (4.0 * M))
    if not U > 0:
        raise DomainError("U must be positive (U = 0 is the horizon, u = -inf)")
    return 4.0 * M * math.log(U / (4.0 * M))


def omega2_from_gauge(omega2_hat, U, M):
    """Lapse in the (u, v) gauge: Omega^2 = Omega_hat^2 * dU/du = Omega_hat^2 * U / 4M."""
    if np.ndim(omega2_hat) or np.ndim(U):
        o, U = np.asarray(omega2_hat, float), np.asarray(U, float)
        if np.any(o <= 0) or np.any(U <= 0):
            raise DomainError("omega2_hat and U must be positive")
        return o * U / (4.0 * M)
    if not (omega2_hat > 0 and U > 0):
        raise DomainError("omega2_hat and U must be positive")
    return omega2_hat * U / (4.0 * M)
