"""Compressible neo-Hookean law in two dimensions.

    W(Fe) = mu/2 * (tr(Fe^T Fe) / det Fe - 2) + K/2 * (det Fe - 1)^2
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvertedElementError(ValueError):
    """Raised when an elastic deformation has non-positive determinant."""

    def __init__(self, message: str, triangle: int | None = None):
        super().__init__(message)
        self.triangle = triangle


@dataclass(frozen=True)
class MaterialParams:
    mu_g: float = 1.0
    K_g: float = 1.0
    mu_ng: float = 0.1
    K_ng: float = 0.1

    def __post_init__(self):
        for name in ("mu_g", "K_g", "mu_ng", "K_ng"):
            v = getattr(self, name)
            if not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")

    @classmethod
    def from_ratio(cls, ratio: float, mu_g: float = 1.0, K_g: float = 1.0) -> "MaterialParams":
        """Same stiffness ratio for shear and bulk moduli (non-growing / growing)."""
        return cls(mu_g=mu_g, K_g=K_g, mu_ng=ratio * mu_g, K_ng=ratio * K_g)

    def scaled(self, factor: float) -> "MaterialParams":
        return MaterialParams(
            self.mu_g * factor, self.K_g * factor, self.mu_ng * factor, self.K_ng * factor
        )

    def per_triangle(self, growing: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mu = np.where(growing, self.mu_g, self.mu_ng)
        K = np.where(growing, self.K_g, self.K_ng)
        return mu, K


def _det(F: np.ndarray) -> float:
    F = np.asarray(F, dtype=float)
    J = F[0, 0] * F[1, 1] - F[0, 1] * F[1, 0]
    if not J > 0:
        raise InvertedElementError(f"det(Fe) = {J:.3e} <= 0")
    return J


def cofactor(F: np.ndarray) -> np.ndarray:
    """det(F) F^{-T} for a 2x2 matrix (linear in F)."""
    return np.array([[F[1, 1], -F[1, 0]], [-F[0, 1], F[0, 0]]])


def strain_energy_density(Fe: np.ndarray, mu: float, K: float) -> float:
    J = _det(Fe)
    I1 = float(np.sum(np.square(Fe)))
    return 0.5 * mu * (I1 / J - 2.0) + 0.5 * K * (J - 1.0) ** 2


def dW_dFe(Fe: np.ndarray, mu: float, K: float) -> np.ndarray:
    Fe = np.asarray(Fe, dtype=float)
    J = _det(Fe)
    I1 = float(np.sum(np.square(Fe)))
    cof = cofactor(Fe)
    return mu * (Fe / J - 0.5 * I1 / J**2 * cof) + K * (J - 1.0) * cof


def cauchy_stress(Fe: np.ndarray, mu: float, K: float) -> np.ndarray:
    """sigma = J^{-1} dW/dFe Fe^T, which reduces to mu/J^2 (B - tr(B)/2 I) + K (J-1) I."""
    Fe = np.asarray(Fe, dtype=float)
    J = _det(Fe)
    B = Fe @ Fe.T
    dev = B - 0.5 * np.trace(B) * np.eye(2)
    # symmetrize the off-diagonal explicitly; B is symmetric up to rounding
    dev[0, 1] = dev[1, 0] = 0.5 * (B[0, 1] + B[1, 0])
    return mu / J**2 * dev + K * (J - 1.0) * np.eye(2)


def first_piola_diagnostic(F: np.ndarray, G: np.ndarray, mu: float, K: float) -> np.ndarray:
    """Pi = det(G) dW/dFe G^{-T} with Fe = F G^{-1}."""
    F = np.asarray(F, dtype=float)
    G = np.asarray(G, dtype=float)
    Jg = G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0]
    if not Jg > 0:
        raise ValueError(f"growth tensor must have positive determinant, got {Jg:.3e}")
    Ginv = np.linalg.inv(G)
    return Jg * dW_dFe(F @ Ginv, mu, K) @ Ginv.T


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])
