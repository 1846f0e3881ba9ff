"""Wiener phase noise: sampling, covariance, reduced-rank basis, PN matrices.

The oscillator phase is a random walk phi_n = phi_{n-1} + delta_n with
delta_n ~ N(0, sigma2) and phi_{-1} = 0, so cov(phi_m, phi_n) =
sigma2 * (min(m, n) + 1). Tracking uses the scaled dominant eigenvectors
of that covariance as a basis: phi ~= B @ eta with eta of unit prior
variance.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "wiener_covariance",
    "sample_wiener",
    "pn_basis",
    "pn_matrix",
    "pn_matrix_linearized",
    "PnModel",
]


def wiener_covariance(n: int, sigma2: float) -> np.ndarray:
    """N x N covariance of the random-walk phase, sigma2 * (min(m,n)+1)."""
    if sigma2 <= 0:
        raise ValueError(f"innovation variance must be positive, got {sigma2}")
    idx = np.arange(n)
    return sigma2 * (np.minimum.outer(idx, idx) + 1.0)


def sample_wiener(rng: np.random.Generator, n: int, sigma2: float) -> np.ndarray:
    """Draw one length-n phase trajectory (phi_0 is already an innovation)."""
    if sigma2 == 0:
        return np.zeros(n)
    return np.cumsum(rng.normal(0.0, np.sqrt(sigma2), n))


def pn_basis(cov: np.ndarray, subspace_dim: int) -> np.ndarray:
    """Scaled dominant eigenvectors: B = U[:, :L] * sqrt(d[:L]).

    Eigenvalues sorted nonincreasing; each eigenvector's first nonzero
    entry is made positive so B is reproducible across platforms.
    B @ B.T is the best rank-L approximation of cov.
    """
    n = cov.shape[0]
    if not 1 <= subspace_dim <= n:
        raise ValueError(f"subspace_dim must be in [1, {n}], got {subspace_dim}")
    d, u = np.linalg.eigh(cov)
    if not np.all(np.isfinite(d)):
        raise FloatingPointError("eigendecomposition of the PN covariance failed")
    d, u = d[::-1], u[:, ::-1]
    for j in range(n):
        nz = np.nonzero(np.abs(u[:, j]) > 1e-12)[0]
        if nz.size and u[nz[0], j] < 0:
            u[:, j] = -u[:, j]
    d = np.clip(d, 0.0, None)
    return u[:, :subspace_dim] * np.sqrt(d[:subspace_dim])


def pn_matrix(eta: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Diagonal of the exact PN matrix, exp(j * B @ eta)."""
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (basis.shape[1],):
        raise ValueError(f"eta length {eta.shape} does not match basis {basis.shape}")
    return np.exp(1j * basis @ eta)


def pn_matrix_linearized(eta: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Small-angle diagonal 1 + j * (B @ eta), used only inside the PN update."""
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (basis.shape[1],):
        raise ValueError(f"eta length {eta.shape} does not match basis {basis.shape}")
    return 1.0 + 1j * (basis @ eta)


@dataclass(frozen=True)
class PnModel:
    """Phase-noise statistics plus the reduced-rank tracking basis."""

    sigma2: float
    n: int
    cov: np.ndarray
    basis: np.ndarray
    eigvals: np.ndarray  # all N eigenvalues, nonincreasing

    @classmethod
    def build(cls, n: int, sigma2: float, subspace_dim: int) -> "PnModel":
        cov = wiener_covariance(n, sigma2)
        basis = pn_basis(cov, subspace_dim)
        eigvals = np.linalg.eigvalsh(cov)[::-1]
        return cls(sigma2=sigma2, n=n, cov=cov, basis=basis, eigvals=eigvals)

    @property
    def subspace_dim(self) -> int:
        return self.basis.shape[1]

    @property
    def captured_energy(self) -> float:
        """Fraction of total phase energy inside the tracked subspace."""
        return float(self.eigvals[: self.subspace_dim].sum() / self.eigvals.sum())
