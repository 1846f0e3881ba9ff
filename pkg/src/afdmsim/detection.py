"""DAF-domain channel reconstruction, MMSE equalization, bit counting."""

import numpy as np

from afdmsim.estimator import ChannelEstimate
from afdmsim.modem import AfdmConfig, daft

__all__ = ["build_effective_channel", "mmse_equalize", "count_errors"]


def build_effective_channel(est: ChannelEstimate, cfg: AfdmConfig) -> np.ndarray:
    """N x N DAF-domain matrix implied by a channel + phase-noise estimate.

    H = A (P(eta) sum_p h_p V^{k_p} Pi^{l_p}) A^H with A the forward
    transform, applied operator-wise: the time-domain channel matrix is
    assembled path by path, then both transform sides run as column-wise
    fast transforms. Uses the exact exponential phase trajectory.
    """
    n = cfg.n
    t = np.zeros((n, n), dtype=complex)
    n_idx = np.arange(n)
    for h, ell, k in zip(est.gains, est.delays, est.dopplers):
        if not np.isfinite(h):
            raise ValueError("non-finite gain in channel estimate")
        doppler = np.exp(2j * np.pi * k * n_idx / n)
        t += h * doppler[:, None] * np.roll(np.eye(n), int(ell), axis=0)
    d = np.exp(1j * est.phi_hat)[:, None] * t
    # A D A^H as two fast transforms: X = A D, then (A X^H)^H = X A^H
    x = daft(d, cfg)
    return daft(x.conj().T, cfg).conj().T


def mmse_equalize(y_af: np.ndarray, h: np.ndarray, noise_var: float) -> np.ndarray:
    """Linear MMSE symbol estimate x = H^H (H H^H + noise_var I)^{-1} y."""
    if noise_var <= 0:
        raise ValueError(f"noise_var must be positive, got {noise_var}")
    n = h.shape[0]
    gram = h @ h.conj().T + noise_var * np.eye(n)
    try:
        z = np.linalg.solve(gram, y_af)
    except np.linalg.LinAlgError:
        # fall back to a regularized solve; gram is Hermitian PSD + ridge
        z = np.linalg.lstsq(gram, y_af, rcond=None)[0]
    return h.conj().T @ z


def count_errors(bits_hat: np.ndarray, bits_true: np.ndarray) -> tuple[int, int]:
    """Hamming distance and total length."""
    bits_hat = np.asarray(bits_hat, dtype=int).ravel()
    bits_true = np.asarray(bits_true, dtype=int).ravel()
    if bits_hat.shape != bits_true.shape:
        raise ValueError(f"length mismatch: {bits_hat.shape} vs {bits_true.shape}")
    return int(np.sum(bits_hat != bits_true)), int(bits_true.size)
