"""AFDM baseband modem: chirp-transform pair, chirp-periodic prefix, 4-QAM mapping.

The forward transform is a DFT sandwiched between two quadratic-phase
diagonals; `daft_matrix` builds the explicit matrix (test oracle), while
`daft`/`idaft` run the O(N log N) chirp-multiply + FFT path.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "AfdmConfig",
    "default_c1",
    "daft_matrix",
    "idaft",
    "daft",
    "add_cpp",
    "remove_cpp",
    "qam_map",
    "qam_demap",
]


def default_c1(n: int, k_max: float) -> float:
    """Smallest chirp rate giving full Doppler separability.

    Returns (2*(k_max+1)+1)/(2N), so 2*N*c1 is an odd integer and integer
    Doppler shifts up to k_max (plus fractional guard) map to distinct
    output bins.
    """
    return (2 * (int(np.ceil(k_max)) + 1) + 1) / (2 * n)


@dataclass(frozen=True)
class AfdmConfig:
    """Waveform constants for one AFDM frame.

    Attributes:
        n: subcarrier count.
        c1, c2: chirp parameters of the transform pair.
        n_cpp: chirp-periodic prefix length in samples (covers the maximum
            channel delay).
        delta_f: subcarrier spacing in Hz.
    """

    n: int
    c1: float
    c2: float = 0.0
    n_cpp: int = 0
    delta_f: float = 15e3

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"need at least 2 subcarriers, got n={self.n}")
        if not 0 <= self.n_cpp < self.n:
            raise ValueError(f"n_cpp must be in [0, n), got {self.n_cpp}")
        if self.delta_f <= 0:
            raise ValueError("delta_f must be positive")

    @property
    def t_s(self) -> float:
        """Sample period 1/(N*delta_f)."""
        return 1.0 / (self.n * self.delta_f)

    @property
    def chirp_shift(self) -> int:
        """Integer q = 2*N*c1; raises if c1 does not satisfy the convention.

        The cyclic-shift channel model is exact only when q is an integer
        and q*N is even (always true for even N).
        """
        q = 2 * self.n * self.c1
        if abs(q - round(q)) > 1e-9:
            raise ValueError(f"2*N*c1 = {q} is not an integer; cyclic channel model invalid")
        return int(round(q))


def _chirp(n: int, c: float) -> np.ndarray:
    # diagonal of the quadratic-phase matrix, e^{-j 2 pi c k^2}
    k = np.arange(n)
    return np.exp(-2j * np.pi * c * k * k)


def daft_matrix(cfg: AfdmConfig) -> np.ndarray:
    """Explicit N x N forward transform matrix (O(N^2) oracle path)."""
    n = np.arange(cfg.n)
    f = np.exp(-2j * np.pi * np.outer(n, n) / cfg.n) / np.sqrt(cfg.n)
    return _chirp(cfg.n, cfg.c2)[:, None] * f * _chirp(cfg.n, cfg.c1)[None, :]


def _col(d: np.ndarray, ndim: int) -> np.ndarray:
    # broadcast a length-N diagonal against the leading axis of an ndim array
    return d.reshape((-1,) + (1,) * (ndim - 1))


def idaft(x: np.ndarray, cfg: AfdmConfig) -> np.ndarray:
    """Inverse transform: DAF-domain symbols -> time samples.

    Accepts a length-N vector or an (N, k) array transformed column-wise.
    """
    x = np.asarray(x, dtype=complex)
    if x.shape[0] != cfg.n:
        raise ValueError(f"expected length {cfg.n} along axis 0, got {x.shape[0]}")
    v = np.fft.ifft(_col(np.conj(_chirp(cfg.n, cfg.c2)), x.ndim) * x, axis=0, norm="ortho")
    return _col(np.conj(_chirp(cfg.n, cfg.c1)), x.ndim) * v


def daft(r: np.ndarray, cfg: AfdmConfig) -> np.ndarray:
    """Forward transform: time samples (CPP already removed) -> DAF domain.

    Exact adjoint of `idaft`; column-wise for 2-D input.
    """
    r = np.asarray(r, dtype=complex)
    if r.shape[0] != cfg.n:
        raise ValueError(f"expected length {cfg.n} along axis 0, got {r.shape[0]}"
                         " (remove the CPP first)")
    v = np.fft.fft(_col(_chirp(cfg.n, cfg.c1), r.ndim) * r, axis=0, norm="ortho")
    return _col(_chirp(cfg.n, cfg.c2), r.ndim) * v


def add_cpp(s: np.ndarray, cfg: AfdmConfig) -> np.ndarray:
    """Prepend the chirp-periodic prefix.

    Prefix sample at n in [-n_cpp, 0) is s[N+n] * exp(-j 2 pi c1 (N^2 + 2Nn)),
    the extension under which an integer channel delay acts as a cyclic
    shift on the core frame. Reduces to a plain cyclic prefix for c1 = 0.
    """
    s = np.asarray(s, dtype=complex)
    if s.shape != (cfg.n,):
        raise ValueError(f"expected core frame of length {cfg.n}, got {s.shape}")
    if cfg.n_cpp == 0:
        return s.copy()
    n = np.arange(-cfg.n_cpp, 0)
    prefix = s[cfg.n + n] * np.exp(-2j * np.pi * cfg.c1 * (cfg.n**2 + 2 * cfg.n * n))
    return np.concatenate([prefix, s])


def remove_cpp(s_ext: np.ndarray, cfg: AfdmConfig) -> np.ndarray:
    """Drop the prefix, returning the N-sample core."""
    s_ext = np.asarray(s_ext, dtype=complex)
    if s_ext.shape != (cfg.n + cfg.n_cpp,):
        raise ValueError(f"expected length {cfg.n + cfg.n_cpp}, got {s_ext.shape}")
    return s_ext[cfg.n_cpp:].copy()


# Gray-mapped 4-QAM, unit average energy. Bit pair (b0, b1) selects
# (I, Q) signs: 0 -> +1, 1 -> -1, so 00 -> (1+1j)/sqrt(2).
_QAM4 = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)


def qam_map(bits: np.ndarray, order: int = 4) -> np.ndarray:
    """Map bits to Gray-coded unit-energy QAM symbols (4-QAM only)."""
    if order != 4:
        raise NotImplementedError(f"only 4-QAM is wired up, got order={order}")
    bits = np.asarray(bits, dtype=int).ravel()
    if bits.size % 2:
        raise ValueError(f"bit count {bits.size} not divisible by 2")
    idx = 2 * bits[0::2] + bits[1::2]
    return _QAM4[idx]


def qam_demap(symbols: np.ndarray, order: int = 4) -> np.ndarray:
    """Nearest-neighbour hard decision back to bits."""
    if order != 4:
        raise NotImplementedError(f"only 4-QAM is wired up, got order={order}")
    symbols = np.asarray(symbols, dtype=complex).ravel()
    bits = np.empty(2 * symbols.size, dtype=int)
    bits[0::2] = (symbols.real < 0).astype(int)
    bits[1::2] = (symbols.imag < 0).astype(int)
    return bits
