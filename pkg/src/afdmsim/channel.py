"""Doubly-dispersive channel: path sampling, propagation, steering dictionary.

Delays are integer sample shifts (made cyclic by the chirp-periodic
prefix), Dopplers are continuous and carried in subcarrier units k, so the
Doppler operator is diag(exp(j 2 pi k n / N)). `daf_kernel` builds the
equivalent DAF-domain channel matrix including phase noise and serves as
the end-to-end oracle against time-domain propagation.
"""

from dataclasses import dataclass, replace

import numpy as np

from afdmsim.modem import AfdmConfig

__all__ = [
    "PathSet",
    "Grid",
    "sample_paths",
    "apply_channel",
    "steering_vector",
    "steering_derivative",
    "build_dictionary",
    "build_derivative",
    "daf_kernel",
]


@dataclass(frozen=True)
class PathSet:
    """The physical propagation paths.

    gains: complex path gains, total mean power 1.
    delays: integer delays in samples, pairwise distinct, within [0, ell_max].
    dopplers: continuous normalized Dopplers in subcarrier units.
    """

    gains: np.ndarray
    delays: np.ndarray
    dopplers: np.ndarray

    def __post_init__(self):
        if not (len(self.gains) == len(self.delays) == len(self.dopplers)):
            raise ValueError("gains/delays/dopplers length mismatch")
        if len(np.unique(self.delays)) != len(self.delays):
            raise ValueError("path delays must be pairwise distinct")

    @property
    def count(self) -> int:
        return len(self.gains)


def sample_paths(rng: np.random.Generator, n_paths: int, ell_max: int,
                 k_max: float, on_grid: bool = False, r_nu: float = 1.0) -> PathSet:
    """Draw a random channel: Jakes Dopplers, distinct uniform delays.

    Delays come uniformly without replacement from {0..ell_max}; Dopplers
    are k_max*cos(theta) with theta uniform on [0, 2pi), snapped to the
    nearest Doppler grid point when on_grid; gains are circularly-symmetric
    complex Gaussian with variance 1/n_paths.
    """
    if n_paths > ell_max + 1:
        raise ValueError(f"cannot draw {n_paths} distinct delays from [0, {ell_max}]")
    delays = np.sort(rng.choice(ell_max + 1, size=n_paths, replace=False))
    theta = rng.uniform(0.0, 2 * np.pi, n_paths)
    dopplers = k_max * np.cos(theta)
    if on_grid:
        # snap to the grid lattice b*r_nu - k_max - 1
        dopplers = np.round((dopplers + k_max + 1) / r_nu) * r_nu - k_max - 1
    gains = (rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths)) \
        * np.sqrt(0.5 / n_paths)
    return PathSet(gains=gains, delays=delays.astype(int), dopplers=dopplers)


def apply_channel(s_ext: np.ndarray, paths: PathSet, cfg: AfdmConfig) -> np.ndarray:
    """Propagate a CPP-extended frame; returns the N-sample core.

    Output equals sum_p h_p V^{k_p} Pi^{ell_p} applied to the core frame,
    with V the Doppler diagonal and Pi the forward cyclic shift -- the
    prefix makes linear delay act cyclically. Phase noise and AWGN are
    applied by the caller.
    """
    s_ext = np.asarray(s_ext, dtype=complex)
    if s_ext.shape != (cfg.n + cfg.n_cpp,):
        raise ValueError(f"expected CPP-extended frame of length {cfg.n + cfg.n_cpp}")
    if np.any(paths.delays > cfg.n_cpp):
        raise ValueError(f"path delay exceeds n_cpp={cfg.n_cpp}; channel model violated")
    n = np.arange(cfg.n)
    out = np.zeros(cfg.n, dtype=complex)
    for h, ell, k in zip(paths.gains, paths.delays, paths.dopplers):
        delayed = s_ext[cfg.n_cpp - ell: cfg.n_cpp - ell + cfg.n]
        out += h * np.exp(2j * np.pi * k * n / cfg.n) * delayed
    return out


@dataclass
class Grid:
    """Virtual delay-Doppler sampling points with evolvable Doppler axis.

    Point m has integer delay delays[m], lattice Doppler lattice[m], and a
    cumulative perturbation xi[m] bounded by half the resolution, so
    evolved points stay inside their own cell and never overlap. Delays
    never move; the effective Doppler is lattice + xi.
    """

    ell_max: int
    k_max: float
    r_tau: int
    r_nu: float
    delays: np.ndarray
    lattice: np.ndarray
    xi: np.ndarray

    @classmethod
    def build(cls, ell_max: int, k_max: float, r_tau: int = 1, r_nu: float = 1.0) -> "Grid":
        if r_tau < 1 or int(r_tau) != r_tau:
            raise ValueError(f"r_tau must be a positive integer, got {r_tau}")
        if r_nu <= 0:
            raise ValueError(f"r_nu must be positive, got {r_nu}")
        if ell_max % r_tau != 0:
            raise ValueError(f"ell_max={ell_max} not divisible by r_tau={r_tau}")
        span = 2 * k_max + 2
        m_nu_f = span / r_nu
        if abs(m_nu_f - round(m_nu_f)) > 1e-9:
            raise ValueError(f"(2*k_max+2)={span} not divisible by r_nu={r_nu}")
        m_tau = ell_max // r_tau + 1
        m_nu = int(round(m_nu_f)) + 1
        m = np.arange(m_tau * m_nu)
        delays = (m // m_nu) * r_tau
        lattice = (m % m_nu) * r_nu - k_max - 1.0
        return cls(ell_max=ell_max, k_max=k_max, r_tau=int(r_tau), r_nu=r_nu,
                   delays=delays.astype(int), lattice=lattice.astype(float),
                   xi=np.zeros(m_tau * m_nu))

    @property
    def dopplers(self) -> np.ndarray:
        """Current effective Doppler of every grid point."""
        return self.lattice + self.xi

    @property
    def m_tau(self) -> int:
        return self.ell_max // self.r_tau + 1

    @property
    def m_nu(self) -> int:
        return int(round((2 * self.k_max + 2) / self.r_nu)) + 1

    @property
    def size(self) -> int:
        return len(self.delays)

    def copy(self) -> "Grid":
        return replace(self, delays=self.delays.copy(),
                       lattice=self.lattice.copy(), xi=self.xi.copy())


def steering_vector(s_pilot: np.ndarray, ell: int, k: float,
                    cfg: AfdmConfig, xi: float = 0.0) -> np.ndarray:
    """Dictionary column: pilot frame cyclically delayed by ell, Doppler k+xi."""
    s_pilot = np.asarray(s_pilot, dtype=complex)
    if s_pilot.shape != (cfg.n,):
        raise ValueError(f"pilot frame must have length {cfg.n}")
    n = np.arange(cfg.n)
    return np.exp(2j * np.pi * (k + xi) * n / cfg.n) * np.roll(s_pilot, int(ell))


def steering_derivative(s_pilot: np.ndarray, ell: int, k: float,
                        cfg: AfdmConfig, xi: float = 0.0) -> np.ndarray:
    """Derivative of the steering vector with respect to its Doppler."""
    n = np.arange(cfg.n)
    return (2j * np.pi * n / cfg.n) * steering_vector(s_pilot, ell, k, cfg, xi)


def build_dictionary(grid: Grid, s_pilot: np.ndarray, cfg: AfdmConfig) -> np.ndarray:
    """N x M_S matrix whose column m is the steering vector at grid point m."""
    s_pilot = np.asarray(s_pilot, dtype=complex)
    if s_pilot.shape != (cfg.n,):
        raise ValueError(f"pilot frame must have length {cfg.n}")
    n = np.arange(cfg.n)
    uniq, inv = np.unique(grid.delays, return_inverse=True)
    rolled = np.stack([np.roll(s_pilot, int(d)) for d in uniq], axis=1)
    phase = np.exp(2j * np.pi * np.outer(n, grid.dopplers) / cfg.n)
    return rolled[:, inv] * phase


def build_derivative(grid: Grid, s_pilot: np.ndarray, cfg: AfdmConfig) -> np.ndarray:
    """Columnwise Doppler derivative of the dictionary."""
    n = np.arange(cfg.n)
    return (2j * np.pi * n / cfg.n)[:, None] * build_dictionary(grid, s_pilot, cfg)


def daf_kernel(paths: PathSet, pn_phase: np.ndarray, cfg: AfdmConfig) -> np.ndarray:
    """Equivalent DAF-domain channel matrix under phase noise (oracle).

    Satisfies daft(exp(j*phi) * apply_channel(add_cpp(idaft(x)))) == H @ x.
    The Doppler enters the interaction sum with a minus sign, the
    convention consistent with the +j Doppler modulation in apply_channel.
    """
    pn_phase = np.asarray(pn_phase, dtype=float)
    if pn_phase.shape != (cfg.n,):
        raise ValueError(f"phase trajectory must have length {cfg.n}")
    big_n = cfg.n
    m = np.arange(big_n)
    e = np.exp(1j * pn_phase)
    diff = m[:, None] - m[None, :]          # output index minus input index
    deltas = np.arange(-(big_n - 1), big_n)
    h_mat = np.zeros((big_n, big_n), dtype=complex)
    for h, ell, k in zip(paths.gains, paths.delays, paths.dopplers):
        alpha = 2 * big_n * cfg.c1 * ell - k
        interact = np.exp(-2j * np.pi * np.outer(deltas + alpha, m) / big_n) @ e
        pref = np.exp(2j * np.pi * (cfg.c1 * ell**2 - m[None, :] * ell / big_n
                                    + cfg.c2 * (m[None, :]**2 - m[:, None]**2)))
        h_mat += h * pref * interact[diff + (big_n - 1)]
    return h_mat / big_n
