"""Comparison estimators: greedy OMP with Newton Doppler refinement,
fixed-grid first-order off-grid SBL, and genie least squares."""

import enum

import numpy as np

from afdmsim.channel import Grid, PathSet, build_dictionary, steering_derivative, steering_vector
from afdmsim.estimator import ChannelEstimate, SblHyperParams, sbl_estimate
from afdmsim.modem import AfdmConfig
from afdmsim.phasenoise import PnModel

__all__ = ["BaselineKind", "omp_newton", "offgrid_sbl_fixed", "oracle_ls"]


class BaselineKind(enum.Enum):
    OMP_NEWTON = "omp_newton"
    OFFGRID_SBL_FIXED = "offgrid_sbl_fixed"
    ORACLE_LS = "oracle_ls"


def _refine_doppler(residual: np.ndarray, s_pilot: np.ndarray, ell: int, k: float,
                    cfg: AfdmConfig, r_nu: float, n_steps: int = 3) -> float:
    """Newton steps on the correlation objective |<phi(k+xi), residual>|^2.

    Gradient from the analytic Doppler derivative, curvature by central
    difference; each step backtracks by halving while the objective drops.
    The offset is clipped to +-r_nu/2.
    """
    def score(xi):
        return np.abs(np.vdot(steering_vector(s_pilot, ell, k, cfg, xi), residual)) ** 2

    xi = 0.0
    fd = 1e-4
    for _ in range(n_steps):
        col = steering_vector(s_pilot, ell, k, cfg, xi)
        c = np.vdot(col, residual)
        dc = np.vdot(steering_derivative(s_pilot, ell, k, cfg, xi), residual)
        grad = 2.0 * np.real(np.conj(c) * dc)
        curv = (score(xi + fd) - 2.0 * score(xi) + score(xi - fd)) / fd**2
        if curv >= 0 or not np.isfinite(curv):
            break
        step = -grad / curv
        base = score(xi)
        for _ in range(8):
            cand = float(np.clip(xi + step, -r_nu / 2.0, r_nu / 2.0))
            if score(cand) >= base:
                xi = cand
                break
            step *= 0.5
        else:
            break
    return xi


def omp_newton(r: np.ndarray, s_pilot: np.ndarray, cfg: AfdmConfig, grid: Grid,
               max_paths: int, noise_floor: float | None = None,
               refine: bool = True) -> ChannelEstimate:
    """Greedy matching pursuit over the grid with per-atom Doppler refinement.

    Each round selects the max-correlation atom, Newton-refines its Doppler
    offset, re-solves least squares on all selected refined atoms and
    subtracts. Stops at max_paths or when the residual energy falls below
    noise_floor. Phase noise is not modeled.
    """
    if max_paths < 1:
        raise ValueError("max_paths must be >= 1")
    phi = build_dictionary(grid, s_pilot, cfg)
    residual = np.asarray(r, dtype=complex).copy()
    sel_delays, sel_dopplers, atoms = [], [], []
    gains = np.zeros(0, dtype=complex)
    for _ in range(max_paths):
        scores = np.abs(phi.conj().T @ residual)
        m_star = int(np.argmax(scores))
        ell = int(grid.delays[m_star])
        k = float(grid.dopplers[m_star])
        xi = _refine_doppler(residual, s_pilot, ell, k, cfg, grid.r_nu) if refine else 0.0
        sel_delays.append(ell)
        sel_dopplers.append(k + xi)
        atoms.append(steering_vector(s_pilot, ell, k, cfg, xi))
        a = np.stack(atoms, axis=1)
        gains, *_ = np.linalg.lstsq(a, r, rcond=None)
        residual = r - a @ gains
        if noise_floor is not None and np.vdot(residual, residual).real < noise_floor:
            break
    return ChannelEstimate(
        gains=gains,
        delays=np.array(sel_delays, dtype=int),
        dopplers=np.array(sel_dopplers, dtype=float),
        eta_hat=np.zeros(0),
        phi_hat=np.zeros(cfg.n),
    )


def offgrid_sbl_fixed(r: np.ndarray, s_pilot: np.ndarray, cfg: AfdmConfig,
                      grid: Grid, pn_model: PnModel | None, hyper: SblHyperParams,
                      pn_compensation: bool = False) -> ChannelEstimate:
    """First-order off-grid SBL on a fixed grid.

    Same EM loop as the main estimator but grid points never move: the
    Doppler offsets enter only through the linearized dictionary
    Phi + Omega diag(xi). pn_compensation toggles the basic phase-noise
    stage.
    """
    return sbl_estimate(r, s_pilot, cfg, grid, pn_model, hyper,
                        track_pn=pn_compensation, evolve_grid=False,
                        linear_offgrid=True)


def oracle_ls(r: np.ndarray, true_paths: PathSet, pn_phase: np.ndarray | None,
              s_pilot: np.ndarray, cfg: AfdmConfig) -> ChannelEstimate:
    """Least-squares gains on the true steering vectors (genie reference).

    With the true phase trajectory supplied this is the perfect-CSI
    detection anchor; with pn_phase None it is a PN-ignorant genie.
    """
    a = np.stack([steering_vector(s_pilot, ell, k, cfg)
                  for ell, k in zip(true_paths.delays, true_paths.dopplers)], axis=1)
    phi_hat = np.zeros(cfg.n) if pn_phase is None else np.asarray(pn_phase, dtype=float)
    a_eff = np.exp(1j * phi_hat)[:, None] * a
    gains, *_ = np.linalg.lstsq(a_eff, r, rcond=None)
    return ChannelEstimate(
        gains=gains,
        delays=true_paths.delays.copy(),
        dopplers=true_paths.dopplers.copy(),
        eta_hat=np.zeros(0),
        phi_hat=phi_hat,
    )
