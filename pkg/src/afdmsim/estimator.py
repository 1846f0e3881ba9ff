"""Joint phase-noise / off-grid channel estimation via sparse Bayesian learning.

EM loop: the E-step computes the Gaussian posterior of the sparse channel
vector through an N x N solve (Woodbury form); the M-step runs three
stages -- hyperparameter updates (per-atom prior variances gamma and noise
precision beta), a regularized quadratic update of the reduced-rank
phase-noise coefficients, and Doppler grid evolution that moves active
grid points toward the continuous path parameters.

`sbl_estimate` is the full algorithm; the baselines module reuses it with
stages toggled off.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from afdmsim.channel import Grid, build_dictionary, build_derivative, steering_vector
from afdmsim.modem import AfdmConfig
from afdmsim.phasenoise import PnModel, pn_matrix

__all__ = [
    "SblHyperParams",
    "PosteriorState",
    "ChannelEstimate",
    "RunDiagnostics",
    "NumericalError",
    "posterior_update",
    "update_hyperparams",
    "update_pn_coeffs",
    "grid_evolution_step",
    "sbl_estimate",
]


class NumericalError(RuntimeError):
    """Non-finite iterate inside the EM loop; carries the iteration index."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


@dataclass(frozen=True)
class SblHyperParams:
    """Knobs of the SBL loop.

    gamma_rule selects between the 'stabilized' prior-variance update
    (stationary point of the Gamma-prior objective, always nonnegative)
    and the 'literal' printed rule, which can go negative for empty atoms
    and is floored at gamma_floor.
    """

    rho: float = 1e-2
    c: float = 1e-6
    d: float = 1e-6
    epsilon: float = 1e-4
    n_iter: int = 100
    support_threshold: float = 1e-3
    max_paths: int = 6
    gamma_rule: str = "stabilized"
    gamma_floor: float = 1e-12
    prune_inactive: bool = True
    prune_after: int = 8

    def __post_init__(self):
        if self.rho <= 0 or self.c <= 0 or self.d <= 0 or self.epsilon <= 0:
            raise ValueError("rho, c, d, epsilon must all be positive")
        if self.gamma_rule not in ("stabilized", "literal"):
            raise ValueError(f"unknown gamma_rule {self.gamma_rule!r}")


@dataclass
class PosteriorState:
    """One SBL iterate: posterior stats plus current hyperparameters."""

    mu: np.ndarray            # posterior means, length M_S
    sigma: np.ndarray         # posterior covariance, M_S x M_S
    gamma: np.ndarray         # prior variances
    beta: float               # noise precision
    eta: np.ndarray           # PN coefficients
    active: np.ndarray        # current active-set indices
    psi: np.ndarray           # effective sensing matrix P * Phi_model

    @property
    def second_moments(self) -> np.ndarray:
        return np.abs(self.mu) ** 2 + np.real(np.diag(self.sigma))


@dataclass
class RunDiagnostics:
    iterations: int = 0
    final_gamma_change: float = math.inf
    residual_norms: list = field(default_factory=list)
    clip_count: int = 0
    jitter_used: bool = False
    cbeta_clamped: bool = False


@dataclass
class ChannelEstimate:
    """Estimator output: recovered paths plus the phase trajectory."""

    gains: np.ndarray
    delays: np.ndarray
    dopplers: np.ndarray
    eta_hat: np.ndarray
    phi_hat: np.ndarray
    noise_var: float = 0.0
    diagnostics: RunDiagnostics | None = None

    @property
    def p_hat(self) -> int:
        return len(self.gains)


def _chol_with_jitter(c: np.ndarray):
    """SPD factorization; adds scaled-identity jitter on failure."""
    try:
        return cho_factor(c, lower=True, check_finite=False), False
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-12 * np.trace(c).real / c.shape[0]
    for _ in range(6):
        try:
            return cho_factor(c + jitter * np.eye(c.shape[0]), lower=True,
                              check_finite=False), True
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise np.linalg.LinAlgError("marginal covariance not positive definite")


def posterior_update(r: np.ndarray, psi: np.ndarray, gamma: np.ndarray, beta: float):
    """Posterior mean/covariance of the sparse gains via the N x N solve.

    Sigma = Gamma - Gamma Psi^H C^{-1} Psi Gamma with
    C = beta^{-1} I + Psi Gamma Psi^H the marginal observation covariance;
    mu = beta Sigma Psi^H r. Only the N x N system C is factorized.

    Returns (mu, sigma, cho_c, jitter_used); cho_c is the Cholesky factor
    of C, reused by the phase-noise update.
    """
    n, m_s = psi.shape
    psi_g = psi * gamma[None, :]
    c = psi_g @ psi.conj().T
    c[np.diag_indices(n)] += 1.0 / beta
    cho_c, jitter_used = _chol_with_jitter(c)
    x = cho_solve(cho_c, psi_g, check_finite=False)      # C^{-1} Psi Gamma
    sigma = np.diag(gamma).astype(complex) - psi_g.conj().T @ x
    sigma = 0.5 * (sigma + sigma.conj().T)
    mu = beta * (sigma @ (psi.conj().T @ r))
    return mu, sigma, cho_c, jitter_used


def update_hyperparams(r: np.ndarray, state: PosteriorState, hyper: SblHyperParams):
    """Closed-form gamma/beta updates plus active-set extraction.

    beta_new = (N + c - 1)/(d + C_beta) with C_beta the residual term;
    gamma per the configured rule. The active set keeps indices whose new
    gamma exceeds support_threshold * max(gamma), capped at max_paths.
    Returns (gamma_new, beta_new, active, cbeta_clamped).
    """
    n = r.shape[0]
    sdiag = np.real(np.diag(state.sigma))
    xi2 = np.abs(state.mu) ** 2 + sdiag
    resid = r - state.psi @ state.mu
    c_beta = float(np.vdot(resid, resid).real
                   + (1.0 / state.beta) * np.sum(1.0 - sdiag / state.gamma))
    clamped = c_beta < 0
    if clamped:
        c_beta = 0.0
    beta_new = (n + hyper.c - 1.0) / (hyper.d + c_beta)

    if hyper.gamma_rule == "stabilized":
        gamma_new = (np.sqrt(1.0 + 4.0 * hyper.rho * xi2) - 1.0) / (2.0 * hyper.rho)
    else:
        gamma_new = (np.sqrt(4.0 * hyper.rho * (xi2 + 1.0)) - 1.0) / (2.0 * hyper.rho)
    gamma_new = np.maximum(gamma_new, hyper.gamma_floor)

    threshold = hyper.support_threshold * gamma_new.max()
    candidates = np.flatnonzero(gamma_new > threshold)
    if len(candidates) > hyper.max_paths:
        order = np.argsort(gamma_new[candidates])[::-1]
        candidates = np.sort(candidates[order[: hyper.max_paths]])
    return gamma_new, beta_new, candidates, clamped


def update_pn_coeffs(r: np.ndarray, dict_mu: np.ndarray, basis: np.ndarray,
                     cho_c) -> np.ndarray:
    """Closed-form phase-noise coefficient update.

    dict_mu is Phi @ mu (reconstruction without phase noise) and cho_c
    factorizes the marginal covariance frozen from the previous E-step.
    Solves [Re(V^H C^{-1} V) + I/2] eta = Re(V^H C^{-1} (r - Phi mu)) with
    V = j diag(Phi mu) B; the half-identity prior keeps the system
    nonsingular.
    """
    rbar = r - dict_mu
    v = 1j * dict_mu[:, None] * basis
    civ = cho_solve(cho_c, v, check_finite=False)
    lhs = np.real(v.conj().T @ civ) + 0.5 * np.eye(basis.shape[1])
    rhs = np.real(civ.conj().T @ rbar)
    return np.linalg.solve(lhs, rhs)


def grid_evolution_step(r: np.ndarray, mu: np.ndarray, sigma: np.ndarray,
                        phi: np.ndarray, omega: np.ndarray, p_diag: np.ndarray,
                        active: np.ndarray, r_nu: float,
                        xi_current: np.ndarray | None = None):
    """New Doppler perturbations for the active grid points.

    Minimizes the expected residual of the first-order dictionary
    expansion: solve Q_P delta = d_P on the active set with
    Q = Re{conj(Omega^H Omega) o (mu mu^H + Sigma)} and the matching
    linear term. The step is added to the current perturbation and the
    total is clipped to [-r_nu/2, r_nu/2], keeping every point inside its
    own grid cell. Returns (xi_new, n_clipped, loaded) where loaded
    reports a diagonal-loading fallback.
    """
    om_a = omega[:, active]
    mu_a = mu[active]
    gram = om_a.conj().T @ om_a
    q = np.real(np.conj(gram) * (np.outer(mu_a, mu_a.conj()) + sigma[np.ix_(active, active)]))

    e = r - p_diag * (phi @ mu)
    t = phi @ sigma[:, active]
    d = np.real(mu_a.conj() * (om_a.conj().T @ (np.conj(p_diag) * e))
                - np.einsum("ni,ni->i", om_a.conj(), t))

    loaded = False
    try:
        delta = np.linalg.solve(q, d)
    except np.linalg.LinAlgError:
        delta = None
    if delta is None or not np.all(np.isfinite(delta)):
        loaded = True
        load = 1e-10 * max(np.trace(q) / len(active), 1e-30)
        for _ in range(6):
            try:
                delta = np.linalg.solve(q + load * np.eye(len(active)), d)
                if np.all(np.isfinite(delta)):
                    break
            except np.linalg.LinAlgError:
                pass
            load *= 10.0
        else:
            delta = np.zeros(len(active))
    total = delta if xi_current is None else xi_current + delta
    xi_new = np.clip(total, -r_nu / 2.0, r_nu / 2.0)
    n_clipped = int(np.sum(xi_new != total))
    return xi_new, n_clipped, loaded


def sbl_estimate(r: np.ndarray, s_pilot: np.ndarray, cfg: AfdmConfig, grid0: Grid,
                 pn_model: PnModel | None, hyper: SblHyperParams, *,
                 track_pn: bool = True, evolve_grid: bool = True,
                 linear_offgrid: bool = False) -> ChannelEstimate:
    """Run the EM estimator on one received frame.

    track_pn / evolve_grid toggle the phase-noise and grid-evolution
    stages; linear_offgrid replaces grid motion with the fixed first-order
    dictionary model Phi + Omega diag(xi) (the off-grid SBL baseline).
    Initialization: eta = 0, gamma = 1, beta = 1, xi = 0; stops when the
    relative gamma change drops below hyper.epsilon or at n_iter.
    """
    r = np.asarray(r, dtype=complex)
    if r.shape != (cfg.n,):
        raise ValueError(f"received frame must have length {cfg.n}")
    if evolve_grid and linear_offgrid:
        raise ValueError("evolve_grid and linear_offgrid are mutually exclusive")
    if track_pn and pn_model is None:
        raise ValueError("track_pn requires a PnModel")

    grid = grid0.copy()
    grid.xi[:] = 0.0
    m_s = grid.size
    phi = build_dictionary(grid, s_pilot, cfg)
    omega = build_derivative(grid, s_pilot, cfg)
    xi_lin = np.zeros(m_s)

    basis = pn_model.basis if pn_model is not None else np.zeros((cfg.n, 0))
    eta = np.zeros(basis.shape[1])
    p_diag = np.ones(cfg.n, dtype=complex)
    gamma = np.ones(m_s)
    beta = 1.0

    def model_dictionary():
        if linear_offgrid:
            return phi + omega * xi_lin[None, :]
        return phi

    diag = RunDiagnostics()
    psi = p_diag[:, None] * model_dictionary()
    mu, sigma, cho_c, jit = posterior_update(r, psi, gamma, beta)
    diag.jitter_used |= jit
    state = PosteriorState(mu=mu, sigma=sigma, gamma=gamma, beta=beta, eta=eta,
                           active=np.arange(m_s), psi=psi)

    gamma_change = math.inf
    for it in range(1, hyper.n_iter + 1):
        gamma_new, beta_new, active, clamped = update_hyperparams(r, state, hyper)
        diag.cbeta_clamped |= clamped
        if hyper.prune_inactive and it >= hyper.prune_after:
            # hard support: atoms outside the working set leave the model, so
            # the residual keeps carrying any grid mismatch instead of being
            # soaked up by neighbouring atoms. Deferred until the gamma
            # ranking has separated paths from noise, then tightened in
            # stages down to the active-set cap to soften the refit shock.
            stage = (it - hyper.prune_after) // 4
            keep_n = max(hyper.max_paths, 4 * hyper.max_paths >> min(stage, 8))
            order = np.argsort(gamma_new)[::-1][:keep_n]
            pruned = np.full(m_s, hyper.gamma_floor)
            pruned[order] = gamma_new[order]
            gamma_new = pruned
        gamma_change = float(np.linalg.norm(gamma_new - state.gamma)
                             / max(np.linalg.norm(state.gamma), 1e-300))
        state.gamma, state.beta, state.active = gamma_new, beta_new, active

        if track_pn:
            dict_mu = model_dictionary() @ state.mu
            state.eta = update_pn_coeffs(r, dict_mu, basis, cho_c)
            p_diag = pn_matrix(state.eta, basis)

        if len(active):
            if evolve_grid:
                xi_a, n_clip, _ = grid_evolution_step(
                    r, state.mu, state.sigma, phi, omega, p_diag, active,
                    grid.r_nu, xi_current=grid.xi[active])
                diag.clip_count += n_clip
                grid.xi[active] = xi_a
                n_idx = np.arange(cfg.n)
                dopplers = grid.dopplers
                for m in active:
                    phi[:, m] = steering_vector(s_pilot, grid.delays[m],
                                                dopplers[m], cfg)
                omega[:, active] = (2j * np.pi * n_idx / cfg.n)[:, None] * phi[:, active]
            elif linear_offgrid:
                xi_a, n_clip, _ = grid_evolution_step(
                    r, state.mu, state.sigma, phi, omega, p_diag, active, grid.r_nu)
                diag.clip_count += n_clip
                xi_lin[:] = 0.0
                xi_lin[active] = xi_a

        psi = p_diag[:, None] * model_dictionary()
        mu, sigma, cho_c, jit = posterior_update(r, psi, state.gamma, state.beta)
        diag.jitter_used |= jit
        state.mu, state.sigma, state.psi = mu, sigma, psi

        if not (np.all(np.isfinite(state.mu)) and np.all(np.isfinite(state.gamma))
                and np.isfinite(state.beta)):
            raise NumericalError("non-finite SBL iterate", it)

        diag.residual_norms.append(float(np.linalg.norm(r - psi @ mu)))
        diag.iterations = it
        if gamma_change < hyper.epsilon:
            break

    diag.final_gamma_change = gamma_change
    support = np.flatnonzero(state.gamma > hyper.support_threshold * state.gamma.max())
    dopplers = grid.dopplers + (xi_lin if linear_offgrid else 0.0)
    phi_hat = basis @ state.eta if basis.shape[1] else np.zeros(cfg.n)
    return ChannelEstimate(
        gains=state.mu[support],
        delays=grid.delays[support].copy(),
        dopplers=dopplers[support].copy(),
        eta_hat=state.eta.copy(),
        phi_hat=phi_hat,
        noise_var=1.0 / state.beta,
        diagnostics=diag,
    )
