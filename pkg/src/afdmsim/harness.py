"""Monte Carlo experiment orchestration.

Builds pilot-boosted AFDM frames, sweeps SNR x trials with deterministic
per-trial sub-seeding, runs every configured estimator on identical data,
computes NMSE / PN-MSE / BER, and writes one CSV row per
(estimator, snr, trial).

Config files are INI-style key/value sections; unknown sections or keys
are rejected. The `paper-default` preset carries the reference setup
(N=64, 3 paths, 5 pilots with 30 dB boost, unit grid resolutions).
"""

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from configparser import ConfigParser
from dataclasses import dataclass, fields, replace

import numpy as np

from afdmsim.baselines import offgrid_sbl_fixed, omp_newton, oracle_ls
from afdmsim.channel import (Grid, PathSet, apply_channel, daf_kernel, sample_paths,
                             steering_vector)
from afdmsim.detection import build_effective_channel, count_errors, mmse_equalize
from afdmsim.estimator import ChannelEstimate, NumericalError, SblHyperParams, sbl_estimate
from afdmsim.modem import AfdmConfig, add_cpp, daft, default_c1, idaft, qam_demap, qam_map
from afdmsim.phasenoise import PnModel, sample_wiener

__all__ = [
    "ChannelParams",
    "PnParams",
    "GridParams",
    "PilotConfig",
    "ExperimentConfig",
    "MetricRow",
    "ESTIMATOR_IDS",
    "build_frame",
    "run_trial",
    "run_sweep",
    "dump_trajectory",
    "nmse_channel",
    "pn_mse",
    "load_config",
    "dump_config",
    "preset",
    "preset_names",
]

ESTIMATOR_IDS = (
    "joint_sbl",         # grid evolution + phase-noise tracking
    "joint_sbl_nopn",    # grid evolution, phase noise ignored
    "offgrid_sbl",       # fixed grid, first-order offsets, basic PN stage
    "offgrid_sbl_nopn",  # fixed grid, PN ignored
    "omp_newton",        # greedy pursuit with Newton Doppler refinement
    "oracle_ls",         # genie: true paths and true phase trajectory
)


@dataclass(frozen=True)
class ChannelParams:
    n_paths: int = 3
    ell_max: int = 12
    k_max: float = 3.0
    on_grid: bool = False


@dataclass(frozen=True)
class PnParams:
    sigma2: float = 1e-4
    subspace_dim: int = 16
    enabled: bool = True


@dataclass(frozen=True)
class GridParams:
    r_tau: int = 1
    r_nu: float = 1.0


@dataclass(frozen=True)
class PilotConfig:
    count: int = 5
    boost_db: float = 30.0
    indices: tuple = ()   # empty -> evenly spaced defaults


@dataclass(frozen=True)
class ExperimentConfig:
    waveform: AfdmConfig
    channel: ChannelParams
    pn: PnParams
    grid: GridParams
    sbl: SblHyperParams
    pilot: PilotConfig
    snr_db: tuple
    trials: int
    seed: int
    estimators: tuple
    data_symbols: bool = True

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.snr_db:
            raise ValueError("sweep needs at least one SNR point")
        for name in self.estimators:
            if name not in ESTIMATOR_IDS:
                raise ValueError(f"unknown estimator {name!r}; choose from {ESTIMATOR_IDS}")
        idx = self.pilot_indices()
        if len(set(idx)) != len(idx):
            raise ValueError("pilot indices must be distinct")
        if any(not 0 <= i < self.waveform.n for i in idx):
            raise ValueError(f"pilot indices must lie in [0, {self.waveform.n})")
        self.waveform.chirp_shift  # rejects c1 violating the cyclic convention
        if self.waveform.n_cpp < self.channel.ell_max:
            raise ValueError("n_cpp must cover the maximum path delay")

    def pilot_indices(self) -> tuple:
        if self.pilot.indices:
            return tuple(int(i) for i in self.pilot.indices)
        n, count = self.waveform.n, self.pilot.count
        return tuple(int(round(i * n / count)) for i in range(count))


@dataclass
class MetricRow:
    estimator: str
    snr_db: float
    trial: int
    nmse_channel: float
    pn_mse: float
    ber: float
    iterations: int
    p_hat: int
    runtime_ms: float
    failed: int = 0


def build_frame(cfg: ExperimentConfig, rng: np.random.Generator):
    """DAF-domain frame: boosted pilots plus 4-QAM payload.

    Returns (x, bits, pilot_mask). Pilot entries carry amplitude
    sqrt(10^(boost_db/10)); the remaining slots hold data symbols, or
    zeros when cfg.data_symbols is off (pilot-only sounding frames).
    """
    n = cfg.waveform.n
    pilot_idx = np.array(cfg.pilot_indices(), dtype=int)
    pilot_mask = np.zeros(n, dtype=bool)
    pilot_mask[pilot_idx] = True
    x = np.zeros(n, dtype=complex)
    x[pilot_idx] = np.sqrt(10.0 ** (cfg.pilot.boost_db / 10.0))
    if cfg.data_symbols:
        n_data = n - len(pilot_idx)
        bits = rng.integers(0, 2, size=2 * n_data)
        x[~pilot_mask] = qam_map(bits)
    else:
        bits = np.zeros(0, dtype=int)
    return x, bits, pilot_mask


def nmse_channel(h_est: np.ndarray, h_true: np.ndarray) -> float:
    """Frobenius NMSE between effective channels, scalar phase removed.

    The common phase of gains and phase-noise trajectory is unidentifiable,
    so the comparison applies the scalar alpha minimizing
    ||alpha H_est - H_true||_F before normalizing.
    """
    if h_est.shape != h_true.shape:
        raise ValueError(f"shape mismatch: {h_est.shape} vs {h_true.shape}")
    denom = np.vdot(h_true, h_true).real
    if denom == 0:
        return float("nan")
    e2 = np.vdot(h_est, h_est).real
    if e2 == 0:
        return 1.0
    alpha = np.vdot(h_est, h_true) / e2
    return float(np.linalg.norm(alpha * h_est - h_true) ** 2 / denom)


def pn_mse(phi_hat: np.ndarray, phi_true: np.ndarray) -> float:
    """Mean squared phase error with the constant offset removed."""
    phi_hat = np.asarray(phi_hat, dtype=float)
    phi_true = np.asarray(phi_true, dtype=float)
    if phi_hat.shape != phi_true.shape:
        raise ValueError("trajectory length mismatch")
    d = phi_hat - phi_true
    d = d - d.mean()
    return float(np.mean(d * d))


def _trial_rng(seed: int, snr_db: float, trial: int) -> np.random.Generator:
    # keyed on (seed, milli-dB, trial) so extending the sweep or trial count
    # never changes existing trials
    snr_key = int(round(snr_db * 1000)) & 0xFFFFFFFFFFFFFFFF
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(snr_key, trial))
    return np.random.default_rng(ss)


def _run_estimator(name: str, r, s_pilot, cfg: ExperimentConfig, grid: Grid,
                   pn_model: PnModel, paths: PathSet, phi_true, noise_var_genie):
    """Dispatch one estimator; returns (estimate, mmse_noise_var)."""
    wf = cfg.waveform
    if name == "joint_sbl":
        est = sbl_estimate(r, s_pilot, wf, grid, pn_model, cfg.sbl,
                           track_pn=True, evolve_grid=True)
        return est, est.noise_var
    if name == "joint_sbl_nopn":
        est = sbl_estimate(r, s_pilot, wf, grid, pn_model, cfg.sbl,
                           track_pn=False, evolve_grid=True)
        return est, est.noise_var
    if name == "offgrid_sbl":
        est = offgrid_sbl_fixed(r, s_pilot, wf, grid, pn_model, cfg.sbl,
                                pn_compensation=True)
        return est, est.noise_var
    if name == "offgrid_sbl_nopn":
        est = offgrid_sbl_fixed(r, s_pilot, wf, grid, pn_model, cfg.sbl,
                                pn_compensation=False)
        return est, est.noise_var
    if name == "omp_newton":
        est = omp_newton(r, s_pilot, wf, grid, max_paths=cfg.channel.n_paths)
        atoms = np.stack([steering_vector(s_pilot, d, k, wf)
                          for d, k in zip(est.delays, est.dopplers)], axis=1)
        resid = r - atoms @ est.gains
        return est, max(float(np.vdot(resid, resid).real / wf.n), 1e-12)
    if name == "oracle_ls":
        est = oracle_ls(r, paths, phi_true, s_pilot, wf)
        return est, noise_var_genie
    raise ValueError(f"unknown estimator {name!r}")


def run_trial(cfg: ExperimentConfig, snr_db: float, trial: int):
    """One Monte Carlo trial: every configured estimator on identical data.

    Returns a list of MetricRow. An estimator numeric failure flags its row
    and the trial continues.
    """
    wf = cfg.waveform
    rng = _trial_rng(cfg.seed, snr_db, trial)
    paths = sample_paths(rng, cfg.channel.n_paths, cfg.channel.ell_max,
                         cfg.channel.k_max, on_grid=cfg.channel.on_grid,
                         r_nu=cfg.grid.r_nu)
    x, bits, pilot_mask = build_frame(cfg, rng)
    s_ext = add_cpp(idaft(x, wf), wf)
    r_ch = apply_channel(s_ext, paths, wf)
    if cfg.pn.enabled and cfg.pn.sigma2 > 0:
        phi_true = sample_wiener(rng, wf.n, cfg.pn.sigma2)
    else:
        phi_true = np.zeros(wf.n)
    r_clean = np.exp(1j * phi_true) * r_ch
    sig_pow = float(np.mean(np.abs(r_clean) ** 2))
    noise_var = sig_pow / 10.0 ** (snr_db / 10.0)
    noise = np.sqrt(noise_var / 2) * (rng.standard_normal(wf.n)
                                      + 1j * rng.standard_normal(wf.n))
    r = r_clean + noise

    s_pilot = idaft(np.where(pilot_mask, x, 0.0), wf)
    grid = Grid.build(cfg.channel.ell_max, cfg.channel.k_max,
                      cfg.grid.r_tau, cfg.grid.r_nu)
    pn_model = PnModel.build(wf.n, max(cfg.pn.sigma2, 1e-12), cfg.pn.subspace_dim)
    h_true = daf_kernel(paths, phi_true, wf)
    y_af = daft(r, wf)
    data_idx = np.flatnonzero(~pilot_mask)

    rows = []
    for name in cfg.estimators:
        t0 = time.perf_counter()
        try:
            est, mmse_nv = _run_estimator(name, r, s_pilot, cfg, grid, pn_model,
                                          paths, phi_true, noise_var)
        except NumericalError:
            rows.append(MetricRow(name, snr_db, trial, float("nan"), float("nan"),
                                  float("nan"), 0, 0, 0.0, failed=1))
            continue
        runtime_ms = 1e3 * (time.perf_counter() - t0)
        h_est = build_effective_channel(est, wf)
        nmse = nmse_channel(h_est, h_true)
        pnm = pn_mse(est.phi_hat, phi_true)
        if cfg.data_symbols:
            # pilots are known: cancel their (estimated) contribution, then
            # equalize the data columns only -- the 30 dB boost would
            # otherwise leak through the regularized inverse
            y_data = y_af - h_est[:, pilot_mask] @ x[pilot_mask]
            x_hat = mmse_equalize(y_data, h_est[:, data_idx], mmse_nv)
            errs, total = count_errors(qam_demap(x_hat), bits)
            ber = errs / total
        else:
            ber = float("nan")
        iters = est.diagnostics.iterations if est.diagnostics else 0
        rows.append(MetricRow(name, snr_db, trial, nmse, pnm, ber,
                              iters, est.p_hat, runtime_ms))
    return rows


def _trial_task(args):
    cfg, snr_db, trial = args
    return run_trial(cfg, snr_db, trial)


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def run_sweep(cfg: ExperimentConfig, out_path: str, workers: int = 1) -> None:
    """Run the SNR x trials sweep and write the CSV.

    Trials may execute in parallel; rows land in deterministic
    (snr, trial, estimator) order regardless. The CSV is written to
    <out>.partial first and renamed on success, so an aborted run leaves
    the partial marker behind.
    """
    tasks = [(cfg, snr, trial) for snr in cfg.snr_db for trial in range(cfg.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_task, tasks, chunksize=4))
    else:
        results = [_trial_task(t) for t in tasks]

    header = [f.name for f in fields(MetricRow)]
    partial = out_path + ".partial"
    with open(partial, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rows in results:
            for row in rows:
                writer.writerow([_fmt(getattr(row, name)) for name in header])
    os.replace(partial, out_path)


def dump_trajectory(cfg: ExperimentConfig, out_path: str, snr_db: float | None = None,
                    trial: int = 0) -> None:
    """Debug dump: per-sample true vs estimated phase trajectory.

    Runs the first PN-tracking estimator of the config on one trial and
    writes columns (n, phi_true, phi_hat).
    """
    snr = cfg.snr_db[0] if snr_db is None else snr_db
    wf = cfg.waveform
    rng = _trial_rng(cfg.seed, snr, trial)
    paths = sample_paths(rng, cfg.channel.n_paths, cfg.channel.ell_max,
                         cfg.channel.k_max, on_grid=cfg.channel.on_grid,
                         r_nu=cfg.grid.r_nu)
    x, _, pilot_mask = build_frame(cfg, rng)
    r_ch = apply_channel(add_cpp(idaft(x, wf), wf), paths, wf)
    phi_true = sample_wiener(rng, wf.n, cfg.pn.sigma2) if cfg.pn.enabled else np.zeros(wf.n)
    r_clean = np.exp(1j * phi_true) * r_ch
    noise_var = float(np.mean(np.abs(r_clean) ** 2)) / 10.0 ** (snr / 10.0)
    r = r_clean + np.sqrt(noise_var / 2) * (rng.standard_normal(wf.n)
                                            + 1j * rng.standard_normal(wf.n))
    s_pilot = idaft(np.where(pilot_mask, x, 0.0), wf)
    grid = Grid.build(cfg.channel.ell_max, cfg.channel.k_max,
                      cfg.grid.r_tau, cfg.grid.r_nu)
    pn_model = PnModel.build(wf.n, max(cfg.pn.sigma2, 1e-12), cfg.pn.subspace_dim)
    tracking = [n for n in cfg.estimators if n in ("joint_sbl", "offgrid_sbl")]
    name = tracking[0] if tracking else "joint_sbl"
    est, _ = _run_estimator(name, r, s_pilot, cfg, grid, pn_model, paths,
                            phi_true, noise_var)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "phi_true", "phi_hat"])
        for i in range(wf.n):
            writer.writerow([i, _fmt(float(phi_true[i])), _fmt(float(est.phi_hat[i]))])


# ---------------------------------------------------------------------------
# config files and presets

_SCHEMA = {
    "waveform": {"n": int, "delta_f": float, "c1": str, "c2": float, "n_cpp": int},
    "channel": {"paths": int, "ell_max": int, "k_max": float, "on_grid": bool},
    "pn": {"sigma2": float, "subspace_dim": int, "enabled": bool},
    "grid": {"r_tau": int, "r_nu": float},
    "sbl": {"rho": float, "c": float, "d": float, "epsilon": float, "n_iter": int,
            "support_threshold": float, "max_paths": int, "gamma_rule": str},
    "pilot": {"count": int, "boost_db": float, "indices": str},
    "frame": {"data_symbols": bool},
    "sweep": {"snr_db": str, "trials": int, "seed": int, "estimators": str},
}

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _parse_value(kind, raw: str):
    if kind is bool:
        key = raw.strip().lower()
        if key not in _BOOL:
            raise ValueError(f"expected a boolean, got {raw!r}")
        return _BOOL[key]
    return kind(raw)


def load_config(path_or_text: str, is_text: bool = False) -> ExperimentConfig:
    """Parse and validate an experiment config file; unknown keys rejected."""
    parser = ConfigParser()
    if is_text:
        parser.read_string(path_or_text)
    else:
        with open(path_or_text, encoding="utf-8") as fh:
            parser.read_file(fh)

    values = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ValueError(f"unknown config section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ValueError(f"unknown key {key!r} in section [{section}]")
            values[section][key] = _parse_value(_SCHEMA[section][key], raw)

    def get(section, key, default):
        return values.get(section, {}).get(key, default)

    n = get("waveform", "n", 64)
    k_max = get("channel", "k_max", 3.0)
    c1_raw = get("waveform", "c1", "auto")
    c1 = default_c1(n, k_max) if c1_raw.strip() == "auto" else float(c1_raw)
    waveform = AfdmConfig(n=n, c1=c1, c2=get("waveform", "c2", 0.0),
                          n_cpp=get("waveform", "n_cpp", get("channel", "ell_max", 12)),
                          delta_f=get("waveform", "delta_f", 15e3))
    channel = ChannelParams(n_paths=get("channel", "paths", 3),
                            ell_max=get("channel", "ell_max", 12),
                            k_max=k_max,
                            on_grid=get("channel", "on_grid", False))
    pn = PnParams(sigma2=get("pn", "sigma2", 1e-4),
                  subspace_dim=get("pn", "subspace_dim", 16),
                  enabled=get("pn", "enabled", True))
    grid = GridParams(r_tau=get("grid", "r_tau", 1), r_nu=get("grid", "r_nu", 1.0))
    sbl = SblHyperParams(rho=get("sbl", "rho", 1e-2), c=get("sbl", "c", 1e-6),
                         d=get("sbl", "d", 1e-6),
                         epsilon=get("sbl", "epsilon", 1e-4),
                         n_iter=get("sbl", "n_iter", 100),
                         support_threshold=get("sbl", "support_threshold", 1e-3),
                         max_paths=get("sbl", "max_paths", 2 * channel.n_paths),
                         gamma_rule=get("sbl", "gamma_rule", "stabilized"))
    indices_raw = get("pilot", "indices", "auto").strip()
    indices = () if indices_raw == "auto" else tuple(
        int(tok) for tok in indices_raw.split(",") if tok.strip())
    pilot = PilotConfig(count=get("pilot", "count", 5),
                        boost_db=get("pilot", "boost_db", 30.0),
                        indices=indices)
    snr_db = tuple(float(tok) for tok in get("sweep", "snr_db", "0, 10, 20, 30").split(","))
    estimators = tuple(tok.strip() for tok in
                       get("sweep", "estimators", "joint_sbl, oracle_ls").split(",")
                       if tok.strip())
    return ExperimentConfig(
        waveform=waveform, channel=channel, pn=pn, grid=grid, sbl=sbl, pilot=pilot,
        snr_db=snr_db, trials=get("sweep", "trials", 500),
        seed=get("sweep", "seed", 1), estimators=estimators,
        data_symbols=get("frame", "data_symbols", True),
    )


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialize a config back to the INI text format `load_config` accepts."""
    wf, ch = cfg.waveform, cfg.channel
    indices = ", ".join(str(i) for i in cfg.pilot.indices) if cfg.pilot.indices else "auto"
    lines = [
        "[waveform]",
        f"n = {wf.n}", f"delta_f = {wf.delta_f}", f"c1 = {wf.c1!r}",
        f"c2 = {wf.c2!r}", f"n_cpp = {wf.n_cpp}",
        "", "[channel]",
        f"paths = {ch.n_paths}", f"ell_max = {ch.ell_max}",
        f"k_max = {ch.k_max!r}", f"on_grid = {str(ch.on_grid).lower()}",
        "", "[pn]",
        f"sigma2 = {cfg.pn.sigma2!r}", f"subspace_dim = {cfg.pn.subspace_dim}",
        f"enabled = {str(cfg.pn.enabled).lower()}",
        "", "[grid]",
        f"r_tau = {cfg.grid.r_tau}", f"r_nu = {cfg.grid.r_nu!r}",
        "", "[sbl]",
        f"rho = {cfg.sbl.rho!r}", f"c = {cfg.sbl.c!r}", f"d = {cfg.sbl.d!r}",
        f"epsilon = {cfg.sbl.epsilon!r}", f"n_iter = {cfg.sbl.n_iter}",
        f"support_threshold = {cfg.sbl.support_threshold!r}",
        f"max_paths = {cfg.sbl.max_paths}", f"gamma_rule = {cfg.sbl.gamma_rule}",
        "", "[pilot]",
        f"count = {cfg.pilot.count}", f"boost_db = {cfg.pilot.boost_db!r}",
        f"indices = {indices}",
        "", "[frame]",
        f"data_symbols = {str(cfg.data_symbols).lower()}",
        "", "[sweep]",
        "snr_db = " + ", ".join(repr(s) for s in cfg.snr_db),
        f"trials = {cfg.trials}", f"seed = {cfg.seed}",
        "estimators = " + ", ".join(cfg.estimators),
        "",
    ]
    return "\n".join(lines)


def preset(name: str) -> ExperimentConfig:
    """Named experiment presets; `paper-default` is the reference setup."""
    if name not in _PRESETS:
        raise ValueError(f"unknown preset {name!r}; available: {sorted(_PRESETS)}")
    return _PRESETS[name]()


def preset_names() -> list:
    return sorted(_PRESETS)


def _paper_default() -> ExperimentConfig:
    n, k_max = 64, 3.0
    return ExperimentConfig(
        waveform=AfdmConfig(n=n, c1=default_c1(n, k_max), c2=0.0, n_cpp=12,
                            delta_f=15e3),
        channel=ChannelParams(n_paths=3, ell_max=12, k_max=k_max, on_grid=False),
        pn=PnParams(sigma2=1e-4, subspace_dim=16, enabled=True),
        grid=GridParams(r_tau=1, r_nu=1.0),
        sbl=SblHyperParams(),
        pilot=PilotConfig(count=5, boost_db=30.0),
        snr_db=(0.0, 10.0, 20.0, 30.0),
        trials=500,
        seed=1,
        estimators=("joint_sbl", "offgrid_sbl", "offgrid_sbl_nopn", "oracle_ls"),
    )


def _with_pn(sigma2: float) -> ExperimentConfig:
    base = _paper_default()
    return replace(base, pn=replace(base.pn, sigma2=sigma2))


# PN severity presets are artifact defaults, not reference values
_PRESETS = {
    "paper-default": _paper_default,
    "pn-mild": lambda: _with_pn(1e-5),
    "pn-moderate": lambda: _with_pn(1e-4),
    "pn-severe": lambda: _with_pn(1e-3),
}
