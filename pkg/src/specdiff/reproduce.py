"""Plot-ready data for the model curves and figure reproductions.

Every writer emits CSV with a ``#`` JSON header line recording the
parameters and toolkit version, followed by a column header. Nothing here
depends on wall-clock time, so a rerun with the same inputs writes the
same bytes.
"""

from __future__ import annotations

import json
import os
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .config import RunConfig
from .correlator import (
    correlate,
    extract_tsd,
    make_log_bins,
    normalize,
    plateau_level,
    write_g2_csv,
)
from .fitting import bias_study, fit_g2_short, g2_model, synthetic_g2_curve, write_bias_csv
from .inhomogeneous import (
    InhomDistribution,
    averaged_count_rate,
    bunching_asymptote,
    scan_fwhm,
)
from .montecarlo import (
    JumpProcessParams,
    simulate_photon_stream,
    simulate_poisson_stream,
    simulate_trajectory,
)
from .streams import write_phts
from .tls import (
    DriveParams,
    EmitterParams,
    g2_homogeneous,
    homogeneous_fwhm,
    integrate_master_equation,
)

__all__ = [
    "OBSERVABLES",
    "FIGURES",
    "write_table",
    "model_observable",
    "simulate_to_files",
    "rate_scale_for",
    "synthetic_long_delay_run",
    "reproduce",
    "REFERENCE_BIAS",
    "BIAS_GRID",
]

OBSERVABLES = ("saturation_curve", "scan_fwhm", "g2_short", "g2_st_vs_power")
FIGURES = ("fig2cd", "fig4_synthetic", "fig5_model", "figS1", "figS2", "figS3", "figS4")

# zero-detuning fits of diffusive curves with T2 = T1: (Omega T1 true) -> (Omega T1, T2/T1) fitted
REFERENCE_BIAS = {3.0: (3.55, 0.61), 6.0: (6.71, 0.54)}
BIAS_GRID = (3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0)
SATURATION_GRID = np.logspace(-2, 3, 101)


def write_table(path, columns: Sequence[str], data: Iterable[Sequence], meta: Optional[dict] = None) -> str:
    meta = dict(meta or {})
    meta.setdefault("version", __version__)
    lines = ["# " + json.dumps(meta, sort_keys=True), ",".join(columns)]
    for row in data:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    return str(path)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _meta(cfg: RunConfig, **extra) -> dict:
    return {"config": cfg.to_dict(), **extra}


# --- model curves ------------------------------------------------------------

def _saturation_tables(cfg, out, grid=SATURATION_GRID):
    em = cfg.emitter_params()
    paths = []
    for label, fwhm in (("homogeneous", 0.0), ("inhomogeneous", em.inhom_fwhm)):
        e = EmitterParams(em.t1, em.t2, inhom_fwhm=fwhm)
        dist = InhomDistribution.from_emitter(e)
        rows = []
        for s in grid:
            d = DriveParams.from_saturation(float(s), e)
            # normalized to the fully saturated rate, which is 1/2 either way
            rows.append((s, 2 * averaged_count_rate(d, e, dist)))
        paths.append(write_table(os.path.join(out, f"saturation_{label}.csv"), ("saturation", "rate_over_max"), rows,
                                 _meta(cfg, inhom_fwhm_hz=fwhm)))
    return paths


def _scan_fwhm_table(cfg, out, grid=SATURATION_GRID):
    em = cfg.emitter_params()
    dist = cfg.distribution()
    rows = []
    for s in grid:
        d = DriveParams.from_saturation(float(s), em)
        rows.append((s, homogeneous_fwhm(d, em) / 1e9, scan_fwhm(d, em, dist) / 1e9))
    return [write_table(os.path.join(out, "scan_fwhm.csv"), ("saturation", "homogeneous_fwhm_ghz", "scan_fwhm_ghz"),
                        rows, _meta(cfg))]


def _g2_short_tables(cfg, out, t2_over_t1=None, omegas=(3.0, 6.0), tau_max=15e-9, n=301):
    t1 = cfg.emitter.t1_ns * 1e-9
    t2r = cfg.emitter.t2_over_t1 if t2_over_t1 is None else t2_over_t1
    tau = np.linspace(0.0, tau_max, n)
    paths = []
    for om in omegas:
        for model in ("diffusive", "zero_detuning"):
            y = g2_model(tau, model, om / t1, t2r * t1, t1)
            name = f"g2_short_{model}_omega{om:g}.csv"
            paths.append(write_table(os.path.join(out, name), ("tau_s", "g2"), zip(tau, y),
                                     _meta(cfg, model=model, rabi_t1=om, t2_over_t1=t2r)))
    return paths


def _g2_st_table(cfg, out):
    em = cfg.emitter_params()
    dist = cfg.distribution()
    sweep = cfg.drive.saturation_sweep or list(np.logspace(-2, 3, 51))
    rows = []
    for s in sweep:
        d = cfg.drive_params(float(s))
        rows.append((float(s), bunching_asymptote(d, em, dist)))
    return [write_table(os.path.join(out, "g2_st_vs_power.csv"), ("saturation", "g2_st"), rows, _meta(cfg))]


def model_observable(cfg: RunConfig, observable: str, out: str) -> list[str]:
    os.makedirs(out, exist_ok=True)
    if observable == "saturation_curve":
        return _saturation_tables(cfg, out)
    if observable == "scan_fwhm":
        return _scan_fwhm_table(cfg, out)
    if observable == "g2_short":
        return _g2_short_tables(cfg, out)
    if observable == "g2_st_vs_power":
        return _g2_st_table(cfg, out)
    raise ValueError(f"unknown observable {observable!r}; choose from {', '.join(OBSERVABLES)}")


# --- simulation --------------------------------------------------------------

def rate_scale_for(count_rate: float, drive: DriveParams, emitter: EmitterParams, dist: InhomDistribution) -> float:
    """Detection efficiency times 1/T1 that gives the requested mean detected rate."""
    mean_pop = averaged_count_rate(drive, emitter, dist)
    if not (mean_pop > 0):
        raise ValueError("the emitter does not scatter at this drive")
    return count_rate / mean_pop


def _streams(cfg: RunConfig, t_sd_half: Optional[float] = None, threads: int = 1, non_resonant=None):
    sim = cfg.simulation
    nonres = sim.non_resonant if non_resonant is None else non_resonant
    if nonres:
        a, b = simulate_poisson_stream(sim.count_rate_hz, sim.duration_s, cfg.seed, sim.split, threads)
        return a, b, {"mode": "non_resonant"}
    em, dist, drive = cfg.emitter_params(), cfg.distribution(), cfg.drive_params()
    half = cfg.jump.t_sd_us * 1e-6 if t_sd_half is None else t_sd_half
    jump = JumpProcessParams.from_half_decay(half, dist, seed=cfg.seed)
    traj = simulate_trajectory(jump, sim.duration_s)
    scale = rate_scale_for(sim.count_rate_hz, drive, em, dist)
    a, b = simulate_photon_stream(traj, drive, em, scale, cfg.seed, sim.split, threads=threads)
    info = {"mode": "resonant", "rate_scale_hz": scale, "jumps": int(len(traj.jump_times)),
            "mean_dwell_s": jump.t_sd, "half_decay_s": half}
    return a, b, info


def simulate_to_files(cfg: RunConfig, out: str, threads: int = 1) -> dict:
    os.makedirs(out, exist_ok=True)
    a, b, info = _streams(cfg, threads=threads)
    write_phts(a, os.path.join(out, "channel_A.phts"))
    write_phts(b, os.path.join(out, "channel_B.phts"))
    manifest = {
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "duration_ticks": a.duration_ticks,
        "counts": {"A": len(a), "B": len(b)},
        "files": {"A": "channel_A.phts", "B": "channel_B.phts"},
        **info,
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def synthetic_long_delay_run(cfg: RunConfig, t_sd_half: float, threads: int = 1, non_resonant=False):
    """Simulate, correlate on log bins and normalize by the long-delay asymptote."""
    a, b, info = _streams(cfg, t_sd_half, threads, non_resonant=non_resonant)
    edges = make_log_bins(cfg.bin_spec())
    raw = correlate(a, b, edges, threads=threads)
    curve = normalize(raw, edges, a, b, "asymptote")
    return curve, info, (a, b)


# --- figures -----------------------------------------------------------------

def _fig2cd(cfg, out):
    return _saturation_tables(cfg, out) + _scan_fwhm_table(cfg, out)


def _fig4(cfg, out, threads):
    em, dist, drive = cfg.emitter_params(), cfg.distribution(), cfg.drive_params()
    predicted = bunching_asymptote(drive, em, dist)
    # first decade of delays: far below T_SD, so the decay does not bias the plateau
    plateau = (cfg.binning.tau_min_ns * 1e-9, 10 * cfg.binning.tau_min_ns * 1e-9)
    rows, paths = [], []
    for half_us in (50.0, 10.0):
        curve, _, _ = synthetic_long_delay_run(cfg, half_us * 1e-6, threads)
        path = os.path.join(out, f"g2_tsd{half_us:g}us.csv")
        write_g2_csv(curve, path)
        paths.append(path)
        g2_st, err = plateau_level(curve, plateau)
        t_sd, _ = extract_tsd(curve, plateau)
        z = (g2_st - predicted) / err
        rows.append((half_us, t_sd * 1e6, g2_st, err, predicted, z,
                     abs(z) <= 3 and abs(t_sd / (half_us * 1e-6) - 1) <= 0.3))
    curve, _, _ = synthetic_long_delay_run(cfg, 50e-6, threads, non_resonant=True)
    path = os.path.join(out, "g2_non_resonant.csv")
    write_g2_csv(curve, path)
    paths.append(path)
    paths.append(write_table(os.path.join(out, "fig4_report.csv"),
                             ("t_sd_in_us", "t_sd_out_us", "g2_st", "g2_st_err", "g2_st_model", "z", "pass"),
                             rows, _meta(cfg, plateau_s=list(plateau))))
    return paths


def _figS1(cfg, out):
    t1 = cfg.emitter.t1_ns * 1e-9
    em = EmitterParams(t1, t1)
    drive = DriveParams(4.0 / t1)
    tau = np.linspace(0.0, 10 * t1, 401)
    rows, paths = [], []
    for label, det in (("resonant", 0.0), ("detuned", drive.rabi)):
        closed = g2_homogeneous(tau, det, drive, em)
        oracle = integrate_master_equation(drive, em, det, tau)
        paths.append(write_table(os.path.join(out, f"figS1_{label}.csv"), ("tau_s", "g2_closed_form", "g2_bloch"),
                                 zip(tau, closed, oracle), _meta(cfg, rabi_t1=4.0, t2_over_t1=1.0, detuning_rad_s=det)))
        dev = float(np.max(np.abs(closed - oracle)))
        rows.append((label, dev, dev <= 1e-4))
    paths.append(write_table(os.path.join(out, "figS1_report.csv"), ("case", "max_abs_deviation", "pass"), rows,
                             _meta(cfg)))
    return paths


def _figS3(cfg, out):
    t1 = cfg.emitter.t1_ns * 1e-9
    rows, paths = [], []
    for om, (q_om, q_t2) in REFERENCE_BIAS.items():
        curve = synthetic_g2_curve("diffusive", om, 1.0, t1)
        fits = {m: fit_g2_short(curve, m, t1=t1, init={"rabi": om / t1, "t2": t1}) for m in ("zero_detuning", "diffusive")}
        centers = curve.centers
        fitted = {m: g2_model(centers, m, f.value("rabi"), f.value("t2"), t1) for m, f in fits.items()}
        paths.append(write_table(os.path.join(out, f"figS3_omega{om:g}.csv"),
                                 ("tau_s", "g2_data", "g2_fit_zero_detuning", "g2_fit_diffusive"),
                                 zip(centers, curve.g2, fitted["zero_detuning"], fitted["diffusive"]),
                                 _meta(cfg, rabi_t1=om, t2_over_t1=1.0)))
        zd, df = fits["zero_detuning"], fits["diffusive"]
        d_om = zd.value("rabi_t1") / q_om - 1
        d_t2 = zd.value("t2_over_t1") / q_t2 - 1
        rows.append((om, 1.0, "zero_detuning", zd.value("rabi_t1"), zd.value("t2_over_t1"), q_om, q_t2,
                     d_om, d_t2, abs(d_om) <= 0.05 and abs(d_t2) <= 0.05))
        e_om = df.value("rabi_t1") / om - 1
        e_t2 = df.value("t2_over_t1") - 1
        rows.append((om, 1.0, "diffusive", df.value("rabi_t1"), df.value("t2_over_t1"), om, 1.0,
                     e_om, e_t2, abs(e_om) <= 0.01 and abs(e_t2) <= 0.01))
    paths.append(write_table(os.path.join(out, "figS3_report.csv"),
                             ("true_omega_r_t1", "true_t2_t1", "model", "fitted_omega_r_t1", "fitted_t2_t1",
                              "expected_omega_r_t1", "expected_t2_t1", "rel_dev_omega", "rel_dev_t2", "pass"),
                             rows, _meta(cfg)))
    return paths


def _figS4(cfg, out, threads):
    t1 = cfg.emitter.t1_ns * 1e-9
    paths = []
    for t2r in (1.0, 2.0):
        rows = bias_study(BIAS_GRID, t2r, t1=t1, threads=threads)
        path = os.path.join(out, f"figS4_t2_{t2r:g}t1.csv")
        write_bias_csv(rows, path)
        paths.append(path)
    return paths


def reproduce(cfg: RunConfig, figure: str, out: str, threads: int = 1) -> list[str]:
    os.makedirs(out, exist_ok=True)
    if figure == "fig2cd":
        paths = _fig2cd(cfg, out)
    elif figure == "fig4_synthetic":
        paths = _fig4(cfg, out, threads)
    elif figure == "fig5_model":
        paths = _g2_st_table(cfg, out)
    elif figure == "figS1":
        paths = _figS1(cfg, out)
    elif figure == "figS2":
        paths = _g2_short_tables(cfg, out, t2_over_t1=1.0)
    elif figure == "figS3":
        paths = _figS3(cfg, out)
    elif figure == "figS4":
        paths = _figS4(cfg, out, threads)
    else:
        raise ValueError(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")
    manifest = {"version": __version__, "figure": figure, "seed": cfg.seed, "config": cfg.to_dict(),
                "files": sorted(os.path.basename(p) for p in paths)}
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
