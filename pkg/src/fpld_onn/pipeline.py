"""Glue between configuration and the simulation/fitting/training stages."""

from __future__ import annotations

from pathlib import Path

from . import actfit, xfer
from .laser import OMEGA, LaserParams, load_params
from .physim import LaserConfig


def laser_params(cfg) -> LaserParams:
    return load_params(cfg.laser_params) if cfg.laser_params else LaserParams()


def laser_config(cfg) -> LaserConfig:
    return LaserConfig(laser_params(cfg), cfg.bias_ma, cfg.mode_index)


def p_grid(cfg):
    return xfer.default_grid(cfg.p_max, cfg.grid_points)


def coeff_dir(cfg) -> Path:
    return Path(cfg.output_dir) / "coeffs"


def family(cfg, fwhm_ps: float, detunings=None) -> list:
    """Transfer curves (cached) for ``detunings`` in units of Omega."""
    dets = cfg.family_detunings if detunings is None else detunings
    return xfer.generate_family(laser_params(cfg), cfg.bias_ma, cfg.mode_index,
                                [d * OMEGA for d in dets], fwhm_ps, p_grid(cfg),
                                cache_dir=cfg.cache_path / "xfer", jobs=cfg.jobs)


def fit_family(cfg, fwhm_ps: float, detunings=None, overwrite: bool = False) -> dict:
    """Fit and store one coefficient set per detuning; returns {detuning: coeffs}.

    Stored sets whose source-curve hash still matches are reused.
    """
    out = coeff_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    result = {}
    for curve in family(cfg, fwhm_ps, detunings):
        path = out / actfit.coeff_filename(curve.detuning, fwhm_ps)
        if path.exists() and not overwrite:
            c = actfit.ActivationCoeffs.load(path)
            if c.source == curve.content_hash():
                result[curve.detuning / OMEGA] = c
                continue
        c = actfit.fit_coefficients(curve, restarts=cfg.fit_restarts, seed=cfg.seed)
        c.save(path)
        result[curve.detuning / OMEGA] = c
    return result


def ensure_coeffs(cfg, dw1_grid, dw2_grid) -> None:
    fit_family(cfg, cfg.fwhm1, sorted(set(dw1_grid)))
    fit_family(cfg, cfg.fwhm2, sorted(set(dw2_grid)))


def train_config(cfg, **changes):
    from .onn import TrainConfig
    kw = dict(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size, epochs=cfg.epochs,
              l2=cfg.l2, dropout=cfg.dropout, runs=cfg.runs, seed=cfg.seed)
    kw.update(changes)
    return TrainConfig(**kw)
