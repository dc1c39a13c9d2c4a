"""Long-running experiments behind the acceptance suite.

Every stage writes its results under one root directory and skips work that
is already there, so the suite can be interrupted and rerun.  The root is
``$FPLD_ONN_ACCEPT_DIR`` or ``.acceptance`` at the repository top.  Datasets
come from ``$FPLD_ONN_MNIST_DIR`` and ``$FPLD_ONN_FASHION_DIR`` (defaults
``data/mnist`` and ``data/fashion-mnist``).

Run stages ahead of the test suite with::

    python tests/acceptance_runs.py all
"""

import json
import os
import sys
import time
from functools import lru_cache
from pathlib import Path

import numpy as np

from fpld_onn import dataio, onn, physim, pipeline, xfer
from fpld_onn.laser import OMEGA

REPO = Path(__file__).resolve().parents[1]
ROOT = Path(os.environ.get("FPLD_ONN_ACCEPT_DIR", REPO / ".acceptance"))
MNIST_DIR = os.environ.get("FPLD_ONN_MNIST_DIR", str(REPO / "data" / "mnist"))
FASHION_DIR = os.environ.get("FPLD_ONN_FASHION_DIR", str(REPO / "data" / "fashion-mnist"))

GRID = (-26.0, -29.0, -32.0)
# smallest-threshold layer-2 activation with the largest-threshold layer-1 one
EXTREME = (-38.0, -15.0)
FASHION_CELLS = ((-29.0, -29.0), (-32.0, -29.0), (-35.0, -29.0))


def config(**over) -> dataio.RunConfig:
    base = dict(output_dir=str(ROOT), cache_dir=str(ROOT), data_dir=MNIST_DIR)
    base.update({k: str(v) for k, v in over.items()})
    return dataio.load_run_config(None, base)


@lru_cache(maxsize=None)
def dataset(name="mnist"):
    return dataio.load_dataset(name, MNIST_DIR if name == "mnist" else FASHION_DIR)


def log(msg):
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)


def family(fwhm):
    cfg = config()
    return pipeline.family(cfg, fwhm)


def coefficients():
    cfg = config()
    return {fw: pipeline.fit_family(cfg, fw) for fw in (cfg.fwhm1, cfg.fwhm2)}


def sweep(name, dw1, dw2, runs, hidden=10, data="mnist"):
    cfg = config(hidden=hidden, dataset=data)
    pipeline.ensure_coeffs(cfg, dw1, dw2)
    log(f"sweep {name}: {len(dw1)}x{len(dw2)} cells x {runs} runs")
    return onn.detuning_sweep(dataset(data), dw1, dw2, pipeline.train_config(cfg),
                              pipeline.coeff_dir(cfg), ROOT / "sweeps" / f"{name}.csv",
                              hidden=hidden, fwhm1=cfg.fwhm1, fwhm2=cfg.fwhm2, runs=runs)


def mnist_grid():
    return sweep("mnist_h10", GRID, GRID, 10)


def mnist_extreme():
    return sweep("mnist_h10_extreme", [EXTREME[0]], [EXTREME[1]], 10)


def mnist_capacity():
    return sweep("mnist_h25", GRID, GRID, 1, hidden=25)


def fashion():
    rows = []
    for a, b in FASHION_CELLS:
        res = sweep(f"fashion_h10_dw{a:g}_{b:g}", [a], [b], 3, data="fashion-mnist")
        rows.append((a, b, float(res.accuracy[0, 0])))
    return rows


def physical():
    """Train seed 0 at the best MNIST cell, then run waveform-level inference."""
    path = ROOT / "physical" / "summary.json"
    if path.exists():
        return json.loads(path.read_text())
    a, b, _ = mnist_grid().best()
    cfg = config()
    data = dataset()
    ckpt = ROOT / "physical" / f"model_dw{a:g}_{b:g}.json"
    if ckpt.exists():
        model = onn.load_model(ckpt)
    else:
        from fpld_onn.actfit import load_coeff_set
        act1 = load_coeff_set(pipeline.coeff_dir(cfg), a * OMEGA, cfg.fwhm1)
        act2 = load_coeff_set(pipeline.coeff_dir(cfg), b * OMEGA, cfg.fwhm2)
        model = onn.init_model((784, cfg.hidden, 10), act1, act2, cfg.seed)
        log(f"physical: training model at ({a:g}, {b:g})")
        model, _ = onn.train(data, model, pipeline.train_config(cfg))
        onn.save_model(model, ckpt)
    idx = physim.seeded_subset(data.test_x.shape[0], cfg.physical_images, cfg.seed)
    x, y = data.test_x[idx], data.test_y[idx]
    log(f"physical: {len(idx)} images")
    res = physim.evaluate_physical(model, pipeline.laser_config(cfg), x, y, idx)
    ana = onn.evaluate(model, x, y)
    physim.write_scatter_csv(ROOT / "physical" / "scatter.csv", res.records)
    physim.write_label_table(ROOT / "physical" / "labels.csv", ana.per_label, res.per_label,
                             res.counts)
    curve = next(c for c in family(cfg.fwhm1) if c.detuning == a * OMEGA)
    l1 = [r for r in res.records if r.layer == 1]
    pre = np.array([r.pre_peak for r in l1])
    post = np.array([r.post_peak for r in l1])
    expected = np.interp(pre, curve.p_in, curve.p_out)
    scale = curve.p_out.max()
    inside = pre <= curve.p_in.max()
    summary = dict(
        cell=[a, b], images=len(idx), failures=len(res.failures),
        physical_accuracy=res.accuracy, analytic_accuracy=ana.accuracy,
        per_label_physical=[float(v) for v in res.per_label],
        per_label_analytic=[float(v) for v in ana.per_label],
        scatter_rms_rel=float(np.sqrt(np.mean((post - expected)[inside] ** 2)) / scale),
        scatter_max_rel=float(np.max(np.abs(post - expected)[inside]) / scale),
        scatter_outside_grid=int((~inside).sum()),
        layer1_fwhm_mean=float(np.nanmean([r.post_fwhm for r in l1])),
        layer1_fwhm_median=float(np.nanmedian([r.post_fwhm for r in l1])),
        layer1_pre_percentiles=[float(v) for v in np.percentile(pre, [5, 50, 95])],
    )
    from fpld_onn.xfer import atomic_write_text
    atomic_write_text(path, json.dumps(summary, indent=1) + "\n")
    return summary


def threshold_30ps():
    """Threshold points at -25 Omega for 30 and 40 ps pulses."""
    cfg = config()
    out = {}
    for fw in (30.0, 40.0):
        (c,) = pipeline.family(cfg, fw, [-25.0])
        out[fw] = xfer.threshold_point(c)
    return out


STAGES = {
    "family": lambda: (family(40.0), family(45.0), threshold_30ps()),
    "coeffs": coefficients,
    "mnist": mnist_grid,
    "extreme": mnist_extreme,
    "physical": physical,
    "capacity": mnist_capacity,
    "fashion": fashion,
}


if __name__ == "__main__":
    names = sys.argv[1:] or ["all"]
    if names == ["all"]:
        names = list(STAGES)
    for n in names:
        t = time.time()
        STAGES[n]()
        log(f"stage {n} done in {time.time() - t:.0f} s")
