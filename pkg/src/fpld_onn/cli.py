"""Command-line entry point: ``fpld-onn <subcommand> [options]``.

Every subcommand reads a flat ``key = value`` run configuration (``--config``)
with ``--set key=value`` overrides and writes its artifacts into the output
directory.  Exit status: 0 success, 1 runtime failure, 2 usage or
configuration error.  Failures print one line ``error: <Kind>: <message>`` to
stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import dataio, pipeline
from .errors import FpldError, ParameterError
from .laser import OMEGA

log = logging.getLogger("fpld_onn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args, **extra):
    over = _overrides(args.set)
    if args.output_dir:
        over["output_dir"] = args.output_dir
    if args.jobs:
        over["jobs"] = str(args.jobs)
    over.update({k: str(v) for k, v in extra.items() if v is not None})
    try:
        cfg = dataio.load_run_config(args.config, over)
    except (ParameterError, OSError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    return cfg


def cmd_li_curve(args):
    from .laser import compute_threshold_current, li_curve, write_li_csv
    cfg = _config(args)
    params = pipeline.laser_params(cfg)
    currents = np.arange(args.start, args.stop + args.step / 2, args.step)
    cur, power = li_curve(params, currents)
    i_th = compute_threshold_current(params)
    path = Path(cfg.output_dir) / "li_curve.csv"
    write_li_csv(path, cur, power, params, i_th)
    print(f"threshold_current_mA={i_th:.6g} file={path}")


def cmd_hysteresis(args):
    from .laser import loop_area, stationary_hysteresis_sweep, switching_powers
    cfg = _config(args)
    params = pipeline.laser_params(cfg)
    up, down = stationary_hysteresis_sweep(params, cfg.bias_ma, cfg.mode_index,
                                           args.detuning * OMEGA, args.p_max, args.steps)
    path = Path(cfg.output_dir) / f"hysteresis_dw{args.detuning:g}.csv"
    lines = [f"# detuning_omega: {args.detuning!r}", f"# bias_mA: {cfg.bias_ma!r}",
             f"# params_hash: {params.content_hash()}", "p_in_mW,p_out_up_mW,p_out_down_mW"]
    lines += [f"{a!r},{b!r},{c!r}" for a, b, c in
              zip(up.p_in.tolist(), up.p_out.tolist(), down.p_out.tolist())]
    from .xfer import atomic_write_text
    atomic_write_text(path, "\n".join(lines) + "\n")
    s_up, s_down = switching_powers(up, down)
    print(f"up_switch_mW={s_up:.6g} down_switch_mW={s_down:.6g} "
          f"loop_area={loop_area(up, down):.6g} file={path}")


def cmd_transfer(args):
    from .xfer import threshold_point, write_curve_csv
    cfg = _config(args)
    dets = [args.detuning] if args.detuning is not None else list(cfg.family_detunings)
    curves = pipeline.family(cfg, args.fwhm, dets)
    out = Path(cfg.output_dir) / "transfer"
    for c in curves:
        path = out / f"transfer_dw{c.detuning / OMEGA:g}_fwhm{args.fwhm:g}.csv"
        write_curve_csv(c, path)
        try:
            th = threshold_point(c)
        except FpldError:
            th = math.nan
        print(f"detuning_omega={c.detuning / OMEGA:g} threshold_mW={th:.6g} file={path}")


def cmd_fit(args):
    cfg = _config(args)
    for fw in args.fwhm or [cfg.fwhm1, cfg.fwhm2]:
        for det, c in sorted(pipeline.fit_family(cfg, fw, overwrite=args.refit).items()):
            flag = "" if c.quality_ok else " quality=poor"
            print(f"fwhm_ps={fw:g} detuning_omega={det:g} rmse_mW={c.fit_rmse:.4g}{flag}")


def _dataset(cfg):
    return dataio.load_dataset(cfg.dataset, cfg.data_dir)


def cmd_train(args):
    from . import actfit, onn
    cfg = _config(args, hidden=args.hidden, seed=args.seed)
    dw1 = args.dw1 if args.dw1 is not None else cfg.detunings1[len(cfg.detunings1) // 2]
    dw2 = args.dw2 if args.dw2 is not None else cfg.detunings2[len(cfg.detunings2) // 2]
    cdir = pipeline.coeff_dir(cfg)
    act1 = actfit.load_coeff_set(cdir, dw1 * OMEGA, cfg.fwhm1)
    act2 = actfit.load_coeff_set(cdir, dw2 * OMEGA, cfg.fwhm2)
    data = _dataset(cfg)
    model = onn.init_model((data.train_x.shape[1], cfg.hidden, 10), act1, act2, cfg.seed)
    model, hist = onn.train(data, model, pipeline.train_config(cfg))
    stem = f"model_h{cfg.hidden}_dw{dw1:g}_{dw2:g}_s{cfg.seed}"
    out = Path(cfg.output_dir)
    onn.save_model(model, out / f"{stem}.json")
    lines = ["epoch,train_accuracy,train_loss,test_accuracy,test_loss"]
    for i in range(len(hist)):
        row = [hist.train_accuracy[i], hist.train_loss[i], hist.test_accuracy[i], hist.test_loss[i]]
        lines.append(f"{i + 1}," + ",".join(repr(float(v)) for v in row))
    from .xfer import atomic_write_text
    atomic_write_text(out / f"{stem}_history.csv", "\n".join(lines) + "\n")
    print(f"test_accuracy={hist.test_accuracy[-1]:.6g} model={out / (stem + '.json')}")


def cmd_eval(args):
    from . import onn
    cfg = _config(args)
    model = onn.load_model(args.model)
    data = _dataset(cfg)
    ev = onn.evaluate(model, data.test_x, data.test_y, cfg.l2)
    path = Path(cfg.output_dir) / (Path(args.model).stem + "_eval.csv")
    lines = ["label,count,accuracy"]
    lines += [f"{k},{int(ev.counts[k])},{float(ev.per_label[k])!r}" for k in range(10)]
    from .xfer import atomic_write_text
    atomic_write_text(path, "\n".join(lines) + "\n")
    print(f"accuracy={ev.accuracy:.6g} loss={ev.loss:.6g} file={path}")


def cmd_physical_eval(args):
    from . import onn, physim
    cfg = _config(args)
    model = onn.load_model(args.model)
    data = _dataset(cfg)
    n = data.test_x.shape[0] if args.full else cfg.physical_images
    idx = physim.seeded_subset(data.test_x.shape[0], n, cfg.seed)
    x, y = data.test_x[idx], data.test_y[idx]
    res = physim.evaluate_physical(model, pipeline.laser_config(cfg), x, y, idx)
    ana = onn.evaluate(model, x, y)
    out = Path(cfg.output_dir)
    stem = Path(args.model).stem
    physim.write_scatter_csv(out / f"{stem}_scatter.csv", res.records)
    physim.write_label_table(out / f"{stem}_labels.csv", ana.per_label, res.per_label, res.counts)
    print(f"physical_accuracy={res.accuracy:.6g} analytic_accuracy={ana.accuracy:.6g} "
          f"failures={len(res.failures)} images={len(idx)}")


def cmd_sweep(args):
    from . import onn
    cfg = _config(args, hidden=args.hidden)
    pipeline.ensure_coeffs(cfg, cfg.detunings1, cfg.detunings2)
    data = _dataset(cfg)
    path = Path(cfg.output_dir) / f"sweep_{cfg.dataset}_h{cfg.hidden}.csv"
    res = onn.detuning_sweep(data, cfg.detunings1, cfg.detunings2, pipeline.train_config(cfg),
                             pipeline.coeff_dir(cfg), path, hidden=cfg.hidden,
                             fwhm1=cfg.fwhm1, fwhm2=cfg.fwhm2, jobs=cfg.jobs)
    a, b, acc = res.best()
    print(f"best_dw1={a:g} best_dw2={b:g} best_mean_accuracy={acc:.6g} file={path}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value run configuration file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("--output-dir", help="artifact directory (config key output_dir)")
    common.add_argument("--jobs", type=int, help="parallel worker bound")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="fpld-onn", description="FP-LD activation pipeline")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("li-curve", parents=[common], help="free-running L-I curve and I_th")
    s.add_argument("--start", type=float, default=0.0)
    s.add_argument("--stop", type=float, default=14.0)
    s.add_argument("--step", type=float, default=0.2)
    s.set_defaults(func=cmd_li_curve)

    s = sub.add_parser("hysteresis", parents=[common], help="stationary CW hysteresis sweep")
    s.add_argument("--detuning", type=float, default=-25.0, help="units of Omega")
    s.add_argument("--p-max", type=float, default=4.0, help="mW")
    s.add_argument("--steps", type=int, default=41)
    s.set_defaults(func=cmd_hysteresis)

    s = sub.add_parser("transfer", parents=[common], help="pulsed transfer curve(s)")
    s.add_argument("--detuning", type=float, help="units of Omega (default: whole family)")
    s.add_argument("--fwhm", type=float, default=40.0, help="ps")
    s.set_defaults(func=cmd_transfer)

    s = sub.add_parser("fit", parents=[common], help="fit activations to the families")
    s.add_argument("--fwhm", type=float, action="append", help="ps (repeatable)")
    s.add_argument("--refit", action="store_true", help="ignore stored coefficient files")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("train", parents=[common], help="train one model")
    s.add_argument("--dw1", type=float, help="layer-1 detuning, units of Omega")
    s.add_argument("--dw2", type=float, help="layer-2 detuning, units of Omega")
    s.add_argument("--hidden", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    s.add_argument("--model", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("physical-eval", parents=[common], help="waveform-level inference")
    s.add_argument("--model", required=True)
    s.add_argument("--full", action="store_true", help="use the whole test set")
    s.set_defaults(func=cmd_physical_eval)

    s = sub.add_parser("sweep", parents=[common], help="detuning-pair training sweep")
    s.add_argument("--hidden", type=int)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except UsageError as exc:
        sys.stderr.write(parser.format_usage())
        sys.stderr.write(f"error: usage: {exc}\n")
        return 2
    except (FpldError, OSError, ValueError, json.JSONDecodeError) as exc:
        msg = str(exc).replace("\n", " ")
        sys.stderr.write(f"error: {type(exc).__name__}: {msg}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
