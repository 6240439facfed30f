"""Command line entry point: ``agd {run,calibrate,ablate,report} CONFIG``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from agd.errors import CalibrationError, ConfigError
from agd.harness import SWEEP_AXES, EvalReport, ExperimentConfig, ReportError, ablation_sweep, ablation_table, calibrate, run_experiment


def _floats(text: str) -> list[float]:
    """Parse ``a,b,c`` or an inclusive range ``start:stop:step``."""
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        n = int(round((stop - start) / step)) + 1
        return [round(start + i * step, 10) for i in range(n)]
    return [float(v) for v in text.split(",") if v]


def _number(v: float):
    return int(v) if float(v).is_integer() else v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="agd", description="Desk-scale adversarial-guided diffusion experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("config", help="experiment config (JSON)")
        sp.add_argument("--seed", type=int, help="override the base seed")
        sp.add_argument("--trials", type=int, help="override the trial count")
        sp.add_argument("--workers", type=int, help="worker processes")
        sp.add_argument("--output-dir", help="override the output directory")

    common(sub.add_parser("run", help="run the full attack x defense x victim sweep"))

    cal = sub.add_parser("calibrate", help="smallest grid value reaching a target ASR")
    common(cal)
    cal.add_argument("--attack", default="agd")
    cal.add_argument("--param", default="gamma")
    cal.add_argument("--grid", type=_floats, default=_floats("0.1:3.0:0.1"), help="a,b,c or start:stop:step")
    cal.add_argument("--target", type=float, default=0.9)
    cal.add_argument("--full-curve", action="store_true")

    abl = sub.add_parser("ablate", help="sweep one AGD hyperparameter")
    common(abl)
    abl.add_argument("--axis", choices=sorted(SWEEP_AXES), required=True)
    abl.add_argument("--values", type=_floats, required=True)
    abl.add_argument("--attack")

    rep = sub.add_parser("report", help="pretty-print a stored report")
    rep.add_argument("config", help="report.json or the directory holding it")
    return p


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    over = {k: getattr(args, k) for k in ("seed", "trials", "workers", "output_dir") if getattr(args, k) is not None}
    return replace(cfg, **over) if over else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.verb == "report":
            print(EvalReport.load(args.config).format_table())
            return 0
        cfg = _load(args)
        if args.verb == "run":
            print(run_experiment(cfg).format_table())
        elif args.verb == "calibrate":
            res = calibrate(cfg, args.attack, args.param, args.grid, args.target, full_curve=args.full_curve)
            for v, asr in res.curve:
                print(f"{args.param}={v:g}  asr={asr:.3f}")
            print(json.dumps({"attack": res.attack, "param": res.param, "value": res.value}))
        else:
            values = [_number(v) for v in args.values]
            report = ablation_sweep(cfg, args.axis, values, attack=args.attack)
            print(f"{args.axis},attack,asr,ssim")
            for r in ablation_table(report):
                print(f"{r['value']},{r['attack']},{r['asr']:.4f},{r['ssim']:.4f}")
    except (ConfigError, CalibrationError, ReportError, OSError, KeyError, ValueError) as exc:
        print(f"agd: error: {exc}", file=sys.stderr)
        return 1
    return 0
