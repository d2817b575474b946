"""Command-line surface.

Subcommands: gen-data, train, sample, verify, macs, sweep. Exit codes:
0 success, 1 runtime failure, 2 usage error. Every artifact is a
deterministic function of (config, seed); report paths render figures
next to the delimited outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import costmodel, theory
from .backbone import KINDS
from .config import RunConfig, default_config, load_config
from .lazy import (
    GatedEvaluator,
    PredictorBank,
    RunStats,
    lazy_ratio,
    mac_tally,
    write_heatmap_csv,
)
from .linalg import make_rng
from .scheduler import sample_loop
from .training import penalty_sweep, train_loop

__all__ = ["main", "run"]


def _write_json(path, payload):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def _write_csv(path, header, rows):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    os.replace(tmp, path)


def _load_or_default(path) -> RunConfig:
    return load_config(path) if path else default_config()


def _cmd_gen_data(args) -> int:
    config = _load_or_default(args.config)
    dataset = config.build_dataset()
    ckpt.save_dataset(args.out, dataset, extra_meta={"config": config.to_dict()})
    print(f"wrote {len(dataset)} samples to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = _load_or_default(args.config)
    model = config.build_model()
    sched = config.build_schedule()
    plan = config.build_plan()
    dataset = ckpt.load_dataset(args.data) if args.data else config.build_dataset()
    result = train_loop(model, sched, plan, dataset, config.train_config())
    ckpt.save_checkpoint(args.out, model, result.bank,
                         extra_meta={"config": config.to_dict()})
    trace_path = args.loss_csv or f"{args.out}.loss.csv"
    _write_csv(trace_path, ["step", "total_loss", "lazy_loss", "distill_loss"],
               [(r["step"], r["total_loss"], r["lazy_loss"], r["distill_loss"])
                for r in result.trace])
    from .plots import render_loss_curve

    curve_path = f"{os.path.splitext(trace_path)[0]}.png"
    render_loss_curve(result.trace, curve_path)
    print(f"wrote checkpoint {args.out}, trace {trace_path}, figure {curve_path}")
    return 0


def _cmd_sample(args) -> int:
    config = _load_or_default(args.config)
    if args.ckpt:
        model, bank, _meta = ckpt.load_checkpoint(args.ckpt)
    else:
        model = config.build_model()
        bank = None
    if bank is None:
        bank = PredictorBank.zeros(model.config.num_layers, model.config.hidden_dim)
    sched = config.build_schedule()
    plan = config.build_plan()
    batch = args.batch
    rng = make_rng(config.seed, 0x5A3)
    shape = (model.config.num_patches, model.config.hidden_dim)
    z_init = [rng.standard_normal(shape) for _ in range(batch)]
    labels = [int(c) for c in rng.integers(0, model.config.num_classes, size=batch)]

    os.makedirs(args.out, exist_ok=True)
    stats = RunStats(model.config.num_layers, plan.num_steps, 2 * batch)
    if args.lazy == "on":
        evaluator = GatedEvaluator(model, bank, stats=stats, threshold=config.lazy.threshold)
    else:
        evaluator = GatedEvaluator(model, bank, stats=stats, policy="never",
                                   threshold=config.lazy.threshold)
    latents = sample_loop(model, z_init, plan, sched, labels, evaluator)

    np.save(os.path.join(args.out, "latents.npy"), np.stack(latents))
    stats_payload = stats.to_dict()
    stats_payload["lazy"] = args.lazy
    stats_payload["labels"] = labels
    stats_payload["mac_tally"] = mac_tally(stats, model.config.num_patches,
                                           model.config.hidden_dim)
    stats_payload["config"] = config.to_dict()
    _write_json(os.path.join(args.out, "run_stats.json"), stats_payload)
    write_heatmap_csv(stats, os.path.join(args.out, "heatmap.csv"))
    from .plots import render_heatmap

    render_heatmap(stats, os.path.join(args.out, "heatmap.png"))
    for kind in KINDS:
        print(f"lazy ratio [{kind}]: {float(lazy_ratio(stats, kind).mean()):.4f}")
    print(f"artifacts in {args.out}")
    return 0


def _cmd_verify(args) -> int:
    if args.suite == "all":
        reports = theory.run_all_suites(seed=args.seed, trials=args.trials)
    else:
        reports = theory.run_suite(args.suite, seed=args.seed, trials=args.trials)
    payload = [r.to_dict() for r in reports]
    if args.out:
        _write_json(args.out, payload)
    failures = [r for r in reports if not r.passed]
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: worst_ratio={r.worst_ratio:.6g} trials={r.trials}")
    if failures:
        print(f"{len(failures)} bound check(s) failed", file=sys.stderr)
        return 1
    return 0


def _cmd_macs(args) -> int:
    if args.preset == "custom":
        if not (args.layers and args.hidden and args.tokens):
            raise ValueError("custom preset needs --layers, --hidden, and --tokens")
        arch = costmodel.ArchSpec(num_layers=args.layers, hidden_dim=args.hidden,
                                  num_tokens=args.tokens, mlp_ratio=args.mlp_ratio)
    else:
        arch = costmodel.preset(args.preset)
    overhead = args.overhead == "on" or (args.overhead == "auto" and args.lazy_ratio > 0.0)
    from dataclasses import replace

    arch = replace(arch, lazy_predictor_overhead=overhead,
                   count_activation_matmuls=args.include_activation)
    tmacs = costmodel.mac_count(arch, args.steps, args.lazy_ratio)
    report = costmodel.mac_report(arch, args.steps, args.lazy_ratio)
    report["preset"] = args.preset
    print(f"{tmacs:.2f}")
    if args.json:
        _write_json(args.json, report)
    else:
        print(json.dumps(report, sort_keys=True))
    return 0


def _cmd_sweep(args) -> int:
    config = _load_or_default(args.config)
    rhos = [float(r) for r in args.rhos.split(",") if r.strip()]
    if len(rhos) < 2:
        raise ValueError("sweep needs at least two penalty ratios")
    model = config.build_model()
    sched = config.build_schedule()
    plan = config.build_plan()
    dataset = config.build_dataset()
    rows = penalty_sweep(model, sched, plan, dataset, config.train_config(), rhos,
                         eval_batch=args.eval_batch)
    _write_csv(args.out, ["rho", "gamma_attn", "gamma_feed", "consistency_error"],
               [(r["rho"], r["gamma_attn"], r["gamma_feed"], r["consistency_error"])
                for r in rows])
    from .plots import render_sweep

    figure_path = f"{os.path.splitext(args.out)[0]}.png"
    render_sweep(rows, figure_path)
    for r in rows:
        print(f"rho={r['rho']:.3g}  gamma_attn={r['gamma_attn']:.4f}  "
              f"gamma_feed={r['gamma_feed']:.4f}  drift={r['consistency_error']:.4g}")
    print(f"wrote {args.out} and {figure_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ditskip",
        description="Diffusion-transformer sampling with learned cross-step module skipping.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset container")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("train", help="train the skip predictors against a frozen backbone")
    p.add_argument("--config", default=None)
    p.add_argument("--data", default=None, help="dataset container (default: generate from config)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-csv", default=None)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("sample", help="run the DDIM sampler, lazily or dense")
    p.add_argument("--config", default=None)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--lazy", choices=("on", "off"), default="on")
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=_cmd_sample)

    p = sub.add_parser("verify", help="run the numerical bound suites")
    p.add_argument("--suite", choices=("all",) + theory.SUITE_NAMES, default="all")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="report JSON path")
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("macs", help="MAC cost model")
    p.add_argument("--preset", choices=("xl2-256", "xl2-512", "custom"), required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--lazy-ratio", type=float, default=0.0)
    p.add_argument("--overhead", choices=("auto", "on", "off"), default="auto")
    p.add_argument("--include-activation", action="store_true",
                   help="count the activation-side attention matmuls too")
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--tokens", type=int, default=None)
    p.add_argument("--mlp-ratio", type=float, default=4.0)
    p.add_argument("--json", default=None)
    p.set_defaults(fn=_cmd_macs)

    p = sub.add_parser("sweep", help="train across penalty ratios and tabulate laziness")
    p.add_argument("--config", default=None)
    p.add_argument("--rhos", required=True, help="comma-separated, e.g. 1e-7,1e-4,1e-2")
    p.add_argument("--eval-batch", type=int, default=4)
    p.add_argument("--out", required=True, help="sweep table CSV path")
    p.set_defaults(fn=_cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.fn(args)
    except Exception as exc:  # runtime failures map to exit 1 with a structured line
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
