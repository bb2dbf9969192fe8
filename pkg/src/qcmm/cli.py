"""Command line entry point: ``qcmm <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .ansatz import KERNEL_NAMES
from .classical import mlp_param_count
from .data import DEFAULT_FEATURES, DataError, load_dataset, synth_generate
from .evidence import verify_fusion_correspondence
from .fusion import STRATEGIES, belief_mass, fusion_gate_count
from .grad import gradient_check, toy_spec
from .harness import (
    DEFAULT_SEED,
    CheckpointError,
    TrainConfig,
    TrainingError,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .model import ABLATIONS, ModelSpec, N_QUBITS, init_params, parameter_breakdown
from .qcnn import QcnnConfig, count_parameters
from .report import render_run, write_history, write_metrics

log = logging.getLogger("qcmm")

GRADCHECK_TOL = 1e-5


def _json_arg(value: str) -> dict:
    """Inline JSON object or a path to one."""
    text = value if value.lstrip().startswith("{") else Path(value).read_text()
    obj = json.loads(text)
    if not isinstance(obj, dict):
        raise ValueError("expected a JSON object")
    return obj


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qcmm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def data_flags(sp, required=True):
        g = sp.add_mutually_exclusive_group(required=required)
        g.add_argument("--manifest", help="dataset manifest JSON")
        g.add_argument("--synthetic", help="synthetic spec: inline JSON or a path")
        sp.add_argument("--d", type=int, default=DEFAULT_FEATURES, help="PCA components per modality")

    def model_flags(sp):
        sp.add_argument("--config", help="TrainConfig JSON file")
        sp.add_argument("--kernel", choices=KERNEL_NAMES)
        sp.add_argument("--strategy", choices=STRATEGIES)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", default="runs", help="output directory")

    tr = sub.add_parser("train", help="train a model and write metrics, history and checkpoint")
    data_flags(tr)
    model_flags(tr)
    tr.add_argument("--mode", choices=ABLATIONS)

    ab = sub.add_parser("ablate", help="train and score one ablation")
    data_flags(ab)
    model_flags(ab)
    ab.add_argument("--mode", choices=ABLATIONS, required=True)

    ev = sub.add_parser("eval", help="score a checkpoint on the test split")
    data_flags(ev)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--out", default="runs")

    gc = sub.add_parser("gradcheck", help="finite-difference audit of the analytic gradients")
    gc.add_argument("--seed", type=int, default=DEFAULT_SEED)
    gc.add_argument("--kernel", choices=KERNEL_NAMES, default="SO4")

    fd = sub.add_parser("fuse-demo", help="belief masses of a checkpoint's fusion layer")
    fd.add_argument("--checkpoint")
    fd.add_argument("--seed", type=int, default=DEFAULT_SEED)
    fd.add_argument("--out", help="also write belief_mass.png here")

    pc = sub.add_parser("paramcount", help="quantum parameter budget")
    pc.add_argument("--kernel", choices=KERNEL_NAMES, default="SO4")
    pc.add_argument("--d", type=int, default=N_QUBITS, help="number of fused features")
    pc.add_argument("--strategy", choices=STRATEGIES, default="qcmm")
    return p


def _load_bundle(args):
    if args.manifest:
        return load_dataset(args.manifest, d=args.d)
    spec = _json_arg(args.synthetic)
    # the dataset seed may be pinned in the spec; otherwise it follows the run seed
    seed = spec.pop("seed", None)
    if seed is None:
        seed = getattr(args, "seed", None)
    return synth_generate(spec, DEFAULT_SEED if seed is None else seed)


def _config(args, mode=None) -> TrainConfig:
    raw = _json_arg(args.config) if args.config else {}
    overrides = {"kernel_name": args.kernel, "fusion_strategy": args.strategy,
                 "seed": args.seed, "ablation_mode": mode}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(raw)


def _thetas(model):
    return model.params["fusion.theta"] if "fusion.theta" in model.params else None


def _write_run(out: Path, result, bundle, metrics) -> None:
    out.mkdir(parents=True, exist_ok=True)
    model = result.model
    write_metrics(out / "metrics.json", metrics, {"config": asdict(result.config)})
    write_history(out / "history.csv", result.history)
    save_checkpoint(out / "checkpoint.qcmm", model, result.config)
    render_run(out, metrics, result.history, bundle.class_names, _thetas(model))


def cmd_train(args, mode=None) -> int:
    config = _config(args, mode if mode is not None else args.mode)
    bundle = _load_bundle(args)
    result = train(config, bundle, log=log.info)
    metrics = evaluate(result.model, bundle)
    out = Path(args.out)
    _write_run(out, result, bundle, metrics)
    print(f"OA {metrics.OA:.4f}  AA {metrics.AA:.4f}  kappa {metrics.kappa:.4f}  F1 {metrics.F1:.4f}")
    print(f"wrote {out / 'metrics.json'}, {out / 'history.csv'}, {out / 'checkpoint.qcmm'}")
    return 0


def cmd_ablate(args) -> int:
    return cmd_train(args, args.mode)


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    bundle = _load_bundle(args)
    metrics = evaluate(model, bundle)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out / "metrics.json", metrics, {"checkpoint": str(args.checkpoint)})
    render_run(out, metrics, None, bundle.class_names, _thetas(model))
    print(f"OA {metrics.OA:.4f}  AA {metrics.AA:.4f}  kappa {metrics.kappa:.4f}  F1 {metrics.F1:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    worst = 0.0
    for strategy in STRATEGIES:
        spec = toy_spec(strategy, args.kernel)
        dev = gradient_check(spec, args.seed)
        worst = max(worst, dev)
        print(f"{strategy:14s} {args.kernel:4s} max |analytic - fd| = {dev:.3e}")
    print(f"max deviation {worst:.3e}")
    return 0 if worst <= GRADCHECK_TOL else 1


def cmd_fuse_demo(args) -> int:
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
        thetas = _thetas(model)
        if thetas is None:
            print(f"{args.checkpoint}: model has no trainable fusion layer", file=sys.stderr)
            return 1
    else:
        thetas = init_params(ModelSpec(), 0)["fusion.theta"]
    rng = np.random.default_rng(args.seed)
    print("j  theta_j     belief mass   v_h     v_l     quantum       evidential    |diff|")
    worst = 0.0
    for j, th in enumerate(thetas):
        v_h, v_l = rng.uniform(0, np.pi, 2)
        r = verify_fusion_correspondence(v_h, v_l, th)
        worst = max(worst, r["abs_diff"])
        print(f"{j}  {th: .6f}  {float(belief_mass(th)):.10f}  {v_h:.4f}  {v_l:.4f}  "
              f"{r['quantum_mass']:.10f}  {r['evidential_mass']:.10f}  {r['abs_diff']:.1e}")
    print(f"max correspondence deviation {worst:.1e}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        render_run(out, thetas=thetas)
    return 0


def cmd_paramcount(args) -> int:
    if args.d < 1:
        print("--d must be positive", file=sys.stderr)
        return 2
    counts = count_parameters(QcnnConfig(args.kernel), args.d)
    print(f"kernel {args.kernel}")
    print(f"fusion {counts['fusion']}")
    print(f"fusion_gates {fusion_gate_count(args.d)}")
    print(f"qcnn {counts['qcnn']}")
    print(f"total {counts['total_quantum']}")
    print(f"mlp {2 * mlp_param_count()}")
    breakdown = parameter_breakdown(ModelSpec(args.strategy, args.kernel))
    print("model " + " ".join(f"{k}={v}" for k, v in breakdown.items()))
    return 0


COMMANDS = {
    "train": cmd_train,
    "ablate": cmd_ablate,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "fuse-demo": cmd_fuse_demo,
    "paramcount": cmd_paramcount,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    args = _build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, DataError, CheckpointError, TrainingError) as exc:
        print(f"qcmm {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
