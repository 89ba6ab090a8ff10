"""Command-line entry point.

Subcommands: gen-data, count, train, eval, fit-poly, selfcheck,
krr-baseline. Exit code 0 only when the requested action fully succeeds;
pass --json-errors for machine-readable failure objects on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np


def _cmd_gen_data(args) -> int:
    from .data import gen_synthetic_images, save_image_set

    image_set = gen_synthetic_images(args.seed, args.count, args.size)
    save_image_set(image_set, args.out, pgm=args.pgm)
    print(f"wrote {args.count} images of size {args.size} to {args.out}")
    return 0


def _cmd_count(args) -> int:
    from .counting import count_flops, count_params
    from .topology import Topology

    topology = Topology.load(args.topology)
    params = count_params(topology)
    shape = tuple(int(v) for v in args.input_shape.split(","))
    if len(shape) != 3:
        raise ValueError(f"--input-shape must be C,H,W, got {args.input_shape!r}")
    report = count_flops(topology, shape)
    print(f"params: {params}")
    print(f"flops:  {report.total} ({report.gflops:.3f} GFLOPs at input {shape})")
    print(f"convention: {report.convention}")
    return 0


def _cmd_train(args) -> int:
    from .experiments import DenoiseConfig, run_denoise_experiment

    config = DenoiseConfig.load(args.config)
    if args.out:
        config.out_dir = args.out
    report = run_denoise_experiment(config)
    print(f"psnr noisy:    {report.psnr_noisy:.3f} dB")
    print(f"psnr denoised: {report.psnr_denoised:.3f} dB")
    print(f"params:        {report.params}")
    if report.out_dir:
        print(f"artifacts in:  {report.out_dir}")
    return 0


def _cmd_eval(args) -> int:
    from .data import load_image_set
    from .experiments import evaluate_model

    image_set = load_image_set(args.data)
    report = evaluate_model(args.model, image_set, args.sigma, args.seed, args.out)
    print(f"psnr noisy:    {report['psnr_noisy']:.3f} dB")
    print(f"psnr denoised: {report['psnr_denoised']:.3f} dB")
    return 0


def _cmd_fit_poly(args) -> int:
    from .multikernel import atoms_to_tensor, fit_exact
    from .volterra import random_volterra

    target = random_volterra(args.seed, args.dim, args.order).tensors[args.order - 1]
    branch = fit_exact(target, args.order, seed=args.seed)
    recon = atoms_to_tensor(branch)
    residual = float(np.max(np.abs(recon - target)) / np.max(np.abs(target)))
    print(f"target: random symmetric d={args.dim}, r={args.order} tensor")
    print(f"atoms:  {branch.count}")
    print(f"residual: {residual:.3e}")
    return 0 if residual <= 1e-8 else 1


def _cmd_selfcheck(args) -> int:
    from .selfcheck import run_selfcheck

    report = run_selfcheck(args.seed)
    for line in report.lines():
        print(line)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report.to_json())
    return 0 if report.passed else 1


def _cmd_krr_baseline(args) -> int:
    from .experiments import run_krr_contrast

    report = run_krr_contrast(args.seed, args.dim, args.n_train)
    print(f"training samples:   {report.n_train}")
    print(f"krr stored centers: {report.krr_stored_centers}")
    print(f"atom count:         {report.atom_count} (budget C(d+1,2) = {report.atom_budget})")
    print(f"krr test mse:       {report.krr_test_mse:.3e}")
    print(f"atom test mse:      {report.kvnn_test_mse:.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kvnn",
        description="multi-kernel Volterra layers: experiments, counting, and self checks",
    )
    parser.add_argument("--json-errors", action="store_true",
                        help="emit machine-readable JSON error objects on failure")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic image set")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=32)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--out", required=True)
    p.add_argument("--pgm", action="store_true", help="also write viewable PGM files")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("count", help="parameter and FLOP count for a topology file")
    p.add_argument("--topology", required=True)
    p.add_argument("--input-shape", default="1,64,64", help="C,H,W used for the FLOP count")
    p.set_defaults(func=_cmd_count)

    p = sub.add_parser("train", help="run a denoising experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override the config's output directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model on a stored image set")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sigma", type=float, default=25.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for prediction tensors and the report")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("fit-poly", help="fit exact atoms to a random symmetric target")
    p.add_argument("--dim", "--d", type=int, default=3, dest="dim")
    p.add_argument("--order", "--r", type=int, default=2, dest="order")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_fit_poly)

    p = sub.add_parser("selfcheck", help="run the full invariant suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write a JSON report here")
    p.set_defaults(func=_cmd_selfcheck)

    p = sub.add_parser("krr-baseline", help="stored-centers vs learnable-atoms contrast")
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--n-train", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_krr_baseline)
    return parser


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single reporting point for the CLI
        if args.json_errors:
            print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
                  file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
