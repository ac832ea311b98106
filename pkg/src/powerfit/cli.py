"""Command-line entry point: ``powerfit <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import io as _io
import sys
from pathlib import Path
from typing import Optional

from . import io
from .diagnostics import compare_schemes, overhead_estimate, sweep_a, weight_stats
from .errors import DataError, NumericError
from .fit import fit_exponent, fit_per_layer
from .fixtures import accuracy, generate_dataset, train_fixture
from .inference import ActRangePolicy, quantize_model
from .intpow import IntPowConfig
from .model import fold_batchnorm
from .quant import PER_CHANNEL, PER_TENSOR, norm_p

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_ints(text):
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="powerfit", description="Data-free power-function quantization.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, model=True, quant=True):
        if model:
            p.add_argument("--model", dest="model_dir", required=True)
        p.add_argument("--out", dest="output_path")
        if quant:
            p.add_argument("--bits-w", type=int, default=4)
            p.add_argument("--bits-a", type=int, default=4)
            p.add_argument("--p", type=int, choices=(1, 2), default=2)
            p.add_argument("--gran", choices=("per-tensor", "per-channel"), default="per-channel")
            p.add_argument("--fit-mode", choices=("global", "per-layer"), default="global")
            p.add_argument("--solver", choices=("nelder-mead", "grid"), default="nelder-mead")
            p.add_argument("--act-policy", choices=("bn-stats", "dynamic"), default="bn-stats")
            p.add_argument("--accumulation", choices=("pre", "post"), default="pre")
            p.add_argument("--bias-correct", action=argparse.BooleanOptionalAction, default=True)
            p.add_argument("--dataset", dest="dataset_path")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("fixture", help="generate a dataset, train a model, write the model directory")
    common(p, model=False, quant=False)
    p.add_argument("--kind", choices=("blobs", "rings"), default="blobs")
    p.add_argument("--n", type=int, default=600)
    p.add_argument("--arch", type=_csv_ints, default=[2, 16, 3])
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--separation", type=float, default=4.0)

    common(sub.add_parser("fit", help="fit the exponent and print the report"))
    common(sub.add_parser("quantize", help="write a quantized model directory"))
    p = sub.add_parser("eval", help="accuracy and per-layer reconstruction error")
    common(p)
    p.add_argument("--qmodel", dest="qmodel_dir")
    p = sub.add_parser("sweep", help="epsilon/accuracy over a grid of exponents (CSV)")
    common(p)
    p.add_argument("--lo", type=float, default=0.05)
    p.add_argument("--hi", type=float, default=2.0)
    p.add_argument("--step", type=float, default=0.005)
    p = sub.add_parser("compare", help="uniform/log/power comparison table (CSV)")
    common(p)
    p.add_argument("--bits", type=_csv_ints, default=[4, 6, 8])
    common(sub.add_parser("stats", help="weight distribution statistics"), quant=False)
    p = sub.add_parser("overhead", help="bit-weighted cost estimate of the power evaluation")
    common(p)
    p.add_argument("--iterations", type=int, default=2)
    p.add_argument("--fraction-bits", type=int, default=16)
    return parser


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dataset(args, model):
    path = getattr(args, "dataset_path", None)
    if path is None and args.model_dir:
        default = Path(args.model_dir) / "dataset.csv"
        path = str(default) if default.exists() else None
    if path is None:
        return None
    return io.load_dataset(path, class_count=model.output_shape[-1])


def _need(ds, command):
    if ds is None:
        raise DataError(f"{command} needs --dataset (or dataset.csv in the model directory)")
    return ds


def _options(args):
    gran = PER_CHANNEL if args.gran == "per-channel" else PER_TENSOR
    solver = args.solver.replace("-", "_")
    policy = ActRangePolicy(args.act_policy.replace("-", "_"))
    return gran, solver, policy


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        _dispatch(args)
    except (DataError, FileNotFoundError, IsADirectoryError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _dispatch(args) -> None:
    cmd = args.command
    if cmd == "fixture":
        if not args.output_path:
            raise DataError("fixture needs --out DIR")
        ds = generate_dataset(args.kind, args.n, args.seed, classes=args.arch[-1], dims=args.arch[0],
                              separation=args.separation) if args.kind == "blobs" else generate_dataset("rings", args.n, args.seed)
        model = train_fixture(args.arch, ds, args.epochs, args.lr, args.seed)
        io.save_model(model, args.output_path)
        io.save_dataset(ds, Path(args.output_path) / "dataset.csv")
        return

    model = io.load_model(args.model_dir)
    if cmd == "stats":
        _emit(io.dumps(weight_stats(fold_batchnorm(model))), args.output_path)
        return
    if cmd == "overhead":
        est = overhead_estimate(fold_batchnorm(model), args.bits_w, args.bits_a, IntPowConfig(args.iterations, args.fraction_bits))
        _emit(io.dumps(est), args.output_path)
        return

    gran, solver, policy = _options(args)
    folded = fold_batchnorm(model)
    ds = _dataset(args, model)
    if cmd == "fit":
        fit = fit_per_layer if args.fit_mode == "per-layer" else fit_exponent
        _emit(io.dumps(fit(folded, args.bits_w, gran, args.p, solver).to_dict()), args.output_path)
    elif cmd == "quantize":
        if not args.output_path:
            raise DataError("quantize needs --out DIR")
        qm, report = quantize_model(model, args.bits_w, args.bits_a, gran, args.fit_mode.replace("-", "_"), policy,
                                    args.bias_correct, solver, args.p, args.accumulation, ds)
        io.save_qmodel(qm, args.output_path)
        (Path(args.output_path) / "fit.json").write_text(io.dumps(report.to_dict()))
    elif cmd == "eval":
        ds = _need(ds, "eval")
        if args.qmodel_dir:
            qm = io.load_qmodel(args.qmodel_dir)
            errs = [norm_p(w - l.dequantized, args.p)
                    for l, w in zip(qm.layers, folded.weights())]
            report = {"kind": "quantized", "accuracy": accuracy(qm, ds), "layer_epsilon": errs, "epsilon": sum(errs),
                      "a": qm.a, "bits_w": qm.bits_w, "bits_a": qm.bits_a}
        else:
            report = {"kind": "float", "accuracy": accuracy(model, ds)}
        _emit(io.dumps(report), args.output_path)
    elif cmd == "sweep":
        curve = sweep_a(model, _need(ds, "sweep"), args.bits_w, gran, args.lo, args.hi, args.step, policy,
                        args.bias_correct, args.p)
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["a", "epsilon", "accuracy"])
        for a, eps, acc in curve.points:
            w.writerow([repr(a), repr(eps), repr(acc)])
        _emit(buf.getvalue(), args.output_path)
    elif cmd == "compare":
        rows = compare_schemes(model, _need(ds, "compare"), args.bits, gran, policy, args.bias_correct, args.p, solver)
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scheme", "bits_w", "bits_a", "a_star", "accuracy", "reconstruction_error"])
        for r in rows:
            w.writerow([r.scheme, r.bits_w, r.bits_a, "" if r.a_star is None else repr(r.a_star),
                        repr(r.accuracy), repr(r.reconstruction_error)])
        _emit(buf.getvalue(), args.output_path)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
