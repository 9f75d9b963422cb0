"""Command-line interface.

Commands: inspect-format, calibrate, train, qat-finetune, eval, export,
hwsim, lut-report. Configuration comes from --config, the MFQAT_CONFIG
environment variable, or built-in defaults. Errors exit nonzero with a
one-line diagnostic.
"""

from __future__ import annotations

import argparse
import sys

from .codec import enumerate_values
from .config import RunConfig
from .export import export_quantized, load_quantized
from .formats import parse_format, quant_range


def _cmd_inspect_format(args) -> int:
    fmt = parse_format(args.format)
    e_b = fmt.ieee_bias if args.bias is None else args.bias
    rng = quant_range(fmt, e_b)
    values = enumerate_values(fmt, e_b)
    print(f"format {fmt} ({fmt.zero_encoding.value})")
    print(f"bias {e_b}")
    print(f"x_min {rng.x_min!r}")
    print(f"x_max {rng.x_max!r}")
    print(f"values {values.size}")
    print("grid " + " ".join(repr(v) for v in values.tolist()))
    if args.plot:
        from . import report
        report.save_value_grid(fmt, e_b, args.plot)
        print(f"figure {args.plot}")
    return 0


def _cmd_train(args) -> int:
    from . import runs
    cfg = RunConfig.from_env_or(args.config)
    path = runs.train_full_precision(cfg, args.out, quiet=args.quiet)
    print(f"checkpoint {path}")
    return 0


def _cmd_qat_finetune(args) -> int:
    from . import runs
    cfg = RunConfig.from_env_or(args.config)
    path = runs.qat_finetune(cfg, args.pretrained, args.out, quiet=args.quiet)
    print(f"checkpoint {path}")
    return 0


def _cmd_calibrate(args) -> int:
    from . import runs
    cfg = RunConfig.from_env_or(args.config)
    assigned = runs.calibrate_only(cfg, args.pretrained, args.out)
    for key in sorted(assigned):
        print(f"e0.{key}={assigned[key]!r}")
    print(f"checkpoint {args.out}")
    return 0


def _cmd_eval(args) -> int:
    from . import runs
    name, value = runs.evaluate_checkpoint(args.checkpoint, args.out)
    print(f"{name}={value!r}")
    return 0


def _cmd_export(args) -> int:
    from .checkpoint import load_checkpoint, restore_model
    from . import runs
    import os
    if not os.path.exists(args.checkpoint):
        raise runs.RunError(f"checkpoint not found: {args.checkpoint}")
    model = restore_model(load_checkpoint(args.checkpoint))
    manifest = export_quantized(model, args.out)
    print(f"tensors {len(manifest['tensors'])}")
    print(f"payload_bytes {manifest['payload_bytes']}")
    print(f"export {args.out}")
    return 0


def _cmd_hwsim(args) -> int:
    from .hwmodel import emit_test_vectors, verify_exhaustive
    fmt = parse_format(args.format)
    e_b = fmt.ieee_bias if args.bias is None else args.bias
    pairs, exact, max_rel = verify_exhaustive(fmt, e_b)
    print(f"{exact}/{pairs} pairs exact")
    print(f"max_relative_error {max_rel!r}")
    if args.vectors:
        with open(args.vectors, "w", encoding="utf-8") as fh:
            n = emit_test_vectors(fmt, e_b, fh)
        print(f"vectors {args.vectors} ({n} lines)")
    return 0 if exact == pairs else 1


def _cmd_lut_report(args) -> int:
    from . import report
    report.write_lut_table(sys.stdout)
    if args.plot:
        report.save_lut_chart(args.plot)
        print(f"figure {args.plot}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfqat", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("inspect-format", help="print a format's range and value grid")
    s.add_argument("format")
    s.add_argument("--bias", type=int, default=None)
    s.add_argument("--plot", default=None, help="write a value-grid figure (PNG)")
    s.set_defaults(fn=_cmd_inspect_format)

    s = sub.add_parser("train", help="full-precision training")
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=_cmd_train)

    s = sub.add_parser("qat-finetune", help="quantization-aware fine-tuning")
    s.add_argument("--config", default=None)
    s.add_argument("--pretrained", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=_cmd_qat_finetune)

    s = sub.add_parser("calibrate", help="warm-up calibration of exponent biases")
    s.add_argument("--config", default=None)
    s.add_argument("--pretrained", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_calibrate)

    s = sub.add_parser("eval", help="evaluate a checkpoint on its test set")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", default=None, help="directory for report figures")
    s.set_defaults(fn=_cmd_eval)

    s = sub.add_parser("export", help="write the packed quantized export")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_export)

    s = sub.add_parser("hwsim", help="exhaustive multiplier verification")
    s.add_argument("--format", required=True)
    s.add_argument("--bias", type=int, default=None)
    s.add_argument("--vectors", default=None, help="write testbench stimulus lines")
    s.set_defaults(fn=_cmd_hwsim)

    s = sub.add_parser("lut-report", help="print the multiplier LUT table")
    s.add_argument("--plot", default=None, help="write the LUT bar chart (PNG)")
    s.set_defaults(fn=_cmd_lut_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
