"""Command-line interface: ``equiburst {simulate,align,reconstruct,equiv,sweep,selftest}``.

Exit codes: 0 success, 1 alignment did not converge, 2 usage error,
3 I/O or format error, 4 selftest failure.
"""

import argparse
import math
import os
import sys

from ._validation import FormatError, InvalidArgument
from .align import AlignmentResult, SearchConfig, align_burst
from .burst import packed_offsets, read_burst, synthesize_burst, write_burst
from .estimators import BurstSuperResolver
from .io import parse_keyvalue_line, read_keyvalue, read_pfm, write_pfm
from .meter import SweepConfig, run_sweep, sweep_csv
from .reconstruct import FEATURE_MODES, l1_fidelity, psnr, reconstruct, ssim
from .transforms import AffineTransform

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_SELFTEST = 4


class UsageError(Exception):
    pass


def _out_path(args, name):
    return os.path.join(args.out_dir, name)


def _resolved(args):
    skip = {"func", "command", "threads", "out_dir"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _config_lines(args):
    return [f"# config {k}={v}" for k, v in _resolved(args).items()]


def cmd_simulate(args):
    if args.frames < 2:
        raise UsageError("--frames must be at least 2")
    hr = read_pfm(args.input)
    if hr.C != 3:
        raise UsageError("the input image must have 3 channels")
    burst = synthesize_burst(
        hr, args.frames, args.scale, math.radians(args.theta_max), args.shift_max,
        args.sigma, args.seed, mosaic=not args.no_mosaic,
    )
    extra = {f"config.{k}": v for k, v in _resolved(args).items()}
    write_burst(args.out_dir, burst, extra)
    print(f"wrote {burst.B} frames to {args.out_dir}")
    return EXIT_OK


def _search(args):
    return SearchConfig(
        theta_max=math.radians(args.theta_max), theta_step=math.radians(args.theta_step),
        shift_max=args.shift_max, max_evals=args.max_evals, tol=args.tol,
    )


def cmd_align(args):
    burst = read_burst(args.burst)
    frames = burst.packed() if burst.mosaic else list(burst.frames)
    offsets = packed_offsets(frames[0].h) if burst.mosaic else None
    result = align_burst(frames, _search(args), offsets)
    lines = []
    for j, (tf, r, conv) in enumerate(zip(result.transforms, result.residuals, result.converged)):
        lines.append(f"frame={j} {tf.to_text()} residual={r!r} converged={int(conv)}")
    os.makedirs(args.out_dir, exist_ok=True)
    path = _out_path(args, args.output)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines + _config_lines(args)) + "\n")
    print(f"wrote {path}")
    return EXIT_OK if result.all_converged else EXIT_NOT_CONVERGED


def read_alignment(path):
    transforms, residuals = [], []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = parse_keyvalue_line(line, lineno)
            if "frame" not in fields or "residual" not in fields:
                raise FormatError(f"{path}: line {lineno} lacks frame/residual", line=lineno)
            try:
                if int(fields["frame"]) != len(transforms):
                    raise FormatError(f"{path}: line {lineno} out of order", line=lineno)
                residuals.append(float(fields["residual"]))
            except ValueError:
                raise FormatError(f"{path}: bad number on line {lineno}", line=lineno) from None
            transforms.append(AffineTransform.from_fields(fields, lineno))
    return transforms, residuals


def cmd_reconstruct(args):
    burst = read_burst(args.burst)
    if args.scale is not None and args.scale != burst.s:
        raise UsageError(f"--scale {args.scale} does not match the burst scale {burst.s}")
    if args.use_ground_truth:
        transforms, residuals = list(burst.transforms), [0.0] * burst.B
    elif args.alignment:
        transforms, residuals = read_alignment(args.alignment)
        if len(transforms) != burst.B:
            raise UsageError("alignment manifest and burst have different frame counts")
    else:
        frames = burst.packed()
        result = align_burst(frames, SearchConfig(), packed_offsets(frames[0].h))
        transforms, residuals = list(result.transforms), list(result.residuals)
    fused = None
    if args.features == "equivariant":
        est = BurstSuperResolver(features="equivariant", use_ground_truth=True, seed=args.seed)
        est.fit(burst)
        n = len(transforms)
        est.alignment_ = AlignmentResult(tuple(transforms), tuple(residuals), (0,) * n, (True,) * n)
        fused = est.fused_features(burst)
    out = reconstruct(
        burst, fused=fused, transforms=transforms, residuals=residuals,
        mode=args.features, lam=args.lam, seed=args.seed,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    path = _out_path(args, args.output)
    write_pfm(path, out)
    print(f"wrote {path}")
    if args.gt:
        gt = read_pfm(args.gt)
        saved = read_pfm(path)
        with open(_out_path(args, args.metrics), "w", encoding="ascii", newline="\n") as fh:
            fh.write("psnr,ssim,l1\n")
            fh.write(f"{psnr(saved, gt)!r},{ssim(saved, gt)!r},{l1_fidelity(saved, gt)!r}\n")
    return EXIT_OK


def _load_sweep_config(path):
    items = read_keyvalue(path)
    try:
        return SweepConfig.from_mapping(items)
    except InvalidArgument as exc:
        raise UsageError(str(exc)) from None
    except ValueError as exc:
        raise UsageError(f"bad config value: {exc}") from None


def _write_sweep(args, cfg):
    result = run_sweep(cfg)
    text = sweep_csv(result, cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    path = _out_path(args, args.output)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(text)
    for line in text.splitlines():
        if line.startswith("# slope"):
            print(line)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_sweep(args):
    return _write_sweep(args, _load_sweep_config(args.config))


def cmd_equiv(args):
    if args.config:
        items = read_keyvalue(args.config)
    else:
        items = {}
    for key in ("h", "p", "t", "theta", "b", "n", "activation", "target", "reference", "max_points"):
        value = getattr(args, key)
        if value is not None:
            items[key] = str(value)
    items.setdefault("h", "1/64")
    try:
        cfg = SweepConfig.from_mapping(items)
    except InvalidArgument as exc:
        raise UsageError(str(exc)) from None
    return _write_sweep(args, cfg)


def cmd_selftest(args):
    from .selftest import run_selftest

    ok = run_selftest()
    return EXIT_OK if ok else EXIT_SELFTEST


def build_parser():
    parser = argparse.ArgumentParser(prog="equiburst", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None, help="worker cap (sets EQUIBURST_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out-dir", default=".", help="directory for all outputs")

    p = sub.add_parser("simulate", help="synthesise a raw burst from an RGB PFM")
    common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--frames", type=int, default=14)
    p.add_argument("--scale", type=int, default=2, choices=(1, 2, 3, 4))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--theta-max", type=float, default=5.0, help="degrees")
    p.add_argument("--shift-max", type=float, default=3.0, help="frame pixels")
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--no-mosaic", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("align", help="estimate per-frame transforms of a burst")
    common(p)
    p.add_argument("--burst", required=True)
    p.add_argument("--output", default="alignment.txt")
    p.add_argument("--theta-max", type=float, default=10.0, help="degrees")
    p.add_argument("--theta-step", type=float, default=0.5, help="degrees")
    p.add_argument("--shift-max", type=int, default=4, help="pixels")
    p.add_argument("--max-evals", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("reconstruct", help="super-resolve a burst")
    common(p)
    p.add_argument("--burst", required=True)
    p.add_argument("--alignment", default=None)
    p.add_argument("--use-ground-truth", action="store_true")
    p.add_argument("--features", default="shift-and-add", choices=FEATURE_MODES)
    p.add_argument("--scale", type=int, default=None)
    p.add_argument("--lam", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gt", default=None, help="ground-truth RGB PFM for metrics")
    p.add_argument("--output", default="sr.pfm")
    p.add_argument("--metrics", default="metrics.csv")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("equiv", help="measure equivariance errors at one or more grid points")
    common(p)
    p.add_argument("--config", default=None)
    p.add_argument("--h", default=None)
    p.add_argument("--p", default=None)
    p.add_argument("--t", default=None)
    p.add_argument("--theta", default=None)
    p.add_argument("--b", default=None, help="pixels, e.g. 1,-1")
    p.add_argument("--n", default=None)
    p.add_argument("--activation", default=None)
    p.add_argument("--target", default=None, help="output or features")
    p.add_argument("--reference", default=None, help="warp or exact")
    p.add_argument("--max-points", dest="max_points", default=None)
    p.add_argument("--output", default="equiv.csv")
    p.set_defaults(func=cmd_equiv)

    p = sub.add_parser("sweep", help="run a parameter sweep from a key=value config")
    common(p)
    p.add_argument("--config", required=True)
    p.add_argument("--output", default="sweep.csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("selftest", help="run the built-in property checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        os.environ["EQUIBURST_THREADS"] = str(max(1, args.threads))
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"equiburst: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"equiburst: format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"equiburst: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvalidArgument as exc:
        print(f"equiburst: invalid argument: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
