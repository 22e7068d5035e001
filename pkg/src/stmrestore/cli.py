"""Command-line front end: preprocess, mark-scars, learn, denoise, synth, metrics.

Every command writes ``<output>.manifest`` (key=value) holding the resolved
parameters, diagnostics and an ``argv`` line that replays the run.
Exit codes: 0 success, 1 data or numerical failure, 2 usage error.
"""
import argparse
import logging
import math
import os
import platform
import shlex
import sys
import time

import numpy as np

from . import __version__
from . import io as sio
from .artifacts import ScarParams, mark_scars, merge_masks
from .coding import CodingParams, restore
from .core import extract_mask_patches, extract_patches, full_mask
from .dictlearn import LearnConfig, fit_online
from .errors import RestorationError
from .preprocess import DEFAULT_GAMMA, DeltaParams, compute_delta, estimate_sigma_mad, preprocess
from .synthbench import DegradeSpec, LatticeSpec, degrade, generate_lattice, masked_rmse, psnr

log = logging.getLogger("stmrestore")

DEFAULT_EDGE = 10
DEFAULT_ATOMS = 64
DEFAULT_LAMBDA = 0.11
DEFAULT_MAX_ATOMS = 4


class UsageError(Exception):
    pass


def _existing(path):
    if path is not None and not os.path.isfile(path):
        raise UsageError(f"input file not found: {path}")
    return path


def _load_mask(path, shape):
    if path is None:
        return None
    return sio.read_mask(_existing(path), shape)


def _manifest(args, path, extra):
    entries = {
        "subcommand": args.command,
        "version": __version__,
        "python": platform.python_version(),
    }
    for key, value in sorted(vars(args).items()):
        if key in ("command", "func", "verbose"):
            continue
        entries[f"param.{key}"] = value
    entries.update(extra)
    entries["argv"] = shlex.join(_replay_argv(args))
    sio.write_manifest(entries, path)


def _replay_argv(args):
    """Fully explicit command line reproducing ``args``."""
    sub = build_parser().subcommands[args.command]
    argv = [args.command]
    for action in sub._actions:
        if isinstance(action, argparse._HelpAction):
            continue
        value = getattr(args, action.dest, None)
        if not action.option_strings:
            argv.append(str(value))
        elif isinstance(action, argparse._StoreTrueAction):
            if value:
                argv.append(action.option_strings[-1])
        elif value is not None:
            argv += [action.option_strings[-1], str(value)]
    return argv


def cmd_preprocess(args):
    g, meta = sio.read_grid(_existing(args.input))
    mask = _load_mask(args.mask, g.shape)
    res = preprocess(g, mask, lo=args.lo, hi=args.hi, lines=args.lines)
    m = args.patch_edge ** 2
    delta = compute_delta(DeltaParams(m, res.sigma.sigma, args.gamma))
    sio.write_grid(res.grid, args.output, meta)
    if args.out_mask:
        sio.write_mask(res.mask, args.out_mask, {"source": "quantile", "lo": args.lo, "hi": args.hi})
    print(f"sigma={res.sigma.sigma!r}")
    print(f"suggested_delta={delta!r}")
    return {
        "sigma": repr(res.sigma.sigma), "delta": repr(delta),
        "plane": " ".join(repr(v) for v in res.plane),
        "pixels_masked": int((~res.mask).sum()), "quantile_masked": res.quantile_masked,
    }


def cmd_mark_scars(args):
    g, _ = sio.read_grid(_existing(args.input))
    base = _load_mask(args.mask, g.shape)
    sigma = args.sigma
    if sigma is None:
        sigma = estimate_sigma_mad(g, base).sigma
    params = ScarParams(args.min_len, args.max_width, args.threshold)
    mask = mark_scars(g, sigma, params)
    scars = int((~mask).sum())
    if base is not None:
        mask = merge_masks(mask, base)
    sio.write_mask(mask, args.output, {
        "detector": "mark-scars", "sigma": repr(sigma), "min_len": args.min_len,
        "max_width": args.max_width, "threshold": args.threshold})
    print(f"scar_pixels={scars}")
    return {"sigma": repr(sigma), "scar_pixels": scars, "pixels_masked": int((~mask).sum())}


def cmd_learn(args):
    g, _ = sio.read_grid(_existing(args.input))
    mask = _load_mask(args.mask, g.shape)
    cfg = LearnConfig(lam=args.lam, atom_count=args.atoms, batch_size=args.batch_size,
                      epochs=args.epochs, seed=args.seed, tol=args.tol)
    patches = extract_patches(g, args.patch_edge)
    mpatches = None if mask is None else extract_mask_patches(mask, args.patch_edge)
    res = fit_online(patches, mpatches, cfg)
    sio.write_dictionary(res.dictionary, args.output)
    print(f"clean_patches={res.clean_patches} discarded={res.discarded_patches}")
    return {
        "patches_clean": res.clean_patches, "patches_discarded": res.discarded_patches,
        "atoms_reseeded": res.state.reseeded, "batches": res.state.batches_seen,
        "validation_objective_init": repr(res.validation_objective_init),
        "validation_objective_final": repr(res.validation_objective_final),
    }


def _resolve_delta(args, g, mask, m):
    """Explicit flag, then a manifest's delta, then sigma^2 * chi2 quantile."""
    if args.delta is not None:
        return args.delta, "flag", None
    if args.from_manifest:
        entries = sio.read_manifest(_existing(args.from_manifest))
        if "delta" in entries:
            return float(entries["delta"]), "manifest", None
        log.warning("manifest %s has no delta entry; deriving it", args.from_manifest)
    sigma = estimate_sigma_mad(g, mask).sigma
    return compute_delta(DeltaParams(m, sigma, args.gamma)), "auto", sigma


def cmd_denoise(args):
    g, meta = sio.read_grid(_existing(args.input))
    mask = _load_mask(args.mask, g.shape)
    d = sio.read_dictionary(_existing(args.dictionary))
    delta, source, sigma = _resolve_delta(args, g, mask, d.shape[0])
    params = CodingParams(delta, args.max_atoms, args.delta_scale_valid)
    res = restore(g, mask, d, params, threads=args.threads)
    sio.write_grid(res.image, args.output, meta)
    print(f"delta={delta!r} ({source})")
    out = {"delta": repr(delta), "delta_source": source,
           "patches_uninformative": res.coded.uninformative_count,
           "pixels_uncovered": res.uncovered_pixels,
           "pixels_masked": 0 if mask is None else int((~mask).sum()),
           "mean_sparsity": repr(res.mean_sparsity)}
    if sigma is not None:
        out["sigma"] = repr(sigma)
    return out


def cmd_synth(args):
    lattice = LatticeSpec(args.rows, args.cols, args.period_r, args.period_c, args.motif,
                          args.amplitude, args.width, args.dimer_separation, args.brightness_alt)
    spec = DegradeSpec(args.noise_sigma, args.scars, (args.scar_len_min, args.scar_len_max),
                       (args.scar_width_min, args.scar_width_max), args.seed)
    clean = generate_lattice(lattice)
    noisy, truth = degrade(clean, spec)
    sio.write_grid(noisy, args.output, {"generator": "synth", "seed": args.seed})
    if args.out_clean:
        sio.write_grid(clean, args.out_clean, {"generator": "synth"})
    if args.out_mask:
        sio.write_mask(truth, args.out_mask, {"source": "synth-ground-truth", "seed": args.seed})
    return {"scar_pixels": int((~truth).sum()), "input_psnr": repr(psnr(clean, noisy))}


def cmd_metrics(args):
    ref, _ = sio.read_grid(_existing(args.reference))
    test, _ = sio.read_grid(_existing(args.test))
    mask = _load_mask(args.mask, ref.shape)
    value = psnr(ref, test, None if args.over == "outlier" else mask)
    result = {"psnr": repr(value) if math.isfinite(value) else "exact"}
    if mask is None:
        result["rmse"] = repr(masked_rmse(ref, test, full_mask(ref.shape)))
    else:
        result["rmse"] = repr(masked_rmse(ref, test, mask, args.over))
    for k, v in result.items():
        print(f"{k}={v}")
    return result


def build_parser():
    parser = argparse.ArgumentParser(
        prog="stmrestore", description="Sparse-coding denoising and inpainting of 2-D scan grids.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")
    parser.subcommands = sub.choices

    p = sub.add_parser("preprocess", help="plane leveling, quantile outliers, line leveling")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--mask")
    p.add_argument("--out-mask")
    p.add_argument("--lo", type=float, default=0.01)
    p.add_argument("--hi", type=float, default=0.99)
    p.add_argument("--lines", choices=("rows", "cols"), default="rows")
    p.add_argument("--patch-edge", type=int, default=DEFAULT_EDGE)
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("mark-scars", help="detect scan-line scars into a mask")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="output mask (P4 bitmap)")
    p.add_argument("--mask", help="existing mask to merge with")
    p.add_argument("--sigma", type=float, help="noise level; MAD estimate when omitted")
    p.add_argument("--min-len", type=int, default=4)
    p.add_argument("--max-width", type=int, default=2)
    p.add_argument("--threshold", type=float, default=3.0)
    p.set_defaults(func=cmd_mark_scars)

    p = sub.add_parser("learn", help="learn a dictionary from outlier-free patches")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="output dictionary file")
    p.add_argument("--mask")
    p.add_argument("--patch-edge", type=int, default=DEFAULT_EDGE)
    p.add_argument("--atoms", type=int, default=DEFAULT_ATOMS)
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("denoise", help="masked OMP coding and patch averaging")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--dict", dest="dictionary", required=True)
    p.add_argument("--mask")
    p.add_argument("--delta", type=float)
    p.add_argument("--from-manifest", help="take delta from a preprocess/denoise manifest")
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.add_argument("--max-atoms", type=int, default=DEFAULT_MAX_ATOMS)
    p.add_argument("--delta-scale-valid", action="store_true",
                   help="scale delta by the fraction of valid pixels in each patch")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("synth", help="generate a degraded synthetic lattice")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--out-clean")
    p.add_argument("--out-mask")
    p.add_argument("--rows", type=int, default=128)
    p.add_argument("--cols", type=int, default=128)
    p.add_argument("--period-r", type=float, default=12.0)
    p.add_argument("--period-c", type=float, default=12.0)
    p.add_argument("--motif", choices=("gaussian-bump", "dimer"), default="dimer")
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--width", type=float, default=1.8)
    p.add_argument("--dimer-separation", type=float, default=0.4)
    p.add_argument("--brightness-alt", type=float, default=0.6)
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.add_argument("--scars", type=int, default=0)
    p.add_argument("--scar-len-min", type=int, default=10)
    p.add_argument("--scar-len-max", type=int, default=30)
    p.add_argument("--scar-width-min", type=int, default=1)
    p.add_argument("--scar-width-max", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("metrics", help="PSNR and RMSE of a result against a reference")
    p.add_argument("reference")
    p.add_argument("test")
    p.add_argument("--mask")
    p.add_argument("--over", choices=("valid", "outlier"), default="valid")
    p.add_argument("--manifest", help="where to write the manifest (default: <test>.metrics.manifest)")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_help()
        return 0
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    if args.command is None:
        parser.print_help()
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        extra = args.func(args)
    except UsageError as exc:
        print(f"stmrestore: error: {exc}", file=sys.stderr)
        return 2
    except (RestorationError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"stmrestore: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    extra["elapsed_seconds"] = f"{time.perf_counter() - started:.3f}"
    if args.command == "metrics":
        manifest = args.manifest or str(args.test) + ".metrics.manifest"
    else:
        manifest = str(args.output) + ".manifest"
    _manifest(args, manifest, extra)
    return 0


if __name__ == "__main__":
    sys.exit(main())
