"""Command-line entry point: ``segrecon <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import STEP_RULES, ReconConfig
from .experiment import SpecError, load_spec, run_experiment
from .geometry import Geometry, forward_project
from .metrics import snr_db, spectrum_magnitude
from .regularizers import KINDS, RegularizerParams
from .simulate import NoiseSpec, PhantomSpec, load_grayscale, make_phantom, save_image, save_raw, simulate_lowdose
from .solver import reconstruct

log = logging.getLogger("segrecon")


class CliError(Exception):
    pass


def _angle_range(text: str) -> tuple[float, float]:
    try:
        start, stop = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected START:STOP, got {text!r}") from None
    if not start < stop:
        raise argparse.ArgumentTypeError("angle range needs START < STOP")
    return start, stop


def _on_off(text: str) -> bool:
    t = text.lower()
    if t in ("on", "true", "1", "yes"):
        return True
    if t in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def _add_geometry_args(p):
    p.add_argument("--views", type=int, help="number of equally spaced views")
    p.add_argument("--angles", type=_angle_range, metavar="START:STOP",
                   help="angular range in degrees; one view per degree unless --views is given")
    p.add_argument("--size", type=int, help="image side length in pixels")
    p.add_argument("--pixel-pitch", type=float, help="pixel size (default: 1/size, a unit field of view)")
    p.add_argument("--detectors", type=int, help="detector bins per view")


def _geometry_from(args, size: int, meta: dict | None = None) -> Geometry:
    meta = meta or {}
    pitch = args.pixel_pitch
    if pitch is None:
        pitch = float(meta["pixel_pitch"]) if "pixel_pitch" in meta else 1.0 / size
    detectors = args.detectors
    if detectors is None and "detectors" in meta:
        detectors = int(meta["detectors"])
    kw = dict(detector_count=detectors, pixel_pitch=pitch, detector_pitch=pitch)
    if args.views is None and args.angles is None:
        if "angles" not in meta:
            raise CliError("no geometry: pass --views and/or --angles")
        angles = tuple(float(a) for a in meta["angles"].split(","))
        return Geometry(size, angles, **kw)
    start, stop = args.angles if args.angles else (0.0, 180.0)
    if args.views is None:
        return Geometry.limited_angle(size, start, stop, **kw)
    return Geometry.uniform(size, args.views, start, stop, **kw)


def _geometry_meta(geom: Geometry) -> dict:
    return {
        "image_size": geom.image_size,
        "detectors": geom.detector_count,
        "pixel_pitch": repr(geom.pixel_pitch),
        "angles": ",".join(repr(float(a)) for a in geom.angles),
    }


def _load(path):
    try:
        return load_grayscale(path)
    except FileNotFoundError:
        raise CliError(f"no such file: {path}") from None


# -- commands ----------------------------------------------------------------------


def cmd_phantom(args):
    spec = PhantomSpec(args.kind, args.size, radius=args.radius, modified=args.modified)
    save_image(args.output, make_phantom(spec))


def cmd_project(args):
    img = _load(args.image).data
    if img.shape[0] != img.shape[1]:
        raise CliError("image must be square")
    geom = _geometry_from(args, img.shape[0])
    save_raw(args.output, forward_project(img, geom), **_geometry_meta(geom))


def cmd_noise(args):
    src = _load(args.sinogram)
    extra = {k: v for k, v in src.meta.items() if k in ("image_size", "detectors", "pixel_pitch", "angles")}
    noisy = simulate_lowdose(src.data, NoiseSpec(args.i0, args.seed))
    save_raw(args.output, noisy, i0=repr(args.i0), **extra)


def _recon_config(args) -> ReconConfig:
    reg = RegularizerParams(args.reg, a=args.a, b=args.b, epsilon=args.epsilon, p=args.p, q=args.q, c=args.c)
    n_iter = args.iters
    n_stop = args.n_stop if args.n_stop is not None else min(800, n_iter)
    return ReconConfig(
        alpha=args.alpha,
        beta=args.beta,
        n_g=args.n_g,
        n_c=args.n_c,
        n_stop=n_stop,
        n_iter=n_iter,
        regularizer=reg,
        global_enabled=args.global_on,
        rng_seed=args.seed,
        global_beta=args.global_beta,
        step_rule=args.step_rule,
        fixed_groups=args.groups,
        connectivity=args.connectivity,
        refine=not args.no_refine,
        tv_step_scale=args.tv_step_scale,
    )


def cmd_recon(args):
    src = _load(args.sinogram)
    size = args.size or (int(src.meta["image_size"]) if "image_size" in src.meta else None)
    if size is None:
        raise CliError("image size unknown: pass --size")
    geom = _geometry_from(args, size, src.meta)
    if src.data.shape != geom.sinogram_shape:
        raise CliError(f"sinogram is {src.data.shape}, geometry expects {geom.sinogram_shape}")
    cfg = _recon_config(args)
    truth = _load(args.truth).data if args.truth else None
    img, records = reconstruct(src.data, geom, cfg, ground_truth=truth)
    save_image(args.output, img)
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write("iteration,residual_norm,update_magnitude,snr_db,n_groups\n")
            for r in records:
                fh.write(f"{r.iteration},{r.residual_norm!r},{r.update_magnitude!r},"
                         f"{'' if r.snr_db is None else repr(r.snr_db)},{'' if r.n_groups is None else r.n_groups}\n")
    if truth is not None:
        print(f"snr_db {snr_db(truth, img):.4f}")


def cmd_experiment(args):
    spec = load_spec(args.spec)
    if args.output:
        from dataclasses import replace

        spec = replace(spec, output=args.output)
    rows = run_experiment(spec)
    failed = [r for r in rows if r.error]
    for r in rows:
        status = f"{r.snr_db:.3f} dB" if r.error is None else f"error: {r.error}"
        print(f"{r.variant:>16} {r.param:>10}  {status}")
    print(f"wrote {Path(spec.output) / 'metrics.csv'}")
    return 1 if failed and len(failed) == len(rows) else 0


def cmd_spectrum(args):
    img = _load(args.image).data
    save_image(args.output, spectrum_magnitude(img))


def cmd_snr(args):
    ref = _load(args.reference).data
    est = _load(args.estimate).data
    if ref.shape != est.shape:
        raise CliError(f"shape mismatch: {ref.shape} vs {est.shape}")
    print(round(snr_db(ref, est), 4))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segrecon", description="Iterative CT reconstruction with gray-level segmentation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="write a phantom image")
    p.add_argument("--kind", default="shepp_logan", choices=("shepp_logan", "disk"))
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--radius", type=float, default=0.0, help="disk radius in pixels")
    p.add_argument("--modified", action="store_true", help="use the high-contrast Shepp-Logan densities")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("project", help="forward-project an image to a sinogram")
    p.add_argument("image")
    _add_geometry_args(p)
    p.add_argument("-o", "--output", required=True, help=".raw sinogram")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("noise", help="add Poisson counting noise to a sinogram")
    p.add_argument("sinogram")
    p.add_argument("--i0", type=float, required=True, help="blank-scan photon count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_noise)

    d = ReconConfig()
    r = RegularizerParams()
    p = sub.add_parser("recon", help="reconstruct an image from a sinogram")
    p.add_argument("sinogram")
    _add_geometry_args(p)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--reg", default="tv", choices=KINDS)
    p.add_argument("--global", dest="global_on", type=_on_off, default=True, metavar="on|off")
    p.add_argument("--iters", type=int, default=d.n_iter)
    p.add_argument("--alpha", type=float, default=d.alpha)
    p.add_argument("--beta", type=float, default=d.beta)
    p.add_argument("--n-g", type=int, default=d.n_g)
    p.add_argument("--n-c", type=int, default=d.n_c)
    p.add_argument("--n-stop", type=int, help="default: min(800, iters)")
    p.add_argument("--global-beta", type=float)
    p.add_argument("--groups", type=int, help="fix the group count instead of growing it")
    p.add_argument("--step-rule", default=d.step_rule, choices=STEP_RULES)
    p.add_argument("--connectivity", type=int, default=d.connectivity, choices=(4, 8))
    p.add_argument("--no-refine", action="store_true", help="keep boundary pixels grouped")
    p.add_argument("--tv-step-scale", type=float)
    p.add_argument("--seed", type=int, default=d.rng_seed)
    for name in ("a", "b", "epsilon", "p", "q", "c"):
        p.add_argument(f"--{name}", type=float, default=getattr(r, name))
    p.add_argument("--truth", help="ground-truth image; prints the final SNR")
    p.add_argument("--trace", help="write per-iteration records to this CSV")
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("experiment", help="run an experiment spec file")
    p.add_argument("spec")
    p.add_argument("-o", "--output", help="override the spec's output directory")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("spectrum", help="log-magnitude Fourier spectrum of an image")
    p.add_argument("image")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("snr", help="SNR in dB of ESTIMATE against REFERENCE")
    p.add_argument("reference")
    p.add_argument("estimate")
    p.set_defaults(func=cmd_snr)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except (CliError, SpecError, ValueError, OSError) as exc:
        print(f"segrecon {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
