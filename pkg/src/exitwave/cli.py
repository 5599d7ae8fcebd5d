"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import DataError

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="master random seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--config", help="dataset/simulation config JSON")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="exitwave", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="simulate one exit wave from a CIF")
    p.add_argument("cif")
    p.add_argument("--voltage", type=float, choices=(80.0, 200.0, 300.0))
    p.add_argument("--depth", type=float, help="nm")
    p.add_argument("--width", type=float, help="nm")
    p.add_argument("--zone", type=int, nargs=3, metavar=("H", "K", "L"))
    p.add_argument("--tilt", type=float, nargs=2, metavar=("TX", "TY"), help="degrees")
    p.add_argument("--kirkland-n", type=int, choices=(1, 3))
    p.add_argument("--grid-size", type=int)
    p.add_argument("--crop-size", type=int)

    p = sub.add_parser("dataset", parents=[common], help="generate a dataset from a config")

    p = sub.add_parser("hologram", parents=[common], help="synthesize an off-axis hologram")
    p.add_argument("wave")
    p.add_argument("--carrier", type=float, nargs=2, required=True, metavar=("QX", "QY"), help="nm^-1")
    p.add_argument("--mu", type=float, default=1.0, help="fringe contrast")

    p = sub.add_parser("focal-series", parents=[common], help="synthesize a focal series")
    p.add_argument("wave")
    p.add_argument("--defocus-min", type=float, default=0.0, help="nm")
    p.add_argument("--defocus-max", type=float, default=200.0, help="nm")
    p.add_argument("--count", type=int, default=14)
    p.add_argument("--voltage", type=float, default=300.0, help="kV")

    p = sub.add_parser("reconstruct", parents=[common], help="recover an exit wave")
    p.add_argument("mode", choices=("sideband", "focal-series"))
    p.add_argument("input", help="hologram TIFF or focal-series directory")
    p.add_argument("--carrier", type=float, nargs=2, metavar=("QX", "QY"))
    p.add_argument("--crop-radius", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--pixel", type=float, help="pixel size in nm")
    p.add_argument("--iterations", type=int, default=200)

    p = sub.add_parser("baseline", parents=[common], help="random-phase error baseline")
    p.add_argument("--samples", type=int, default=10**7)
    return parser


def _require_out(args, parser):
    if not args.out:
        parser.error(f"{args.command} requires --out")
    return Path(args.out)


def cmd_simulate(args, parser):
    from .dataset import DatasetConfig, generate_record, sample_params, write_wave

    out = _require_out(args, parser)
    config = DatasetConfig.load(args.config) if args.config else DatasetConfig()
    if args.grid_size:
        config.grid_size = args.grid_size
    if args.crop_size:
        config.crop_size = args.crop_size
    if args.kirkland_n:
        config.kirkland_n = args.kirkland_n
    config.__post_init__()
    cif = Path(args.cif)
    if not cif.is_file():
        raise DataError(f"CIF not found: {cif}")
    params = sample_params(config, args.seed)
    overrides = {
        "voltage": args.voltage,
        "depth": args.depth,
        "width": args.width,
        "zone_axis": tuple(args.zone) if args.zone else None,
        "tilt": tuple(args.tilt) if args.tilt else None,
    }
    d = params.to_dict()
    d.update({k: v for k, v in overrides.items() if v is not None})
    params = type(params).from_dict(d)
    record = generate_record(cif, params, config)
    write_wave(out, record.wavefunction, record.meta())
    print(f"wrote {out}", file=sys.stderr)


def cmd_dataset(args, parser):
    from .dataset import DatasetConfig, generate_dataset

    if not args.config:
        parser.error("dataset requires --config")
    out = _require_out(args, parser)
    manifest = generate_dataset(DatasetConfig.load(args.config), out, args.seed, args.threads)
    print(json.dumps(manifest["counts"], sort_keys=True))
    if manifest["leakage"]:
        raise DataError(f"materials leak across splits: {manifest['leakage']}")


def _save_tiff(path: Path, image: np.ndarray) -> None:
    from PIL import Image

    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(image, dtype=np.float32), mode="F").save(path, format="TIFF")


def cmd_hologram(args, parser):
    from .dataset import read_wave
    from .holography import HologramParams, synthesize_hologram

    out = _require_out(args, parser)
    psi = read_wave(args.wave)
    params = HologramParams(carrier=tuple(args.carrier), mu_coh=args.mu)
    _save_tiff(out, synthesize_hologram(psi, params))
    meta = {"pixel_nm": psi.grid.pixel_size, "carrier_nm_inv": list(args.carrier), "mu": params.mu}
    out.with_name(out.stem + ".meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    print(f"wrote {out}", file=sys.stderr)


def cmd_focal_series(args, parser):
    from .dataset import read_wave
    from .holography import generate_focal_series, quadratic_defocus_series
    from .optics import CTFParams
    from .potential import PhysicalSetup

    out = _require_out(args, parser)
    psi = read_wave(args.wave)
    defoci = quadratic_defocus_series(args.defocus_min, args.defocus_max, args.count)
    ctf_base = CTFParams(setup=PhysicalSetup.from_voltage(args.voltage))
    generate_focal_series(psi, ctf_base, defoci).save(out)
    print(f"wrote {len(defoci)} images to {out}", file=sys.stderr)


def cmd_reconstruct(args, parser):
    from .dataset import write_wave
    from .grid import Grid
    from .holography import FocalSeries, reconstruct_focal_series, reconstruct_sideband

    out = _require_out(args, parser)
    src = Path(args.input)
    if args.mode == "sideband":
        from PIL import Image

        if not src.is_file():
            raise DataError(f"hologram not found: {src}")
        meta_file = src.with_name(src.stem + ".meta.json")
        meta = json.loads(meta_file.read_text()) if meta_file.exists() else {}
        carrier = args.carrier or meta.get("carrier_nm_inv")
        pixel = args.pixel or meta.get("pixel_nm")
        mu = args.mu if args.mu is not None else meta.get("mu", 1.0)
        if carrier is None or pixel is None:
            parser.error("sideband reconstruction needs --carrier and --pixel (or a .meta.json sidecar)")
        holo = np.asarray(Image.open(src), dtype=np.float64)
        grid = Grid(*holo.shape, pixel, strict=False)
        wave = reconstruct_sideband(holo, grid, tuple(carrier), args.crop_radius, mu)
    else:
        if not (src / "series.json").is_file():
            raise DataError(f"no series.json in {src}")
        wave = reconstruct_focal_series(FocalSeries.load(src), args.iterations)
    write_wave(out, wave, {"source": str(src), "mode": args.mode})
    print(f"wrote {out}", file=sys.stderr)


def cmd_baseline(args, parser):
    from .reconmath import random_phase_baseline_moments

    m = random_phase_baseline_moments(args.samples, args.seed)
    print(f"analytic mean        {m.mean:.4f}")
    print(f"analytic mean square {m.mean_square:.4f}")
    print(f"analytic std         {m.std:.4f}")
    if m.samples:
        print(f"monte-carlo samples  {m.samples}")
        print(f"monte-carlo mean     {m.mc_mean:.6f} +/- {m.mc_stderr:.6f}")
        print(f"monte-carlo mean sq  {m.mc_mean_square:.6f}")
        print(f"monte-carlo std      {m.mc_std:.6f}")


COMMANDS = {
    "simulate": cmd_simulate,
    "dataset": cmd_dataset,
    "hologram": cmd_hologram,
    "focal-series": cmd_focal_series,
    "reconstruct": cmd_reconstruct,
    "baseline": cmd_baseline,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args, parser)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (DataError, OSError) as exc:
        print(f"exitwave {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
