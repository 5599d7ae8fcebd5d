"""Off-axis holograms and focal series: synthesis and reconstruction."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadCount,
    CarrierOffLattice,
    CarrierOutsideBand,
    EmptySeries,
    SidebandOverlap,
)
from .grid import Grid, fft2, ifft2
from .multislice import ComplexField2D
from .optics import CTFParams, ctf


@dataclass(frozen=True)
class HologramParams:
    carrier: tuple[float, float]  # (q_x, q_y) in nm^-1
    mu_coh: float = 1.0
    mu_inel: float = 1.0
    mu_inst: float = 1.0
    mtf: float = 1.0

    def __post_init__(self):
        for name in ("mu_coh", "mu_inel", "mu_inst", "mtf"):
            if not 0 <= abs(getattr(self, name)) <= 1:
                raise ValueError(f"{name} must have magnitude in [0, 1]")
        if math.hypot(*self.carrier) == 0:
            raise ValueError("carrier frequency must be non-zero")

    @property
    def mu(self) -> float:
        """Fringe contrast |mu_coh| |mu_inel| |mu_inst| MTF."""
        return abs(self.mu_coh) * abs(self.mu_inel) * abs(self.mu_inst) * self.mtf


def _carrier_bins(grid: Grid, carrier) -> tuple[int, int]:
    qx, qy = carrier
    bx = qx * grid.nx * grid.pixel_size
    by = qy * grid.ny * grid.pixel_size
    if abs(bx - round(bx)) > 1e-6 or abs(by - round(by)) > 1e-6:
        raise CarrierOffLattice(
            f"carrier ({qx:g}, {qy:g}) nm^-1 is not on the reciprocal lattice "
            f"(bins {bx:.4f}, {by:.4f})"
        )
    return int(round(bx)), int(round(by))


def synthesize_hologram(psi: ComplexField2D, params: HologramParams) -> np.ndarray:
    """Real-space hologram I = 1 + |psi|^2 + 2 mu Re(psi exp(2 pi i q_c.r)).

    Its Fourier transform is the centreband FT(1 + |psi|^2) plus the two
    sidebands mu FT(psi) shifted to +q_c and mu FT(psi*) shifted to -q_c.
    """
    grid = psi.grid
    _carrier_bins(grid, params.carrier)
    qx, qy = params.carrier
    if math.hypot(qx, qy) > psi.band_limit_fraction * grid.nyquist:
        raise CarrierOutsideBand(f"carrier |q_c|={math.hypot(qx, qy):g} nm^-1 lies outside the band limit")
    y, x = grid.coordinates()
    fringes = np.exp(2j * np.pi * (qx * x + qy * y))
    return 1.0 + np.abs(psi.values) ** 2 + 2 * params.mu * np.real(psi.values * fringes)


def default_crop_radius(carrier) -> float:
    return math.hypot(*carrier) / 3


def reconstruct_sideband(
    hologram: np.ndarray,
    grid: Grid,
    carrier,
    crop_radius: float | None = None,
    mu: float = 1.0,
) -> ComplexField2D:
    """Crop the +q_c sideband, centre it, inverse transform and divide by ``mu``."""
    grid.check(hologram)
    if crop_radius is None:
        crop_radius = default_crop_radius(carrier)
    if crop_radius >= math.hypot(*carrier):
        raise SidebandOverlap(
            f"crop radius {crop_radius:g} nm^-1 reaches the centreband (|q_c| = {math.hypot(*carrier):g})"
        )
    if mu <= 0:
        raise ValueError("fringe contrast must be positive to reconstruct")
    bx, by = _carrier_bins(grid, carrier)
    spectrum = fft2(hologram)
    # bring +q_c to the origin, then keep a disc about it
    centred = np.roll(spectrum, shift=(-by, -bx), axis=(0, 1))
    centred = np.where(grid.k2() <= crop_radius**2, centred, 0.0)
    # np.roll shifts about the array origin; undo the pixel-centre phase of the carrier
    qx, qy = carrier
    centre_phase = np.exp(-2j * np.pi * (qx + qy) * 0.5 * grid.pixel_size)
    return ComplexField2D(ifft2(centred) / mu * centre_phase, grid)


def quadratic_defocus_series(df_min: float, df_max: float, count: int) -> list[float]:
    """df_i = df_min + (df_max - df_min) (i / (count - 1))^2."""
    if count < 2 or int(count) != count:
        raise BadCount(f"a defocus series needs at least 2 members, got {count}")
    return [df_min + (df_max - df_min) * (i / (count - 1)) ** 2 for i in range(count)]


@dataclass(frozen=True)
class FocalSeries:
    images: tuple[np.ndarray, ...]
    defoci: tuple[float, ...]
    ctf_base: CTFParams = field(default_factory=CTFParams)
    pixel_size: float = 1.0

    def __post_init__(self):
        if len(self.images) != len(self.defoci):
            raise ValueError("one defocus value is needed per image")
        d = np.diff(self.defoci)
        if len(d) and not (np.all(d > 0) or np.all(d < 0) or np.all(d == 0)):
            raise ValueError("defocus values must be monotonic")

    @property
    def grid(self) -> Grid:
        ny, nx = self.images[0].shape
        return Grid(ny, nx, self.pixel_size, strict=False)

    def save(self, directory) -> None:
        """Write one 32-bit float TIFF per image plus a ``series.json`` sidecar."""
        from PIL import Image

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        names = []
        for i, image in enumerate(self.images):
            name = f"image_{i:03d}.tif"
            Image.fromarray(np.asarray(image, dtype=np.float32), mode="F").save(directory / name)
            names.append(name)
        meta = {
            "defoci_nm": list(self.defoci),
            "pixel_nm": self.pixel_size,
            "images": names,
            "ctf": self.ctf_base.to_dict(),
        }
        (directory / "series.json").write_text(json.dumps(meta, indent=1, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "FocalSeries":
        from PIL import Image

        directory = Path(directory)
        meta = json.loads((directory / "series.json").read_text())
        images = tuple(
            np.asarray(Image.open(directory / name), dtype=np.float64) for name in meta["images"]
        )
        return cls(
            images=images,
            defoci=tuple(meta["defoci_nm"]),
            ctf_base=CTFParams.from_dict(meta["ctf"]),
            pixel_size=meta["pixel_nm"],
        )


def generate_focal_series(psi: ComplexField2D, ctf_base: CTFParams, defoci) -> FocalSeries:
    """Images |FT^-1(CTF_df FT(psi))|^2, one per defocus (centre-sample intensities)."""
    images = []
    for df in defoci:
        transfer = ctf(psi.grid, ctf_base.with_defocus(df))
        images.append(np.abs(ifft2(transfer * fft2(psi.values))) ** 2)
    return FocalSeries(tuple(images), tuple(float(d) for d in defoci), ctf_base, psi.grid.pixel_size)


@dataclass
class FocalSeriesResult:
    wave: ComplexField2D
    residuals: list[float]
    sweeps: int


def _fix_global_phase(values: np.ndarray) -> np.ndarray:
    mean = values.mean()
    if abs(mean) == 0:
        return values
    return values * (abs(mean) / mean)


def reconstruct_focal_series(
    series: FocalSeries,
    iterations: int = 200,
    tol: float = 1e-8,
    return_history: bool = False,
):
    """Averaged modulus-projection reconstruction of the exit wave.

    Every sweep propagates the estimate to each plane, replaces the modulus
    with the measured one, propagates back and averages. This majorizes the
    data residual sum_j || |CTF_j psi| - sqrt(I_j) ||^2, so the residual does
    not increase from sweep to sweep for unitary (defocus-only) transfer
    functions. Iteration stops early when the relative change in the
    residual drops below ``tol``. The global phase is fixed so the spatial
    mean of the result is real and non-negative.
    """
    if not series.images:
        raise EmptySeries("focal series contains no images")
    if iterations < 1:
        raise ValueError("at least one sweep is required")
    grid = series.grid
    amplitudes = [np.sqrt(np.maximum(img, 0.0)) for img in series.images]
    transfers = [ctf(grid, series.ctf_base.with_defocus(df)) for df in series.defoci]
    psi = amplitudes[0].astype(complex)

    def residual_and_update(estimate):
        spectrum = fft2(estimate)
        total = 0.0
        acc = np.zeros(grid.shape, dtype=complex)
        for amp, T in zip(amplitudes, transfers):
            plane = ifft2(T * spectrum)
            mod = np.abs(plane)
            total += float(np.sum((mod - amp) ** 2))
            projected = amp * np.exp(1j * np.angle(plane))
            acc += np.conj(T) * fft2(projected)
        return total, ifft2(acc / len(transfers))

    residuals = []
    sweeps = 0
    res, update = residual_and_update(psi)
    residuals.append(res)
    for sweeps in range(1, iterations + 1):
        psi = update
        res, update = residual_and_update(psi)
        residuals.append(res)
        prev = residuals[-2]
        if prev == 0 or abs(prev - res) <= tol * prev:
            break
    wave = ComplexField2D(_fix_global_phase(psi), grid)
    if return_history:
        return FocalSeriesResult(wave, residuals, sweeps)
    return wave
