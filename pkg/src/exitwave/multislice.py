"""Multislice propagation of a plane wave through a sliced specimen.

Each slice multiplies the wave by its transmission function and then
applies the Fresnel propagator in reciprocal space. Both the transmission
function and the propagator are band limited (2/3 of Nyquist by default)
to suppress aliasing. The global ``exp(2 pi i z / lambda)`` phase is
omitted: it is unobservable and cannot be sampled on nm grids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crystal import DEFAULT_SLICE_THICKNESS_NM, SpecimenBlock, partition_slices
from .errors import GridMismatch
from .grid import DEFAULT_BAND_LIMIT, Grid, band_limit, fft2, ifft2
from .potential import PhysicalSetup, PotentialGrid, default_table, slice_potential


@dataclass(frozen=True)
class ComplexField2D:
    values: np.ndarray
    grid: Grid
    band_limit_fraction: float = DEFAULT_BAND_LIMIT

    def __post_init__(self):
        self.grid.check(self.values)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("wave field contains non-finite values")

    def replace(self, values: np.ndarray) -> "ComplexField2D":
        return ComplexField2D(values, self.grid, self.band_limit_fraction)

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.values) ** 2


@dataclass(frozen=True)
class PropagatorKernel:
    values: np.ndarray
    dz: float


def _same_grid(a: ComplexField2D, b) -> None:
    if a.values.shape != b.values.shape:
        raise GridMismatch(f"grid {a.values.shape} does not match {b.values.shape}")


def incident_plane_wave(grid: Grid, band_limit_fraction: float = DEFAULT_BAND_LIMIT) -> ComplexField2D:
    return ComplexField2D(np.ones(grid.shape, dtype=complex), grid, band_limit_fraction)


def transmission_function(
    potential: PotentialGrid,
    sigma: float,
    dz: float | None = None,
    band_limit_fraction: float | None = DEFAULT_BAND_LIMIT,
    grid: Grid | None = None,
) -> ComplexField2D:
    """t = exp(i sigma V_z) for a projected potential ``V_z`` in V nm.

    ``V_z`` is already integrated along z, so no slice thickness enters the
    exponent. Passing ``dz`` reproduces the literal ``exp(i sigma V_z dz)``
    form instead (compatibility switch). ``band_limit_fraction=None`` skips
    band limiting.
    """
    if grid is not None and grid != potential.grid:
        raise GridMismatch(f"potential grid {potential.grid} does not match {grid}")
    phase = sigma * potential.values
    if dz is not None:
        phase = phase * dz
    t = np.exp(1j * phase)
    if band_limit_fraction is not None:
        t = band_limit(t, potential.grid, band_limit_fraction)
    return ComplexField2D(t, potential.grid, band_limit_fraction or 1.0)


def propagator_kernel(
    grid: Grid,
    wavelength_nm: float,
    dz: float,
    band_limit_fraction: float = DEFAULT_BAND_LIMIT,
) -> PropagatorKernel:
    """Fresnel propagator exp(-i pi lambda k^2 dz) on the FFT layout, zero outside the band."""
    if not dz > 0:
        raise ValueError(f"propagation distance must be positive, got {dz}")
    values = np.exp(-1j * np.pi * wavelength_nm * grid.k2() * dz)
    values[~grid.band_mask(band_limit_fraction)] = 0.0
    return PropagatorKernel(values, dz)


def propagate_slice(
    psi: ComplexField2D, t: ComplexField2D | None, P: PropagatorKernel | None
) -> ComplexField2D:
    """One multislice step: FT^-1( P * FT(t * psi) ). ``None`` stands for identity."""
    out = psi.values
    if t is not None:
        _same_grid(psi, t)
        out = out * t.values
    if P is not None:
        if P.values.shape != psi.values.shape:
            raise GridMismatch(f"propagator shape {P.values.shape} does not match {psi.values.shape}")
        out = ifft2(P.values * fft2(out))
    return psi.replace(out)


def simulation_grid(block: SpecimenBlock, n: int = 512) -> Grid:
    """Square grid covering the block plus its in-plane vacuum pad."""
    width = max(block.extent[0], block.extent[1]) + 2 * block.pad_xy
    return Grid.square(n, width / n)


def simulate_exit_wave(
    block: SpecimenBlock,
    voltage_kv: float,
    grid: Grid | None = None,
    dz: float = DEFAULT_SLICE_THICKNESS_NM,
    kirkland_n: int = 3,
    band_limit_fraction: float = DEFAULT_BAND_LIMIT,
    table=None,
    literal_slice_phase: bool = False,
) -> ComplexField2D:
    """Propagate an incident plane wave through every slice of ``block``.

    Occupancy sampling already happened in `build_block`, so the result is a
    deterministic function of the block.
    """
    grid = grid or simulation_grid(block)
    table = table or default_table()
    setup = PhysicalSetup.from_voltage(voltage_kv)
    stack = partition_slices(block, dz)
    P = propagator_kernel(grid, setup.wavelength_nm, dz, band_limit_fraction)
    psi = incident_plane_wave(grid, band_limit_fraction)
    offset = (block.pad_xy, block.pad_xy)
    for i in range(len(stack)):
        Z, pos = stack.atoms(i)
        if len(Z):
            V = slice_potential(Z, pos, grid, table, kirkland_n, offset=offset)
            t = transmission_function(
                V,
                setup.interaction_constant,
                dz if literal_slice_phase else None,
                band_limit_fraction,
            )
        else:
            t = None
        psi = propagate_slice(psi, t, P)
    return psi
