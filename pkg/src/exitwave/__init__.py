"""Exit-wavefunction simulation and classical phase retrieval toolkit."""

from .crystal import (
    CrystalStructure,
    SimGeometry,
    SliceStack,
    SpecimenBlock,
    build_block,
    parse_cif,
    partition_slices,
    write_cif,
)
from .grid import Grid
from .multislice import ComplexField2D, simulate_exit_wave
from .potential import PhysicalSetup, bessel_k0, electron_wavelength, interaction_constant

__version__ = "0.1.0"
