"""Physical constants (CODATA 2018) and unit conversions.

Every unit conversion in the package goes through this module so that the
length convention (nm for real space, nm^-1 for reciprocal space) stays in
one place.
"""

import math

PLANCK = 6.62607015e-34  # J s
ELEMENTARY_CHARGE = 1.602176634e-19  # C
ELECTRON_MASS = 9.1093837015e-31  # kg
SPEED_OF_LIGHT = 299792458.0  # m / s
BOHR_RADIUS = 5.29177210903e-11  # m
VACUUM_PERMITTIVITY = 8.8541878128e-12  # F / m
EULER_GAMMA = 0.57721566490153286061

ANGSTROM_PER_NM = 10.0
NM_PER_ANGSTROM = 0.1
PM_PER_NM = 1000.0
M_PER_NM = 1e-9
V_PER_KV = 1000.0
NM_PER_MM = 1e6
RAD_PER_MRAD = 1e-3

REST_ENERGY_EV = ELECTRON_MASS * SPEED_OF_LIGHT**2 / ELEMENTARY_CHARGE

# Kirkland's "a0 e" prefactor: Bohr radius [A] times e / (4 pi eps0) [V A].
BOHR_RADIUS_ANGSTROM = BOHR_RADIUS * 1e10
COULOMB_V_ANGSTROM = ELEMENTARY_CHARGE / (4 * math.pi * VACUUM_PERMITTIVITY) * 1e10


def angstrom_to_nm(x):
    return x * NM_PER_ANGSTROM


def nm_to_angstrom(x):
    return x * ANGSTROM_PER_NM


def kv_to_volts(kv):
    return kv * V_PER_KV
