"""Electron-optical constants and Kirkland projected atomic potentials.

Units: voltages in kV at the API, wavelengths in pm, the interaction
constant in rad / (V nm) and projected potentials in V nm. The Kirkland
table keeps its native Angstrom units; conversion happens on evaluation.

Singular pixels (an atom sitting on a pixel centre) are regularized by
evaluating the potential at ``pixel_size / 4`` instead of 0. This is a
deliberate approximation of the finite pixel-integrated value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import constants as C
from .errors import (
    NonPositiveArgument,
    NonPositiveVoltage,
    TableFormatError,
    UnknownElement,
    ZeroRadius,
)
from .grid import Grid

DEFAULT_CUTOFF_NM = 0.5
_LOOKUP_POINTS = 4096


# --------------------------------------------------------------------------
# Relativistic electron optics


def _check_voltage(voltage_kv):
    if not voltage_kv > 0:
        raise NonPositiveVoltage(f"acceleration voltage must be positive, got {voltage_kv} kV")


def electron_wavelength(voltage_kv: float) -> float:
    """Relativistic electron wavelength in pm."""
    _check_voltage(voltage_kv)
    eV = C.ELEMENTARY_CHARGE * C.kv_to_volts(voltage_kv)
    mc2 = C.ELECTRON_MASS * C.SPEED_OF_LIGHT**2
    lam_m = C.PLANCK * C.SPEED_OF_LIGHT / math.sqrt(eV * (2 * mc2 + eV))
    return lam_m / C.M_PER_NM * C.PM_PER_NM


def relativistic_mass(voltage_kv: float) -> float:
    _check_voltage(voltage_kv)
    return C.ELECTRON_MASS * (1 + C.kv_to_volts(voltage_kv) / C.REST_ENERGY_EV)


def corrected_voltage(voltage_kv: float) -> float:
    """Relativistically corrected acceleration voltage U* = U (1 + eU / 2 m0 c^2), in V."""
    _check_voltage(voltage_kv)
    U = C.kv_to_volts(voltage_kv)
    return U * (1 + U / (2 * C.REST_ENERGY_EV))


def interaction_constant(voltage_kv: float, planck: float = C.PLANCK) -> float:
    """sigma = 2 pi m e lambda / h^2 in rad / (V nm).

    ``planck`` exists so tests can check the functional form; lambda is held
    at its physical value.
    """
    lam_m = electron_wavelength(voltage_kv) / C.PM_PER_NM * C.M_PER_NM
    sigma_si = 2 * math.pi * relativistic_mass(voltage_kv) * C.ELEMENTARY_CHARGE * lam_m / planck**2
    return sigma_si * C.M_PER_NM


@dataclass(frozen=True)
class PhysicalSetup:
    voltage: float  # kV
    wavelength: float  # pm
    interaction_constant: float  # rad / (V nm)
    relativistic_mass: float  # kg
    corrected_voltage: float  # V

    @classmethod
    def from_voltage(cls, voltage_kv: float) -> "PhysicalSetup":
        return cls(
            voltage=float(voltage_kv),
            wavelength=electron_wavelength(voltage_kv),
            interaction_constant=interaction_constant(voltage_kv),
            relativistic_mass=relativistic_mass(voltage_kv),
            corrected_voltage=corrected_voltage(voltage_kv),
        )

    @property
    def wavelength_nm(self) -> float:
        return self.wavelength / C.PM_PER_NM


# --------------------------------------------------------------------------
# Modified Bessel function K0

_SERIES_TERMS = 30
_QUAD_NODES = 48
_QUAD_DECAY = 60.0  # integrand truncated where x (cosh t - 1) reaches this


def _k0_series(x):
    # K0 = -(ln(x/2) + gamma) I0 + sum_k H_k (x^2/4)^k / (k!)^2
    y = 0.25 * x * x
    term = np.ones_like(x)
    i0 = np.ones_like(x)
    tail = np.zeros_like(x)
    harmonic = 0.0
    for k in range(1, _SERIES_TERMS):
        term = term * y / (k * k)
        harmonic += 1.0 / k
        i0 += term
        tail += harmonic * term
    return -(np.log(0.5 * x) + C.EULER_GAMMA) * i0 + tail


def _k0_integral(x):
    # K0(x) = int_0^inf exp(-x cosh t) dt. The trapezoid rule converges
    # geometrically for this analytic, doubly-exponentially decaying integrand;
    # the range shrinks with x to keep the peak resolved. Used for x > 2.
    t_max = np.arccosh(1.0 + _QUAD_DECAY / x)
    h = t_max / (_QUAD_NODES - 1)
    t = h[:, None] * np.arange(_QUAD_NODES)[None, :]
    f = np.exp(-x[:, None] * (np.cosh(t) - 1.0))
    f[:, 0] *= 0.5
    return np.exp(-x) * h * f.sum(axis=1)


def bessel_k0(x):
    """Modified Bessel function of the second kind, order zero, for x > 0."""
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise NonPositiveArgument("K0 is only defined for positive arguments")
    flat = arr.ravel()
    out = np.empty_like(flat)
    small = flat <= 2.0
    out[small] = _k0_series(flat[small])
    out[~small] = _k0_integral(flat[~small])
    out = out.reshape(arr.shape)
    return float(out) if np.ndim(x) == 0 else out


# --------------------------------------------------------------------------
# Kirkland table


@dataclass
class KirklandTable:
    """Per-element Kirkland parameters in Angstrom units.

    Row layout follows the data file: ``a1 b1 a2 b2 a3 b3 c1 d1 c2 d2 c3 d3``.
    """

    rows: dict[int, np.ndarray]
    _lookup: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_text(cls, text: str) -> "KirklandTable":
        rows = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 13:
                raise TableFormatError(f"line {lineno}: expected 13 columns, found {len(parts)}")
            Z = int(parts[0])
            values = np.array([float(p) for p in parts[1:]])
            if Z in rows:
                raise TableFormatError(f"line {lineno}: duplicate row for Z={Z}")
            if np.any(values[1:6:2] <= 0) or np.any(values[7::2] <= 0):
                raise TableFormatError(f"line {lineno}: b and d parameters must be positive")
            rows[Z] = values
        if not rows:
            raise TableFormatError("empty Kirkland table")
        return cls(rows)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "KirklandTable":
        if path is None:
            text = resources.files("exitwave").joinpath("data/kirkland.txt").read_text()
            table = cls.from_text(text)
            missing = set(range(1, 104)) - set(table.rows)
            if missing:
                raise TableFormatError(f"bundled table lacks Z={sorted(missing)}")
            return table
        return cls.from_text(Path(path).read_text())

    def params(self, Z: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(a, b, c, d) arrays of length 3 for element ``Z``."""
        try:
            row = self.rows[int(Z)]
        except KeyError:
            raise UnknownElement(f"no Kirkland parameters for Z={Z}") from None
        return row[0:6:2], row[1:6:2], row[6::2], row[7::2]


_DEFAULT_TABLE: KirklandTable | None = None


def default_table() -> KirklandTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = KirklandTable.load()
    return _DEFAULT_TABLE


def atom_projected_potential(Z: int, r_nm, table: KirklandTable | None = None, n: int = 3):
    """Projected potential of one atom at radial distance ``r_nm``, in V nm.

    Both the Bessel and the Gaussian sums run over the first ``n`` terms.
    """
    if n not in (1, 2, 3):
        raise ValueError(f"truncation order must be 1, 2 or 3, got {n}")
    table = table or default_table()
    a, b, c, d = table.params(Z)
    r = np.asarray(r_nm, dtype=float)
    if np.any(~(r > 0)):
        raise ZeroRadius("projected potential diverges at r = 0; sample at r >= r_min")
    r_a = C.nm_to_angstrom(r)[..., None]
    a, b, c, d = a[:n], b[:n], c[:n], d[:n]
    pref = C.BOHR_RADIUS_ANGSTROM * C.COULOMB_V_ANGSTROM
    bessel = 4 * math.pi**2 * pref * (a * bessel_k0(2 * math.pi * r_a * np.sqrt(b))).sum(-1)
    gauss = 2 * math.pi**2 * pref * (c / d * np.exp(-(math.pi**2) * r_a**2 / d)).sum(-1)
    v = C.angstrom_to_nm(bessel + gauss)  # V A -> V nm
    return float(v) if np.ndim(r_nm) == 0 else v


def _radial_lookup(table, Z, n, r_min, cutoff):
    key = (int(Z), n, r_min, cutoff)
    hit = table._lookup.get(key)
    if hit is None:
        log_r = np.linspace(math.log(r_min), math.log(cutoff), _LOOKUP_POINTS)
        hit = (log_r, atom_projected_potential(Z, np.exp(log_r), table, n))
        table._lookup[key] = hit
    return hit


@dataclass(frozen=True)
class PotentialGrid:
    values: np.ndarray  # V nm
    grid: Grid


def slice_potential(
    Z,
    positions,
    grid: Grid,
    table: KirklandTable | None = None,
    n: int = 3,
    cutoff: float = DEFAULT_CUTOFF_NM,
    offset: tuple[float, float] = (0.0, 0.0),
) -> PotentialGrid:
    """Sum of per-atom projected potentials sampled at the pixel centres of ``grid``.

    Parameters
    ----------
    Z : array_like of int
        Atomic numbers.
    positions : array_like, shape (N, 2) or (N, 3)
        Atom positions in nm; columns are x, y (z ignored).
    offset : (x, y)
        Added to the atom positions before sampling, e.g. the in-plane vacuum pad.

    Contributions beyond ``cutoff`` are dropped; the grid is treated as
    periodic, matching the FFT propagation that consumes it.
    """
    table = table or default_table()
    Z = np.asarray(Z, dtype=int)
    values = np.zeros(grid.shape)
    if len(Z) == 0:
        return PotentialGrid(values, grid)
    pos = np.asarray(positions, dtype=float)[:, :2] + np.asarray(offset)
    p = grid.pixel_size
    r_min = p / 4
    radius = int(math.ceil(cutoff / p))
    off = np.arange(-radius, radius + 1)
    flat = values.ravel()
    for element in np.unique(Z):
        log_r, v_tab = _radial_lookup(table, element, n, r_min, cutoff)
        sel = pos[Z == element]
        # nearest pixel index: centre of pixel i sits at (i + 0.5) p
        ix0 = np.floor(sel[:, 0] / p).astype(int)
        iy0 = np.floor(sel[:, 1] / p).astype(int)
        ix = ix0[:, None, None] + off[None, None, :]
        iy = iy0[:, None, None] + off[None, :, None]
        dx = (ix + 0.5) * p - sel[:, 0, None, None]
        dy = (iy + 0.5) * p - sel[:, 1, None, None]
        r = np.maximum(np.sqrt(dx * dx + dy * dy), r_min)
        v = np.where(r <= cutoff, np.interp(np.log(r), log_r, v_tab), 0.0)
        index = (iy % grid.ny) * grid.nx + (ix % grid.nx)
        flat += np.bincount(index.ravel(), weights=v.ravel(), minlength=flat.size)
    return PotentialGrid(flat.reshape(grid.shape), grid)
