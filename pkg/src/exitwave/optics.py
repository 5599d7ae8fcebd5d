"""Contrast transfer function, image formation and intensity measurement.

Aberration coefficients are lengths in nm and the aberration function
carries a ``2 pi / lambda`` prefactor::

    chi(q) = (2 pi / lambda) * sum C_{n,m,a|b} theta^(n+1) {cos|sin}(m phi) / (n+1)

with ``theta = lambda |q|`` and ``phi`` measured counter-clockwise from +q_x.
Pure defocus ``C_{1,0,a} = df`` then gives ``chi = pi lambda df q^2``, the
same phase as Fresnel propagation over ``df``. Set ``raw_chi=True`` on
`CTFParams` to drop the prefactor.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import constants as C
from .errors import ExtinctionResonance, GridMismatch, IncompatibleTiling, InvalidAberration
from .grid import Grid, fft2, fourier_shift, ifft2
from .multislice import ComplexField2D
from .potential import PhysicalSetup

DEFOCUS = (1, 0, "a")


@dataclass(frozen=True)
class AberrationSet:
    """Coefficients keyed by ``(n, m, 'a' | 'b')``, values in nm."""

    coefficients: dict = field(default_factory=dict)

    def __post_init__(self):
        for key in self.coefficients:
            n, m, kind = key
            if kind not in ("a", "b") or n < 0 or m < 0 or m > n + 1 or (n + m) % 2 == 0:
                raise InvalidAberration(f"invalid aberration index {key}: need m <= n+1 and m+n odd")

    def with_coefficient(self, key, value: float) -> "AberrationSet":
        coeffs = dict(self.coefficients)
        coeffs[key] = float(value)
        return AberrationSet(coeffs)

    def get(self, key) -> float:
        return self.coefficients.get(key, 0.0)


@dataclass(frozen=True)
class CTFParams:
    theta_max: float = math.inf  # rad
    theta_coh: float = 0.0  # rad
    delta_e: float = 0.0  # eV
    cc: float = 0.0  # mm
    aberrations: AberrationSet = field(default_factory=AberrationSet)
    setup: PhysicalSetup = field(default_factory=lambda: PhysicalSetup.from_voltage(300.0))
    raw_chi: bool = False

    def __post_init__(self):
        if not self.theta_max > 0:
            raise ValueError("objective aperture must be positive")
        if self.theta_coh < 0 or self.delta_e < 0 or self.cc < 0:
            raise ValueError("coherence angle, energy spread and Cc must be non-negative")

    @property
    def k(self) -> float:
        """Wavenumber 1 / lambda in nm^-1."""
        return 1.0 / self.setup.wavelength_nm

    def with_defocus(self, df: float) -> "CTFParams":
        return replace(self, aberrations=self.aberrations.with_coefficient(DEFOCUS, df))

    def to_dict(self) -> dict:
        return {
            "voltage_kv": self.setup.voltage,
            "theta_max_mrad": None if math.isinf(self.theta_max) else self.theta_max / C.RAD_PER_MRAD,
            "theta_coh_mrad": self.theta_coh / C.RAD_PER_MRAD,
            "delta_e_ev": self.delta_e,
            "cc_mm": self.cc,
            "aberrations": self._aberration_entries(),
        }

    def _aberration_entries(self) -> list[dict]:
        pairs = sorted({(n, m) for n, m, _ in self.aberrations.coefficients})
        entries = []
        for n, m in pairs:
            ca = self.aberrations.get((n, m, "a"))
            cb = self.aberrations.get((n, m, "b"))
            entries.append({"n": n, "m": m, "a": ca, "b": cb, "value_nm": math.hypot(ca, cb)})
        return entries

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "CTFParams":
        coeffs = {}
        for entry in d.get("aberrations", []):
            n, m = int(entry["n"]), int(entry["m"])
            if "a" in entry or "b" in entry:
                ca, cb = float(entry.get("a", 0.0)), float(entry.get("b", 0.0))
            else:
                ca, cb = float(entry["value_nm"]), 0.0
            if ca:
                coeffs[(n, m, "a")] = ca
            if cb:
                coeffs[(n, m, "b")] = cb
        theta_max = d.get("theta_max_mrad")
        return cls(
            theta_max=math.inf if theta_max is None else theta_max * C.RAD_PER_MRAD,
            theta_coh=d.get("theta_coh_mrad", 0.0) * C.RAD_PER_MRAD,
            delta_e=d.get("delta_e_ev", 0.0),
            cc=d.get("cc_mm", 0.0),
            aberrations=AberrationSet(coeffs),
            setup=PhysicalSetup.from_voltage(d.get("voltage_kv", 300.0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "CTFParams":
        return cls.from_dict(json.loads(text))


def aberration_phase(qx, qy, params: CTFParams):
    """Aberration function chi (rad) at reciprocal coordinates ``(qx, qy)`` in nm^-1."""
    qx = np.asarray(qx, dtype=float)
    qy = np.asarray(qy, dtype=float)
    lam = params.setup.wavelength_nm
    theta = lam * np.hypot(qx, qy)
    phi = np.arctan2(qy, qx)
    chi = np.zeros(np.broadcast(qx, qy).shape)
    for (n, m, kind), value in params.aberrations.coefficients.items():
        angular = np.cos(m * phi) if kind == "a" else np.sin(m * phi)
        chi = chi + value * theta ** (n + 1) * angular / (n + 1)
    if not params.raw_chi:
        chi = chi * (2 * math.pi / lam)
    return chi


def envelopes(qx, qy, params: CTFParams, step: float | None = None):
    """Aperture, spatial-coherence and chromatic envelopes at ``(qx, qy)``.

    The gradient of chi in the coherence envelope is taken by central
    differences with spacing ``step`` (nm^-1); `apply_ctf` passes one
    reciprocal pixel.
    """
    qx = np.asarray(qx, dtype=float)
    qy = np.asarray(qy, dtype=float)
    k = params.k
    q = np.hypot(qx, qy)
    e_ap = (q <= k * params.theta_max).astype(float)

    if params.theta_coh > 0 and params.aberrations.coefficients:
        h = step if step is not None else 1e-3
        gx = (aberration_phase(qx + h, qy, params) - aberration_phase(qx - h, qy, params)) / (2 * h)
        gy = (aberration_phase(qx, qy + h, params) - aberration_phase(qx, qy - h, params)) / (2 * h)
        e_coh = np.exp(-(gx**2 + gy**2) * (k * params.theta_coh) ** 2 / (4 * math.log(2)))
    else:
        e_coh = np.ones(q.shape)

    if params.delta_e > 0 and params.cc > 0:
        cc_nm = params.cc * C.NM_PER_MM
        arg = math.pi * k * cc_nm * params.delta_e / params.setup.corrected_voltage * (q / k) ** 2
        e_chr = np.exp(-0.5 * arg**2)
    else:
        e_chr = np.ones(q.shape)
    return e_ap, e_coh, e_chr


def ctf(grid: Grid, params: CTFParams) -> np.ndarray:
    """Complex transfer function E_ap E_coh E_chr exp(-i chi) on the FFT layout."""
    ky, kx = grid.frequencies()
    kx, ky = np.broadcast_arrays(kx, ky)
    step = 1.0 / (grid.nx * grid.pixel_size)
    e_ap, e_coh, e_chr = envelopes(kx, ky, params, step=step)
    return e_ap * e_coh * e_chr * np.exp(-1j * aberration_phase(kx, ky, params))


def apply_ctf(psi: ComplexField2D, params: CTFParams, transfer: np.ndarray | None = None) -> ComplexField2D:
    """Image wave FT^-1( CTF * FT(psi_exit) )."""
    if transfer is None:
        transfer = ctf(psi.grid, params)
    elif transfer.shape != psi.values.shape:
        raise GridMismatch(f"transfer function {transfer.shape} does not match {psi.values.shape}")
    return psi.replace(ifft2(transfer * fft2(psi.values)))


@dataclass(frozen=True)
class DetectorGeometry:
    """Square supports of ``bin_factor`` x ``bin_factor`` field pixels.

    ``supersample`` sub-samples per axis and support; 1 selects the
    centre-sample approximation I(S) = |psi(centre)|^2 * area.
    """

    bin_factor: int = 1
    supersample: int = 1


def measure_intensity(psi: ComplexField2D, detector: DetectorGeometry = DetectorGeometry()) -> np.ndarray:
    """Integrated intensity per detector support (|psi|^2 times area, nm^2)."""
    b, s = detector.bin_factor, detector.supersample
    grid = psi.grid
    if b < 1 or s < 1 or int(b) != b or int(s) != s:
        raise IncompatibleTiling(f"bin factor and supersampling must be positive integers, got {b}, {s}")
    if grid.nx % b or grid.ny % b:
        raise IncompatibleTiling(f"{b}x{b} supports do not tile a {grid.ny}x{grid.nx} field")
    p = grid.pixel_size
    area = (b * p) ** 2
    # support J spans field pixels Jb..Jb+b-1; sub-sample k sits at
    # (-1/2 + (k + 1/2) b / s) pixels from the centre of pixel Jb
    offsets = [(-0.5 + (k + 0.5) * b / s) * p for k in range(s)]
    total = np.zeros((grid.ny // b, grid.nx // b))
    for dy in offsets:
        for dx in offsets:
            if dy == 0 and dx == 0:
                shifted = psi.values
            else:
                shifted = fourier_shift(psi.values, grid, dy, dx)
            total += np.abs(shifted[::b, ::b]) ** 2
    return total / (s * s) * area


def two_beam_projected_potential(
    psi_exit: ComplexField2D,
    phi: float,
    xi: float,
    z: float,
    wavelength_nm: float,
    rotate_mean: bool = False,
) -> np.ndarray:
    """Projected potential from a two-Bloch-wave exit wave.

    U = Im(psi e^{i phi} - <psi>) / (lambda xi sin(pi z / xi)), with the mean
    left unrotated as printed. ``rotate_mean=True`` rotates the mean too.
    """
    s = math.sin(math.pi * z / xi)
    if abs(s) < 1e-6:
        raise ExtinctionResonance(f"thickness z={z} is a multiple of the extinction distance xi={xi}")
    mean = psi_exit.values.mean()
    rot = np.exp(1j * phi)
    diff = psi_exit.values * rot - (mean * rot if rotate_mean else mean)
    return np.imag(diff) / (wavelength_nm * xi * s)
