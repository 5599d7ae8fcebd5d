"""Sampling grid, unitary FFT helpers and band limiting.

Arrays are indexed ``[iy, ix]``. Pixel ``i`` is sampled at its centre,
``(i + 0.5) * pixel_size``. The forward transform uses the
``exp(-2 pi i q.r)`` kernel with ``1/sqrt(N)`` scaling, so Parseval holds
exactly between real and reciprocal space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch, InvalidGrid

DEFAULT_BAND_LIMIT = 2.0 / 3.0


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class Grid:
    ny: int
    nx: int
    pixel_size: float  # nm
    # cropped dataset fields (e.g. 320x320) are not FFT sized; they opt out
    strict: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        if self.strict and not (_is_pow2(self.nx) and _is_pow2(self.ny)):
            raise InvalidGrid(f"grid dimensions must be powers of two, got {self.ny}x{self.nx}")
        if not self.pixel_size > 0:
            raise InvalidGrid(f"pixel size must be positive, got {self.pixel_size}")

    @classmethod
    def square(cls, n: int, pixel_size: float) -> "Grid":
        return cls(n, n, pixel_size)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def extent(self) -> tuple[float, float]:
        return (self.ny * self.pixel_size, self.nx * self.pixel_size)

    @property
    def nyquist(self) -> float:
        return 0.5 / self.pixel_size

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel-centre coordinates (y, x) in nm, broadcastable to ``shape``."""
        y = (np.arange(self.ny) + 0.5) * self.pixel_size
        x = (np.arange(self.nx) + 0.5) * self.pixel_size
        return y[:, None], x[None, :]

    def frequencies(self) -> tuple[np.ndarray, np.ndarray]:
        """Reciprocal coordinates (k_y, k_x) in nm^-1 on the standard FFT layout."""
        ky = np.fft.fftfreq(self.ny, d=self.pixel_size)
        kx = np.fft.fftfreq(self.nx, d=self.pixel_size)
        return ky[:, None], kx[None, :]

    def k2(self) -> np.ndarray:
        ky, kx = self.frequencies()
        return ky**2 + kx**2

    def band_mask(self, fraction: float = DEFAULT_BAND_LIMIT) -> np.ndarray:
        """Boolean mask, True where |k| <= fraction * Nyquist."""
        return self.k2() <= (fraction * self.nyquist) ** 2

    def check(self, array: np.ndarray) -> None:
        if array.shape != self.shape:
            raise GridMismatch(f"array shape {array.shape} does not match grid {self.shape}")


def fft2(a: np.ndarray) -> np.ndarray:
    return np.fft.fft2(a, norm="ortho")


def ifft2(a: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(a, norm="ortho")


def band_limit(values: np.ndarray, grid: Grid, fraction: float = DEFAULT_BAND_LIMIT) -> np.ndarray:
    """Zero all spectral components beyond ``fraction`` of Nyquist."""
    return ifft2(fft2(values) * grid.band_mask(fraction))


def fourier_shift(values: np.ndarray, grid: Grid, dy: float, dx: float) -> np.ndarray:
    """Evaluate the trigonometric interpolant at r + (dy, dx) on the original samples."""
    ky, kx = grid.frequencies()
    return ifft2(fft2(values) * np.exp(2j * np.pi * (ky * dy + kx * dx)))
