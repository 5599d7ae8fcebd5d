"""Phase parameterization, error metrics, baselines and training-loss arithmetic.

Everything here is plain numpy on arrays or floats; no autodiff framework
is involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import BadIteration, NegativeAmplitude, NegativeLoss, ShapeMismatch, ZeroVector
from .grid import fft2, ifft2

NORM_EPS = 1e-12
LOSS_SCALE = 10.0  # phase-component MSEs are multiplied by this before clipping
CTF_DIVISION_FLOOR = 1e-6


@dataclass(frozen=True)
class PhasePair:
    cos: np.ndarray
    sin: np.ndarray

    def __post_init__(self):
        if np.shape(self.cos) != np.shape(self.sin):
            raise ShapeMismatch(f"component shapes differ: {np.shape(self.cos)} vs {np.shape(self.sin)}")

    def stack(self) -> np.ndarray:
        """Channels-last array of shape (..., 2)."""
        return np.stack([self.cos, self.sin], axis=-1)

    @classmethod
    def from_stack(cls, arr: np.ndarray) -> "PhasePair":
        return cls(arr[..., 0], arr[..., 1])

    @classmethod
    def from_wave(cls, psi: np.ndarray) -> "PhasePair":
        theta = np.angle(psi)
        return cls(np.cos(theta), np.sin(theta))


def phase_to_components(theta, amplitude) -> tuple[PhasePair, np.ndarray]:
    amplitude = np.asarray(amplitude, dtype=float)
    if np.any(amplitude < 0):
        raise NegativeAmplitude("amplitudes must be non-negative")
    theta = np.asarray(theta, dtype=float)
    return PhasePair(np.cos(theta), np.sin(theta)), amplitude


def components_to_wave(amplitude, pair: PhasePair) -> np.ndarray:
    """psi = A (cos theta + i sin theta)."""
    return np.asarray(amplitude) * (pair.cos + 1j * pair.sin)


def l2_normalize_pair(pair: PhasePair, eps: float = NORM_EPS) -> PhasePair:
    """Project every (cos, sin) pixel onto the unit circle."""
    norm = np.hypot(pair.cos, pair.sin)
    if np.any(norm < eps):
        raise ZeroVector(f"{int(np.sum(norm < eps))} pixel(s) have a (near-)zero component vector")
    return PhasePair(pair.cos / norm, pair.sin / norm)


def phase_component_mae(predicted: PhasePair, truth: PhasePair) -> float:
    """Mean absolute error over both components and all pixels."""
    if np.shape(predicted.cos) != np.shape(truth.cos):
        raise ShapeMismatch(f"shape {np.shape(predicted.cos)} does not match {np.shape(truth.cos)}")
    err = np.abs(predicted.cos - truth.cos) + np.abs(predicted.sin - truth.sin)
    return float(np.mean(err) / 2)


def align_global_phase(estimate: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Rotate ``estimate`` by the global phase that best matches ``reference``."""
    overlap = np.vdot(estimate, reference)
    if overlap == 0:
        return estimate
    return estimate * (overlap / abs(overlap))


# --------------------------------------------------------------------------
# Random-phase baseline

BASELINE_MEAN = 0.75
BASELINE_MEAN_SQUARE = 5.0 / 6.0
BASELINE_STD = math.sqrt(BASELINE_MEAN_SQUARE - BASELINE_MEAN**2)


@dataclass(frozen=True)
class BaselineMoments:
    mean: float
    mean_square: float
    std: float
    mc_mean: float | None = None
    mc_mean_square: float | None = None
    mc_std: float | None = None
    mc_stderr: float | None = None
    samples: int = 0


def random_phase_errors(n: int, rng: np.random.Generator, component=np.cos) -> np.ndarray:
    """|x - g(theta)| for x ~ U(-1, 1) and theta ~ U(-pi, pi)."""
    x = rng.uniform(-1.0, 1.0, n)
    theta = rng.uniform(-math.pi, math.pi, n)
    return np.abs(x - component(theta))


def random_phase_baseline_moments(samples: int = 10**7, seed: int = 0, chunk: int = 10**6) -> BaselineMoments:
    """Analytic moments of the uniform random-phase error and a Monte-Carlo check.

    Pass ``samples=0`` for the analytic values only.
    """
    if samples <= 0:
        return BaselineMoments(BASELINE_MEAN, BASELINE_MEAN_SQUARE, BASELINE_STD)
    rng = np.random.default_rng(seed)
    s1 = s2 = 0.0
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        e = random_phase_errors(n, rng)
        s1 += float(e.sum())
        s2 += float((e * e).sum())
        done += n
    mean = s1 / samples
    mean_sq = s2 / samples
    var = max(mean_sq - mean * mean, 0.0)
    return BaselineMoments(
        BASELINE_MEAN,
        BASELINE_MEAN_SQUARE,
        BASELINE_STD,
        mc_mean=mean,
        mc_mean_square=mean_sq,
        mc_std=math.sqrt(var),
        mc_stderr=math.sqrt(var / samples),
        samples=samples,
    )


# --------------------------------------------------------------------------
# Adaptive learning-rate clipping


@dataclass(frozen=True)
class AlrcState:
    mu1: float = 25.0
    mu2: float = 30.0
    beta1: float = 0.999
    beta2: float = 0.999
    n_sigma: float = 3.0

    @property
    def threshold(self) -> float:
        return self.mu1 + self.n_sigma * math.sqrt(max(self.mu2 - self.mu1**2, 0.0))

    def updated(self, loss: float) -> "AlrcState":
        return replace(
            self,
            mu1=self.beta1 * self.mu1 + (1 - self.beta1) * loss,
            mu2=self.beta2 * self.mu2 + (1 - self.beta2) * loss * loss,
        )


def alrc_apply(loss: float, state: AlrcState, update_first: bool = False) -> tuple[float, AlrcState]:
    """Clip ``loss`` to the running threshold mu1 + n sqrt(mu2 - mu1^2).

    Losses at or below the threshold pass through unchanged; larger ones are
    scaled down to the threshold. The moments are then updated with the raw
    loss (``update_first=True`` updates before computing the threshold).
    """
    if not loss >= 0 or not math.isfinite(loss):
        raise NegativeLoss(f"loss must be finite and non-negative, got {loss}")
    new_state = state.updated(loss)
    threshold = (new_state if update_first else state).threshold
    clipped = loss if loss <= threshold else threshold
    return clipped, new_state


# --------------------------------------------------------------------------
# GAN losses and learning rates


@dataclass(frozen=True)
class GanLossInputs:
    d_real: float
    d_fake: float


def gan_losses(inputs: GanLossInputs) -> tuple[float, float]:
    """Least-squares discriminator and generator losses."""
    l_d = (inputs.d_real - 1.0) ** 2 + inputs.d_fake**2
    l_g = (inputs.d_fake - 1.0) ** 2
    return l_d, l_g


def discriminator_lr(eta_d: float, mu_d: float, m: float = 20.0, c: float = 0.5) -> float:
    """Logistic modulation of the discriminator learning rate by its running mean output."""
    if not eta_d > 0:
        raise ValueError("base learning rate must be positive")
    return eta_d / (1.0 + math.exp(-m * (mu_d - c)))


def ema(previous: float, value: float, decay: float = 0.99) -> float:
    """Uncorrected exponential moving average, used to track mu_D."""
    return decay * previous + (1 - decay) * value


def stepwise_lr(eta0: float, iteration: int, i_max: int, factor: float = 0.5, steps: int = 7) -> float:
    """eta0 * factor ** floor(iteration / (i_max / steps))."""
    if not 0 <= iteration <= i_max or i_max <= 0:
        raise BadIteration(f"iteration {iteration} outside [0, {i_max}]")
    return eta0 * factor ** ((iteration * steps) // i_max)


# --------------------------------------------------------------------------
# Cycle-consistency losses for faux-CTF training


def _as_array(x) -> np.ndarray:
    return x.stack() if isinstance(x, PhasePair) else np.asarray(x)


def undo_ctf(field: np.ndarray, ctf_prime: np.ndarray, floor: float = CTF_DIVISION_FLOOR) -> np.ndarray:
    """FT^-1( FT(field) / c' ), zeroing bins where |c'| < ``floor``."""
    spectrum = fft2(field)
    small = np.abs(ctf_prime) < floor
    safe = np.where(small, 1.0, ctf_prime)
    return ifft2(np.where(small, 0.0, spectrum / safe))


def cycle_losses(
    d_real: float,
    d_fake: float,
    recon_a,
    recon_b,
    weight: float = 1.0,
    d_fake_gen: float | None = None,
    ctf_prime: np.ndarray | None = None,
) -> tuple[float, float]:
    """Discriminator and generator losses with a cycle-consistency term.

    ``d_real`` scores the measured image, ``d_fake`` the faux-CTF image under
    the discriminator's conditioning and ``d_fake_gen`` (default ``d_fake``)
    the faux image under the generator's conditioning. ``recon_a`` and
    ``recon_b`` are the generator outputs for the measured and faux images;
    the cycle term is ``weight`` times their mean squared difference. With
    ``ctf_prime`` the faux CTF is divided out of ``recon_b`` first.
    """
    a = _as_array(recon_a)
    b = _as_array(recon_b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"generator outputs differ in shape: {a.shape} vs {b.shape}")
    if ctf_prime is not None:
        b = undo_ctf(b, ctf_prime)
    if d_fake_gen is None:
        d_fake_gen = d_fake
    cycle = float(np.mean(np.abs(a - b) ** 2))
    l_d = d_real**2 + (d_fake - 1.0) ** 2
    l_g = d_fake_gen**2 + weight * cycle
    return l_d, l_g
