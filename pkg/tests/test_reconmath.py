import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from exitwave.errors import BadIteration, NegativeAmplitude, NegativeLoss, ShapeMismatch, ZeroVector
from exitwave.grid import Grid, fft2, ifft2
from exitwave.reconmath import (
    LOSS_SCALE,
    AlrcState,
    GanLossInputs,
    PhasePair,
    align_global_phase,
    alrc_apply,
    components_to_wave,
    cycle_losses,
    discriminator_lr,
    ema,
    gan_losses,
    l2_normalize_pair,
    phase_component_mae,
    phase_to_components,
    random_phase_baseline_moments,
    random_phase_errors,
    stepwise_lr,
    undo_ctf,
)

finite = st.floats(-10, 10, allow_nan=False)


# --------------------------------------------------------------------------
# phase components


def test_phase_components_examples():
    pair, amp = phase_to_components(np.zeros((2, 2)), np.ones((2, 2)))
    assert np.all(pair.cos == 1) and np.all(pair.sin == 0)
    pair, _ = phase_to_components(np.full(3, math.pi / 2), np.ones(3))
    np.testing.assert_allclose(pair.cos, 0, atol=1e-12)
    np.testing.assert_allclose(pair.sin, 1, atol=1e-12)
    with pytest.raises(NegativeAmplitude):
        phase_to_components(np.zeros(2), np.array([1.0, -0.1]))


def test_components_round_trip(rng):
    psi = rng.uniform(0, 2, (16, 16)) * np.exp(1j * rng.uniform(-np.pi, np.pi, (16, 16)))
    pair, amp = phase_to_components(np.angle(psi), np.abs(psi))
    assert np.abs(components_to_wave(amp, pair) - psi).max() < 1e-12


def test_pair_stack_and_shape_check(rng):
    pair = PhasePair(rng.normal(size=(4, 5)), rng.normal(size=(4, 5)))
    assert pair.stack().shape == (4, 5, 2)
    back = PhasePair.from_stack(pair.stack())
    np.testing.assert_array_equal(back.cos, pair.cos)
    with pytest.raises(ShapeMismatch):
        PhasePair(np.zeros(3), np.zeros(4))


def test_l2_normalize_examples():
    out = l2_normalize_pair(PhasePair(np.array([0.6, 3.0]), np.array([0.8, 4.0])))
    np.testing.assert_allclose(out.cos, [0.6, 0.6], rtol=1e-15)
    np.testing.assert_allclose(out.sin, [0.8, 0.8], rtol=1e-15)
    with pytest.raises(ZeroVector):
        l2_normalize_pair(PhasePair(np.array([1.0, 0.0]), np.array([0.0, 1e-13])))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-11, 1e3))
def test_l2_normalize_unit_circle(seed, scale):
    rng = np.random.default_rng(seed)
    c, s = rng.normal(size=(2, 32)) * scale
    keep = np.hypot(c, s) >= 1e-12
    c, s = c[keep], s[keep]
    out = l2_normalize_pair(PhasePair(c, s))
    assert np.abs(np.hypot(out.cos, out.sin) - 1).max() < 1e-6
    assert np.abs(out.cos * s - out.sin * c).max() < 1e-9 * max(1.0, scale)
    assert np.all(out.cos * c + out.sin * s > 0)


# --------------------------------------------------------------------------
# error metric


def test_mae_identity_and_negation(rng):
    truth = PhasePair.from_wave(np.exp(1j * rng.uniform(-np.pi, np.pi, (32, 32))))
    assert phase_component_mae(truth, truth) == 0
    neg = PhasePair(-truth.cos, -truth.sin)
    expected = np.mean(np.abs(truth.cos) + np.abs(truth.sin))
    assert phase_component_mae(neg, truth) == pytest.approx(expected, rel=1e-14)
    with pytest.raises(ShapeMismatch):
        phase_component_mae(truth, PhasePair(np.zeros(3), np.zeros(3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_mae_is_a_metric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (PhasePair(*rng.uniform(-1, 1, (2, 8, 8))) for _ in range(3))
    ab = phase_component_mae(a, b)
    assert ab == phase_component_mae(b, a)
    assert ab > 0
    assert phase_component_mae(a, c) <= ab + phase_component_mae(b, c) + 1e-15


def test_random_prediction_mae_is_three_quarters():
    rng = np.random.default_rng(7)
    n = 10**6
    truth = PhasePair.from_wave(np.exp(1j * rng.uniform(-np.pi, np.pi, n)))
    pred = PhasePair(rng.uniform(-1, 1, n), rng.uniform(-1, 1, n))
    assert phase_component_mae(pred, truth) == pytest.approx(0.75, abs=0.01)


def test_align_global_phase(rng):
    ref = np.exp(1j * rng.uniform(-1, 1, (8, 8)))
    np.testing.assert_allclose(align_global_phase(ref * np.exp(2.1j), ref), ref, atol=1e-14)
    zero = np.zeros((2, 2), complex)
    assert align_global_phase(zero, ref[:2, :2]) is zero


# --------------------------------------------------------------------------
# random-phase baseline


def test_baseline_analytic_values():
    m = random_phase_baseline_moments(samples=0)
    assert m.mean == 0.75
    assert m.mean_square == pytest.approx(5 / 6, rel=1e-15)
    assert m.std == pytest.approx(0.5204, abs=1e-4)
    assert m.mc_mean is None


@pytest.mark.parametrize("power, value", [(1, 0.75), (2, 5 / 6)])
def test_baseline_double_integral(power, value):
    # E|x - cos(theta)|^p with densities 1/2 and 1/(2 pi), split at the kink x = cos(theta)
    def integrand(x, theta):
        return abs(x - math.cos(theta)) ** power / (4 * math.pi)

    below, _ = integrate.dblquad(integrand, -math.pi, math.pi, -1, math.cos, epsabs=1e-12)
    above, _ = integrate.dblquad(integrand, -math.pi, math.pi, math.cos, 1, epsabs=1e-12)
    got = below + above
    assert got == pytest.approx(value, abs=1e-8)


def test_baseline_monte_carlo_within_three_stderr():
    m = random_phase_baseline_moments(samples=2 * 10**6, seed=3)
    assert abs(m.mc_mean - 0.75) < 3 * m.mc_stderr
    assert m.mc_std == pytest.approx(m.std, abs=2e-3)
    assert m.samples == 2 * 10**6


def test_baseline_sin_component_same_law():
    e = random_phase_errors(10**6, np.random.default_rng(4), component=np.sin)
    assert e.mean() == pytest.approx(0.75, abs=0.005)


def test_monte_carlo_rate():
    # spread of repeated estimates shrinks like N^-1/2
    sizes = [10**4, 10**5, 10**6]
    spreads = []
    for n in sizes:
        means = [random_phase_baseline_moments(n, seed=s, chunk=n).mc_mean for s in range(40)]
        spreads.append(np.sqrt(np.mean((np.array(means) - 0.75) ** 2)))
    slope = np.polyfit(np.log10(sizes), np.log10(spreads), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.15)


# --------------------------------------------------------------------------
# ALRC


def test_alrc_initial_threshold():
    state = AlrcState()
    assert state.threshold == 25.0
    loss, new = alrc_apply(10.0, state)
    assert loss == 10.0
    assert new.mu1 == pytest.approx(0.999 * 25 + 0.001 * 10)
    assert new.mu2 == pytest.approx(0.999 * 30 + 0.001 * 100)
    assert alrc_apply(100.0, state)[0] == 25.0


def test_alrc_update_first_flag():
    state = AlrcState()
    late, _ = alrc_apply(100.0, state)
    early, new = alrc_apply(100.0, state, update_first=True)
    assert late == 25.0
    assert early == pytest.approx(new.threshold)
    assert early != late


def test_alrc_constant_stream_fixed_point():
    state = AlrcState(beta1=0.9, beta2=0.9)
    for _ in range(2000):
        out, state = alrc_apply(4.0, state)
    assert state.mu1 == pytest.approx(4.0, rel=1e-9)
    assert state.mu2 == pytest.approx(16.0, rel=1e-9)
    assert state.threshold == pytest.approx(4.0, abs=1e-3)
    assert out == 4.0


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1e6), st.floats(0, 1e3), st.floats(0, 1e6))
def test_alrc_never_increases(loss, mu1, mu2):
    state = AlrcState(mu1=mu1, mu2=mu2)
    out, _ = alrc_apply(loss, state)
    assert out <= loss
    if loss <= state.threshold:
        assert out == loss


@pytest.mark.parametrize("loss", [-1.0, float("nan"), float("inf")])
def test_alrc_rejects_bad_loss(loss):
    with pytest.raises(NegativeLoss):
        alrc_apply(loss, AlrcState())


def test_loss_scale_constant():
    assert LOSS_SCALE == 10.0


# --------------------------------------------------------------------------
# GAN losses and schedules


@pytest.mark.parametrize(
    "d_real, d_fake, l_d, l_g",
    [(1.0, 0.0, 0.0, 1.0), (0.5, 0.5, 0.5, 0.25), (0.3, 1.0, 1.49, 0.0), (7.0, 1.0, 37.0, 0.0)],
)
def test_gan_losses(d_real, d_fake, l_d, l_g):
    got_d, got_g = gan_losses(GanLossInputs(d_real, d_fake))
    assert got_d == pytest.approx(l_d, rel=1e-14)
    assert got_g == l_g


def test_discriminator_lr_examples():
    eta = 3e-4
    assert discriminator_lr(eta, 0.5) == eta / 2
    assert discriminator_lr(eta, 1.0) / eta == pytest.approx(0.99995, abs=1e-5)
    assert discriminator_lr(eta, 0.0) / eta == pytest.approx(4.54e-5, rel=1e-3)
    with pytest.raises(ValueError):
        discriminator_lr(0.0, 0.5)


@settings(max_examples=100, deadline=None)
@given(st.floats(-0.5, 1.5), st.floats(1e-4, 0.1))
def test_discriminator_lr_monotonic_and_bounded(mu, delta):
    lo, hi = discriminator_lr(1.0, mu), discriminator_lr(1.0, mu + delta)
    assert 0 < lo < hi < 1


def test_ema_uncorrected():
    assert ema(0.0, 1.0) == pytest.approx(0.01)
    assert ema(0.5, 0.5) == 0.5


def test_stepwise_lr():
    i_max = 7000
    assert stepwise_lr(0.002, 0, i_max) == 0.002
    assert stepwise_lr(0.002, 999, i_max) == 0.002
    assert stepwise_lr(0.002, 1000, i_max) == 0.001
    assert stepwise_lr(0.002, i_max, i_max) == pytest.approx(1.5625e-5, rel=1e-15)
    for bad in (-1, i_max + 1):
        with pytest.raises(BadIteration):
            stepwise_lr(0.002, bad, i_max)


def test_stepwise_lr_non_divisible_i_max():
    i_max = 100  # step length 100/7 = 14.29
    assert stepwise_lr(1.0, 14, i_max) == 1.0
    assert stepwise_lr(1.0, 15, i_max) == 0.5


# --------------------------------------------------------------------------
# cycle-consistency losses


def test_cycle_equal_outputs(rng):
    a = rng.normal(size=(8, 8))
    l_d, l_g = cycle_losses(0.2, 0.7, a, a, weight=5.0)
    assert l_d == pytest.approx(0.04 + 0.09)
    assert l_g == pytest.approx(0.49)
    assert cycle_losses(0.2, 0.7, a, a + 1, weight=0.0)[1] == pytest.approx(0.49)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), finite, finite)
def test_cycle_linear_in_weight(seed, d_real, d_fake):
    rng = np.random.default_rng(seed)
    a = PhasePair(*rng.normal(size=(2, 6, 6)))
    b = PhasePair(*rng.normal(size=(2, 6, 6)))
    msd = np.mean((a.stack() - b.stack()) ** 2)
    one = cycle_losses(d_real, d_fake, a, b, weight=1.0)[1]
    two = cycle_losses(d_real, d_fake, a, b, weight=2.0)[1]
    assert two - one == pytest.approx(msd, rel=1e-9, abs=1e-12)


def test_cycle_generator_conditioning():
    a = np.zeros((4, 4))
    l_d, l_g = cycle_losses(0.0, 0.5, a, a, d_fake_gen=0.1)
    assert l_d == 0.25
    assert l_g == pytest.approx(0.01)


def test_cycle_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        cycle_losses(0.0, 0.0, np.zeros((4, 4)), np.zeros((4, 5)))


def test_undo_ctf_inverts_division(rng):
    grid = Grid.square(16, 0.1)
    ctf_prime = np.exp(1j * rng.uniform(-3, 3, grid.shape)) * rng.uniform(0.5, 2, grid.shape)
    field = rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)
    blurred = ifft2(fft2(field) * ctf_prime)
    np.testing.assert_allclose(undo_ctf(blurred, ctf_prime), field, atol=1e-12)
    ctf_prime[3, 4] = 1e-8
    spec = fft2(undo_ctf(blurred, ctf_prime))
    assert abs(spec[3, 4]) < 1e-13
    # with the faux CTF divided out the cycle term vanishes
    _, l_g = cycle_losses(0.0, 0.0, field, ifft2(fft2(field) * 2.0), ctf_prime=np.full(grid.shape, 2.0))
    assert l_g == pytest.approx(0.0, abs=1e-25)
