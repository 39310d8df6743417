"""
Dual-polarization fiber propagation: symmetric split-step Fourier solution of
the Manakov equation with lumped EDFA amplification.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants
from scipy import fft as sfft

from .tx import DualPolWaveform

MANAKOV_FACTOR = 8.0 / 9.0


@dataclass(frozen=True)
class FiberParams:
    """
    Standard single-mode fiber span.

    Attributes
    ----------
    alpha : float
        Attenuation, dB/km.
    gamma : float
        Nonlinear coefficient, 1/(W km).
    dispersion_D : float
        ps/(nm km).
    span_length : float
        km.
    step_size : float
        Split-step length, m.
    reference_wavelength : float
        nm.
    """

    alpha: float = 0.2
    gamma: float = 1.3
    dispersion_D: float = 17.0
    span_length: float = 50.0
    step_size: float = 100.0
    reference_wavelength: float = 1550.0

    def __post_init__(self):
        if self.alpha < 0 or self.gamma < 0 or self.span_length <= 0 or self.step_size <= 0:
            raise ValueError("fiber parameters must be non-negative with positive lengths")
        n = self.span_length * 1e3 / self.step_size
        if abs(n - round(n)) > 1e-9:
            raise ValueError("step_size must divide span_length")

    @property
    def alpha_np(self) -> float:
        """Power attenuation in 1/m."""
        return self.alpha / (10 * np.log10(np.e)) / 1e3

    @property
    def gamma_si(self) -> float:
        """1/(W m)."""
        return self.gamma / 1e3

    @property
    def beta2(self) -> float:
        """Group velocity dispersion, s^2/m."""
        lam = self.reference_wavelength * 1e-9
        D = self.dispersion_D * 1e-6  # s/m^2
        return -D * lam**2 / (2 * np.pi * constants.c)

    @property
    def length_m(self) -> float:
        return self.span_length * 1e3

    @property
    def n_steps(self) -> int:
        return int(round(self.length_m / self.step_size))

    @property
    def span_loss_db(self) -> float:
        return self.alpha * self.span_length

    @property
    def carrier_frequency(self) -> float:
        return constants.c / (self.reference_wavelength * 1e-9)

    def uniform_steps(self) -> np.ndarray:
        return np.full(self.n_steps, self.step_size)


@dataclass(frozen=True)
class AmplifierParams:
    """
    Lumped EDFA.

    ``gain`` is in dB; ``None`` inside a link means "offset the span loss".
    """

    gain: float | None = None
    noise_figure: float = 4.5
    add_noise: bool = True

    def __post_init__(self):
        if self.gain is not None and self.gain < 0:
            raise ValueError("gain must be non-negative")


@dataclass(frozen=True)
class LinkConfig:
    n_spans: int = 10
    fiber: FiberParams = field(default_factory=FiberParams)
    amp: AmplifierParams = field(default_factory=AmplifierParams)
    seed: int = 0

    def __post_init__(self):
        if self.n_spans < 0:
            raise ValueError("n_spans must be non-negative")

    @property
    def total_dispersion(self) -> float:
        """Accumulated dispersion, ps/nm."""
        return self.fiber.dispersion_D * self.fiber.span_length * self.n_spans

    @property
    def span_gain_db(self) -> float:
        return self.fiber.span_loss_db if self.amp.gain is None else self.amp.gain


def angular_frequency(n: int, sample_rate: float) -> np.ndarray:
    return 2 * np.pi * sfft.fftfreq(n, d=1.0 / sample_rate)


def effective_length(alpha: float, h: float) -> float:
    """Length weighting the mid-step power over a step of length ``h``."""
    if alpha == 0:
        return h
    return 2.0 / alpha * np.sinh(alpha * h / 2)


def log_steps(fiber: FiberParams, n_steps: int) -> np.ndarray:
    """
    Step lengths with equal effective length per step (short where power is
    high).
    """
    a, L = fiber.alpha_np, fiber.length_m
    if a == 0:
        return np.full(n_steps, L / n_steps)
    k = np.arange(n_steps + 1)
    z = -np.log1p(-k / n_steps * (1 - np.exp(-a * L))) / a
    z[-1] = L
    return np.diff(z)


def split_step(samples, sample_rate: float, steps, alpha: float, beta2: float,
               gamma: float) -> np.ndarray:
    """
    Symmetric split-step over a sequence of steps.

    Adjacent linear half-steps are merged, so ``K`` steps cost ``K + 1``
    linear operators. The nonlinear operator of each step acts at its
    midpoint with the effective length of the step.

    Parameters
    ----------
    samples : np.ndarray
        ``(2, L)`` field in sqrt(W).
    alpha, beta2, gamma : float
        SI units (1/m, s^2/m, 1/(W m)); negate all three to back-propagate.
    """
    steps = np.asarray(steps, dtype=float)
    u = np.array(samples, dtype=complex)
    if not np.all(np.isfinite(u)):
        raise ValueError("field contains non-finite samples")
    if steps.size == 0:
        return u
    w = angular_frequency(u.shape[1], sample_rate)
    lin_rate = -alpha / 2 + 0.5j * beta2 * w**2
    cache = {}

    def linear(U, h):
        key = round(h, 9)
        if key not in cache:
            cache[key] = np.exp(lin_rate * h)
        return U * cache[key]

    U = sfft.fft(u, axis=1)
    bounds = np.concatenate([[steps[0] / 2], (steps[:-1] + steps[1:]) / 2, [steps[-1] / 2]])
    for i, h in enumerate(steps):
        U = linear(U, bounds[i])
        if gamma != 0:
            u = sfft.ifft(U, axis=1)
            p = u[0].real ** 2 + u[0].imag ** 2 + u[1].real ** 2 + u[1].imag ** 2
            u *= np.exp(1j * MANAKOV_FACTOR * gamma * effective_length(alpha, h) * p)
            U = sfft.fft(u, axis=1)
    U = linear(U, bounds[-1])
    return sfft.ifft(U, axis=1)


def ssfm_span(field: DualPolWaveform, fiber: FiberParams, steps=None) -> DualPolWaveform:
    """Propagate over one span (no amplification)."""
    steps = fiber.uniform_steps() if steps is None else steps
    out = split_step(field.samples, field.sample_rate, steps, fiber.alpha_np,
                     fiber.beta2, fiber.gamma_si)
    return field.with_samples(out)


def ase_psd(gain_db: float, noise_figure_db: float, carrier_frequency: float) -> float:
    """ASE power spectral density per polarization, W/Hz."""
    G = 10 ** (gain_db / 10)
    n_sp = 10 ** (noise_figure_db / 10) / 2
    return n_sp * constants.h * carrier_frequency * (G - 1)


def edfa(field: DualPolWaveform, amp: AmplifierParams, rng=None,
         carrier_frequency: float = constants.c / 1550e-9) -> DualPolWaveform:
    """
    Amplify and add white ASE over the simulation bandwidth.

    Parameters
    ----------
    amp : AmplifierParams
        ``gain`` must be set.
    rng : numpy.random.Generator
        Required when ``amp.add_noise``.
    """
    if amp.gain is None:
        raise ValueError("amplifier gain must be set")
    out = field.samples * 10 ** (amp.gain / 20)
    if amp.add_noise:
        if rng is None:
            raise ValueError("a random generator is required for ASE noise")
        var = ase_psd(amp.gain, amp.noise_figure, carrier_frequency) * field.sample_rate
        noise = rng.standard_normal((2, 2, field.n_samples)) * np.sqrt(var / 2)
        out = out + noise[0] + 1j * noise[1]
    return field.with_samples(out)


def span_rng(seed: int, span_index: int) -> np.random.Generator:
    """Noise stream of one amplifier, independent of execution order."""
    return np.random.default_rng([int(seed), int(span_index)])


def propagate_link(field: DualPolWaveform, link: LinkConfig, snapshots=None):
    """
    ``n_spans`` x (fiber span, then EDFA offsetting the span loss).

    Parameters
    ----------
    snapshots : iterable of int, optional
        Span counts at which to keep a copy of the field.

    Returns
    -------
    DualPolWaveform, or ``(DualPolWaveform, dict)`` when snapshots are requested.
    """
    amp = replace(link.amp, gain=link.span_gain_db)
    keep = set(snapshots or ())
    taken = {0: field} if 0 in keep else {}
    f = field
    for s in range(link.n_spans):
        f = ssfm_span(f, link.fiber)
        f = edfa(f, amp, span_rng(link.seed, s), link.fiber.carrier_frequency)
        if s + 1 in keep:
            taken[s + 1] = f
    return (f, taken) if snapshots is not None else f
