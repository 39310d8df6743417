"""
Transmitter: symbol interleaving, pilot insertion, RRC pulse shaping, WDM
multiplexing and the raw waveform file format.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import fft as sfft


@dataclass(frozen=True, eq=False)
class DualPolWaveform:
    """
    Complex baseband field of both polarizations.

    Attributes
    ----------
    samples : np.ndarray
        ``(2, L)`` complex array, rows x and y, in sqrt(W) once launched.
    sample_rate : float
        Hz.
    center_frequency_offset : float
        Offset of the baseband origin from the reference carrier, Hz.
    symbol_rate : float or None
        Symbol rate of a single-channel waveform.
    rolloff : float or None
    delay_symbols : float
        Time of the first symbol centre, in symbol periods (non-zero for
        waveforms shaped with a causal FIR).
    """

    samples: np.ndarray
    sample_rate: float
    center_frequency_offset: float = 0.0
    symbol_rate: float | None = None
    rolloff: float | None = None
    delay_symbols: float = 0.0
    pulse: str = "fd"

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex)
        if s.ndim != 2 or s.shape[0] != 2:
            raise ValueError("samples must have shape (2, L)")
        object.__setattr__(self, "samples", s)

    @property
    def samples_x(self) -> np.ndarray:
        return self.samples[0]

    @property
    def samples_y(self) -> np.ndarray:
        return self.samples[1]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def sps(self) -> float:
        return self.sample_rate / self.symbol_rate

    @property
    def bandwidth(self) -> float:
        return (1.0 + self.rolloff) * self.symbol_rate

    @property
    def power(self) -> float:
        """Average total power over both polarizations."""
        return float(np.mean(np.sum(np.abs(self.samples) ** 2, axis=0)))

    def with_samples(self, samples) -> "DualPolWaveform":
        return replace(self, samples=samples)


def dbm_to_w(p_dbm):
    return 1e-3 * 10 ** (np.asarray(p_dbm) / 10)


def w_to_dbm(p_w):
    return 10 * np.log10(np.asarray(p_w) / 1e-3)


# --- interleaver and pilots -------------------------------------------------

def _permutation(n: int, seed) -> np.ndarray:
    return np.random.default_rng(seed).permutation(n)


def interleave(symbols, seed, axis: int = -1) -> np.ndarray:
    """Seeded uniform permutation of the symbols along ``axis``."""
    symbols = np.asarray(symbols)
    perm = _permutation(symbols.shape[axis], seed)
    return np.take(symbols, perm, axis=axis)


def deinterleave(symbols, seed, axis: int = -1) -> np.ndarray:
    symbols = np.moveaxis(np.asarray(symbols), axis, -1)
    perm = _permutation(symbols.shape[-1], seed)
    out = np.empty_like(symbols)
    out[..., perm] = symbols
    return np.moveaxis(out, -1, axis)


def qpsk_pilots(n: int, seed, rms: float = 1.0, n_pol: int = 2) -> np.ndarray:
    """Independent QPSK pilots per polarization, ``(n_pol, n)``."""
    b = np.random.default_rng(seed).integers(0, 2, size=(2, n_pol, n))
    return rms * ((1 - 2 * b[0]) + 1j * (1 - 2 * b[1])) / np.sqrt(2)


@dataclass(frozen=True, eq=False)
class SymbolFrame:
    """
    Payload and pilot symbols of both polarizations on a common slot grid.

    Attributes
    ----------
    payload : np.ndarray
        ``(2, n_payload)`` complex.
    pilot_positions : np.ndarray
        Slot indices holding pilots.
    pilot_symbols : np.ndarray
        ``(2, n_pilots)`` complex.
    frames_per_block : int
        LDPC blocks carried per polarization.
    """

    payload: np.ndarray
    pilot_positions: np.ndarray
    pilot_symbols: np.ndarray
    frames_per_block: int = 1

    @property
    def n_slots(self) -> int:
        return self.payload.shape[1] + self.pilot_positions.size

    @property
    def payload_positions(self) -> np.ndarray:
        mask = np.ones(self.n_slots, bool)
        mask[self.pilot_positions] = False
        return np.flatnonzero(mask)

    @property
    def pilot_fraction(self) -> float:
        return self.pilot_positions.size / self.n_slots

    @property
    def symbols(self) -> np.ndarray:
        out = np.empty((2, self.n_slots), dtype=complex)
        out[:, self.pilot_positions] = self.pilot_symbols
        out[:, self.payload_positions] = self.payload
        return out


def pilot_layout(n_payload: int, rate: float):
    """Slot indices of pilots: one pilot opens every group of floor(1/rate) slots."""
    if not 0 < rate < 1:
        raise ValueError("pilot rate must lie in (0, 1)")
    spacing = int(np.floor(1.0 / rate + 1e-9))
    n_pilots = -(-n_payload // (spacing - 1))
    return np.arange(n_pilots) * spacing, n_pilots + n_payload


def insert_pilots(symbols, rate: float, pilot_seed, rms: float = 1.0,
                  frames_per_block: int = 1) -> SymbolFrame:
    """
    Place QPSK pilots of the given RMS on a regular grid.

    Parameters
    ----------
    symbols : array_like
        ``(2, n)`` payload symbols (a 1-D input is used for both rows).
    rate : float
        Pilot fraction; spacing is ``floor(1/rate)`` slots.
    pilot_seed : int or SeedSequence
    """
    payload = np.atleast_2d(np.asarray(symbols, dtype=complex))
    if payload.shape[0] == 1:
        payload = np.vstack([payload, payload])
    pos, _ = pilot_layout(payload.shape[1], rate)
    pilots = qpsk_pilots(pos.size, pilot_seed, rms)
    return SymbolFrame(payload, pos, pilots, frames_per_block)


def remove_pilots(frame_or_symbols, pilot_positions=None) -> np.ndarray:
    if isinstance(frame_or_symbols, SymbolFrame):
        return frame_or_symbols.payload.copy()
    s = np.asarray(frame_or_symbols)
    mask = np.ones(s.shape[-1], bool)
    mask[pilot_positions] = False
    return s[..., mask]


# --- pulse shaping ----------------------------------------------------------

def raised_cosine_spectrum(f, rolloff: float) -> np.ndarray:
    """Raised-cosine spectrum; ``f`` in units of the symbol rate."""
    f = np.abs(np.asarray(f, dtype=float))
    lo, hi = (1 - rolloff) / 2, (1 + rolloff) / 2
    out = np.where(f <= lo, 1.0, 0.0)
    band = (f > lo) & (f < hi)
    out[band] = 0.5 * (1 + np.cos(np.pi / rolloff * (f[band] - lo)))
    return out


def rrc_frequency_response(n_samples: int, sps: float, rolloff: float) -> np.ndarray:
    """
    Sampled RRC response on the FFT grid of an ``n_samples`` periodic signal.

    Scaled so the periodic pulse has unit energy; cascading two gives an
    exact Nyquist pulse with unit centre tap.
    """
    f = sfft.fftfreq(n_samples, d=1.0 / sps)
    return np.sqrt(sps * raised_cosine_spectrum(f, rolloff))


def rrc_taps(sps: int, rolloff: float, span_symbols: int) -> np.ndarray:
    """Unit-energy RRC impulse response with ``span_symbols * sps + 1`` taps."""
    t = np.arange(-span_symbols * sps // 2, span_symbols * sps // 2 + 1) / sps
    b = rolloff
    h = np.empty_like(t)
    zero = np.isclose(t, 0)
    sing = np.isclose(np.abs(t), 1 / (4 * b))
    reg = ~(zero | sing)
    tr = t[reg]
    h[reg] = (np.sin(np.pi * tr * (1 - b)) + 4 * b * tr * np.cos(np.pi * tr * (1 + b))) / (
        np.pi * tr * (1 - (4 * b * tr) ** 2))
    h[zero] = 1 - b + 4 * b / np.pi
    h[sing] = b / np.sqrt(2) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * b))
                                + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b)))
    return h / np.linalg.norm(h)


def pulse_shape(frame, sps: int, rolloff: float, span_symbols: int = 64,
                symbol_rate: float = 32e9, method: str = "fd") -> DualPolWaveform:
    """
    Upsample and filter with a unit-energy RRC.

    Parameters
    ----------
    frame : SymbolFrame or array_like
        Symbols, ``(2, n)``.
    sps : int
        Samples per symbol, at least 2.
    rolloff : float
    span_symbols : int
        FIR length in symbols; only used by ``method="fir"``.
    method : {"fd", "fir"}
        ``"fd"`` filters the periodic frame in the frequency domain (exact
        Nyquist pair, no transient). ``"fir"`` convolves with truncated taps,
        keeping the transient; symbol centres then start at
        ``span_symbols / 2`` symbol periods.
    """
    if sps < 2:
        raise ValueError("sps must be at least 2")
    if not 0 < rolloff <= 1:
        raise ValueError("rolloff must lie in (0, 1]")
    sym = frame.symbols if isinstance(frame, SymbolFrame) else np.atleast_2d(frame)
    n = sym.shape[1]
    up = np.zeros((sym.shape[0], n * sps), dtype=complex)
    up[:, ::sps] = sym
    if method == "fd":
        out = sfft.ifft(sfft.fft(up, axis=1) * rrc_frequency_response(n * sps, sps, rolloff), axis=1)
        delay = 0.0
    elif method == "fir":
        h = rrc_taps(sps, rolloff, span_symbols)
        out = np.stack([np.convolve(row, h) for row in up])[:, : n * sps + span_symbols * sps]
        delay = span_symbols / 2
    else:
        raise ValueError(f"unknown pulse shaping method {method!r}")
    if out.shape[0] == 1:
        out = np.vstack([out, np.zeros_like(out)])
    return DualPolWaveform(out, sps * symbol_rate, 0.0, symbol_rate, rolloff, delay, method)


# --- resampling and WDM -----------------------------------------------------

def resample_fd(samples, n_out: int) -> np.ndarray:
    """
    Band-limited resampling of periodic rows by spectral padding or cropping.

    Sample values (not energy) are preserved for band-limited content.
    """
    samples = np.atleast_2d(samples)
    n_in = samples.shape[1]
    if n_out == n_in:
        return samples.copy()
    X = sfft.fft(samples, axis=1)
    Y = np.zeros((samples.shape[0], n_out), dtype=complex)
    keep = min(n_in, n_out)
    pos = (keep + 1) // 2
    neg = keep // 2
    Y[:, :pos] = X[:, :pos]
    if neg:
        Y[:, -neg:] = X[:, -neg:]
    return sfft.ifft(Y, axis=1) * (n_out / n_in)


def _bin_shift(n: int, sample_rate: float, offset: float) -> int:
    return int(round(offset * n / sample_rate))


def frequency_shift(samples, sample_rate: float, offset: float):
    """
    Circular frequency shift by a whole number of FFT bins.

    Returns the shifted rows and the offset actually applied.
    """
    samples = np.atleast_2d(samples)
    n = samples.shape[1]
    k = _bin_shift(n, sample_rate, offset)
    out = sfft.ifft(np.roll(sfft.fft(samples, axis=1), k, axis=1), axis=1)
    return out, k * sample_rate / n


def wdm_mux(channels, grid_spacing: float, per_channel_power: float,
            sample_rate: float | None = None) -> DualPolWaveform:
    """
    Frequency-multiplex channels around the central one.

    Parameters
    ----------
    channels : list of DualPolWaveform
        Odd count; channel ``len // 2`` lands at 0 Hz.
    grid_spacing : float
        Hz.
    per_channel_power : float
        Average total (both polarizations) power per channel, W.
    sample_rate : float, optional
        Aggregate simulation rate; defaults to the channels' own rate.
    """
    n_ch = len(channels)
    if n_ch % 2 == 0:
        raise ValueError("channel count must be odd so a central channel exists")
    ref = channels[0]
    fs = ref.sample_rate if sample_rate is None else float(sample_rate)
    n_out = ref.n_samples * fs / ref.sample_rate
    if abs(n_out - round(n_out)) > 1e-9:
        raise ValueError("aggregate rate must give an integer sample count")
    n_out = int(round(n_out))
    c = n_ch // 2
    total = np.zeros((2, n_out), dtype=complex)
    for i, ch in enumerate(channels):
        if ch.n_samples != ref.n_samples or ch.sample_rate != ref.sample_rate:
            raise ValueError("all channels must share length and sample rate")
        offset = (i - c) * grid_spacing
        half_bw = 0.5 * (ch.bandwidth if ch.symbol_rate else ch.sample_rate)
        if abs(offset) + half_bw > fs / 2:
            raise ValueError(
                f"channel {i} at {offset / 1e9:.1f} GHz exceeds the Nyquist band of {fs / 1e9:.1f} GS/s")
        s = resample_fd(ch.samples, n_out)
        s *= np.sqrt(per_channel_power / np.mean(np.sum(np.abs(s) ** 2, axis=0)))
        shifted, _ = frequency_shift(s, fs, offset)
        total += shifted
    return replace(ref, samples=total, sample_rate=fs, center_frequency_offset=0.0)


# --- raw waveform files -----------------------------------------------------

def save_waveform(wf: DualPolWaveform, path) -> None:
    """
    Raw little-endian float64 I/Q pairs, x block then y block, plus a JSON
    header at ``<path>.json``.
    """
    path = Path(path)
    raw = np.empty(4 * wf.n_samples, dtype="<f8")
    flat = wf.samples.reshape(-1)
    raw[0::2] = flat.real
    raw[1::2] = flat.imag
    raw.tofile(path)
    header = {
        "sample_rate": wf.sample_rate,
        "length": wf.n_samples,
        "center_frequency_offset": wf.center_frequency_offset,
        "symbol_rate": wf.symbol_rate,
        "rolloff": wf.rolloff,
        "delay_symbols": wf.delay_symbols,
        "pulse": wf.pulse,
    }
    path.with_name(path.name + ".json").write_text(json.dumps(header, indent=1))


def load_waveform(path) -> DualPolWaveform:
    path = Path(path)
    header = json.loads(path.with_name(path.name + ".json").read_text())
    raw = np.fromfile(path, dtype="<f8")
    n = int(header.pop("length"))
    if raw.size != 4 * n:
        raise ValueError(f"{path}: expected {4 * n} values, found {raw.size}")
    samples = (raw[0::2] + 1j * raw[1::2]).reshape(2, n)
    return DualPolWaveform(samples, **header)
