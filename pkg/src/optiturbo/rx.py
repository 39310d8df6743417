"""
Coherent receiver front-end: channel selection, EDC or DBP, matched
filtering, pilot-aided carrier phase recovery.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import constants
from scipy import fft as sfft
from scipy.ndimage import uniform_filter1d

from .fiber import LinkConfig, log_steps, split_step
from .tx import (DualPolWaveform, frequency_shift, resample_fd,
                 rrc_frequency_response, rrc_taps)


@dataclass(frozen=True)
class RxConfig:
    """
    Attributes
    ----------
    compensation_mode : {"EDC", "DBP"}
    dbp_steps_per_span : int or "forward"
        ``"forward"`` reuses the forward solver's step grid.
    dbp_step_rule : {"log", "uniform"}
    total_dispersion : float or None
        ps/nm; taken from ``link_mirror`` when None.
    link_mirror : LinkConfig or None
        Link model that DBP inverts.
    sps : int
        Processing rate before the matched filter.
    cpr_window : int
        Pilots averaged by the phase estimator.
    """

    compensation_mode: str = "EDC"
    dbp_steps_per_span: int | str = 4
    dbp_step_rule: str = "log"
    total_dispersion: float | None = None
    link_mirror: LinkConfig | None = None
    sps: int = 2
    cpr_window: int = 5

    def __post_init__(self):
        if self.compensation_mode not in ("EDC", "DBP"):
            raise ValueError(f"unknown compensation mode {self.compensation_mode!r}")
        if self.compensation_mode == "DBP":
            if self.link_mirror is None:
                raise ValueError("DBP needs the link description")
            if self.dbp_steps_per_span != "forward" and int(self.dbp_steps_per_span) < 1:
                raise ValueError("dbp_steps_per_span must be at least 1")


@dataclass(frozen=True, eq=False)
class SymbolStream:
    """
    Received symbols at one sample per symbol.

    Attributes
    ----------
    symbols : np.ndarray
        ``(2, n_slots)`` complex, pilots included.
    pilot_positions : np.ndarray
    pilot_symbols : np.ndarray
        ``(2, n_pilots)`` known pilots.
    estimated_phase : np.ndarray
        ``(2, n_slots)`` phase removed by CPR, rad.
    """

    symbols: np.ndarray
    pilot_positions: np.ndarray
    pilot_symbols: np.ndarray | None = None
    estimated_phase: np.ndarray | None = None

    @property
    def symbols_x(self):
        return self.symbols[0]

    @property
    def symbols_y(self):
        return self.symbols[1]

    @property
    def payload_positions(self) -> np.ndarray:
        mask = np.ones(self.symbols.shape[1], bool)
        mask[self.pilot_positions] = False
        return np.flatnonzero(mask)

    @property
    def payload(self) -> np.ndarray:
        return self.symbols[:, self.payload_positions]


def channel_select(field: DualPolWaveform, channel_offset: float, bandwidth: float | None = None,
                   sample_rate: float | None = None) -> DualPolWaveform:
    """
    Move a WDM channel to baseband, brick-wall filter it and resample.

    Parameters
    ----------
    channel_offset : float
        Hz, same bin rounding as the multiplexer.
    bandwidth : float, optional
        Two-sided pass band, Hz; defaults to the channel's occupied band.
    sample_rate : float, optional
        Output rate; defaults to the input rate.
    """
    fs = field.sample_rate
    bw = field.bandwidth if bandwidth is None else bandwidth
    if abs(channel_offset) + bw / 2 > fs / 2 + 1e-6:
        raise ValueError("selected band exceeds the simulated spectrum")
    n = field.n_samples
    s, applied = frequency_shift(field.samples, fs, -channel_offset)
    S = sfft.fft(s, axis=1)
    S[:, np.abs(sfft.fftfreq(n, 1.0 / fs)) > bw / 2] = 0
    out_rate = fs if sample_rate is None else float(sample_rate)
    if bw > out_rate + 1e-6:
        raise ValueError("pass band exceeds the output Nyquist band")
    n_out = n * out_rate / fs
    if abs(n_out - round(n_out)) > 1e-9:
        raise ValueError("output rate must give an integer sample count")
    s = resample_fd(sfft.ifft(S, axis=1), int(round(n_out)))
    return replace(field, samples=s, sample_rate=out_rate,
                   center_frequency_offset=field.center_frequency_offset - applied)


def _accumulated_beta2z(total_dispersion: float, wavelength_nm: float) -> float:
    lam = wavelength_nm * 1e-9
    return -total_dispersion * 1e-3 * lam**2 / (2 * np.pi * constants.c)


def edc(field: DualPolWaveform, total_dispersion: float,
        reference_wavelength: float = 1550.0) -> DualPolWaveform:
    """Undo ``total_dispersion`` ps/nm of chromatic dispersion."""
    b2z = _accumulated_beta2z(total_dispersion, reference_wavelength)
    f = sfft.fftfreq(field.n_samples, 1.0 / field.sample_rate)
    H = np.exp(-2j * np.pi**2 * b2z * f**2)
    return field.with_samples(sfft.ifft(sfft.fft(field.samples, axis=1) * H, axis=1))


def dbp_steps(link: LinkConfig, steps_per_span, rule: str = "log") -> np.ndarray:
    """Forward-ordered step lengths of one span used by back-propagation."""
    if steps_per_span == "forward":
        return link.fiber.uniform_steps()
    k = int(steps_per_span)
    if rule == "log":
        return log_steps(link.fiber, k)
    if rule == "uniform":
        return np.full(k, link.fiber.length_m / k)
    raise ValueError(f"unknown step rule {rule!r}")


def dbp(field: DualPolWaveform, link_mirror: LinkConfig, steps_per_span=4,
        rule: str = "log", gamma_scale: float = 1.0) -> DualPolWaveform:
    """
    Back-propagate through ``link_mirror`` in reverse.

    Each span undoes the amplifier gain, then runs the split-step solver
    with negated loss, dispersion and nonlinearity over the reversed step
    list. The nonlinearity acts only on the power present in ``field``.
    """
    fib = link_mirror.fiber
    steps = dbp_steps(link_mirror, steps_per_span, rule)[::-1]
    g = 10 ** (-link_mirror.span_gain_db / 20)
    s = field.samples
    for _ in range(link_mirror.n_spans):
        s = split_step(s * g, field.sample_rate, steps, -fib.alpha_np, -fib.beta2,
                       -fib.gamma_si * gamma_scale)
    return field.with_samples(s)


def matched_filter_decimate(field: DualPolWaveform, rolloff: float | None = None,
                            sps: float | None = None, span_symbols: int = 64,
                            normalize: bool = True) -> np.ndarray:
    """
    RRC matched filter and sampling at the symbol centres.

    Returns
    -------
    np.ndarray
        ``(2, n_symbols)``, scaled to unit average power per polarization
        when ``normalize``.
    """
    rolloff = field.rolloff if rolloff is None else rolloff
    sps = field.sps if sps is None else sps
    n = field.n_samples
    if field.pulse == "fir":
        isps = int(round(sps))
        h = rrc_taps(isps, rolloff, span_symbols)
        y = np.stack([np.convolve(row, h) for row in field.samples])
        n_sym = int(round(n / sps)) - span_symbols
        start = int(round((field.delay_symbols + span_symbols / 2) * sps))
        idx = start + np.arange(n_sym) * isps
    else:
        y = sfft.ifft(sfft.fft(field.samples, axis=1) * rrc_frequency_response(n, sps, rolloff), axis=1)
        n_sym = int(round(n / sps))
        idx = np.rint((field.delay_symbols + np.arange(n_sym)) * sps).astype(np.int64)
    out = y[:, idx]
    if normalize:
        out = out / np.sqrt(np.mean(np.abs(out) ** 2, axis=1, keepdims=True))
    return out


def pilot_phase(symbols, pilot_positions, pilot_symbols, window: int = 5) -> np.ndarray:
    """
    Phase trajectory from pilots: per-pilot error, unwrapped, smoothed over
    ``window`` pilots and linearly interpolated to every slot.
    """
    symbols = np.atleast_2d(symbols)
    pilot_symbols = np.atleast_2d(pilot_symbols)
    slots = np.arange(symbols.shape[1])
    out = np.empty(symbols.shape)
    for p in range(symbols.shape[0]):
        err = np.unwrap(np.angle(symbols[p, pilot_positions] * np.conj(pilot_symbols[p])))
        if window > 1:
            err = uniform_filter1d(err, size=window, mode="nearest")
        out[p] = np.interp(slots, pilot_positions, err)
    return out


def pilot_cpr(stream: SymbolStream, pilots=None, window: int = 5) -> SymbolStream:
    """Remove the pilot-estimated phase from every slot."""
    pilots = stream.pilot_symbols if pilots is None else np.atleast_2d(pilots)
    phase = pilot_phase(stream.symbols, stream.pilot_positions, pilots, window)
    return replace(stream, symbols=stream.symbols * np.exp(-1j * phase),
                   pilot_symbols=pilots, estimated_phase=phase)


def pilot_gain(stream: SymbolStream) -> SymbolStream:
    """Scale each polarization so pilots have their nominal amplitude."""
    r = stream.symbols[:, stream.pilot_positions]
    p = stream.pilot_symbols
    g = np.sum(np.real(r * np.conj(p)), axis=1) / np.sum(np.abs(p) ** 2, axis=1)
    return replace(stream, symbols=stream.symbols / g[:, None])


def front_end(field: DualPolWaveform, cfg: RxConfig, pilot_positions, pilot_symbols,
              channel_offset: float = 0.0) -> SymbolStream:
    """Channel selection through CPR for one received channel."""
    rate = cfg.sps * field.symbol_rate
    sel = channel_select(field, channel_offset, sample_rate=rate)
    if cfg.compensation_mode == "DBP":
        sel = dbp(sel, cfg.link_mirror, cfg.dbp_steps_per_span, cfg.dbp_step_rule)
    else:
        D = cfg.total_dispersion
        if D is None:
            D = cfg.link_mirror.total_dispersion if cfg.link_mirror is not None else 0.0
        wl = cfg.link_mirror.fiber.reference_wavelength if cfg.link_mirror is not None else 1550.0
        sel = edc(sel, D, wl)
    sym = matched_filter_decimate(sel)
    stream = SymbolStream(sym, np.asarray(pilot_positions), np.atleast_2d(pilot_symbols))
    return pilot_gain(pilot_cpr(stream, window=cfg.cpr_window))


def save_symbols(stream: SymbolStream, path) -> None:
    """Raw little-endian float32 I/Q pairs, x block then y block."""
    flat = stream.symbols.reshape(-1)
    raw = np.empty(2 * flat.size, dtype="<f4")
    raw[0::2] = flat.real
    raw[1::2] = flat.imag
    raw.tofile(Path(path))


def load_symbols(path, n_slots: int | None = None) -> np.ndarray:
    raw = np.fromfile(Path(path), dtype="<f4")
    s = (raw[0::2] + 1j * raw[1::2]).astype(np.complex64)
    return s.reshape(2, -1 if n_slots is None else n_slots)
