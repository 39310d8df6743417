import numpy as np
import pytest
from hypothesis import given, strategies as st

from optiturbo.tx import (DualPolWaveform, dbm_to_w, deinterleave, insert_pilots, interleave,
                          load_waveform, pilot_layout, pulse_shape, qpsk_pilots,
                          raised_cosine_spectrum, remove_pilots, rrc_taps, save_waveform,
                          w_to_dbm, wdm_mux)
from optiturbo.rx import matched_filter_decimate


def _qam16(rng, shape):
    lv = np.array([-3, -1, 1, 3]) / np.sqrt(10)
    return rng.choice(lv, shape) + 1j * rng.choice(lv, shape)


@given(st.integers(1, 500), st.integers(0, 2**32 - 1))
def test_interleaver_roundtrip_and_permutation(n, seed):
    x = np.random.default_rng(seed).normal(size=n)
    y = interleave(x, seed)
    assert np.array_equal(np.sort(y), np.sort(x))
    assert np.array_equal(deinterleave(y, seed), x)


def test_interleaver_length_one_and_axis():
    assert interleave(np.array([5.0]), 3)[0] == 5.0
    x = np.arange(20).reshape(2, 10)
    y = interleave(x, 9, axis=1)
    assert np.array_equal(y[0] + 10, y[1])
    assert np.array_equal(deinterleave(y, 9, axis=1), x)


def test_pilot_layout_five_percent():
    pos, n_slots = pilot_layout(1900, 0.05)
    assert pos.size == 100 and n_slots == 2000
    assert np.all(np.diff(pos) == 20)


def test_pilot_layout_half_alternates():
    frame = insert_pilots(np.arange(1, 11), 0.5, 1)
    assert np.array_equal(frame.pilot_positions, np.arange(0, 20, 2))
    assert np.array_equal(frame.symbols[0, 1::2], np.arange(1, 11))


def test_pilot_rate_validation():
    with pytest.raises(ValueError):
        pilot_layout(10, 1.0)
    with pytest.raises(ValueError):
        pilot_layout(10, 0.0)


@given(st.integers(20, 3000))
def test_pilot_fraction_and_inverse(n):
    rng = np.random.default_rng(n)
    x = _qam16(rng, (2, n))
    frame = insert_pilots(x, 0.05, 7)
    # 5 % within one symbol
    assert abs(frame.pilot_positions.size - 0.05 * frame.n_slots) <= 1
    assert np.array_equal(remove_pilots(frame), x)
    assert np.array_equal(remove_pilots(frame.symbols, frame.pilot_positions), x)


def test_pilots_constant_modulus_and_independent():
    p = qpsk_pilots(1000, 3)
    assert p.shape == (2, 1000)
    assert np.allclose(np.abs(p), 1.0)
    assert not np.array_equal(p[0], p[1])


def test_rrc_impulse_response():
    sps = 16
    s = np.zeros((2, 64), complex)
    s[0, 32] = 1
    w = pulse_shape(s, sps, 0.01, method="fir", span_symbols=32)
    h = rrc_taps(sps, 0.01, 32)
    assert np.allclose(w.samples[0, 32 * sps: 32 * sps + h.size], h)
    assert np.argmax(np.abs(h)) == h.size // 2
    # FIR output length: 16 x symbols + transient
    assert w.n_samples == 64 * sps + 32 * sps


def test_rrc_cascade_is_nyquist():
    sps, span = 16, 1024
    h = rrc_taps(sps, 0.01, span)
    rc = np.convolve(h, h)
    c = rc.size // 2
    taps = rc[c % sps::sps]
    centre = rc[c]
    off = np.delete(taps, np.flatnonzero(np.arange(c % sps, rc.size, sps) == c))
    # a truncated 0.01-rolloff pulse decays slowly; with a long span ISI is small
    assert np.max(np.abs(off)) < 1e-3 * centre


def test_fd_pulse_is_exact_nyquist_pair(rng):
    s = _qam16(rng, (2, 1024))
    w = pulse_shape(s, 16, 0.01)
    assert w.sample_rate == 16 * 32e9 and w.n_samples == 16 * 1024
    r = matched_filter_decimate(w, normalize=False)
    err = np.mean(np.abs(r - s) ** 2) / np.mean(np.abs(s) ** 2)
    assert 10 * np.log10(err) < -45


def test_raised_cosine_spectrum_values():
    assert raised_cosine_spectrum([0.0, 0.4], 0.1).tolist() == [1.0, 1.0]
    assert raised_cosine_spectrum([0.5], 0.1)[0] == pytest.approx(0.5)
    assert raised_cosine_spectrum([0.6], 0.1)[0] == 0.0


def test_pulse_validation(rng):
    s = _qam16(rng, (2, 16))
    with pytest.raises(ValueError):
        pulse_shape(s, 1, 0.1)
    with pytest.raises(ValueError):
        pulse_shape(s, 4, 0.0)
    with pytest.raises(ValueError):
        pulse_shape(s, 4, 0.1, method="iir")


def _channels(rng, n_ch, n_sym=2048, sps=4):
    return [pulse_shape(_qam16(rng, (2, n_sym)), sps, 0.01) for _ in range(n_ch)]


def test_single_channel_mux_is_scaled_identity(rng):
    (ch,) = _channels(rng, 1)
    out = wdm_mux([ch], 37.5e9, 1e-3)
    assert out.power == pytest.approx(1e-3)
    assert np.allclose(out.samples, ch.samples * np.sqrt(1e-3 / ch.power))


def test_three_channel_spectrum_and_power(rng):
    chans = _channels(rng, 3)
    fs = 8 * 32e9
    out = wdm_mux(chans, 37.5e9, dbm_to_w(0.0), fs)
    assert 10 * np.log10(out.power / (3 * dbm_to_w(0.0))) == pytest.approx(0, abs=0.01)
    spec = np.sum(np.abs(np.fft.fft(out.samples, axis=1)) ** 2, axis=0)
    f = np.fft.fftfreq(out.n_samples, 1 / fs)
    centres = []
    for lo, hi in [(-60e9, -20e9), (-16e9, 16e9), (20e9, 60e9)]:
        band = (f > lo) & (f < hi)
        centres.append(np.sum(f[band] * spec[band]) / np.sum(spec[band]))
    assert np.allclose(centres, [-37.5e9, 0, 37.5e9], atol=0.2e9)


def test_mux_rejects_aliasing_and_even_count(rng):
    chans = _channels(rng, 3)
    with pytest.raises(ValueError):
        wdm_mux(chans, 37.5e9, 1e-3, 2 * 32e9)
    with pytest.raises(ValueError):
        wdm_mux(chans[:2], 37.5e9, 1e-3, 8 * 32e9)


def test_dbm_conversion():
    assert dbm_to_w(0.0) == pytest.approx(1e-3)
    assert w_to_dbm(dbm_to_w(-2.5)) == pytest.approx(-2.5)


def test_waveform_file_roundtrip(tmp_path, rng):
    w = pulse_shape(_qam16(rng, (2, 64)), 4, 0.1)
    save_waveform(w, tmp_path / "w.bin")
    raw = np.fromfile(tmp_path / "w.bin", dtype="<f8")
    assert raw.size == 4 * w.n_samples
    assert raw[0] == w.samples[0, 0].real and raw[1] == w.samples[0, 0].imag
    assert raw[2 * w.n_samples] == w.samples[1, 0].real
    back = load_waveform(tmp_path / "w.bin")
    assert np.array_equal(back.samples, w.samples)
    assert back.sample_rate == w.sample_rate and back.rolloff == w.rolloff


def test_waveform_shape_check():
    with pytest.raises(ValueError):
        DualPolWaveform(np.zeros((3, 4)), 1.0)


def test_tx_chain_deterministic():
    from optiturbo.config import ExperimentConfig
    from optiturbo.harness import channel_frame, system_for

    cfg = ExperimentConfig.from_dict({"modulation": "uniform256"})
    a = channel_frame(system_for(cfg), cfg, 0, 1)
    b = channel_frame(system_for(cfg), cfg, 0, 1)
    assert np.array_equal(a.frame.symbols, b.frame.symbols)
