import numpy as np
import pytest
from scipy import constants

from optiturbo.fiber import (AmplifierParams, FiberParams, LinkConfig, ase_psd, edfa,
                             effective_length, log_steps, propagate_link, ssfm_span)
from optiturbo.tx import DualPolWaveform, dbm_to_w, pulse_shape, wdm_mux

FS = 64e9


def _noise_field(rng, n=4096, scale=1e-2):
    return DualPolWaveform(scale * (rng.standard_normal((2, n)) + 1j * rng.standard_normal((2, n))), FS)


def test_beta2_value():
    f = FiberParams()
    # D = 17 ps/nm/km at 1550 nm -> about -21.7 ps^2/km
    assert f.beta2 * 1e27 == pytest.approx(-21.68, abs=0.01)


def test_parameter_validation():
    with pytest.raises(ValueError):
        FiberParams(step_size=300.0, span_length=50.0 + 1e-4)
    with pytest.raises(ValueError):
        FiberParams(alpha=-0.1)
    with pytest.raises(ValueError):
        AmplifierParams(gain=-1.0)
    with pytest.raises(ValueError):
        LinkConfig(n_spans=-1)


def test_linear_dispersion_matches_transfer_function(rng):
    f = FiberParams(alpha=0.0, gamma=0.0)
    wf = _noise_field(rng)
    out = ssfm_span(wf, f).samples
    fr = np.fft.fftfreq(wf.n_samples, 1 / FS)
    want = np.fft.ifft(np.fft.fft(wf.samples) * np.exp(2j * np.pi**2 * f.beta2 * fr**2 * f.length_m))
    assert np.linalg.norm(out - want) / np.linalg.norm(want) < 1e-8
    assert np.sum(np.abs(out) ** 2) == pytest.approx(np.sum(np.abs(wf.samples) ** 2), rel=1e-12)


def test_dispersionless_spm_analytic(rng):
    f = FiberParams(alpha=0.0, dispersion_D=0.0)
    u = np.zeros((2, 1024), complex)
    u[0] = 0.05 * (rng.standard_normal(1024) + 1j * rng.standard_normal(1024))
    out = ssfm_span(DualPolWaveform(u, FS), f).samples
    want = u[0] * np.exp(1j * 8 / 9 * f.gamma_si * np.abs(u[0]) ** 2 * f.length_m)
    assert np.max(np.abs(out[0] - want) / np.abs(want)) < 1e-9
    assert np.max(np.abs(out[1])) < 1e-12


def test_span_loss_is_ten_db(rng):
    f = FiberParams(gamma=0.0)
    wf = _noise_field(rng)
    out = ssfm_span(wf, f)
    assert 10 * np.log10(out.power / wf.power) == pytest.approx(-10.0, abs=1e-9)


def test_effective_length_limits():
    assert effective_length(0.0, 100.0) == 100.0
    a = FiberParams().alpha_np
    assert effective_length(a, 100.0) == pytest.approx(100.0, rel=1e-6)


def test_log_steps_sum_and_equal_effective_length():
    f = FiberParams()
    h = log_steps(f, 4)
    assert h.sum() == pytest.approx(f.length_m)
    assert np.all(np.diff(h) > 0)
    # equal integrated power per step
    z = np.concatenate([[0], np.cumsum(h)])
    energy = np.diff(-np.exp(-f.alpha_np * z))
    assert np.allclose(energy, energy[0])


def test_edfa_noiseless_gain_and_composition(rng):
    wf = _noise_field(rng)
    g10 = edfa(wf, AmplifierParams(10.0, add_noise=False)).samples
    assert np.allclose(g10, wf.samples * 10**0.5, rtol=0, atol=1e-15)
    g55 = edfa(edfa(wf, AmplifierParams(5.0, add_noise=False)), AmplifierParams(5.0, add_noise=False))
    assert np.max(np.abs(g55.samples - g10)) < 1e-12 * np.max(np.abs(g10))


def test_edfa_noise_variance():
    wf = DualPolWaveform(np.zeros((2, 500_000)), FS)
    out = edfa(wf, AmplifierParams(10.0, 4.5), np.random.default_rng(1))
    nu = constants.c / 1550e-9
    want = ase_psd(10.0, 4.5, nu) * FS
    assert np.mean(np.abs(out.samples) ** 2) == pytest.approx(want, rel=0.02)
    # n_sp h nu (G - 1)
    assert ase_psd(10.0, 4.5, nu) == pytest.approx(10**0.45 / 2 * constants.h * nu * 9)


def test_edfa_needs_gain_and_rng(rng):
    wf = _noise_field(rng)
    with pytest.raises(ValueError):
        edfa(wf, AmplifierParams())
    with pytest.raises(ValueError):
        edfa(wf, AmplifierParams(10.0))


def test_non_finite_rejected():
    u = np.zeros((2, 8), complex)
    u[0, 3] = np.nan
    with pytest.raises(ValueError):
        ssfm_span(DualPolWaveform(u, FS), FiberParams())


def _signal(rng, n_ch=1, n_sym=1024, power_dbm=0.0, sim_sps=4):
    lv = np.array([-3, -1, 1, 3]) / np.sqrt(10)
    chans = [pulse_shape(rng.choice(lv, (2, n_sym)) + 1j * rng.choice(lv, (2, n_sym)), 4, 0.01)
             for _ in range(n_ch)]
    return wdm_mux(chans, 37.5e9, float(dbm_to_w(power_dbm)), sim_sps * 32e9)


def test_zero_spans_identity(rng):
    wf = _signal(rng)
    assert propagate_link(wf, LinkConfig(0)) is wf


def test_low_power_link_matches_linear_response(rng):
    wf = _signal(rng, power_dbm=-50.0)
    link = LinkConfig(1, FiberParams(), AmplifierParams(add_noise=False))
    out = propagate_link(wf, link)
    fr = np.fft.fftfreq(wf.n_samples, 1 / wf.sample_rate)
    f = link.fiber
    # ideal EDC removes the analytic dispersion; gain offsets the loss
    back = np.fft.ifft(np.fft.fft(out.samples) * np.exp(-2j * np.pi**2 * f.beta2 * fr**2 * f.length_m))
    evm = np.mean(np.abs(back - wf.samples) ** 2) / np.mean(np.abs(wf.samples) ** 2)
    assert 10 * np.log10(evm) < -40


def test_link_determinism_and_snapshots(rng):
    wf = _signal(rng, n_sym=256)
    link = LinkConfig(3, FiberParams(step_size=1000.0), AmplifierParams(), seed=42)
    a, snaps = propagate_link(wf, link, snapshots=[1, 3])
    b = propagate_link(wf, link)
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(snaps[3].samples, a.samples)
    one = propagate_link(wf, LinkConfig(1, link.fiber, link.amp, seed=42))
    assert np.array_equal(one.samples, snaps[1].samples)
    other = propagate_link(wf, LinkConfig(3, link.fiber, link.amp, seed=43))
    assert not np.array_equal(other.samples, a.samples)


@pytest.mark.parametrize("n_spans", [1, 5, 10])
def test_osnr_cascade(n_spans, rng):
    wf = _signal(rng, n_sym=4096, power_dbm=0.0)
    fiber = FiberParams(gamma=0.0, step_size=50_000.0)
    noisy = propagate_link(wf, LinkConfig(n_spans, fiber, AmplifierParams(), seed=5))
    clean = propagate_link(wf, LinkConfig(n_spans, fiber, AmplifierParams(add_noise=False)))
    noise_psd = np.mean(np.sum(np.abs(noisy.samples - clean.samples) ** 2, axis=0)) / wf.sample_rate
    ref_bw = 12.5e9
    osnr_meas = 10 * np.log10(clean.power / (noise_psd * ref_bw))
    s_ase = ase_psd(fiber.span_loss_db, 4.5, fiber.carrier_frequency)
    osnr_ref = 10 * np.log10(clean.power / (n_spans * 2 * s_ase * ref_bw))
    assert osnr_meas == pytest.approx(osnr_ref, abs=0.2)


def step_halving_errors():
    """Relative L2 deviation of 200 m and 100 m solutions from a 25 m reference."""
    rng = np.random.default_rng(11)
    wf = _signal(rng, n_ch=3, n_sym=512, power_dbm=6.0, sim_sps=8)
    sol = {h: ssfm_span(wf, FiberParams(step_size=h)).samples for h in (200.0, 100.0, 25.0)}
    ref = sol[25.0]
    return [np.linalg.norm(sol[h] - ref) / np.linalg.norm(ref) for h in (200.0, 100.0)]


def test_step_halving_second_order():
    e200, e100 = step_halving_errors()
    assert e200 / e100 == pytest.approx(4.0, abs=0.5)
