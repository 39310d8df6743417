import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from optiturbo import constellation as cst
from optiturbo.harness import label_index
from optiturbo.ldpc import build_code, encode
from optiturbo.rx import SymbolStream
from optiturbo.tx import insert_pilots
from optiturbo.turbo import (
    ChannelEstimate, FrameLayout, SoftSymbols, TurboConfig, center_indices, lmmse_equalize,
    posterior_llrs, rls_update, soft_map, turbo_run,
)

QAM16_MB = cst.mb_prior(cst.build_qam(16), 3.0)
QAM16 = cst.build_qam(16)


def enum_soft(L, c):
    """Brute-force posterior moments: one term per constellation point."""
    out_m, out_v = [], []
    for row in L:
        w = np.array([c.prior[j] * np.prod([1 / (1 + np.exp(-row[b])) if c.labels[j, b] == 0
                                            else 1 / (1 + np.exp(row[b])) for b in range(len(row))])
                      for j in range(c.order)])
        w /= w.sum()
        m = np.sum(w * c.points)
        out_m.append(m)
        out_v.append(np.sum(w * np.abs(c.points) ** 2) - abs(m) ** 2)
    return np.array(out_m), np.array(out_v)


def enum_llrs(y, mu, eta, c):
    out = np.empty((y.size, c.bits_per_symbol))
    for i in range(y.size):
        p = c.prior * np.exp(-np.abs(y[i] - mu * c.points) ** 2 / eta)
        for b in range(c.bits_per_symbol):
            out[i, b] = np.log(p[c.labels[:, b] == 0].sum() / p[c.labels[:, b] == 1].sum())
    return out


# --- soft mapping -------------------------------------------------------------

@pytest.mark.parametrize("c", [QAM16, QAM16_MB], ids=["uniform", "mb"])
def test_soft_map_matches_enumeration(c, rng):
    L = rng.normal(0, 4, (50, 4))
    s = soft_map(L, c)
    m, v = enum_soft(L, c)
    np.testing.assert_allclose(s.mean, m, atol=1e-9, rtol=0)
    np.testing.assert_allclose(s.variance, v, atol=1e-9, rtol=0)


def test_soft_map_zero_llrs_gives_prior_moments():
    for c in (cst.build_qam(256), cst.mb_prior(cst.build_qam(1024), 8.5)):
        s = soft_map(np.zeros((3, c.bits_per_symbol)), c)
        np.testing.assert_allclose(s.mean, 0, atol=1e-12)
        np.testing.assert_allclose(s.variance, 1, atol=1e-12)


def test_soft_map_certain_llrs_pick_the_symbol():
    c = cst.mb_prior(cst.build_qam(1024), 8.5)
    j = np.array([0, 517, 1023])
    L = 30.0 * (1 - 2.0 * c.labels[j])
    s = soft_map(L, c)
    np.testing.assert_allclose(s.mean, c.points[j], atol=1e-9)
    assert np.all(s.variance < 1e-9)


@given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4))
def test_soft_map_finite_and_bounded(vals):
    s = soft_map(np.array([vals]), QAM16_MB)
    assert np.all(np.isfinite(s.mean)) and np.all(np.isfinite(s.variance))
    # confident LLRs on outer points push the variance above the mean energy
    assert 0 <= s.variance[0] <= np.max(np.abs(QAM16_MB.points)) ** 2 + 1e-12


# --- demapper -----------------------------------------------------------------

@pytest.mark.parametrize("c", [QAM16, QAM16_MB], ids=["uniform", "mb"])
@pytest.mark.parametrize("method", ["factorized", "full"])
def test_posterior_llrs_match_enumeration(c, method, rng):
    y = 1.2 * (rng.normal(size=40) + 1j * rng.normal(size=40))
    got = posterior_llrs(y, 0.8, 0.3, c, method=method)
    np.testing.assert_allclose(got, enum_llrs(y, 0.8, 0.3, c), atol=1e-9, rtol=0)


def test_posterior_llrs_complex_gain_uses_full_sum(rng):
    y = rng.normal(size=10) + 1j * rng.normal(size=10)
    mu = 0.7 * np.exp(0.3j)
    np.testing.assert_allclose(posterior_llrs(y, mu, 0.5, QAM16_MB), enum_llrs(y, mu, 0.5, QAM16_MB),
                               atol=1e-9)


def test_uninformative_channel_uniform_prior_gives_zero():
    got = posterior_llrs(np.array([0.3 + 0.1j, -1.0]), 1.0, 1e12, QAM16)
    np.testing.assert_allclose(got, 0, atol=1e-9)


def test_uninformative_channel_shaped_prior_gives_prior_ratio():
    c = QAM16_MB
    got = posterior_llrs(np.array([0.3 + 0.1j]), 1.0, 1e12, c)[0]
    want = [np.log(c.prior[c.labels[:, b] == 0].sum() / c.prior[c.labels[:, b] == 1].sum())
            for b in range(4)]
    np.testing.assert_allclose(got, want, atol=1e-6)
    # amplitude bits carry a prior, sign bits do not
    assert np.abs(got).max() > 0.1
    np.testing.assert_allclose(got[[0, 2]], 0, atol=1e-6)


def test_certain_channel_reproduces_label_and_hard_symbol():
    c = cst.mb_prior(cst.build_qam(1024), 8.5)
    j = np.argsort(np.abs(c.points))[:8]
    L = posterior_llrs(c.points[j], 1.0, 1e-4, c)
    assert np.array_equal((L < 0).astype(int), c.labels[j])
    np.testing.assert_allclose(soft_map(np.clip(L, -30, 30), c).mean, c.points[j], atol=1e-9)


def test_posterior_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        posterior_llrs(np.array([0j]), 1.0, 0.0, QAM16)


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(1e-8, 1e8))
def test_posterior_llrs_finite(re, im, eta):
    assert np.all(np.isfinite(posterior_llrs(np.array([re + 1j * im]), 0.9, eta, QAM16_MB)))


# --- RLS ----------------------------------------------------------------------

def qpsk(rng, n):
    return (rng.choice([-1, 1], n) + 1j * rng.choice([-1, 1], n)) / np.sqrt(2)


def test_rls_static_channel(rng):
    H0 = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    est = ChannelEstimate(np.zeros((6, 6), complex), np.eye(6, dtype=complex) / 1e-6)
    for _ in range(500):
        s = qpsk(rng, 6)
        est = rls_update(est, H0 @ s, s, 1.0)
    assert np.linalg.norm(est.H - H0) / np.linalg.norm(H0) < 1e-6


def test_rls_zero_regressor_keeps_h(rng):
    est = ChannelEstimate.initial(3, 0.01)
    H = rng.normal(size=(6, 6)) + 0j
    est = ChannelEstimate(H, est.P)
    out = rls_update(est, rng.normal(size=6), np.zeros(6), 1.0)
    np.testing.assert_array_equal(out.H, H)
    assert np.all(np.real(np.diag(out.P)) > 0)


def _tracking_error(lam, rate, seed=3, n=3000):
    rng = np.random.default_rng(seed)
    est = ChannelEstimate(np.eye(2, dtype=complex), np.eye(2, dtype=complex) / 0.01)
    errs = []
    for i in range(n):
        th = rate * i
        H = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]], complex)
        s = qpsk(rng, 2)
        r = H @ s + 0.01 * (rng.normal(size=2) + 1j * rng.normal(size=2))
        est = rls_update(est, r, s, lam)
        if i > n // 2:
            errs.append(np.linalg.norm(est.H - H) ** 2)
    return np.mean(errs)


def test_rls_shorter_memory_tracks_fast_rotation():
    fast = 2e-3
    short, long_ = _tracking_error(0.99, fast), _tracking_error(0.999, fast)
    assert short < 0.5 * long_


# --- LMMSE --------------------------------------------------------------------

def dense_lmmse(H, mean, var, r, nv, c, pv):
    """Reference: explicit covariance of the interference-cancelled vector."""
    S = np.diag(var.astype(complex))
    S[c, c] = pv
    R = H @ S @ H.conj().T + nv * np.eye(H.shape[0])
    W = np.linalg.inv(R) @ H[:, c] * pv
    keep = mean.copy()
    keep[c] = 0
    y = W.conj().T @ (r - H @ keep)
    return y, W.conj().T @ H[:, c], W


def toeplitz_channel(taps, N):
    """2N x 2N window operator: same ISI on both polarizations, no coupling."""
    h = N // 2
    T = np.zeros((N, N), complex)
    for i in range(N):
        for k, t in enumerate(taps):
            j = i - k + len(taps) // 2
            if 0 <= j < N:
                T[i, j] = t
    H = np.zeros((2 * N, 2 * N), complex)
    H[:N, :N] = T
    H[N:, N:] = T
    return H, h


@pytest.mark.parametrize("taps", [[0.4, 1.0], [0.3 - 0.2j, 1.0, 0.5j]])
def test_lmmse_matches_dense_solve(taps, rng):
    N = 5
    H, _ = toeplitz_channel(taps, N)
    H[0, N + 1] = 0.1  # some polarization coupling
    c = center_indices(N)
    mean = qpsk(rng, 2 * N) * 0.7
    var = rng.uniform(0, 1, 2 * N)
    r = rng.normal(size=2 * N) + 1j * rng.normal(size=2 * N)
    y, model = lmmse_equalize(r, ChannelEstimate(H, np.eye(2 * N)), SoftSymbols(mean, var), 0.1)
    y_ref, M_ref, W = dense_lmmse(H, mean, var, r, 0.1, c, 1.0)
    np.testing.assert_allclose(y, y_ref, atol=1e-9)
    np.testing.assert_allclose(model.M, M_ref, atol=1e-9)
    np.testing.assert_allclose(model.eta_cov, model.eta_cov.conj().T, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(model.eta_cov) > -1e-12)


def test_lmmse_memoryless_reduces_to_scalar_mmse():
    N, nv = 3, 0.05
    c = center_indices(N)
    soft = SoftSymbols(np.zeros(2 * N, complex), np.ones(2 * N))
    r = np.zeros(2 * N, complex)
    r[c] = [0.5 + 0.2j, -1.0]
    y, model = lmmse_equalize(r, ChannelEstimate.initial(N, 0.01), soft, nv)
    g = 1 / (1 + nv)
    np.testing.assert_allclose(y, g * r[c], atol=1e-12)
    np.testing.assert_allclose(model.mu, g, atol=1e-12)
    # post-equalizer SNR mu^2 / eta = 1 / nv
    np.testing.assert_allclose(model.mu**2 / model.eta_var, 1 / nv, rtol=1e-9)


def _sinr(model):
    return model.mu**2 / model.eta_var


def test_feedback_improves_sinr_on_isi_channel():
    N = 7
    H, h = toeplitz_channel([0.6, 1.0, 0.4j], N)
    nv = 0.1  # 10 dB
    est = ChannelEstimate(H, np.eye(2 * N))
    r = np.zeros(2 * N, complex)
    mean = np.zeros(2 * N, complex)
    _, none = lmmse_equalize(r, est, SoftSymbols(mean, np.ones(2 * N)), nv)
    _, genie = lmmse_equalize(r, est, SoftSymbols(mean, np.zeros(2 * N)), nv)
    assert np.all(_sinr(genie) > _sinr(none))
    # genie feedback: matched-filter bound ||h||^2 / nv
    np.testing.assert_allclose(_sinr(genie), np.sum(np.abs([0.6, 1.0, 0.4]) ** 2) / nv, rtol=1e-9)


def test_genie_feedback_cancels_interference(rng):
    N = 5
    H, h = toeplitz_channel([0.5, 1.0, 0.3], N)
    c = center_indices(N)
    s = qpsk(rng, 2 * N)
    r = H @ s
    y, model = lmmse_equalize(r, ChannelEstimate(H, np.eye(2 * N)), SoftSymbols(s, np.zeros(2 * N)), 1e-3)
    np.testing.assert_allclose(y, model.mu * s[c], atol=1e-9)


def test_lmmse_rejects_bad_noise():
    with pytest.raises(ValueError):
        lmmse_equalize(np.zeros(2), ChannelEstimate.initial(1, 0.01),
                       SoftSymbols(np.zeros(2, complex), np.ones(2)), 0.0)


# --- config and layout --------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(taps_N=4), dict(taps_N=0), dict(max_turbo_iters=0),
                                dict(rls_forgetting=0.0), dict(rls_forgetting=1.1),
                                dict(first_pass="x"), dict(feedback="x")])
def test_turbo_config_validation(kw):
    with pytest.raises(ValueError):
        TurboConfig(**kw)


def small_code():
    return build_code(Fraction(1, 2), 16)


def make_layout(code, m, n_blocks, seed=0):
    rng = np.random.default_rng(seed)
    seeds = tuple(tuple(int(x) for x in rng.integers(0, 2**31, n_blocks)) for _ in range(2))
    return FrameLayout(n_blocks, code.n_transmitted // m, m, seeds)


def test_frame_layout_round_trip(rng):
    code = small_code()
    lay = make_layout(code, 4, 3)
    cws = [[rng.integers(0, 2, code.n_transmitted) for _ in range(3)] for _ in range(2)]
    back = lay.from_payload(lay.to_payload(cws))
    for p, b in itertools.product(range(2), range(3)):
        np.testing.assert_array_equal(back[p][b], cws[p][b])


# --- full loop ----------------------------------------------------------------

def synthetic_frame(code, c, n_blocks, seed):
    rng = np.random.default_rng(seed)
    lay = make_layout(code, c.bits_per_symbol, n_blocks, seed)
    info = [[rng.integers(0, 2, code.k) for _ in range(n_blocks)] for _ in range(2)]
    cws = [[encode(code, u) for u in row] for row in info]
    labels = lay.to_payload(cws)
    payload = c.points[label_index(labels.reshape(-1, c.bits_per_symbol)).reshape(2, -1)]
    frame = insert_pilots(payload, 0.05, seed + 1)
    ref = {"payload": payload, "codewords": cws, "info": info}
    return frame, lay, ref


def isi(symbols, taps):
    out = np.zeros_like(symbols)
    for k, t in enumerate(taps):
        out += t * np.roll(symbols, k - len(taps) // 2, axis=-1)
    return out


def test_memoryless_first_pass_equals_textbook_demapper(rng):
    code = small_code()
    c = QAM16_MB
    frame, lay, ref = synthetic_frame(code, c, 4, 11)
    nv = 0.08
    r = frame.symbols + np.sqrt(nv / 2) * (rng.normal(size=frame.symbols.shape)
                                          + 1j * rng.normal(size=frame.symbols.shape))
    stream = SymbolStream(r, frame.pilot_positions, frame.pilot_symbols)
    cfg = TurboConfig(taps_N=5, max_turbo_iters=1, first_pass="frozen", noise_var_init=nv, bp_iters=0)
    res = turbo_run(stream, code, c, cfg, lay, ref)
    payload = r[:, stream.payload_positions]
    text = np.stack([posterior_llrs(payload[p], 1.0, nv, c, method="full") for p in range(2)])
    want = lay.from_payload(text)
    for p, b in itertools.product(range(2), range(4)):
        got = res.final.decode[p][b].posterior_llrs[code.transmitted_positions]
        np.testing.assert_allclose(got, want[p][b], atol=1e-9, rtol=0)


def test_turbo_clean_channel_decodes_and_honours_cap():
    code = small_code()
    frame, lay, ref = synthetic_frame(code, QAM16, 4, 5)
    stream = SymbolStream(frame.symbols, frame.pilot_positions, frame.pilot_symbols)
    res = turbo_run(stream, code, QAM16, TurboConfig(taps_N=3, max_turbo_iters=3, early_stop=False),
                    lay, ref)
    assert len(res.iterations) == 3
    assert all(rec.bit_errors == 0 for rec in res.iterations)
    res = turbo_run(stream, code, QAM16, TurboConfig(taps_N=3, max_turbo_iters=3), lay, ref)
    assert len(res.iterations) == 1


def run_isi(seed, iters=4):
    code = small_code()
    frame, lay, ref = synthetic_frame(code, QAM16, 16, seed)
    rng = np.random.default_rng(seed + 100)
    s = frame.symbols
    rot = np.exp(1j * 2e-3 * np.arange(s.shape[1]))
    r = isi(s, [0.35, 1.0, 0.25j]) * rot / np.sqrt(1 + 0.35**2 + 0.25**2)
    r = r + np.sqrt(0.02) * (rng.normal(size=s.shape) + 1j * rng.normal(size=s.shape))
    stream = SymbolStream(r, frame.pilot_positions, frame.pilot_symbols)
    cfg = TurboConfig(taps_N=5, max_turbo_iters=iters, rls_forgetting=0.995, early_stop=False)
    return turbo_run(stream, code, QAM16, cfg, lay, ref)


def test_turbo_iterations_help_on_time_varying_isi():
    snr = np.mean([[rec.snr_eff_db for rec in run_isi(seed).iterations] for seed in range(5)], axis=0)
    assert np.all(np.diff(snr) > -0.01), snr
    assert snr[-1] > snr[0]


def test_turbo_is_deterministic():
    a, b = run_isi(1, 2), run_isi(1, 2)
    for ra, rb in zip(a.iterations, b.iterations):
        np.testing.assert_array_equal(ra.equalized, rb.equalized)
