"""Fast oracle checks run by ``optiturbo selftest``."""
from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

from . import ccdm, constellation as cst, fiber, ldpc, rx, turbo, tx
from .harness import MODULATIONS


def _rates():
    got = {k: m.net_rate for k, m in MODULATIONS.items()}
    return all(round(v, 2) == 6.50 for v in got.values()), got


def _mb_prior():
    c = cst.mb_prior(cst.build_qam(1024), 8.5)
    ok = abs(c.entropy - 8.5) < 1e-9 and abs(c.energy - 1) < 1e-12
    return ok, f"H={c.entropy:.12f} E={c.energy:.15f}"


def _ccdm_roundtrip():
    rng = np.random.default_rng(0)
    comp = ccdm.optimal_composition(cst.mb_prior(cst.build_qam(1024), 8.5).amplitude_prior, 256)
    for _ in range(50):
        b = rng.integers(0, 2, comp.n_bits)
        a = ccdm.ccdm_encode(b, comp)
        if tuple(np.bincount(a, minlength=comp.n_levels)) != comp.counts:
            return False, "composition violated"
        if not np.array_equal(ccdm.ccdm_decode(a, comp), b):
            return False, "round trip failed"
    return True, f"n=256 k={comp.n_bits}"


def _ccdm_brute():
    comp = ccdm.Composition((2, 2))
    outs = {tuple(ccdm.ccdm_encode(np.array(b), comp)) for b in itertools.product([0, 1], repeat=2)}
    return len(outs) == 4 and all(sorted(o) == [0, 0, 1, 1] for o in outs), f"{len(outs)} distinct words"


def _ldpc():
    code = ldpc.build_code(Fraction(1, 2), 16)
    H = code.H.toarray().astype(int)
    rng = np.random.default_rng(1)
    u = rng.integers(0, 2, code.k)
    c = ldpc.encode(code, u, full=True)
    ok = not np.any(H @ c % 2) and np.array_equal(c[code.info_positions], u)
    res = ldpc.decode_bp(code, 20.0 * (1 - 2.0 * c), 5)
    return ok and res.converged and np.array_equal(res.hard_bits, c), f"k={code.k}"


def _soft_map():
    c = cst.mb_prior(cst.build_qam(16), 3.0)
    L = np.random.default_rng(2).normal(0, 3, (20, 4))
    s = turbo.soft_map(L, c)
    q = c.prior[None] * np.exp(-(L @ c.labels.T.astype(float)))
    q /= q.sum(1, keepdims=True)
    return bool(np.allclose(s.mean, q @ c.points, atol=1e-9, rtol=0)), "16QAM enumeration"


def _posterior():
    c = cst.mb_prior(cst.build_qam(16), 3.0)
    rng = np.random.default_rng(3)
    y = rng.normal(size=30) + 1j * rng.normal(size=30)
    got = turbo.posterior_llrs(y, 0.9, 0.2, c)
    ll = np.log(c.prior)[None] - np.abs(y[:, None] - 0.9 * c.points[None]) ** 2 / 0.2
    p = np.exp(ll)
    want = np.stack([np.log(p[:, c.labels[:, b] == 0].sum(1) / p[:, c.labels[:, b] == 1].sum(1))
                     for b in range(4)], 1)
    return bool(np.allclose(got, want, atol=1e-9, rtol=0)), "16QAM enumeration"


def _rls():
    rng = np.random.default_rng(4)
    H0 = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    est = turbo.ChannelEstimate(np.zeros((6, 6), complex), np.eye(6, dtype=complex) / 1e-6)
    for _ in range(500):
        s = (rng.choice([-1, 1], 6) + 1j * rng.choice([-1, 1], 6)) / np.sqrt(2)
        est = turbo.rls_update(est, H0 @ s, s, 1.0)
    err = np.linalg.norm(est.H - H0) / np.linalg.norm(H0)
    return err < 1e-6, f"rel err {err:.2e}"


def _ssfm_linear():
    rng = np.random.default_rng(5)
    f = fiber.FiberParams(alpha=0.0, gamma=0.0, span_length=1.0, step_size=100.0)
    u = rng.normal(size=(2, 1024)) + 1j * rng.normal(size=(2, 1024))
    wf = tx.DualPolWaveform(u, 64e9)
    out = fiber.ssfm_span(wf, f).samples
    fr = np.fft.fftfreq(1024, 1 / 64e9)
    want = np.fft.ifft(np.fft.fft(u) * np.exp(2j * np.pi**2 * f.beta2 * fr**2 * f.length_m))
    err = np.linalg.norm(out - want) / np.linalg.norm(want)
    return err < 1e-8, f"rel L2 {err:.1e}"


def _spm():
    rng = np.random.default_rng(6)
    f = fiber.FiberParams(alpha=0.0, dispersion_D=0.0, span_length=1.0)
    u = np.zeros((2, 256), complex)
    u[0] = 0.1 * (rng.normal(size=256) + 1j * rng.normal(size=256))
    out = fiber.ssfm_span(tx.DualPolWaveform(u, 64e9), f).samples[0]
    want = u[0] * np.exp(1j * 8 / 9 * f.gamma_si * np.abs(u[0]) ** 2 * f.length_m)
    err = np.max(np.abs(out - want) / np.abs(want))
    return err < 1e-9, f"max rel {err:.1e}"


def _b2b():
    rng = np.random.default_rng(7)
    s = (rng.choice([-1, 1], (2, 512)) + 1j * rng.choice([-1, 1], (2, 512))) / np.sqrt(2)
    w = tx.pulse_shape(s, 16, 0.01)
    r = rx.matched_filter_decimate(w, normalize=False)
    e = 10 * np.log10(np.mean(np.abs(r - s) ** 2))
    return e < -45, f"EVM {e:.1f} dB"


CHECKS = {
    "net rate 6.50 for all rows": _rates,
    "MB prior entropy and power": _mb_prior,
    "CCDM round trip and composition": _ccdm_roundtrip,
    "CCDM {2,2} enumeration": _ccdm_brute,
    "LDPC encode/decode": _ldpc,
    "soft_map vs enumeration": _soft_map,
    "posterior LLRs vs enumeration": _posterior,
    "RLS static channel": _rls,
    "SSFM linear transfer function": _ssfm_linear,
    "SSFM analytic SPM": _spm,
    "RRC Nyquist pair": _b2b,
}


def run_selftest(stream=print) -> bool:
    ok_all = True
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn()
        except Exception as exc:  # report and continue with the other checks
            ok, detail = False, repr(exc)
        ok_all &= bool(ok)
        stream(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
    return ok_all
