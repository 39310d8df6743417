"""
Adaptive turbo equalization: soft mapping of decoder feedback, RLS tracking
of the dual-polarization interference matrix, soft-interference-cancelling
LMMSE equalization and bit-metric demapping with shaped priors.

Window vectors stack the x-polarization window (``N`` symbols centred on the
current one) on top of the y-polarization window, so the centre symbols sit
at indices ``N // 2`` and ``N + N // 2``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .ccdm import codeword_from_labels, labels_from_codeword
from .constellation import ShapedConstellation, amplitude_index, hard_decision, product_prior
from .ldpc import LdpcCode, decode_bp
from .metrics import snr_eff
from .tx import deinterleave, interleave

log = logging.getLogger(__name__)

LLR_SATURATION = 500.0
RIDGE = 1e-9


@dataclass(frozen=True)
class TurboConfig:
    """
    Attributes
    ----------
    taps_N : int
        Window length per polarization (odd).
    max_turbo_iters : int
        Equalizer/decoder passes.
    rls_forgetting : float
        RLS forgetting factor lambda.
    rls_delta : float
        P starts as I / delta.
    noise_var_init : float or None
        Fixed noise variance for the first pass; estimated from pilots if None.
    bp_iters : int
        Decoder iterations per pass.
    early_stop : bool
        Stop once every codeword satisfies all checks.
    w_stride : int
        Recompute the LMMSE filter every ``w_stride`` symbols.
    first_pass : {"decision", "frozen"}
        RLS regressor of the first pass: hard decisions with known pilots,
        or no adaptation at all (H stays at its initial value).
    feedback : {"posterior", "extrinsic"}
        Decoder LLRs turned into soft symbols for the next pass.
    """

    taps_N: int = 21
    max_turbo_iters: int = 10
    rls_forgetting: float = 0.999
    rls_delta: float = 0.01
    noise_var_init: float | None = None
    bp_iters: int = 50
    early_stop: bool = True
    w_stride: int = 1
    first_pass: str = "decision"
    feedback: str = "posterior"

    def __post_init__(self):
        if self.taps_N < 1 or self.taps_N % 2 == 0:
            raise ValueError("taps_N must be odd and positive")
        if self.max_turbo_iters < 1:
            raise ValueError("max_turbo_iters must be at least 1")
        if not 0 < self.rls_forgetting <= 1:
            raise ValueError("rls_forgetting must lie in (0, 1]")
        if self.first_pass not in ("decision", "frozen"):
            raise ValueError(f"unknown first_pass {self.first_pass!r}")
        if self.feedback not in ("posterior", "extrinsic"):
            raise ValueError(f"unknown feedback {self.feedback!r}")


@dataclass
class SoftSymbols:
    mean: np.ndarray
    variance: np.ndarray


@dataclass
class ChannelEstimate:
    """Interference matrix ``H`` (2N x 2N) and the RLS inverse correlation ``P``."""

    H: np.ndarray
    P: np.ndarray

    @classmethod
    def initial(cls, taps_N: int, delta: float) -> "ChannelEstimate":
        n = 2 * taps_N
        return cls(np.eye(n, dtype=complex), np.eye(n, dtype=complex) / delta)


@dataclass
class EquivalentModel:
    """
    Post-equalizer model ``s_hat = M s_c + eta``.

    ``mu`` and ``eta_var`` are the per-polarization scalar reduction used by
    the demapper: cross-polarization leakage is folded into the noise.
    """

    M: np.ndarray
    eta_cov: np.ndarray
    mu: np.ndarray
    eta_var: np.ndarray
    w: np.ndarray
    regularized: bool = False


class RlsDivergence(RuntimeError):
    pass


def center_indices(taps_N: int) -> np.ndarray:
    h = taps_N // 2
    return np.array([h, taps_N + h])


# --- soft mapping -----------------------------------------------------------

def _symbol_logits(llrs, constellation: ShapedConstellation):
    L = np.clip(np.asarray(llrs, dtype=float), -LLR_SATURATION, LLR_SATURATION)
    L = L.reshape(-1, constellation.bits_per_symbol)
    with np.errstate(divide="ignore"):
        logp = np.log(constellation.prior)
    return logp[None, :] - L @ constellation.labels.T.astype(float)


def soft_map(extrinsic_llrs, constellation: ShapedConstellation) -> SoftSymbols:
    """
    Mean and variance of each symbol under prior x bit likelihoods.

    Parameters
    ----------
    extrinsic_llrs : array_like
        ``(n_symbols, bits_per_symbol)`` or flat, label order, positive
        favouring 0.
    """
    logits = _symbol_logits(extrinsic_llrs, constellation)
    logits -= logits.max(axis=1, keepdims=True)
    q = np.exp(logits)
    q /= q.sum(axis=1, keepdims=True)
    pts = constellation.points
    mean = q @ pts
    var = np.maximum(q @ np.abs(pts) ** 2 - np.abs(mean) ** 2, 0.0)
    return SoftSymbols(mean, var)


# --- RLS and LMMSE ----------------------------------------------------------

def rls_update(est: ChannelEstimate, r, s_bar, lam: float) -> ChannelEstimate:
    """
    One exponentially weighted RLS step for ``r = H s_bar``.

    All rows of ``H`` share the regressor and therefore ``P``:
    ``k = P s / (lam + s^H P s)``, ``H += (r - H s) k^H``,
    ``P = (P - k s^H P) / lam``.

    Raises
    ------
    RlsDivergence
        When the update produces non-finite values or a non-positive
        diagonal of ``P``.
    """
    r = np.asarray(r)
    s = np.asarray(s_bar)
    Ps = est.P @ s
    denom = lam + np.real(np.vdot(s, Ps))
    k = Ps / denom
    e = r - est.H @ s
    H = est.H + np.outer(e, k.conj())
    P = (est.P - np.outer(k, Ps.conj())) / lam
    P = 0.5 * (P + P.conj().T)
    d = np.real(np.diag(P))
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(P)) and np.all(d > 0)):
        raise RlsDivergence("RLS inverse correlation lost positivity")
    return ChannelEstimate(H, P)


def lmmse_equalize(r_window, est: ChannelEstimate, soft: SoftSymbols, noise_var: float,
                   prior_var: float = 1.0, centers=None):
    """
    Soft-interference-cancelling LMMSE estimate of the two centre symbols.

    ``x = r - H s_bar + H_c s_bar_c`` removes all but the centre symbols'
    means; ``w = (H S H^H + noise_var I)^-1 H_c prior_var`` where ``S`` is
    the diagonal of symbol variances with the centres held at ``prior_var``.

    Returns
    -------
    s_hat : np.ndarray
        ``(2,)`` equalizer outputs ``w^H x``.
    model : EquivalentModel
        ``M = w^H H_c``, ``eta_cov = M prior_var - M prior_var M^H``.
    """
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    H = est.H
    n = H.shape[0]
    c = center_indices(n // 2) if centers is None else np.asarray(centers)
    mean = np.asarray(soft.mean)
    var = np.array(soft.variance, dtype=float)
    var[c] = prior_var
    Hc = H[:, c]
    A = (H * var) @ H.conj().T + noise_var * np.eye(n)
    regularized = False
    try:
        w = np.linalg.solve(A, Hc * prior_var)
    except np.linalg.LinAlgError:
        w = np.linalg.solve(A + RIDGE * np.eye(n), Hc * prior_var)
        regularized = True
    x = np.asarray(r_window) - H @ mean + Hc @ mean[c]
    s_hat = w.conj().T @ x
    return s_hat, equivalent_model(w, Hc, prior_var, regularized)


def equivalent_model(w, Hc, prior_var: float, regularized: bool = False) -> EquivalentModel:
    M = w.conj().T @ Hc
    MS = M * prior_var
    eta_cov = MS - MS @ M.conj().T
    eta_cov = 0.5 * (eta_cov + eta_cov.conj().T)
    mu = np.real(np.diag(M))
    eta_var = np.maximum(prior_var * mu * (1 - mu), 1e-300)
    return EquivalentModel(M, eta_cov, mu, eta_var, w, regularized)


# --- demapping --------------------------------------------------------------

def _factorizes(constellation: ShapedConstellation) -> bool:
    return np.allclose(product_prior(constellation.amplitude_prior, constellation.order),
                       constellation.prior, rtol=1e-9, atol=1e-15)


def _pam_tables(constellation: ShapedConstellation):
    """Per-dimension levels, their half-label bits and 1-D prior."""
    L = constellation.levels_per_dim
    m_dim = constellation.bits_per_symbol // 2
    d = constellation.scale
    from .constellation import pam_label
    lv = np.arange(-(L - 1), L, 2)
    lab = pam_label(lv, m_dim)
    bits = ((lab[:, None] >> np.arange(m_dim - 1, -1, -1)) & 1).astype(float)
    amp = constellation.amplitude_prior
    p1 = amp[amplitude_index(lv.astype(float), 1.0)] / 2
    return lv * d, bits, p1


def posterior_llrs(s_hat, mu, eta_var, constellation: ShapedConstellation,
                   method: str = "auto") -> np.ndarray:
    """
    Bit-metric LLRs from the Gaussian equivalent channel and the prior.

    ``post(s) ∝ exp(-|s_hat - mu s|^2 / eta_var) prior(s)``;
    ``LLR_b = log sum_{b=0} post - log sum_{b=1} post``.

    Parameters
    ----------
    s_hat : array_like
        Equalizer outputs, one per symbol.
    mu, eta_var : array_like or float
        Per-symbol gain and noise variance (broadcast).
    method : {"auto", "factorized", "full"}
        ``"factorized"`` exploits a product prior with real ``mu``.

    Returns
    -------
    np.ndarray
        ``(n_symbols, bits_per_symbol)``.
    """
    s_hat = np.atleast_1d(np.asarray(s_hat, dtype=complex))
    n = s_hat.size
    mu = np.broadcast_to(np.asarray(mu, dtype=complex), (n,))
    eta = np.broadcast_to(np.asarray(eta_var, dtype=float), (n,))
    if np.any(eta <= 0):
        raise ValueError("eta_var must be positive")
    if method == "auto":
        method = "factorized" if (np.all(mu.imag == 0) and _factorizes(constellation)) else "full"
    if method == "factorized":
        lv, bits, p1 = _pam_tables(constellation)
        with np.errstate(divide="ignore"):
            logp = np.log(p1)
        out = []
        for comp in (s_hat.real, s_hat.imag):
            ll = -((comp[:, None] - mu.real[:, None] * lv[None, :]) ** 2) / eta[:, None] + logp
            out.append(_bit_llrs(ll, bits))
        return np.hstack(out)
    pts = constellation.points
    with np.errstate(divide="ignore"):
        logp = np.log(constellation.prior)
    ll = -np.abs(s_hat[:, None] - mu[:, None] * pts[None, :]) ** 2 / eta[:, None] + logp
    return _bit_llrs(ll, constellation.labels.astype(float))


def _bit_llrs(ll, bits):
    out = np.empty((ll.shape[0], bits.shape[1]))
    for b in range(bits.shape[1]):
        zero = bits[:, b] == 0
        out[:, b] = logsumexp(ll[:, zero], axis=1) - logsumexp(ll[:, ~zero], axis=1)
    return out


# --- frame bookkeeping ------------------------------------------------------

@dataclass(frozen=True)
class FrameLayout:
    """
    Where codeword symbols live in a received frame.

    Payload slots of each polarization hold ``n_blocks`` consecutive
    interleaved codewords of ``symbols_per_block`` symbols.
    """

    n_blocks: int
    symbols_per_block: int
    bits_per_symbol: int
    interleaver_seeds: tuple

    def seed(self, pol: int, block: int):
        return self.interleaver_seeds[pol][block]

    def to_payload(self, per_codeword) -> np.ndarray:
        """Codeword-ordered bits or LLRs -> ``(2, n_payload, m)`` slot labels."""
        m = self.bits_per_symbol
        out = np.empty((2, self.n_blocks * self.symbols_per_block, m),
                       dtype=np.asarray(per_codeword[0][0]).dtype)
        for p in range(2):
            for b in range(self.n_blocks):
                lab = labels_from_codeword(np.asarray(per_codeword[p][b]), m)
                sl = slice(b * self.symbols_per_block, (b + 1) * self.symbols_per_block)
                out[p, sl] = interleave(lab, self.seed(p, b), axis=0)
        return out

    def from_payload(self, labels) -> list:
        """Inverse of :meth:`to_payload`."""
        out = []
        for p in range(2):
            row = []
            for b in range(self.n_blocks):
                sl = slice(b * self.symbols_per_block, (b + 1) * self.symbols_per_block)
                row.append(codeword_from_labels(deinterleave(labels[p, sl], self.seed(p, b), axis=0)))
            out.append(row)
        return out


@dataclass
class IterationRecord:
    iteration: int
    decode: list
    snr_eff_db: float
    pre_fec_ber: float
    post_fec_ber: float
    noise_var: float
    bit_errors: int
    bits: int
    equalized: np.ndarray = field(repr=False, default=None)


@dataclass
class TurboResult:
    iterations: list
    restarts: int = 0

    @property
    def final(self) -> IterationRecord:
        return self.iterations[-1]


def _sweep(r, mean, var, regressor, reg_var, est, noise_var, prior_var, cfg,
           adapt: bool, pilot_mask):
    """
    One pass over the frame: equalize with the a-priori H, then update H.

    Windows wrap around the frame, matching the periodic simulation.
    Returns outputs, mu, eta_var, the final estimate, a noise-variance
    estimate from centre-row a-priori errors at pilots, and restart count.
    """
    N = cfg.taps_N
    h = N // 2
    n = r.shape[1]
    c = center_indices(N)
    offs = np.arange(-h, h + 1)
    s_hat = np.empty((2, n), dtype=complex)
    mu = np.empty((2, n))
    eta = np.empty((2, n))
    errs, resid = [], []
    model = None
    restarts = 0
    for i in range(n):
        idx = (i + offs) % n
        rw = r[:, idx].ravel()
        soft = SoftSymbols(mean[:, idx].ravel(), var[:, idx].ravel())
        if model is None or i % cfg.w_stride == 0:
            y, model = lmmse_equalize(rw, est, soft, noise_var, prior_var, c)
        else:
            sm = soft.mean
            x = rw - est.H @ sm + est.H[:, c] @ sm[c]
            y = model.w.conj().T @ x
        s_hat[:, i] = y
        mu[:, i] = model.mu
        eta[:, i] = model.eta_var
        if not adapt:
            continue
        sw = regressor[:, idx].ravel()
        if pilot_mask[i]:
            errs.append(rw[c] - est.H[c] @ sw)
            resid.append(np.abs(est.H[c]) ** 2 @ reg_var[:, idx].ravel())
        try:
            est = rls_update(est, rw, sw, cfg.rls_forgetting)
        except RlsDivergence:
            restarts += 1
            log.warning("RLS diverged at symbol %d; restarting P", i)
            est = ChannelEstimate(est.H, np.eye(2 * N, dtype=complex) / cfg.rls_delta)
    nv = None
    if errs:
        nv = float(np.mean(np.abs(np.array(errs)) ** 2) - np.mean(np.array(resid)))
    return s_hat, mu, eta, est, nv, restarts


def turbo_run(stream, code: LdpcCode, constellation: ShapedConstellation, cfg: TurboConfig,
              layout: FrameLayout, reference=None) -> TurboResult:
    """
    Iterate equalization and decoding on one received frame.

    Parameters
    ----------
    stream : SymbolStream
        Phase-recovered slots with known pilots.
    reference : dict, optional
        ``payload`` (2, n_payload) transmitted symbols, ``codewords`` and
        ``info`` (nested [pol][block] bit arrays) for the metrics.

    Returns
    -------
    TurboResult
        One record per pass; at most ``cfg.max_turbo_iters``.
    """
    r = np.asarray(stream.symbols)
    n = r.shape[1]
    pilots = np.asarray(stream.pilot_positions)
    payload_pos = stream.payload_positions
    pilot_mask = np.zeros(n, bool)
    pilot_mask[pilots] = True
    m = constellation.bits_per_symbol
    prior_mean = complex(np.sum(constellation.prior * constellation.points))
    prior_var = float(constellation.energy - abs(prior_mean) ** 2)

    mean = np.empty((2, n), dtype=complex)
    var = np.zeros((2, n))
    mean[:, pilots] = stream.pilot_symbols
    mean[:, payload_pos] = prior_mean
    var[:, payload_pos] = prior_var

    # first-pass regressor: decisions on payload, known pilots
    regressor = mean.copy()
    reg_var = np.zeros((2, n))
    if cfg.first_pass == "decision":
        regressor[:, payload_pos] = constellation.points[hard_decision(r[:, payload_pos], constellation)]

    if cfg.noise_var_init is not None:
        noise_var = float(cfg.noise_var_init)
    else:
        noise_var = float(np.mean(np.abs(r[:, pilots] - stream.pilot_symbols) ** 2))
    noise_var = max(noise_var, 1e-6)

    est = ChannelEstimate.initial(cfg.taps_N, cfg.rls_delta)
    records = []
    restarts = 0
    for it in range(1, cfg.max_turbo_iters + 1):
        adapt = not (it == 1 and cfg.first_pass == "frozen")
        s_hat, mu, eta, est, nv, rs = _sweep(r, mean, var, regressor, reg_var, est, noise_var,
                                             prior_var, cfg, adapt, pilot_mask)
        restarts += rs
        sh = s_hat[:, payload_pos]
        llr_slots = np.stack([posterior_llrs(sh[p], mu[p, payload_pos], eta[p, payload_pos],
                                             constellation) for p in range(2)])
        channel = layout.from_payload(llr_slots)
        results = [[decode_bp(code, channel[p][b], cfg.bp_iters) for b in range(layout.n_blocks)]
                   for p in range(2)]
        rec = _record(it, results, channel, sh / np.where(mu[:, payload_pos] > 0, mu[:, payload_pos], 1),
                      code, layout, reference, noise_var)
        records.append(rec)
        converged = all(res.converged for row in results for res in row)
        if cfg.early_stop and converged:
            break
        # feedback for the next pass
        tx_mask = ~code.puncture_mask
        kind = "posterior_llrs" if cfg.feedback == "posterior" else "extrinsic_llrs"
        ext = [[getattr(res, kind)[tx_mask] for res in row] for row in results]
        soft = soft_map(layout.to_payload(ext).reshape(-1, m), constellation)
        mean[:, payload_pos] = soft.mean.reshape(2, -1)
        var[:, payload_pos] = soft.variance.reshape(2, -1)
        regressor = mean
        reg_var = var
        if nv is not None:
            noise_var = max(nv, 1e-6)
    return TurboResult(records, restarts)


def _record(it, results, channel, equalized, code, layout, reference, noise_var):
    snr = pre = post = np.nan
    errors = bits = 0
    if reference is not None:
        snr = snr_eff(equalized.ravel(), np.asarray(reference["payload"]).ravel())
        pre_err = pre_n = 0
        for p in range(2):
            for b in range(layout.n_blocks):
                cw = np.asarray(reference["codewords"][p][b])
                pre_err += int(np.sum((channel[p][b] < 0) != (cw != 0)))
                pre_n += cw.size
                info = np.asarray(reference["info"][p][b])
                dec = results[p][b].hard_bits[code.info_positions]
                errors += int(np.sum(dec != info))
                bits += info.size
        pre = pre_err / pre_n
        post = errors / bits
    return IterationRecord(it, results, snr, pre, post, noise_var, errors, bits, equalized)
