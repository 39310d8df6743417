"""Link performance metrics."""
from __future__ import annotations

import numpy as np


class ThresholdNotBracketed(ValueError):
    """No grid point of a sweep decoded without errors."""


def snr_eff(equalized, reference) -> float:
    """
    Effective SNR in dB after least-squares scalar gain alignment.

    Returns ``inf`` when the aligned error vanishes.
    """
    eq = np.asarray(equalized).ravel()
    ref = np.asarray(reference).ravel()
    if eq.shape != ref.shape:
        raise ValueError("equalized and reference must have equal length")
    if ref.size < 100:
        raise ValueError("need at least 100 symbols")
    a = np.vdot(ref, eq) / np.vdot(ref, ref)
    err = np.mean(np.abs(eq - a * ref) ** 2)
    sig = np.abs(a) ** 2 * np.mean(np.abs(ref) ** 2)
    if err <= sig * 1e-30:
        return float("inf")
    return float(10 * np.log10(sig / err))


def evm_db(received, reference) -> float:
    """Error vector magnitude in dB relative to the reference power (no alignment)."""
    r = np.asarray(received)
    ref = np.asarray(reference)
    return float(10 * np.log10(np.mean(np.abs(r - ref) ** 2) / np.mean(np.abs(ref) ** 2)))


def ber(decoded_bits, reference_bits) -> float:
    a = np.asarray(decoded_bits).ravel()
    b = np.asarray(reference_bits).ravel()
    if a.shape != b.shape:
        raise ValueError("bit sequences must have equal length")
    return float(np.count_nonzero(a != b) / a.size)


def rule_of_three(bits: int) -> float:
    """95 % upper confidence bound on the BER after zero observed errors."""
    return 3.0 / bits


def decoding_threshold(snr_grid, error_counts):
    """
    Smallest grid SNR with zero errors there and at every higher SNR.

    Parameters
    ----------
    snr_grid : array_like
        SNR per sweep point, dB.
    error_counts : array_like
        Bit errors per point, summed over trials.

    Returns
    -------
    (threshold, resolution) : tuple of float
        ``resolution`` is the local grid step, the uncertainty of the value.
    """
    snr = np.asarray(snr_grid, dtype=float)
    err = np.asarray(error_counts)
    order = np.argsort(snr)
    snr, err = snr[order], err[order]
    ok = err == 0
    if not ok[-1]:
        raise ThresholdNotBracketed("no error-free point at the top of the sweep")
    first = len(ok) - np.argmin(ok[::-1]) if not ok.all() else 0
    res = float(np.diff(snr).max()) if snr.size > 1 else float("nan")
    if first > 0:
        res = float(snr[first] - snr[first - 1])
    return float(snr[first]), res
