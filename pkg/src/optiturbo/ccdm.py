"""
Constant composition distribution matching and probabilistic amplitude shaping.

The matcher maps ``k = floor(log2 T)`` input bits, ``T`` being the number of
sequences with a given composition, onto one of those sequences by exact
arithmetic-coding interval subdivision. All interval bounds are integers, so
the map is exactly invertible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

try:
    import gmpy2

    _mpz = gmpy2.mpz
    _divexact = gmpy2.divexact
except ImportError:  # pragma: no cover
    _mpz = int

    def _divexact(a, b):
        return a // b

from .constellation import ShapedConstellation, amplitude_index, entropy_bits


@dataclass(frozen=True)
class Composition:
    """Occurrence count of every amplitude level in one matcher block."""

    counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise ValueError("composition counts must be non-negative")
        if sum(counts) == 0:
            raise ValueError("composition must contain at least one symbol")
        object.__setattr__(self, "counts", counts)

    @property
    def block_length(self) -> int:
        return sum(self.counts)

    @property
    def n_levels(self) -> int:
        return len(self.counts)

    @property
    def pmf(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.block_length

    @property
    def n_sequences(self) -> int:
        return multinomial(self.counts)

    @property
    def n_bits(self) -> int:
        """Number of input bits accepted per block."""
        return self.n_sequences.bit_length() - 1

    @property
    def rate(self) -> float:
        return self.n_bits / self.block_length

    @property
    def entropy(self) -> float:
        return entropy_bits(self.pmf)


def multinomial(counts) -> int:
    total = 0
    out = 1
    for c in counts:
        total += c
        out *= math.comb(total, c)
    return out


def optimal_composition(pmf, block_length: int) -> Composition:
    """
    n-type closest to ``pmf`` in the sense of D(type || pmf).

    The divergence is separable and convex in the counts, so adding one
    symbol at a time to the level with the smallest marginal cost is optimal.
    Ties go to the highest level index, which yields the lexicographically
    smallest count vector.
    """
    p = np.asarray(pmf, dtype=float)
    if np.any(p < 0) or not np.isclose(p.sum(), 1.0):
        raise ValueError("pmf must be a probability vector")
    n = int(block_length)
    if n < 1:
        raise ValueError("block_length must be positive")

    def cost(c, pi):
        if c == 0:
            return 0.0
        if pi == 0:
            return math.inf
        return (c / n) * math.log(c / (n * pi))

    counts = [0] * len(p)
    for _ in range(n):
        best, best_j = math.inf, -1
        for j in range(len(p) - 1, -1, -1):
            d = cost(counts[j] + 1, p[j]) - cost(counts[j], p[j])
            if d < best - 1e-15:
                best, best_j = d, j
        counts[best_j] += 1
    return Composition(tuple(counts))


def bits_to_int(bits) -> int:
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size == 0:
        return 0
    pad = (-bits.size) % 8
    raw = np.packbits(np.concatenate([np.zeros(pad, np.uint8), bits])).tobytes()
    return int.from_bytes(raw, "big")


def int_to_bits(value: int, n: int) -> np.ndarray:
    if n == 0:
        return np.zeros(0, dtype=np.uint8)
    nbytes = (n + 7) // 8
    raw = np.frombuffer(value.to_bytes(nbytes, "big"), dtype=np.uint8)
    return np.unpackbits(raw)[8 * nbytes - n:]


def ccdm_encode(bits, composition: Composition) -> np.ndarray:
    """
    Map ``composition.n_bits`` bits onto a constant-composition sequence.

    Parameters
    ----------
    bits : array_like of {0, 1}
        Input block, most significant bit first.
    composition : Composition

    Returns
    -------
    np.ndarray
        Amplitude indices with exactly ``composition.counts`` occurrences.
    """
    bits = np.asarray(bits)
    k = composition.n_bits
    if bits.ndim != 1 or bits.size != k:
        raise ValueError(f"expected {k} input bits, got {bits.size}")
    total = composition.n_sequences
    u = bits_to_int(bits)
    # spread the 2^k inputs evenly over all sequences; injective since total >= 2^k
    idx = (u * total) >> k

    counts = list(composition.counts)
    n = composition.block_length
    out = [0] * n
    size = _mpz(total)
    idx = _mpz(idx)
    for pos in range(n):
        m = n - pos
        # sub-interval of symbol a spans [size*cum_a/m, size*cum_{a+1}/m)
        q = int(idx * m // size)
        a = 0
        while q >= counts[a]:
            q -= counts[a]
            a += 1
        cum_a = sum(counts[:a])
        idx -= _divexact(size * cum_a, m)
        size = _divexact(size * counts[a], m)
        counts[a] -= 1
        out[pos] = a
    return np.asarray(out, dtype=np.int64)


def ccdm_decode(amplitudes, composition: Composition) -> np.ndarray:
    """Exact inverse of :func:`ccdm_encode`."""
    amplitudes = np.asarray(amplitudes, dtype=np.int64)
    n = composition.block_length
    if amplitudes.ndim != 1 or amplitudes.size != n:
        raise ValueError(f"expected a sequence of length {n}")
    if np.any(amplitudes < 0) or np.any(amplitudes >= composition.n_levels):
        raise ValueError("amplitude index out of range")
    if tuple(np.bincount(amplitudes, minlength=composition.n_levels)) != composition.counts:
        raise ValueError("sequence does not match the composition")

    counts = list(composition.counts)
    total = composition.n_sequences
    size = _mpz(total)
    idx = _mpz(0)
    for pos, a in enumerate(amplitudes.tolist()):
        m = n - pos
        idx += _divexact(size * sum(counts[:a]), m)
        size = _divexact(size * counts[a], m)
        counts[a] -= 1
    idx = int(idx)
    k = composition.n_bits
    u = -((-idx << k) // total)
    if u >> k or (u * total) >> k != idx:
        raise ValueError("sequence is not in the image of the matcher")
    return int_to_bits(u, k)


# --- probabilistic amplitude shaping ---------------------------------------

def amplitude_bits(amplitudes, constellation: ShapedConstellation) -> np.ndarray:
    """Gray label bits of amplitude indices, ``(..., m_dim - 1)`` uint8."""
    from .constellation import gray_code

    nb = constellation.bits_per_symbol // 2 - 1
    g = gray_code(np.asarray(amplitudes, dtype=np.int64))
    shifts = np.arange(nb - 1, -1, -1)
    return ((g[..., None] >> shifts) & 1).astype(np.uint8)


def amplitudes_from_bits(bits, constellation: ShapedConstellation) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    nb = bits.shape[-1]
    g = np.zeros(bits.shape[:-1], dtype=np.int64)
    for j in range(nb):
        g = (g << 1) | bits[..., j]
    # inverse Gray code
    a = g.copy()
    shift = g >> 1
    while np.any(shift):
        a ^= shift
        shift >>= 1
    return a


def pas_assemble(amplitude_indices, sign_bits, constellation: ShapedConstellation) -> np.ndarray:
    """
    Combine per-quadrature amplitude indices and sign bits into symbols.

    Parameters
    ----------
    amplitude_indices : array_like, shape (n, 2)
        Index of the positive level (0 is the smallest) for I and Q.
    sign_bits : array_like, shape (n, 2)
        0 keeps the amplitude positive, 1 negates it.
    """
    a = np.asarray(amplitude_indices, dtype=np.int64)
    s = np.asarray(sign_bits, dtype=np.int64)
    if a.ndim != 2 or a.shape[1] != 2 or a.shape != s.shape:
        raise ValueError("amplitudes and signs must both have shape (n, 2)")
    half = constellation.levels_per_dim // 2
    if np.any(a < 0) or np.any(a >= half) or np.any((s != 0) & (s != 1)):
        raise ValueError("amplitude index or sign bit out of range")
    lv = (2 * a + 1) * (1 - 2 * s) * constellation.scale
    return lv[:, 0] + 1j * lv[:, 1]


def pas_disassemble(symbols, constellation: ShapedConstellation):
    """Inverse of :func:`pas_assemble`: returns ``(amplitude_indices, sign_bits)``."""
    s = np.asarray(symbols)
    parts = np.stack([s.real, s.imag], axis=-1)
    amps = amplitude_index(parts, constellation.scale)
    signs = (parts < 0).astype(np.int64)
    return amps, signs


def labels_from_codeword(bits, bits_per_symbol: int) -> np.ndarray:
    """
    Place transmitted codeword bits on symbol labels in amplitude-first order.

    The leading bits of the codeword fill the amplitude positions of all
    symbols (I then Q within a symbol), the remainder fills the sign
    positions. With a systematic code whose first information bits are
    amplitude labels, parity bits therefore end up on the signs.

    Returns
    -------
    np.ndarray
        ``(n_symbols, bits_per_symbol)`` label bits.
    """
    bits = np.asarray(bits)
    m = bits_per_symbol
    if bits.size % m:
        raise ValueError(f"{bits.size} bits do not fill whole {m}-bit symbols")
    n_sym = bits.size // m
    amp_pos, sign_pos = _label_positions(m)
    n_amp = n_sym * len(amp_pos)
    lab = np.empty((n_sym, m), dtype=bits.dtype)
    lab[:, amp_pos] = bits[:n_amp].reshape(n_sym, len(amp_pos))
    lab[:, sign_pos] = bits[n_amp:].reshape(n_sym, 2)
    return lab


def codeword_from_labels(labels) -> np.ndarray:
    """Inverse of :func:`labels_from_codeword` (works for bits and LLRs)."""
    labels = np.asarray(labels)
    m = labels.shape[1]
    amp_pos, sign_pos = _label_positions(m)
    return np.concatenate([labels[:, amp_pos].ravel(), labels[:, sign_pos].ravel()])


def _label_positions(m: int):
    half = m // 2
    sign_pos = [0, half]
    amp_pos = [j for j in range(m) if j not in sign_pos]
    return amp_pos, sign_pos


def pas_rate(entropy: float, code_rate: float, bits_per_symbol: int) -> float:
    """Net information rate H - (1 - R) log2 M in bits per 2-D symbol."""
    return entropy - (1.0 - code_rate) * bits_per_symbol
