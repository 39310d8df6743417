"""Square QAM constellations with Gray labels and Maxwell-Boltzmann priors."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

SUPPORTED_ORDERS = (4, 16, 64, 256, 1024)


@dataclass(frozen=True, eq=False)
class ShapedConstellation:
    """
    QAM constellation together with its symbol prior.

    Point ``i`` carries the label whose integer value is ``i``; ``labels[i]``
    holds the same label as a bit row, most significant bit first. The first
    half of each label belongs to the in-phase quadrature, the second half to
    the quadrature component. Within each half the leading bit is the sign bit
    (0 for positive amplitudes) and the remaining bits Gray-label the amplitude.

    Attributes
    ----------
    order : int
        Number of points M.
    points : np.ndarray
        Complex amplitudes, unit average power under ``prior``.
    labels : np.ndarray
        ``(M, log2 M)`` uint8 label bits.
    prior : np.ndarray
        Symbol probabilities.
    nu : float
        Maxwell-Boltzmann parameter that generated ``prior`` (0 for uniform).
    """

    order: int
    points: np.ndarray
    labels: np.ndarray
    prior: np.ndarray
    nu: float = 0.0

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.order))

    @property
    def levels_per_dim(self) -> int:
        return int(round(np.sqrt(self.order)))

    @property
    def entropy(self) -> float:
        return entropy_bits(self.prior)

    @property
    def energy(self) -> float:
        return float(np.sum(self.prior * np.abs(self.points) ** 2))

    @property
    def scale(self) -> float:
        """Distance between the origin and the smallest per-dimension level."""
        return float(np.min(np.abs(self.points.real)))

    @property
    def amplitude_prior(self) -> np.ndarray:
        """One-dimensional prior over the positive amplitude levels 1, 3, 5, ..."""
        half = self.levels_per_dim // 2
        amp = amplitude_index(self.points.real, self.scale)
        out = np.zeros(half)
        np.add.at(out, amp, self.prior)
        return out

    def is_uniform(self) -> bool:
        return bool(np.allclose(self.prior, 1.0 / self.order, rtol=0, atol=1e-15))


def entropy_bits(p) -> float:
    p = np.asarray(p, dtype=float)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log2(nz)))


def gray_code(n: np.ndarray | int):
    return n ^ (n >> 1)


def amplitude_index(x, scale: float) -> np.ndarray:
    """Map per-dimension amplitudes (..., -3d, -d, d, 3d, ...) to 0, 1, 2, ... of |x|."""
    return np.rint((np.abs(x) / scale - 1) / 2).astype(np.int64)


def pam_label(level_index, bits_per_dim: int):
    """
    Label of PAM amplitudes given as signed odd integers (..., -3, -1, 1, 3, ...).

    The sign bit is the MSB (0 for positive); the magnitude index is Gray
    coded in the lower bits, so mirrored levels share their lower bits.
    """
    level_index = np.asarray(level_index, dtype=np.int64)
    sign = (level_index < 0).astype(np.int64)
    mag = (np.abs(level_index) - 1) // 2
    return (sign << (bits_per_dim - 1)) | gray_code(mag)


def _grid(order: int):
    L = int(round(np.sqrt(order)))
    m_dim = int(np.log2(L))
    lv = np.arange(-(L - 1), L, 2)
    I, Q = np.meshgrid(lv, lv, indexing="ij")
    I = I.ravel()
    Q = Q.ravel()
    lab = (pam_label(I, m_dim) << m_dim) | pam_label(Q, m_dim)
    grid = np.empty(order, dtype=complex)
    grid[lab] = I + 1j * Q
    return grid


def label_bits(order: int) -> np.ndarray:
    m = int(np.log2(order))
    idx = np.arange(order)[:, None]
    shifts = np.arange(m - 1, -1, -1)[None, :]
    return ((idx >> shifts) & 1).astype(np.uint8)


def _normalized(grid: np.ndarray, prior: np.ndarray) -> np.ndarray:
    return grid / np.sqrt(np.sum(prior * np.abs(grid) ** 2))


def build_qam(order: int) -> ShapedConstellation:
    """
    Gray-labeled square QAM with a uniform prior and unit average power.

    Parameters
    ----------
    order : int
        Constellation size, one of 4, 16, 64, 256, 1024.

    Returns
    -------
    ShapedConstellation
    """
    if order not in SUPPORTED_ORDERS:
        raise ValueError(
            f"unsupported QAM order {order}; expected one of {SUPPORTED_ORDERS}"
        )
    grid = _grid(order)
    prior = np.full(order, 1.0 / order)
    return ShapedConstellation(order, _normalized(grid, prior), label_bits(order), prior)


def _mb_weights(energy: np.ndarray, nu: float) -> np.ndarray:
    w = np.exp(-nu * (energy - energy.min()))
    return w / w.sum()


def mb_prior(constellation: ShapedConstellation, target_entropy: float,
             tol: float = 1e-12) -> ShapedConstellation:
    """
    Maxwell-Boltzmann prior ``p_i ∝ exp(-nu |x_i|^2)`` with a given entropy.

    ``nu`` is found by bisection on the monotone map nu -> H(p) over the
    unnormalized integer grid, so the result depends only on the order and the
    target. The returned constellation is renormalized to unit power under the
    new prior.

    Raises
    ------
    ValueError
        If the target lies outside (entropy of the innermost ring, log2 M].
    """
    M = constellation.order
    grid = _grid(M)
    energy = np.abs(grid) ** 2
    h_max = np.log2(M)
    h_min = np.log2(np.count_nonzero(energy == energy.min()))
    if not target_entropy <= h_max + 1e-12:
        raise ValueError(f"target entropy {target_entropy} exceeds log2(M) = {h_max}")
    if not target_entropy > h_min:
        raise ValueError(
            f"target entropy {target_entropy} not above the nu->inf limit {h_min}"
        )
    if target_entropy >= h_max:
        return build_qam(M)

    lo, hi = 0.0, 1.0
    while entropy_bits(_mb_weights(energy, hi)) > target_entropy:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        h = entropy_bits(_mb_weights(energy, mid))
        if abs(h - target_entropy) <= tol or hi - lo <= 1e-17 * hi:
            break
        if h > target_entropy:
            lo = mid
        else:
            hi = mid
    prior = _mb_weights(energy, mid)
    points = _normalized(grid, prior)
    # nu in units of the normalized constellation
    nu = mid * float(np.sum(prior * energy))
    return ShapedConstellation(M, points, label_bits(M), prior, nu)


def with_prior(constellation: ShapedConstellation, prior) -> ShapedConstellation:
    """Same grid and labels under another prior, renormalized to unit power."""
    prior = np.asarray(prior, dtype=float)
    prior = prior / prior.sum()
    grid = _grid(constellation.order)
    return ShapedConstellation(
        constellation.order, _normalized(grid, prior), constellation.labels, prior,
        np.nan,
    )


def product_prior(amplitude_pmf, order: int) -> np.ndarray:
    """2-D prior from a 1-D pmf over positive amplitudes (signs equiprobable)."""
    amplitude_pmf = np.asarray(amplitude_pmf, dtype=float)
    grid = _grid(order)
    ai = amplitude_index(grid.real, 1.0)
    aq = amplitude_index(grid.imag, 1.0)
    return amplitude_pmf[ai] * amplitude_pmf[aq] / 4.0


def hard_decision(symbols, constellation: ShapedConstellation) -> np.ndarray:
    """Nearest-point indices (labels) for a complex symbol array."""
    s = np.asarray(symbols)
    L = constellation.levels_per_dim
    d = constellation.scale
    m_dim = constellation.bits_per_symbol // 2

    def dim(x):
        k = np.clip(np.floor(x / (2 * d)) * 2 + 1, -(L - 1), L - 1).astype(np.int64)
        return pam_label(k, m_dim)

    return (dim(s.real) << m_dim) | dim(s.imag)


def save_constellation(constellation: ShapedConstellation, path) -> None:
    """Write one ``I Q label prior`` row per point."""
    lines = [
        f"# order {constellation.order}",
        f"# nu {float(constellation.nu)!r}",
        "# I Q label prior",
    ]
    for p, lab, pr in zip(constellation.points, constellation.labels, constellation.prior):
        bits = "".join(str(int(b)) for b in lab)
        lines.append(f"{float(p.real)!r} {float(p.imag)!r} {bits} {float(pr)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_constellation(path) -> ShapedConstellation:
    rows = []
    nu = 0.0
    for line in Path(path).read_text().splitlines():
        if line.startswith("# nu"):
            nu = float(line.split()[2])
        if not line.strip() or line.startswith("#"):
            continue
        rows.append(line.split())
    order = len(rows)
    points = np.array([float(r[0]) + 1j * float(r[1]) for r in rows])
    labels = np.array([[int(c) for c in r[2]] for r in rows], dtype=np.uint8)
    prior = np.array([float(r[3]) for r in rows])
    return ShapedConstellation(order, points, labels, prior, nu)
