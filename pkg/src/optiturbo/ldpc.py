"""
AR4JA protograph LDPC codes: circulant lifting, puncturing, encoding and
sum-product decoding.

LLR convention: positive values favour bit 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

DEFAULT_SEED = 20050901

# edge multiplicities of the AR4JA family; the last column is always punctured
_AR4JA_HALF = [[0, 0, 1, 0, 2],
               [1, 1, 0, 1, 3],
               [1, 2, 0, 2, 1]]
_AR4JA_EXT = [[0, 0], [3, 1], [1, 3]]


def ar4ja_protograph(rate) -> np.ndarray:
    """Base matrix of the AR4JA protograph for rate 1/2, 2/3 or 4/5."""
    rate = Fraction(rate).limit_denominator(16)
    n_ext = {Fraction(1, 2): 0, Fraction(2, 3): 1, Fraction(4, 5): 3}.get(rate)
    if n_ext is None:
        raise ValueError(f"rate {rate} is not in the AR4JA family (1/2, 2/3, 4/5)")
    ext = np.tile(np.array(_AR4JA_EXT), (1, n_ext))
    return np.hstack([ext, np.array(_AR4JA_HALF)])


# --- GF(2) polynomial ring modulo x^Z - 1 ----------------------------------

def _pmul(a, b):
    z = np.fft.ifft(np.fft.fft(a) * np.fft.fft(b)).real
    return (np.rint(z).astype(np.int64) & 1).astype(np.uint8)


def _padd(a, b):
    return a ^ b


def _pone(Z):
    e = np.zeros(Z, np.uint8)
    e[0] = 1
    return e


def _pinv(u):
    """Inverse of a unit; needs Z a power of two, where units have odd weight."""
    Z = u.size
    if int(u.sum()) % 2 == 0:
        raise ValueError("circulant is singular")
    nil = u.copy()
    nil[0] ^= 1
    out = _pone(Z)
    t = nil
    idx = np.arange(Z)
    for _ in range(int(np.log2(Z))):
        out = _pmul(out, _padd(_pone(Z), t))
        sq = np.zeros(Z, np.uint8)
        np.bitwise_xor.at(sq, (2 * idx) % Z, t)
        t = sq
    return out


def _pdet(mat):
    n = len(mat)
    if n == 1:
        return mat[0][0]
    out = np.zeros_like(mat[0][0])
    for j in range(n):
        minor = [row[:j] + row[j + 1:] for row in mat[1:]]
        out = _padd(out, _pmul(mat[0][j], _pdet(minor)))
    return out


def _pmatinv(mat):
    n = len(mat)
    dinv = _pinv(_pdet(mat))
    inv = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = [row[:j] + row[j + 1:] for k, row in enumerate(mat) if k != i]
            cof = _pdet(minor) if n > 1 else _pone(dinv.size)
            inv[j][i] = _pmul(cof, dinv)
    return inv


# --- shift selection ---------------------------------------------------------

def _creates_4cycle(edges, new, Z):
    i, j, s = new
    row = [e for e in edges if e[0] == i]
    col = [e for e in edges if e[1] == j]
    pool = edges + [new]
    for e2 in row:
        for e4 in col:
            for e3 in pool:
                if e3[0] != e4[0] or e3[1] != e2[1] or e3 is e2 or e3 is e4:
                    continue
                if (s - e2[2] + e3[2] - e4[2]) % Z == 0:
                    return True
    return False


def _select_shifts(base, Z, seed, tries=200):
    rng = np.random.default_rng(seed)
    entries = [(i, j) for i in range(base.shape[0]) for j in range(base.shape[1])
               for _ in range(base[i, j])]
    order = rng.permutation(len(entries))
    edges = []
    for t in order:
        i, j = entries[t]
        taken = {e[2] for e in edges if e[0] == i and e[1] == j}
        best = None
        for _ in range(tries):
            s = int(rng.integers(Z))
            if s in taken:
                continue
            cand = (i, j, s)
            if best is None:
                best = cand
            if not _creates_4cycle(edges, cand, Z):
                best = cand
                break
        if best is None:
            free = sorted(set(range(Z)) - taken)
            best = (i, j, free[0])
        edges.append(best)
    return sorted(edges)


# --- code object -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LdpcCode:
    """
    Binary LDPC code with a puncturing pattern.

    Attributes
    ----------
    H : scipy.sparse.csr_matrix
        Parity-check matrix over all variable nodes.
    k : int
        Information bits.
    puncture_mask : np.ndarray
        True for variable nodes that are not transmitted.
    info_positions : np.ndarray
        Variable nodes carrying the information bits verbatim.
    lift : int
        Circulant size (0 for codes without circulant structure).
    edges : tuple
        ``(check block, variable block, shift)`` triples of the lifting.
    seed : int
        Seed of the shift selection.
    """

    H: sp.csr_matrix
    k: int
    puncture_mask: np.ndarray
    info_positions: np.ndarray
    lift: int = 0
    base: np.ndarray | None = None
    edges: tuple = ()
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_checks(self) -> int:
        return self.H.shape[0]

    @property
    def n_var(self) -> int:
        return self.H.shape[1]

    @property
    def n_transmitted(self) -> int:
        return int(self.n_var - self.puncture_mask.sum())

    @property
    def rate(self) -> float:
        return self.k / self.n_transmitted

    @property
    def transmitted_positions(self) -> np.ndarray:
        return np.flatnonzero(~self.puncture_mask)

    @cached_property
    def _graph(self):
        coo = self.H.tocoo()
        order = np.lexsort((coo.col, coo.row))
        chk = coo.row[order].astype(np.int64)
        var = coo.col[order].astype(np.int64)
        return chk, var

    @cached_property
    def _encoder(self):
        if self.lift and self.base is not None:
            return _CirculantEncoder(self)
        return _DenseEncoder(self.H)

    def syndrome(self, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.int64)
        return (self.H @ bits) % 2

    def expand(self, values, fill=0.0) -> np.ndarray:
        """Scatter values of transmitted positions onto all variable nodes."""
        values = np.asarray(values)
        out = np.full(self.n_var, fill, dtype=values.dtype)
        out[~self.puncture_mask] = values
        return out


def build_code(family_rate, lift_size: int, seed: int = DEFAULT_SEED) -> LdpcCode:
    """
    Lift an AR4JA protograph with circulant permutations.

    Parameters
    ----------
    family_rate : Fraction or float
        Mother code rate, one of 1/2, 2/3, 4/5.
    lift_size : int
        Circulant size; must be a power of two (k = (columns - 3) * lift).
    seed : int
        Seed for the shift search, recorded on the code.
    """
    base = ar4ja_protograph(family_rate)
    Z = int(lift_size)
    if Z < 2 or Z & (Z - 1):
        raise ValueError(f"lift size {lift_size} must be a power of two >= 2")
    mb, nb = base.shape
    if Z < base.max():
        raise ValueError(f"lift size {Z} cannot hold {base.max()} parallel circulants")
    edges = _select_shifts(base, Z, seed)
    rows, cols = [], []
    r = np.arange(Z)
    for i, j, s in edges:
        rows.append(i * Z + r)
        cols.append(j * Z + (r + s) % Z)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    H = sp.csr_matrix((np.ones(rows.size, np.uint8), (rows, cols)), shape=(mb * Z, nb * Z))
    if H.max() > 1:
        raise ValueError("overlapping circulants")
    puncture = np.zeros(nb * Z, bool)
    puncture[(nb - 1) * Z:] = True
    k = (nb - mb) * Z
    code = LdpcCode(H, k, puncture, np.arange(k), Z, base, tuple(edges), seed,
                    {"family_rate": str(Fraction(family_rate).limit_denominator(16))})
    return code


def puncture(code: LdpcCode, n_target: int) -> LdpcCode:
    """
    Puncture additional parity nodes until ``n_target`` bits remain.

    Extra punctured positions are spread evenly over the transmitted parity
    nodes.
    """
    n_target = int(n_target)
    if n_target < code.k:
        raise ValueError(f"n_target {n_target} < k {code.k}: rate above one")
    base_mask = np.zeros(code.n_var, bool)
    if code.base is not None:
        nb = code.base.shape[1]
        base_mask[(nb - 1) * code.lift:] = True
    else:
        base_mask = code.puncture_mask.copy()
    n_base = code.n_var - int(base_mask.sum())
    if n_target > n_base:
        raise ValueError(f"n_target {n_target} exceeds unpunctured length {n_base}")
    info = np.zeros(code.n_var, bool)
    info[code.info_positions] = True
    parity = np.flatnonzero(~base_mask & ~info)
    extra = n_base - n_target
    mask = base_mask.copy()
    if extra:
        pick = np.floor(np.arange(extra) * parity.size / extra).astype(np.int64)
        mask[parity[pick]] = True
    return replace(code, puncture_mask=mask, meta={**code.meta, "n_target": n_target})


class _CirculantEncoder:
    """Systematic encoder solving the block-circulant parity part in the
    polynomial ring GF(2)[x]/(x^Z - 1)."""

    def __init__(self, code: LdpcCode):
        Z = code.lift
        mb, nb = code.base.shape
        self.Z, self.mb, self.nb = Z, mb, nb
        n_info_blocks = nb - mb
        self.info_edges = [(i, j, s) for i, j, s in code.edges if j < n_info_blocks]
        blocks = [[np.zeros(Z, np.uint8) for _ in range(mb)] for _ in range(mb)]
        for i, j, s in code.edges:
            if j >= n_info_blocks:
                blocks[i][j - n_info_blocks][s] ^= 1
        inv = _pmatinv(blocks)
        # correlation kernels: (C v)[r] = sum_s c[s] v[r+s]
        self.kernels = [[np.conj(np.fft.fft(inv[a][b])) for b in range(mb)] for a in range(mb)]
        self.n_info_blocks = n_info_blocks

    def __call__(self, info):
        Z, mb = self.Z, self.mb
        u = info.reshape(self.n_info_blocks, Z).astype(np.int64)
        syn = np.zeros((mb, Z), np.int64)
        for i, j, s in self.info_edges:
            syn[i] += np.roll(u[j], -s)
        syn &= 1
        S = np.fft.fft(syn, axis=1)
        parity = np.empty((mb, Z), np.uint8)
        for a in range(mb):
            acc = sum(self.kernels[a][b] * S[b] for b in range(mb))
            parity[a] = np.rint(np.fft.ifft(acc).real).astype(np.int64) & 1
        return np.concatenate([info.astype(np.uint8), parity.ravel()])


class _DenseEncoder:
    """Generic encoder from a GF(2) reduced row echelon form of H."""

    def __init__(self, H):
        A = (H.toarray() & 1).astype(np.uint8)
        m, n = A.shape
        packed = np.packbits(A, axis=1)
        pivots = []
        row = 0
        for col in range(n):
            if row == m:
                break
            byte, bit = divmod(col, 8)
            colbits = (packed[row:, byte] >> (7 - bit)) & 1
            hits = np.flatnonzero(colbits)
            if hits.size == 0:
                continue
            p = row + hits[0]
            if p != row:
                packed[[row, p]] = packed[[p, row]]
            allbits = (packed[:, byte] >> (7 - bit)) & 1
            allbits[row] = 0
            tgt = np.flatnonzero(allbits)
            packed[tgt] ^= packed[row]
            pivots.append(col)
            row += 1
        R = np.unpackbits(packed[:row], axis=1)[:, :n]
        self.pivots = np.array(pivots, dtype=np.int64)
        mask = np.ones(n, bool)
        mask[self.pivots] = False
        self.info_positions = np.flatnonzero(mask)
        self.R_info = R[:, self.info_positions].astype(np.int64)
        self.n = n

    def __call__(self, info):
        c = np.zeros(self.n, np.uint8)
        c[self.info_positions] = info
        c[self.pivots] = (self.R_info @ info.astype(np.int64)) & 1
        return c


def encode(code: LdpcCode, info_bits, full: bool = False) -> np.ndarray:
    """
    Systematic encoding.

    Returns the transmitted positions only unless ``full`` is set.
    """
    info_bits = np.asarray(info_bits)
    if info_bits.ndim != 1 or info_bits.size != code.k:
        raise ValueError(f"expected {code.k} information bits, got {info_bits.size}")
    c = code._encoder(info_bits.astype(np.uint8))
    return c if full else c[~code.puncture_mask]


def info_bits_of(code: LdpcCode, codeword_full) -> np.ndarray:
    return np.asarray(codeword_full)[code.info_positions]


@dataclass
class DecodeResult:
    posterior_llrs: np.ndarray
    extrinsic_llrs: np.ndarray
    hard_bits: np.ndarray
    converged: bool
    iterations_used: int


_PHI_MIN = 1e-20
_PHI_MAX = 60.0


def _phi(x):
    x = np.clip(x, _PHI_MIN, _PHI_MAX)
    return np.log1p(2.0 / np.expm1(x))


def decode_bp(code: LdpcCode, channel_llrs, max_iters: int = 50,
              llr_clip: float = 1e3) -> DecodeResult:
    """
    Flooding sum-product decoder.

    Parameters
    ----------
    code : LdpcCode
    channel_llrs : array_like
        One value per variable node (punctured nodes 0) or one per
        transmitted bit, in which case punctured nodes are filled with 0.
    max_iters : int
        Iteration budget; decoding stops once every check is satisfied.

    Returns
    -------
    DecodeResult
        Arrays over all variable nodes.
    """
    llr = np.asarray(channel_llrs, dtype=float)
    if llr.size == code.n_transmitted and llr.size != code.n_var:
        llr = code.expand(llr)
    if llr.size != code.n_var:
        raise ValueError(f"expected {code.n_var} or {code.n_transmitted} LLRs")
    llr = np.clip(llr, -llr_clip, llr_clip)
    chk, var = code._graph
    m = code.n_checks
    c2v = np.zeros(chk.size)
    total = llr.copy()
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        v2c = total[var] - c2v
        mag = _phi(np.abs(v2c))
        neg = v2c < 0
        S = np.bincount(chk, weights=mag, minlength=m)
        parity = np.bincount(chk, weights=neg, minlength=m).astype(np.int64) & 1
        sign = 1.0 - 2.0 * (parity[chk] ^ neg)
        c2v = sign * _phi(S[chk] - mag)
        total = np.clip(llr + np.bincount(var, weights=c2v, minlength=code.n_var),
                        -llr_clip, llr_clip)
        hard = total < 0
        if not np.any(np.bincount(chk, weights=hard[var], minlength=m).astype(np.int64) & 1):
            converged = True
            break
    else:
        it = max_iters
    hard = (total < 0).astype(np.uint8)
    return DecodeResult(total, total - llr, hard, converged, it)


# --- alist I/O -----------------------------------------------------------------

def write_alist(code_or_H, path) -> None:
    H = code_or_H.H if isinstance(code_or_H, LdpcCode) else sp.csr_matrix(code_or_H)
    H = sp.csr_matrix(H)
    m, n = H.shape
    csc = H.tocsc()
    col_w = np.diff(csc.indptr)
    row_w = np.diff(H.indptr)
    lines = [f"{n} {m}", f"{col_w.max()} {row_w.max()}",
             " ".join(map(str, col_w)), " ".join(map(str, row_w))]
    for j in range(n):
        idx = np.sort(csc.indices[csc.indptr[j]:csc.indptr[j + 1]]) + 1
        idx = np.concatenate([idx, np.zeros(col_w.max() - idx.size, int)])
        lines.append(" ".join(map(str, idx)))
    for i in range(m):
        idx = np.sort(H.indices[H.indptr[i]:H.indptr[i + 1]]) + 1
        idx = np.concatenate([idx, np.zeros(row_w.max() - idx.size, int)])
        lines.append(" ".join(map(str, idx)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_alist(path) -> sp.csr_matrix:
    tok = Path(path).read_text().split("\n")
    n, m = map(int, tok[0].split())
    rows, cols = [], []
    for j in range(n):
        for r in tok[4 + j].split():
            r = int(r)
            if r:
                rows.append(r - 1)
                cols.append(j)
    return sp.csr_matrix((np.ones(len(rows), np.uint8), (rows, cols)), shape=(m, n))


def code_from_alist(path, puncture_mask=None) -> LdpcCode:
    """Import a parity-check matrix; information positions come from
    Gaussian elimination."""
    H = read_alist(path)
    enc = _DenseEncoder(H)
    mask = np.zeros(H.shape[1], bool) if puncture_mask is None else np.asarray(puncture_mask, bool)
    code = LdpcCode(H, enc.info_positions.size, mask, enc.info_positions)
    code.__dict__["_encoder"] = enc
    return code


MODULATION_CODES = {
    # modulation label: (mother rate, lift, transmitted length)
    "shaped1024": (Fraction(4, 5), 2048, 20480),
    "uniform256": (Fraction(4, 5), 2048, 20160),
    "uniform1024": (Fraction(1, 2), 8192, 25200),
}


def modulation_code(name: str, seed: int = DEFAULT_SEED) -> LdpcCode:
    """Punctured code used with modulation row ``name``."""
    rate, lift, n = MODULATION_CODES[name]
    return puncture(build_code(rate, lift, seed), n)
