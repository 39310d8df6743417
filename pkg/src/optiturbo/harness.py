"""
Monte Carlo experiment harness: frame generation, link sweeps over launch
power and span count, AWGN threshold sweeps, CSV output.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np

from .ccdm import (Composition, amplitude_bits, ccdm_encode, codeword_from_labels,
                   labels_from_codeword, optimal_composition, pas_rate)
from .config import ExperimentConfig
from .constellation import ShapedConstellation, build_qam, mb_prior
from .fiber import propagate_link
from .ldpc import LdpcCode, build_code, decode_bp, encode, puncture
from .metrics import decoding_threshold, rule_of_three, snr_eff
from .rx import RxConfig, front_end
from .turbo import FrameLayout, posterior_llrs, turbo_run
from .tx import dbm_to_w, insert_pilots, interleave, pulse_shape, wdm_mux

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Modulation:
    order: int
    entropy: float | None
    family_rate: Fraction
    lift: int
    n_transmitted: int

    @property
    def shaped(self) -> bool:
        return self.entropy is not None

    @property
    def symbols_per_block(self) -> int:
        return self.n_transmitted // int(np.log2(self.order))

    @property
    def code_rate(self) -> float:
        return self.k / self.n_transmitted

    @property
    def k(self) -> int:
        """Information bits: protograph columns minus checks, times the lift."""
        cols = {Fraction(1, 2): 5, Fraction(2, 3): 7, Fraction(4, 5): 11}[self.family_rate]
        return (cols - 3) * self.lift

    @property
    def net_rate(self) -> float:
        """Information rate H - (1 - R) log2 M, bits per 2-D symbol."""
        m = int(np.log2(self.order))
        h = self.entropy if self.shaped else float(m)
        return pas_rate(h, self.code_rate, m)

    def net_rate_with_pilots(self, pilot_fraction: float) -> float:
        """Net rate per transmitted slot once pilot overhead is discounted."""
        return self.net_rate * (1.0 - pilot_fraction)


MODULATIONS = {
    "shaped1024": Modulation(1024, 8.5, Fraction(4, 5), 2048, 20480),
    "uniform256": Modulation(256, None, Fraction(4, 5), 2048, 20160),
    "uniform1024": Modulation(1024, None, Fraction(1, 2), 8192, 25200),
}


@dataclass(frozen=True, eq=False)
class System:
    """Everything about a modulation row that does not depend on the data."""

    name: str
    modulation: Modulation
    constellation: ShapedConstellation
    code: LdpcCode
    composition: Composition | None

    @property
    def bits_per_symbol(self) -> int:
        return self.constellation.bits_per_symbol

    @property
    def symbols_per_block(self) -> int:
        return self.modulation.symbols_per_block


@lru_cache(maxsize=8)
def build_system(name: str, ldpc_seed: int, ccdm_block: int) -> System:
    mod = MODULATIONS[name]
    con = build_qam(mod.order)
    comp = None
    if mod.shaped:
        con = mb_prior(con, mod.entropy)
        n_amp = 2 * mod.symbols_per_block
        if n_amp % ccdm_block:
            raise ValueError(f"CCDM block {ccdm_block} does not divide {n_amp} amplitudes per codeword")
        comp = optimal_composition(con.amplitude_prior, ccdm_block)
    code = puncture(build_code(mod.family_rate, mod.lift, ldpc_seed), mod.n_transmitted)
    if mod.shaped:
        n_amp_bits = 2 * mod.symbols_per_block * (con.bits_per_symbol // 2 - 1)
        if n_amp_bits != code.k:
            raise ValueError("amplitude bits must fill the systematic part exactly")
    return System(name, mod, con, code, comp)


def system_for(cfg: ExperimentConfig) -> System:
    return build_system(cfg["modulation"], int(cfg["ldpc"]["seed"]), int(cfg["ccdm"]["block_length"]))


# --- frame generation -------------------------------------------------------

PURPOSE_DATA, PURPOSE_INTERLEAVER, PURPOSE_PILOT, PURPOSE_NOISE = 0, 1, 2, 3


def seed_for(*keys) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(k) for k in keys])


def block_codeword(system: System, rng: np.random.Generator):
    """
    One LDPC block: information bits, transmitted codeword, symbol labels.

    Shaped rows run the matcher first; its amplitude labels are the
    systematic bits, so parity lands on the sign positions.
    """
    code = system.code
    con = system.constellation
    if system.composition is not None:
        comp = system.composition
        n_ccdm = (2 * system.symbols_per_block) // comp.block_length
        amps = np.concatenate([ccdm_encode(rng.integers(0, 2, comp.n_bits), comp)
                               for _ in range(n_ccdm)])
        info = amplitude_bits(amps.reshape(-1, 2), con).reshape(-1)
    else:
        info = rng.integers(0, 2, code.k).astype(np.uint8)
    cw = encode(code, info)
    labels = labels_from_codeword(cw, system.bits_per_symbol)
    return info, cw, labels


def label_index(labels) -> np.ndarray:
    m = labels.shape[1]
    return (labels.astype(np.int64) << np.arange(m - 1, -1, -1)).sum(axis=1)


@dataclass
class ChannelData:
    frame: object
    payload: np.ndarray
    info: list
    codewords: list
    layout: FrameLayout


def channel_frame(system: System, cfg: ExperimentConfig, trial: int, channel: int) -> ChannelData:
    base = int(cfg["sweep"]["seed"])
    tx = cfg["tx"]
    nb = int(tx["blocks_per_pol"])
    payload = np.empty((2, nb * system.symbols_per_block), dtype=complex)
    info, cws, seeds = [], [], []
    for p in range(2):
        irow, crow, srow = [], [], []
        for b in range(nb):
            rng = np.random.default_rng(seed_for(base, trial, channel, p, b, PURPOSE_DATA))
            i, c, lab = block_codeword(system, rng)
            iseed = seed_for(base, trial, channel, p, b, PURPOSE_INTERLEAVER)
            sym = system.constellation.points[label_index(lab)]
            sl = slice(b * system.symbols_per_block, (b + 1) * system.symbols_per_block)
            payload[p, sl] = interleave(sym, iseed)
            irow.append(i)
            crow.append(c)
            srow.append(iseed)
        info.append(irow)
        cws.append(crow)
        seeds.append(tuple(srow))
    frame = insert_pilots(payload, tx["pilot_rate"], seed_for(base, trial, channel, PURPOSE_PILOT),
                          frames_per_block=nb)
    layout = FrameLayout(nb, system.symbols_per_block, system.bits_per_symbol, tuple(seeds))
    return ChannelData(frame, payload, info, cws, layout)


def launch(cfg: ExperimentConfig, channels, power_dbm: float):
    tx = cfg["tx"]
    waves = [pulse_shape(ch.frame, int(tx["sps"]), tx["rolloff"], symbol_rate=tx["symbol_rate"],
                         method=tx["pulse"]) for ch in channels]
    fs = tx["sim_sps"] * tx["symbol_rate"]
    return wdm_mux(waves, tx["grid_spacing"], float(dbm_to_w(power_dbm)), fs)


def awgn_channel(wave, cfg: ExperimentConfig, power_dbm: float, seed: int):
    """
    Bypass the fiber: add white noise so the centre channel sees the
    configured symbol SNR after matched filtering.
    """
    snr = 10 ** (cfg["channel"]["snr_db"] / 10)
    per_pol = float(dbm_to_w(power_dbm)) / 2
    var = per_pol * wave.sample_rate / (cfg["tx"]["symbol_rate"] * snr)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((2, 2, wave.n_samples)) * np.sqrt(var / 2)
    return wave.with_samples(wave.samples + noise[0] + 1j * noise[1])


def link_seed(cfg: ExperimentConfig, trial: int, power_index: int) -> int:
    return int(seed_for(cfg["sweep"]["seed"], trial, power_index, PURPOSE_NOISE).generate_state(1)[0])


# --- sweeps -----------------------------------------------------------------

CSV_FIELDS = [
    "config_hash", "modulation", "receiver", "power_dbm", "spans", "trial", "iteration",
    "seed", "power_index", "snr_eff_db", "pre_fec_ber", "post_fec_ber", "bit_errors",
    "bits", "converged", "noise_var", "error",
]


def run_point(cfg: ExperimentConfig, trial: int, power_index: int, span_list=None) -> list:
    """
    Simulate one (trial, launch power) for every span count and receiver.

    The fiber is propagated once to the largest span count; shorter links
    are snapshots of the same run, so noise realizations are shared.
    """
    system = system_for(cfg)
    sw = cfg["sweep"]
    power = float(sw["power_dbm"][power_index])
    spans = sorted(int(s) for s in (span_list or sw["spans"]))
    n_ch = int(cfg["tx"]["n_channels"])
    chans = [channel_frame(system, cfg, trial, c) for c in range(n_ch)]
    center = chans[n_ch // 2]
    wave = launch(cfg, chans, power)
    seed = link_seed(cfg, trial, power_index)
    if cfg["channel"]["mode"] == "awgn":
        snaps = {0: awgn_channel(wave, cfg, power, seed)}
    else:
        _, snaps = propagate_link(wave, cfg.link(max(spans), seed), snapshots=spans)
    ref = {"payload": center.payload, "codewords": center.codewords, "info": center.info}
    rows = []
    for n in spans:
        for rc in cfg["receivers"]:
            rx_raw = cfg["rx"]
            rxc = RxConfig(rc["mode"], rx_raw["dbp_steps_per_span"], rx_raw["dbp_step_rule"], None,
                           cfg.link(n, seed), rx_raw["sps"], rx_raw["cpr_window"])
            stream = front_end(snaps[n], rxc, center.frame.pilot_positions, center.frame.pilot_symbols)
            res = turbo_run(stream, system.code, system.constellation,
                            cfg.turbo(int(rc["turbo_iters"])), center.layout, ref)
            for rec in res.iterations:
                rows.append({
                    "config_hash": cfg.hash,
                    "modulation": cfg["modulation"],
                    "receiver": rc["name"],
                    "power_dbm": power,
                    "spans": n,
                    "trial": trial,
                    "iteration": rec.iteration,
                    "seed": f"{sw['seed']}:{trial}:{power_index}",
                    "power_index": power_index,
                    "snr_eff_db": rec.snr_eff_db,
                    "pre_fec_ber": rec.pre_fec_ber,
                    "post_fec_ber": rec.post_fec_ber,
                    "bit_errors": rec.bit_errors,
                    "bits": rec.bits,
                    "converged": int(all(d.converged for row in rec.decode for d in row)),
                    "noise_var": rec.noise_var,
                    "error": "",
                })
    return rows


def _run_point_task(args):
    raw, trial, pidx = args
    cfg = ExperimentConfig.from_dict(raw)
    try:
        return run_point(cfg, trial, pidx)
    except Exception as exc:  # record the failure and keep sweeping
        log.exception("unit trial=%d power_index=%d failed", trial, pidx)
        sw = cfg["sweep"]
        return [{
            "config_hash": cfg.hash, "modulation": cfg["modulation"], "receiver": rc["name"],
            "power_dbm": float(sw["power_dbm"][pidx]), "spans": int(n), "trial": trial,
            "iteration": 0, "seed": f"{sw['seed']}:{trial}:{pidx}", "power_index": pidx,
            "error": f"{type(exc).__name__}: {exc}",
        } for n in sw["spans"] for rc in cfg["receivers"]]


def _fmt(v):
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def read_csv(path) -> list:
    path = Path(path)
    if not path.exists():
        return []
    with path.open(newline="") as f:
        return list(csv.DictReader(f))


def run_experiment(cfg: ExperimentConfig, csv_path, workers: int = 1, resume: bool = True) -> "ExperimentResult":
    """
    Run every (trial, power) unit and append its rows to ``csv_path``.

    Units already present for this config hash are skipped, so an
    interrupted sweep resumes where it stopped. Rows are written in unit
    order whatever the worker count.
    """
    csv_path = Path(csv_path)
    sw = cfg["sweep"]
    done = set()
    if resume:
        for r in read_csv(csv_path):
            if r["config_hash"] == cfg.hash:
                done.add((int(r["trial"]), int(r["power_index"])))
    elif csv_path.exists():
        csv_path.unlink()
    units = [(cfg.raw, t, p) for p in range(len(sw["power_dbm"])) for t in range(int(sw["n_trials"]))
             if (t, p) not in done]
    new_file = not csv_path.exists()
    with csv_path.open("a", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        if new_file:
            writer.writeheader()
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                results = ex.map(_run_point_task, units)
                for rows in results:
                    _write(writer, f, rows)
        else:
            for u in units:
                _write(writer, f, _run_point_task(u))
    res = ExperimentResult.from_rows([r for r in read_csv(csv_path) if r["config_hash"] == cfg.hash])
    short = res.under_counted(int(sw["min_bits"]))
    if short:
        log.warning("%d points counted fewer than %d bits; add trials or blocks for a tighter BER bound",
                    len(short), int(sw["min_bits"]))
    return res


def _write(writer, f, rows):
    for r in rows:
        writer.writerow({k: _fmt(v) for k, v in r.items()})
    f.flush()


@dataclass
class PointSummary:
    receiver: str
    power_dbm: float
    spans: int
    iteration: int
    snr_eff_db: float
    pre_fec_ber: float
    post_fec_ber: float
    bit_errors: int
    bits_counted: int
    trials: int

    @property
    def ber_upper_95(self) -> float:
        return rule_of_three(self.bits_counted) if self.bit_errors == 0 else self.post_fec_ber


@dataclass
class ExperimentResult:
    """Per (receiver, power, spans, iteration) averages over trials.

    Passes that stopped early are carried forward to later iterations, so
    every iteration index up to the maximum appears for each trial.
    """

    points: list
    failed: list = field(default_factory=list)

    @classmethod
    def from_rows(cls, rows) -> "ExperimentResult":
        by_trial, failed = {}, []
        for r in rows:
            if r.get("error"):
                failed.append(r)
                continue
            key = (r["receiver"], float(r["power_dbm"]), int(r["spans"]), int(r["trial"]))
            by_trial.setdefault(key, {})[int(r["iteration"])] = r
        max_it = {}
        for (rc, *_), its in by_trial.items():
            max_it[rc] = max(max_it.get(rc, 0), max(its))
        acc = {}
        for (rc, p, n, t), its in by_trial.items():
            last = None
            for i in range(1, max_it[rc] + 1):
                last = its.get(i, last)
                acc.setdefault((rc, p, n, i), []).append(last)
        points = []
        for (rc, p, n, i), rs in sorted(acc.items()):
            errors = sum(int(r["bit_errors"]) for r in rs)
            bits = sum(int(r["bits"]) for r in rs)
            points.append(PointSummary(
                rc, p, n, i,
                float(np.mean([float(r["snr_eff_db"]) for r in rs])),
                float(np.mean([float(r["pre_fec_ber"]) for r in rs])),
                errors / bits if bits else float("nan"),
                errors, bits, len(rs)))
        return cls(points, failed)

    def select(self, receiver=None, power_dbm=None, spans=None, iteration=None) -> list:
        out = []
        for p in self.points:
            if receiver is not None and p.receiver != receiver:
                continue
            if power_dbm is not None and not np.isclose(p.power_dbm, power_dbm):
                continue
            if spans is not None and p.spans != spans:
                continue
            if iteration is not None and p.iteration != iteration:
                continue
            out.append(p)
        return out

    def under_counted(self, min_bits: int) -> list:
        return [p for p in self.points if p.bits_counted < min_bits]

    def optimal_power(self, receiver: str, spans: int, iteration: int) -> float:
        pts = self.select(receiver, spans=spans, iteration=iteration)
        return max(pts, key=lambda p: p.snr_eff_db).power_dbm

    def max_error_free_spans(self, receiver: str, power_dbm: float, iteration: int) -> int:
        """Largest span count such that it and every shorter evaluated link decode error-free."""
        pts = sorted(self.select(receiver, power_dbm, iteration=iteration), key=lambda p: p.spans)
        best = 0
        for p in pts:
            if p.bit_errors:
                break
            best = p.spans
        return best

    def flag_non_unimodal(self, receiver: str, spans: int, iteration: int, tol_db: float = 0.1) -> bool:
        """True when SNR versus power rises again after falling by more than ``tol_db``."""
        pts = sorted(self.select(receiver, spans=spans, iteration=iteration), key=lambda p: p.power_dbm)
        s = np.array([p.snr_eff_db for p in pts])
        k = int(np.argmax(s))
        rising = np.diff(s[: k + 1])
        falling = np.diff(s[k:])
        return bool(np.any(rising < -tol_db) or np.any(falling > tol_db))


# --- AWGN threshold ---------------------------------------------------------

def awgn_point(system: System, snr_db: float, frames: int, seed: int, bp_iters: int = 50):
    """
    Direct bit-metric demapping over complex AWGN at ``snr_db`` (unit-power
    symbols).

    Returns
    -------
    dict
        ``bit_errors``, ``bits``, ``frame_errors``, measured ``snr_eff_db``.
    """
    sigma2 = 10 ** (-snr_db / 10)
    errors = bits = frame_err = 0
    snrs = []
    for f in range(frames):
        rng = np.random.default_rng(seed_for(seed, round(snr_db * 1000), f))
        info, _, lab = block_codeword(system, rng)
        s = system.constellation.points[label_index(lab)]
        noise = np.sqrt(sigma2 / 2) * (rng.standard_normal(s.size) + 1j * rng.standard_normal(s.size))
        r = s + noise
        snrs.append(snr_eff(r, s))
        llr = posterior_llrs(r, 1.0, sigma2, system.constellation)
        res = decode_bp(system.code, codeword_from_labels(llr), bp_iters)
        e = int(np.sum(res.hard_bits[system.code.info_positions] != info))
        errors += e
        frame_err += e > 0
        bits += info.size
    return {"snr_db": snr_db, "bit_errors": errors, "bits": bits, "frame_errors": frame_err,
            "snr_eff_db": float(np.mean(snrs))}


def awgn_threshold(system: System, snr_grid, frames: int = 64, seed: int = 7,
                   bp_iters: int = 50, stop_at_failure: bool = True):
    """
    Sweep SNR from high to low and report the decoding threshold.

    Parameters
    ----------
    stop_at_failure : bool
        Skip grid points below the first SNR that shows errors. They cannot
        move the threshold.
    """
    grid = sorted(float(s) for s in snr_grid)
    out = []
    for s in reversed(grid):
        pt = awgn_point(system, s, frames, seed, bp_iters)
        out.append(pt)
        log.info("AWGN %.2f dB: %d errors / %d bits", s, pt["bit_errors"], pt["bits"])
        if pt["bit_errors"] and stop_at_failure:
            break
    out.reverse()
    thr, res = decoding_threshold([p["snr_db"] for p in out], [p["bit_errors"] for p in out])
    return thr, res, out
