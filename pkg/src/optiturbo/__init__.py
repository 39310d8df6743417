"""Probabilistically shaped QAM over nonlinear fiber with an adaptive turbo receiver."""

from .ccdm import Composition, ccdm_decode, ccdm_encode, optimal_composition
from .config import ExperimentConfig
from .constellation import ShapedConstellation, build_qam, mb_prior
from .fiber import AmplifierParams, FiberParams, LinkConfig, propagate_link
from .harness import MODULATIONS, ExperimentResult, awgn_threshold, run_experiment, run_point
from .ldpc import LdpcCode, build_code, decode_bp, encode, puncture, read_alist, write_alist
from .metrics import ThresholdNotBracketed, ber, decoding_threshold, snr_eff
from .rx import RxConfig, SymbolStream, front_end
from .turbo import TurboConfig, turbo_run

__version__ = "0.1.0"

__all__ = [
    "AmplifierParams", "Composition", "ExperimentConfig", "ExperimentResult", "FiberParams",
    "LdpcCode", "LinkConfig", "MODULATIONS", "RxConfig", "ShapedConstellation", "SymbolStream",
    "ThresholdNotBracketed", "TurboConfig", "awgn_threshold", "ber", "build_code", "build_qam",
    "ccdm_decode", "ccdm_encode", "decode_bp", "decoding_threshold", "encode", "front_end",
    "mb_prior", "optimal_composition", "propagate_link", "puncture", "read_alist", "run_experiment",
    "run_point", "snr_eff", "turbo_run", "write_alist",
]
