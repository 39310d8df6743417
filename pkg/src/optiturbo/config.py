"""Experiment configuration: YAML file, defaults, hashing."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .fiber import AmplifierParams, FiberParams, LinkConfig
from .turbo import TurboConfig

# every physical constant lives here so the config file can override it
DEFAULTS = {
    "modulation": "shaped1024",
    "ldpc": {"seed": 20050901, "bp_iters": 50},
    "ccdm": {"block_length": 2048},
    "tx": {
        "symbol_rate": 32e9,
        "sps": 16,
        "sim_sps": 8,
        "rolloff": 0.01,
        "pulse": "fd",
        "pilot_rate": 0.05,
        "n_channels": 3,
        "grid_spacing": 37.5e9,
        "blocks_per_pol": 2,
    },
    # "awgn" bypasses the fiber and adds white noise at channel.snr_db
    "channel": {"mode": "fiber", "snr_db": None},
    "fiber": {
        "alpha": 0.2,
        "gamma": 1.3,
        "dispersion_D": 17.0,
        "span_length": 50.0,
        "step_size": 100.0,
        "reference_wavelength": 1550.0,
    },
    "amp": {"noise_figure": 4.5, "add_noise": True},
    "rx": {"sps": 2, "dbp_steps_per_span": 4, "dbp_step_rule": "log", "cpr_window": 5},
    "receivers": [
        {"name": "EDC", "mode": "EDC", "turbo_iters": 1},
        {"name": "DBP+TEq", "mode": "DBP", "turbo_iters": 10},
    ],
    "turbo": {
        "taps_N": 21,
        "rls_forgetting": 0.999,
        "rls_delta": 0.01,
        "w_stride": 1,
        "first_pass": "decision",
        "early_stop": True,
    },
    "sweep": {
        "power_dbm": [0.0],
        "spans": [10],
        "n_trials": 5,
        "seed": 1,
        "min_bits": 1_000_000,
    },
    "awgn": {
        "snr_db": [20.0, 20.5, 21.0],
        "frames": 64,
        "seed": 7,
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved configuration; ``raw`` is the full nested mapping."""

    raw: dict

    @classmethod
    def from_dict(cls, d: dict | None = None) -> "ExperimentConfig":
        raw = _merge(DEFAULTS, d or {})
        validate(raw)
        return cls(raw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()) or {})

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.raw, sort_keys=True))

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    @property
    def fiber(self) -> FiberParams:
        return FiberParams(**self.raw["fiber"])

    def link(self, n_spans: int, seed: int) -> LinkConfig:
        return LinkConfig(n_spans, self.fiber, AmplifierParams(**self.raw["amp"]), seed)

    def turbo(self, max_iters: int) -> TurboConfig:
        t = dict(self.raw["turbo"])
        t["bp_iters"] = self.raw["ldpc"]["bp_iters"]
        return TurboConfig(max_turbo_iters=max_iters, **t)

    def with_overrides(self, **sections) -> "ExperimentConfig":
        return ExperimentConfig.from_dict(_merge(self.raw, sections))


def config_hash(raw: dict) -> str:
    """sha1 of the canonical JSON form, truncated like a short git hash."""
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha1(blob.encode()).hexdigest()[:12]


def validate(raw: dict) -> None:
    from .harness import MODULATIONS

    if raw["modulation"] not in MODULATIONS:
        raise ValueError(f"unknown modulation {raw['modulation']!r}; choose from {sorted(MODULATIONS)}")
    sw = raw["sweep"]
    if not sw["power_dbm"] or not sw["spans"]:
        raise ValueError("power and span grids must be non-empty")
    if int(sw["n_trials"]) < 1:
        raise ValueError("n_trials must be at least 1")
    if raw["tx"]["n_channels"] % 2 == 0:
        raise ValueError("n_channels must be odd")
    ch = raw["channel"]
    if ch["mode"] not in ("fiber", "awgn"):
        raise ValueError(f"unknown channel mode {ch['mode']!r}")
    if ch["mode"] == "awgn":
        if ch["snr_db"] is None:
            raise ValueError("awgn channel needs channel.snr_db")
        if [int(s) for s in sw["spans"]] != [0]:
            raise ValueError("awgn channel bypasses the fiber; set sweep.spans to [0]")
    for r in raw["receivers"]:
        if r["mode"] not in ("EDC", "DBP"):
            raise ValueError(f"receiver {r['name']}: unknown mode {r['mode']!r}")
