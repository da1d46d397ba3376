"""Experiment configuration: INI-style key/value sections with # comments.

Grammar (one documented form, trivially parseable in any language):

    [section]
    key = value            # inline comments allowed
    list_key = 1.0 2.0     # whitespace-separated numbers

Sections: [experiment] (kind, seed), [model] (name + numeric parameters),
[grid] (cells, optional box), [sim] (dt, t, n_paths, store_stride),
[run] (experiment-specific knobs), [output] (dir, plots).
Unknown sections or keys are errors that name the offender.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .models import MODEL_REGISTRY

__all__ = ["ExperimentConfig", "ConfigError", "EXPERIMENT_KINDS", "load_config"]

EXPERIMENT_KINDS = {
    "stationarity": "Grid-residual refinement study (or ensemble density check "
                    "for singular-diffusion models): does e^{-phi} stay put?",
    "thermo-balance": "Relaxation run recording (U, S, F, ep, hd); checks "
                      "dF/dt = -ep and dS/dt = ep - hd, and that F never increases.",
    "fig1-reversal": "Two-time joint-histogram symmetry: the +g forward joint law "
                     "must match the -g (current-reversed) law with time slots "
                     "swapped; a same-law baseline calibrates the Monte Carlo "
                     "noise and an unswapped +g control shows raw irreversibility.",
    "ao-check": "Random (S, A, phi) constructions: current orthogonal to the "
                "potential gradient and divergence-free after assembly.",
    "perturbation-check": "Small-noise expansion residuals (orders 0..2) and "
                          "time-reversal classification for the model.",
    "ensemble-vs-grid": "Euler-Maruyama ensemble vs finite-volume solution of the "
                        "same model: binned L1 density distance plus moment "
                        "comparison against the closed-form linear flow where "
                        "available.",
}

_KNOWN_KEYS = {
    "experiment": {"kind", "seed"},
    "model": None,  # validated against the registry entry
    "grid": {"cells", "box"},
    "sim": {"dt", "t", "n_paths", "store_stride"},
    "run": {"t_final", "bins", "t_lag", "displacement", "tolerance", "trials",
            "refine", "epsilon"},
    "output": {"dir", "plots"},
}


class ConfigError(ValueError):
    """Invalid configuration; carries the offending key when known."""

    def __init__(self, message: str, key: str = None):
        super().__init__(message)
        self.key = key


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    model_name: str
    model_params: dict
    grid_cells: tuple = ()
    grid_box: list = None
    sim: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)
    out_dir: str = "runs/out"
    plots: bool = True

    def resolved(self) -> dict:
        """JSON-friendly view for the manifest."""
        return {
            "experiment": {"kind": self.kind, "seed": self.seed},
            "model": {"name": self.model_name, **self.model_params},
            "grid": {"cells": list(self.grid_cells),
                     "box": self.grid_box},
            "sim": self.sim,
            "run": self.run,
            "output": {"dir": self.out_dir, "plots": self.plots},
        }


def _floats(text: str) -> list:
    return [float(v) for v in text.split()]


def load_config(path) -> ExperimentConfig:
    """Parse and validate a config file; raises ConfigError with the key."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                       interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"unknown section [{section}]", key=section)
        allowed = _KNOWN_KEYS[section]
        if allowed is not None:
            for key in parser[section]:
                if key not in allowed:
                    raise ConfigError(f"unknown key {key!r} in [{section}]", key=key)

    if "experiment" not in parser or "kind" not in parser["experiment"]:
        raise ConfigError("missing [experiment] kind", key="kind")
    kind = parser["experiment"]["kind"].strip()
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; known: "
                          f"{sorted(EXPERIMENT_KINDS)}", key="kind")
    seed = parser["experiment"].getint("seed", fallback=0)

    if "model" not in parser or "name" not in parser["model"]:
        raise ConfigError("missing [model] name", key="name")
    model_name = parser["model"]["name"].strip()
    if model_name not in MODEL_REGISTRY:
        raise ConfigError(f"unknown model {model_name!r}; known: "
                          f"{sorted(MODEL_REGISTRY)}", key="name")
    entry = MODEL_REGISTRY[model_name]
    model_params = {}
    for key, raw in parser["model"].items():
        if key == "name":
            continue
        if key not in entry["params"]:
            raise ConfigError(f"unknown parameter {key!r} for model "
                              f"{model_name!r}", key=key)
        try:
            model_params[key] = float(raw)
        except ValueError as exc:
            raise ConfigError(f"parameter {key!r} is not a number: {raw!r}",
                              key=key) from exc

    cfg = ExperimentConfig(kind=kind, seed=seed, model_name=model_name,
                           model_params=model_params)

    if "grid" in parser:
        if "cells" in parser["grid"]:
            try:
                cfg.grid_cells = tuple(int(v) for v in parser["grid"]["cells"].split())
            except ValueError as exc:
                raise ConfigError("grid cells must be integers", key="cells") from exc
        if "box" in parser["grid"]:
            vals = _floats(parser["grid"]["box"])
            if len(vals) % 2:
                raise ConfigError("grid box needs lo/hi pairs", key="box")
            cfg.grid_box = [[vals[2 * i], vals[2 * i + 1]]
                            for i in range(len(vals) // 2)]

    if "sim" in parser:
        s = parser["sim"]
        try:
            cfg.sim = {k: (int(s[k]) if k in ("n_paths", "store_stride")
                           else float(s[k])) for k in s}
        except ValueError as exc:
            raise ConfigError(f"bad numeric value in [sim]: {exc}") from exc
        for k, v in cfg.sim.items():
            if v <= 0:
                raise ConfigError(f"[sim] {k} must be positive", key=k)

    if "run" in parser:
        try:
            cfg.run = {k: (int(parser["run"][k]) if k in ("bins", "trials", "refine")
                           else float(parser["run"][k])) for k in parser["run"]}
        except ValueError as exc:
            raise ConfigError(f"bad numeric value in [run]: {exc}") from exc

    if "output" in parser:
        cfg.out_dir = parser["output"].get("dir", cfg.out_dir).strip()
        raw = parser["output"].get("plots", "true").strip().lower()
        if raw not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"plots must be boolean, got {raw!r}", key="plots")
        cfg.plots = raw in ("true", "1", "yes")
    return cfg
