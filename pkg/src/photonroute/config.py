"""Run configuration: one JSON document drives every command.

Schema (every section optional; missing keys take the defaults below)::

    {
      "seed": 42,                       # unsigned 64-bit master seed
      "n_attempts": 1000000,
      "device": {
        "extinction_db": [10.2, 7.6],   # or "couplers": {"r1": .., "r2": ..}
        "anchors": [{"current_mA": 0, "kind": "port1_max"},
                    {"current_mA": 11.05, "kind": "split_50_50"},
                    {"current_mA": 16.6, "kind": "port2_near_max"}],
        "i_max_mA": 16.6,
        "loss_L": 0.31
      },
      "source": {
        "current_mA": 0.0,
        "cycle":    {"rep_rate_hz", "wait_ns", "cool_ns", "pump_ns", "excite_ns"},
        "emission": {"kind", "tau_ns", "rise_ns", "t0_ns"},
        "budget":   {"p_emit_collect", "p_ref_collect", "qfc1", "qfc2",
                     "eta1", "eta2", "dark_rate_hz": [ref, port1, port2]}
      },
      "analysis": {"bin_width_ns", "window_width_ns", "bg_margin_ns",
                   "bg_regions": [[start, end], ...] | null,
                   "rho", "sigma_rho", "include_rho_error"},
      "sweep": {"start_mA": 0, "stop_mA": 16.6, "step_mA": 0.1}
               # or {"currents_mA": [..]}
    }

Infinite extinction ratios are written as the string ``"inf"``.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict
from pathlib import Path

import jsonschema

from .analysis import AnalysisSettings
from .calibration import Anchor, current_grid, fit_couplers_from_extinction, fit_phase_calibration
from .errors import ConfigError, DomainError
from .source import AttemptCycle, EmissionShape, ExperimentConfig, PipelineBudget, config_sha256
from .xfer import CircuitModel, CouplerSpec

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_PROB = {"type": "number", "minimum": 0, "maximum": 1}
_ER = {"anyOf": [_POS, {"const": "inf"}]}


def _obj(props, **kw):
    return {"type": "object", "properties": props, "additionalProperties": False, **kw}


SCHEMA = _obj(
    {
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "n_attempts": {"type": "integer", "minimum": 1},
        "device": _obj(
            {
                "extinction_db": {"type": "array", "items": _ER, "minItems": 2, "maxItems": 2},
                "couplers": _obj(
                    {"r1": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                     "r2": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
                    required=["r1", "r2"],
                ),
                "anchors": {
                    "type": "array",
                    "items": _obj(
                        {
                            "current_mA": _NONNEG,
                            "kind": {"enum": ["port1_max", "port2_near_max", "split_50_50", "port_fraction"]},
                            "value": _PROB,
                        },
                        required=["current_mA", "kind"],
                    ),
                },
                "i_max_mA": _POS,
                "loss_L": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            }
        ),
        "source": _obj(
            {
                "current_mA": _NONNEG,
                "cycle": _obj({"rep_rate_hz": _POS, "wait_ns": _NONNEG, "cool_ns": _NONNEG,
                               "pump_ns": _NONNEG, "excite_ns": _NONNEG}),
                "emission": _obj({"kind": {"enum": ["exponential", "rise_decay"]}, "tau_ns": _POS,
                                  "rise_ns": _NONNEG, "t0_ns": _NONNEG}),
                "budget": _obj(
                    {
                        "p_emit_collect": _PROB,
                        "p_ref_collect": _PROB,
                        "qfc1": _PROB,
                        "qfc2": _PROB,
                        "eta1": _PROB,
                        "eta2": _PROB,
                        "dark_rate_hz": {"type": "array", "items": _NONNEG, "minItems": 3, "maxItems": 3},
                    }
                ),
            }
        ),
        "analysis": _obj(
            {
                "bin_width_ns": _POS,
                "window_width_ns": _POS,
                "bg_margin_ns": _NONNEG,
                "bg_regions": {
                    "anyOf": [
                        {"type": "null"},
                        {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}},
                    ]
                },
                "rho": _POS,
                "sigma_rho": _NONNEG,
                "include_rho_error": {"type": "boolean"},
            }
        ),
        "sweep": _obj(
            {
                "start_mA": _NONNEG,
                "stop_mA": _NONNEG,
                "step_mA": _POS,
                "currents_mA": {"type": "array", "items": _NONNEG},
            }
        ),
    }
)


def default_config() -> dict:
    """The full default configuration (what an empty config file expands to)."""
    return {
        "seed": 42,
        "n_attempts": 1_000_000,
        "device": {
            "extinction_db": [10.2, 7.6],
            "anchors": [
                {"current_mA": 0.0, "kind": "port1_max"},
                {"current_mA": 11.05, "kind": "split_50_50"},
                {"current_mA": 16.6, "kind": "port2_near_max"},
            ],
            "i_max_mA": 16.6,
            "loss_L": 0.31,
        },
        "source": {
            "current_mA": 0.0,
            "cycle": asdict(AttemptCycle()),
            "emission": asdict(EmissionShape()),
            "budget": {**asdict(PipelineBudget()), "dark_rate_hz": list(PipelineBudget().dark_rate_hz)},
        },
        "analysis": {**asdict(AnalysisSettings()), "bg_regions": None},
        "sweep": {"start_mA": 0.0, "stop_mA": 16.6, "step_mA": 0.1},
    }


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _er(v):
    return math.inf if v == "inf" else float(v)


class RunConfig:
    """Validated, defaults-expanded configuration with a stable content hash."""

    def __init__(self, data: dict | None = None):
        data = data or {}
        try:
            jsonschema.validate(data, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config invalid at {where}: {exc.message}") from None
        merged = _merge(default_config(), data)
        dev = data.get("device", {})
        # explicit couplers replace the extinction-ratio route
        if "couplers" in dev and "extinction_db" not in dev:
            merged["device"].pop("extinction_db", None)
        sw = data.get("sweep", {})
        if "currents_mA" in sw:
            merged["sweep"] = {"currents_mA": sw["currents_mA"]}
        self.data = merged
        self._model = None
        self._validate()

    def _validate(self):
        self.analysis_settings()
        self.sweep_currents()
        exp = self.data["source"]
        try:
            AttemptCycle(**exp["cycle"])
            EmissionShape(**exp["emission"])
            PipelineBudget(**exp["budget"])
            for a in self.data["device"]["anchors"]:
                Anchor(**a)
        except (TypeError, DomainError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        """Load a config file, or the ``config`` section of a run manifest."""
        text = Path(path).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: not valid JSON: {exc.msg}") from None
        if isinstance(data, dict) and "manifest_version" in data:
            data = data["config"]
        return cls(data)

    def with_overrides(self, **overrides) -> "RunConfig":
        """Copy with ``seed``, ``n_attempts``, ``current_mA`` or ``currents_mA`` replaced."""
        d = copy.deepcopy(self.data)
        if overrides.get("seed") is not None:
            d["seed"] = int(overrides["seed"])
        if overrides.get("n_attempts") is not None:
            d["n_attempts"] = int(overrides["n_attempts"])
        if overrides.get("current_mA") is not None:
            d["source"]["current_mA"] = float(overrides["current_mA"])
        if overrides.get("currents_mA") is not None:
            d["sweep"] = {"currents_mA": [float(x) for x in overrides["currents_mA"]]}
        return RunConfig(d)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def sha256(self) -> str:
        return config_sha256(self.data)

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def n_attempts(self) -> int:
        return int(self.data["n_attempts"])

    def anchors(self) -> list[Anchor]:
        return [Anchor(a["current_mA"], a["kind"], a.get("value")) for a in self.data["device"]["anchors"]]

    def couplers(self) -> tuple[CouplerSpec, CouplerSpec]:
        dev = self.data["device"]
        if "extinction_db" in dev:
            return fit_couplers_from_extinction(*(_er(v) for v in dev["extinction_db"]))
        return CouplerSpec(dev["couplers"]["r1"]), CouplerSpec(dev["couplers"]["r2"])

    def model(self) -> CircuitModel:
        """Fit (once) and return the device model described by the ``device`` section."""
        if self._model is None:
            dev = self.data["device"]
            couplers = self.couplers()
            calib = fit_phase_calibration(self.anchors(), couplers, dev["i_max_mA"])
            self._model = CircuitModel(couplers[0], couplers[1], calib, dev["loss_L"])
        return self._model

    def experiment(self, model: CircuitModel | None = None, current_mA: float | None = None) -> ExperimentConfig:
        src = self.data["source"]
        try:
            return ExperimentConfig(
                AttemptCycle(**src["cycle"]),
                EmissionShape(**src["emission"]),
                PipelineBudget(**src["budget"]),
                model or self.model(),
                src["current_mA"] if current_mA is None else current_mA,
            )
        except DomainError as exc:
            raise ConfigError(str(exc)) from None

    def analysis_settings(self) -> AnalysisSettings:
        a = dict(self.data["analysis"])
        if a.get("bg_regions") is not None:
            a["bg_regions"] = tuple(tuple(r) for r in a["bg_regions"])
        try:
            return AnalysisSettings(**a)
        except DomainError as exc:
            raise ConfigError(str(exc)) from None

    def sweep_currents(self) -> list[float]:
        sw = self.data["sweep"]
        if "currents_mA" in sw:
            cur = [float(x) for x in sw["currents_mA"]]
        else:
            if sw["stop_mA"] < sw["start_mA"]:
                raise ConfigError("sweep stop_mA must be >= start_mA")
            cur = [float(x) for x in current_grid(sw["start_mA"], sw["stop_mA"], sw["step_mA"])]
        if not cur:
            raise ConfigError("sweep current list is empty")
        return cur
