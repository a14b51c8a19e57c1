"""JSON scenario files: parameters, paths and adaptation epochs.

Every key carries its unit (``_bits``, ``_s``, ``_hz``, ``_dB``, ``_fps``)
and unknown keys are rejected.  A minimal file::

    {
      "video": {"layer_payload_bits": 100000, "frame_rate_fps": 2.5, "max_layers": 24},
      "slot_s": 0.01,
      "bandwidth_hz": 2200000,
      "playout_delay_s": 0.45,
      "epsilon": 1e-5,
      "paths": [{"id": "p3", "hops": 3, "snr_dB": 10}]
    }

Optional ``epochs`` list entries ``{"start_s", "snr_dB": {id: dB}, "available": [ids]}``
(``available`` defaults to every path) and a ``simulation`` block.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from .errors import ConfigError
from .model import ChannelParams, PathSpec, SlotGrid, VideoParams
from .optimizer import AdaptationEpoch
from .simulator import BURST, CUT_THROUGH, FLUID, STORE_AND_FORWARD

BUILTIN = ("fig8", "fig9")

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["video", "slot_s", "bandwidth_hz", "playout_delay_s", "paths"],
    "properties": {
        "description": {"type": "string"},
        "video": {
            "type": "object",
            "additionalProperties": False,
            "required": ["layer_payload_bits"],
            "properties": {
                "layer_payload_bits": _POS,
                "layer_header_bits": _NONNEG,
                "frame_rate_fps": _POS,
                "max_layers": {"type": "integer", "minimum": 1},
                "num_layers": _NONNEG,
            },
        },
        "slot_s": _POS,
        "bandwidth_hz": _POS,
        "playout_delay_s": _POS,
        "epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "paths": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "hops", "snr_dB"],
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "hops": {"type": "integer", "minimum": 1},
                    "snr_dB": {"type": "number"},
                },
            },
        },
        "epochs": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["start_s"],
                "properties": {
                    "start_s": _NONNEG,
                    "snr_dB": {"type": "object", "additionalProperties": {"type": "number"}},
                    "available": {"type": "array", "minItems": 1,
                                  "items": {"type": "string"}},
                },
            },
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "slots": {"type": "integer", "minimum": 1},
                "warmup_slots": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "forwarding": {"enum": [CUT_THROUGH, STORE_AND_FORWARD]},
                "arrival_mode": {"enum": [FLUID, BURST]},
            },
        },
    },
}


@dataclass(frozen=True)
class SimulationSettings:
    slots: int = 10_000_000
    warmup_slots: int = 2_000
    seed: int = 0
    forwarding: str = CUT_THROUGH
    arrival_mode: str = FLUID


@dataclass(frozen=True)
class Scenario:
    video: VideoParams
    grid: SlotGrid
    playout_delay_s: float
    epsilon: Optional[float]
    paths: tuple
    epochs: tuple
    simulation: SimulationSettings
    raw: dict

    @property
    def bandwidth_hz(self) -> float:
        return self.paths[0].channel.bandwidth_hz

    def path(self, path_id: str) -> PathSpec:
        for p in self.paths:
            if p.path_id == path_id:
                return p
        raise KeyError(path_id)


def canonical_json(raw: dict) -> str:
    """Stable single-line rendering used for the output header echo."""
    return json.dumps(raw, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _build(raw: dict) -> Scenario:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"scenario invalid at {where}: {exc.message}") from None

    bw = float(raw["bandwidth_hz"])
    try:
        vid = raw["video"]
        video = VideoParams(float(vid["layer_payload_bits"]), float(vid.get("layer_header_bits", 0.0)),
                            float(vid.get("frame_rate_fps", 2.5)),
                            float(vid.get("num_layers", 1)), int(vid.get("max_layers", 24)))
        grid = SlotGrid(float(raw["slot_s"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    paths = tuple(PathSpec(int(p["hops"]), ChannelParams.from_db(float(p["snr_dB"]), bw), p["id"])
                  for p in raw["paths"])
    ids = [p.path_id for p in paths]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate path ids")

    epochs = []
    prev = -1.0
    for i, ep in enumerate(raw.get("epochs") or [{"start_s": 0.0}]):
        start = float(ep["start_s"])
        if start <= prev:
            raise ConfigError(f"epoch {i}: start times must be strictly increasing")
        prev = start
        updates = {k: float(v) for k, v in (ep.get("snr_dB") or {}).items()}
        avail = ep.get("available", ids)
        for name in list(updates) + list(avail):
            if name not in ids:
                raise ConfigError(f"epoch {i}: unknown path id {name!r}")
        epochs.append(AdaptationEpoch(start, updates,
                                      tuple(p for p in paths if p.path_id in set(avail))))

    sim = SimulationSettings(**(raw.get("simulation") or {}))
    eps = raw.get("epsilon")
    return Scenario(video, grid, float(raw["playout_delay_s"]),
                    None if eps is None else float(eps), paths, tuple(epochs), sim, raw)


def parse_scenario(text: str) -> Scenario:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario is not valid JSON: {exc}") from None
    return _build(raw)


def load_scenario(name_or_path: str) -> Scenario:
    """Load a scenario file, or a built-in one by name (``fig8``, ``fig9``)."""
    if name_or_path in BUILTIN:
        text = resources.files("layerbound.scenarios").joinpath(f"{name_or_path}.json").read_text("utf-8")
    else:
        try:
            text = Path(name_or_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read scenario {name_or_path!r}: {exc}") from None
    return parse_scenario(text)

