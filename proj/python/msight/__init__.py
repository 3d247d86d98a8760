"""Python bindings for the msight roundabout perception toolkit."""

import json

from ._core import (
    MSightError,
    PerceptionMessage,
    VehicleRecord,
    WorldPoint,
    count_id_switches,
    decode,
    encode,
    encoded_size,
    fn_rate,
    fp_rate,
    hungarian,
    longest_track,
    mota,
    percentile,
)
from . import _core

__all__ = [
    "MSightError",
    "PerceptionMessage",
    "VehicleRecord",
    "WorldPoint",
    "count_id_switches",
    "decode",
    "encode",
    "encoded_size",
    "error_code",
    "evaluate",
    "fn_rate",
    "fp_rate",
    "hungarian",
    "longest_track",
    "mota",
    "percentile",
    "run",
    "tracks_ndjson",
    "truth_ndjson",
]

CAMERAS = ("NE", "NW", "SE", "SW")


def error_code(exc):
    """Error code name carried by an MSightError, e.g. "BadCrc"."""
    return exc.args[0]


def run(config=None, cameras=CAMERAS, seed=None):
    """Simulate, run the pipeline and return the evaluation report as a dict."""
    text = json.dumps(config or {})
    return json.loads(_core.run_scenario(text, list(cameras), seed))


def evaluate(truth_ndjson, tracks_ndjson):
    return json.loads(_core.evaluate_ndjson(truth_ndjson, tracks_ndjson))


def truth_ndjson(config=None):
    return _core.truth_ndjson(json.dumps(config or {}))


def tracks_ndjson(config=None, cameras=CAMERAS):
    return _core.tracks_ndjson(json.dumps(config or {}), list(cameras))
