"""Python access to the fedlora simulator core."""

import json

from ._fedlora import (
    Error,
    aggregate,
    comm_cost_per_round,
    count_params,
    format_megabytes,
    payload_bytes,
    synth_dataset,
    verify_tables,
)
from . import _fedlora

__all__ = [
    "Error",
    "aggregate",
    "canonical_config",
    "comm_cost_per_round",
    "config_hash",
    "count_params",
    "format_megabytes",
    "payload_bytes",
    "run",
    "synth_dataset",
    "verify_tables",
]


def _text(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_text(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _values(config):
    return {key: _text(value) for key, value in config.items()}


def canonical_config(config):
    return _fedlora.canonical_config(_values(config))


def config_hash(config):
    return _fedlora.config_hash(_values(config))


def run(config):
    """Runs one experiment. Returns {"metrics": csv text, "summary": dict}."""
    metrics, summary = _fedlora.run(_values(config))
    return {"metrics": metrics, "summary": json.loads(summary)}
