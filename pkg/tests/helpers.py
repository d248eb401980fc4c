"""Scenario builders shared by the test modules (the acceptance scenario set)."""

from dataclasses import replace
from functools import lru_cache
from pathlib import Path

from qsfracture.config import emit, parse_config, parse_config_dict

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
LAMBDA_GRID = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0)


def load(name: str, **overrides):
    cfg = parse_config(SCENARIOS / f"{name}.json")
    if overrides:
        cfg = parse_config_dict(emit(replace(cfg, **overrides)))
    return cfg


@lru_cache(maxsize=None)
def trace_for(name: str, **overrides):
    """Run a preset once per process; traces are immutable so sharing is safe."""
    cfg = load(name, **overrides)
    return cfg.scenario().run(cfg.delta)
