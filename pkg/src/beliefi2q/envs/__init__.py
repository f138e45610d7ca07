"""Registry of the four cooperative grid worlds."""

from __future__ import annotations

from dataclasses import fields
from typing import Any, Callable

from ..core import ConfigError, DecPOMDP
from .escape import EscapeConfig, EscapeEnv
from .gathering import GatheringConfig, GatheringEnv
from .honeycomb import HoneycombConfig, HoneycombEnv
from .oracle import OracleConfig, OracleEnv

_REGISTRY: dict[str, tuple[type, Callable[..., DecPOMDP]]] = {
    "oracle": (OracleConfig, OracleEnv),
    "gathering": (GatheringConfig, GatheringEnv),
    "escape": (EscapeConfig, EscapeEnv),
    "honeycomb": (HoneycombConfig, HoneycombEnv),
}

ENV_NAMES = tuple(_REGISTRY)


def make_oracle(config: OracleConfig | None = None) -> OracleEnv:
    return OracleEnv(config)


def make_gathering(config: GatheringConfig | None = None) -> GatheringEnv:
    return GatheringEnv(config)


def make_escape(config: EscapeConfig | None = None) -> EscapeEnv:
    return EscapeEnv(config)


def make_honeycomb(config: HoneycombConfig | None = None) -> HoneycombEnv:
    return HoneycombEnv(config)


def config_class(name: str) -> type:
    try:
        return _REGISTRY[name][0]
    except KeyError:
        raise ConfigError(f"unknown environment {name!r}; choose from {ENV_NAMES}") from None


def make_env(name: str, params: dict[str, Any] | None = None) -> DecPOMDP:
    cfg_cls = config_class(name)
    params = dict(params or {})
    allowed = {f.name for f in fields(cfg_cls)}
    unknown = set(params) - allowed
    if unknown:
        raise ConfigError(f"unknown {name} option(s): {sorted(unknown)}")
    return _REGISTRY[name][1](cfg_cls(**params))


__all__ = [
    "ENV_NAMES",
    "EscapeConfig",
    "EscapeEnv",
    "GatheringConfig",
    "GatheringEnv",
    "HoneycombConfig",
    "HoneycombEnv",
    "OracleConfig",
    "OracleEnv",
    "config_class",
    "make_env",
    "make_escape",
    "make_gathering",
    "make_honeycomb",
    "make_oracle",
]
