"""
Preset registry in the style of gym.envs.registration: presets are registered
by id against an entry point and built with `make`.
"""
import importlib
import logging

from ctal.errors import ConfigError

logger = logging.getLogger(__name__)


class PresetSpec:
    def __init__(self, id, entry_point, kwargs=None):
        self.id = id
        self.entry_point = entry_point
        self._kwargs = dict(kwargs or {})

    def make(self, **overrides):
        module_name, _, attr = self.entry_point.partition(":")
        cls = getattr(importlib.import_module(module_name), attr)
        kwargs = dict(self._kwargs)
        kwargs.update(overrides)
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise ConfigError(f"{self.id}: {e}") from e

    def __repr__(self):
        return f"PresetSpec({self.id})"


class PresetRegistry:
    def __init__(self):
        self.specs = {}

    def register(self, id, entry_point, **kwargs):
        if id in self.specs:
            raise ConfigError(f"preset {id} is already registered")
        self.specs[id] = PresetSpec(id, entry_point, kwargs)

    def spec(self, id):
        try:
            return self.specs[id]
        except KeyError:
            raise ConfigError(f"unknown model preset {id!r}; known: {', '.join(sorted(self.specs))}") from None

    def make(self, id, **overrides):
        logger.debug("Making preset %s with overrides %s", id, overrides)
        return self.spec(id).make(**overrides)

    def all(self):
        return list(self.specs.values())


registry = PresetRegistry()


def register(id, entry_point, **kwargs):
    return registry.register(id, entry_point, **kwargs)


def make(id, **overrides):
    return registry.make(id, **overrides)


def spec(id):
    return registry.spec(id)
