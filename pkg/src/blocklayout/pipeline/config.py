"""key=value configuration files with typed lookups.

Lines are `key = value`; blank lines and `#` comments are ignored.
CLI flags override file values, which override built-in defaults.
"""

from __future__ import annotations


class ConfigError(ValueError):
    """Raised for unparseable config files."""


def parse_config(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError("line %d: expected key=value, got %r"
                                  % (lineno, raw.rstrip()))
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


class Settings:
    """Layered lookup: CLI overrides > config file > defaults."""

    def __init__(self, defaults=None, file_values=None, overrides=None):
        self.layers = [overrides or {}, file_values or {}, defaults or {}]

    def _raw(self, key, fallback=None):
        for layer in self.layers:
            if key in layer and layer[key] is not None:
                return layer[key]
        return fallback

    def get_str(self, key, fallback=None):
        value = self._raw(key, fallback)
        return None if value is None else str(value)

    def get_int(self, key, fallback=None):
        value = self._raw(key, fallback)
        if value is None:
            return None
        try:
            return int(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError("%s must be an integer, got %r"
                              % (key, value)) from exc

    def get_float(self, key, fallback=None):
        value = self._raw(key, fallback)
        if value is None:
            return None
        try:
            return float(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError("%s must be a number, got %r"
                              % (key, value)) from exc
