"""Flat key-value config files: ``key = value`` lines, ``#`` comments.

Values stay strings at this layer; consumers coerce them.  Lists are
comma-separated, booleans are true/false, quotes around strings are
stripped, so plain TOML scalars parse unchanged.
"""

from __future__ import annotations

__all__ = [
    "ConfigError",
    "load_flat_config",
    "dump_flat_config",
    "apply_overrides",
    "parse_bool",
    "parse_list",
]


class ConfigError(ValueError):
    """Malformed config file or override."""


def _strip_quotes(s):
    s = s.strip()
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "'\"":
        return s[1:-1]
    return s


def load_flat_config(path) -> dict:
    cfg = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            cfg[key] = _strip_quotes(value)
    return cfg


def dump_flat_config(mapping, path):
    """Write a mapping as sorted ``key = value`` lines (deterministic bytes)."""
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(mapping):
            fh.write(f"{key} = {mapping[key]}\n")


def apply_overrides(cfg, overrides):
    """Apply ``key=value`` strings on top of a config mapping (flag > file)."""
    out = dict(cfg)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = _strip_quotes(value)
    return out


def parse_bool(value):
    s = str(value).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot parse boolean from {value!r}")


def parse_list(value, cast=float):
    """Comma-separated list; single values yield one-element lists."""
    if isinstance(value, (list, tuple)):
        return [cast(v) for v in value]
    items = [v.strip() for v in str(value).split(",") if v.strip()]
    if not items:
        raise ConfigError(f"empty list value {value!r}")
    return [cast(v) for v in items]
