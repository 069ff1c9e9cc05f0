"""Flat ``key=value`` configuration files with ``#`` comments."""

from __future__ import annotations

import dataclasses
from pathlib import Path


class ConfigError(ValueError):
    """Malformed config text; the message carries the source and line number."""


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv(path) -> dict[str, str]:
    path = Path(path)
    return parse_kv(path.read_text(), source=str(path))


def format_kv(values: dict, header: str | None = None) -> str:
    lines = [f"# {header}"] if header else []
    for k, v in values.items():
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = int(v)
        lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"


def _coerce(value: str, target_type, key: str, current=None):
    if isinstance(target_type, str) and target_type.endswith(" | None"):
        if value in ("", "none", "None"):
            return None
        target_type = target_type[: -len(" | None")]
    if target_type == "tuple":
        # element type follows the default value; numeric when there is none
        elem = type(current[0]) if current else float
        return tuple(elem(v.strip()) for v in value.split(",") if v.strip())
    if target_type in (bool, "bool"):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: cannot read {value!r} as a boolean")
    if target_type in (int, "int"):
        return int(value)
    if target_type in (float, "float"):
        return float(value)
    if target_type in ("tuple[int, ...]",):
        return tuple(int(v) for v in value.split(",") if v.strip())
    if target_type in ("str | None", "Optional[str]"):
        return None if value in ("", "none", "None") else value
    return value


def apply_kv(obj, values: dict[str, str], prefix: str = ""):
    """Return a copy of dataclass ``obj`` with fields overridden from ``values``.

    Keys are matched as ``prefix + field_name``; unknown keys are ignored here
    so one file can configure several dataclasses.
    """
    types = {f.name: f.type for f in dataclasses.fields(obj)}
    changes = {}
    for name, ftype in types.items():
        key = prefix + name
        if key not in values:
            continue
        current = getattr(obj, name)
        if ftype in ("float", float) or isinstance(current, float) and not isinstance(current, bool):
            ftype = float
        try:
            changes[name] = _coerce(values[key], ftype, key, current)
        except ValueError as exc:
            raise ConfigError(f"{key}={values[key]!r}: {exc}") from None
    return dataclasses.replace(obj, **changes) if changes else obj


def as_kv(obj, prefix: str = "") -> dict:
    return {prefix + f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}
