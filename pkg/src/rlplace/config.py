"""``key = value`` run configuration files.

One setting per line, ``#`` starts a comment. Values stay strings here; each
consumer coerces the keys it owns. Command-line flags override file values.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        out[key.strip()] = val.strip().strip('"')
    return out


def load_config(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def dump_config(values: dict, path) -> None:
    lines = [f"{k} = {v}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


def _int(v: str) -> int:
    f = float(v)
    if not f.is_integer():
        raise ValueError(v)
    return int(f)


def _coerce(typ, v):
    if not isinstance(v, str):
        return v
    t = str(typ)
    if v.lower() in ("none", "null", ""):
        return None
    try:
        if t.startswith("int"):
            return _int(v)
        if t.startswith("float"):
            return float(v)
        if t.startswith("bool"):
            if v.lower() not in _TRUE + _FALSE:
                raise ValueError(v)
            return v.lower() in _TRUE
        if t.startswith("tuple"):
            conv = float if "float" in t else _int
            return tuple(conv(p) for p in v.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"bad value {v!r} (expected {t})") from exc
    return v


def from_dict(cls, d: dict, strict: bool = False):
    """Build dataclass ``cls`` from the keys of ``d`` it knows; string
    values are coerced to the field type. Unknown keys are ignored unless
    ``strict``."""
    from dataclasses import fields

    names = {f.name: f for f in fields(cls)}
    unknown = sorted(set(d) - set(names))
    if strict and unknown:
        raise ConfigError(f"unknown settings for {cls.__name__}: {unknown}")
    kw = {k: _coerce(names[k].type, v) for k, v in d.items() if k in names}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc
