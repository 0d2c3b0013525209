"""Flat ``key = value`` config text used by every config file in the package.

One assignment per line, ``#`` starts a comment, keys may be dotted
(``mask.kind``). Values stay strings here; typed readers live with the
objects they configure.
"""

__all__ = ["ConfigError", "parse_kv", "dump_kv", "read_kv", "write_kv", "KVReader"]


class ConfigError(ValueError):
    """Malformed or semantically invalid configuration."""


def parse_kv(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def dump_kv(items):
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def read_kv(path):
    with open(path, encoding="utf-8") as fh:
        return parse_kv(fh.read())


def write_kv(path, items):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_kv(items))


def fmt(value):
    """Text form of a value that parses back to the identical object."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(fmt(v) for v in value)
    return str(value)


class KVReader:
    """Typed, consuming access to a parsed key-value mapping.

    Every ``get_*`` pops its key; :meth:`finish` raises if anything is left,
    so misspelled keys are reported instead of silently ignored.
    """

    def __init__(self, items, prefix="", where="config"):
        self.items = dict(items)
        self.prefix = prefix
        self.where = where

    def has(self, key):
        return self.prefix + key in self.items

    def _pop(self, key, default):
        full = self.prefix + key
        if full in self.items:
            return self.items.pop(full)
        if default is _MISSING:
            raise ConfigError(f"{self.where}: missing required key {full!r}")
        return default

    def get_str(self, key, default=None):
        return self._pop(key, _MISSING if default is _REQUIRED else default)

    def get_float(self, key, default=None):
        v = self._pop(key, _MISSING if default is _REQUIRED else default)
        if v is None or isinstance(v, float):
            return v
        try:
            return float(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{self.where}: {self.prefix + key} must be a number, got {v!r}") from None

    def get_int(self, key, default=None):
        v = self._pop(key, _MISSING if default is _REQUIRED else default)
        if v is None or isinstance(v, int):
            return v
        try:
            return int(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{self.where}: {self.prefix + key} must be an integer, got {v!r}") from None

    def get_bool(self, key, default=None):
        v = self._pop(key, _MISSING if default is _REQUIRED else default)
        if v is None or isinstance(v, bool):
            return v
        s = str(v).lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{self.where}: {self.prefix + key} must be a boolean, got {v!r}")

    def get_int_list(self, key, default=None):
        v = self._pop(key, _MISSING if default is _REQUIRED else default)
        if v is None or isinstance(v, (list, tuple)):
            return None if v is None else list(v)
        try:
            return [int(s) for s in str(v).split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"{self.where}: {self.prefix + key} must be comma-separated integers") from None

    def sub(self, prefix):
        """Split off every key under ``prefix`` into a new reader."""
        full = self.prefix + prefix
        taken = {k: v for k, v in self.items.items() if k.startswith(full)}
        for k in taken:
            del self.items[k]
        return KVReader(taken, full, self.where)

    def remaining(self):
        return dict(self.items)

    def finish(self):
        if self.items:
            keys = ", ".join(sorted(self.items))
            raise ConfigError(f"{self.where}: unknown key(s): {keys}")


class _Sentinel:
    pass


_MISSING = _Sentinel()
_REQUIRED = _Sentinel()
REQUIRED = _REQUIRED
