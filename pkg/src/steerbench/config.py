"""Flat key-value experiment configs with dotted keys.

Format: one ``key = value`` pair per line, ``#`` comments, blank lines
ignored.  Values are strings until a typed accessor converts them; CLI flags
override file values by assigning into the mapping.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


class ExperimentConfig(dict):
    """A dotted-key string mapping with typed accessors."""

    @staticmethod
    def load(path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        cfg = ExperimentConfig()
        cfg.base_dir = path.parent
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            cfg[key.strip()] = value.strip()
        return cfg

    base_dir: Path = Path(".")

    def get_str(self, key: str, default: str | None = None) -> str:
        if key in self:
            return self[key]
        if default is None:
            raise ConfigError(f"missing required config key {key!r}")
        return default

    def get_int(self, key: str, default: int | None = None) -> int:
        try:
            return int(self[key]) if key in self else self._require(key, default)
        except ValueError:
            raise ConfigError(f"config key {key!r} is not an integer: {self[key]!r}")

    def get_float(self, key: str, default: float | None = None) -> float:
        try:
            return float(self[key]) if key in self else self._require(key, default)
        except ValueError:
            raise ConfigError(f"config key {key!r} is not a number: {self[key]!r}")

    def get_bool(self, key: str, default: bool | None = None) -> bool:
        if key not in self:
            return self._require(key, default)
        value = self[key].lower()
        if value in ("true", "yes", "1", "on"):
            return True
        if value in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"config key {key!r} is not a boolean: {self[key]!r}")

    def get_int_tuple(self, key: str, default: tuple[int, ...] | None = None) -> tuple[int, ...]:
        if key not in self:
            return self._require(key, default)
        try:
            return tuple(int(part) for part in self[key].replace("x", ",").split(",") if part.strip())
        except ValueError:
            raise ConfigError(f"config key {key!r} is not an int list: {self[key]!r}")

    def get_float_list(self, key: str, default: list[float] | None = None) -> list[float]:
        if key not in self:
            return self._require(key, default)
        try:
            return [float(part) for part in self[key].split(",") if part.strip()]
        except ValueError:
            raise ConfigError(f"config key {key!r} is not a float list: {self[key]!r}")

    def get_str_list(self, key: str, default: list[str] | None = None) -> list[str]:
        if key not in self:
            return self._require(key, default)
        return [part.strip() for part in self[key].split(",") if part.strip()]

    def get_path(self, key: str, default: str | None = None) -> Path:
        value = self.get_str(key, default)
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def _require(self, key, default):
        if default is None:
            raise ConfigError(f"missing required config key {key!r}")
        return default
