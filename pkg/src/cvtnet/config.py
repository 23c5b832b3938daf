"""Run configuration: an INI-style ``key = value`` file with bracketed
sections, overridable key by key from the command line."""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from cvtnet.errors import ConfigError, PathError

DEFAULTS = {
    "run": {"seed": "0", "out": "."},
    "paths": {
        "samples": "samples.txt",
        "train_samples": "train.txt",
        "eval_samples": "test.txt",
        "names": "names.txt",
        "records": "records.txt",
        "graph": "graph.edges",
        "hierarchy": "hierarchy.txt",
        "tree": "tree.cvt",
        "labels": "labels.txt",
        "model": "model.npz",
    },
    "graph": {"n_top": "5"},
    "community": {"seed": ""},
    "tree": {"max_depth": ""},
    "net": {"arch": "mlp", "width": "64", "channels": "8", "input_shape": "",
            "fine_loss": "literal", "init": "he", "standardize": "true"},
    "phase1": {"epochs": "20", "lr": "0.05", "lr_steps": "", "batch_size": "32", "weights": ""},
    "phase2": {"epochs": "20", "lr": "0.05", "lr_steps": "", "batch_size": "32", "weights": ""},
    "synth": {"branching": "2,4", "samples_per_leaf": "50", "separation": "10", "noise": "1",
              "ratio": "0.5", "dim": "", "test_fraction": "0.2"},
    "gradcheck": {"seed": ""},
}


@dataclass
class RunConfig:
    parser: configparser.ConfigParser
    base_dir: Path

    @classmethod
    def load(cls, path=None, overrides=()) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_dict(DEFAULTS)
        base = Path.cwd()
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise PathError(f"no such config file: {p}")
            try:
                cp.read(p, encoding="utf-8")
            except configparser.Error as exc:
                raise ConfigError(f"bad config file {p}: {exc}") from None
        for item in overrides:
            key, sep, value = item.partition("=")
            section, dot, option = key.strip().partition(".")
            if not sep or not dot or not option:
                raise ConfigError(f"override {item!r} must look like section.key=value")
            if not cp.has_section(section):
                cp.add_section(section)
            cp.set(section, option, value.strip())
        return cls(cp, base)

    def get(self, section: str, key: str, default: str = "") -> str:
        return self.parser.get(section, key, fallback=default).strip()

    def get_int(self, section: str, key: str, default: int | None = None) -> int | None:
        raw = self.get(section, key)
        if raw == "":
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be an integer, got {raw!r}") from None

    def get_float(self, section: str, key: str, default: float | None = None) -> float | None:
        raw = self.get(section, key)
        if raw == "":
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be a number, got {raw!r}") from None

    def get_bool(self, section: str, key: str) -> bool:
        raw = self.get(section, key).lower()
        if raw in ("true", "yes", "1", "on"):
            return True
        if raw in ("false", "no", "0", "off", ""):
            return False
        raise ConfigError(f"[{section}] {key} must be a boolean, got {raw!r}")

    def get_ints(self, section: str, key: str) -> tuple[int, ...]:
        raw = self.get(section, key)
        try:
            return tuple(int(v) for v in raw.split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be comma-separated integers") from None

    def get_floats(self, section: str, key: str) -> tuple[float, ...]:
        raw = self.get(section, key)
        try:
            return tuple(float(v) for v in raw.split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be comma-separated numbers") from None

    def get_steps(self, section: str, key: str) -> tuple[tuple[int, float], ...]:
        """Parse ``epoch:value,epoch:value`` learning-rate change points."""
        raw = self.get(section, key)
        steps = []
        for part in raw.split(","):
            if not part.strip():
                continue
            e, sep, v = part.partition(":")
            try:
                steps.append((int(e), float(v)))
            except ValueError:
                raise ConfigError(f"[{section}] {key} entries must look like epoch:value") from None
        return tuple(steps)

    @property
    def seed(self) -> int:
        return self.get_int("run", "seed", 0)

    @property
    def out_dir(self) -> Path:
        return self.base_dir / self.get("run", "out", ".")

    def path(self, key: str) -> Path:
        """Resolve ``[paths] key``; bare names live in the output directory."""
        raw = self.get("paths", key)
        if not raw:
            raise ConfigError(f"[paths] {key} is not set")
        p = Path(raw)
        if p.is_absolute() or p.parent != Path("."):
            return p if p.is_absolute() else self.base_dir / p
        return self.out_dir / p

    def existing(self, key: str) -> Path:
        p = self.path(key)
        if not p.is_file():
            raise PathError(f"[paths] {key}: no such file {p}")
        return p

    def dump(self) -> str:
        lines = []
        for section in self.parser.sections():
            items = ", ".join(f"{k}={v}" for k, v in self.parser.items(section) if v != "")
            lines.append(f"[{section}] {items}")
        return " ".join(lines)
