"""CLI configuration: a ``key = value`` text file, overridable by flags and env."""
from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .ledger import DEFAULT_CAPACITY

LEDGER_DIR_ENV = "ICTOKEN_LEDGER_DIR"


@dataclass
class Config:
    nodes: int = 4
    quorum: int | None = None
    capacity: int = DEFAULT_CAPACITY
    seed: int = 0
    ledger: str | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "Config":
        known = {f.name: f for f in fields(cls)}
        values = {}
        for n, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in known:
                raise ValueError(f"{path}:{n}: expected one of {sorted(known)} = value")
            values[key] = value if key == "ledger" else int(value)
        return cls(**values)

    def ledger_dir(self) -> Path:
        """Flag/config value wins over the environment; default is ./ictoken-data."""
        return Path(self.ledger or os.environ.get(LEDGER_DIR_ENV) or "ictoken-data")
