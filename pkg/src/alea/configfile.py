"""TOML or JSON configuration files, chosen by extension."""
from __future__ import annotations

import json
from pathlib import Path

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python < 3.11
    import tomli as _toml


def read_config(path: str | Path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".toml":
        return _toml.loads(text)
    return json.loads(text)
