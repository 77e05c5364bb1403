"""Flat ``key = value`` configuration files for the command line.

Keys are option names with dashes or underscores (``depth = zmap``,
``time-offset = 0.1``). Lines starting with ``#`` or ``;`` are comments.
Command-line flags override file values.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .errors import ConfigError, MissingInputError

_SECTION = "vice"


def read_config(path) -> dict:
    """Key -> string value, with keys normalised to underscores."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n" + path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e.message.splitlines()[0] if hasattr(e, 'message') else e}") from None
    out = {}
    for key, value in parser.items(_SECTION):
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def default_map(values: dict, commands) -> dict:
    """Click ``default_map`` giving every command the same flat values."""
    return {name: dict(values) for name in commands}
