"""Flat ``key = value`` run configuration files.

Blank lines and lines starting with ``#`` or ``;`` are ignored, as are
inline comments after `` #``.  Keys are case-sensitive; dashes and
underscores are interchangeable.
"""

import configparser
from pathlib import Path
from typing import Dict

_SECTION = "run"


def parse_config(text: str) -> Dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(" #", " ;"),
                                       delimiters=("=",), strict=True)
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n{text}")
    except configparser.Error as exc:
        raise ValueError(f"malformed config: {exc}") from None
    if parser.sections() != [_SECTION]:
        raise ValueError("config files are flat; section headers are not allowed")
    return {k.strip().replace("-", "_"): v.strip() for k, v in parser[_SECTION].items()}


def read_config(path) -> Dict[str, str]:
    return parse_config(Path(path).read_text())


def format_config(values: Dict[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items() if v is not None)
