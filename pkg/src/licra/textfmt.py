"""Block text format shared by MDP definition files and experiment configs.

A file is a sequence of ``[block]`` headers followed by ``key = value`` lines, where
every value is a JSON literal (number, string in double quotes, list, ``true``/
``false``/``null``). Comments start with ``#``. Example::

    [mdp]
    n_states = 2
    gamma = 0.9

    [cost]
    form = "fixed"
    kappa = 0.2

Keys are case-sensitive. Floats are written with ``repr`` precision so that
``loads(dumps(x)) == x`` holds exactly.
"""

from __future__ import annotations

import configparser
import json
from typing import Any


class FormatError(ValueError):
    """Malformed block text; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, block: str | None = None, key: str | None = None):
        self.line = line
        self.block = block
        self.key = key
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


def _locate(text: str, block: str, key: str | None) -> int | None:
    current = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if key is None and current == block:
                return number
            continue
        if current == block and key is not None and "=" in line:
            if line.split("=", 1)[0].strip() == key:
                return number
    return None


def locate(text: str, block: str, key: str | None = None) -> int | None:
    """Return the 1-based line of ``[block]`` or of ``key`` inside it."""
    return _locate(text, block, key)


def loads(text: str) -> dict[str, dict[str, Any]]:
    parser = configparser.ConfigParser(
        interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=None, delimiters=("=",)
    )
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise FormatError(str(exc).splitlines()[0], getattr(exc, "lineno", None)) from exc
    blocks: dict[str, dict[str, Any]] = {}
    for name in parser.sections():
        values = {}
        for key, raw in parser.items(name):
            try:
                values[key] = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise FormatError(
                    f"[{name}] {key}: value is not a JSON literal ({raw!r})",
                    _locate(text, name, key),
                    name,
                    key,
                ) from exc
        blocks[name] = values
    return blocks


def dumps(blocks: dict[str, dict[str, Any]], header: str | None = None) -> str:
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
        lines.append("")
    for name, values in blocks.items():
        lines.append(f"[{name}]")
        for key, value in values.items():
            lines.append(f"{key} = {json.dumps(value)}")
        lines.append("")
    return "\n".join(lines)


def read(path) -> dict[str, dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def write(path, blocks: dict[str, dict[str, Any]], header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(blocks, header))
