"""Flat key-value run configuration.

Format: one `key = value` per line, `#` comment lines, and
`include <path>` directives (resolved relative to the including file,
applied first so later keys override). Values are Python literals where
they parse as such (numbers, tuples, lists, quoted strings) and bare
strings otherwise.
"""

from __future__ import annotations

import ast
from pathlib import Path


def _parse_value(raw):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def parse_config_text(text, base_dir=None):
    cfg = {}
    for lineno, ln in enumerate(text.splitlines(), start=1):
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        if ln.startswith("include "):
            inc = ln[len("include "):].strip()
            path = Path(inc)
            if not path.is_absolute() and base_dir is not None:
                path = Path(base_dir) / path
            cfg.update(load_config(path))
            continue
        if "=" not in ln:
            raise ValueError(f"line {lineno}: expected 'key = value', got {ln!r}")
        key, raw = ln.split("=", 1)
        cfg[key.strip()] = _parse_value(raw)
    return cfg


def load_config(path):
    path = Path(path)
    return parse_config_text(path.read_text(), base_dir=path.parent)


def format_config(cfg):
    lines = ["# resolved configuration"]
    for key in sorted(cfg):
        lines.append(f"{key} = {cfg[key]!r}")
    return "\n".join(lines) + "\n"


def write_config(cfg, path):
    Path(path).write_text(format_config(cfg))
