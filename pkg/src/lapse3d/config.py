"""Pipeline configuration: ``key = value`` lines, ``#`` comments and
``[section]`` headers.

Syntax is handled by :mod:`configparser`; this module adds a typed schema,
path resolution relative to the config file, and file/line locations on
every error.
"""

from __future__ import annotations

import configparser
import glob
import re
from pathlib import Path

from .errors import ConfigError

_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _bool(s):
    try:
        return _BOOL[s.lower()]
    except KeyError:
        raise ValueError(f"expected a boolean, got {s!r}") from None


def _ints(s):
    return tuple(int(v) for v in s.replace(",", " ").split())


def _floats(s):
    return tuple(float(v) for v in s.replace(",", " ").split())


def _label_weights(s):
    # "0:0.5, 3:2" -> {0: 0.5, 3: 2.0}
    out = {}
    for part in s.replace(",", " ").split():
        k, _, v = part.partition(":")
        out[int(k)] = float(v)
    return out


def _mode(*choices):
    def parse(s):
        if s not in choices:
            raise ValueError(f"expected one of {', '.join(choices)}, got {s!r}")
        return s

    return parse


# section -> key -> (parser, default); "path"/"glob" values resolve against the file
SCHEMA = {
    "input": {
        "stacks": ("glob", None),
        "labels": ("glob", None),
    },
    "output": {
        "dir": ("path", "."),
    },
    "frontend": {
        "mode": (_mode("classical", "network"), "classical"),
        "weights": ("path", None),
        "invert": (_bool, False),
    },
    "seeds": {
        "smooth_sigma": (float, 2.0),
        "h_min": (float, 0.1),
        "border_bg_threshold": (float, 0.3),
    },
    "crf": {
        "enabled": (_bool, True),
        "gamma1": (float, 0.01),
        "gamma2": (float, 0.01),
        "sigma_alpha": (float, 5.0),
        "sigma_beta": (float, 0.1),
        "sigma_gamma": (float, 3.0),
        "iterations": (int, 3),
        "epsilon": (float, 1e-6),
        "mode": (_mode("auto", "exact", "truncated"), "truncated"),
        "band": (int, 2),
        "grid_step": (float, 1.0),
        "label_weights": (_label_weights, {}),
    },
    "graph": {
        "max_d": (int, 10),
    },
    "tracking": {
        "threshold": (float, 0.3),
    },
    "evaluate": {
        "gt_labels": ("glob", None),
        "pred_labels": ("glob", None),
        "gt_junctions": ("glob", None),
        "pred_junctions": ("glob", None),
        "gt_segments": ("glob", None),
        "pred_segments": ("glob", None),
        "gt_tracks": ("path", None),
        "pred_tracks": ("path", None),
        "boundary_tol": (float, 5.0),
        "junction_tol": (float, 5.0),
        "planar": (_bool, False),
    },
    "aogm": {
        "ns": (float, 5.0),
        "fn": (float, 10.0),
        "fp": (float, 1.0),
        "ed": (float, 1.0),
        "ea": (float, 1.5),
        "ec": (float, 1.0),
    },
    "synth": {
        "dims": (_ints, (96, 96, 96)),
        "n_cells": (int, 25),
        "seed": (int, 0),
        "wall_width": (float, 3.0),
        "noise_sigma": (float, 0.0),
        "drift": (_floats, (0.0, 0.0, 0.0)),
        "growth": (float, 1.0),
        "n_frames": (int, 1),
        "spacing": (_floats, (1.0, 1.0, 1.0)),
    },
}

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^#=:\s][^=:]*?)\s*[=:]")


class Config:
    """Typed view of a parsed config file.

    ``cfg["crf"]["band"]`` returns the parsed value or the schema default.
    """

    def __init__(self, values: dict, path: Path | None = None, lines: dict | None = None):
        self._values = values
        self.path = path
        self._lines = lines or {}

    def __getitem__(self, section):
        return self._values[section]

    def line_of(self, section, key=None):
        return self._lines.get((section, key))

    def error(self, message, section, key=None) -> ConfigError:
        return ConfigError(message, self.path, self.line_of(section, key))

    def require(self, section, key):
        value = self._values[section][key]
        if value is None or value == []:
            where = self.line_of(section, key) or self.line_of(section)
            raise ConfigError(f"[{section}] {key} is required", self.path, where)
        return value


def _index_lines(text):
    """``(section, key) -> line`` and ``(section, None) -> header line``."""
    lines, section = {}, None
    for n, raw in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(raw)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), n)
            continue
        m = _KEY_RE.match(raw)
        if m and section is not None and not raw[:1].isspace():
            lines.setdefault((section, m.group(1).strip().lower()), n)
    return lines


def _resolve(kind, raw, base: Path):
    if kind == "path":
        p = Path(raw).expanduser()
        return p if p.is_absolute() else base / p
    # glob: comma/space separated patterns, each expanded and sorted
    out = []
    for pat in raw.replace(",", " ").split():
        p = Path(pat).expanduser()
        p = p if p.is_absolute() else base / p
        hits = sorted(glob.glob(str(p)))
        out.extend(Path(h) for h in hits) if glob.has_magic(str(p)) else out.append(p)
    return out


def parse_config(text: str, path: Path | None = None, base: Path | None = None) -> Config:
    path = Path(path) if path is not None else None
    base = Path(base) if base is not None else (path.parent if path is not None else Path("."))
    parser = configparser.ConfigParser(
        interpolation=None,
        comment_prefixes=("#",),
        inline_comment_prefixes=("#",),
        empty_lines_in_values=False,
        default_section="\x00none",
    )
    try:
        parser.read_string(text, source=str(path) if path else "<config>")
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any [section]", path, exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", path, exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", path, exc.lineno) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line (expected key = value)", path, line) from None
    lines = _index_lines(text)

    values = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (kind, default) in keys.items():
            values[section][key] = default
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", path, lines.get((section, None)))
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", path, lines.get((section, key)))
            kind, _ = SCHEMA[section][key]
            try:
                if kind in ("path", "glob"):
                    value = _resolve(kind, raw, base)
                else:
                    value = kind(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}", path, lines.get((section, key))) from None
            values[section][key] = value
    return Config(values, path, lines)


def load_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror or exc}", path) from None
    return parse_config(text, path)


def default_config(base=".") -> Config:
    return parse_config("", None, base)
