"""Experiment configuration files.

TOML with four sections plus an optional ``[data]`` block::

    [experiment]
    rounds = 5
    budget = "150"
    c_full = "1"
    c_weak = "1/50"
    methods = ["entropy-full", "mixed-allocated"]
    seeds = [0, 1, 2]

Costs and budgets are always strings holding an exact rational.
"""

from __future__ import annotations

import dataclasses
import hashlib
import re
import sys
from fractions import Fraction
from pathlib import Path

import tomli_w

from .annotators import CostSchedule
from .harness import DataSettings, ExperimentConfig, SplitSettings, VlmSettings
from .labels import SynthConfig
from .model import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None):
        self.key, self.line = key, line
        where = "".join([f" [key {key}]" if key else "", f" [line {line}]" if line else ""])
        super().__init__(f"{message}{where}")


_RATIONAL = re.compile(r"^\s*[+-]?\d+\s*(/\s*\d+\s*)?$")

EXPERIMENT_KEYS = {
    "rounds": int, "budget": "rational", "c_full": "rational", "c_weak": "rational",
    "methods": list, "correction_enabled": bool, "reestimate_transition": bool,
    "transition_smoothing": float, "allow_upgrade": bool, "warm_start": bool,
    "carry_over": bool, "seeds": list, "hidden": int,
}
SECTIONS = {
    "data": ({f.name: f.type for f in dataclasses.fields(SynthConfig)}
             | {"source": str, "seed": int, "features": str, "label_space": str}),
    "split": {f.name: int for f in dataclasses.fields(SplitSettings)},
    "vlm": {"accuracy": float, "abstain_prob": float, "confusers": int, "transition": str},
    "train": {f.name: f.type for f in dataclasses.fields(TrainConfig) if f.name != "seed"},
}


def parse_rational(text, key=None, line=None):
    if isinstance(text, int) and not isinstance(text, bool):
        return Fraction(text)
    if not isinstance(text, str) or not _RATIONAL.match(text):
        raise ConfigError(f"expected a rational like \"1/50\", got {text!r}", key, line)
    try:
        return Fraction(text.replace(" ", ""))
    except ZeroDivisionError:
        raise ConfigError("zero denominator", key, line) from None


def _line_of(text, section, key):
    """1-based line of ``key`` inside ``[section]``; None when absent."""
    current = None
    for n, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            current = m.group(1).strip()
            continue
        if current == section and re.match(rf"^{re.escape(key)}\s*=", s):
            return n
    return None


def _section_line(text, section):
    for n, raw in enumerate(text.splitlines(), start=1):
        if raw.strip().startswith(f"[{section}]"):
            return n
    return None


def _coerce(value, kind, key, line):
    if kind == "rational":
        return parse_rational(value, key, line)
    if kind in (float, "float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key, line)
        return float(value)
    if kind in (int, "int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key, line)
        return value
    if kind in (bool, "bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", key, line)
        return value
    if kind is list:
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", key, line)
        return value
    if kind in ("int | None",):
        if value is None or (isinstance(value, int) and not isinstance(value, bool)):
            return value
        raise ConfigError(f"expected an integer, got {value!r}", key, line)
    if not isinstance(value, str):
        raise ConfigError(f"expected a string, got {value!r}", key, line)
    return value


def config_from_dict(raw, text=""):
    """Validate a parsed TOML mapping and build an :class:`ExperimentConfig`."""
    unknown = set(raw) - {"experiment", *SECTIONS}
    if unknown:
        sec = sorted(unknown)[0]
        raise ConfigError("unknown section", sec, _section_line(text, sec))

    values = {}
    for section, schema in (("experiment", EXPERIMENT_KEYS), *SECTIONS.items()):
        block = raw.get(section, {})
        if not isinstance(block, dict):
            raise ConfigError("expected a table", section, _section_line(text, section))
        out = {}
        for key, value in block.items():
            line = _line_of(text, section, key)
            if key not in schema:
                raise ConfigError("unknown key", f"{section}.{key}", line)
            out[key] = _coerce(value, schema[key], f"{section}.{key}", line)
        values[section] = out

    exp = dict(values["experiment"])
    try:
        schedule = CostSchedule(exp.pop("c_full", Fraction(1)), exp.pop("c_weak", Fraction(1, 50)))
    except ValueError as exc:
        raise ConfigError(str(exc), "experiment.c_weak",
                          _line_of(text, "experiment", "c_weak")) from None
    data = dict(values["data"])
    synth_keys = {f.name for f in dataclasses.fields(SynthConfig)}
    synth = SynthConfig(**{k: data.pop(k) for k in list(data) if k in synth_keys})
    if data.get("source", "synthetic") not in ("synthetic", "features"):
        raise ConfigError("source must be 'synthetic' or 'features'", "data.source",
                          _line_of(text, "data", "source"))
    if data.get("source") == "features" and not (data.get("features") and data.get("label_space")):
        raise ConfigError("features source needs 'features' and 'label_space' paths",
                          "data.source", _line_of(text, "data", "source"))
    try:
        return ExperimentConfig(
            schedule=schedule,
            data=DataSettings(synth=synth, **data),
            split=SplitSettings(**values["split"]),
            vlm=VlmSettings(**values["vlm"]),
            train=TrainConfig(**values["train"]),
            **exp,
        )
    except (ValueError, TypeError) as exc:
        key = _guess_key(str(exc))
        line = _line_of(text, key.split(".")[0], key.split(".")[1]) if key else None
        raise ConfigError(str(exc), key, line) from None


def _guess_key(message):
    for section, schema in (("experiment", EXPERIMENT_KEYS), *SECTIONS.items()):
        for key in schema:
            if message.startswith(key):
                return f"{section}.{key}"
    return None


def parse_config_text(text):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"invalid TOML: {exc}", None, int(m.group(1)) if m else None) from None
    return config_from_dict(raw, text)


def parse_config(path):
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def _rational_str(q):
    return f"{q.numerator}" if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def config_to_dict(cfg):
    exp = {
        "rounds": cfg.rounds,
        "budget": _rational_str(cfg.budget),
        "c_full": _rational_str(cfg.schedule.c_full),
        "c_weak": _rational_str(cfg.schedule.c_weak),
        "methods": list(cfg.methods),
        "correction_enabled": cfg.correction_enabled,
        "reestimate_transition": cfg.reestimate_transition,
        "transition_smoothing": cfg.transition_smoothing,
        "allow_upgrade": cfg.allow_upgrade,
        "warm_start": cfg.warm_start,
        "carry_over": cfg.carry_over,
        "seeds": list(cfg.seeds),
        "hidden": cfg.hidden,
    }
    data = {"source": cfg.data.source, "seed": cfg.data.seed, **dataclasses.asdict(cfg.data.synth)}
    for key in ("features", "label_space"):
        if getattr(cfg.data, key):
            data[key] = getattr(cfg.data, key)
    vlm = {k: v for k, v in dataclasses.asdict(cfg.vlm).items() if v is not None}
    train = {k: v for k, v in dataclasses.asdict(cfg.train).items()
             if k != "seed" and v is not None}
    return {"experiment": exp, "data": data, "split": dataclasses.asdict(cfg.split),
            "vlm": vlm, "train": train}


def emit_config(cfg):
    """Canonical TOML text; ``parse_config_text(emit_config(c))`` equals ``c``."""
    return tomli_w.dumps(config_to_dict(cfg))


def config_hash(cfg):
    return hashlib.sha256(emit_config(cfg).encode("utf-8")).hexdigest()


def _parse_override_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        pass
    parts = [p.strip() for p in text.split(",")]
    if len(parts) > 1:
        try:
            return [int(p) for p in parts]
        except ValueError:
            return parts
    return text


def apply_overrides(cfg, overrides):
    """Apply ``key=value`` strings; a bare key is looked up in every section."""
    raw = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = (s.strip() for s in item.split("=", 1))
        if "." in key:
            section, name = key.split(".", 1)
        else:
            hits = [s for s, schema in (("experiment", EXPERIMENT_KEYS), *SECTIONS.items())
                    if key in schema]
            if not hits:
                raise ConfigError("unknown key in override", key)
            section, name = hits[0], key
        parsed = _parse_override_value(value)
        if section == "experiment" and name in ("seeds", "methods") and not isinstance(parsed, list):
            parsed = [parsed]
        raw.setdefault(section, {})[name] = parsed
    return config_from_dict(raw)
