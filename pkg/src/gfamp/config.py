"""Config-file loading for the simulator.

Files use INI syntax with up to five sections: [system], [amp],
[detection], [train], and [experiment]. Every key maps one-to-one onto a
field of the matching config object; unknown keys and malformed values
are reported with their section-qualified name so a typo in a sweep file
points at the exact line that needs fixing.
"""

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .detection_pipeline import DetectionConfig
from .sparse_recovery import AmpConfig
from .system_model import SystemConfig

_BOOL = {"true": True, "yes": True, "1": True,
         "false": False, "no": False, "0": False}

# [train] keys are kept as a plain dict so loading a config never drags
# in the learned-recovery stack (and its torch import) for plain solves
TRAIN_KEYS = {
    "n_train": int,
    "batch_size": int,
    "lr_initial": float,
    "lr_decay_factor": float,
    "lr_floor": float,
    "max_steps_per_stage": int,
    "seed": int,
    "n_layers": int,
    "variant": str,
    "alpha": float,
}

EXPERIMENT_KEYS = {
    "sweep_axis": str,
    "sweep_values": "number_list",
    "n_trials": int,
    "solvers": "str_list",
    "seed": int,
    "output_dir": str,
}


@dataclass
class ConfigBundle:
    system: SystemConfig = field(default_factory=SystemConfig)
    amp: AmpConfig = field(default_factory=AmpConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    train: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)


class ConfigError(ValueError):
    """Raised with a section-qualified field name and the offending text."""


def _parse_bool(where, text):
    try:
        return _BOOL[text.strip().lower()]
    except KeyError:
        raise ConfigError(f"{where}: expected a boolean, got {text!r}") from None


def _parse_number(where, text, kind):
    try:
        return kind(text.strip())
    except ValueError:
        raise ConfigError(
            f"{where}: expected {kind.__name__}, got {text!r}"
        ) from None


def _parse_number_list(where, text):
    out = []
    for part in text.replace(",", " ").split():
        try:
            v = float(part)
        except ValueError:
            raise ConfigError(f"{where}: expected numbers, got {part!r}") from None
        out.append(int(v) if v == int(v) else v)
    if not out:
        raise ConfigError(f"{where}: expected at least one value")
    return out


def _parse_str_list(where, text):
    out = [p for p in text.replace(",", " ").split() if p]
    if not out:
        raise ConfigError(f"{where}: expected at least one value")
    return out


def _convert(where, text, kind):
    if kind is bool:
        return _parse_bool(where, text)
    if kind in (int, float):
        return _parse_number(where, text, kind)
    if kind == "number_list":
        return _parse_number_list(where, text)
    if kind == "str_list":
        return _parse_str_list(where, text)
    return text.strip()


def _dataclass_updates(section_name, section, cls):
    kinds = {}
    for f in fields(cls):
        if f.name == "alpha":
            kinds[f.name] = "alpha"
        elif f.name == "delta":
            kinds[f.name] = "optional_float"
        elif f.type in ("int", int):
            kinds[f.name] = int
        elif f.type in ("float", float):
            kinds[f.name] = float
        elif f.type in ("bool", bool):
            kinds[f.name] = bool
        else:
            kinds[f.name] = str
    updates = {}
    for key, text in section.items():
        where = f"{section_name}.{key}"
        if key not in kinds:
            valid = ", ".join(sorted(kinds))
            raise ConfigError(f"{where}: unknown key (valid: {valid})")
        kind = kinds[key]
        if kind == "alpha":
            vals = _parse_number_list(where, text)
            updates[key] = float(vals[0]) if len(vals) == 1 else [float(v) for v in vals]
        elif kind == "optional_float":
            low = text.strip().lower()
            updates[key] = None if low in ("none", "auto", "") else _parse_number(where, text, float)
        else:
            updates[key] = _convert(where, text, kind)
    return updates


def _flat_updates(section_name, section, known):
    updates = {}
    for key, text in section.items():
        where = f"{section_name}.{key}"
        if key not in known:
            valid = ", ".join(sorted(known))
            raise ConfigError(f"{where}: unknown key (valid: {valid})")
        updates[key] = _convert(where, text, known[key])
    return updates


def load_config(path) -> ConfigBundle:
    """Parse an INI config file into validated config objects.

    Raises ConfigError for unknown sections or keys, malformed values,
    and any constraint violation the underlying config classes enforce.
    """
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with path.open() as f:
            parser.read_file(f)
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    except configparser.Error as e:
        raise ConfigError(f"malformed config file {path}: {e}") from e

    known = {"system", "amp", "detection", "train", "experiment"}
    extra = set(parser.sections()) - known
    if extra:
        raise ConfigError(
            f"unknown section(s) {sorted(extra)}; valid: {sorted(known)}"
        )

    bundle = ConfigBundle()
    try:
        if parser.has_section("system"):
            bundle.system = SystemConfig(
                **_dataclass_updates("system", parser["system"], SystemConfig))
        if parser.has_section("amp"):
            bundle.amp = AmpConfig(
                **_dataclass_updates("amp", parser["amp"], AmpConfig))
        if parser.has_section("detection"):
            bundle.detection = DetectionConfig(
                **_dataclass_updates("detection", parser["detection"], DetectionConfig))
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if parser.has_section("train"):
        bundle.train = _flat_updates("train", parser["train"], TRAIN_KEYS)
    if parser.has_section("experiment"):
        bundle.experiment = _flat_updates(
            "experiment", parser["experiment"], EXPERIMENT_KEYS)
    return bundle
