"""Run configuration files: a flat-sectioned key=value text format.

Example:

    seed = 7

    [synth]
    num_classes = 10
    feature_dim = 32

    [adapt]
    epochs = 15

    [ftsp]
    classifier = lda

The top-level ``seed`` is required and fans out to per-stage seeds by a fixed
hash derivation, so one knob reproduces a whole multi-stage run. Unknown
sections or keys are rejected by name. Full-line comments start with ``#``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import SynthShiftConfig
from .errors import InvalidArgument
from .ftsp import FtspConfig
from .mathcore import derive_seed
from .pipeline import AdaptConfig, SourceTrainConfig
from .tsal import TsalConfig

SECTIONS = ("synth", "source", "adapt", "ftsp", "tsal")

# Keys exposed per section; values are attribute names on the owning config.
_SECTION_KEYS = {
    "synth": (
        "num_classes",
        "feature_dim",
        "samples_per_class_source",
        "samples_per_class_target",
        "cluster_stddev",
        "rotation_angle",
        "translation_scale",
        "noise_scale_target",
    ),
    "source": (
        "epochs",
        "batch_size",
        "lr0",
        "label_smoothing",
        "train_fraction",
        "hidden_dim",
        "activation",
        "nesterov",
    ),
    "adapt": ("epochs", "batch_size", "lr0", "mixup_enabled", "nesterov"),
    "ftsp": (
        "k",
        "classifier",
        "mlr_l2_lambda",
        "lda_shrinkage",
        "deletion_frac",
        "rbf_gamma",
        "spread_alpha",
        "spread_max_iter",
        "spread_tol",
        "refinement_enabled",
    ),
    "tsal": (
        "alpha",
        "smoothing",
        "tau_dis_start",
        "tau_dis_end",
        "tau_div_start",
        "tau_div_end",
        "detach_target",
    ),
}

_BOOL_WORDS = {"true": True, "yes": True, "on": True, "1": True, "false": False, "no": False, "off": False, "0": False}


@dataclass
class RunSettings:
    """All stage configs assembled from one file, with derived stage seeds."""

    seed: int
    synth: SynthShiftConfig
    source: SourceTrainConfig
    adapt: AdaptConfig


def parse_sections(text: str) -> tuple[dict[str, str], dict[str, dict[str, str]]]:
    """Split raw text into top-level keys and per-section key/value maps."""
    top: dict[str, str] = {}
    sections: dict[str, dict[str, str]] = {}
    current: dict[str, str] | None = None
    current_name = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in SECTIONS:
                raise InvalidArgument(f"unknown section [{name}] at line {lineno}")
            current = sections.setdefault(name, {})
            current_name = name
            continue
        if "=" not in line:
            raise InvalidArgument(f"expected key = value at line {lineno}: {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key:
            raise InvalidArgument(f"empty key at line {lineno}")
        if current is None:
            if key != "seed":
                raise InvalidArgument(f"unknown top-level key {key!r} at line {lineno} (only 'seed' allowed)")
            top[key] = value
        else:
            if key not in _SECTION_KEYS[current_name]:
                raise InvalidArgument(f"unknown key {key!r} in section [{current_name}]")
            current[key] = value
    return top, sections


def _convert(section: str, key: str, value: str, target_type):
    try:
        if target_type is bool:
            word = value.lower()
            if word not in _BOOL_WORDS:
                raise ValueError(value)
            return _BOOL_WORDS[word]
        if target_type is int:
            return int(value)
        if target_type is float:
            return float(value)
        return value
    except ValueError:
        raise InvalidArgument(f"bad value {value!r} for key {key!r} in section [{section}]") from None


def _apply(cfg, section: str, values: dict[str, str]):
    types = {f.name: f.type for f in fields(cfg)}
    for key, raw in values.items():
        current = getattr(cfg, key)
        target_type = type(current) if current is not None else str
        setattr(cfg, key, _convert(section, key, raw, target_type))
    return cfg


def build_settings(text: str, seed_override: int | None = None) -> RunSettings:
    """Parse config text into validated stage configs.

    Stage seeds derive from the top-level seed with fixed tags, so runs are
    reproducible from the single seed. The adaptation loss schedule length is
    mirrored from the adapt epochs.
    """
    top, sections = parse_sections(text)
    if seed_override is not None:
        seed = int(seed_override)
    elif "seed" in top:
        try:
            seed = int(top["seed"])
        except ValueError:
            raise InvalidArgument(f"bad value {top['seed']!r} for top-level key 'seed'") from None
    else:
        raise InvalidArgument("config requires an explicit top-level 'seed'")

    synth = _apply(SynthShiftConfig(), "synth", sections.get("synth", {}))
    source = _apply(SourceTrainConfig(), "source", sections.get("source", {}))
    ftsp = _apply(FtspConfig(), "ftsp", sections.get("ftsp", {}))
    tsal = _apply(TsalConfig(), "tsal", sections.get("tsal", {}))
    adapt = _apply(AdaptConfig(ftsp=ftsp, tsal=tsal), "adapt", sections.get("adapt", {}))
    adapt.tsal.epochs = adapt.epochs

    synth.seed = derive_seed(seed, "synth")
    source.seed = derive_seed(seed, "source")
    adapt.seed = derive_seed(seed, "adapt")

    synth.validate()
    source.validate()
    adapt.validate()
    return RunSettings(seed=seed, synth=synth, source=source, adapt=adapt)


def load_settings(path, seed_override: int | None = None) -> RunSettings:
    return build_settings(Path(path).read_text(), seed_override=seed_override)


def default_settings(seed: int) -> RunSettings:
    return build_settings(f"seed = {seed}\n")
