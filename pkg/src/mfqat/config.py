"""Run configuration: a single self-describing ``key = value`` text file.

Sections are bracketed headers; ``#`` starts a comment; unknown sections or
keys are errors. Every field has a default, and ``dumps`` always serialises
the complete schema so a saved config reproduces the run byte for byte.
"""

from __future__ import annotations

import os

from .data import SyntheticShipConfig
from .formats import MinifloatFormat, ZeroEncoding, parse_format

ENV_CONFIG = "MFQAT_CONFIG"


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


# section -> key -> (parser, default)
_SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "task": (str, "synthetic-seg"),          # synthetic-seg | dir-seg | sanity-classify
        "seed": (int, 0),
        "epochs": (int, 10),
        "finetune_epochs": (int, 5),
        "batch_size": (int, 16),
        "figures": (_bool, True),
    },
    "model": {
        "arch": (str, "toy-segnet"),             # thin-unet32 | toy-segnet | tiny-classifier
        "in_channels": (int, 1),
        "n_classes": (int, 10),
    },
    "quant": {
        "enabled": (_bool, True),
        "weight_format": (str, "E3M2"),
        "activation_format": (str, "E3M2"),
        "zero_encoding": (str, "zero-point"),    # zero-point | zero-binade
        "bias_mode": (str, "learned"),           # learned | fixed
        "fixed_bias": (str, "ieee"),             # "ieee" or an integer
        "init_mode": (str, "paper-formula"),     # paper-formula | tight-fit
        "warmup_iters": (int, 200),
        "ste_clip_zero": (_bool, False),
    },
    "optim": {
        "optimizer": (str, "adam"),              # sgd | adam
        "lr": (float, 0.001),
        "momentum": (float, 0.9),
        "weight_decay": (float, 0.0),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "eps": (float, 1e-8),
        "schedule": (str, "multistep"),          # cosine | multistep | none
        "multistep_interval": (int, 200),
        "multistep_gamma": (float, 0.5),
    },
    "data": {
        "image_size": (int, 64),
        "train_samples": (int, 512),
        "test_samples": (int, 128),
        "min_objects": (int, 1),
        "max_objects": (int, 3),
        "min_object_size": (int, 6),
        "max_object_size": (int, 16),
        "noise_level": (float, 0.08),
        "brightness_jitter": (float, 0.1),
        "contrast_jitter": (float, 0.2),
        "augment": (_bool, False),
        "data_dir": (str, ""),
    },
}

_CHOICES = {
    ("run", "task"): {"synthetic-seg", "dir-seg", "sanity-classify"},
    ("model", "arch"): {"thin-unet32", "toy-segnet", "tiny-classifier"},
    ("quant", "zero_encoding"): {"zero-point", "zero-binade"},
    ("quant", "bias_mode"): {"learned", "fixed"},
    ("quant", "init_mode"): {"paper-formula", "tight-fit"},
    ("optim", "optimizer"): {"sgd", "adam"},
    ("optim", "schedule"): {"cosine", "multistep", "none"},
}


class RunConfig:
    def __init__(self, values: dict[str, dict[str, object]]):
        self.values = values

    @classmethod
    def default(cls) -> "RunConfig":
        return cls({s: {k: d for k, (_, d) in keys.items()} for s, keys in _SCHEMA.items()})

    def get(self, section: str, key: str):
        return self.values[section][key]

    def set(self, section: str, key: str, value) -> None:
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"unknown config key [{section}] {key}")
        self.values[section][key] = value
        self._validate()

    # -- parsing / serialisation ----------------------------------------------

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        cfg = cls.default()
        section = None
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                if section not in _SCHEMA:
                    raise ConfigError(f"line {lineno}: unknown section [{section}]")
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            if section is None:
                raise ConfigError(f"line {lineno}: key outside any section")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _SCHEMA[section]:
                raise ConfigError(f"line {lineno}: unknown key [{section}] {key}")
            parser = _SCHEMA[section][key][0]
            try:
                cfg.values[section][key] = parser(value)
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
        cfg._validate()
        return cfg

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.loads(fh.read())

    @classmethod
    def from_env_or(cls, path: str | None) -> "RunConfig":
        path = path or os.environ.get(ENV_CONFIG)
        if path:
            return cls.load(path)
        return cls.default()

    def dumps(self) -> str:
        lines = []
        for section, keys in _SCHEMA.items():
            lines.append(f"[{section}]")
            for key in keys:
                lines.append(f"{key} = {self.values[section][key]}")
            lines.append("")
        return "\n".join(lines)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    # -- validation and derived objects ----------------------------------------

    def _validate(self) -> None:
        for (section, key), allowed in _CHOICES.items():
            value = self.values[section][key]
            if value not in allowed:
                raise ConfigError(f"[{section}] {key} must be one of {sorted(allowed)}, got {value!r}")
        for section, key in (("run", "epochs"), ("run", "finetune_epochs"),
                             ("run", "batch_size"), ("quant", "warmup_iters")):
            if int(self.values[section][key]) < 0:
                raise ConfigError(f"[{section}] {key} must be >= 0")
        fb = str(self.values["quant"]["fixed_bias"])
        if fb != "ieee":
            try:
                int(fb)
            except ValueError:
                raise ConfigError(f"[quant] fixed_bias must be 'ieee' or an integer, got {fb!r}") from None
        self.weight_format()
        self.activation_format()

    def _default_encoding(self) -> ZeroEncoding:
        return ZeroEncoding(self.get("quant", "zero_encoding"))

    def weight_format(self) -> MinifloatFormat:
        return parse_format(str(self.get("quant", "weight_format")), self._default_encoding())

    def activation_format(self) -> MinifloatFormat:
        return parse_format(str(self.get("quant", "activation_format")), self._default_encoding())

    def fixed_bias_value(self) -> int | None:
        """Integer bias for fixed mode; None means the per-format IEEE default."""
        fb = str(self.get("quant", "fixed_bias"))
        return None if fb == "ieee" else int(fb)

    def synthetic_config(self) -> SyntheticShipConfig:
        d = self.values["data"]
        return SyntheticShipConfig(
            image_size=int(d["image_size"]),
            min_objects=int(d["min_objects"]),
            max_objects=int(d["max_objects"]),
            min_object_size=int(d["min_object_size"]),
            max_object_size=int(d["max_object_size"]),
            noise_level=float(d["noise_level"]),
            brightness_jitter=float(d["brightness_jitter"]),
            contrast_jitter=float(d["contrast_jitter"]),
            seed=int(self.get("run", "seed")),
        )
