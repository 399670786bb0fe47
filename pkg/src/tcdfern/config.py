"""Flat key=value run configuration with schema validation.

One namespace covers the model, trainer, generator, and preprocessing knobs;
unknown keys are rejected. Precedence: defaults < config file < command-line
overrides < the TCDFERN_SEED environment variable (which, when set, wins over
every other way of choosing the seed).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .errors import ConfigError
from .model import ModelConfig
from .pipeline import PreprocessConfig
from .synth import GenConfig
from .training import TrainConfig

SEED_ENV_VAR = "TCDFERN_SEED"


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text) -> tuple[float, ...]:
    if isinstance(text, tuple):
        return tuple(float(x) for x in text)
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    return tuple(float(p) for p in parts)


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    # model
    "tau": (int, 50),
    "input_dim": (int, 224),
    "cond_dim": (int, 64),
    "gru_units": (int, 32),
    "conv1_filters": (int, 64),
    "conv2_filters": (int, 32),
    "kernel": (int, 3),
    "dropout": (float, 0.2),
    "margin": (float, 1.0),
    "lambda": (float, 0.5),
    "attn_hidden": (int, 3),
    "head_hidden": (int, 32),
    "n_cases": (int, 4),
    "variant": (str, "TCD-FERN"),
    # trainer
    "epochs": (int, 50),
    "batch_size": (int, 64),
    "learning_rate": (float, 1e-3),
    "optimizer": (str, "adam"),
    "seed": (int, 0),
    "patience": (int, 10),
    "val_fraction": (float, 0.2),
    # generator
    "q": (int, 56),
    "k": (int, 4),
    "pairs": (int, 1),
    "ticks_per_segment": (int, 100),
    "sigma_empty": (float, 0.015),
    "sigma_tx": (float, 0.12),
    "sigma_rx_nlos_open": (float, 0.22),
    "sigma_rx_nlos_rich": (float, 0.32),
    "sigma_rx_los": (float, 0.62),
    "wall_attenuation": (_parse_floats, (1.0, 0.55)),
    "static_shift": (float, 0.12),
    "sample_rate": (float, 10.0),
    "train_ticks": (int, 2000),
    "test_ticks": (int, 400),
    # preprocessing
    "stride": (int, 1),
    "ref_count": (int, 100),
    # evaluation / inference
    "threads": (int, 1),
    "smooth": (int, 0),
}


@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def model_config(self) -> ModelConfig:
        v = self.values
        return ModelConfig(
            tau=v["tau"], input_dim=v["input_dim"], cond_dim=v["cond_dim"],
            gru_units=v["gru_units"], conv1_filters=v["conv1_filters"],
            conv2_filters=v["conv2_filters"], kernel=v["kernel"],
            dropout=v["dropout"], margin=v["margin"], lam=v["lambda"],
            attn_hidden=v["attn_hidden"], head_hidden=v["head_hidden"],
            n_cases=v["n_cases"], variant=v["variant"],
        )

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            epochs=v["epochs"], batch_size=v["batch_size"],
            learning_rate=v["learning_rate"], optimizer=v["optimizer"],
            seed=v["seed"], patience=v["patience"], val_fraction=v["val_fraction"],
        )

    def gen_config(self, pairs: int | None = None) -> GenConfig:
        v = self.values
        return GenConfig(
            seed=v["seed"], q=v["q"], k=v["k"],
            pairs=pairs if pairs is not None else v["pairs"],
            ticks_per_segment=v["ticks_per_segment"],
            sigma_empty=v["sigma_empty"], sigma_tx=v["sigma_tx"],
            sigma_rx_nlos_open=v["sigma_rx_nlos_open"],
            sigma_rx_nlos_rich=v["sigma_rx_nlos_rich"],
            sigma_rx_los=v["sigma_rx_los"],
            wall_attenuation=v["wall_attenuation"],
            static_shift=v["static_shift"], sample_rate=v["sample_rate"],
        )

    def preprocess_config(self) -> PreprocessConfig:
        v = self.values
        return PreprocessConfig(tau=v["tau"], stride=v["stride"], ref_count=v["ref_count"])


def parse_config_file(path: str) -> dict:
    out = {}
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
        key, value = (part.strip() for part in text.split("=", 1))
        out[key] = value
    return out


def load_run_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults, a config file, overrides, and the seed env var."""
    values = {key: default for key, (_, default) in SCHEMA.items()}
    raw: dict = {}
    if path is not None:
        raw.update(parse_config_file(path))
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    for key, value in raw.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parser, _ = SCHEMA[key]
        try:
            values[key] = value if not isinstance(value, str) else parser(value)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({e})") from e
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            values["seed"] = int(env_seed)
        except ValueError as e:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}") from e
    if values["input_dim"] != values["q"] * values["k"]:
        raise ConfigError(
            f"input_dim ({values['input_dim']}) must equal q*k "
            f"({values['q']}*{values['k']}={values['q'] * values['k']})"
        )
    return RunConfig(values=values)
