"""Experiment configuration (YAML), with preset expansion and overrides.

Example::

    preset: 201.88km
    channel:
      visibility_residual: 0.97
    run:
      n_slots: 1.0e9
      seed: 3

Unknown sections or keys are rejected. Without ``preset`` the protocol
section starts from the 504.66 km column and the channel from
:class:`ChannelModel` defaults.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional, Sequence

import yaml

from .core import PMPError, ProtocolParams, validate_params
from .pipeline import DEFAULT_SWEEP_EDGES_US
from .presets import get_preset
from .simulator import ChannelModel, PhaseNoiseModel


DEFAULT_PRESET = "504.66km"


class ConfigError(PMPError, ValueError):
    pass


@dataclass(frozen=True)
class PairingSection:
    filter_enabled: bool = True


@dataclass(frozen=True)
class RunSection:
    n_slots: int = 10**8
    seed: int = 1
    workers: int = 1
    chunk_slots: int = 1 << 24
    binary: bool = False
    sweep: bool = True
    sweep_mode: str = "binned"
    sweep_edges_us: tuple = DEFAULT_SWEEP_EDGES_US
    scale_to_N: bool = False
    finite: bool = True

    def __post_init__(self):
        if self.n_slots < 0:
            raise ConfigError("run.n_slots must be >= 0")
        if self.workers < 1:
            raise ConfigError("run.workers must be >= 1")
        if self.chunk_slots < 1:
            raise ConfigError("run.chunk_slots must be >= 1")
        if self.sweep_mode not in ("binned", "cumulative"):
            raise ConfigError("run.sweep_mode must be 'binned' or 'cumulative'")


@dataclass(frozen=True)
class ExperimentConfig:
    params: ProtocolParams
    channel: ChannelModel
    noise: PhaseNoiseModel
    pairing: PairingSection = field(default_factory=PairingSection)
    run: RunSection = field(default_factory=RunSection)
    preset: Optional[str] = None
    total_loss_db: Optional[float] = None

    @property
    def loss_db(self) -> float:
        """Fiber loss between the users, used for the capacity bound."""
        if self.total_loss_db is not None:
            return self.total_loss_db
        return self.channel.loss_a_db + self.channel.loss_b_db

    def to_dict(self) -> dict:
        run = asdict(self.run)
        run["sweep_edges_us"] = list(self.run.sweep_edges_us)
        return {
            "preset": self.preset,
            "total_loss_db": self.total_loss_db,
            "protocol": asdict(self.params),
            "channel": asdict(self.channel),
            "noise": asdict(self.noise),
            "pairing": asdict(self.pairing),
            "run": run,
        }


_SECTIONS = {
    "protocol": ProtocolParams,
    "channel": ChannelModel,
    "noise": PhaseNoiseModel,
    "pairing": PairingSection,
    "run": RunSection,
}
_TOP_KEYS = set(_SECTIONS) | {"preset", "total_loss_db"}
_INT_FIELDS = {"n_slots", "seed", "workers", "chunk_slots", "resample_interval"}


_STR_FIELDS = {"sweep_mode"}


def _number(value: Any) -> Any:
    # YAML 1.1 reads "1e9" (no dot) as a string
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def _coerce(section: str, key: str, value: Any) -> Any:
    if key not in _STR_FIELDS:
        value = _number(value)
    if key in _INT_FIELDS:
        if isinstance(value, str):
            raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
        if isinstance(value, bool) or not float(value).is_integer():
            raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
        return int(value)
    if key == "sweep_edges_us":
        return tuple(float(_number(v)) for v in value)
    return value


def _section_values(data: dict, name: str) -> dict:
    raw = data.get(name) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in fields(_SECTIONS[name])}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name}: {', '.join(unknown)}")
    return {k: _coerce(name, k, v) for k, v in raw.items()}


def build_config(data: Optional[dict]) -> ExperimentConfig:
    data = dict(data or {})
    unknown = sorted(set(data) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    preset_name = data.get("preset")
    total_loss = _number(data.get("total_loss_db"))
    if preset_name is not None:
        try:
            preset = get_preset(str(preset_name))
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
        params, channel, noise = preset.params, preset.channel(), preset.noise()
        preset_name = preset.name
        if total_loss is None:
            total_loss = preset.total_loss_db
    else:
        # without a preset the encoding starts from the longest-link column
        params = get_preset(DEFAULT_PRESET).params
        channel, noise = ChannelModel(), PhaseNoiseModel()
    try:
        params = replace(params, **_section_values(data, "protocol"))
        validate_params(params)
        channel = replace(channel, **_section_values(data, "channel"))
        noise = replace(noise, **_section_values(data, "noise"))
        pairing = PairingSection(**_section_values(data, "pairing"))
        run = RunSection(**_section_values(data, "run"))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(params, channel, noise, pairing, run, preset_name, total_loss)


def parse_override(text: str) -> tuple[list[str], Any]:
    """``section.key=value`` with the value parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    path = key.strip().split(".")
    if not all(path):
        raise ConfigError(f"bad override key {key!r}")
    return path, yaml.safe_load(raw)


def apply_overrides(data: dict, overrides: Sequence[str]) -> dict:
    data = {k: (dict(v) if isinstance(v, dict) else v) for k, v in (data or {}).items()}
    for text in overrides:
        path, value = parse_override(text)
        if len(path) == 1:
            data[path[0]] = value
        elif len(path) == 2:
            section = data.setdefault(path[0], {})
            if not isinstance(section, dict):
                raise ConfigError(f"{path[0]} is not a section")
            section[path[1]] = value
        else:
            raise ConfigError(f"override key {'.'.join(path)!r} nests too deeply")
    return data


def load_config_data(path: Optional[str | Path]) -> dict:
    if path is None:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def load_config(path: Optional[str | Path] = None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    return build_config(apply_overrides(load_config_data(path), overrides))
