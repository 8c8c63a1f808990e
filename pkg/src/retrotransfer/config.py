"""Run-config files: INI sections ``[model]``, ``[train]``, ``[synth]`` and ``[replay]``.

Every hyperparameter of a run lives in one file, for example::

    [model]
    num_layers = 2
    model_dim = 64
    dropout_rate = 0.0

    [train]
    strategy = single
    iterations = 1500
    batch_tokens = 1024
    valid_interval = 150
    seed = 1
    schedule = cyclic
    peak_lr = 0.001

Keys not given fall back to the dataclass defaults. ``vocab_size`` is never read from
the file; it comes from the vocabulary the run uses.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import SynthConfig
from .model import ConfigError, ModelConfig
from .optim import ScheduleState
from .trainer import TrainRunConfig


class ConfigFileError(ValueError):
    pass


def _coerce(value: str, default):
    if isinstance(default, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(int(v) for v in value.replace(",", " ").split())
    return value.strip()


def _fill(cls, section, skip=(), **fixed):
    defaults = {f.name: f.default for f in dataclasses.fields(cls) if f.default is not dataclasses.MISSING}
    kwargs = dict(fixed)
    for key, raw in section.items() if section is not None else ():
        if key in skip:
            continue
        if key not in defaults:
            raise ConfigFileError(f"unknown key {key!r} for {cls.__name__}")
        try:
            kwargs[key] = _coerce(raw, defaults[key])
        except ValueError as exc:
            raise ConfigFileError(f"bad value for {key!r}: {raw!r}") from exc
    return cls(**kwargs)


_SCHEDULE_KEYS = ("schedule", "peak_lr", "min_lr", "warmup_steps", "cycle_period")
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainRunConfig)} - {"model", "schedule"}


@dataclass
class ReplayConfig:
    """Toy comparison of the transfer strategies over several seeds."""

    seeds: tuple[int, ...] = (1, 2, 3)
    single_iterations: int = 3000
    joint_iterations: int = 9000
    self_iterations: int = 9000
    pretrain_iterations: int = 3000
    finetune_iterations: int = 1000
    finetune_warmup: int = 100
    beam_k: int = 50
    ns: tuple[int, ...] = (1, 3, 5, 10, 20, 50)
    test_limit: int = 0
    # parallel seed processes; 0 means one per seed, capped by the core count
    workers: int = 0


@dataclass
class RunFile:
    synth: SynthConfig = field(default_factory=SynthConfig)
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    model_section: dict = field(default_factory=dict)
    train_section: dict = field(default_factory=dict)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return _fill(ModelConfig, self.model_section, vocab_size=vocab_size)

    def train_config(self, vocab_size: int, **overrides) -> TrainRunConfig:
        sec = dict(self.train_section)
        sec.update({k: str(v) for k, v in overrides.items() if v is not None})
        model = self.model_config(vocab_size)
        schedule = None
        if "schedule" in sec or any(k in sec for k in _SCHEDULE_KEYS[1:]):
            strategy = sec.get("strategy", "single")
            kind = sec.get("schedule", "inverse_sqrt" if strategy == "finetune" else "cyclic")
            iters = int(sec.get("iterations", TrainRunConfig.iterations))
            base = ScheduleState.for_budget(kind, iters)
            schedule = _fill(ScheduleState, {k: v for k, v in sec.items() if k in _SCHEDULE_KEYS[1:]},
                             kind=kind, **{k: getattr(base, k) for k in ("warmup_steps", "cycle_period")
                                           if k not in sec})
        train_sec = {k: v for k, v in sec.items() if k not in _SCHEDULE_KEYS}
        unknown = set(train_sec) - _TRAIN_KEYS
        if unknown:
            raise ConfigFileError(f"unknown [train] keys: {sorted(unknown)}")
        strategy = train_sec.pop("strategy", "single")
        fixed = {}
        if "adam_betas" in train_sec:
            fixed["adam_betas"] = tuple(float(v) for v in train_sec.pop("adam_betas").replace(",", " ").split())
        return _fill(TrainRunConfig, train_sec, strategy=strategy, model=model, schedule=schedule, **fixed)


def _section(cp: configparser.ConfigParser, name: str) -> dict:
    return dict(cp[name]) if cp.has_section(name) else {}


def parse_run_config(text: str, source: str = "<string>") -> RunFile:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigFileError(str(exc)) from exc
    unknown = set(cp.sections()) - {"model", "train", "synth", "replay"}
    if unknown:
        raise ConfigFileError(f"unknown sections: {sorted(unknown)}")
    synth = _fill(SynthConfig, _section(cp, "synth"))
    replay = _fill(ReplayConfig, _section(cp, "replay"))
    rf = RunFile(synth=synth, replay=replay, model_section=_section(cp, "model"),
                 train_section=_section(cp, "train"))
    if "vocab_size" in rf.model_section:
        raise ConfigFileError("vocab_size is derived from the vocabulary, not set in the config")
    # surface bad keys and values early with a placeholder vocabulary size
    try:
        rf.train_config(8).model.validate()
    except ConfigError as exc:
        raise ConfigFileError(str(exc)) from exc
    return rf


def load_run_config(path: str | Path | None) -> RunFile:
    if path is None:
        return parse_run_config("")
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigFileError(f"cannot read config {path}: {exc}") from exc
    return parse_run_config(text, str(path))


def dump_run_config(rf: RunFile) -> str:
    cp = configparser.ConfigParser()
    cp["model"] = rf.model_section
    cp["train"] = rf.train_section
    cp["synth"] = {k: _fmt(v) for k, v in dataclasses.asdict(rf.synth).items()}
    cp["replay"] = {k: _fmt(v) for k, v in dataclasses.asdict(rf.replay).items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _fmt(v) -> str:
    return " ".join(map(str, v)) if isinstance(v, (tuple, list)) else str(v)
