"""Run configuration: an INI file with one flat section per concern.

Example::

    [run]
    model = ali
    seed = 1
    steps = 20000

    [optimizer]
    lr = 0.0005

    [discriminator]
    hidden = 64, 64

Every section and key is optional; omitted values take the defaults below.
Unknown sections or keys are errors, so typos never pass silently.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

MODEL_KINDS = ("ali", "gan", "vae", "invmap", "posthoc", "cond-ali", "semisup")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSection:
    model: str = "ali"
    seed: int = 1
    steps: int = 40000
    batch_size: int = 100
    log_every: int = 100
    checkpoint_every: int = 5000
    eval_every: int = 5000
    output_dir: str = "runs/default"
    # pre-trained GAN checkpoint for invmap / posthoc
    decoder_checkpoint: str = ""
    n_labeled: int = 100


@dataclass(frozen=True)
class DataSection:
    side: int = 5
    spacing: float = 2.0
    sigma: float = 0.05
    scale: float = 4.0
    n_train: int = 100000
    n_eval: int = 10000
    seed: int = 1234
    # conditioning variable for cond-ali: grid row or full component label
    condition: str = "row"


@dataclass(frozen=True)
class ModelSection:
    dim_x: int = 2
    dim_z: int = 2
    init_std: float = 0.01
    slope: float = 0.02


@dataclass(frozen=True)
class OptimizerSection:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class NetworkSection:
    hidden: tuple[int, ...] = (64, 64, 64)


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    encoder: NetworkSection = field(default_factory=NetworkSection)
    decoder: NetworkSection = field(default_factory=NetworkSection)
    discriminator: NetworkSection = field(default_factory=NetworkSection)

    def validate(self) -> "RunConfig":
        r, d, m, o = self.run, self.data, self.model, self.optimizer
        problems = []
        if r.model not in MODEL_KINDS:
            problems.append(f"run.model must be one of {', '.join(MODEL_KINDS)}")
        for name, v in [
            ("run.steps", r.steps),
            ("run.batch_size", r.batch_size),
            ("run.log_every", r.log_every),
            ("data.side", d.side),
            ("data.n_train", d.n_train),
            ("data.n_eval", d.n_eval),
            ("model.dim_x", m.dim_x),
            ("model.dim_z", m.dim_z),
        ]:
            if v < 1:
                problems.append(f"{name} must be >= 1")
        for name, v in [("run.checkpoint_every", r.checkpoint_every), ("run.eval_every", r.eval_every)]:
            if v < 0:
                problems.append(f"{name} must be >= 0")
        for name, v in [
            ("data.spacing", d.spacing),
            ("data.sigma", d.sigma),
            ("data.scale", d.scale),
            ("model.init_std", m.init_std),
            ("optimizer.lr", o.lr),
            ("optimizer.eps", o.eps),
        ]:
            if not v > 0:
                problems.append(f"{name} must be > 0")
        if not (0 <= o.beta1 < 1 and 0 <= o.beta2 < 1):
            problems.append("optimizer.beta1 and beta2 must lie in [0, 1)")
        if m.dim_x != 2:
            problems.append("model.dim_x must be 2 for the planar mixture")
        if d.condition not in ("row", "component"):
            problems.append("data.condition must be 'row' or 'component'")
        if r.model in ("invmap", "posthoc") and not r.decoder_checkpoint:
            problems.append(f"run.decoder_checkpoint is required for model {r.model}")
        if r.model == "semisup" and not 1 <= r.n_labeled <= d.n_train:
            problems.append("run.n_labeled must be between 1 and data.n_train")
        for net in ("encoder", "decoder", "discriminator"):
            if any(h < 1 for h in getattr(self, net).hidden):
                problems.append(f"{net}.hidden sizes must be positive")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for sec in fields(self):
            section = getattr(self, sec.name)
            cp[sec.name] = {f.name: _format(getattr(section, f.name)) for f in fields(section)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        """Apply ``{"section.key": "text"}`` overrides, parsed like file values."""
        cfg = self
        for dotted, text in overrides.items():
            sec_name, _, key = dotted.partition(".")
            section = _section(cfg, sec_name)
            f = _field(section, sec_name, key)
            cfg = replace(cfg, **{sec_name: replace(section, **{key: _parse(f, text, dotted)})})
        return cfg

    def to_dict(self) -> dict:
        out = {}
        for sec in fields(self):
            section = getattr(self, sec.name)
            out[sec.name] = {}
            for f in fields(section):
                v = getattr(section, f.name)
                out[sec.name][f.name] = list(v) if isinstance(v, tuple) else v
        return out


def _section(cfg: RunConfig, name: str):
    if name not in {f.name for f in fields(cfg)}:
        raise ConfigError(f"unknown section [{name}]")
    return getattr(cfg, name)


def _field(section, sec_name: str, key: str):
    for f in fields(section):
        if f.name == key:
            return f
    raise ConfigError(f"unknown key {key!r} in [{sec_name}]")


def _format(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse(f, text: str, where: str):
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    text = text.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind.startswith("tuple"):
            return tuple(int(p) for p in text.replace(",", " ").split())
        return text
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {kind}") from None


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    overrides = {}
    for sec_name in cp.sections():
        section = _section(RunConfig(), sec_name)
        for key, value in cp[sec_name].items():
            _field(section, sec_name, key)
            overrides[f"{sec_name}.{key}"] = value
    return RunConfig().with_overrides(overrides)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text)
