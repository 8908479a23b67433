"""Flat ``key = value`` run configuration shared by the command-line tools."""

from __future__ import annotations

from dataclasses import MISSING, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Mapping

from .benchmark import BenchmarkConfig
from .datamodel import ConfigError
from .encoders import ConvSpec
from .model import ModelConfig
from .recognizer import TrainConfig


def _layers_to_text(layers) -> str:
    return ",".join("/".join(str(v) for v in (l.out_channels, l.kernel, l.stride, l.pool)) for l in layers)


def _layers_from_text(text: str) -> tuple:
    out = []
    for chunk in text.split(","):
        parts = chunk.strip().split("/")
        try:
            out.append(ConvSpec(*(int(p) for p in parts)))
        except (TypeError, ValueError):
            raise ConfigError(f"bad conv layer spec {chunk!r}; expected out/kernel/stride/pool") from None
    return tuple(out)


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Key:
    name: str
    kind: str  # int | float | bool | str | ints | strs | layers | optint
    default: Any
    help: str = ""

    def parse(self, text: str):
        text = text.strip()
        try:
            if self.kind == "int":
                return int(text)
            if self.kind == "optint":
                return None if text.lower() in ("", "none") else int(text)
            if self.kind == "float":
                return float(text)
            if self.kind == "bool":
                return _parse_bool(text)
            if self.kind == "ints":
                return tuple(int(t) for t in text.split(",") if t.strip())
            if self.kind == "strs":
                return tuple(t.strip() for t in text.split(",") if t.strip())
            if self.kind == "layers":
                return None if text.lower() in ("", "none") else _layers_from_text(text)
        except ValueError:
            raise ConfigError(f"bad value for {self.name}: {text!r}") from None
        return text

    def format(self, value) -> str:
        if value is None:
            return "none"
        if self.kind == "layers":
            return _layers_to_text(value)
        if self.kind in ("ints", "strs"):
            return ",".join(str(v) for v in value)
        if self.kind == "bool":
            return "true" if value else "false"
        return str(value)


def _kind_of(default) -> str:
    if isinstance(default, bool):
        return "bool"
    if isinstance(default, int):
        return "int"
    if isinstance(default, float):
        return "float"
    if isinstance(default, tuple):
        return "ints"
    return "str"


def _keys_from(cls, skip=(), kinds=None) -> list[Key]:
    out = []
    kinds = kinds or {}
    for f in fields(cls):
        if f.name in skip:
            continue
        default = f.default if f.default is not MISSING else f.default_factory()
        out.append(Key(f.name, kinds.get(f.name) or _kind_of(default), default))
    return out


MODEL_KEYS = _keys_from(ModelConfig, skip=("num_classes",), kinds={"sil_layers": "layers"})
TRAIN_KEYS = _keys_from(TrainConfig, skip=("seed",), kinds={"clip_len": "optint"})
BENCHMARK_KEYS = _keys_from(BenchmarkConfig, kinds={"sil_layers": "layers"})
SYNTH_KEYS = [
    Key("ids", "int", 20, "number of identities"),
    Key("seqs", "int", 8, "sequences per identity"),
    Key("frames", "int", 60, "frames per sequence"),
    Key("jitter_sigma", "float", 0.08, "std of the joint noise on jittered frames"),
    Key("jitter_prob", "float", 0.3, "probability that a frame is jittered"),
    Key("appearance_var", "float", 0.0, "clothing-like silhouette inflation"),
    Key("identity_spread", "float", 1.0, "width of the identity parameter ranges"),
]
COMMON_KEYS = [Key("seed", "int", 0), Key("out", "str", "")]
DATA_KEYS = [Key("data", "str", ""), Key("sequences", "strs", (), "sequence ids to use; empty means all")]

COMMAND_KEYS: dict[str, list[Key]] = {
    "synth": COMMON_KEYS + SYNTH_KEYS,
    "train": COMMON_KEYS + DATA_KEYS + MODEL_KEYS + TRAIN_KEYS,
    "refine": COMMON_KEYS + DATA_KEYS + [
        Key("checkpoint", "str", ""),
        Key("method", "str", "gaitref", "gaitref | average | gaussian | none"),
        Key("window", "int", 3),
        Key("sigma", "float", 1.0),
    ],
    "eval": COMMON_KEYS + [
        Key("data", "str", ""),
        Key("checkpoint", "str", ""),
        Key("gallery_seqs", "strs", ()),
        Key("probe_seqs", "strs", ()),
        Key("exclude_same_view", "bool", False),
        Key("reduction", "str", "part-mean"),
        Key("ks", "ints", (1, 5, 10, 20)),
    ],
    "ablate": COMMON_KEYS + [k for k in BENCHMARK_KEYS] + [
        Key("variants", "strs", ("gaitmix-concat", "gaitmix-padding", "gaitref-concat", "gaitref-padding",
                                 "scn-full", "scn-no-FJ", "scn-no-FJP", "scn-no-FS")),
        Key("seeds", "ints", (0, 1, 2)),
    ],
}


@dataclass
class RunConfig:
    """Resolved settings for one command: defaults, then the config file, then flags."""

    command: str
    values: dict = field(default_factory=dict)

    @property
    def keys(self) -> dict[str, Key]:
        return {k.name: k for k in COMMAND_KEYS[self.command]}

    def __getitem__(self, name: str):
        return self.values[name]

    def __getattr__(self, name: str):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    @classmethod
    def defaults(cls, command: str) -> "RunConfig":
        if command not in COMMAND_KEYS:
            raise ConfigError(f"unknown command {command!r}")
        return cls(command, {k.name: k.default for k in COMMAND_KEYS[command]})

    def update_text(self, items: Mapping[str, str], source: str = "") -> None:
        keys = self.keys
        for name, text in items.items():
            if name not in keys:
                where = f" in {source}" if source else ""
                raise ConfigError(f"unknown config key {name!r}{where} for command {self.command!r}")
            self.values[name] = keys[name].parse(text)

    def update(self, items: Mapping[str, Any]) -> None:
        keys = self.keys
        for name, value in items.items():
            if name not in keys:
                raise ConfigError(f"unknown config key {name!r} for command {self.command!r}")
            self.values[name] = value

    def to_text(self) -> str:
        keys = self.keys
        lines = [f"command = {self.command}"]
        lines += [f"{name} = {keys[name].format(v)}" for name, v in self.values.items()]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())

    def subset(self, keys: Iterable[Key]) -> dict:
        return {k.name: self.values[k.name] for k in keys if k.name in self.values}

    def model_config(self, num_classes: int) -> ModelConfig:
        return ModelConfig(num_classes=num_classes, **self.subset(MODEL_KEYS))

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.values["seed"], **self.subset(TRAIN_KEYS))

    def benchmark_config(self) -> BenchmarkConfig:
        return BenchmarkConfig(**self.subset(BENCHMARK_KEYS))


def parse_config_text(text: str, source: str = "") -> dict[str, str]:
    """``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_config_file(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))


def load_saved_config(path) -> RunConfig:
    """Read a resolved config written by :meth:`RunConfig.write`."""
    items = read_config_file(path)
    command = items.pop("command", None)
    if command is None:
        raise ConfigError(f"{path}: missing 'command' line")
    cfg = RunConfig.defaults(command)
    cfg.update_text(items, str(path))
    return cfg
