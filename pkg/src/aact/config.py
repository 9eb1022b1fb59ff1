"""Flat run configuration: ``key = value`` files plus command-line overrides."""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, fields

from .evaluation import SuiteConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model / optimisation (mirrors TrainConfig)
    model_kind: str = "act"
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_s: float = 0.1
    lambda_p: float = 1.0
    lambda_c: float = 0.3
    seed: int = 0
    cycle_label_target: str = "soft"
    d: int = 16
    A: int = 12
    M: int = 8
    N: int = 4
    k: int = 4
    heads: int = 8
    layers: int = 2
    terms: tuple[str, ...] | None = None
    gradcheck: bool = True
    gradcheck_coords: int = 24
    gradcheck_tol: float = 1e-4
    # synthetic data
    num_activities: int = 3
    noise_sigma: float = 0.3
    segment_min: int = 4
    segment_max: int = 10
    n_train: int = 2000
    n_test: int = 500
    k_max: int = 8
    split: str = "train"
    # suites
    suite: str = "cycle_ablation"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    models: tuple[str, ...] = ("se", "pv", "act")
    horizons: tuple[int, ...] = (0, 2, 4, 6, 8)
    fractions: tuple[float, ...] = (0.1, 0.2, 0.3, 0.5)
    fraction_model: str = "act"
    obs_fracs: tuple[float, ...] = (0.2, 0.3)
    pred_fracs: tuple[float, ...] = (0.1, 0.2, 0.3, 0.5)
    video_len: int = 40

    def train_config(self, **overrides) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        kw = {k: v for k, v in dataclasses.asdict(self).items() if k in names}
        kw.update(overrides)
        return TrainConfig(**kw)

    def suite_config(self, suite: str | None = None) -> SuiteConfig:
        names = {f.name for f in fields(SuiteConfig)} - {"train", "suite"}
        kw = {k: v for k, v in dataclasses.asdict(self).items() if k in names}
        return SuiteConfig(suite=suite or self.suite, train=self.train_config(gradcheck=False), **kw)

    def echo(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


_HINTS = typing.get_type_hints(RunConfig)


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_scalar(text: str, typ, key: str):
    if typ is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    try:
        return typ(text)
    except ValueError:
        raise ConfigError(f"{key}: expected {typ.__name__}, got {text!r}") from None


def parse_value(key: str, text: str):
    if key not in _HINTS:
        raise ConfigError(f"unknown config key {key!r}")
    typ = _HINTS[key]
    text = text.strip()
    args = typing.get_args(typ)
    optional = type(None) in args
    if optional:
        if text.lower() in ("", "none"):
            return None
        typ = next(a for a in args if a is not type(None))
    if typing.get_origin(typ) is tuple:
        elem = typing.get_args(typ)[0]
        return tuple(_parse_scalar(p.strip(), elem, key) for p in text.split(",") if p.strip())
    return _parse_scalar(text, typ, key)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            out[key] = parse_value(key, value)
        except ConfigError as e:
            raise ConfigError(f"{source}:{lineno}: {e}") from None
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values = {}
    if path is not None:
        with open(path) as fh:
            values.update(parse_config_text(fh.read(), str(path)))
    values.update(overrides or {})
    try:
        cfg = RunConfig(**values)
        cfg.train_config()
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    return cfg
