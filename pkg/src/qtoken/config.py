"""Run configuration: a YAML file with sections ``noise``, ``protocol``,
``harness``, ``adversary`` and ``output``. Every key is optional; the defaults
describe a noiseless run with 10 000 trials and seed 42.

Example::

    noise:
      alpha_mode: uniform
      t_m: 1.0
    harness:
      trials: 100000
      sweep:
        parameter: t_s
        values: [0, 1, 2, 3]
    output:
      path: storage.csv
      format: csv
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Optional

import yaml

from .noise import BSM_MODELS, NoiseConfig, NoiseConfigError
from .protocol import ProtocolConfig

FORMATS = ("csv", "json")
STRATEGIES = ("blind_guess", "random_state", "intercept_p2")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.message = message
        self.line = line
        self.path = path
        where = f"{path}:" if path else ""
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


@dataclass
class ProtocolOptions:
    delta_mode: bool = True
    bsm_model: str = "readout"
    active_correction: bool = True
    swap_variant: bool = False
    phi1: Optional[float] = None
    repetitions: int = 1


@dataclass
class SweepOptions:
    parameter: str = "t_s"
    values: list = field(default_factory=list)


@dataclass
class HarnessOptions:
    trials: int = 10_000
    seed: int = 42
    threads: int = 1
    sweep: Optional[SweepOptions] = None


@dataclass
class AdversaryOptions:
    strategy: str = "blind_guess"
    rounds: int = 1
    target_halfwidth: Optional[float] = None


@dataclass
class OutputOptions:
    path: Optional[str] = None
    format: str = "csv"


@dataclass
class RunConfiguration:
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    protocol: ProtocolOptions = field(default_factory=ProtocolOptions)
    harness: HarnessOptions = field(default_factory=HarnessOptions)
    adversary: AdversaryOptions = field(default_factory=AdversaryOptions)
    output: OutputOptions = field(default_factory=OutputOptions)

    def protocol_config(self) -> ProtocolConfig:
        return ProtocolConfig(noise=self.noise, **dataclasses.asdict(self.protocol))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if self.harness.sweep is None:
            d["harness"].pop("sweep")
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


_SECTIONS = {
    "noise": NoiseConfig,
    "protocol": ProtocolOptions,
    "harness": HarnessOptions,
    "adversary": AdversaryOptions,
    "output": OutputOptions,
}

_FLOAT = (int, float)
_TYPES: dict[tuple[str, str], tuple] = {
    ("noise", "alpha_mode"): (str,),
    ("noise", "max_repetitions"): (int,),
    ("protocol", "delta_mode"): (bool,),
    ("protocol", "bsm_model"): (str,),
    ("protocol", "active_correction"): (bool,),
    ("protocol", "swap_variant"): (bool,),
    ("protocol", "phi1"): _FLOAT + (type(None),),
    ("protocol", "repetitions"): (int,),
    ("harness", "trials"): (int,),
    ("harness", "seed"): (int,),
    ("harness", "threads"): (int,),
    ("harness", "sweep"): (dict, type(None)),
    ("adversary", "strategy"): (str,),
    ("adversary", "rounds"): (int,),
    ("adversary", "target_halfwidth"): _FLOAT + (type(None),),
    ("output", "path"): (str, type(None)),
    ("output", "format"): (str,),
}


def _line(node) -> Optional[int]:
    return node.start_mark.line + 1 if node is not None else None


def _key_lines(node) -> dict:
    """Map of key -> (line, value node) for a YAML mapping node."""
    if not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: (_line(k), v) for k, v in node.value}


def _typecheck(section: str, key: str, value: Any, line: Optional[int]) -> None:
    allowed = _TYPES.get((section, key), _FLOAT)
    # bool is an int subclass; keep flags and numbers apart
    if isinstance(value, bool) and bool not in allowed:
        ok = False
    else:
        ok = isinstance(value, allowed)
    if not ok:
        names = "/".join(t.__name__ for t in allowed)
        raise ConfigError(f"{section}.{key}: expected {names}, got {value!r}", line)


def from_mapping(data: Any, root=None) -> RunConfiguration:
    """Build a configuration from parsed YAML. ``root`` is the composed node
    tree, used only to attach line numbers to diagnostics."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping of sections", _line(root))
    top_lines = _key_lines(root)
    parts = {}
    for section, raw in data.items():
        line, node = top_lines.get(section, (None, None))
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section {section!r} (expected one of {sorted(_SECTIONS)})", line)
        raw = {} if raw is None else raw
        if not isinstance(raw, dict):
            raise ConfigError(f"section {section!r} must be a mapping", line)
        keys = {f.name for f in dataclasses.fields(_SECTIONS[section])}
        lines = _key_lines(node)
        for key, value in raw.items():
            kline = lines.get(key, (line, None))[0]
            if key not in keys:
                raise ConfigError(f"unknown key {section}.{key}", kline)
            _typecheck(section, key, value, kline)
        parts[section] = (raw, line, lines)

    def build(section):
        raw, line, lines = parts.get(section, ({}, None, {}))
        values = dict(raw)
        if section == "harness" and values.get("sweep") is not None:
            values["sweep"] = _sweep(values["sweep"], lines.get("sweep", (line, None)))
        try:
            return _SECTIONS[section](**values)
        except (NoiseConfigError, TypeError, ValueError) as exc:
            # noise validation messages start with the offending field name
            first = str(exc).split(" ", 1)[0]
            raise ConfigError(f"{section}: {exc}", lines.get(first, (line,))[0]) from None

    cfg = RunConfiguration(**{s: build(s) for s in _SECTIONS})
    _check_semantics(cfg, {s: p[2] for s, p in parts.items()})
    return cfg


def _sweep(raw: dict, where) -> SweepOptions:
    line, node = where
    lines = _key_lines(node)
    for key in raw:
        if key not in ("parameter", "values"):
            raise ConfigError(f"unknown key harness.sweep.{key}", lines.get(key, (line,))[0])
    values = raw.get("values", [])
    vline = lines.get("values", (line,))[0]
    if not isinstance(values, list):
        raise ConfigError("harness.sweep.values must be a list", vline)
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float, str)):
            raise ConfigError(f"harness.sweep.values: bad entry {v!r}", vline)
    param = raw.get("parameter", "t_s")
    if param not in {f.name for f in dataclasses.fields(NoiseConfig)}:
        raise ConfigError(f"harness.sweep.parameter must name a noise field, got {param!r}",
                          lines.get("parameter", (line,))[0])
    return SweepOptions(parameter=param, values=list(values))


def _check_semantics(cfg: RunConfiguration, lines: dict) -> None:
    def fail(section, key, msg):
        raise ConfigError(f"{section}.{key} {msg}", lines.get(section, {}).get(key, (None,))[0])

    if cfg.protocol.bsm_model not in BSM_MODELS:
        fail("protocol", "bsm_model", f"must be one of {BSM_MODELS}")
    if cfg.protocol.repetitions < 1:
        fail("protocol", "repetitions", "must be >= 1")
    if cfg.harness.trials < 1:
        fail("harness", "trials", "must be >= 1")
    if cfg.harness.threads < 1:
        fail("harness", "threads", "must be >= 1")
    if cfg.harness.seed < 0:
        fail("harness", "seed", "must be >= 0")
    if cfg.adversary.strategy not in STRATEGIES:
        fail("adversary", "strategy", f"must be one of {STRATEGIES}")
    if cfg.adversary.rounds < 1:
        fail("adversary", "rounds", "must be >= 1")
    if cfg.output.format not in FORMATS:
        fail("output", "format", f"must be one of {FORMATS}")


def loads(text: str, path: Optional[str] = None) -> RunConfiguration:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None) or getattr(exc, "context_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"YAML syntax error: {problem}", line, path) from None
    try:
        return from_mapping(data, root)
    except ConfigError as exc:
        if path and exc.path is None:
            raise ConfigError(exc.message, exc.line, path) from None
        raise


def load(path: str) -> RunConfiguration:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc.strerror}", None, path) from None
    return loads(text, path)


def dumps(cfg: RunConfiguration) -> str:
    return cfg.to_yaml()
