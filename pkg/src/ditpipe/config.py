"""Scenario files: YAML in, validated dataclasses out.

A scenario looks like::

    name: opensora-a6000
    workload: {width: 480, height: 352, frames: 97, timesteps: 30, prompts: 10, heads: 24}
    cost: {t_linear: 0.25, t_attention: 0.7, t_decode: 4.0}
    mode: {variant: DeDiVAE, pipesp: true, aco: true}
    n_gpus: 8

``memory``, ``mode``, ``partition``, ``n_gpus``, ``seed``, ``outputs``,
``name`` and ``notes`` are optional.  Unknown keys are errors, and every
error names the file and line it comes from.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from .partition import closed_form_partition
from .sim.model import (
    CostModel,
    MemoryModel,
    Partition,
    ScheduleMode,
    TextPlacement,
    Variant,
    WorkloadSpec,
)


class ConfigError(ValueError):
    """Invalid scenario file; the message starts with ``source:line:``."""


@dataclass(frozen=True)
class Outputs:
    report: Optional[str] = None
    trace: Optional[str] = None


@dataclass(frozen=True)
class Config:
    workload: WorkloadSpec
    cost: CostModel
    memory: MemoryModel = field(default_factory=MemoryModel)
    mode: ScheduleMode = field(default_factory=ScheduleMode)
    partition: Optional[Partition] = None
    n_gpus: int = 8
    seed: int = 0
    outputs: Outputs = field(default_factory=Outputs)
    name: str = ""
    notes: str = ""

    def resolved_partition(self) -> Partition:
        """The configured split, or the default one for the mode.

        DeDiVAE without an explicit split uses the closed-form balance
        condition on single-GPU stage times.
        """
        if self.partition is not None:
            return self.partition
        if not self.mode.decoupled:
            return Partition(self.n_gpus, 0)
        c, w = self.cost, self.workload
        t_denoise = w.timesteps * (c.t_linear + c.t_attention) * c.n_ref
        if t_denoise <= 0 or c.t_decode <= 0 or self.n_gpus < 2:
            return Partition(self.n_gpus - 1, 1)
        return closed_form_partition(t_denoise, c.t_decode, self.n_gpus)


SECTIONS = {
    "workload": WorkloadSpec,
    "cost": CostModel,
    "memory": MemoryModel,
    "mode": ScheduleMode,
    "partition": Partition,
    "outputs": Outputs,
}
SCALARS = {"n_gpus": "int", "seed": "int", "name": "str", "notes": "str"}
REQUIRED = ("workload", "cost")
ENUMS = {"Variant": Variant, "TextPlacement": TextPlacement}


def _where(source: str, node) -> str:
    if node is None:
        return source
    return f"{source}:{node.start_mark.line + 1}"


def _mapping(node, source: str, what: str) -> Dict[str, tuple]:
    """Key -> (key node, value node), rejecting duplicates and non-string keys."""
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{_where(source, node)}: {what} must be a mapping")
    out = {}
    for knode, vnode in node.value:
        if not isinstance(knode, yaml.ScalarNode):
            raise ConfigError(f"{_where(source, knode)}: keys in {what} must be plain names")
        key = knode.value
        if key in out:
            raise ConfigError(f"{_where(source, knode)}: duplicate key {key!r} in {what}")
        out[key] = (knode, vnode)
    return out


_constructor = yaml.constructor.SafeConstructor()


def _scalar(vnode, source: str, path: str):
    if not isinstance(vnode, yaml.ScalarNode):
        raise ConfigError(f"{_where(source, vnode)}: {path} must be a single value")
    return _constructor.construct_object(vnode)


def _coerce(value, kind: str, vnode, source: str, path: str):
    where = _where(source, vnode)
    if kind == "int" or kind == "Optional[int]":
        if value is None and kind.startswith("Optional"):
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: {path} must be an integer, got {value!r}")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: {path} must be a number, got {value!r}")
        return float(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: {path} must be true or false, got {value!r}")
        return value
    if kind == "str" or kind == "Optional[str]":
        if value is None and kind.startswith("Optional"):
            return None
        if not isinstance(value, str):
            raise ConfigError(f"{where}: {path} must be a string, got {value!r}")
        return value
    if kind in ENUMS:
        cls = ENUMS[kind]
        try:
            return cls(value)
        except ValueError:
            choices = ", ".join(m.value for m in cls)
            raise ConfigError(f"{where}: {path} must be one of {choices}; got {value!r}") from None
    raise AssertionError(f"unhandled field kind {kind}")


def _section(name: str, node, source: str):
    cls = SECTIONS[name]
    entries = _mapping(node, source, name)
    kinds = {f.name: str(f.type) for f in fields(cls)}
    unknown = [k for k in entries if k not in kinds]
    if unknown:
        knode = entries[unknown[0]][0]
        raise ConfigError(f"{_where(source, knode)}: unknown key {name}.{unknown[0]}; "
                          f"expected one of {', '.join(kinds)}")
    kwargs = {}
    for key, (_, vnode) in entries.items():
        path = f"{name}.{key}"
        kwargs[key] = _coerce(_scalar(vnode, source, path), kinds[key], vnode, source, path)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{_where(source, node)}: {name}: {exc}") from None
    except ValueError as exc:
        # Point at the offending field when the message names one.
        msg = str(exc)
        hit = next((entries[k][1] for k in entries if f".{k} " in msg or f" {k} " in msg), node)
        raise ConfigError(f"{_where(source, hit)}: {name}: {msg}") from None


def parse_config(text: str, source: str = "<config>") -> Config:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f"{source}:{mark.line + 1}" if mark is not None else source
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"{loc}: YAML syntax error: {problem}") from None
    if root is None:
        raise ConfigError(f"{source}: empty config")
    entries = _mapping(root, source, "the top level")
    for key, (knode, _) in entries.items():
        if key not in SECTIONS and key not in SCALARS:
            allowed = ", ".join(list(SECTIONS) + list(SCALARS))
            raise ConfigError(f"{_where(source, knode)}: unknown key {key!r}; expected one of {allowed}")
    for key in REQUIRED:
        if key not in entries:
            raise ConfigError(f"{source}: missing required section {key!r}")

    kwargs: Dict[str, Any] = {}
    for key, (_, vnode) in entries.items():
        if key in SECTIONS:
            if key == "partition" and isinstance(vnode, yaml.ScalarNode) and \
                    _scalar(vnode, source, key) is None:
                continue
            kwargs[key] = _section(key, vnode, source)
        else:
            kwargs[key] = _coerce(_scalar(vnode, source, key), SCALARS[key], vnode, source, key)

    part = kwargs.get("partition")
    if part is not None:
        if "n_gpus" in kwargs and kwargs["n_gpus"] != part.n:
            node = entries["n_gpus"][1]
            raise ConfigError(f"{_where(source, node)}: n_gpus {kwargs['n_gpus']} does not "
                              f"match partition total {part.n}")
        kwargs["n_gpus"] = part.n
    if kwargs.get("n_gpus", 8) < 1:
        raise ConfigError(f"{_where(source, entries['n_gpus'][1])}: n_gpus must be >= 1")
    mode = kwargs.get("mode", ScheduleMode())
    if part is not None:
        where = _where(source, entries["partition"][1])
        if mode.decoupled and (part.n_denoise < 1 or part.n_decode < 1):
            raise ConfigError(f"{where}: DeDiVAE needs both groups non-empty")
        if not mode.decoupled and part.n_decode != 0:
            raise ConfigError(f"{where}: colocated modes take n_decode = 0")
    elif mode.decoupled and kwargs.get("n_gpus", 8) < 2:
        raise ConfigError(f"{source}: DeDiVAE needs n_gpus >= 2")
    return Config(**kwargs)


def load_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read: {exc.strerror}") from None
    return parse_config(text, str(path))


def _plain(value):
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def config_to_dict(cfg: Config) -> dict:
    out = {}
    if cfg.name:
        out["name"] = cfg.name
    if cfg.notes:
        out["notes"] = cfg.notes
    for key in ("workload", "cost", "memory", "mode"):
        out[key] = _plain(asdict(getattr(cfg, key)))
    if cfg.partition is not None:
        out["partition"] = asdict(cfg.partition)
    out["n_gpus"] = cfg.n_gpus
    out["seed"] = cfg.seed
    out["outputs"] = asdict(cfg.outputs)
    return out


def dump_config(cfg: Config) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, width=88)
