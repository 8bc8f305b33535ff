"""Scenario files (YAML) with strict key checking.

A scenario has the sections ``topology``, ``chain``, ``jammer``,
``experiment``, ``optimizer``, ``oracles`` and ``output``; unknown keys are
rejected with the file and line where they appear.  Two scenarios ship with
the package and can be referred to by name: ``m4`` and ``m6``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .channel import NetworkTopology
from .errors import ConfigError
from .simulation import DETECTORS, MODELS, ExperimentConfig

__all__ = [
    "Scenario",
    "JammerSection",
    "ExperimentSection",
    "OptimizerSection",
    "OracleSection",
    "load_scenario",
    "parse_scenario",
    "BUILTIN_SCENARIOS",
]

BUILTIN_SCENARIOS = ("m4", "m6")

_TOPOLOGY_KEYS = {"positions", "p_t", "p_o", "d_o", "alpha", "N_0", "theta", "fading"}


@dataclass(frozen=True)
class JammerSection:
    p_R: float = 0.8
    p_J: float = 0.2
    naive: bool = False
    grid_R: tuple[float, ...] = ()
    grid_J: tuple[float, ...] = ()

    @property
    def grid(self) -> list[tuple[float, float]]:
        return [(r, j) for r in self.grid_R for j in self.grid_J]


@dataclass(frozen=True)
class ExperimentSection:
    W: int = 1000
    n: int = 10_000
    seed: int = 0
    model: str = "full"
    detector: str = "supervised"
    clock: str = "full"


@dataclass(frozen=True)
class OptimizerSection:
    expansion_point: tuple[float, float] = (0.5, 0.5)
    order: int = 1
    tau_eta: tuple[float, ...] = (1.1,)
    grid_step: float = 0.005


@dataclass(frozen=True)
class OracleSection:
    cdf_samples: int = 1_000_000
    n: int = 2000
    W: int = 1000


@dataclass(frozen=True)
class Scenario:
    topology: NetworkTopology
    lam: float
    gamma: float
    jammer: JammerSection = JammerSection()
    experiment: ExperimentSection = ExperimentSection()
    optimizer: OptimizerSection = OptimizerSection()
    oracles: OracleSection = OracleSection()
    output_dir: str = "out"
    figures: bool = True
    source: str = "<memory>"

    def experiment_config(self, threads: int = 1, **overrides) -> ExperimentConfig:
        e = self.experiment
        kw = dict(
            topology=self.topology, lam=self.lam, gamma=self.gamma,
            jammer=(self.jammer.p_R, self.jammer.p_J), W=e.W, n=e.n, seed=e.seed,
            model=e.model, detector=e.detector, naive=self.jammer.naive, threads=threads,
        )
        kw.update(overrides)
        return ExperimentConfig(**kw)

    def with_seed(self, seed: int) -> "Scenario":
        return dataclasses.replace(self, experiment=dataclasses.replace(self.experiment, seed=int(seed)))


# ---------------------------------------------------------------------------
# Parsing


class _Lines:
    """Line numbers of mapping keys, for error messages."""

    def __init__(self, source: str, node: Optional[yaml.Node]):
        self.source = source
        self.lines: dict[tuple[str, ...], int] = {}
        if node is not None:
            self._walk(node, ())

    def _walk(self, node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = path + (str(k.value),)
                self.lines[key] = k.start_mark.line + 1
                self._walk(v, key)

    def where(self, *path: str) -> str:
        for n in range(len(path), 0, -1):
            if path[:n] in self.lines:
                return f"{self.source}:{self.lines[path[:n]]}"
        return self.source


def _fail(lines: _Lines, path: tuple[str, ...], msg: str):
    raise ConfigError(f"{lines.where(*path)}: {'.'.join(path)}: {msg}")


def _section(doc: dict, name: str, allowed: set[str], lines: _Lines) -> dict:
    sec = doc.get(name) or {}
    if not isinstance(sec, dict):
        _fail(lines, (name,), "must be a mapping")
    for key in sec:
        if key not in allowed:
            _fail(lines, (name, str(key)), f"unknown key (allowed: {', '.join(sorted(allowed))})")
    return sec


def _num(sec, key, default, path, lines, kind=float, lo=None, hi=None, lo_open=False):
    if key not in sec:
        return default
    v = sec[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(lines, path + (key,), f"expected a number, got {v!r}")
    if kind is int:
        if float(v) != int(v):
            _fail(lines, path + (key,), f"expected an integer, got {v!r}")
        v = int(v)
    else:
        v = float(v)
    if lo is not None and (v < lo or (lo_open and v == lo)):
        _fail(lines, path + (key,), f"must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and v > hi:
        _fail(lines, path + (key,), f"must be <= {hi}, got {v}")
    return v


def _values(spec, path, lines) -> tuple[float, ...]:
    """A list of numbers, a single number or ``{start, stop, num}``."""
    if isinstance(spec, dict):
        extra = set(spec) - {"start", "stop", "num"}
        if extra or not {"start", "stop", "num"} <= set(spec):
            _fail(lines, path, "range needs exactly the keys start, stop, num")
        num = _num(spec, "num", 1, path, lines, int, lo=1)
        return tuple(float(x) for x in np.linspace(float(spec["start"]), float(spec["stop"]), num))
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return (float(spec),)
    if isinstance(spec, list) and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in spec):
        return tuple(float(x) for x in spec)
    _fail(lines, path, f"expected a number, a list or a start/stop/num range, got {spec!r}")


def parse_scenario(doc: Any, source: str = "<memory>", node: Optional[yaml.Node] = None) -> Scenario:
    """Validate a parsed YAML document."""
    lines = _Lines(source, node)
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: scenario must be a mapping")
    sections = {"topology", "chain", "jammer", "experiment", "optimizer", "oracles", "output"}
    for key in doc:
        if key not in sections:
            _fail(lines, (str(key),), f"unknown section (allowed: {', '.join(sorted(sections))})")
    if "topology" not in doc:
        raise ConfigError(f"{source}: missing required section 'topology'")

    topo_sec = _section(doc, "topology", _TOPOLOGY_KEYS, lines)
    if "positions" not in topo_sec:
        _fail(lines, ("topology",), "missing required key 'positions'")
    try:
        topology = NetworkTopology(**topo_sec)
    except ConfigError as exc:
        raise ConfigError(f"{lines.where('topology')}: {exc}") from None
    except TypeError as exc:
        _fail(lines, ("topology",), str(exc))

    chain = _section(doc, "chain", {"lambda", "gamma"}, lines)
    lam = _num(chain, "lambda", 0.5, ("chain",), lines, lo=0.0, lo_open=True)
    gamma = _num(chain, "gamma", 1.0, ("chain",), lines, lo=0.0, lo_open=True)

    jam = _section(doc, "jammer", {"p_R", "p_J", "naive", "grid"}, lines)
    p = ("jammer",)
    naive = jam.get("naive", False)
    if not isinstance(naive, bool):
        _fail(lines, p + ("naive",), "expected true or false")
    grid_R = grid_J = ()
    if "grid" in jam:
        grid = jam["grid"]
        if not isinstance(grid, dict) or set(grid) != {"p_R", "p_J"}:
            _fail(lines, p + ("grid",), "grid needs exactly the keys p_R and p_J")
        grid_R = _values(grid["p_R"], p + ("grid", "p_R"), lines)
        grid_J = _values(grid["p_J"], p + ("grid", "p_J"), lines)
        for v in grid_R + grid_J:
            if not 0 <= v <= 1:
                _fail(lines, p + ("grid",), f"grid values must lie in [0, 1], got {v}")
    jammer = JammerSection(
        _num(jam, "p_R", 0.8, p, lines, lo=0.0, hi=1.0),
        _num(jam, "p_J", 0.2, p, lines, lo=0.0, hi=1.0),
        naive, grid_R, grid_J,
    )

    ex = _section(doc, "experiment", {"W", "n", "seed", "model", "detector", "clock"}, lines)
    p = ("experiment",)
    for key, allowed in (("model", MODELS), ("detector", DETECTORS), ("clock", ("full", "fresh"))):
        if key in ex and ex[key] not in allowed:
            _fail(lines, p + (key,), f"must be one of {', '.join(allowed)}, got {ex[key]!r}")
    experiment = ExperimentSection(
        _num(ex, "W", 1000, p, lines, int, lo=2),
        _num(ex, "n", 10_000, p, lines, int, lo=1),
        _num(ex, "seed", 0, p, lines, int, lo=0),
        ex.get("model", "full"), ex.get("detector", "supervised"), ex.get("clock", "full"),
    )

    op = _section(doc, "optimizer", {"expansion_point", "order", "tau_eta", "grid_step"}, lines)
    p = ("optimizer",)
    point = op.get("expansion_point", [0.5, 0.5])
    if (not isinstance(point, list) or len(point) != 2
            or not all(isinstance(x, (int, float)) and 0 < x <= 1 for x in point)):
        _fail(lines, p + ("expansion_point",), "expected two numbers in (0, 1]")
    order = _num(op, "order", 1, p, lines, int)
    if order not in (1, 2):
        _fail(lines, p + ("order",), f"must be 1 or 2, got {order}")
    optimizer = OptimizerSection(
        (float(point[0]), float(point[1])), order,
        _values(op.get("tau_eta", 1.1), p + ("tau_eta",), lines),
        _num(op, "grid_step", 0.005, p, lines, lo=0.0, hi=0.5, lo_open=True),
    )

    orc = _section(doc, "oracles", {"cdf_samples", "n", "W"}, lines)
    p = ("oracles",)
    oracles = OracleSection(
        _num(orc, "cdf_samples", 1_000_000, p, lines, int, lo=100),
        _num(orc, "n", 2000, p, lines, int, lo=10),
        _num(orc, "W", 1000, p, lines, int, lo=2),
    )

    out = _section(doc, "output", {"dir", "figures"}, lines)
    figures = out.get("figures", True)
    if not isinstance(figures, bool):
        _fail(lines, ("output", "figures"), "expected true or false")
    return Scenario(topology, lam, gamma, jammer, experiment, optimizer, oracles,
                    str(out.get("dir", "out")), figures, source)


def load_scenario(path: str | Path) -> Scenario:
    """Read a scenario from a YAML file or a built-in name (``m4``, ``m6``)."""
    name = str(path)
    if name in BUILTIN_SCENARIOS:
        text = resources.files("rrjdetect").joinpath("data", f"{name}.yaml").read_text()
        source = f"<builtin {name}>"
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read scenario {name}: {exc.strerror}") from None
        source = name
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from None
    return parse_scenario(doc, source, node)
