"""INI experiment configuration.

Sections and keys (all optional except ``[experiment] seed``)::

    [experiment]
    algorithm = proposed        ; proposed | rollout_baseline | pomcpow_baseline | optimal
    seed = 0
    horizon = 30
    gamma = 1.0
    scale = desk                ; desk | full (T=150, L=100, K=1000)
    out = runs/g1               ; output directory, relative to the config file

    [topology]
    name = G1                   ; G1 | G2 | G3 | switching | custom
    n_agents = 4                ; custom only
    edges = 1-2, 2-3, 3-4       ; custom only, 1-based labels
    switch = G1:10, G2:10       ; optional cyclic schedule of named graphs

    [formation]
    preset = pentagon           ; fixture name, or give desired/initial inline
    desired = 0 2; 1.9 0.6; ...
    initial = 1.05 -1.71; ...

    [planner] n_queries, max_depth, ucb_c, k_a, alpha_a, k_o, alpha_o, default_first
    [fit] n_hyperplanes, ensemble_size, lspa_iters, improvement_rounds, validation_fraction
    [optimizer] n_iters, beta0, step_power, r, noise_sigma
    [openloop] n_iters, step_scale

Errors carry the file name and the line of the offending key.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .convexfit import FitConfig
from .formation import FormationSpec, load_fixture
from .game import NAMED_TOPOLOGIES, SWITCHING_G1_G2, Topology, TopologySchedule
from .harness import ALGORITHMS, ExperimentConfig
from .minmax import OptimizerConfig
from .oracles import OpenLoopConfig
from .planner import PlannerConfig

FULL_SCALE = {"horizon": 150, "n_queries": 100, "n_iters": 1000}

SECTIONS = {
    "experiment": {"algorithm", "seed", "horizon", "gamma", "scale", "out", "ordered_pairs"},
    "topology": {"name", "n_agents", "edges", "switch"},
    "formation": {"preset", "desired", "initial"},
    "planner": {f.name for f in fields(PlannerConfig)} - {"seed"},
    "fit": {f.name for f in fields(FitConfig)} - {"seed"},
    "optimizer": {"n_iters", "beta0", "step_power", "r", "noise_sigma"},
    "openloop": {"n_iters", "step_scale"},
}

_FIXTURE_SHAPES = {5: ("pentagon", "initial_5"), 8: ("octagon", "initial_8")}


class ConfigError(ValueError):
    pass


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    lines, section = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip().lower()
            lines[(section, "")] = no
        elif section and s and s[0] not in "#;" and ("=" in s or ":" in s):
            key = re.split(r"[=:]", s, 1)[0].strip().lower()
            lines[(section, key)] = no
    return lines


class _Reader:
    def __init__(self, parser: configparser.ConfigParser, lines: dict, source: str):
        self.p = parser
        self.lines = lines
        self.source = source

    def fail(self, section: str, key: str, msg: str):
        line = self.lines.get((section, key)) or self.lines.get((section, ""))
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{where}: [{section}] {key}: {msg}" if key else f"{where}: [{section}] {msg}")

    def has(self, section, key):
        return self.p.has_option(section, key)

    def raw(self, section, key, default=None):
        return self.p.get(section, key) if self.has(section, key) else default

    def typed(self, section, key, cast, default=None):
        if not self.has(section, key):
            return default
        value = self.p.get(section, key)
        try:
            if cast is bool:
                return self.p.getboolean(section, key)
            return cast(value)
        except ValueError:
            self.fail(section, key, f"cannot read {value!r} as {cast.__name__}")


def _matrix(reader: _Reader, section: str, key: str) -> np.ndarray:
    text = reader.raw(section, key)
    try:
        rows = [[float(v) for v in row.split()] for row in text.split(";") if row.strip()]
        arr = np.array(rows, dtype=float)
    except ValueError:
        reader.fail(section, key, "expected rows of numbers separated by ';'")
    if arr.ndim != 2 or arr.shape[1] != 2:
        reader.fail(section, key, "expected one 'x y' pair per agent")
    return arr


def _edges(reader: _Reader, text: str) -> list[tuple[str, str]]:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        parts = [p.strip() for p in item.split("-")]
        if len(parts) != 2 or not all(parts):
            reader.fail("topology", "edges", f"malformed edge {item!r}; use 'a-b'")
        out.append((parts[0], parts[1]))
    return out


def _schedule(reader: _Reader) -> tuple[str, TopologySchedule]:
    name = reader.raw("topology", "name", "G1")
    if reader.has("topology", "switch"):
        entries = []
        for item in reader.raw("topology", "switch").split(","):
            try:
                g, dur = item.split(":")
                entries.append((NAMED_TOPOLOGIES[g.strip()], int(dur)))
            except (KeyError, ValueError):
                reader.fail("topology", "switch", f"bad entry {item.strip()!r}; use NAME:steps")
        try:
            return name, TopologySchedule(tuple(entries), cyclic=True)
        except ValueError as exc:
            reader.fail("topology", "switch", str(exc))
    if name == "switching":
        return name, SWITCHING_G1_G2
    if name in NAMED_TOPOLOGIES:
        return name, TopologySchedule.fixed(NAMED_TOPOLOGIES[name])
    if name != "custom":
        reader.fail("topology", "name", f"unknown topology {name!r}")
    n = reader.typed("topology", "n_agents", int)
    if n is None or not reader.has("topology", "edges"):
        reader.fail("topology", "", "custom topology needs n_agents and edges")
    try:
        topo = Topology.from_labels(n, _edges(reader, reader.raw("topology", "edges")))
    except (ValueError, IndexError) as exc:
        reader.fail("topology", "edges", str(exc))
    return name, TopologySchedule.fixed(topo)


def _formation(reader: _Reader, n: int) -> tuple[FormationSpec, np.ndarray]:
    fx = load_fixture("formations.json")
    default_spec, default_init = _FIXTURE_SHAPES.get(n, (None, None))
    preset = reader.raw("formation", "preset", default_spec)
    if reader.has("formation", "desired"):
        desired = _matrix(reader, "formation", "desired")
    elif preset in fx:
        desired = np.asarray(fx[preset], dtype=float)
    elif preset is None:
        desired = FormationSpec.regular_polygon(n).desired
    else:
        reader.fail("formation", "preset", f"unknown preset {preset!r}")
    if reader.has("formation", "initial"):
        initial = _matrix(reader, "formation", "initial")
    elif default_init is not None:
        initial = np.asarray(fx[default_init], dtype=float)
    else:
        reader.fail("formation", "initial", f"no bundled initial state for {n} agents; give one")
    for key, arr in (("desired", desired), ("initial", initial)):
        if arr.shape[0] != n:
            reader.fail("formation", key, f"has {arr.shape[0]} agents, topology has {n}")
    return FormationSpec(desired), initial


def _section_cfg(reader: _Reader, section: str, base):
    kwargs = {}
    for f in fields(base):
        if f.name == "seed" or not reader.has(section, f.name):
            continue
        cur = getattr(base, f.name)
        cast = bool if isinstance(cur, bool) else type(cur) if cur is not None else int
        if section == "optimizer" and f.name == "r":
            text = reader.raw(section, "r")
            try:
                vals = tuple(float(v) for v in text.replace(",", " ").split())
            except ValueError:
                reader.fail(section, "r", f"cannot read {text!r}")
            kwargs["r"] = vals[0] if len(vals) == 1 else vals
            continue
        kwargs[f.name] = reader.typed(section, f.name, cast)
    try:
        return replace(base, **kwargs)
    except (TypeError, ValueError) as exc:
        key = next(iter(kwargs), "")
        reader.fail(section, key if len(kwargs) == 1 else "", str(exc))


def parse(text: str, source: str = "<config>", base_dir: Path | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    reader = _Reader(parser, _key_lines(text), source)

    for section in parser.sections():
        if section not in SECTIONS:
            reader.fail(section, "", f"unknown section; expected one of {sorted(SECTIONS)}")
        for key in parser.options(section):
            if key not in SECTIONS[section]:
                reader.fail(section, key, "unknown key")

    seed = reader.typed("experiment", "seed", int)
    if seed is None:
        reader.fail("experiment", "seed", "a seed is required")
    algorithm = reader.raw("experiment", "algorithm", "proposed")
    if algorithm not in ALGORITHMS:
        reader.fail("experiment", "algorithm", f"choose from {', '.join(ALGORITHMS)}")
    scale = reader.raw("experiment", "scale", "desk")
    if scale not in ("desk", "full"):
        reader.fail("experiment", "scale", "choose desk or full")
    full = scale == "full"

    name, schedule = _schedule(reader)
    spec, initial = _formation(reader, schedule.n_agents)

    planner = PlannerConfig(n_queries=FULL_SCALE["n_queries"] if full else 50)
    optimizer = OptimizerConfig(n_iters=FULL_SCALE["n_iters"] if full else 500)
    horizon = reader.typed("experiment", "horizon", int, FULL_SCALE["horizon"] if full else 30)
    gamma = reader.typed("experiment", "gamma", float, 1.0)
    out = reader.raw("experiment", "out")
    out_dir = None
    if out is not None:
        out_dir = Path(out)
        if base_dir is not None and not out_dir.is_absolute():
            out_dir = base_dir / out_dir
    try:
        return ExperimentConfig(
            schedule=schedule, formation=spec, initial=initial, seed=seed, algorithm=algorithm,
            topology_name=name, horizon=horizon, gamma=gamma,
            planner=_section_cfg(reader, "planner", planner),
            fit=_section_cfg(reader, "fit", FitConfig()),
            optimizer=_section_cfg(reader, "optimizer", optimizer),
            openloop=_section_cfg(reader, "openloop", OpenLoopConfig()),
            ordered_pairs=reader.typed("experiment", "ordered_pairs", bool, False),
            out_dir=out_dir,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        reader.fail("experiment", "", str(exc))


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    return parse(text, str(path), path.parent)
