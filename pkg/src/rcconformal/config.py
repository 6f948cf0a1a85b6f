"""TOML run configuration with line-anchored validation errors."""

from __future__ import annotations

import hashlib
import json
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import ColumnSchema, DataError
from .learners import LearnerError
from .nuisance import NuisanceSpec
from .pipeline import PipelineConfig
from .quantile_estimators import METHODS
from .scores import VARIANTS
from .simulation import DgpConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the file and line when known."""


SECTIONS = {
    "data": {"outcome", "treatment", "source", "v", "u", "row_id", "levels"},
    "run": {"alpha", "methods", "scores", "fractions", "seed", "plugin_grid", "plugin_refine"},
    "learners": {"preset", "trim", "g", "kappa", "mu", "eta", "q", "m", "quantile"},
    "simulate": {
        "n", "k_u", "source_rate", "reps", "seed", "workers", "p_v", "p_u", "k_v", "noise",
        "nuisances", "ite", "out", "panels", "manifest",
    },
}


@dataclass(frozen=True)
class SimulateConfig:
    n: tuple = (5000,)
    k_u: tuple = (10,)
    source_rate: tuple = (0.9,)
    reps: int = 200
    seed: int = 0
    workers: int = 1
    p_v: int = 15
    p_u: int = 15
    k_v: int = 5
    noise: str = "sd"
    nuisances: str = "learned"
    ite: bool = False
    out: str = "results.csv"
    panels: str = "results_panels.csv"
    manifest: str = "manifest.json"

    def dgp(self) -> DgpConfig:
        return DgpConfig(p_v=self.p_v, p_u=self.p_u, k_v=self.k_v, k_u=self.k_u[0], n=self.n[0],
                         target_source_rate=self.source_rate[0], noise=self.noise)


@dataclass(frozen=True)
class RunConfig:
    path: Optional[str]
    raw: dict
    schema: Optional[ColumnSchema] = None
    levels: Optional[tuple] = None
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    learners: NuisanceSpec = field(default_factory=NuisanceSpec)
    seed: int = 0
    simulate: Optional[SimulateConfig] = None

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True, default=str).encode()).hexdigest()


def _line(text: str, section: str, key: Optional[str] = None) -> Optional[int]:
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        head = re.match(r"^\[([^\]]+)\]", s)
        if head:
            current = head.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if current == section and key is not None and re.match(rf"^{re.escape(key)}\s*=", s):
            return i
    return None


class _Where:
    def __init__(self, path, text):
        self.path, self.text = path or "<config>", text

    def error(self, msg, section, key=None) -> ConfigError:
        line = _line(self.text, section, key)
        loc = f"{self.path}:{line}" if line else self.path
        what = f"[{section}]" + (f" {key}" if key else "")
        return ConfigError(f"{loc}: {what}: {msg}")


def parse_value(text: str) -> Any:
    """A TOML value from a command-line override; bare words are strings."""
    try:
        return tomllib.loads(f"x = {text}")["x"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, value = item.split("=", 1)
        section, key = dotted.strip().split(".", 1)
        raw.setdefault(section, {})[key] = parse_value(value.strip())
    return raw


def _tuple(x):
    return tuple(x) if isinstance(x, (list, tuple)) else (x,)


def load_config(path=None, text: Optional[str] = None, overrides=()) -> RunConfig:
    if text is None:
        if path is None:
            raise ConfigError("no configuration given")
        try:
            text = Path(path).read_text()
        except OSError as err:
            raise ConfigError(f"{path}: cannot read config: {err}") from err
    where = _Where(path, text)
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{where.path}: {err}") from err
    raw = apply_overrides(raw, overrides)

    for section, body in raw.items():
        if section not in SECTIONS:
            raise where.error("unknown section", section)
        if not isinstance(body, dict):
            raise where.error("must be a table", section)
        for key in body:
            if key not in SECTIONS[section]:
                raise where.error("unknown key", section, key)

    run = raw.get("run", {})
    alpha = run.get("alpha", 0.1)
    if not isinstance(alpha, (int, float)) or not 0 < alpha < 1:
        raise where.error(f"alpha must lie in (0, 1), got {alpha!r}", "run", "alpha")
    methods = _tuple(run.get("methods", ("weighted", "dml")))
    for m in methods:
        if m not in METHODS:
            raise where.error(f"unknown method {m!r}; expected one of {list(METHODS)}", "run", "methods")
    scores = _tuple(run.get("scores", VARIANTS))
    for s in scores:
        if s not in VARIANTS:
            raise where.error(f"unknown score type {s!r}; expected one of {list(VARIANTS)}", "run", "scores")
    fractions = _tuple(run.get("fractions", (0.5, 0.5)))
    if len(fractions) != 2 or not all(isinstance(f, (int, float)) and f > 0 for f in fractions) or sum(fractions) > 1 + 1e-12:
        raise where.error("fractions must be two positive numbers summing to at most 1", "run", "fractions")
    try:
        pipeline = PipelineConfig(alpha=float(alpha), methods=methods, scores=scores,
                                  fractions=tuple(float(f) for f in fractions),
                                  plugin_grid=int(run.get("plugin_grid", 50)),
                                  plugin_refine=int(run.get("plugin_refine", 0)))
    except ValueError as err:
        raise where.error(str(err), "run") from err

    try:
        learners = NuisanceSpec.from_dict(raw.get("learners", {}))
    except (LearnerError, KeyError, TypeError) as err:
        raise where.error(f"bad learner spec: {err}", "learners") from err
    lo, hi = learners.trim
    if not 0 < lo <= hi < 1:
        raise where.error("trim bounds must satisfy 0 < lo <= hi < 1", "learners", "trim")

    schema, levels = None, None
    if "data" in raw:
        d = raw["data"]
        for key in ("outcome", "treatment", "source", "v"):
            if key not in d:
                raise where.error("missing required key", "data", key)
        try:
            schema = ColumnSchema(outcome=d["outcome"], treatment=d["treatment"], source=d["source"],
                                  v=tuple(_tuple(d["v"])), u=tuple(_tuple(d.get("u", ()))), row_id=d.get("row_id"))
        except DataError as err:
            raise where.error(str(err), "data") from err
        if "levels" in d:
            levels = _tuple(d["levels"])

    sim = None
    if "simulate" in raw:
        s = raw["simulate"]
        try:
            sim = SimulateConfig(**{k: (_tuple(v) if k in ("n", "k_u", "source_rate") else v) for k, v in s.items()})
            for cfg_n in sim.n:
                for k in sim.k_u:
                    for rate in sim.source_rate:
                        DgpConfig(p_v=sim.p_v, p_u=sim.p_u, k_v=sim.k_v, k_u=int(k), n=int(cfg_n),
                                  target_source_rate=float(rate), noise=sim.noise)
        except (TypeError, ValueError) as err:
            raise where.error(str(err), "simulate") from err
        if sim.reps < 1:
            raise where.error("reps must be >= 1", "simulate", "reps")
        if sim.nuisances not in ("learned", "oracle"):
            raise where.error("nuisances must be 'learned' or 'oracle'", "simulate", "nuisances")

    return RunConfig(path=str(path) if path else None, raw=raw, schema=schema, levels=levels,
                     pipeline=pipeline, learners=learners, seed=int(run.get("seed", 0)), simulate=sim)
