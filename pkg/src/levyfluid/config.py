"""YAML experiment configuration.

A config has three blocks::

    model:
      drift: 0.0
      jump_rate: 0.5
      jump_law: {family: exponential, rate: 1.0}
      service_rate: 1.0
      failure_rate: 0.2
      repair_law: {family: exponential, rate: 2.0}
      vacation_mode: direct_eta
      vacation_law: {family: deterministic, value: 1.0}
      initial_workload: 0.0
    run:
      seed: 1
      horizon: 1.0e+4
    output:
      directory: out

Unknown keys, wrong types and unstable models are reported with the line
number of the offending entry.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .analytics import DEFAULT_GRID
from .levy_core import JumpDistribution, NetInputModel
from .queue_sim import VACATION_MODES, QueueModel

LAW_KEYS = {
    "exponential": ("rate",),
    "deterministic": ("value",),
    "erlang": ("shape", "rate"),
    "hyperexponential": ("weights", "rates"),
}
MODEL_KEYS = (
    "drift",
    "jump_rate",
    "jump_law",
    "service_rate",
    "failure_rate",
    "repair_law",
    "vacation_mode",
    "vacation_law",
    "initial_workload",
)
RUN_KEYS = (
    "seed",
    "horizon",
    "warmup",
    "samples",
    "spacing",
    "replications",
    "theta_grid",
    "x_grid",
    "embedding",
    "budget",
)
OUTPUT_KEYS = ("directory", "formats")
FORMATS = ("json", "csv", "txt")
EMBEDDINGS = ("simulate", "poisson")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with ``path:line:``."""


@dataclass(frozen=True)
class RunConfig:
    seed: int
    horizon: float = 1e4
    warmup: float | None = None
    samples: int = 10_000
    spacing: float | None = None
    replications: int = 10_000
    theta_grid: tuple = tuple(DEFAULT_GRID.tolist())
    x_grid: tuple | None = None
    embedding: str = "simulate"
    budget: str = "default"


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    formats: tuple = ("json", "csv", "txt")


@dataclass(frozen=True)
class ExperimentConfig:
    model: QueueModel
    run: RunConfig
    output: OutputConfig
    config_hash: str
    source: str = field(default="<string>", compare=False)

    def with_seed(self, seed):
        return replace(self, run=replace(self.run, seed=int(seed)))

    def header(self):
        return f"config_hash={self.config_hash} seed={self.run.seed}"


class _Reader:
    def __init__(self, text, source):
        self.source = source
        self.loader = yaml.SafeLoader(text)

    def fail(self, node, message):
        line = node.start_mark.line + 1 if node is not None else 1
        raise ConfigError(f"{self.source}:{line}: {message}")

    def value(self, node):
        return self.loader.construct_object(node, deep=True)

    def mapping(self, node, allowed, where):
        if not isinstance(node, yaml.MappingNode):
            self.fail(node, f"{where} must be a mapping")
        out = {}
        for key_node, value_node in node.value:
            key = self.value(key_node)
            if key not in allowed:
                self.fail(key_node, f"unknown key {key!r} in {where}; allowed: {', '.join(allowed)}")
            if key in out:
                self.fail(key_node, f"duplicate key {key!r} in {where}")
            out[key] = value_node
        return out

    def number(self, node, name, positive=False, nonnegative=False):
        raw = self.value(node)
        try:
            # YAML 1.1 reads "1e4" as a string, so accept numeric strings
            if isinstance(raw, bool):
                raise TypeError
            val = float(raw)
        except (TypeError, ValueError):
            self.fail(node, f"{name} must be a number, got {raw!r}")
        if not np.isfinite(val):
            self.fail(node, f"{name} must be finite")
        if positive and not val > 0:
            self.fail(node, f"{name} must be > 0, got {val}")
        if nonnegative and not val >= 0:
            self.fail(node, f"{name} must be >= 0, got {val}")
        return val

    def integer(self, node, name, minimum=None):
        val = self.number(node, name)
        if val != int(val):
            self.fail(node, f"{name} must be an integer, got {val}")
        if minimum is not None and val < minimum:
            self.fail(node, f"{name} must be >= {minimum}, got {int(val)}")
        return int(val)

    def numbers(self, node, name, **kw):
        if not isinstance(node, yaml.SequenceNode) or not node.value:
            self.fail(node, f"{name} must be a non-empty list of numbers")
        return tuple(self.number(item, name, **kw) for item in node.value)

    def choice(self, node, name, options):
        val = self.value(node)
        if val not in options:
            self.fail(node, f"{name} must be one of {', '.join(options)}, got {val!r}")
        return val

    def law(self, node, name):
        if not isinstance(node, yaml.MappingNode):
            self.fail(node, f"{name} must be a mapping with a 'family' key")
        family_node = next((v for k, v in node.value if self.value(k) == "family"), None)
        if family_node is None:
            self.fail(node, f"{name} needs a 'family' key ({', '.join(LAW_KEYS)})")
        family = self.choice(family_node, f"{name}.family", tuple(LAW_KEYS))
        keys = self.mapping(node, ("family",) + LAW_KEYS[family], name)
        missing = [k for k in LAW_KEYS[family] if k not in keys]
        if missing:
            self.fail(node, f"{name} ({family}) is missing {', '.join(missing)}")
        try:
            if family == "exponential":
                return JumpDistribution.exponential(self.number(keys["rate"], f"{name}.rate", positive=True))
            if family == "deterministic":
                return JumpDistribution.deterministic(self.number(keys["value"], f"{name}.value", positive=True))
            if family == "erlang":
                return JumpDistribution.erlang(
                    self.integer(keys["shape"], f"{name}.shape", minimum=1),
                    self.number(keys["rate"], f"{name}.rate", positive=True),
                )
            return JumpDistribution.hyperexponential(
                self.numbers(keys["weights"], f"{name}.weights", nonnegative=True),
                self.numbers(keys["rates"], f"{name}.rates", positive=True),
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            self.fail(node, f"{name}: {exc}")


def _parse_model(r, node):
    keys = r.mapping(node, MODEL_KEYS, "model")
    for required in ("jump_rate", "service_rate"):
        if required not in keys:
            r.fail(node, f"model block is missing {required}")

    def num(key, default, **kw):
        return r.number(keys[key], key, **kw) if key in keys else default

    jump_rate = num("jump_rate", 0.0, nonnegative=True)
    jump_law = r.law(keys["jump_law"], "jump_law") if "jump_law" in keys else None
    if jump_rate > 0 and jump_law is None:
        r.fail(node, "jump_law is required when jump_rate > 0")
    try:
        net = NetInputModel(
            drift=num("drift", 0.0, nonnegative=True),
            jump_rate=jump_rate,
            jump_law=jump_law if jump_rate > 0 else None,
            service_rate=num("service_rate", None, positive=True),
        )
    except ValueError as exc:
        r.fail(node, str(exc))
    mode = r.choice(keys["vacation_mode"], "vacation_mode", VACATION_MODES) if "vacation_mode" in keys else "direct_eta"
    try:
        return QueueModel(
            net,
            failure_rate=num("failure_rate", 0.0, nonnegative=True),
            repair_law=r.law(keys["repair_law"], "repair_law") if "repair_law" in keys else None,
            vacation_mode=mode,
            vacation_law=r.law(keys["vacation_law"], "vacation_law") if "vacation_law" in keys else None,
            initial_workload=num("initial_workload", 0.0, nonnegative=True),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        r.fail(node, str(exc))


def _parse_run(r, node):
    keys = r.mapping(node, RUN_KEYS, "run")
    if "seed" not in keys:
        r.fail(node, "run.seed is mandatory (no wall-clock seeding)")
    kw = {"seed": r.integer(keys["seed"], "seed", minimum=0)}
    for key in ("horizon",):
        if key in keys:
            kw[key] = r.number(keys[key], key, nonnegative=True)
    for key in ("warmup", "spacing"):
        if key in keys and r.value(keys[key]) is not None:
            kw[key] = r.number(keys[key], key, nonnegative=True)
    for key in ("samples", "replications"):
        if key in keys:
            kw[key] = r.integer(keys[key], key, minimum=0)
    if "theta_grid" in keys:
        kw["theta_grid"] = r.numbers(keys["theta_grid"], "theta_grid", positive=True)
    if "x_grid" in keys:
        kw["x_grid"] = r.numbers(keys["x_grid"], "x_grid", positive=True)
    if "embedding" in keys:
        kw["embedding"] = r.choice(keys["embedding"], "embedding", EMBEDDINGS)
    if "budget" in keys:
        kw["budget"] = r.choice(keys["budget"], "budget", ("smoke", "default", "thorough"))
    return RunConfig(**kw)


def _parse_output(r, node):
    if node is None:
        return OutputConfig()
    keys = r.mapping(node, OUTPUT_KEYS, "output")
    kw = {}
    if "directory" in keys:
        kw["directory"] = str(r.value(keys["directory"]))
    if "formats" in keys:
        fnode = keys["formats"]
        if not isinstance(fnode, yaml.SequenceNode):
            r.fail(fnode, "formats must be a list")
        kw["formats"] = tuple(r.choice(item, "formats", FORMATS) for item in fnode.value)
    return OutputConfig(**kw)


def parse_config(text, source="<string>"):
    """Parse config text into an :class:`ExperimentConfig`."""
    r = _Reader(text, source)
    try:
        root = r.loader.get_single_node()
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        raise ConfigError(f"{source}:{line}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    if root is None:
        raise ConfigError(f"{source}:1: empty config")
    blocks = r.mapping(root, ("model", "run", "output"), "config")
    for required in ("model", "run"):
        if required not in blocks:
            r.fail(root, f"missing {required} block")
    model = _parse_model(r, blocks["model"])
    run = _parse_run(r, blocks["run"])
    output = _parse_output(r, blocks.get("output"))
    digest = hashlib.sha256(text.encode()).hexdigest()[:16]
    return ExperimentConfig(model, run, output, digest, source)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, str(path))

