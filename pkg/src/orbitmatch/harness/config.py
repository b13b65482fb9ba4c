"""Experiment configuration in a sectioned ``key = value`` text format.

Example::

    [experiment]
    kind = lcs
    seed = 1
    trials = 8

    [source]
    type = iid
    probs = 0.5, 0.5

    [schedule]
    n_min = 1024
    n_max = 4194304
    ratio = 2

    [params]
    k = 10

    [tolerance]
    rel = 0.15

``[source]`` describes a stochastic process (``iid``, ``markov``,
``renewal``) or a map (``expanding``, ``ladder``, ``beta``, ``gauss``,
``rotation``, ``product``, plus the reference cloud ``uniform``).
Values stay as text until the pipeline needs them, which keeps
``parse(serialize(cfg)) == cfg`` exact.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from ..core import Metric, geometric_schedule
from ..errors import ConfigError, OrbitMatchError
from ..orbits import (
    Beta,
    DyadicLadder,
    ExpandingInteger,
    Gauss,
    ProductExpanding,
    Rotation,
)
from ..processes import IID, BinaryRenewal, Markov
from ..rotation import design_theta, golden_theta, sqrt2_theta, theta_from_hex

KINDS = ("lcs", "mindist", "dimension", "entropy", "rotation", "bridge", "duality", "moments")
PROCESS_TYPES = ("iid", "markov", "renewal")
MAP_TYPES = ("expanding", "ladder", "beta", "gauss", "rotation", "product", "uniform")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    source: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    tolerance: dict = field(default_factory=dict)
    seed: int = 0
    trials: int = 1
    output: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        for name in ("source", "schedule", "params", "tolerance"):
            section = {str(k): str(v) for k, v in getattr(self, name).items()}
            object.__setattr__(self, name, dict(sorted(section.items())))

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    # -- typed accessors -------------------------------------------------

    def param(self, key, default=None, cast=str):
        raw = self.params.get(key)
        if raw is None:
            return default
        try:
            return cast(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for params.{key}: {raw!r}") from exc

    def tol(self, key, default):
        raw = self.tolerance.get(key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for tolerance.{key}: {raw!r}") from exc

    def build_schedule(self):
        try:
            n_min = int(self.schedule.get("n_min", 16))
            n_max = int(self.schedule["n_max"])
            ratio = float(self.schedule.get("ratio", 2.0))
        except KeyError as exc:
            raise ConfigError("schedule.n_max is required") from exc
        except ValueError as exc:
            raise ConfigError(f"bad schedule: {exc}") from exc
        try:
            return geometric_schedule(n_min, n_max, ratio)
        except OrbitMatchError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def source_type(self) -> str:
        t = self.source.get("type")
        if t is None:
            raise ConfigError("source.type is required")
        return t

    def metric(self) -> Metric:
        name = self.source.get("metric", "max")
        try:
            return {"max": Metric.TORUS_MAX, "euclid": Metric.TORUS_EUCLID}[name]
        except KeyError:
            raise ConfigError(f"unknown metric {name!r}; use max or euclid") from None

    def digest(self) -> str:
        return hashlib.sha256(serialize(self).encode("utf-8")).hexdigest()


def _floats(text):
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _matrix(text):
    rows = [r for r in text.split(";") if r.strip()]
    return [[float(v) for v in r.replace(",", " ").split()] for r in rows]


def process_spec(cfg: ExperimentConfig):
    s = cfg.source
    t = cfg.source_type
    try:
        if t == "iid":
            return IID(tuple(_floats(s["probs"])))
        if t == "markov":
            init = s.get("initial")
            return Markov(tuple(map(tuple, _matrix(s["transition"]))),
                          tuple(_floats(init)) if init else None)
        if t == "renewal":
            return BinaryRenewal(tuple(_floats(s.get("q", ""))), float(s["tail"]))
    except KeyError as exc:
        raise ConfigError(f"source.{exc.args[0]} is required for {t}") from exc
    except (ValueError, OrbitMatchError) as exc:
        raise ConfigError(f"invalid {t} source: {exc}") from exc
    raise ConfigError(f"source type {t!r} is not a stochastic process")


def parse_theta(text: str) -> int:
    text = text.strip()
    if text == "golden":
        return golden_theta()
    if text == "sqrt2":
        return sqrt2_theta()
    if text.startswith("eta:"):
        return design_theta(float(text[4:]))[0]
    return theta_from_hex(text)


def map_spec(cfg: ExperimentConfig):
    s = cfg.source
    t = cfg.source_type
    try:
        if t == "expanding":
            return ExpandingInteger(int(s.get("m", 2)))
        if t == "ladder":
            return DyadicLadder()
        if t == "beta":
            return Beta(float(s["beta"]))
        if t == "gauss":
            return Gauss()
        if t == "rotation":
            return Rotation(parse_theta(s["theta"]))
        if t == "product":
            return ProductExpanding(tuple(int(v) for v in _floats(s["factors"])))
        if t == "uniform":
            return None
    except KeyError as exc:
        raise ConfigError(f"source.{exc.args[0]} is required for {t}") from exc
    except (ValueError, OrbitMatchError) as exc:
        raise ConfigError(f"invalid {t} source: {exc}") from exc
    raise ConfigError(f"source type {t!r} is not a map")


# ---------------------------------------------------------------------------


def serialize(cfg: ExperimentConfig) -> str:
    lines = ["[experiment]", f"kind = {cfg.kind}", f"seed = {cfg.seed}",
             f"trials = {cfg.trials}"]
    if cfg.output:
        lines.append(f"output = {cfg.output}")
    for name in ("source", "schedule", "params", "tolerance"):
        section = getattr(cfg, name)
        if not section:
            continue
        lines.append("")
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {v}" for k, v in section.items())
    return "\n".join(lines) + "\n"


def parse(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                   inline_comment_prefixes=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    if not cp.has_section("experiment"):
        raise ConfigError("missing [experiment] section")
    exp = cp["experiment"]
    unknown = set(cp.sections()) - {"experiment", "source", "schedule", "params", "tolerance"}
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    try:
        seed = int(exp.get("seed", "0"), 0)
        trials = int(exp.get("trials", "1"))
    except ValueError as exc:
        raise ConfigError(f"bad [experiment] value: {exc}") from exc
    if "kind" not in exp:
        raise ConfigError("experiment.kind is required")

    def section(name):
        return dict(cp[name]) if cp.has_section(name) else {}

    return ExperimentConfig(exp["kind"], section("source"), section("schedule"),
                            section("params"), section("tolerance"), seed, trials,
                            exp.get("output", ""))


def load(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# desk-scale defaults, one per kind

DEFAULTS = {
    "lcs": ExperimentConfig(
        "lcs", {"type": "iid", "probs": "0.5, 0.5"},
        {"n_min": "1024", "n_max": str(2**22), "ratio": "2"}, {}, {"rel": "0.15"},
        seed=1, trials=8),
    "mindist": ExperimentConfig(
        "mindist", {"type": "expanding", "m": "2"},
        {"n_min": "16", "n_max": "100000", "ratio": "2"}, {}, {"lo": "1.6", "hi": "2.4"},
        seed=1, trials=8),
    "dimension": ExperimentConfig(
        "dimension", {"type": "uniform", "dim": "1"},
        {"n_min": "16", "n_max": "10000"}, {}, {"abs": "0.1"}, seed=1, trials=1),
    "entropy": ExperimentConfig(
        "entropy", {"type": "iid", "probs": "0.5, 0.5"},
        {"n_min": "16", "n_max": "1000000"}, {"k": "10", "ks": "2, 4, 6, 8, 10, 12"},
        {"rel": "0.05"}, seed=1, trials=1),
    "rotation": ExperimentConfig(
        "rotation", {"type": "rotation", "theta": "golden"},
        {"n_min": "16", "n_max": "1000000"}, {},
        {"liminf_lo": "0.8", "liminf_hi": "1.2", "limsup_lo": "0.8", "limsup_hi": "1.2"},
        seed=1, trials=8),
    "bridge": ExperimentConfig(
        "bridge", {"type": "iid", "probs": "0.5, 0.5"},
        {"n_min": "16", "n_max": "256", "ratio": "4"}, {}, {}, seed=1, trials=100),
    "duality": ExperimentConfig(
        "duality", {"type": "rotation", "theta": "golden"},
        {"n_min": "16", "n_max": "1024", "ratio": "4"}, {"radii": "0.1, 0.01, 0.001"}, {},
        seed=1, trials=20),
    "moments": ExperimentConfig(
        "moments", {"type": "expanding", "m": "2"},
        {"n_min": "16", "n_max": "10000"}, {"radii": "0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001"},
        {}, seed=1, trials=1),
}


def default_config(kind: str) -> ExperimentConfig:
    if kind not in DEFAULTS:
        raise ConfigError(f"no default config for kind {kind!r}")
    return DEFAULTS[kind]


def float_list(text: str) -> np.ndarray:
    return np.array(_floats(text), dtype=np.float64)
