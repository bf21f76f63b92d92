"""Experiment configuration: TOML loading, strict schema checks and
builders that turn the instance spec into distributions and classes."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Any, Optional

import tomli

from ..distributions import (
    FinitePoints,
    FlipProb,
    PowerLaw,
    Realizable,
    ThresholdFamily,
    TwoPoint,
    Uniform,
    two_point_class,
)
from ..hypothesis import FiniteClass, Table, Thresholds, all_tables
from ..procedures import MultisourceInstance, ProcedureConfig

EXPERIMENTS = ("rates", "pooling", "asymmetry", "adaptivity", "validate", "bounds", "pack")
PROCEDURES = ("target_erm", "pooled", "oracle", "rank_based")
FORMATS = ("csv", "json", "svg")


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


# Schema: a dict maps allowed keys to either a type tuple or a nested schema.
NUM = (int, float)
INT = (int,)
STR = (str,)
BOOL = (bool,)
LIST = (list,)
ANY_TABLE = (dict,)

_NOISE = {
    "realizable": {"kind": STR},
    "flip": {"kind": STR, "q": NUM},
    "margin": {"kind": STR, "scale": NUM, "exponent": NUM},
}
_DIST = {
    "uniform": {"family": STR, "a": NUM, "b": NUM, "cut": NUM, "side": STR, "noise": ANY_TABLE},
    "powerlaw": {"family": STR, "rho": NUM, "b": NUM, "cut": NUM, "side": STR, "noise": ANY_TABLE},
    "two_point": {"family": STR, "mass_x1": NUM, "eta_x1": NUM, "eta_x0": NUM},
    "finite": {"family": STR, "masses": LIST, "etas": LIST},
}
_CLASS = {
    "thresholds": {"kind": STR, "domain": LIST, "positive_side": STR},
    "two_point": {"kind": STR},
    "tables": {"kind": STR, "support_size": INT},
    "finite": {"kind": STR, "support_size": INT, "members": LIST},
}
_SOURCE = {"count": INT, "n": INT, "rho": NUM, "dist": ANY_TABLE}

SCHEMA = {
    "experiment": STR,
    "seed": INT,
    "replications": INT,
    "threads": INT,
    "sweep": {"axis": STR, "values": LIST, "start": INT, "stop": INT, "fit_against": STR},
    "instance": {
        "beta": NUM,
        "C_beta": NUM,
        "C_rho": NUM,
        "target_n": INT,
        "class": ANY_TABLE,
        "target": ANY_TABLE,
        "sources": LIST,
    },
    "procedures": {"list": LIST, "C0": NUM, "delta": NUM, "fallback": STR},
    "output": {"dir": STR, "formats": LIST, "name": STR},
    "asymmetry": {"beta": NUM, "n_P": INT, "n_D": INT, "c2": NUM, "swap_target": BOOL},
    "adaptivity": {
        "beta": NUM,
        "n": INT,
        "n_D": INT,
        "N_P": INT,
        "N_Q": INT,
        "c0": NUM,
        "c1": NUM,
        "hard_N_P": INT,
        "C0": NUM,
        "delta": NUM,
        "rank_reps": INT,
        "stats_reps": INT,
        "strict": BOOL,
    },
    "query": {
        "rhos": LIST,
        "sizes": LIST,
        "beta": NUM,
        "vc": INT,
        "delta": NUM,
        "C_beta": NUM,
        "C_rho": NUM,
        "C0": NUM,
        "alpha": NUM,
    },
    "pack": {"d": INT, "max_size": INT},
}


def _line_of(text: str, key: str) -> Optional[int]:
    pats = [
        re.compile(rf"^\s*\[\[?\s*([\w.]*\.)?{re.escape(key)}\s*\]\]?"),
        re.compile(rf"(^|[\s{{,]){re.escape(key)}\s*="),
    ]
    for i, line in enumerate(text.splitlines(), start=1):
        code = line.split("#", 1)[0]
        if any(p.search(code) for p in pats):
            return i
    return None


class _Checker:
    def __init__(self, text: str):
        self.text = text

    def fail(self, message: str, key: str):
        raise ConfigError(message, _line_of(self.text, key))

    def check(self, data: dict, schema: dict, where: str):
        for key, value in data.items():
            if key not in schema:
                self.fail(f"unknown key '{key}' in {where}", key)
            spec = schema[key]
            if isinstance(spec, dict):
                if not isinstance(value, dict):
                    self.fail(f"'{key}' must be a table", key)
                self.check(value, spec, f"[{key}]" if where == "top level" else f"{where}.{key}")
            elif isinstance(value, bool) and bool not in spec:
                self.fail(f"'{key}' in {where} has the wrong type", key)
            elif not isinstance(value, spec):
                self.fail(f"'{key}' in {where} has the wrong type", key)

    def variant(self, data: dict, variants: dict, tag: str, where: str) -> str:
        kind = data.get(tag)
        if kind not in variants:
            self.fail(f"{where} needs {tag} in {sorted(variants)}", tag)
        self.check(data, variants[kind], where)
        return kind


def _need(checker: _Checker, data: dict, key: str, where: str):
    if key not in data:
        raise ConfigError(f"missing required key '{key}' in {where}")
    return data[key]


def _noise(checker: _Checker, spec: Optional[dict], n: Optional[int]):
    if spec is None:
        return Realizable()
    kind = checker.variant(spec, _NOISE, "kind", "noise")
    if kind == "realizable":
        return Realizable()
    if kind == "flip":
        return FlipProb(float(_need(checker, spec, "q", "noise")))
    if n is None or n < 1:
        raise ConfigError("margin noise needs a positive sweep value")
    scale = float(spec.get("scale", 1.0))
    gamma = min(1.0, scale * float(n) ** (-float(spec.get("exponent", 0.5))))
    return FlipProb(0.5 * (1.0 - gamma))


def build_distribution(checker: _Checker, spec: dict, n: Optional[int] = None):
    fam = checker.variant(spec, _DIST, "family", "distribution")
    try:
        if fam == "uniform":
            return ThresholdFamily(
                Uniform(float(spec.get("a", 0.0)), float(spec.get("b", 1.0))),
                float(_need(checker, spec, "cut", "distribution")),
                _noise(checker, spec.get("noise"), n),
                spec.get("side", "left"),
            )
        if fam == "powerlaw":
            return ThresholdFamily(
                PowerLaw(float(_need(checker, spec, "rho", "distribution")), float(spec.get("b", 1.0))),
                float(spec.get("cut", 0.0)),
                _noise(checker, spec.get("noise"), n),
                spec.get("side", "left"),
            )
        if fam == "two_point":
            return TwoPoint(float(spec["mass_x1"]), float(spec["eta_x1"]), float(spec.get("eta_x0", 1.0)))
        return FinitePoints(tuple(spec["masses"]), tuple(spec["etas"]))
    except KeyError as exc:
        raise ConfigError(f"distribution is missing '{exc.args[0]}'") from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid distribution: {exc}") from None


def build_class(checker: _Checker, spec: dict):
    kind = checker.variant(spec, _CLASS, "kind", "class")
    try:
        if kind == "thresholds":
            return Thresholds(tuple(spec.get("domain", (0.0, 1.0))), spec.get("positive_side", "left"))
        if kind == "two_point":
            return two_point_class()
        if kind == "tables":
            return all_tables(int(spec["support_size"]))
        return FiniteClass(int(spec["support_size"]), tuple(Table(tuple(m)) for m in spec["members"]))
    except KeyError as exc:
        raise ConfigError(f"class is missing '{exc.args[0]}'") from None
    except ValueError as exc:
        raise ConfigError(f"invalid class: {exc}") from None


@dataclass(frozen=True)
class Sweep:
    axis: str
    values: tuple
    fit_against: str = "sweep"


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    replications: int
    threads: int
    data: dict
    text: str = ""
    sweep: Optional[Sweep] = None
    formats: tuple = ("csv",)
    out_dir: str = "out"
    name: str = ""
    force: bool = False
    procedure_list: tuple = ()
    procedure_config: ProcedureConfig = field(default_factory=ProcedureConfig)

    @property
    def checker(self) -> _Checker:
        return _Checker(self.text)

    def canonical(self) -> dict:
        """Everything that determines the numbers; threads and paths excluded."""
        d = {k: v for k, v in self.data.items() if k not in ("threads", "output")}
        d["experiment"] = self.experiment
        d["seed"] = self.seed
        d["replications"] = self.replications
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def section(self, name: str) -> dict:
        return dict(self.data.get(name, {}))

    # instance construction -------------------------------------------------
    def instance(self, sweep_value: Optional[int] = None) -> MultisourceInstance:
        inst = self.data.get("instance")
        if inst is None:
            raise ConfigError("this experiment needs an [instance] table")
        ch = self.checker
        axis = self.sweep.axis if self.sweep else None
        cls = build_class(ch, _need(ch, inst, "class", "[instance]"))
        target_n = int(inst.get("target_n", 0))
        if axis == "n" and sweep_value is not None:
            target_n = int(sweep_value)
        tasks, sizes, rhos = [], [], []
        for gi, src in enumerate(inst.get("sources", [])):
            if not isinstance(src, dict):
                raise ConfigError("each [[instance.sources]] entry must be a table", _line_of(self.text, "sources"))
            ch.check(src, _SOURCE, "[[instance.sources]]")
            count = int(src.get("count", 1))
            if axis == "N" and gi == 0 and sweep_value is not None:
                count = int(sweep_value)
            n = int(_need(ch, src, "n", "[[instance.sources]]"))
            dist = build_distribution(ch, _need(ch, src, "dist", "[[instance.sources]]"), sweep_value)
            tasks += [dist] * count
            sizes += [n] * count
            rhos += [float(src.get("rho", 1.0))] * count
        target = build_distribution(ch, _need(ch, inst, "target", "[instance]"), sweep_value)
        try:
            return MultisourceInstance(
                tuple(tasks) + (target,),
                tuple(sizes) + (target_n,),
                tuple(rhos) + (1.0,),
                float(inst.get("beta", 1.0)),
                float(inst.get("C_beta", 2.0)),
                float(inst.get("C_rho", 2.0)),
                cls,
            )
        except ValueError as exc:
            raise ConfigError(f"invalid instance: {exc}") from None


def _sweep(ch: _Checker, data: dict) -> Optional[Sweep]:
    sw = data.get("sweep")
    if sw is None:
        return None
    axis = sw.get("axis", "n")
    if axis not in ("n", "N"):
        ch.fail("sweep axis must be 'n' or 'N'", "axis")
    if "values" in sw:
        values = sw["values"]
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in values):
            ch.fail("sweep values must be integers", "values")
    elif "start" in sw and "stop" in sw:
        values, v = [], int(sw["start"])
        if v < 1:
            ch.fail("sweep start must be >= 1", "start")
        while v <= int(sw["stop"]):
            values.append(v)
            v *= 2
    else:
        raise ConfigError("[sweep] needs 'values' or 'start'/'stop'", _line_of(ch.text, "sweep"))
    if not values or any(b <= a for a, b in zip(values, values[1:])):
        ch.fail("sweep grid must be non-empty and strictly increasing", "values" if "values" in sw else "start")
    fit = sw.get("fit_against", "sweep")
    if fit not in ("sweep", "total"):
        ch.fail("fit_against must be 'sweep' or 'total'", "fit_against")
    return Sweep(axis, tuple(int(v) for v in values), fit)


def parse_config(text: str, experiment: Optional[str] = None) -> ExperimentConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"malformed config: {exc}", int(m.group(1)) if m else None) from None
    ch = _Checker(text)
    ch.check(data, SCHEMA, "top level")
    declared = data.get("experiment")
    if declared is not None and declared not in EXPERIMENTS:
        ch.fail(f"experiment must be one of {EXPERIMENTS}", "experiment")
    if experiment is not None and declared is not None and declared != experiment:
        ch.fail(f"config declares experiment '{declared}' but '{experiment}' was requested", "experiment")
    exp = experiment or declared
    if exp is None:
        raise ConfigError("no experiment given")
    seed = int(data.get("seed", 0))
    if not 0 <= seed < 2**64:
        ch.fail("seed must be an unsigned 64-bit integer", "seed")
    reps = int(data.get("replications", 100))
    if reps < 1:
        ch.fail("replications must be >= 1", "replications")
    threads = int(data.get("threads", 1))
    if threads < 1:
        ch.fail("threads must be >= 1", "threads")
    out = data.get("output", {})
    formats = tuple(out.get("formats", ["csv"]))
    if any(f not in FORMATS for f in formats):
        ch.fail(f"output formats must be drawn from {FORMATS}", "formats")
    procs = data.get("procedures", {})
    plist = tuple(procs.get("list", ["pooled"]))
    if any(p not in PROCEDURES for p in plist):
        ch.fail(f"procedures must be drawn from {PROCEDURES}", "list")
    try:
        pconf = ProcedureConfig(float(procs.get("C0", 1.0)), float(procs.get("delta", 0.1)), procs.get("fallback", "pooled"))
    except ValueError as exc:
        raise ConfigError(str(exc), _line_of(text, "procedures")) from None
    cfg = ExperimentConfig(
        experiment=exp,
        seed=seed,
        replications=reps,
        threads=threads,
        data=data,
        text=text,
        sweep=_sweep(ch, data),
        formats=formats,
        out_dir=out.get("dir", "out"),
        name=out.get("name", exp),
        procedure_list=plist,
        procedure_config=pconf,
    )
    if "instance" in data:
        # surface instance errors now rather than mid-run
        cfg.instance(cfg.sweep.values[0] if cfg.sweep else None)
    return cfg


def load_config(path: str, experiment: Optional[str] = None) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, experiment)
