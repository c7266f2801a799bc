"""Scenario configuration, validation and run manifests.

A config is one YAML document::

    scenario: weak-residual      # see SCENARIOS
    seed: 7                      # mandatory
    n: 2                         # dimension (<= 4 unless allow_large_n: true)
    k: 1                         # form degree, 0 <= k <= n
    fields:                      # role -> field spec (see the field schema)
      b: {name: random, seed: 3, scale: 0.5}
    time: {T: 0.5, steps: 128}
    n_paths: 64
    eps_list: [0.2, 0.1, 0.05, 0.025]
    output: out/weak             # overridden by --out, then KADVECT_OUT
    params: {}                   # scenario-specific options

Omitted optional keys take per-scenario defaults (see ``kadvect list``).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from . import __version__
from .registry import PRIMITIVES, FieldSpecError, build_form, build_vector_field, \
    referenced_primitives

SCENARIOS = ("calculus-identities", "commutator-sweep", "flow-convergence", "weak-residual", "kiw",
             "conservation", "counterexample", "noise-selection", "specializations")
REQUIRED = ("scenario", "seed")
KNOWN_KEYS = ("scenario", "seed", "n", "k", "fields", "time", "n_paths", "eps_list", "output",
              "params", "allow_large_n")
OUTPUT_ENV = "KADVECT_OUT"
MAX_N = 4
VECTOR_ROLES = ("b", "xi")

# per-scenario defaults for the optional top-level keys
DEFAULTS: dict[str, dict[str, Any]] = {
    "calculus-identities": {"n": 4, "k": None},
    "specializations": {"n": 3, "k": None},
    "commutator-sweep": {"n": 2, "k": 1, "eps_list": [0.2, 0.1, 0.05, 0.025]},
    "flow-convergence": {"n": 2, "k": None, "time": {"T": 1.0, "steps": 100}, "n_paths": 64,
                         "eps_list": [0.4, 0.2, 0.1, 0.05]},
    "weak-residual": {"n": 2, "k": 1, "time": {"T": 0.5, "steps": 128}, "n_paths": 64},
    "kiw": {"n": 2, "k": 1, "time": {"T": 0.5, "steps": 128}, "n_paths": 64},
    "conservation": {"n": 2, "k": 1, "time": {"T": 0.5, "steps": 128}, "n_paths": 64},
    "counterexample": {"n": 2, "k": 0},
    "noise-selection": {"n": 2, "k": None, "time": {"T": 1.0, "steps": 100}, "n_paths": 64,
                        "eps_list": [0.2, 0.1, 0.05, 0.025]},
}
# scenario-specific restrictions on (n, k)
SHAPE_LIMITS = {
    "counterexample": ("k = 0 and n <= 3 (scalar transport, polar ball quadrature)",
                       lambda n, k: k == 0 and n <= 3),
    "weak-residual": ("n <= 3 (tensor quadrature of the test form)", lambda n, k: n <= 3),
    "kiw": ("n <= 3 (tensor quadrature of the test form)", lambda n, k: n <= 3),
    "conservation": ("1 <= k <= n (a k-chain needs k >= 1)", lambda n, k: 1 <= k <= n),
    "commutator-sweep": ("n <= 3 (tensor quadrature of the test form)", lambda n, k: n <= 3),
}


class ConfigError(ValueError):
    """A config that cannot be run; ``diagnostics`` lists every problem found."""

    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


@dataclass
class ScenarioConfig:
    scenario: str
    seed: int
    n: int | None = None
    k: int | None = None
    fields: dict[str, Any] = field(default_factory=dict)
    time: dict[str, Any] = field(default_factory=dict)
    n_paths: int | None = None
    eps_list: list[float] | None = None
    output: str = "kadvect-out"
    params: dict[str, Any] = field(default_factory=dict)
    allow_large_n: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        """SHA-256 of the canonical JSON of everything that affects numeric output."""
        d = self.to_dict()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def param(self, key: str, default: Any) -> Any:
        return self.params.get(key, default)

    def resolved(self, key: str) -> Any:
        """``key`` from the config, falling back to the scenario default."""
        v = getattr(self, key)
        if v is None or (key == "time" and not v):
            return DEFAULTS[self.scenario].get(key)
        if key == "time":
            return {**DEFAULTS[self.scenario].get("time", {}), **v}
        return v


def _field_diagnostics(role: str, spec: Any, n: int | None, k: int | None) -> list[str]:
    out = []
    for name in referenced_primitives(spec):
        if name not in PRIMITIVES:
            out.append(f"fields.{role}: unknown primitive {name!r} (registry has "
                       f"{', '.join(PRIMITIVES)})")
    if out or n is None:
        return out
    try:
        if role.split("[")[0] in VECTOR_ROLES:
            build_vector_field(spec, n)
        else:
            build_form(spec, n, k if k is not None else 0)
    except FieldSpecError as e:
        out.append(f"fields.{role}: {e}")
    return out


def diagnose(raw: Any) -> list[str]:
    """Every invariant violation of a raw (parsed) config; empty means valid."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        return ["config must be a mapping of keys to values"]
    diags = [f"missing required field {key!r}" for key in REQUIRED if raw.get(key) is None]
    for key in raw:
        if key not in KNOWN_KEYS:
            diags.append(f"unknown key {key!r}")
    sc = raw.get("scenario")
    if sc is not None and sc not in SCENARIOS:
        diags.append(f"unknown scenario {sc!r}; expected one of {', '.join(SCENARIOS)}")
    seed = raw.get("seed")
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool) or seed < 0):
        diags.append("seed must be a non-negative integer")
    n, k = raw.get("n"), raw.get("k")
    ints_ok = True
    for key, lo in (("n", 1), ("k", 0), ("n_paths", 1)):
        v = raw.get(key)
        if v is not None and (not isinstance(v, int) or isinstance(v, bool) or v < lo):
            diags.append(f"{key} must be an integer >= {lo}")
            ints_ok = False
    d = DEFAULTS.get(sc, {})
    if ints_ok:
        n = d.get("n") if n is None else n
        k = d.get("k") if k is None else k
    if ints_ok and isinstance(n, int) and isinstance(k, int) and k > n:
        diags.append(f"invariant k <= n violated: k = {k} > n = {n}")
    elif ints_ok and sc in SHAPE_LIMITS and isinstance(n, int) and isinstance(k, int):
        text, ok = SHAPE_LIMITS[sc]
        if not ok(n, k):
            diags.append(f"scenario {sc} requires {text}; got n = {n}, k = {k}")
    if ints_ok and isinstance(n, int) and n > MAX_N and not raw.get("allow_large_n", False):
        diags.append(f"invariant n <= {MAX_N} violated: n = {n} (set allow_large_n: true)")
    eps = raw.get("eps_list")
    if eps is not None:
        if (not isinstance(eps, list) or len(eps) < 3
                or not all(isinstance(e, (int, float)) and not isinstance(e, bool) for e in eps)):
            diags.append("eps_list must be a list of at least 3 numbers")
        elif any(e <= 0 or e >= 1 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])):
            diags.append("eps_list must be strictly decreasing within (0, 1)")
    t = raw.get("time", {})
    if not isinstance(t, dict):
        diags.append("time must be a mapping with keys T and steps")
    else:
        for key in t:
            if key not in ("T", "steps"):
                diags.append(f"time: unknown key {key!r}")
        if "T" in t and not (isinstance(t["T"], (int, float)) and t["T"] > 0):
            diags.append("time.T must be positive")
        if "steps" in t and not (isinstance(t["steps"], int) and t["steps"] >= 1):
            diags.append("time.steps must be a positive integer")
    fields_ = raw.get("fields", {})
    if not isinstance(fields_, dict):
        diags.append("fields must map roles to field specs")
    elif ints_ok:
        dim_ok = not (isinstance(n, int) and isinstance(k, int) and k > n)
        for role, spec in fields_.items():
            specs = spec if isinstance(spec, list) else [spec]
            for i, s in enumerate(specs):
                label = role if len(specs) == 1 else f"{role}[{i}]"
                diags += _field_diagnostics(label, s, n if dim_ok else None, k)
    if not isinstance(raw.get("params", {}), dict):
        diags.append("params must be a mapping")
    return diags


def from_dict(raw: Any) -> ScenarioConfig:
    diags = diagnose(raw)
    if diags:
        raise ConfigError(diags)
    kw = {key: raw[key] for key in KNOWN_KEYS if key in raw}
    if kw.get("eps_list") is not None:
        kw["eps_list"] = [float(e) for e in kw["eps_list"]]
    return ScenarioConfig(**kw)


def read_raw(path: str | Path) -> Any:
    """Parse a YAML config file (a single document)."""
    try:
        with open(path, encoding="utf-8") as fh:
            docs = list(yaml.safe_load_all(fh))
    except yaml.YAMLError as e:
        raise ConfigError([f"YAML parse error: {e}"]) from None
    if len(docs) > 1:
        raise ConfigError(["config must be a single YAML document"])
    return docs[0] if docs else None


def load_config(path: str | Path, *, seed: int | None = None, out: str | None = None) -> ScenarioConfig:
    """Read, apply command-line overrides (``seed``, ``out``) and validate."""
    raw = read_raw(path)
    raw = {} if raw is None else raw
    if isinstance(raw, dict):
        raw = dict(raw)
        if seed is not None:
            raw["seed"] = seed
        if out is not None:
            raw["output"] = out
        elif os.environ.get(OUTPUT_ENV):
            raw["output"] = os.environ[OUTPUT_ENV]
    return from_dict(raw)


@dataclass
class RunManifest:
    scenario: str
    config_hash: str
    tool_version: str
    wall_time_s: float
    verdicts: dict[str, bool]
    outputs: list[str]
    config: dict = field(default_factory=dict)
    threads: int = 1

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def new_manifest(cfg: ScenarioConfig, wall: float, verdicts: dict, outputs: list[str],
                 threads: int) -> RunManifest:
    return RunManifest(cfg.scenario, cfg.hash(), __version__, round(wall, 3),
                       {k: bool(v) for k, v in verdicts.items()}, outputs, cfg.to_dict(), threads)
