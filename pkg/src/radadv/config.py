"""Experiment configuration: one JSON file, strict keys, full defaults.

An empty config is valid; every field has a default derived from the
selected profile (``desk`` for fast runs, ``paper-shape`` for full-size
frame geometry).  Unknown keys are rejected with their dotted path, and
any config key can be overridden through the environment as
``RADADV_<PATH>`` with ``__`` separating nesting levels
(e.g. ``RADADV_ATTACK__KAPPA=25``).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .attacks import AttackConfig, ThreatScenario
from .data import PROFILES, SPLIT_PRESETS, SyntheticConfig
from .training import DEFAULT_HYPERS, Hyperparams

ENV_PREFIX = "RADADV_"

DEFAULT_ARCHITECTURES = ["A-mini", "R-mini"]
DEFAULT_ATTACKS = ["bim", "cw", "padding"]


class ConfigError(ValueError):
    pass


@dataclass
class InterpretSettings:
    model: str = "A-mini_S+"
    attack: str = "cw"
    layer: str | None = None
    max_samples: int = 200
    heatmap_samples: int = 2


@dataclass
class ExperimentConfig:
    profile: str
    seed: int
    out_dir: str
    jobs: int
    window_length: int
    data: SyntheticConfig
    splits: dict[str, dict[str, list[int]]]
    architectures: list[str]
    hyper: dict[str, Hyperparams]
    attack: AttackConfig
    scenarios: list[ThreatScenario]
    attacks: list[str]
    interpret: InterpretSettings
    normalized: dict = field(repr=False, default_factory=dict)

    @property
    def model_ids(self) -> list[str]:
        return [f"{arch}_{split}" for arch in self.architectures for split in self.splits]

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.normalized, sort_keys=True).encode()).hexdigest()


def _scalar_fields(dc) -> dict:
    out = {}
    for f in dataclasses.fields(dc):
        v = getattr(dc, f.name)
        if isinstance(v, (int, float, str, bool)) or v is None:
            out[f.name] = v
        elif isinstance(v, tuple) and all(isinstance(i, (int, float)) for i in v):
            out[f.name] = list(v)
    return out


def _default_tree(profile_name: str) -> dict:
    if profile_name not in PROFILES:
        raise ConfigError(f"profile: unknown profile {profile_name!r}; "
                          f"options: {sorted(PROFILES)}")
    profile = PROFILES[profile_name]
    return {
        "profile": profile_name,
        "seed": 1234,
        "out_dir": "runs/out",
        "jobs": 1,
        "window_length": profile.window_length,
        "data": _scalar_fields(profile.synthetic),
        "splits": {k: {p: list(v) for p, v in preset.items()}
                   for k, preset in SPLIT_PRESETS.items()},
        "architectures": list(DEFAULT_ARCHITECTURES),
        "hyper": {arch: _scalar_fields(h) for arch, h in DEFAULT_HYPERS.items()},
        "attack": _scalar_fields(AttackConfig()),
        "scenarios": None,   # derived from architectures/splits when absent
        "attacks": list(DEFAULT_ATTACKS),
        "interpret": _scalar_fields(InterpretSettings()),
    }


def _merge(defaults, user, path: str):
    if isinstance(defaults, dict):
        if not isinstance(user, dict):
            raise ConfigError(f"{path or 'config'}: expected an object")
        out = dict(defaults)
        open_tables = path in ("splits", "hyper")  # keyed by user-chosen names
        for key, val in user.items():
            sub = f"{path}.{key}" if path else key
            if key not in defaults and not open_tables:
                raise ConfigError(f"unknown config key: {sub}")
            base = defaults.get(key)
            out[key] = _merge(base, val, sub) if isinstance(base, dict) else val
        return out
    return user


def _env_overrides(tree: dict, environ) -> dict:
    def match_key(d: dict, seg: str):
        for k in d:
            if k.replace("-", "_").upper() == seg:
                return k
        return None

    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        segs = name[len(ENV_PREFIX):].split("__")
        node = tree
        trail = []
        for seg in segs[:-1]:
            key = match_key(node, seg)
            if key is None or not isinstance(node.get(key), dict):
                raise ConfigError(f"environment override {name}: no config table at "
                                  f"{'.'.join(trail + [seg.lower()])}")
            trail.append(key)
            node = node[key]
        leaf = match_key(node, segs[-1])
        if leaf is None:
            raise ConfigError(f"environment override {name}: unknown key "
                              f"{'.'.join(trail + [segs[-1].lower()])}")
        try:
            node[leaf] = json.loads(raw)
        except json.JSONDecodeError:
            node[leaf] = raw
    return tree


def _build_dataclass(cls, table: dict, path: str):
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in table.items():
        if key not in names:
            raise ConfigError(f"unknown config key: {path}.{key}")
        if isinstance(val, list):
            val = tuple(val)
        kwargs[key] = val
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _default_scenarios(architectures: list[str], splits: dict) -> list[dict]:
    split_ids = list(splits)
    if not architectures or not split_ids:
        return []
    a0 = architectures[0]
    s0 = split_ids[0]
    out = [{"kind": "WB", "source": f"{a0}_{s0}", "target": f"{a0}_{s0}"}]
    if len(split_ids) > 1:
        out.append({"kind": "B1", "source": f"{a0}_{s0}", "target": f"{a0}_{split_ids[1]}"})
    if len(architectures) > 1:
        out.append({"kind": "B2", "source": f"{a0}_{s0}", "target": f"{architectures[1]}_{s0}"})
    if len(architectures) > 1 and len(split_ids) > 1:
        out.append({"kind": "B3", "source": f"{a0}_{s0}",
                    "target": f"{architectures[1]}_{split_ids[1]}"})
    return out


def validate_config(path: str | Path | None = None, *, profile: str | None = None,
                    seed: int | None = None, out_dir: str | None = None,
                    jobs: int | None = None, environ=None) -> ExperimentConfig:
    """Load, default-fill, override, and validate one experiment config."""
    user: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config parse error in {p}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"config root in {p} must be a JSON object")

    prof = profile or user.get("profile") or "desk"
    tree = _merge(_default_tree(prof), user, "")
    tree["profile"] = prof
    tree = _env_overrides(tree, environ if environ is not None else os.environ)
    if profile is not None:
        tree["profile"] = profile
    if seed is not None:
        tree["seed"] = seed
    if out_dir is not None:
        tree["out_dir"] = out_dir
    if jobs is not None:
        tree["jobs"] = jobs

    if tree["scenarios"] is None:
        tree["scenarios"] = _default_scenarios(tree["architectures"], tree["splits"])

    data_cfg = _build_dataclass(SyntheticConfig, tree["data"], "data")
    try:
        data_cfg.validate()
    except ValueError as exc:
        raise ConfigError(f"data: {exc}") from exc

    hyper = {}
    for arch, table in tree["hyper"].items():
        hp = _build_dataclass(Hyperparams, table, f"hyper.{arch}")
        try:
            hp.validate()
        except ValueError as exc:
            raise ConfigError(f"hyper.{arch}: {exc}") from exc
        hyper[arch] = hp

    attack_cfg = _build_dataclass(AttackConfig, tree["attack"], "attack")
    try:
        attack_cfg.validate()
    except ValueError as exc:
        raise ConfigError(f"attack: {exc}") from exc

    for arch in tree["architectures"]:
        if arch not in hyper:
            raise ConfigError(f"architectures: no hyperparameters configured for {arch!r}")

    model_ids = {f"{arch}_{split}" for arch in tree["architectures"] for split in tree["splits"]}
    scenarios = []
    for i, sc in enumerate(tree["scenarios"]):
        if not isinstance(sc, dict) or set(sc) - {"kind", "source", "target"}:
            raise ConfigError(f"scenarios[{i}]: expected kind/source/target")
        scenario = ThreatScenario(sc["kind"], sc["source"], sc["target"])
        try:
            scenario.validate()
        except ValueError as exc:
            raise ConfigError(f"scenarios[{i}]: {exc}") from exc
        for mid in (scenario.source, scenario.target):
            if mid not in model_ids:
                raise ConfigError(f"scenarios[{i}]: model {mid!r} is not among the trained "
                                  f"models {sorted(model_ids)}")
        scenarios.append(scenario)

    for atk in tree["attacks"]:
        if atk not in ("bim", "cw", "padding"):
            raise ConfigError(f"attacks: unknown attack {atk!r}")

    interp = _build_dataclass(InterpretSettings, tree["interpret"], "interpret")
    if interp.model not in model_ids:
        raise ConfigError(f"interpret.model: {interp.model!r} is not among the trained models")

    for split_id, assignment in tree["splits"].items():
        if set(assignment) != {"train", "val", "test"}:
            raise ConfigError(f"splits.{split_id}: must define train/val/test subject lists")
        seen = {}
        for part, subjects in assignment.items():
            for s in subjects:
                if s in seen:
                    raise ConfigError(f"splits.{split_id}: subject {s} assigned to both "
                                      f"{seen[s]!r} and {part!r}")
                seen[s] = part

    return ExperimentConfig(
        profile=tree["profile"], seed=int(tree["seed"]), out_dir=str(tree["out_dir"]),
        jobs=int(tree["jobs"]), window_length=int(tree["window_length"]), data=data_cfg,
        splits=tree["splits"], architectures=list(tree["architectures"]), hyper=hyper,
        attack=attack_cfg, scenarios=scenarios, attacks=list(tree["attacks"]),
        interpret=interp, normalized=tree,
    )
