"""Run configuration: strict TOML/JSON parsing and the shipped presets."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .lie_core import descriptor_by_name
from .observer import Gains
from .simulate import Pose, ProfileSpec, Scenario, bias_element
from .systems import NoiseConfig

DEFAULT_T_END = 15.0
DEFAULT_H = 1e-3
DEFAULT_OUTPUT = "trace.csv"
REPORT_FORMATS = ("text", "json")


class ConfigError(ValueError):
    """Invalid run configuration; ``problems`` lists every issue found."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


_PROFILE_KEYS = {
    "se3-circular": ("omega_rate", "v_rate"),
    "so3-circular": ("omega_rate",),
    "constant": ("coords",),
}


def _schema(group: str, profile: Optional[str]) -> dict:
    """Allowed keys per section, mapped to whether they are required."""
    se3 = group == "SE3"
    profile_keys = {"name": True}
    profile_keys.update({k: True for k in _PROFILE_KEYS.get(profile, ())})
    return {
        "": {
            "group": True,
            "frame": True,
            "t_end": False,
            "h": False,
            "output": False,
            "report": False,
            "propagation": False,
            "measurement_hold": False,
        },
        "gains": {"k1": True, "k2": True},
        "profile": profile_keys,
        "bias": _keys(["omega"], ["v"], se3),
        "noise": {"enabled": True, "sigma": True, "seed": True},
        "initial.truth": _keys(["rotation_vector"], ["position"], se3),
        "initial.observer": _keys(["rotation_vector", "bias_omega"], ["position", "bias_v"], se3),
    }


def _keys(common, se3_only, se3: bool) -> dict:
    # translation entries only exist for SE3
    return {k: True for k in list(common) + (list(se3_only) if se3 else [])}


def _section(doc: dict, path: str) -> Any:
    node: Any = doc
    for part in path.split(".") if path else ():
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]
    return node


def _vec3(value, where: str, problems: list) -> tuple:
    try:
        vec = tuple(float(x) for x in value)
    except (TypeError, ValueError):
        problems.append(f"{where} must be a list of three numbers")
        return (0.0, 0.0, 0.0)
    if len(vec) != 3 or not all(math.isfinite(x) for x in vec):
        problems.append(f"{where} must be a list of three finite numbers")
        return (0.0, 0.0, 0.0)
    return vec


def _number(value, where: str, problems: list) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        problems.append(f"{where} must be a number")
        return math.nan
    if not math.isfinite(value):
        problems.append(f"{where} must be finite")
    return float(value)


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario
    document: dict
    output_path: str = DEFAULT_OUTPUT
    report_format: str = "text"
    preset: Optional[str] = None


def parse_document(doc: dict, preset: Optional[str] = None) -> RunConfig:
    """Validate a decoded config mapping and build the run configuration."""
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    problems: list = []
    group = doc.get("group")
    if group is not None and group not in ("SE3", "SO3"):
        problems.append(f"group must be 'SE3' or 'SO3', got {group!r}")
    profile_name = _section(doc, "profile.name")
    if profile_name is not None and profile_name not in _PROFILE_KEYS:
        problems.append(f"unknown profile {profile_name!r}; expected one of {sorted(_PROFILE_KEYS)}")
    schema = _schema(group or "SE3", profile_name)

    nested = {path.split(".")[0] for path in schema if path}
    for key in doc:
        if key not in schema[""] and key not in nested:
            problems.append(f"unknown key {key!r}")
    initial = doc.get("initial")
    if isinstance(initial, dict):
        for key in initial:
            if key not in ("truth", "observer"):
                problems.append(f"unknown key 'initial.{key}'")
    for path, keys in schema.items():
        node = _section(doc, path) if path else doc
        if node is None:
            missing = [f"{path}.{k}" for k, req in keys.items() if req]
            problems.extend(f"missing required key {m!r}" for m in missing)
            continue
        if not isinstance(node, dict):
            problems.append(f"{path!r} must be a table")
            continue
        if path:
            for key in node:
                if key not in keys:
                    problems.append(f"unknown key '{path}.{key}'")
        for key, required in keys.items():
            if required and key not in node:
                problems.append(f"missing required key '{(path + '.') if path else ''}{key}'")
    gains_doc = doc.get("gains")
    if problems and isinstance(gains_doc, dict):
        # still report bad gains alongside missing keys
        for name in ("k1", "k2"):
            value = gains_doc.get(name)
            if isinstance(value, (int, float)) and not isinstance(value, bool) and value <= 0:
                problems.append(f"gains.{name} must be positive (got {value})")
    if problems:
        raise ConfigError(problems)

    se3 = group == "SE3"
    desc = descriptor_by_name(group)
    gains_doc, noise_doc = doc["gains"], doc["noise"]
    k1 = _number(gains_doc["k1"], "gains.k1", problems)
    k2 = _number(gains_doc["k2"], "gains.k2", problems)
    for name, value in (("k1", k1), ("k2", k2)):
        if value == value and value <= 0:
            problems.append(f"gains.{name} must be positive (got {value})")
    t_end = _number(doc.get("t_end", DEFAULT_T_END), "t_end", problems)
    h = _number(doc.get("h", DEFAULT_H), "h", problems)
    if h == h and h <= 0:
        problems.append(f"h must be positive (got {h})")
    if t_end == t_end and h == h and h > 0 and t_end < h:
        problems.append("t_end must be at least one step h")
    sigma = _number(noise_doc["sigma"], "noise.sigma", problems)
    if sigma == sigma and sigma < 0:
        problems.append("noise.sigma must be nonnegative")
    enabled = noise_doc["enabled"]
    if not isinstance(enabled, bool):
        problems.append("noise.enabled must be true or false")
    seed = noise_doc["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        problems.append("noise.seed must be an integer in [0, 2**64)")

    profile_doc = dict(doc["profile"])
    profile_doc.pop("name")
    if profile_name == "constant":
        coords = profile_doc.get("coords")
        if not isinstance(coords, list) or len(coords) != desc.d:
            problems.append(f"profile.coords must list {desc.d} algebra coordinates")
        else:
            profile_doc["coords"] = [_number(c, "profile.coords", problems) for c in coords]
    else:
        for key in profile_doc:
            profile_doc[key] = _number(profile_doc[key], f"profile.{key}", problems)
    if profile_name == "se3-circular" and not se3:
        problems.append("profile 'se3-circular' needs group SE3")
    if profile_name == "so3-circular" and se3:
        problems.append("profile 'so3-circular' needs group SO3")

    bias_doc = doc["bias"]
    truth_doc = doc["initial"]["truth"]
    obs_doc = doc["initial"]["observer"]
    zero = (0.0, 0.0, 0.0)
    bias = bias_element(
        desc, _vec3(bias_doc["omega"], "bias.omega", problems), _vec3(bias_doc["v"], "bias.v", problems) if se3 else zero
    )
    bias_hat = bias_element(
        desc,
        _vec3(obs_doc["bias_omega"], "initial.observer.bias_omega", problems),
        _vec3(obs_doc["bias_v"], "initial.observer.bias_v", problems) if se3 else zero,
    )
    truth = Pose(
        _vec3(truth_doc["rotation_vector"], "initial.truth.rotation_vector", problems),
        _vec3(truth_doc["position"], "initial.truth.position", problems) if se3 else zero,
    )
    observer = Pose(
        _vec3(obs_doc["rotation_vector"], "initial.observer.rotation_vector", problems),
        _vec3(obs_doc["position"], "initial.observer.position", problems) if se3 else zero,
    )
    report = doc.get("report", "text")
    if report not in REPORT_FORMATS:
        problems.append(f"report must be one of {REPORT_FORMATS}")
    output = doc.get("output", DEFAULT_OUTPUT)
    if not isinstance(output, str) or not output:
        problems.append("output must be a nonempty path string")
    if problems:
        raise ConfigError(problems)

    try:
        scenario = Scenario(
            group=group,
            gains=Gains(k1, k2),
            profile=ProfileSpec(profile_name, profile_doc),
            bias=tuple(bias.coords.tolist()),
            noise=NoiseConfig(sigma, seed, enabled),
            initial_truth=truth,
            initial_observer=observer,
            initial_bias_estimate=tuple(bias_hat.coords.tolist()),
            frame=doc["frame"],
            t_end=t_end,
            h=h,
            propagation=doc.get("propagation", "magnus4"),
            measurement_hold=doc.get("measurement_hold", "stage"),
        )
        scenario.landmarks
        if scenario.propagation not in ("magnus4", "midpoint"):
            raise ValueError(f"unknown propagation {scenario.propagation!r}")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(scenario, copy.deepcopy(doc), output, report, preset)


def parse_config(text: str, fmt: str = "toml") -> RunConfig:
    """Parse a TOML (default) or JSON config document."""
    if not text.strip():
        return parse_document({})
    try:
        doc = json.loads(text) if fmt == "json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"malformed {fmt} document: {exc}") from None
    return parse_document(doc)


def _figure1() -> dict:
    return {
        "group": "SE3",
        "frame": "se3-landmarks",
        "t_end": 15.0,
        "h": 1e-3,
        "gains": {"k1": 2.0, "k2": 10.0},
        "profile": {"name": "se3-circular", "omega_rate": 10.0, "v_rate": 0.5},
        "bias": {"omega": [-10.0, 15.0, 8.0], "v": [2.0, 8.0, 5.0]},
        "noise": {"enabled": True, "sigma": 0.1, "seed": 20220101},
        "initial": {
            "truth": {"rotation_vector": [0.0, 0.0, 0.0], "position": [0.0, 0.0, 1.0]},
            "observer": {
                "rotation_vector": [0.0, 0.0, -math.pi / 10.0],
                "position": [0.0, 0.0, 0.0],
                "bias_omega": [0.0, 0.0, 0.0],
                "bias_v": [0.0, 0.0, 0.0],
            },
        },
    }


def _noiseless() -> dict:
    doc = _figure1()
    doc["noise"] = {"enabled": False, "sigma": 0.0, "seed": 20220101}
    return doc


def _zero_error() -> dict:
    doc = _noiseless()
    doc["initial"]["observer"] = {
        "rotation_vector": [0.0, 0.0, 0.0],
        "position": [0.0, 0.0, 1.0],
        "bias_omega": [-10.0, 15.0, 8.0],
        "bias_v": [2.0, 8.0, 5.0],
    }
    return doc


def _so3_demo() -> dict:
    return {
        "group": "SO3",
        "frame": "identity",
        "t_end": 15.0,
        "h": 1e-3,
        "gains": {"k1": 2.0, "k2": 10.0},
        "profile": {"name": "so3-circular", "omega_rate": 10.0},
        "bias": {"omega": [-10.0, 15.0, 8.0]},
        "noise": {"enabled": True, "sigma": 0.1, "seed": 20220101},
        "initial": {
            "truth": {"rotation_vector": [0.0, 0.0, 0.0]},
            "observer": {"rotation_vector": [0.0, 0.0, -math.pi / 10.0], "bias_omega": [0.0, 0.0, 0.0]},
        },
    }


PRESETS = {
    "se3-figure1": _figure1,
    "se3-figure1-noiseless": _noiseless,
    "se3-zero-error": _zero_error,
    "so3-demo": _so3_demo,
}


def preset_document(name: str) -> dict:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None


def load_preset(name: str) -> RunConfig:
    return parse_document(preset_document(name), preset=name)
