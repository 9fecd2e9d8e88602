"""
Experiment configuration documents: parsing, validation and presets.

A configuration is a JSON object with flat keys. Every problem found is
collected and reported together in a single ConfigError.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, TypedDict, Union

from rcmlab.environment import (
    ConductanceLaw,
    LocalObservable,
    check_support,
    law_from_spec,
    observable_from_dict,
)
from rcmlab.exceptions import ConfigError
from rcmlab.lattice import build_torus
from rcmlab.utils import geometric_ladder

__all__ = [
    "SCHEMA_VERSION",
    "EXPERIMENTS",
    "MAX_VERTICES",
    "ExperimentConfig",
    "ProfileConfig",
    "PROFILES",
    "parse_config",
    "parse_config_dict",
    "load_config",
    "finite_size_limit",
]

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

EXPERIMENTS = ("relax", "kernel", "corrector", "weights", "necessity")

MAX_VERTICES = 2**24

# Largest side length per dimension, bounding dense kernel columns
MAX_SIDE = {2: 256, 3: 64}

REQUIRED_KEYS = ("schema_version", "experiment", "d", "L")

ELLIPTIC_LAW = {"kind": "bernoulli", "p": 0.5, "lo": 0.2, "hi": 1.0}


def finite_size_limit(L: int) -> float:
    """Largest time (L/4)^2 before wrap-around effects are expected."""
    return (L / 4.0) ** 2


@dataclass
class ExperimentConfig:
    """Validated experiment configuration with every default filled in."""

    experiment: str
    d: int
    L: int
    law: Union[Dict[str, Any], List[Dict[str, Any]]]
    observable: Dict[str, Any]
    dt: float
    t_grid: List[float]
    p_list: List[int]
    reps: int
    seed: int
    output: str
    fit_window: List[float]
    mu_list: List[float]
    direction: int
    tol: float
    preconditioner: bool
    q_list: List[float]
    moderation_q: float
    r_exponent: float
    theta: List[float]
    q: int
    alpha: Optional[float]
    control_law: Optional[Dict[str, Any]]
    threads: Optional[int]
    schema_version: int = SCHEMA_VERSION
    warnings: List[str] = field(default_factory=list)

    @property
    def conductance_law(self) -> ConductanceLaw:
        return law_from_spec(self.law, self.d)

    @property
    def local_observable(self) -> LocalObservable:
        return observable_from_dict(self.observable, self.d)

    @property
    def control(self) -> Optional[ConductanceLaw]:
        if self.control_law is None:
            return None
        return law_from_spec(self.control_law, self.d)

    def to_dict(self) -> Dict[str, Any]:
        """Config echo without run-time warnings."""
        data = asdict(self)
        data.pop("warnings")
        return data


def _default_t_grid(d: int, L: int) -> List[float]:
    stop = max(2.0, finite_size_limit(L))
    return geometric_ladder(1.0, stop, 10, dt=1.0 / (4 * d))


def _defaults(experiment: str, d: int, L: int) -> Dict[str, Any]:
    limit = finite_size_limit(L)
    return {
        "law": {"kind": "constant", "c": 1.0} if experiment == "kernel" else dict(ELLIPTIC_LAW),
        "observable": {"kind": "centered_conductance", "offset": [0] * d, "direction": 0},
        "dt": 1.0 / (4 * d),
        "t_grid": _default_t_grid(d, L),
        "p_list": [1],
        "reps": 32,
        "seed": 0,
        "output": "results",
        "fit_window": [4.0, max(8.0, limit)],
        "mu_list": [1e-1, 3e-2, 1e-2],
        "direction": 0,
        "tol": 1e-10,
        "preconditioner": False,
        "q_list": [1.0, 2.0, 4.0],
        "moderation_q": float(d + 1),
        "r_exponent": 1.0,
        "theta": [0.25],
        "q": 8,
        "alpha": None,
        "control_law": dict(ELLIPTIC_LAW) if experiment == "necessity" else None,
        "threads": None,
    }


KNOWN_KEYS = set(REQUIRED_KEYS) | set(_defaults("relax", 1, 3))


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _number_list(value: Any) -> bool:
    return isinstance(value, list) and len(value) > 0 and all(_is_number(v) for v in value)


def _expand_t_grid(value: Any, dt: float) -> List[float]:
    """Accept an explicit list or {"start", "stop", "points"} for a geometric ladder."""
    if isinstance(value, dict):
        extra = set(value) - {"start", "stop", "points"}
        if extra:
            raise ValueError(f"unknown t_grid keys: {', '.join(sorted(extra))}")
        return geometric_ladder(float(value["start"]), float(value["stop"]), int(value["points"]), dt=dt)
    if not _number_list(value):
        raise ValueError("t_grid must be a non-empty list of numbers or a ladder object")
    return [float(t) for t in value]


def parse_config_dict(document: Dict[str, Any]) -> ExperimentConfig:
    """
    Validate a configuration object and fill in defaults.

    Args:
        document: Decoded JSON object

    Returns:
        ExperimentConfig

    Raises:
        ConfigError: Listing every problem found
    """
    if not isinstance(document, dict):
        raise ConfigError(["configuration must be a JSON object"])

    errors: List[str] = []
    missing = [k for k in REQUIRED_KEYS if k not in document]
    if missing:
        errors.append(f"missing required keys: {', '.join(missing)}")
    unknown = sorted(set(document) - KNOWN_KEYS)
    if unknown:
        errors.append(f"unknown keys: {', '.join(unknown)}")

    version = document.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        errors.append(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")

    experiment = document.get("experiment", "relax")
    if experiment not in EXPERIMENTS:
        errors.append(f"experiment must be one of {', '.join(EXPERIMENTS)}, got {experiment!r}")
        experiment = "relax"

    d = document.get("d", 1)
    L = document.get("L", 3)
    if not _is_int(d) or d < 1:
        errors.append(f"d must be an integer >= 1, got {d!r}")
        d = 1
    if not _is_int(L) or L < 3:
        errors.append(f"L must be an integer >= 3 (no duplicate edges on the torus), got {L!r}")
        L = 3
    if L**d > MAX_VERTICES:
        errors.append(f"L^d = {L**d} exceeds the memory cap of 2^24 vertices")
    if d in MAX_SIDE and L > MAX_SIDE[d]:
        errors.append(f"L = {L} exceeds the cap L <= {MAX_SIDE[d]} for d={d}")

    values = _defaults(experiment, d, L)
    values.update({k: v for k, v in document.items() if k in values})

    dt = values["dt"]
    if not _is_number(dt) or dt <= 0:
        errors.append(f"dt must be a positive number, got {dt!r}")
        dt = 1.0 / (4 * d)
    elif dt > 1.0 / (2 * d):
        errors.append(f"dt = {dt:g} violates the stability bound dt <= 1/(2d) = {1.0 / (2 * d):.4g}")
    values["dt"] = float(dt)

    checks: List[Tuple[str, Callable[[Any], bool], str]] = [
        ("reps", lambda v: _is_int(v) and v >= 2, "an integer >= 2"),
        ("seed", lambda v: _is_int(v) and v >= 0, "a non-negative integer"),
        ("output", lambda v: isinstance(v, str) and v != "", "a non-empty path"),
        ("p_list", lambda v: isinstance(v, list) and len(v) > 0 and all(_is_int(p) and p >= 1 for p in v), "a non-empty list of integers >= 1"),
        ("mu_list", lambda v: _number_list(v) and all(m > 0 for m in v) and all(b < a for a, b in zip(v, v[1:])), "a strictly decreasing list of positive numbers"),
        ("direction", lambda v: _is_int(v) and 0 <= v < d, f"an integer in 0..{d - 1}"),
        ("tol", lambda v: _is_number(v) and 0 < v < 1, "a number in (0, 1)"),
        ("preconditioner", lambda v: isinstance(v, bool), "true or false"),
        ("q_list", lambda v: _number_list(v) and all(q >= 1 for q in v), "a non-empty list of numbers >= 1"),
        ("moderation_q", lambda v: _is_number(v) and v > 0, "a positive number"),
        ("r_exponent", lambda v: _is_number(v) and v > 0, "a positive number"),
        ("theta", lambda v: _number_list(v) and all(t > 0 for t in v) and len(v) in (1, d), f"a list of 1 or {d} positive numbers"),
        ("q", lambda v: _is_int(v) and v >= 1, "an integer >= 1"),
        ("alpha", lambda v: v is None or _is_number(v), "a number or null"),
        ("threads", lambda v: v is None or (_is_int(v) and 1 <= v <= 256), "null or an integer in 1..256"),
        ("fit_window", lambda v: _number_list(v) and len(v) == 2 and 0 < v[0] < v[1], "a pair [lo, hi] with 0 < lo < hi"),
    ]
    for key, check, expected in checks:
        if not check(values[key]):
            errors.append(f"{key} must be {expected}, got {values[key]!r}")

    try:
        values["t_grid"] = _expand_t_grid(values["t_grid"], values["dt"])
        if any(t < 0 for t in values["t_grid"]):
            errors.append("t_grid times must be non-negative")
        elif any(b <= a for a, b in zip(values["t_grid"], values["t_grid"][1:])):
            errors.append("t_grid must be strictly increasing")
    except (KeyError, TypeError, ValueError) as e:
        errors.append(f"t_grid: {e}")

    for key in ("law", "control_law"):
        if values[key] is None:
            continue
        try:
            law_from_spec(values[key], d)
        except (TypeError, ValueError) as e:
            errors.append(f"{key}: {e}")

    try:
        obs = observable_from_dict(values["observable"], d)
        check_support(obs, build_torus(d, L))
    except (TypeError, ValueError) as e:
        errors.append(f"observable: {e}")

    if errors:
        raise ConfigError(errors)

    cfg = ExperimentConfig(experiment=experiment, d=d, L=L, **values)
    if cfg.t_grid and cfg.t_grid[-1] > finite_size_limit(L):
        message = (
            f"t_max = {cfg.t_grid[-1]:g} exceeds (L/4)^2 = {finite_size_limit(L):g}; "
            "wrap-around effects are likely"
        )
        logger.warning(message)
        cfg.warnings.append(message)
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    """
    Parse and validate a JSON configuration document.

    Raises:
        ConfigError: On malformed JSON or any validation failure
    """
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"malformed JSON: {e}"]) from e
    return parse_config_dict(document)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read and validate a configuration file."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError([f"cannot read {path}: {e}"]) from e
    return parse_config(text)


class ProfileConfig(TypedDict):
    """Type definition for a named experiment preset."""

    description: str
    config: Dict[str, Any]


_MIXED_LAW = [
    {"kind": "bernoulli", "p": 0.5, "lo": 0.0, "hi": 1.0},
    {"kind": "bernoulli", "p": 0.5, "lo": 0.0, "hi": 1.0},
    {"kind": "inverse_shifted_exponential", "rate": 1.0},
]

_RELAX_WINDOW = {"start": 4, "stop": 64, "points": 9}

# Desk-scale presets of the headline runs
PROFILES: Dict[str, ProfileConfig] = {
    "kernel-2d": {
        "description": "Homogeneous on-diagonal decay, d=2, L=128, fit over [20, 200]",
        "config": {
            "schema_version": 1, "experiment": "kernel", "d": 2, "L": 128,
            "t_grid": {"start": 20, "stop": 200, "points": 12}, "fit_window": [20, 200],
        },
    },
    "kernel-3d": {
        "description": "Homogeneous on-diagonal decay, d=3, L=48, fit over [10, 100]",
        "config": {
            "schema_version": 1, "experiment": "kernel", "d": 3, "L": 48,
            "t_grid": {"start": 10, "stop": 100, "points": 10}, "fit_window": [10, 100],
        },
    },
    "relax-3d": {
        "description": "Centered conductance relaxation, mixed Bernoulli/exponential law, d=3",
        "config": {
            "schema_version": 1, "experiment": "relax", "d": 3, "L": 32, "law": _MIXED_LAW,
            "reps": 200, "t_grid": _RELAX_WINDOW, "fit_window": [4, 64],
        },
    },
    "relax-divergence-3d": {
        "description": "Divergence-form relaxation, same law and window as relax-3d",
        "config": {
            "schema_version": 1, "experiment": "relax", "d": 3, "L": 32, "law": _MIXED_LAW,
            "observable": {
                "kind": "divergence_form", "direction": 0,
                "inner": {"kind": "centered_conductance", "offset": [0, 0, 0], "direction": 0},
            },
            "reps": 200, "t_grid": _RELAX_WINDOW, "fit_window": [4, 64],
        },
    },
    "necessity-3d": {
        "description": "Power-law-near-zero trapping, theta=1/4, q=8, with elliptic control",
        "config": {
            "schema_version": 1, "experiment": "necessity", "d": 3, "L": 32, "theta": [0.25],
            "q": 8, "reps": 200, "t_grid": {"start": 4, "stop": 64, "points": 5},
        },
    },
    "corrector-3d": {
        "description": "Massive corrector sweep, d=3, L=16, mu from 1e-1 to 1e-3",
        "config": {
            "schema_version": 1, "experiment": "corrector", "d": 3, "L": 16,
            "law": ELLIPTIC_LAW, "mu_list": [1e-1, 3e-2, 1e-2, 3e-3, 1e-3],
            "p_list": [2], "reps": 100,
        },
    },
    "weights-2d": {
        "description": "Resistance weights and path moments, Bernoulli(0.9, 0, 1), d=2",
        "config": {
            "schema_version": 1, "experiment": "weights", "d": 2, "L": 9,
            "law": {"kind": "bernoulli", "p": 0.9, "lo": 0.0, "hi": 1.0},
            "q_list": [1, 2], "reps": 500,
        },
    },
}
