"""Study configuration: one JSON document with explicit units in key names.

Unknown keys are rejected so typos fail fast instead of silently falling
back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigurationError

__all__ = ["StudyConfig", "load_config"]


@dataclass(frozen=True)
class StudyConfig:
    """All knobs of a design/evaluation study.

    Exactly one of ``model_preset`` and ``model_file`` must be set.  Units
    are spelled out in the key names; angles are radians internally, one
    tooth equals ``2*pi/tooth_count`` radians of rotor angle.
    """

    model_preset: str | None = None
    model_file: str | None = None
    # commutation basis
    n_alpha: int = 50
    length_scale: float = 0.3
    smoothness: int = 3
    design_grid_points: int = 100
    # QP solver
    qp_kkt_tolerance: float = 1e-8
    qp_feasibility_tolerance: float = 1e-9
    qp_max_iterations: int = 200
    # closed-loop simulation
    sample_rate_hz: float = 5000.0
    pid_bandwidth_hz: float = 20.0
    reference_velocity_teeth_per_s: float = 0.3
    reference_span_teeth: float = 5.0
    reference_hold_s: float = 0.5
    table_resolution: int = 8192
    # Monte Carlo study
    srm_count: int = 20
    full_scale_srm_count: int = 100
    lambda_list: tuple = (1.0,)
    master_seed: int = 20240
    # conventional benchmark
    tsf_overlap_fraction: float = 0.05

    def __post_init__(self):
        if (self.model_preset is None) == (self.model_file is None):
            raise ConfigurationError("set exactly one of model_preset / model_file")
        if self.model_file is not None and not Path(self.model_file).exists():
            raise ConfigurationError(f"model file not found: {self.model_file}")
        if self.n_alpha < 1 or self.design_grid_points < self.n_alpha:
            raise ConfigurationError(
                "need n_alpha >= 1 and design_grid_points >= n_alpha"
            )
        if self.srm_count < 1 or self.full_scale_srm_count < 1:
            raise ConfigurationError("srm_count must be >= 1")
        if isinstance(self.lambda_list, (int, float, str)):
            raise ConfigurationError("lambda_list must be a list of values")
        lambdas = tuple(float(v) for v in self.lambda_list)
        if not lambdas or any(v < 0 for v in lambdas):
            raise ConfigurationError("lambda_list must be non-empty with values >= 0")
        object.__setattr__(self, "lambda_list", lambdas)
        for name in (
            "length_scale",
            "sample_rate_hz",
            "pid_bandwidth_hz",
            "reference_velocity_teeth_per_s",
            "reference_span_teeth",
        ):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.reference_hold_s < 0:
            raise ConfigurationError("reference_hold_s must be non-negative")
        if self.table_resolution < 16:
            raise ConfigurationError("table_resolution must be at least 16")

    @property
    def sample_step_s(self) -> float:
        return 1.0 / self.sample_rate_hz

    def to_dict(self) -> dict:
        data = asdict(self)
        data["lambda_list"] = list(self.lambda_list)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def load_config(path) -> StudyConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be a JSON object")
    return StudyConfig.from_dict(data)
