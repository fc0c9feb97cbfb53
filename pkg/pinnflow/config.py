"""Global configuration, enumerations and run-config loading for pinnflow."""

from __future__ import annotations

import os
from enum import Enum
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from pinnflow.errors import ConfigurationError
from pinnflow.physics.scales import ReferenceScales
from pinnflow.physics.scales import reynolds as reynolds_number


class Activation(str, Enum):
    """Hidden-layer activation functions."""

    TANH = "tanh"
    LINEAR = "linear"
    RELU = "relu"

    @property
    def smooth(self) -> bool:
        return self is not Activation.RELU


class Formulation(str, Enum):
    """Physics-loss formulation of the network outputs."""

    MIXED = "mixed"
    NO_STREAM_FUNCTION = "no_stream_function"
    NO_STRESS = "no_stress"


class Phase(str, Enum):
    """Training phase of a convergence record."""

    ADAM = "adam"
    LBFGS = "lbfgs"


class TerminationReason(str, Enum):
    """Why a training run stopped."""

    DESCENT_FAILURE = "descent-failure"
    MAX_EPOCHS = "max-epochs"
    NON_FINITE_ABORT = "non-finite-abort"


class PointTag(str, Enum):
    """Collocation point populations."""

    VOLUME = "f"
    DIRICHLET = "D"
    NEUMANN = "N"
    MOVING = "M"


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class ScenarioSection(_Section):
    """Geometry variation trained over."""

    name: str = "static"
    k_range: tuple[float, float] | None = None
    constants: dict[str, float] = Field(default_factory=dict)
    file: str | None = None

    @field_validator("k_range")
    @classmethod
    def _ordered(cls, value: tuple[float, float] | None) -> tuple[float, float] | None:
        if value is not None and value[0] > value[1]:
            raise ValueError("k_range lower bound exceeds upper bound")
        return value


class NetworkSection(_Section):
    """Network architecture (n hidden layers of width m)."""

    hidden_layers: int = Field(default=10, ge=1)
    width: int = Field(default=60, ge=1)
    n_sd: Literal[2, 3] = 3
    parametric: bool = False
    activation: Activation = Activation.TANH
    formulation: Formulation = Formulation.MIXED


class LossSection(_Section):
    """Loss weighting factors."""

    f_bc: float = Field(default=10.0, gt=0.0)
    f_sigma: float = Field(default=1.0, gt=0.0)


class OptimSection(_Section):
    """Optimizer schedule and hyperparameters."""

    adam_iters: int = Field(default=10000, ge=0)
    adam_lr: float = Field(default=1e-3, gt=0.0)
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    lbfgs_inner: int = Field(default=20, ge=1)
    lbfgs_history: int = Field(default=50, ge=1)
    max_epochs: int = Field(default=200, ge=0)
    max_batch_size: int = Field(default=100_000, ge=1)
    wolfe_c1: float = Field(default=1e-4, gt=0.0, lt=1.0)
    wolfe_c2: float = Field(default=0.9, gt=0.0, lt=1.0)
    max_line_evals: int = Field(default=25, ge=1)

    @model_validator(mode="after")
    def _wolfe_order(self) -> OptimSection:
        if self.wolfe_c1 >= self.wolfe_c2:
            raise ValueError("wolfe_c1 must be smaller than wolfe_c2")
        return self


class DataSection(_Section):
    """Input files and test-set handling."""

    points: str | None = None
    reference: str | None = None
    # Generate points with the domain sampler when no point file is given
    sampler: Literal["channel", "cylinder-static", "cylinder-parametric", "tjunction"] | None = None
    sample_volume: int = Field(default=2000, ge=1)
    test_fraction: float = Field(default=0.01, gt=0.0, lt=1.0)
    test_interval: int = Field(default=100, ge=1)


class OutputSection(_Section):
    """Run directory options."""

    directory: str = "runs/run"
    overwrite: bool = False
    write_binary: bool = True


class TrainConfig(BaseModel):
    """Central configuration for a pinnflow training run."""

    model_config = ConfigDict(frozen=False, extra="forbid")

    scenario: ScenarioSection = ScenarioSection()
    network: NetworkSection = NetworkSection()
    scales: ReferenceScales = ReferenceScales()
    loss: LossSection = LossSection()
    optim: OptimSection = OptimSection()
    data: DataSection = DataSection()
    output: OutputSection = OutputSection()

    # Reproducibility
    seed: int = 42
    deterministic: bool = False

    # Worker threads for point-parallel evaluation (0 = all cores)
    threads: int = Field(default=0, ge=0)

    @property
    def reynolds(self) -> float:
        return reynolds_number(self.scales)

    @property
    def worker_count(self) -> int:
        if self.deterministic:
            return 1
        return self.threads or (os.cpu_count() or 1)

    def updated(self, **sections: dict) -> TrainConfig:
        """Return a copy with the given sections partially overridden."""
        data = self.model_dump()
        for name, values in sections.items():
            if isinstance(data.get(name), dict):
                data[name].update(values)
            else:
                data[name] = values
        return _validate(data, source="override")

    @classmethod
    def from_defaults(cls) -> TrainConfig:
        """Create config with defaults, overridden by PINNFLOW_ env vars."""
        overrides: dict = {}
        for field_name in ("seed", "deterministic", "threads"):
            val = os.environ.get(f"PINNFLOW_{field_name.upper()}")
            if val is None:
                continue
            if field_name == "deterministic":
                overrides[field_name] = val.strip().lower() in ("1", "true", "yes", "on")
            else:
                overrides[field_name] = int(val)
        return _validate(overrides, source="environment")

    @classmethod
    def from_yaml(cls, path: str | Path) -> TrainConfig:
        """Load a run-config YAML file; data and output paths resolve against its directory."""
        path = Path(path)
        try:
            with open(path) as f:
                data = yaml.safe_load(f) or {}
        except FileNotFoundError as exc:
            raise ConfigurationError(f"config file not found: {path}") from exc
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
            raise ConfigurationError(f"{path}: YAML syntax error{where}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: top level must be a mapping of sections")

        base = path.parent
        for section, key in (("data", "points"), ("data", "reference"), ("output", "directory"), ("scenario", "file")):
            value = (data.get(section) or {}).get(key)
            if isinstance(value, str) and not Path(value).is_absolute():
                data[section][key] = str((base / value).resolve())
        return _validate(data, source=str(path))


def _validate(data: dict, source: str) -> TrainConfig:
    try:
        return TrainConfig(**data)
    except ValidationError as exc:
        problems = [
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()
        ]
        raise ConfigurationError(f"{source}: invalid configuration\n  " + "\n  ".join(problems)) from exc
