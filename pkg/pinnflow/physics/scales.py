"""Reference scales and the nondimensional form of the flow variables.

    x* = x / L_ref,   v* = v / V_ref,   p* = p / (rho V_ref^2),
    Re = rho V_ref L_ref / mu
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

MIN_REYNOLDS = 1e-6


class ReferenceScales(BaseModel):
    """Reference length, velocity, density and viscosity (SI units)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    l_ref: float = Field(default=1.1, gt=0.0)
    v_ref: float = Field(default=1.4, gt=0.0)
    rho: float = Field(default=1.0, gt=0.0)
    mu: float = Field(default=0.02, gt=0.0)

    @model_validator(mode="after")
    def _reynolds_floor(self) -> ReferenceScales:
        if reynolds(self) < MIN_REYNOLDS:
            raise ValueError(f"Reynolds number {reynolds(self):.3e} below {MIN_REYNOLDS:g}")
        return self

    @property
    def pressure_scale(self) -> float:
        return self.rho * self.v_ref**2


@dataclass
class FlowValues:
    """Any subset of position, velocity and pressure arrays."""

    position: np.ndarray | None = None
    velocity: np.ndarray | None = None
    pressure: np.ndarray | None = None


def reynolds(scales: ReferenceScales) -> float:
    return scales.rho * scales.v_ref * scales.l_ref / scales.mu


def _scaled(value, factor: float):
    return None if value is None else np.asarray(value, dtype=np.float64) * factor


def _divided(value, factor: float):
    return None if value is None else np.asarray(value, dtype=np.float64) / factor


def nondimensionalize(
    scales: ReferenceScales,
    position=None,
    velocity=None,
    pressure=None,
) -> FlowValues:
    """SI quantities to their nondimensional counterparts."""
    return FlowValues(
        position=_divided(position, scales.l_ref),
        velocity=_divided(velocity, scales.v_ref),
        pressure=_divided(pressure, scales.pressure_scale),
    )


def redimensionalize(
    scales: ReferenceScales,
    position=None,
    velocity=None,
    pressure=None,
) -> FlowValues:
    """Nondimensional quantities back to SI units."""
    return FlowValues(
        position=_scaled(position, scales.l_ref),
        velocity=_scaled(velocity, scales.v_ref),
        pressure=_scaled(pressure, scales.pressure_scale),
    )
