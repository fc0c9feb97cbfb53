"""Scalar quality measures of a predicted flow field."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pinnflow.errors import ContractViolationError, DimensionMismatchError, EvaluationError

COMPONENTS = ("vx", "vy", "vz")


def test_loss(
    velocity: np.ndarray,
    pressure: np.ndarray,
    ref_velocity: np.ndarray,
    ref_pressure: np.ndarray,
) -> float:
    """Relative L2 error of (v, p) pooled over all components and points."""
    velocity, ref_velocity = np.asarray(velocity, dtype=np.float64), np.asarray(ref_velocity, dtype=np.float64)
    pressure, ref_pressure = np.asarray(pressure, dtype=np.float64), np.asarray(ref_pressure, dtype=np.float64)
    if velocity.shape != ref_velocity.shape or pressure.shape != ref_pressure.shape:
        raise DimensionMismatchError("prediction and reference are not point-aligned")
    ref_norm = np.sqrt(np.sum(ref_velocity**2) + np.sum(ref_pressure**2))
    if ref_norm == 0.0:
        raise EvaluationError("reference has zero norm; relative error undefined")
    diff_norm = np.sqrt(np.sum((velocity - ref_velocity) ** 2) + np.sum((pressure - ref_pressure) ** 2))
    return float(diff_norm / ref_norm)


# keep pytest from collecting it
test_loss.__test__ = False


@dataclass
class ErrorReport:
    """Field error against a reference, in SI units except the relative test loss."""

    l_test: float
    max_velocity_error: float
    max_velocity_location: tuple[float, ...]
    max_pressure_error: float
    max_pressure_location: tuple[float, ...]
    rms: dict[str, float] = field(default_factory=dict)
    points: int = 0

    CSV_COLUMNS = ("L_test", "max_dv", "max_dv_at", "max_dp", "max_dp_at", "rms_vx", "rms_vy", "rms_vz", "rms_p", "points")

    def render_text(self) -> str:
        def at(loc):
            return "(" + ", ".join(f"{c:.4g}" for c in loc) + ")"

        lines = [
            f"L_test            {self.l_test:.6e}",
            f"max |dv| [m/s]    {self.max_velocity_error:.6e} at {at(self.max_velocity_location)}",
            f"max |dp| [Pa]     {self.max_pressure_error:.6e} at {at(self.max_pressure_location)}",
        ]
        lines += [f"rms {name:<13} {value:.6e}" for name, value in self.rms.items()]
        lines.append(f"points            {self.points}")
        return "\n".join(lines)

    def csv_header(self) -> str:
        return ",".join(self.CSV_COLUMNS)

    def to_csv_row(self) -> str:
        def at(loc):
            return " ".join(repr(float(c)) for c in loc)

        values = [
            repr(self.l_test),
            repr(self.max_velocity_error),
            at(self.max_velocity_location),
            repr(self.max_pressure_error),
            at(self.max_pressure_location),
            *(repr(self.rms[name]) if name in self.rms else "" for name in ("vx", "vy", "vz", "p")),
            str(self.points),
        ]
        return ",".join(values)


def error_report(
    positions: np.ndarray,
    velocity: np.ndarray,
    pressure: np.ndarray,
    ref_velocity: np.ndarray,
    ref_pressure: np.ndarray,
    l_test: float,
) -> ErrorReport:
    """Maxima with their locations and per-component RMS of the SI-unit errors."""
    if len(positions) == 0:
        raise EvaluationError("no points to compare")
    dv = velocity - ref_velocity
    dp = pressure - ref_pressure
    dv_mag = np.linalg.norm(dv, axis=1)
    iv, ip = int(np.argmax(dv_mag)), int(np.argmax(np.abs(dp)))
    rms = {COMPONENTS[i]: float(np.sqrt(np.mean(dv[:, i] ** 2))) for i in range(dv.shape[1])}
    rms["p"] = float(np.sqrt(np.mean(dp**2)))
    return ErrorReport(
        l_test=l_test,
        max_velocity_error=float(dv_mag[iv]),
        max_velocity_location=tuple(float(c) for c in positions[iv]),
        max_pressure_error=float(abs(dp[ip])),
        max_pressure_location=tuple(float(c) for c in positions[ip]),
        rms=rms,
        points=len(positions),
    )


def _outlet_flux(velocity: np.ndarray, area: np.ndarray, normal: np.ndarray, rho: float, name: str) -> float:
    area = np.asarray(area, dtype=np.float64)
    if area.shape != (velocity.shape[0],) or not np.all(area > 0.0):
        raise ContractViolationError(f"{name} outlet needs a positive area weight per point")
    normal = np.broadcast_to(np.asarray(normal, dtype=np.float64), velocity.shape)
    if not np.allclose(np.linalg.norm(normal, axis=1), 1.0):
        raise ContractViolationError(f"{name} outlet normals must have unit length")
    return float(rho * np.sum(area * np.einsum("ni,ni->n", velocity, normal)))


def mass_flow_ratio(
    left_velocity: np.ndarray,
    left_area: np.ndarray,
    left_normal: np.ndarray,
    right_velocity: np.ndarray,
    right_area: np.ndarray,
    right_normal: np.ndarray,
    rho: float = 1.0,
) -> float:
    """Ratio of area-weighted outflow rates, left over right."""
    m_left = _outlet_flux(left_velocity, left_area, left_normal, rho, "left")
    m_right = _outlet_flux(right_velocity, right_area, right_normal, rho, "right")
    if m_right <= 0.0:
        raise EvaluationError(f"right outlet mass flow is {m_right:.4e} kg/s; reverse flow dominates")
    return m_left / m_right
