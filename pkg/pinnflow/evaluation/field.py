"""Field prediction from a checkpoint, field CSV export and reference interpolation.

Field file::

    # checkpoint_id=3fa9c2d41b7e
    # scenario=cylinder-translate
    # l_ref=1.1
    # ...
    x,y,z,k,vx,vy,vz,p,extrapolated
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from pinnflow.autodiff.core import forward_with_derivatives
from pinnflow.evaluation.metrics import mass_flow_ratio
from pinnflow.errors import ContractViolationError, DimensionMismatchError, PointSetError
from pinnflow.geometry.points import AXES, VELOCITY, CollocationSet, ReferenceSolution
from pinnflow.geometry.scenarios import ScenarioSpec
from pinnflow.network.checkpoint import Checkpoint, CheckpointHeader
from pinnflow.network.kinematics import kinematics_from_bundle
from pinnflow.network.layout import OutputLayout
from pinnflow.network.params import NetworkParams
from pinnflow.physics.objective import dirichlet_order
from pinnflow.physics.scales import ReferenceScales, nondimensionalize, redimensionalize

logger = logging.getLogger(__name__)


def network_fields(
    params: NetworkParams,
    layout: OutputLayout,
    inputs: np.ndarray,
    workers: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Nondimensional (velocity, pressure) at nondimensional network inputs."""
    bundle = forward_with_derivatives(params, inputs, dirichlet_order(layout), workers)
    state = kinematics_from_bundle(bundle, layout, with_gradients=False)
    return state.velocity, state.pressure


def header_scales(header: CheckpointHeader) -> ReferenceScales:
    return ReferenceScales(l_ref=header.l_ref, v_ref=header.v_ref, rho=header.rho, mu=header.mu)


@dataclass
class FieldPrediction:
    """Predicted velocity (m/s) and pressure (Pa) at positions (m) for parameter k (m)."""

    positions: np.ndarray
    k: float
    velocity: np.ndarray
    pressure: np.ndarray
    checkpoint_id: str = ""
    scenario: str = ""
    extrapolated: bool = False

    def __len__(self) -> int:
        return self.positions.shape[0]


def predict_field(
    checkpoint: Checkpoint,
    positions: np.ndarray,
    k: float | None = None,
    workers: int = 1,
) -> FieldPrediction:
    """Evaluate the network and the stream-function curl at SI positions.

    k outside the trained range is allowed; the result is flagged and a
    warning logged.
    """
    header = checkpoint.header
    positions = np.asarray(positions, dtype=np.float64)
    if positions.size == 0:
        positions = positions.reshape(0, header.n_sd)
    if positions.ndim != 2 or positions.shape[1] != header.n_sd:
        raise DimensionMismatchError(f"query points must have {header.n_sd} coordinates, got shape {positions.shape}")
    extrapolated = False
    if header.parametric:
        if k is None:
            raise ContractViolationError("parametric checkpoint needs a value for k")
        lo, hi = header.k_range if header.k_range is not None else (k, k)
        extrapolated = not lo <= k <= hi
        if extrapolated:
            logger.warning("k=%g lies outside the trained range [%g, %g]; extrapolating", k, lo, hi)
    scales = header_scales(header)
    inputs = nondimensionalize(scales, position=positions).position
    if header.parametric:
        inputs = np.column_stack([inputs, np.full(len(inputs), k / header.k_scale)])
    velocity, pressure = network_fields(checkpoint.params, header.layout, inputs, workers)
    si = redimensionalize(scales, velocity=velocity, pressure=pressure)
    return FieldPrediction(
        positions=positions,
        k=float(k) if k is not None else 0.0,
        velocity=si.velocity,
        pressure=si.pressure,
        checkpoint_id=checkpoint.checkpoint_id,
        scenario=header.scenario,
        extrapolated=extrapolated,
    )


def export_field(prediction: FieldPrediction, path: str | Path, header: CheckpointHeader | None = None) -> Path:
    """Write a prediction as CSV with ``#`` metadata lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = prediction.positions.shape[1] if prediction.positions.ndim == 2 else 3
    frame = pd.DataFrame(prediction.positions, columns=list(AXES[:n]))
    frame["k"] = prediction.k
    for i, name in enumerate(VELOCITY[:n]):
        frame[name] = prediction.velocity[:, i]
    frame["p"] = prediction.pressure
    frame["extrapolated"] = int(prediction.extrapolated)
    meta = {"checkpoint_id": prediction.checkpoint_id, "scenario": prediction.scenario}
    if header is not None:
        meta.update(l_ref=header.l_ref, v_ref=header.v_ref, rho=header.rho, mu=header.mu)
    with open(path, "w", newline="") as f:
        for key, value in meta.items():
            f.write(f"# {key}={value}\n")
        frame.to_csv(f, index=False, float_format="%.17g")
    return path


def read_field(path: str | Path) -> FieldPrediction:
    """Load a file written by ``export_field``."""
    path = Path(path)
    meta = {}
    with open(path) as f:
        for line in f:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
    frame = pd.read_csv(path, comment="#")
    n = 3 if "z" in frame.columns else 2
    try:
        positions = frame[list(AXES[:n])].to_numpy(dtype=np.float64)
        velocity = frame[list(VELOCITY[:n])].to_numpy(dtype=np.float64)
        pressure = frame["p"].to_numpy(dtype=np.float64)
    except KeyError as exc:
        raise PointSetError(f"{path}: missing field column {exc}") from exc
    return FieldPrediction(
        positions=positions,
        k=float(frame["k"].iloc[0]) if len(frame) else 0.0,
        velocity=velocity,
        pressure=pressure,
        checkpoint_id=meta.get("checkpoint_id", ""),
        scenario=meta.get("scenario", ""),
        extrapolated=bool(len(frame) and frame["extrapolated"].iloc[0]),
    )


@dataclass
class InterpolatedReference:
    """Reference values at query points with the nearest-match distances."""

    velocity: np.ndarray
    pressure: np.ndarray
    source: np.ndarray
    distance: np.ndarray

    @property
    def mean_distance(self) -> float:
        return float(self.distance.mean()) if self.distance.size else 0.0

    @property
    def max_distance(self) -> float:
        return float(self.distance.max()) if self.distance.size else 0.0


def nearest_reference_interpolation(reference: ReferenceSolution, query: np.ndarray) -> InterpolatedReference:
    """Assign each query point the values of its nearest reference point."""
    if len(reference) == 0:
        raise ContractViolationError("reference solution is empty")
    query = np.asarray(query, dtype=np.float64)
    if query.ndim != 2 or query.shape[1] != reference.n_sd:
        raise DimensionMismatchError(f"query points must have {reference.n_sd} coordinates")
    if query.shape[0] == 0:
        return InterpolatedReference(
            velocity=np.zeros((0, reference.n_sd)), pressure=np.zeros(0), source=np.zeros(0, dtype=int), distance=np.zeros(0)
        )
    distance, source = cKDTree(reference.positions).query(query, k=1)
    source = np.asarray(source, dtype=int)
    logger.info(
        "matched %d query points: mean distance %.3e m, max %.3e m", len(source), distance.mean(), distance.max()
    )
    return InterpolatedReference(
        velocity=reference.velocity[source],
        pressure=reference.pressure[source],
        source=source,
        distance=np.asarray(distance, dtype=np.float64),
    )


def outlet_mass_flow_ratio(
    checkpoint: Checkpoint,
    points: CollocationSet,
    scenario: ScenarioSpec,
    k: float,
    left: str = "left",
    right: str = "right",
    workers: int = 1,
) -> float:
    """Mass-flow ratio between two scenario outlets for geometry parameter k."""
    neumann = points.neumann
    ks = np.full(len(neumann), float(k))
    inside = scenario.inside_fdn.evaluate(neumann.positions, ks)
    if neumann.area is None:
        raise ContractViolationError("outlet points carry no area weights")
    flows = []
    for name in (left, right):
        outlet = scenario.outlet(name)
        rows = np.flatnonzero(inside & outlet.region.evaluate(neumann.positions, ks))
        prediction = predict_field(checkpoint, neumann.positions[rows], k, workers)
        flows.append((prediction.velocity, neumann.area[rows], np.asarray(outlet.normal)))
    return mass_flow_ratio(*flows[0], *flows[1], rho=checkpoint.header.rho)
