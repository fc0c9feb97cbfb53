"""Training objective: total loss and exact parameter gradient on one batch.

Each point population gets its own loss evaluator, evaluated at the lowest
derivative order it needs. The volume term needs second input derivatives,
the Dirichlet term only first (velocity is a curl of the stream function)
and the Neumann term only values.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from pinnflow.autodiff.core import (
    BundleAdjoint,
    DerivativeBundle,
    forward_with_derivatives,
    loss_parameter_gradient,
)
from pinnflow.config import Formulation
from pinnflow.errors import DimensionMismatchError, NonFiniteLossError
from pinnflow.network.kinematics import KinematicState, kinematics_adjoint, kinematics_from_bundle
from pinnflow.network.layout import OutputLayout
from pinnflow.network.params import NetworkParams
from pinnflow.physics.loss import (
    LossBreakdown,
    assemble_loss,
    mse,
    mse_cotangent,
    physics_loss_cotangent,
)
from pinnflow.physics.residuals import ResidualVector, compute_residuals, residuals_adjoint

logger = logging.getLogger(__name__)


@dataclass
class TrainingBatch:
    """Nondimensional network inputs and labels of one minibatch.

    Inputs are (N, n_sd) or (N, n_sd + 1) when k is a network input.
    """

    volume: np.ndarray
    dirichlet: np.ndarray
    dirichlet_velocity: np.ndarray
    neumann: np.ndarray
    neumann_pressure: np.ndarray
    index: int = 0
    provenance: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.dirichlet.shape[0] != self.dirichlet_velocity.shape[0]:
            raise DimensionMismatchError("every Dirichlet point needs a velocity label")
        if self.neumann.shape[0] != self.neumann_pressure.shape[0]:
            raise DimensionMismatchError("every Neumann point needs a pressure label")

    @property
    def size(self) -> int:
        return self.volume.shape[0] + self.dirichlet.shape[0] + self.neumann.shape[0]

    def counts(self) -> dict[str, int]:
        return {"f": self.volume.shape[0], "D": self.dirichlet.shape[0], "N": self.neumann.shape[0]}


def dirichlet_order(layout: OutputLayout) -> int:
    return 1 if layout.formulation is Formulation.MIXED else 0


class VolumeLoss:
    """Physics loss L_f over the volume points."""

    def __init__(self, layout: OutputLayout, re: float, f_sigma: float) -> None:
        self.layout = layout
        self.re = re
        self.f_sigma = f_sigma
        self.residuals: ResidualVector | None = None

    def residuals_of(self, bundle: DerivativeBundle) -> tuple[KinematicState, ResidualVector]:
        state = kinematics_from_bundle(bundle, self.layout)
        return state, compute_residuals(state, self.re, self.layout.n_sd, self.layout.formulation)

    def __call__(self, bundle: DerivativeBundle) -> tuple[float, BundleAdjoint]:
        state, residuals = self.residuals_of(bundle)
        self.residuals = residuals
        loss = mse(residuals.momentum) + self.f_sigma * mse(residuals.stress) + mse(residuals.trace)
        loss += mse(residuals.continuity)
        cotangent = residuals_adjoint(
            physics_loss_cotangent(residuals, self.f_sigma),
            state,
            self.re,
            self.layout.n_sd,
            self.layout.formulation,
        )
        return loss, kinematics_adjoint(cotangent, bundle, self.layout)


class DirichletLoss:
    """Weighted velocity mismatch ``weight * L_D`` over the Dirichlet points."""

    def __init__(self, layout: OutputLayout, target: np.ndarray, weight: float = 1.0) -> None:
        self.layout = layout
        self.target = target
        self.weight = weight
        self.error: np.ndarray | None = None

    def __call__(self, bundle: DerivativeBundle) -> tuple[float, BundleAdjoint]:
        state = kinematics_from_bundle(bundle, self.layout, with_gradients=False)
        self.error = state.velocity - self.target
        cotangent = KinematicState(velocity=mse_cotangent(self.error, self.weight))
        return self.weight * mse(self.error), kinematics_adjoint(cotangent, bundle, self.layout)


class NeumannLoss:
    """Weighted pressure mismatch ``weight * L_N`` over the Neumann points."""

    def __init__(self, layout: OutputLayout, target: np.ndarray, weight: float = 1.0) -> None:
        self.layout = layout
        self.target = target
        self.weight = weight
        self.error: np.ndarray | None = None

    def __call__(self, bundle: DerivativeBundle) -> tuple[float, BundleAdjoint]:
        self.error = bundle.value[:, self.layout.pressure] - self.target
        adjoint = BundleAdjoint.zeros_like(bundle)
        adjoint.value[:, self.layout.pressure] = mse_cotangent(self.error, self.weight)
        return self.weight * mse(self.error), adjoint


class PhysicsObjective:
    """L_total and its gradient over the flat parameter vector for a fixed batch.

    Calling the objective with a parameter vector returns ``(loss, gradient)``;
    the loss components of the most recent finite call are kept in ``breakdown``.
    A non-finite loss comes back as ``(inf, nan gradient)`` so a line search can
    shrink its trial step; ``evaluate`` raises ``NonFiniteLossError`` instead.
    """

    def __init__(
        self,
        template: NetworkParams,
        batch: TrainingBatch,
        layout: OutputLayout,
        re: float,
        f_bc: float,
        f_sigma: float,
        workers: int = 1,
    ) -> None:
        self.template = template
        self.batch = batch
        self.layout = layout
        self.f_bc = f_bc
        self.f_sigma = f_sigma
        self.workers = workers
        self.volume = VolumeLoss(layout, re, f_sigma)
        self.dirichlet = DirichletLoss(layout, batch.dirichlet_velocity, f_bc)
        self.neumann = NeumannLoss(layout, batch.neumann_pressure, f_bc)
        self.breakdown: LossBreakdown | None = None
        self.evaluations = 0

    def evaluate(self, params: NetworkParams) -> tuple[float, np.ndarray, LossBreakdown]:
        """Loss, flat gradient and loss components at ``params``."""
        grad = np.zeros(params.n_params)
        terms = (
            (self.volume, self.batch.volume, self.layout.derivative_order),
            (self.dirichlet, self.batch.dirichlet, dirichlet_order(self.layout)),
            (self.neumann, self.batch.neumann, 0),
        )
        for evaluator, points, order in terms:
            _, part = loss_parameter_gradient(
                params, evaluator, points, order=order, workers=self.workers, batch_index=self.batch.index
            )
            grad += part.values
        self.breakdown = assemble_loss(
            self.volume.residuals if self.batch.volume.shape[0] else None,
            self.dirichlet.error,
            self.neumann.error,
            self.f_bc,
            self.f_sigma,
        )
        self.evaluations += 1
        return self.breakdown.l_total, grad, self.breakdown

    def __call__(self, vector: np.ndarray) -> tuple[float, np.ndarray]:
        try:
            loss, grad, _ = self.evaluate(self.template.with_vector(vector))
        except NonFiniteLossError as exc:
            logger.debug("trial point rejected: %s", exc)
            return np.inf, np.full(self.template.n_params, np.nan)
        return loss, grad


def loss_breakdown(
    params: NetworkParams,
    batch: TrainingBatch,
    layout: OutputLayout,
    re: float,
    f_bc: float,
    f_sigma: float,
    workers: int = 1,
) -> LossBreakdown:
    """Loss components without the reverse sweep."""
    residuals = dirichlet_error = neumann_error = None
    if batch.volume.shape[0]:
        bundle = forward_with_derivatives(params, batch.volume, layout.derivative_order, workers)
        _, residuals = VolumeLoss(layout, re, f_sigma).residuals_of(bundle)
    if batch.dirichlet.shape[0]:
        bundle = forward_with_derivatives(params, batch.dirichlet, dirichlet_order(layout), workers)
        state = kinematics_from_bundle(bundle, layout, with_gradients=False)
        dirichlet_error = state.velocity - batch.dirichlet_velocity
    if batch.neumann.shape[0]:
        bundle = forward_with_derivatives(params, batch.neumann, 0, workers)
        neumann_error = bundle.value[:, layout.pressure] - batch.neumann_pressure
    return assemble_loss(residuals, dirichlet_error, neumann_error, f_bc, f_sigma)
