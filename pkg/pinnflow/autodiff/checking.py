"""Central-difference verification of analytic network derivatives."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from pinnflow.autodiff.core import LossEvaluator, forward_with_derivatives, loss_parameter_gradient
from pinnflow.errors import ContractViolationError
from pinnflow.network.params import NetworkParams

logger = logging.getLogger(__name__)


@dataclass
class FiniteDifferenceReport:
    """Worst-case relative discrepancy per derivative kind."""

    step: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tolerance: float) -> bool:
        return self.max_error <= tolerance


def relative_discrepancy(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |analytic - numeric| scaled by the larger of the two infinity norms."""
    scale = max(float(np.max(np.abs(numeric), initial=0.0)), float(np.max(np.abs(analytic), initial=0.0)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric))) / scale


def finite_difference_check(
    params: NetworkParams,
    points: np.ndarray,
    step: float,
    orders: tuple[int, ...] = (1, 2),
    loss_evaluator: LossEvaluator | None = None,
    loss_order: int = 2,
    parameter_step: float | None = None,
    corrupt: bool = False,
) -> FiniteDifferenceReport:
    """Compare analytic derivatives against central differences.

    Order 1 differences network values, order 2 differences the analytic
    Jacobian. With a ``loss_evaluator`` the parameter gradient of that loss is
    checked as well. ``corrupt`` perturbs the analytic results so the failure
    path of callers can be exercised.
    """
    if not step > 0.0:
        raise ContractViolationError(f"finite-difference step must be positive, got {step}")
    points = np.asarray(points, dtype=np.float64)
    report = FiniteDifferenceReport(step=step)
    top = max(orders, default=0)

    if top >= 1:
        bundle = forward_with_derivatives(params, points, order=top)
        jac_fd = np.zeros_like(bundle.jacobian)
        hess_fd = np.zeros_like(bundle.hessian) if top >= 2 else None
        for j in range(params.input_width):
            shift = np.zeros(params.input_width)
            shift[j] = step
            plus = forward_with_derivatives(params, points + shift, order=min(top - 1, 1))
            minus = forward_with_derivatives(params, points - shift, order=min(top - 1, 1))
            jac_fd[:, :, j] = (plus.value - minus.value) / (2.0 * step)
            if hess_fd is not None:
                hess_fd[:, :, :, j] = (plus.jacobian - minus.jacobian) / (2.0 * step)

        jacobian = bundle.jacobian.copy()
        hessian = None if bundle.hessian is None else bundle.hessian.copy()
        if corrupt:
            jacobian[..., 0, 0] += 1e-3 * (1.0 + np.abs(jacobian[..., 0, 0]))
            if hessian is not None:
                hessian[..., 0, 0, 0] += 1e-3 * (1.0 + np.abs(hessian[..., 0, 0, 0]))
        if 1 in orders:
            report.errors["jacobian"] = relative_discrepancy(jacobian, jac_fd)
        if hess_fd is not None:
            report.errors["hessian"] = relative_discrepancy(hessian, hess_fd)

    if loss_evaluator is not None:
        h = parameter_step if parameter_step is not None else step
        _, grad = loss_parameter_gradient(params, loss_evaluator, points, order=loss_order)
        theta = params.to_vector()
        numeric = np.zeros_like(theta)
        for k in range(theta.shape[0]):
            theta[k] += h
            up = loss_evaluator(forward_with_derivatives(params.with_vector(theta), points, order=loss_order))[0]
            theta[k] -= 2.0 * h
            down = loss_evaluator(forward_with_derivatives(params.with_vector(theta), points, order=loss_order))[0]
            theta[k] += h
            numeric[k] = (up - down) / (2.0 * h)
        analytic = grad.values.copy()
        if corrupt:
            analytic[0] += 1e-3 * (1.0 + abs(analytic[0]))
        report.errors["parameters"] = relative_discrepancy(analytic, numeric)

    logger.info(
        "finite-difference check (step %g): %s",
        step,
        ", ".join(f"{k}={v:.3e}" for k, v in report.errors.items()),
    )
    return report
