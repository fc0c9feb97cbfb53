"""Loss assembly: boundary-condition and physics mean-squared errors.

    L_f     = L_v + f_sigma * L_sigma + L_p (+ L_c for the ablation formulations)
    L_total = f_BC * (L_D + L_N) + L_f

Every term is a mean over points and over the components of the quantity.
An empty point set contributes zero.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from pinnflow.errors import ContractViolationError
from pinnflow.physics.residuals import ResidualVector


@dataclass
class LossBreakdown:
    """Loss components of one evaluation."""

    l_d: float = 0.0
    l_n: float = 0.0
    l_v: float = 0.0
    l_sigma: float = 0.0
    l_p: float = 0.0
    l_c: float = 0.0
    f_bc: float = 1.0
    f_sigma: float = 1.0

    @property
    def l_f(self) -> float:
        return self.l_v + self.f_sigma * self.l_sigma + self.l_p + self.l_c

    @property
    def l_total(self) -> float:
        return self.f_bc * (self.l_d + self.l_n) + self.l_f

    def as_dict(self) -> dict[str, float]:
        data = asdict(self)
        data["l_f"] = self.l_f
        data["l_total"] = self.l_total
        return data


def mse(values: np.ndarray | None) -> float:
    """Mean of squares over all entries; zero for an empty or missing array."""
    if values is None or values.size == 0:
        return 0.0
    return float(np.mean(values * values))


def mse_cotangent(values: np.ndarray | None, weight: float = 1.0) -> np.ndarray | None:
    """Gradient of ``weight * mse(values)`` with respect to ``values``."""
    if values is None or values.size == 0:
        return None if values is None else np.zeros_like(values)
    return (2.0 * weight / values.size) * values


def assemble_loss(
    residuals: ResidualVector | None,
    dirichlet_error: np.ndarray | None,
    neumann_error: np.ndarray | None,
    f_bc: float,
    f_sigma: float,
) -> LossBreakdown:
    """Combine per-point residuals and boundary errors into the loss terms.

    ``dirichlet_error`` is v*_pred - v*_D over the Dirichlet points and
    ``neumann_error`` is p*_pred - p*_N over the Neumann points.
    """
    sizes = [
        0 if residuals is None else len(residuals),
        0 if dirichlet_error is None else dirichlet_error.shape[0],
        0 if neumann_error is None else neumann_error.shape[0],
    ]
    if sum(sizes) == 0:
        raise ContractViolationError("loss needs at least one nonempty point set")
    breakdown = LossBreakdown(l_d=mse(dirichlet_error), l_n=mse(neumann_error), f_bc=f_bc, f_sigma=f_sigma)
    if residuals is not None:
        breakdown.l_v = mse(residuals.momentum)
        breakdown.l_sigma = mse(residuals.stress)
        breakdown.l_p = mse(residuals.trace)
        breakdown.l_c = mse(residuals.continuity)
    return breakdown


def physics_loss_cotangent(residuals: ResidualVector, f_sigma: float) -> ResidualVector:
    """Gradient of L_f with respect to each residual array."""
    return ResidualVector(
        momentum=mse_cotangent(residuals.momentum),
        stress=mse_cotangent(residuals.stress, f_sigma),
        trace=mse_cotangent(residuals.trace),
        continuity=mse_cotangent(residuals.continuity),
    )
