"""Steady incompressible Navier-Stokes residuals in nondimensional form.

Mixed-variable form (stream function, pressure, Cauchy stress):

    R_momentum = (v . grad) v - div(sigma)
    R_stress   = (1/Re) (grad v + grad v^T) - p I - sigma
    R_trace    = p + tr(sigma) / n_sd

The ablation formulations add a continuity residual tr(grad v); the
no-stress variant replaces the stress divergence by -grad p + (1/Re) lap v.

The Neumann part of the boundary carries a traction n . sigma = t in general;
here only prescribed pressure (a pressure outlet) is supported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pinnflow.config import Formulation
from pinnflow.errors import ContractViolationError
from pinnflow.network.kinematics import KinematicState
from pinnflow.network.layout import SIGMA_PAIRS


@dataclass
class ResidualVector:
    """Per-point residuals; stress holds the unique components in layout order."""

    momentum: np.ndarray
    stress: np.ndarray | None = None
    trace: np.ndarray | None = None
    continuity: np.ndarray | None = None

    def __len__(self) -> int:
        return self.momentum.shape[0]


def _check_reynolds(re: float) -> None:
    if not re > 0.0:
        raise ContractViolationError(f"Reynolds number must be positive, got {re}")


def compute_residuals(
    state: KinematicState,
    re: float,
    n_sd: int,
    formulation: Formulation = Formulation.MIXED,
) -> ResidualVector:
    """Residuals of the governing equations at each point of ``state``."""
    _check_reynolds(re)
    if state.grad_v is None:
        raise ContractViolationError("residuals need the velocity gradient")
    v, grad_v, p = state.velocity, state.grad_v, state.pressure
    convection = np.einsum("nb,nab->na", v, grad_v)

    if formulation is Formulation.NO_STRESS:
        momentum = convection + state.grad_p - state.lap_v / re
        return ResidualVector(momentum=momentum, continuity=np.trace(grad_v, axis1=1, axis2=2))

    sigma = state.sigma
    residual = ResidualVector(momentum=convection - state.div_sigma)
    strain = (grad_v + np.swapaxes(grad_v, 1, 2)) / re
    full = strain - p[:, None, None] * np.eye(n_sd) - sigma
    residual.stress = np.stack([full[:, a, b] for a, b in SIGMA_PAIRS[n_sd]], axis=1)
    residual.trace = p + np.trace(sigma, axis1=1, axis2=2) / n_sd
    if formulation is Formulation.NO_STREAM_FUNCTION:
        residual.continuity = np.trace(grad_v, axis1=1, axis2=2)
    return residual


def residuals_adjoint(
    cotangent: ResidualVector,
    state: KinematicState,
    re: float,
    n_sd: int,
    formulation: Formulation = Formulation.MIXED,
) -> KinematicState:
    """Pull residual cotangents back onto the kinematic quantities."""
    _check_reynolds(re)
    v, grad_v = state.velocity, state.grad_v
    n = v.shape[0]
    g_mom = cotangent.momentum
    out = KinematicState(
        velocity=np.einsum("na,nab->nb", g_mom, grad_v),
        grad_v=np.einsum("na,nb->nab", g_mom, v),
        pressure=np.zeros(n),
    )

    if formulation is Formulation.NO_STRESS:
        out.grad_p = g_mom.copy()
        out.lap_v = -g_mom / re
    else:
        out.div_sigma = -g_mom
        out.sigma = np.zeros((n, n_sd, n_sd))
        if cotangent.stress is not None:
            for column, (a, b) in enumerate(SIGMA_PAIRS[n_sd]):
                g = cotangent.stress[:, column]
                out.grad_v[:, a, b] += g / re
                out.grad_v[:, b, a] += g / re
                out.sigma[:, a, b] -= g
                if a == b:
                    out.pressure -= g
        if cotangent.trace is not None:
            out.pressure += cotangent.trace
            for a in range(n_sd):
                out.sigma[:, a, a] += cotangent.trace / n_sd

    if cotangent.continuity is not None:
        for a in range(n_sd):
            out.grad_v[:, a, a] += cotangent.continuity
    return out
