"""Kinematic map from network outputs to velocity, pressure and stress.

In the mixed formulation the velocity is the curl of the stream-function
outputs (a rotated gradient in 2D), so it is divergence free by construction
and never an independent output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pinnflow.autodiff.core import BundleAdjoint, DerivativeBundle
from pinnflow.config import Formulation
from pinnflow.errors import ContractViolationError
from pinnflow.network.layout import OutputLayout


@dataclass
class KinematicState:
    """Per-point flow quantities in nondimensional form.

    velocity (N, n); grad_v (N, n, n) with grad_v[:, i, m] = dv_i/dx_m;
    pressure (N,); sigma (N, n, n); div_sigma (N, n). ``grad_p`` and
    ``lap_v`` are only filled by the no-stress formulation. The same type
    carries cotangents during the reverse sweep, with None meaning zero.
    """

    velocity: np.ndarray | None = None
    grad_v: np.ndarray | None = None
    pressure: np.ndarray | None = None
    sigma: np.ndarray | None = None
    div_sigma: np.ndarray | None = None
    grad_p: np.ndarray | None = None
    lap_v: np.ndarray | None = None

    def __len__(self) -> int:
        return 0 if self.pressure is None else self.pressure.shape[0]


def _required_order(layout: OutputLayout, with_gradients: bool) -> int:
    if not with_gradients:
        return 1 if layout.formulation is Formulation.MIXED else 0
    return layout.derivative_order


def kinematics_from_bundle(
    bundle: DerivativeBundle,
    layout: OutputLayout,
    with_gradients: bool = True,
) -> KinematicState:
    """Assemble velocity, velocity gradient, pressure and stress from a bundle.

    With ``with_gradients`` False only velocity and pressure are built, which
    is all boundary conditions need.
    """
    need = _required_order(layout, with_gradients)
    if bundle.order < need:
        raise ContractViolationError(
            f"{layout.formulation.value} kinematics need order-{need} derivatives, bundle has order {bundle.order}"
        )
    n = layout.n_sd
    state = KinematicState(pressure=bundle.value[:, layout.pressure])

    if layout.formulation is Formulation.MIXED:
        curl = layout.curl_tensor()
        psi = list(layout.psi)
        state.velocity = np.einsum("ijc,ncj->ni", curl, bundle.jacobian[:, psi, :n])
        if with_gradients:
            state.grad_v = np.einsum("ijc,ncjm->nim", curl, bundle.hessian[:, psi, :n, :n])
    else:
        vel = list(layout.velocity)
        state.velocity = bundle.value[:, vel]
        if with_gradients:
            state.grad_v = bundle.jacobian[:, vel, :n]

    if not with_gradients:
        return state

    if layout.sigma:
        table = layout.stress_slots()
        state.sigma = bundle.value[:, table]
        state.div_sigma = np.stack(
            [sum(bundle.jacobian[:, table[a, b], b] for b in range(n)) for a in range(n)], axis=1
        )
    if layout.formulation is Formulation.NO_STRESS:
        vel = list(layout.velocity)
        state.grad_p = bundle.jacobian[:, layout.pressure, :n]
        state.lap_v = np.einsum("nimm->ni", bundle.hessian[:, vel, :n, :n])
    return state


def kinematics_adjoint(
    cotangent: KinematicState,
    bundle: DerivativeBundle,
    layout: OutputLayout,
) -> BundleAdjoint:
    """Pull cotangents of kinematic quantities back onto the bundle entries."""
    n = layout.n_sd
    adj = BundleAdjoint.zeros_like(bundle)

    if cotangent.pressure is not None:
        adj.value[:, layout.pressure] += cotangent.pressure

    if layout.formulation is Formulation.MIXED:
        curl = layout.curl_tensor()
        for c, slot in enumerate(layout.psi):
            if cotangent.velocity is not None:
                adj.jacobian[:, slot, :n] += np.einsum("ij,ni->nj", curl[:, :, c], cotangent.velocity)
            if cotangent.grad_v is not None:
                adj.hessian[:, slot, :n, :n] += np.einsum("ij,nim->njm", curl[:, :, c], cotangent.grad_v)
    else:
        for i, slot in enumerate(layout.velocity):
            if cotangent.velocity is not None:
                adj.value[:, slot] += cotangent.velocity[:, i]
            if cotangent.grad_v is not None:
                adj.jacobian[:, slot, :n] += cotangent.grad_v[:, i, :]
            if cotangent.lap_v is not None:
                for m in range(n):
                    adj.hessian[:, slot, m, m] += cotangent.lap_v[:, i]

    if layout.sigma:
        table = layout.stress_slots()
        for a in range(n):
            for b in range(n):
                if cotangent.sigma is not None:
                    adj.value[:, table[a, b]] += cotangent.sigma[:, a, b]
                if cotangent.div_sigma is not None:
                    adj.jacobian[:, table[a, b], b] += cotangent.div_sigma[:, a]

    if cotangent.grad_p is not None:
        adj.jacobian[:, layout.pressure, :n] += cotangent.grad_p
    return adj
