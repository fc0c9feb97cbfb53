"""Exact input derivatives of a dense network and their parameter gradients.

Values, input Jacobians and input Hessians are pushed forward layer by layer.
Parameter gradients come from a reverse sweep over that augmented forward
computation, so paths through the Jacobian and Hessian are differentiated
exactly (third-order mixed derivatives overall).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from pinnflow.config import Activation
from pinnflow.errors import DimensionMismatchError, NonFiniteLossError, UnsupportedConfigurationError
from pinnflow.network.params import NetworkParams

FLOAT_BYTES = 8


@dataclass
class DerivativeBundle:
    """Batched network outputs with exact input derivatives.

    value: (N, outputs); jacobian: (N, outputs, inputs);
    hessian: (N, outputs, inputs, inputs). Orders that were not requested are None.
    """

    value: np.ndarray
    jacobian: np.ndarray | None = None
    hessian: np.ndarray | None = None

    @property
    def order(self) -> int:
        if self.hessian is not None:
            return 2
        return 1 if self.jacobian is not None else 0

    def __len__(self) -> int:
        return self.value.shape[0]

    def select(self, index: slice | np.ndarray) -> DerivativeBundle:
        return DerivativeBundle(
            value=self.value[index],
            jacobian=None if self.jacobian is None else self.jacobian[index],
            hessian=None if self.hessian is None else self.hessian[index],
        )

    @classmethod
    def concatenate(cls, parts: list[DerivativeBundle]) -> DerivativeBundle:
        first = parts[0]
        return cls(
            value=np.concatenate([p.value for p in parts]),
            jacobian=None if first.jacobian is None else np.concatenate([p.jacobian for p in parts]),
            hessian=None if first.hessian is None else np.concatenate([p.hessian for p in parts]),
        )


@dataclass
class BundleAdjoint:
    """Cotangents of a scalar loss with respect to each bundle entry."""

    value: np.ndarray
    jacobian: np.ndarray | None = None
    hessian: np.ndarray | None = None

    @classmethod
    def zeros_like(cls, bundle: DerivativeBundle) -> BundleAdjoint:
        return cls(
            value=np.zeros_like(bundle.value),
            jacobian=None if bundle.jacobian is None else np.zeros_like(bundle.jacobian),
            hessian=None if bundle.hessian is None else np.zeros_like(bundle.hessian),
        )

    def select(self, index: slice) -> BundleAdjoint:
        return BundleAdjoint(
            value=self.value[index],
            jacobian=None if self.jacobian is None else self.jacobian[index],
            hessian=None if self.hessian is None else self.hessian[index],
        )


@dataclass(frozen=True)
class ParamGradient:
    """Loss gradient over every weight and bias in canonical layer-major order."""

    values: np.ndarray

    def __len__(self) -> int:
        return self.values.shape[0]


class LossEvaluator(Protocol):
    """Scalar loss of a bundle together with its bundle cotangents."""

    def __call__(self, bundle: DerivativeBundle) -> tuple[float, BundleAdjoint]: ...


@dataclass
class _LayerTape:
    s: np.ndarray
    jz: np.ndarray | None
    hz: np.ndarray | None


# ── activations ────────────────────────────────────────────────────────


def _activation_derivatives(
    activation: Activation, z: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(s, s', s'') of the activation at z."""
    if activation is Activation.TANH:
        s = np.tanh(z)
        s1 = 1.0 - s * s
        return s, s1, -2.0 * s * s1
    if activation is Activation.LINEAR:
        return z, np.ones_like(z), np.zeros_like(z)
    return np.maximum(z, 0.0), (z > 0.0).astype(np.float64), np.zeros_like(z)


def _slopes(activation: Activation, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(s', s'') expressed through the activation output s."""
    if activation is Activation.TANH:
        s1 = 1.0 - s * s
        return s1, -2.0 * s * s1
    if activation is Activation.LINEAR:
        return np.ones_like(s), np.zeros_like(s)
    return (s > 0.0).astype(np.float64), np.zeros_like(s)


def _third_derivative(activation: Activation, s: np.ndarray, s1: np.ndarray) -> np.ndarray:
    if activation is Activation.TANH:
        return s1 * (6.0 * s * s - 2.0)
    return np.zeros_like(s)


def _recover(activation: Activation, tape: _LayerTape, order: int):
    """Recompute the activation output triple from the stored pre-activation derivatives."""
    s = tape.s
    s1, s2 = _slopes(activation, s)
    j = h = None
    if order >= 1:
        j = s1[..., None] * tape.jz
    if order >= 2:
        h = s2[..., None, None] * tape.jz[..., :, None] * tape.jz[..., None, :] + s1[..., None, None] * tape.hz
    return s, s1, s2, j, h


# ── forward ────────────────────────────────────────────────────────────


def _dense_forward(w, b, a, j, h, order: int):
    n = a.shape[0]
    z = a @ w.T + b
    jz = hz = None
    if order >= 1:
        jz = np.broadcast_to(w, (n,) + w.shape).copy() if j is None else np.matmul(w, j)
    if order >= 2:
        d = jz.shape[-1]
        if h is None:
            hz = np.zeros((n, w.shape[0], d, d))
        else:
            hz = np.matmul(w, h.reshape(n, h.shape[1], d * d)).reshape(n, w.shape[0], d, d)
    return z, jz, hz


def _forward(params: NetworkParams, x: np.ndarray, order: int, keep_tape: bool):
    a, j, h = x, None, None
    tapes: list[_LayerTape] = []
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z, jz, hz = _dense_forward(w, b, a, j, h, order)
        if i == last:
            return DerivativeBundle(value=z, jacobian=jz, hessian=hz), tapes
        s, s1, s2 = _activation_derivatives(params.activation, z)
        a = s
        j = s1[..., None] * jz if order >= 1 else None
        if order >= 2:
            h = s2[..., None, None] * jz[..., :, None] * jz[..., None, :] + s1[..., None, None] * hz
        if keep_tape:
            tapes.append(_LayerTape(s=s, jz=jz, hz=hz))
    raise AssertionError("unreachable")


def _check_inputs(params: NetworkParams, points: np.ndarray, order: int) -> np.ndarray:
    if order not in (0, 1, 2):
        raise UnsupportedConfigurationError(f"derivative order must be 0, 1 or 2, got {order}")
    if order >= 1 and not params.activation.smooth:
        raise UnsupportedConfigurationError(
            f"activation '{params.activation.value}' is not differentiable; order {order} unsupported"
        )
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != params.input_width:
        raise DimensionMismatchError(
            f"points must have shape (N, {params.input_width}), got {points.shape}"
        )
    return points


def _chunk_slices(n: int, workers: int) -> list[slice]:
    workers = max(1, min(workers, n))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    return [slice(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]


def _map_ordered(fn: Callable, items: list, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def forward_with_derivatives(
    params: NetworkParams,
    points: np.ndarray,
    order: int = 2,
    workers: int = 1,
) -> DerivativeBundle:
    """Network values and exact input Jacobian/Hessian at each point."""
    points = _check_inputs(params, points, order)
    if points.shape[0] == 0:
        return _empty_bundle(params, order)
    chunks = _chunk_slices(points.shape[0], workers)
    parts = _map_ordered(lambda sl: _forward(params, points[sl], order, keep_tape=False)[0], chunks, workers)
    return parts[0] if len(parts) == 1 else DerivativeBundle.concatenate(parts)


def _empty_bundle(params: NetworkParams, order: int) -> DerivativeBundle:
    o, d = params.output_width, params.input_width
    return DerivativeBundle(
        value=np.zeros((0, o)),
        jacobian=np.zeros((0, o, d)) if order >= 1 else None,
        hessian=np.zeros((0, o, d, d)) if order >= 2 else None,
    )


# ── reverse sweep ──────────────────────────────────────────────────────


def _activation_backward(activation, tape: _LayerTape, gs, gj, gh, order: int):
    """Cotangents of (z, Jz, Hz) from cotangents of the activation output triple."""
    s = tape.s
    s1, s2 = _slopes(activation, s)
    gz = gs * s1
    gjz = ghz = None
    if order >= 1:
        jz = tape.jz
        gjz = s1[..., None] * gj
        gz = gz + s2 * np.einsum("nid,nid->ni", gj, jz)
    if order >= 2:
        jz, hz = tape.jz, tape.hz
        s3 = _third_derivative(activation, s, s1)
        ghz = s1[..., None, None] * gh
        sym = gh + np.swapaxes(gh, -1, -2)
        gjz = gjz + s2[..., None] * np.matmul(sym, jz[..., None])[..., 0]
        gz = gz + s2 * np.einsum("nidk,nidk->ni", gh, hz)
        gz = gz + s3 * np.einsum("nidk,nid,nik->ni", gh, jz, jz)
    return gz, gjz, ghz


def _backward(params: NetworkParams, x: np.ndarray, tapes: list[_LayerTape], adjoint: BundleAdjoint, order: int):
    """Flat parameter gradient for one chunk."""
    n = x.shape[0]
    grads: list[tuple[np.ndarray, np.ndarray]] = []
    gz, gjz, ghz = adjoint.value, adjoint.jacobian, adjoint.hessian
    for i in range(params.n_layers - 1, -1, -1):
        w = params.weights[i]
        if i == 0:
            a, j, h = x, None, None
        else:
            a, _, _, j, h = _recover(params.activation, tapes[i - 1], order)

        gw = gz.T @ a
        if order >= 1:
            gw = gw + (gjz.sum(axis=0) if j is None else np.tensordot(gjz, j, axes=([0, 2], [0, 2])))
        if order >= 2 and h is not None:
            gw = gw + np.tensordot(ghz, h, axes=([0, 2, 3], [0, 2, 3]))
        grads.append((gw, gz.sum(axis=0)))

        if i == 0:
            break
        ga = gz @ w
        gja = np.matmul(w.T, gjz) if order >= 1 else None
        gha = None
        if order >= 2:
            d = ghz.shape[-1]
            gha = np.matmul(w.T, ghz.reshape(n, w.shape[0], d * d)).reshape(n, w.shape[1], d, d)
        gz, gjz, ghz = _activation_backward(params.activation, tapes[i - 1], ga, gja, gha, order)

    grads.reverse()
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


def loss_parameter_gradient(
    params: NetworkParams,
    loss_evaluator: LossEvaluator,
    points: np.ndarray,
    order: int = 2,
    workers: int = 1,
    batch_index: int | None = None,
) -> tuple[float, ParamGradient]:
    """Loss of the bundle at ``points`` and its exact gradient over all parameters.

    The evaluator sees the whole batch at once; the forward and reverse sweeps
    may be split over worker threads and the chunk gradients are summed in
    chunk order.
    """
    points = _check_inputs(params, points, order)
    if points.shape[0] == 0:
        loss, _ = loss_evaluator(_empty_bundle(params, order))
        _check_finite(loss, batch_index)
        return float(loss), ParamGradient(np.zeros(params.n_params))

    chunks = _chunk_slices(points.shape[0], workers)
    forwards = _map_ordered(lambda sl: _forward(params, points[sl], order, keep_tape=True), chunks, workers)
    bundle = forwards[0][0] if len(forwards) == 1 else DerivativeBundle.concatenate([f[0] for f in forwards])

    loss, adjoint = loss_evaluator(bundle)
    _check_finite(loss, batch_index)
    if order >= 1 and adjoint.jacobian is None:
        adjoint.jacobian = np.zeros_like(bundle.jacobian)
    if order >= 2 and adjoint.hessian is None:
        adjoint.hessian = np.zeros_like(bundle.hessian)

    def sweep(item):
        sl, (_, tapes) = item
        return _backward(params, points[sl], tapes, adjoint.select(sl), order)

    parts = _map_ordered(sweep, list(zip(chunks, forwards)), workers)
    total = parts[0]
    for part in parts[1:]:
        total = total + part
    return float(loss), ParamGradient(total)


def _check_finite(loss: float, batch_index: int | None) -> None:
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"loss evaluated to {loss}", batch_index=batch_index)


def workspace_bytes(batch_size: int, layer_widths: tuple[int, ...], order: int = 2) -> int:
    """Bytes held by the tape of one forward-with-derivatives pass.

    Each hidden layer stores its activation plus the pre-activation Jacobian
    and Hessian; the output bundle is counted once.
    """
    d = layer_widths[0]
    per_unit = 1 + (d if order >= 1 else 0) + (d * d if order >= 2 else 0)
    units = sum(layer_widths[1:-1]) + layer_widths[-1]
    return batch_size * units * per_unit * FLOAT_BYTES
