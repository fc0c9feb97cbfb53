"""Trainable state of a dense feed-forward network."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pinnflow.config import Activation, Formulation
from pinnflow.errors import ContractViolationError, DimensionMismatchError
from pinnflow.network.layout import OutputLayout


@dataclass(frozen=True, eq=False)
class NetworkParams:
    """Weights and biases of a dense network.

    ``weights[l]`` has shape (out, in) and ``biases[l]`` shape (out,). The last
    layer is affine; every other layer is followed by ``activation``.
    """

    layer_widths: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: Activation = Activation.TANH
    seed: int = 0
    _offsets: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ContractViolationError(f"invalid layer widths {widths}")
        if len(self.weights) != len(widths) - 1 or len(self.biases) != len(widths) - 1:
            raise DimensionMismatchError("weights/biases do not match the number of layers")
        offsets = [0]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (widths[i + 1], widths[i]) or b.shape != (widths[i + 1],):
                raise DimensionMismatchError(
                    f"layer {i}: expected W{(widths[i + 1], widths[i])}, b({widths[i + 1]},), "
                    f"got W{w.shape}, b{b.shape}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ContractViolationError(f"layer {i} holds non-finite parameters")
            offsets.append(offsets[-1] + w.size + b.size)
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "_offsets", tuple(offsets))

    @property
    def input_width(self) -> int:
        return self.layer_widths[0]

    @property
    def output_width(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return self._offsets[-1]

    def to_vector(self) -> np.ndarray:
        """Flatten into the canonical layer-major order W1, b1, W2, b2, ..."""
        parts: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts).astype(np.float64, copy=True)

    def with_vector(self, vector: np.ndarray) -> NetworkParams:
        """New params with the same architecture and values from a flat vector."""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.n_params,):
            raise DimensionMismatchError(f"expected {self.n_params} parameters, got {vector.shape}")
        weights, biases = [], []
        for i, w in enumerate(self.weights):
            start = self._offsets[i]
            mid = start + w.size
            weights.append(vector[start:mid].reshape(w.shape).copy())
            biases.append(vector[mid:self._offsets[i + 1]].copy())
        return NetworkParams(
            layer_widths=self.layer_widths,
            weights=tuple(weights),
            biases=tuple(biases),
            activation=self.activation,
            seed=self.seed,
        )

    def layer_slices(self) -> list[tuple[slice, slice]]:
        """(weight, bias) slices of each layer inside the flat vector."""
        slices = []
        for i, w in enumerate(self.weights):
            start = self._offsets[i]
            mid = start + w.size
            slices.append((slice(start, mid), slice(mid, self._offsets[i + 1])))
        return slices


def init_params(
    hidden_layers: int,
    width: int,
    n_sd: int,
    parametric: bool,
    seed: int,
    formulation: Formulation = Formulation.MIXED,
    activation: Activation = Activation.TANH,
    rng: np.random.Generator | None = None,
) -> NetworkParams:
    """Glorot-uniform weights and zero biases.

    Input width is ``n_sd`` plus one when the geometric parameter k is an
    input; output width follows the formulation's ``OutputLayout``.
    """
    if hidden_layers < 1 or width < 1:
        raise ContractViolationError("hidden_layers and width must be at least 1")
    rng = rng if rng is not None else np.random.default_rng(seed)
    layout = OutputLayout.for_formulation(n_sd, formulation)
    widths = (n_sd + (1 if parametric else 0),) + (width,) * hidden_layers + (layout.size,)

    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(
        layer_widths=widths,
        weights=tuple(weights),
        biases=tuple(biases),
        activation=activation,
        seed=seed,
    )
