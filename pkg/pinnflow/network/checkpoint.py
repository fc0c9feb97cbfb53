"""Checkpoint files: a header followed by parameters in canonical order.

Text encoding (``.json``)::

    {"header": {...}, "parameters": [w, ...]}

Floats are written with their shortest round-trip repr, so a reload is exact.

Binary encoding (``.npz``): an uncompressed numpy archive with a ``header``
entry (the same JSON object as a string) and a float64 ``parameters`` array.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict

from pinnflow.config import Activation, Formulation, TrainConfig
from pinnflow.errors import CheckpointMismatchError, ContractViolationError
from pinnflow.network.layout import OutputLayout
from pinnflow.network.params import NetworkParams

FORMAT_VERSION = 1

# Header keys that fix the parameter layout; any difference blocks a resume.
LAYOUT_KEYS = ("n_sd", "parametric", "formulation", "layer_widths", "activation")


class CheckpointHeader(BaseModel):
    """Everything needed to rebuild and redimensionalize a trained network."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    format_version: int = FORMAT_VERSION
    n_sd: int
    parametric: bool
    formulation: Formulation = Formulation.MIXED
    layer_widths: tuple[int, ...]
    activation: Activation = Activation.TANH
    l_ref: float
    v_ref: float
    rho: float
    mu: float
    seed: int
    scenario: str = "static"
    k_range: tuple[float, float] | None = None
    # k enters the network as k / k_scale
    k_scale: float = 1.0
    f_bc: float = 10.0
    f_sigma: float = 1.0
    label: str = ""

    @classmethod
    def from_config(cls, config: TrainConfig, layer_widths: tuple[int, ...], k_range, label: str = "") -> CheckpointHeader:
        net, scales = config.network, config.scales
        return cls(
            n_sd=net.n_sd,
            parametric=net.parametric,
            formulation=net.formulation,
            layer_widths=layer_widths,
            activation=net.activation,
            l_ref=scales.l_ref,
            v_ref=scales.v_ref,
            rho=scales.rho,
            mu=scales.mu,
            seed=config.seed,
            scenario=config.scenario.name,
            k_range=k_range,
            k_scale=scales.l_ref,
            f_bc=config.loss.f_bc,
            f_sigma=config.loss.f_sigma,
            label=label,
        )

    @property
    def layout(self) -> OutputLayout:
        return OutputLayout.for_formulation(self.n_sd, self.formulation)

    def layout_diff(self, other: CheckpointHeader) -> dict[str, tuple[object, object]]:
        """Layout-relevant keys whose values differ."""
        mine, theirs = self.model_dump(), other.model_dump()
        return {k: (mine[k], theirs[k]) for k in LAYOUT_KEYS if mine[k] != theirs[k]}


@dataclass(frozen=True)
class Checkpoint:
    """Header plus network parameters."""

    header: CheckpointHeader
    params: NetworkParams

    def __post_init__(self) -> None:
        if tuple(self.header.layer_widths) != self.params.layer_widths:
            raise ContractViolationError(
                f"header widths {self.header.layer_widths} do not match parameters {self.params.layer_widths}"
            )

    @property
    def checkpoint_id(self) -> str:
        """Short content hash of the parameters."""
        return hashlib.sha256(self.params.to_vector().tobytes()).hexdigest()[:12]

    def require_compatible(self, header: CheckpointHeader) -> None:
        diff = self.header.layout_diff(header)
        if diff:
            raise CheckpointMismatchError(diff)


def _params_from(header: CheckpointHeader, vector: np.ndarray) -> NetworkParams:
    widths = tuple(header.layer_widths)
    template = NetworkParams(
        layer_widths=widths,
        weights=tuple(np.zeros((o, i)) for i, o in zip(widths[:-1], widths[1:])),
        biases=tuple(np.zeros(o) for o in widths[1:]),
        activation=header.activation,
        seed=header.seed,
    )
    return template.with_vector(vector)


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> Path:
    """Write the checkpoint; the suffix selects text (.json) or binary (.npz)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = checkpoint.header.model_dump(mode="json")
    vector = checkpoint.params.to_vector()
    if path.suffix == ".npz":
        with open(path, "wb") as f:
            np.savez(f, header=np.array(json.dumps(header)), parameters=vector)
    else:
        with open(path, "w") as f:
            json.dump({"header": header, "parameters": vector.tolist()}, f)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    """Read a checkpoint written by ``save_checkpoint``."""
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path, allow_pickle=False) as data:
            header = CheckpointHeader(**json.loads(str(data["header"])))
            vector = np.array(data["parameters"], dtype=np.float64)
    else:
        with open(path) as f:
            data = json.load(f)
        header = CheckpointHeader(**data["header"])
        vector = np.asarray(data["parameters"], dtype=np.float64)
    if header.format_version != FORMAT_VERSION:
        raise ContractViolationError(f"unsupported checkpoint format version {header.format_version}")
    return Checkpoint(header=header, params=_params_from(header, vector))
