"""Output slot maps of the network head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pinnflow.config import Formulation
from pinnflow.errors import ContractViolationError

# Unique stress components in output order (3D order is the checkpoint contract).
SIGMA_PAIRS: dict[int, tuple[tuple[int, int], ...]] = {
    2: ((0, 0), (0, 1), (1, 1)),
    3: ((0, 0), (0, 1), (0, 2), (1, 2), (1, 1), (2, 2)),
}


@dataclass(frozen=True)
class OutputLayout:
    """Index map naming each output slot of the network."""

    n_sd: int
    formulation: Formulation
    slots: tuple[str, ...]
    psi: tuple[int, ...]
    velocity: tuple[int, ...]
    pressure: int
    sigma: tuple[int, ...]

    @classmethod
    def for_formulation(cls, n_sd: int, formulation: Formulation = Formulation.MIXED) -> OutputLayout:
        if n_sd not in SIGMA_PAIRS:
            raise ContractViolationError(f"n_sd must be 2 or 3, got {n_sd}")
        names: list[str] = []
        if formulation is Formulation.MIXED:
            names += ["psi"] if n_sd == 2 else ["psi1", "psi2", "psi3"]
        else:
            names += [f"v{i + 1}" for i in range(n_sd)]
        names.append("p")
        if formulation is not Formulation.NO_STRESS:
            names += [f"sigma{a + 1}{b + 1}" for a, b in SIGMA_PAIRS[n_sd]]

        def where(prefix: str) -> tuple[int, ...]:
            return tuple(i for i, name in enumerate(names) if name.startswith(prefix))

        return cls(
            n_sd=n_sd,
            formulation=formulation,
            slots=tuple(names),
            psi=where("psi"),
            velocity=where("v"),
            pressure=names.index("p"),
            sigma=where("sigma"),
        )

    @property
    def size(self) -> int:
        return len(self.slots)

    @property
    def sigma_pairs(self) -> tuple[tuple[int, int], ...]:
        return SIGMA_PAIRS[self.n_sd] if self.sigma else ()

    @property
    def derivative_order(self) -> int:
        """Input-derivative order the residuals of this formulation need."""
        return 1 if self.formulation is Formulation.NO_STREAM_FUNCTION else 2

    def index(self, name: str) -> int:
        return self.slots.index(name)

    def stress_slots(self) -> np.ndarray:
        """(n_sd, n_sd) matrix of output indices; symmetric entries share a slot."""
        table = np.full((self.n_sd, self.n_sd), -1, dtype=int)
        for slot, (a, b) in zip(self.sigma, self.sigma_pairs):
            table[a, b] = table[b, a] = slot
        return table

    def curl_tensor(self) -> np.ndarray:
        """E[i, j, c] with v_i = sum_jc E[i, j, c] * d(psi_c)/dx_j.

        Levi-Civita symbol in 3D; (v1, v2) = (dpsi/dy, -dpsi/dx) in 2D.
        """
        if self.n_sd == 2:
            e = np.zeros((2, 2, 1))
            e[0, 1, 0] = 1.0
            e[1, 0, 0] = -1.0
            return e
        e = np.zeros((3, 3, 3))
        for i, j, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
            e[i, j, c] = 1.0
            e[i, c, j] = -1.0
        return e
