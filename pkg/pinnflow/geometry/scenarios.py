"""Scenario registry: geometric parameter range, domain predicates and the moving-wall map.

A scenario answers three questions for a point x (SI units) and parameter k:

- ``inside_fdn(x, k)``: does a volume, static Dirichlet or Neumann point lie in the domain?
- ``inside_m(x, k)``: does a transformed moving-wall point lie on the domain boundary?
- ``transform(x, k)``: where does a moving-wall point go for this k?

Predicates are composed from half-spaces and balls so user scenarios can be
declared in YAML without code.
"""

from __future__ import annotations

from pathlib import Path
from typing import Annotated, Callable, Literal, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from pinnflow.errors import ConfigurationError, ContractViolationError


class _Node(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


def _vector(values: tuple[float, ...], x: np.ndarray, what: str) -> np.ndarray:
    if len(values) != x.shape[1]:
        raise ContractViolationError(f"{what} has {len(values)} components, points have {x.shape[1]}")
    return np.asarray(values, dtype=np.float64)


class Always(_Node):
    kind: Literal["always"] = "always"

    def evaluate(self, x: np.ndarray, k: np.ndarray) -> np.ndarray:
        return np.ones(x.shape[0], dtype=bool)


class HalfSpace(_Node):
    """n . x <= offset + k_coefficient * k"""

    kind: Literal["halfspace"] = "halfspace"
    normal: tuple[float, ...]
    offset: float = 0.0
    k_coefficient: float = 0.0

    def evaluate(self, x: np.ndarray, k: np.ndarray) -> np.ndarray:
        return x @ _vector(self.normal, x, "halfspace normal") <= self.offset + self.k_coefficient * k


class Ball(_Node):
    """Distance test against a centre that moves with k.

    ``mask`` selects the coordinates that enter the distance, so a ball with
    one masked axis is an infinite cylinder. With ``outside`` set the predicate
    holds at distance >= radius.
    """

    kind: Literal["ball"] = "ball"
    center: tuple[float, ...]
    radius: float = Field(gt=0.0)
    k_direction: tuple[float, ...] | None = None
    mask: tuple[float, ...] | None = None
    outside: bool = True

    def evaluate(self, x: np.ndarray, k: np.ndarray) -> np.ndarray:
        center = _vector(self.center, x, "ball centre")
        delta = x - center
        if self.k_direction is not None:
            delta = delta - k[:, None] * _vector(self.k_direction, x, "ball k_direction")
        if self.mask is not None:
            delta = delta * _vector(self.mask, x, "ball mask")
        distance = np.linalg.norm(delta, axis=1)
        return distance >= self.radius if self.outside else distance <= self.radius


class AnyOf(_Node):
    kind: Literal["any"] = "any"
    terms: list[Predicate]

    def evaluate(self, x: np.ndarray, k: np.ndarray) -> np.ndarray:
        result = np.zeros(x.shape[0], dtype=bool)
        for term in self.terms:
            result |= term.evaluate(x, k)
        return result


class AllOf(_Node):
    kind: Literal["all"] = "all"
    terms: list[Predicate]

    def evaluate(self, x: np.ndarray, k: np.ndarray) -> np.ndarray:
        result = np.ones(x.shape[0], dtype=bool)
        for term in self.terms:
            result &= term.evaluate(x, k)
        return result


class Not(_Node):
    kind: Literal["not"] = "not"
    term: Predicate

    def evaluate(self, x: np.ndarray, k: np.ndarray) -> np.ndarray:
        return ~self.term.evaluate(x, k)


Predicate = Annotated[Union[Always, HalfSpace, Ball, AnyOf, AllOf, Not], Field(discriminator="kind")]

for _model in (AnyOf, AllOf, Not):
    _model.model_rebuild()


class Translate(_Node):
    """x + direction * (k - k_ref); the identity at k = k_ref."""

    kind: Literal["translate"] = "translate"
    direction: tuple[float, ...] | None = None

    def apply(self, x: np.ndarray, k: np.ndarray, k_ref: float) -> np.ndarray:
        if self.direction is None:
            return x.copy()
        return x + (k - k_ref)[:, None] * _vector(self.direction, x, "translate direction")


class Outlet(_Node):
    """Named pressure outlet: the Neumann points inside ``region``, with a declared outward normal."""

    name: str
    normal: tuple[float, ...]
    region: Predicate = Always()

    @model_validator(mode="after")
    def _unit_normal(self) -> Outlet:
        if not np.isclose(np.linalg.norm(self.normal), 1.0):
            raise ValueError(f"outlet '{self.name}' normal must have unit length")
        return self


class ScenarioSpec(_Node):
    """A named geometry variation over a closed parameter interval (metres)."""

    name: str
    k_range: tuple[float, float] = (0.0, 0.0)
    k_ref: float = 0.0
    inside_fdn: Predicate = Always()
    inside_m: Predicate = Always()
    transform: Translate = Translate()
    constants: dict[str, float] = Field(default_factory=dict)
    outlets: list[Outlet] = Field(default_factory=list)

    @model_validator(mode="after")
    def _ordered_range(self) -> ScenarioSpec:
        lo, hi = self.k_range
        if lo > hi:
            raise ValueError("k_range lower bound exceeds upper bound")
        return self

    @property
    def parametric(self) -> bool:
        return self.k_range[0] < self.k_range[1]

    def in_range(self, k: float) -> bool:
        return self.k_range[0] <= k <= self.k_range[1]

    def outlet(self, name: str) -> Outlet:
        for outlet in self.outlets:
            if outlet.name == name:
                return outlet
        raise ConfigurationError(f"scenario '{self.name}' has no outlet '{name}'")


def _axis(index: int, n_sd: int, value: float = 1.0) -> tuple[float, ...]:
    return tuple(value if i == index else 0.0 for i in range(n_sd))


def static_scenario(n_sd: int = 3, **constants: float) -> ScenarioSpec:
    """Fixed geometry: k is pinned at zero and nothing moves."""
    return ScenarioSpec(
        name="static",
        constants=constants,
        outlets=[Outlet(name="outlet", normal=_axis(0, n_sd))],
    )


def cylinder_translate(
    n_sd: int = 3,
    k_range: tuple[float, float] = (-0.05, 0.05),
    diameter: float = 0.1,
    axis: float = 1,
    cylinder_axis: float = 2,
    k_ref: float = 0.0,
) -> ScenarioSpec:
    """Cylinder whose centre moves along ``axis`` by k.

    The cylinder runs along ``cylinder_axis`` (ignored in 2D), centred at the
    origin for k = k_ref. Its surface points form the moving wall set.
    """
    axis, cylinder_axis = int(axis), int(cylinder_axis)
    mask = tuple(0.0 if (n_sd == 3 and i == cylinder_axis) else 1.0 for i in range(n_sd))
    return ScenarioSpec(
        name="cylinder-translate",
        k_range=k_range,
        k_ref=k_ref,
        inside_fdn=Ball(
            center=tuple(-k_ref * d for d in _axis(axis, n_sd)),
            radius=0.5 * diameter,
            k_direction=_axis(axis, n_sd),
            mask=mask,
        ),
        transform=Translate(direction=_axis(axis, n_sd)),
        constants={"D": diameter, "axis": axis},
        outlets=[Outlet(name="outlet", normal=_axis(0, n_sd))],
    )


def tjunction_height(
    n_sd: int = 3,
    k_range: tuple[float, float] = (0.03, 0.07),
    inlet_width: float = 0.09,
    height: float = 0.2,
    k_ref: float = 0.03,
) -> ScenarioSpec:
    """T-junction whose left arm reaches up to y = k.

    The inlet channel occupies |x| <= L_IN / 2 and the arms run along x on
    either side. The left arm's upper wall and the inlet channel's left wall
    form the moving wall set.
    """
    y_axis = _axis(1, n_sd)
    return ScenarioSpec(
        name="tjunction-height",
        k_range=k_range,
        k_ref=k_ref,
        inside_fdn=AnyOf(
            terms=[
                HalfSpace(normal=y_axis, offset=0.0, k_coefficient=1.0),
                HalfSpace(normal=_axis(0, n_sd, -1.0), offset=0.5 * inlet_width),
            ]
        ),
        inside_m=HalfSpace(normal=y_axis, offset=height),
        transform=Translate(direction=y_axis),
        constants={"L_IN": inlet_width, "H": height},
        outlets=[
            Outlet(name="left", normal=_axis(0, n_sd, -1.0), region=HalfSpace(normal=_axis(0, n_sd))),
            Outlet(name="right", normal=_axis(0, n_sd), region=HalfSpace(normal=_axis(0, n_sd, -1.0))),
        ],
    )


class ScenarioRegistry:
    """Singleton registry of scenario builders and user-declared scenarios."""

    _instance: ScenarioRegistry | None = None

    def __new__(cls) -> ScenarioRegistry:
        if cls._instance is None:
            cls._instance = super().__new__(cls)
            cls._instance._builders = {
                "static": static_scenario,
                "cylinder-translate": cylinder_translate,
                "tjunction-height": tjunction_height,
            }
            cls._instance._declared = {}
        return cls._instance

    @classmethod
    def reset(cls) -> None:
        """Drop user registrations (for testing)."""
        cls._instance = None

    def build(
        self,
        name: str,
        n_sd: int = 3,
        k_range: tuple[float, float] | None = None,
        **constants: float,
    ) -> ScenarioSpec:
        """Instantiate a scenario; built-ins accept constant overrides."""
        if name in self._declared:
            spec = self._declared[name]
            if k_range is not None:
                try:
                    spec = ScenarioSpec.model_validate({**spec.model_dump(), "k_range": tuple(k_range)})
                except ValidationError as exc:
                    raise ConfigurationError(f"scenario '{name}': {exc}") from exc
            return spec
        if name not in self._builders:
            raise ConfigurationError(f"unknown scenario '{name}'; available: {self.names()}")
        builder: Callable[..., ScenarioSpec] = self._builders[name]
        kwargs = dict(constants)
        if k_range is not None and name != "static":
            kwargs["k_range"] = tuple(k_range)
        try:
            return builder(n_sd=n_sd, **kwargs)
        except TypeError as exc:
            raise ConfigurationError(f"scenario '{name}': {exc}") from exc
        except ValidationError as exc:
            raise ConfigurationError(f"scenario '{name}': {exc}") from exc

    def register(self, spec: ScenarioSpec) -> None:
        if spec.name in self._builders:
            raise ConfigurationError(f"scenario name '{spec.name}' is reserved for a built-in")
        self._declared[spec.name] = spec

    def load_file(self, path: str | Path) -> ScenarioSpec:
        """Register a scenario declared in a YAML file."""
        path = Path(path)
        try:
            with open(path) as f:
                data = yaml.safe_load(f) or {}
            spec = ScenarioSpec.model_validate(data)
        except FileNotFoundError as exc:
            raise ConfigurationError(f"scenario file not found: {path}") from exc
        except (yaml.YAMLError, ValidationError) as exc:
            raise ConfigurationError(f"{path}: invalid scenario: {exc}") from exc
        self.register(spec)
        return spec

    def names(self) -> list[str]:
        return list(self._builders) + list(self._declared)

    def __len__(self) -> int:
        return len(self._builders) + len(self._declared)

    def __contains__(self, name: str) -> bool:
        return name in self._builders or name in self._declared
