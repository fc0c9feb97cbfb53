"""Point-set generators for the bundled cases.

Points are drawn uniformly at random inside the fluid region and on each
boundary face. Counts on the faces are proportional to face size, and every
boundary point carries the face size divided by its point count as area weight
(per unit depth in 2D).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from pinnflow.config import PointTag
from pinnflow.errors import ConfigurationError
from pinnflow.geometry.points import CollocationSet, PointPopulation, ReferenceSolution
from pinnflow.physics.flows import biquadratic_inflow, parabolic_inflow, poiseuille_solution

Region = Callable[[np.ndarray], np.ndarray]


def _allocate(total: int, weights: list[float]) -> list[int]:
    """Split ``total`` into integer shares proportional to ``weights`` (largest remainder)."""
    w = np.asarray(weights, dtype=np.float64)
    exact = total * w / w.sum()
    counts = np.floor(exact).astype(int)
    for i in np.argsort(counts - exact)[: total - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


def _in_box(rng: np.random.Generator, n: int, lo, hi) -> np.ndarray:
    lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    return lo + (hi - lo) * rng.random((n, lo.size))


def _in_region(rng: np.random.Generator, n: int, lo, hi, region: Region) -> np.ndarray:
    """Rejection sampling from the bounding box."""
    kept = np.zeros((0, len(lo)))
    while kept.shape[0] < n:
        trial = _in_box(rng, max(2 * (n - kept.shape[0]), 16), lo, hi)
        kept = np.concatenate([kept, trial[region(trial)]])
    return kept[:n]


@dataclass
class _Face:
    tag: PointTag
    size: float
    draw: Callable[[np.random.Generator, int], np.ndarray]
    velocity: Callable[[np.ndarray], np.ndarray] | None = None


@dataclass
class _Assembly:
    n_sd: int
    rng: np.random.Generator
    groups: dict[PointTag, list[PointPopulation]] = field(default_factory=dict)

    def add(self, population: PointPopulation) -> None:
        self.groups.setdefault(population.tag, []).append(population)

    def faces(self, n_boundary: int, faces: list[_Face]) -> None:
        for face, n in zip(faces, _allocate(n_boundary, [f.size for f in faces])):
            x = face.draw(self.rng, n)
            labels = {}
            if face.tag is PointTag.NEUMANN:
                labels["pressure"] = np.zeros(n)
            else:
                labels["velocity"] = face.velocity(x) if face.velocity else np.zeros((n, self.n_sd))
            self.add(PointPopulation(tag=face.tag, positions=x, area=np.full(n, face.size / max(n, 1)), **labels))

    def build(self) -> CollocationSet:
        populations = {}
        for tag, parts in self.groups.items():
            def join(attr):
                values = [getattr(p, attr) for p in parts]
                return None if any(v is None for v in values) else np.concatenate(values)

            populations[tag] = PointPopulation(
                tag=tag,
                positions=join("positions"),
                velocity=join("velocity"),
                pressure=join("pressure"),
                area=join("area"),
            )
        return CollocationSet(n_sd=self.n_sd, populations=populations)


def _face_points(lo, hi, axis: int, value: float) -> Callable[[np.random.Generator, int], np.ndarray]:
    def draw(rng: np.random.Generator, n: int) -> np.ndarray:
        x = _in_box(rng, n, lo, hi)
        x[:, axis] = value
        return x

    return draw


def _face_region(lo, hi, axis: int, value: float, region: Region) -> Callable[[np.random.Generator, int], np.ndarray]:
    def draw(rng: np.random.Generator, n: int) -> np.ndarray:
        def on_face(x):
            x = x.copy()
            x[:, axis] = value
            return region(x)

        x = _in_region(rng, n, lo, hi, on_face)
        x[:, axis] = value
        return x

    return draw


class DomainSampler:
    """Factory for the point sets of the bundled cases (SI units)."""

    KINDS = ("channel", "cylinder-static", "cylinder-parametric", "tjunction")

    @staticmethod
    def channel(
        n_volume: int = 2000,
        n_boundary: int | None = None,
        length: float = 2.0,
        height: float = 1.0,
        v_max: float = 1.0,
        seed: int = 0,
    ) -> CollocationSet:
        """2D channel x in [0, L], y in [-H/2, H/2]: parabolic inlet, no-slip walls, p = 0 outlet."""
        rng = np.random.default_rng(seed)
        half = 0.5 * height
        asm = _Assembly(n_sd=2, rng=rng)
        asm.add(PointPopulation(tag=PointTag.VOLUME, positions=_in_box(rng, n_volume, (0.0, -half), (length, half))))

        def inflow(x):
            return np.column_stack([parabolic_inflow(x[:, 1], height, v_max), np.zeros(len(x))])

        box = ((0.0, -half), (length, half))
        asm.faces(
            n_boundary if n_boundary is not None else n_volume // 4,
            [
                _Face(PointTag.DIRICHLET, height, _face_points(*box, axis=0, value=0.0), inflow),
                _Face(PointTag.DIRICHLET, length, _face_points(*box, axis=1, value=-half)),
                _Face(PointTag.DIRICHLET, length, _face_points(*box, axis=1, value=half)),
                _Face(PointTag.NEUMANN, height, _face_points(*box, axis=0, value=length)),
            ],
        )
        return asm.build()

    @staticmethod
    def channel_reference(
        positions: np.ndarray,
        length: float = 2.0,
        height: float = 1.0,
        v_max: float = 1.0,
        mu: float = 0.02,
    ) -> ReferenceSolution:
        """Analytic Poiseuille solution at ``positions``."""
        velocity, pressure = poiseuille_solution(positions, height, length, v_max, mu)
        return ReferenceSolution(positions=np.asarray(positions, dtype=np.float64), velocity=velocity, pressure=pressure)

    @staticmethod
    def cylinder(
        n_volume: int = 5000,
        n_boundary: int | None = None,
        parametric: bool = False,
        length: float = 1.1,
        height: float = 0.41,
        width: float = 0.4,
        diameter: float = 0.1,
        inlet_offset: float = 0.15,
        v_max: float = 1.0,
        seed: int = 0,
    ) -> CollocationSet:
        """3D duct with a cylinder along z, centred at the origin.

        x in [-O_H, L - O_H], y in [-H/2, H/2], z in [0, W]. The inlet carries
        the bi-quadratic profile. The cylinder surface is the moving wall set
        when ``parametric``; its volume points then cover the whole duct so
        the per-epoch filter can carve out the shifted cylinder.
        """
        rng = np.random.default_rng(seed)
        half, radius = 0.5 * height, 0.5 * diameter
        lo, hi = (-inlet_offset, -half, 0.0), (length - inlet_offset, half, width)
        asm = _Assembly(n_sd=3, rng=rng)

        def fluid(x):
            return np.hypot(x[:, 0], x[:, 1]) >= radius

        volume = _in_box(rng, n_volume, lo, hi) if parametric else _in_region(rng, n_volume, lo, hi, fluid)
        asm.add(PointPopulation(tag=PointTag.VOLUME, positions=volume))

        def inflow(x):
            v = np.zeros_like(x)
            v[:, 0] = biquadratic_inflow(x[:, 1], x[:, 2], height, width, v_max)
            return v

        def cylinder_surface(rng_, n):
            theta = rng_.uniform(0.0, 2.0 * np.pi, n)
            return np.column_stack([radius * np.cos(theta), radius * np.sin(theta), rng_.uniform(0.0, width, n)])

        faces = [
            _Face(PointTag.DIRICHLET, height * width, _face_points(lo, hi, 0, lo[0]), inflow),
            _Face(PointTag.NEUMANN, height * width, _face_points(lo, hi, 0, hi[0])),
            _Face(PointTag.DIRICHLET, length * width, _face_points(lo, hi, 1, -half)),
            _Face(PointTag.DIRICHLET, length * width, _face_points(lo, hi, 1, half)),
            _Face(PointTag.MOVING if parametric else PointTag.DIRICHLET, np.pi * diameter * width, cylinder_surface),
        ]
        for z in (0.0, width):
            region = (lambda x: np.ones(len(x), dtype=bool)) if parametric else fluid
            area = length * height - (0.0 if parametric else np.pi * radius**2)
            faces.append(_Face(PointTag.DIRICHLET, area, _face_region(lo, hi, 2, z, region)))
        asm.faces(n_boundary if n_boundary is not None else n_volume // 3, faces)
        return asm.build()

    @staticmethod
    def tjunction(
        n_volume: int = 5000,
        n_boundary: int | None = None,
        length: float = 0.3,
        height: float = 0.2,
        inlet_width: float = 0.09,
        right_height: float = 0.08,
        width: float = 0.1,
        k_range: tuple[float, float] = (0.03, 0.07),
        v_max: float = 1.0,
        seed: int = 0,
    ) -> CollocationSet:
        """3D T-junction: inlet at the top of |x| <= L_IN/2, arms leaving at x = -L/2 and x = +L/2.

        The left arm is sampled up to the largest k; its upper wall (at the
        smallest k) and the inlet channel's left wall are the moving set.
        """
        rng = np.random.default_rng(seed)
        half_l, half_in = 0.5 * length, 0.5 * inlet_width
        k_lo, k_hi = k_range
        lo, hi = (-half_l, 0.0, 0.0), (half_l, height, width)

        def fluid(x):
            channel = np.abs(x[:, 0]) <= half_in
            right = (x[:, 0] >= half_in) & (x[:, 1] <= right_height)
            left = (x[:, 0] <= -half_in) & (x[:, 1] <= k_hi)
            return channel | right | left

        asm = _Assembly(n_sd=3, rng=rng)
        asm.add(PointPopulation(tag=PointTag.VOLUME, positions=_in_region(rng, n_volume, lo, hi, fluid)))

        def inflow(x):
            v = np.zeros_like(x)
            v[:, 1] = -biquadratic_inflow(x[:, 0], x[:, 2], inlet_width, width, v_max)
            return v

        arm_l = half_l - half_in
        section = inlet_width * height + arm_l * right_height + arm_l * k_hi
        faces = [
            _Face(PointTag.DIRICHLET, inlet_width * width, _face_points((-half_in, 0, 0), (half_in, 0, width), 1, height), inflow),
            _Face(PointTag.DIRICHLET, length * width, _face_points(lo, hi, 1, 0.0)),
            _Face(PointTag.DIRICHLET, arm_l * width, _face_points((half_in, 0, 0), (half_l, 0, width), 1, right_height)),
            _Face(
                PointTag.DIRICHLET,
                (height - right_height) * width,
                _face_points((0, right_height, 0), (0, height, width), 0, half_in),
            ),
            _Face(PointTag.MOVING, arm_l * width, _face_points((-half_l, 0, 0), (-half_in, 0, width), 1, k_lo)),
            _Face(PointTag.MOVING, (height - k_lo) * width, _face_points((0, k_lo, 0), (0, height, width), 0, -half_in)),
            _Face(PointTag.NEUMANN, k_hi * width, _face_points((0, 0, 0), (0, k_hi, width), 0, -half_l)),
            _Face(PointTag.NEUMANN, right_height * width, _face_points((0, 0, 0), (0, right_height, width), 0, half_l)),
            _Face(PointTag.DIRICHLET, section, _face_region(lo, hi, 2, 0.0, fluid)),
            _Face(PointTag.DIRICHLET, section, _face_region(lo, hi, 2, width, fluid)),
        ]
        asm.faces(n_boundary if n_boundary is not None else n_volume // 3, faces)
        return asm.build()

    @staticmethod
    def build(kind: str, n_volume: int, seed: int = 0) -> CollocationSet:
        """Generator by name, as used by run configs and the ``sample`` command."""
        if kind == "channel":
            return DomainSampler.channel(n_volume=n_volume, seed=seed)
        if kind in ("cylinder-static", "cylinder-parametric"):
            return DomainSampler.cylinder(n_volume=n_volume, parametric=kind == "cylinder-parametric", seed=seed)
        if kind == "tjunction":
            return DomainSampler.tjunction(n_volume=n_volume, seed=seed)
        raise ConfigurationError(f"unknown sampler '{kind}'; available: {list(DomainSampler.KINDS)}")
