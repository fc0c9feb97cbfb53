"""Per-epoch parametric resampling: sample k, move the moving wall, filter, batch.

Draw order on the shared generator: k for f, D, N, M (in that order) in
``sample_parameters``, then one permutation per population f, D, N in
``make_batches``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from pinnflow.config import PointTag
from pinnflow.errors import ContractViolationError
from pinnflow.geometry.points import CollocationSet, PointPopulation
from pinnflow.geometry.scenarios import ScenarioSpec
from pinnflow.physics.objective import TrainingBatch
from pinnflow.physics.scales import ReferenceScales, nondimensionalize

logger = logging.getLogger(__name__)

DRAW_ORDER = (PointTag.VOLUME, PointTag.DIRICHLET, PointTag.NEUMANN, PointTag.MOVING)


@dataclass(frozen=True)
class SampledPopulation:
    """Points of one population with their k values after the pipeline.

    ``origin`` holds the source population tag of each point (D or M for the
    merged Dirichlet collection); ``points.index`` is the provenance row
    inside that source population.
    """

    points: PointPopulation
    k: np.ndarray
    origin: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    def take(self, rows: np.ndarray) -> SampledPopulation:
        return SampledPopulation(points=self.points.take(rows), k=self.k[rows], origin=self.origin[rows])

    @classmethod
    def concatenate(cls, tag: PointTag, parts: list[SampledPopulation]) -> SampledPopulation:
        def join(attr):
            values = [getattr(p.points, attr) for p in parts]
            return None if any(v is None for v in values) else np.concatenate(values)

        return cls(
            points=PointPopulation(
                tag=tag,
                positions=np.concatenate([p.points.positions for p in parts]),
                velocity=join("velocity"),
                pressure=join("pressure"),
                area=join("area"),
                index=join("index"),
            ),
            k=np.concatenate([p.k for p in parts]),
            origin=np.concatenate([p.origin for p in parts]),
        )


@dataclass(frozen=True)
class SampledBatch:
    """Filtered (x, k) records of the three training collections."""

    volume: SampledPopulation
    dirichlet: SampledPopulation
    neumann: SampledPopulation
    index: int = 0

    @property
    def size(self) -> int:
        return len(self.volume) + len(self.dirichlet) + len(self.neumann)

    def counts(self) -> dict[str, int]:
        return {"f": len(self.volume), "D": len(self.dirichlet), "N": len(self.neumann)}

    def to_training_batch(self, scales: ReferenceScales, parametric: bool) -> TrainingBatch:
        """Nondimensional network inputs; k joins the inputs scaled by L_ref."""

        def inputs(pop: SampledPopulation) -> np.ndarray:
            x = nondimensionalize(scales, position=pop.points.positions).position
            if parametric:
                x = np.column_stack([x, pop.k / scales.l_ref])
            return x

        dirichlet = self.dirichlet.points
        neumann = self.neumann.points
        return TrainingBatch(
            volume=inputs(self.volume),
            dirichlet=inputs(self.dirichlet),
            dirichlet_velocity=nondimensionalize(scales, velocity=dirichlet.velocity).velocity,
            neumann=inputs(self.neumann),
            neumann_pressure=nondimensionalize(scales, pressure=neumann.pressure).pressure,
            index=self.index,
        )


@dataclass(frozen=True)
class EpochStats:
    """Point accounting of one epoch."""

    epoch: int
    available: int
    retained: int
    excluded: int
    batches: int


def _generator(seed: int | np.random.Generator) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_parameters(
    points: CollocationSet,
    scenario: ScenarioSpec,
    seed: int | np.random.Generator,
) -> dict[PointTag, np.ndarray]:
    """Independent uniform k per point; the single admissible k everywhere for a degenerate range."""
    rng = _generator(seed)
    lo, hi = scenario.k_range
    ks = {}
    for tag in DRAW_ORDER:
        n = len(points[tag])
        ks[tag] = rng.uniform(lo, hi, size=n) if scenario.parametric else np.full(n, lo)
    return ks


def _finite_rows(x: np.ndarray, k: np.ndarray, tag: PointTag) -> np.ndarray:
    finite = np.all(np.isfinite(x), axis=1) & np.isfinite(k)
    if not finite.all():
        bad = np.flatnonzero(~finite)
        logger.warning(
            "rejected %d %s points with non-finite position or k (first row %d)", bad.size, tag.value, bad[0]
        )
    return finite


def _filtered(pop: PointPopulation, k: np.ndarray, predicate, origin: PointTag) -> SampledPopulation:
    keep = _finite_rows(pop.positions, k, pop.tag)
    keep[keep] = predicate.evaluate(pop.positions[keep], k[keep])
    sampled = SampledPopulation(points=pop, k=k, origin=np.full(len(pop), origin.value))
    return sampled.take(np.flatnonzero(keep))


def apply_parametric_pipeline(
    points: CollocationSet,
    k: dict[PointTag, np.ndarray],
    scenario: ScenarioSpec,
) -> SampledBatch:
    """Move and filter every population for its sampled k.

    Volume, static Dirichlet and Neumann points are kept where ``inside_fdn``
    holds; moving-wall points are transformed, kept where ``inside_m`` holds
    and merged into the Dirichlet collection after the static ones.
    """
    for tag in PointTag:
        if k[tag].shape != (len(points[tag]),):
            raise ContractViolationError(f"population {tag.value}: expected {len(points[tag])} k values, got {k[tag].shape}")

    moving = points.moving
    moved = PointPopulation(
        tag=PointTag.MOVING,
        positions=scenario.transform.apply(moving.positions, k[PointTag.MOVING], scenario.k_ref),
        velocity=moving.velocity,
        area=moving.area,
        index=moving.index,
    )
    dirichlet = SampledPopulation.concatenate(
        PointTag.DIRICHLET,
        [
            _filtered(points.dirichlet, k[PointTag.DIRICHLET], scenario.inside_fdn, PointTag.DIRICHLET),
            _filtered(moved, k[PointTag.MOVING], scenario.inside_m, PointTag.MOVING),
        ],
    )
    return SampledBatch(
        volume=_filtered(points.volume, k[PointTag.VOLUME], scenario.inside_fdn, PointTag.VOLUME),
        dirichlet=dirichlet,
        neumann=_filtered(points.neumann, k[PointTag.NEUMANN], scenario.inside_fdn, PointTag.NEUMANN),
    )


def _largest_batch(sizes: list[int], n_batches: int) -> int:
    return sum(math.ceil(s / n_batches) for s in sizes)


def batch_count(sizes: list[int], max_batch_size: int) -> int:
    """Fewest batches whose proportional share keeps each batch within ``max_batch_size`` points."""
    if max_batch_size < 1:
        raise ContractViolationError(f"max_batch_size must be at least 1, got {max_batch_size}")
    total = sum(sizes)
    n_batches = max(1, math.ceil(total / max_batch_size))
    while n_batches < max(sizes, default=1) and _largest_batch(sizes, n_batches) > max_batch_size:
        n_batches += 1
    return n_batches


def make_batches(
    collections: SampledBatch,
    max_batch_size: int,
    seed: int | np.random.Generator,
) -> list[SampledBatch]:
    """Shuffle each collection and deal an equal share of it to every batch."""
    rng = _generator(seed)
    pops = (collections.volume, collections.dirichlet, collections.neumann)
    n_batches = batch_count([len(p) for p in pops], max_batch_size)
    if collections.size == 0:
        return []
    parts = [np.array_split(rng.permutation(len(p)), n_batches) for p in pops]
    return [
        SampledBatch(
            volume=pops[0].take(parts[0][b]),
            dirichlet=pops[1].take(parts[1][b]),
            neumann=pops[2].take(parts[2][b]),
            index=b,
        )
        for b in range(n_batches)
    ]


class EpochSampler:
    """Binds the master point set and scenario to one generator for per-epoch resampling."""

    def __init__(
        self,
        points: CollocationSet,
        scenario: ScenarioSpec,
        max_batch_size: int,
        rng: np.random.Generator,
    ) -> None:
        self.points = points
        self.scenario = scenario
        self.max_batch_size = max_batch_size
        self.rng = rng
        self.epoch = 0
        self.history: list[EpochStats] = []

    def next_epoch(self) -> list[SampledBatch]:
        """Fresh k, pipeline and batches for the next epoch."""
        k = sample_parameters(self.points, self.scenario, self.rng)
        collections = apply_parametric_pipeline(self.points, k, self.scenario)
        batches = make_batches(collections, self.max_batch_size, self.rng)
        available = self.points.size
        self.history.append(
            EpochStats(
                epoch=self.epoch,
                available=available,
                retained=collections.size,
                excluded=available - collections.size,
                batches=len(batches),
            )
        )
        self.epoch += 1
        return batches
