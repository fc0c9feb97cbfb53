"""Collocation point sets and reference solutions read from CSV.

Point file (one per case)::

    # comment lines start with '#'
    x,y,z,set,vx,vy,vz,p,area
    0.0,0.1,0.2,f,,,,,
    -0.15,0.0,0.2,D,0.87,0.0,0.0,,2.4e-4

``z``/``vz`` are omitted in 2D. ``set`` is one of f, D, N, M; label columns
are left empty where they do not apply. D and M rows need every velocity
component, N rows need ``p``. Reference files hold ``x,y[,z],vx,vy[,vz],p``
at arbitrary points. All values are SI units.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from pinnflow.config import PointTag
from pinnflow.errors import ContractViolationError, DimensionMismatchError, PointSetError

logger = logging.getLogger(__name__)

AXES = ("x", "y", "z")
VELOCITY = ("vx", "vy", "vz")


@dataclass(frozen=True)
class PointPopulation:
    """One tagged group of points with its labels.

    ``index`` is the provenance of each point: its row within the population
    as loaded, kept through splitting, filtering and batching.
    """

    tag: PointTag
    positions: np.ndarray
    velocity: np.ndarray | None = None
    pressure: np.ndarray | None = None
    area: np.ndarray | None = None
    index: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = self.positions.shape[0]
        if self.index is None:
            object.__setattr__(self, "index", np.arange(n))
        for name in ("velocity", "pressure", "area", "index"):
            value = getattr(self, name)
            if value is not None and value.shape[0] != n:
                raise DimensionMismatchError(f"{self.tag.value}: {name} has {value.shape[0]} rows, expected {n}")
        if self.tag in (PointTag.DIRICHLET, PointTag.MOVING) and self.velocity is None and n:
            raise ContractViolationError(f"population {self.tag.value} needs velocity labels")
        if self.tag is PointTag.NEUMANN and self.pressure is None and n:
            raise ContractViolationError("population N needs pressure labels")

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def n_sd(self) -> int:
        return self.positions.shape[1]

    def take(self, rows: np.ndarray) -> PointPopulation:
        """Subset by integer rows or boolean mask; labels and provenance travel along."""

        def pick(a):
            return None if a is None else a[rows]

        return PointPopulation(
            tag=self.tag,
            positions=self.positions[rows],
            velocity=pick(self.velocity),
            pressure=pick(self.pressure),
            area=pick(self.area),
            index=pick(self.index),
        )

    @classmethod
    def empty(cls, tag: PointTag, n_sd: int) -> PointPopulation:
        labelled_v = tag in (PointTag.DIRICHLET, PointTag.MOVING)
        return cls(
            tag=tag,
            positions=np.zeros((0, n_sd)),
            velocity=np.zeros((0, n_sd)) if labelled_v else None,
            pressure=np.zeros(0) if tag is PointTag.NEUMANN else None,
        )


@dataclass(frozen=True)
class CollocationSet:
    """The four point populations of a case; immutable once loaded."""

    n_sd: int
    populations: dict[PointTag, PointPopulation] = field(default_factory=dict)

    def __post_init__(self) -> None:
        pops = dict(self.populations)
        for tag in PointTag:
            pops.setdefault(tag, PointPopulation.empty(tag, self.n_sd))
            if pops[tag].n_sd != self.n_sd:
                raise DimensionMismatchError(
                    f"population {tag.value} has {pops[tag].n_sd} coordinates, set has {self.n_sd}"
                )
        object.__setattr__(self, "populations", pops)

    def __getitem__(self, tag: PointTag) -> PointPopulation:
        return self.populations[tag]

    @property
    def volume(self) -> PointPopulation:
        return self.populations[PointTag.VOLUME]

    @property
    def dirichlet(self) -> PointPopulation:
        return self.populations[PointTag.DIRICHLET]

    @property
    def neumann(self) -> PointPopulation:
        return self.populations[PointTag.NEUMANN]

    @property
    def moving(self) -> PointPopulation:
        return self.populations[PointTag.MOVING]

    def counts(self) -> dict[str, int]:
        return {tag.value: len(pop) for tag, pop in self.populations.items()}

    @property
    def size(self) -> int:
        return sum(len(pop) for pop in self.populations.values())

    def with_population(self, population: PointPopulation) -> CollocationSet:
        pops = dict(self.populations)
        pops[population.tag] = population
        return replace(self, populations=pops)


@dataclass(frozen=True)
class ReferenceSolution:
    """Reference velocity and pressure at arbitrary points (SI units)."""

    positions: np.ndarray
    velocity: np.ndarray
    pressure: np.ndarray

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def n_sd(self) -> int:
        return self.positions.shape[1]


# ── reading ────────────────────────────────────────────────────────────


def _data_line_numbers(path: Path) -> list[int]:
    """1-based file line of every data row (header, comments and blanks skipped)."""
    numbers = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.split("#", 1)[0].strip()
            if stripped:
                numbers.append(lineno)
    return numbers[1:]


def _read_table(path: str | Path) -> tuple[pd.DataFrame, list[int]]:
    path = Path(path)
    if not path.exists():
        raise PointSetError(f"file not found: {path}")
    try:
        frame = pd.read_csv(path, comment="#", dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        return pd.DataFrame(), []
    except pd.errors.ParserError as exc:
        raise PointSetError(f"{path}: {exc}") from exc
    frame.columns = [c.strip() for c in frame.columns]
    return frame.apply(lambda col: col.str.strip()), _data_line_numbers(path)


def _numeric(frame: pd.DataFrame, column: str, lines: list[int], required: np.ndarray) -> np.ndarray:
    """Float column; empty cells become NaN and are rejected where ``required``."""
    if column not in frame:
        values = np.full(len(frame), np.nan)
        text = pd.Series([""] * len(frame))
    else:
        text = frame[column]
        values = pd.to_numeric(text.replace("", np.nan), errors="coerce").to_numpy(dtype=np.float64)
    garbage = np.isnan(values) & (text.to_numpy() != "")
    missing = required & (text.to_numpy() == "")
    for mask, what in ((garbage, "is not a number"), (missing, "is required but empty")):
        if mask.any():
            row = int(np.argmax(mask))
            raise PointSetError(f"column '{column}' {what}", line=lines[row] if row < len(lines) else None)
    return values


def _dimension(columns: list[str], allowed: set[str]) -> int:
    unknown = [c for c in columns if c not in allowed]
    if unknown:
        raise PointSetError(f"unknown columns {unknown}; allowed: {sorted(allowed)}")
    if "x" not in columns or "y" not in columns:
        raise PointSetError("columns x and y are required")
    return 3 if "z" in columns else 2


def load_point_sets(path: str | Path) -> CollocationSet:
    """Parse a point file into its four populations."""
    frame, lines = _read_table(path)
    if frame.empty and not len(frame.columns):
        logger.warning("%s holds no points", path)
        return CollocationSet(n_sd=3)

    columns = list(frame.columns)
    n_sd = _dimension(columns, set(AXES) | set(VELOCITY) | {"set", "p", "area"})
    if "set" not in columns:
        raise PointSetError("column 'set' is required")
    tags = frame["set"].to_numpy()
    valid = {t.value for t in PointTag}
    bad = np.array([t not in valid for t in tags], dtype=bool)
    if bad.any():
        row = int(np.argmax(bad))
        raise PointSetError(f"unknown set '{tags[row]}', expected one of {sorted(valid)}", line=lines[row])

    everywhere = np.ones(len(frame), dtype=bool)
    needs_v = np.isin(tags, [PointTag.DIRICHLET.value, PointTag.MOVING.value])
    needs_p = tags == PointTag.NEUMANN.value
    positions = np.stack([_numeric(frame, a, lines, everywhere) for a in AXES[:n_sd]], axis=1)
    velocity = np.stack([_numeric(frame, v, lines, needs_v) for v in VELOCITY[:n_sd]], axis=1)
    pressure = _numeric(frame, "p", lines, needs_p)
    area = _numeric(frame, "area", lines, np.zeros(len(frame), dtype=bool))
    if not np.all(np.isfinite(positions)):
        row = int(np.argmax(~np.all(np.isfinite(positions), axis=1)))
        raise PointSetError("non-finite position", line=lines[row])

    populations = {}
    for tag in PointTag:
        rows = tags == tag.value
        area_rows = area[rows]
        missing = np.isnan(area_rows)
        if missing.any() and not missing.all():
            row = int(np.flatnonzero(rows)[np.argmax(missing)])
            raise PointSetError(f"set '{tag.value}' has area weights on some rows only", line=lines[row])
        populations[tag] = PointPopulation(
            tag=tag,
            positions=positions[rows],
            velocity=velocity[rows] if tag in (PointTag.DIRICHLET, PointTag.MOVING) else None,
            pressure=pressure[rows] if tag is PointTag.NEUMANN else None,
            area=area_rows if area_rows.size and not missing.any() else None,
        )
    points = CollocationSet(n_sd=n_sd, populations=populations)
    logger.info("loaded %s: %s", path, points.counts())
    return points


def load_reference(path: str | Path) -> ReferenceSolution:
    """Parse a reference-solution file."""
    frame, lines = _read_table(path)
    if frame.empty:
        raise PointSetError(f"{path}: reference solution holds no points")
    n_sd = _dimension(list(frame.columns), set(AXES) | set(VELOCITY) | {"p"})
    everywhere = np.ones(len(frame), dtype=bool)
    return ReferenceSolution(
        positions=np.stack([_numeric(frame, a, lines, everywhere) for a in AXES[:n_sd]], axis=1),
        velocity=np.stack([_numeric(frame, v, lines, everywhere) for v in VELOCITY[:n_sd]], axis=1),
        pressure=_numeric(frame, "p", lines, everywhere),
    )


def load_positions(path: str | Path) -> np.ndarray:
    """Coordinates of every row of a point, reference or field file; other columns are ignored."""
    frame, lines = _read_table(path)
    if frame.empty:
        raise PointSetError(f"{path}: file holds no points")
    if "x" not in frame or "y" not in frame:
        raise PointSetError(f"{path}: columns x and y are required")
    n_sd = 3 if "z" in frame else 2
    everywhere = np.ones(len(frame), dtype=bool)
    return np.stack([_numeric(frame, a, lines, everywhere) for a in AXES[:n_sd]], axis=1)


# ── writing ────────────────────────────────────────────────────────────


def _write_frame(frame: pd.DataFrame, path: str | Path, comments: list[str] | None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        for line in comments or []:
            f.write(f"# {line}\n")
        frame.to_csv(f, index=False, float_format="%.17g")
    return path


def write_point_sets(points: CollocationSet, path: str | Path, comments: list[str] | None = None) -> Path:
    """Write a point file in the format read by ``load_point_sets``."""
    n = points.n_sd
    frames = []
    for tag, pop in points.populations.items():
        if not len(pop):
            continue
        frame = pd.DataFrame(pop.positions, columns=list(AXES[:n]))
        frame["set"] = tag.value
        for i, name in enumerate(VELOCITY[:n]):
            frame[name] = pop.velocity[:, i] if pop.velocity is not None else np.nan
        frame["p"] = pop.pressure if pop.pressure is not None else np.nan
        frame["area"] = pop.area if pop.area is not None else np.nan
        frames.append(frame)
    columns = list(AXES[:n]) + ["set"] + list(VELOCITY[:n]) + ["p", "area"]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=columns)
    return _write_frame(frame[columns], path, comments)


def write_reference(reference: ReferenceSolution, path: str | Path, comments: list[str] | None = None) -> Path:
    n = reference.n_sd
    frame = pd.DataFrame(reference.positions, columns=list(AXES[:n]))
    for i, name in enumerate(VELOCITY[:n]):
        frame[name] = reference.velocity[:, i]
    frame["p"] = reference.pressure
    return _write_frame(frame, path, comments)


# ── test split ─────────────────────────────────────────────────────────


def split_test_set(
    points: CollocationSet,
    fraction: float,
    seed: int | np.random.Generator,
) -> tuple[CollocationSet, CollocationSet]:
    """Hold out ``floor(fraction * N_f)`` volume points; boundary populations stay in training."""
    if not 0.0 < fraction < 1.0:
        raise ContractViolationError(f"test fraction must lie in (0, 1), got {fraction}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    volume = points.volume
    n_test = int(np.floor(fraction * len(volume)))
    order = rng.permutation(len(volume))
    test_rows = np.sort(order[:n_test])
    train_rows = np.sort(order[n_test:])
    train = points.with_population(volume.take(train_rows))
    test = CollocationSet(n_sd=points.n_sd, populations={PointTag.VOLUME: volume.take(test_rows)})
    return train, test
