"""Iteration-level loss records and convergence tracking."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import pandas as pd

from pinnflow.config import Phase, TerminationReason
from pinnflow.errors import ContractViolationError
from pinnflow.geometry.pipeline import EpochStats
from pinnflow.physics.loss import LossBreakdown


@dataclass
class IterationRecord:
    """Loss components after one optimizer iteration."""

    iteration: int
    phase: Phase
    batch: int
    epoch: int
    l_total: float
    l_d: float = 0.0
    l_n: float = 0.0
    l_v: float = 0.0
    l_sigma: float = 0.0
    l_p: float = 0.0
    l_c: float = 0.0
    l_test: float | None = None
    l_test_proxy: float | None = None

    @classmethod
    def from_breakdown(cls, iteration: int, phase: Phase, batch: int, epoch: int, loss: LossBreakdown) -> IterationRecord:
        return cls(
            iteration=iteration,
            phase=phase,
            batch=batch,
            epoch=epoch,
            l_total=loss.l_total,
            l_d=loss.l_d,
            l_n=loss.l_n,
            l_v=loss.l_v,
            l_sigma=loss.l_sigma,
            l_p=loss.l_p,
            l_c=loss.l_c,
        )


COLUMNS = tuple(f.name for f in fields(IterationRecord))


class ConvergenceLog:
    """Collects per-iteration records, epoch accounting and the termination reason."""

    def __init__(self) -> None:
        self.history: list[IterationRecord] = []
        self.epochs: list[EpochStats] = []
        self.termination: TerminationReason | None = None

    def __len__(self) -> int:
        return len(self.history)

    @property
    def last_iteration(self) -> int:
        return self.history[-1].iteration if self.history else 0

    def record(self, entry: IterationRecord) -> IterationRecord:
        """Append a record; iterations must increase strictly and losses be nonnegative."""
        if self.history and entry.iteration <= self.history[-1].iteration:
            raise ContractViolationError(
                f"iteration {entry.iteration} does not follow {self.history[-1].iteration}"
            )
        if entry.l_total < 0.0:
            raise ContractViolationError(f"negative loss {entry.l_total} at iteration {entry.iteration}")
        self.history.append(entry)
        return entry

    def attach_test(self, l_test: float | None = None, proxy: float | None = None) -> None:
        """Store a test-set evaluation on the latest record."""
        if not self.history:
            return
        self.history[-1].l_test = l_test
        self.history[-1].l_test_proxy = proxy

    def phase(self, phase: Phase) -> list[IterationRecord]:
        return [r for r in self.history if r.phase is phase]

    def final_test(self) -> float | None:
        """Most recent L_test (or its proxy when no reference was given)."""
        for r in reversed(self.history):
            if r.l_test is not None:
                return r.l_test
            if r.l_test_proxy is not None:
                return r.l_test_proxy
        return None

    def summary(self) -> dict:
        last = self.history[-1] if self.history else None
        return {
            "termination": self.termination.value if self.termination else None,
            "iterations": len(self.history),
            "adam_iterations": len(self.phase(Phase.ADAM)),
            "lbfgs_iterations": len(self.phase(Phase.LBFGS)),
            "final": None if last is None else _plain(asdict(last)),
            "final_test": self.final_test(),
            "epochs": [asdict(e) for e in self.epochs],
        }

    def to_frame(self) -> pd.DataFrame:
        rows = [_plain(asdict(r)) for r in self.history]
        return pd.DataFrame(rows, columns=list(COLUMNS))

    def to_csv(self, path: str | Path) -> None:
        """Export the records; empty cells where no test loss was evaluated."""
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(cls, path: str | Path) -> ConvergenceLog:
        log = cls()
        frame = pd.read_csv(path)
        for row in frame.to_dict("records"):
            log.history.append(_record_from(row))
        return log

    def to_json(self, path: str | Path) -> None:
        """Export records, epochs and termination reason to JSON."""
        data = {
            "termination": self.termination.value if self.termination else None,
            "epochs": [asdict(e) for e in self.epochs],
            "history": [_plain(asdict(r)) for r in self.history],
        }
        with open(path, "w") as f:
            json.dump(data, f, indent=2)

    @classmethod
    def from_json(cls, path: str | Path) -> ConvergenceLog:
        log = cls()
        with open(path) as f:
            data = json.load(f)
        log.termination = TerminationReason(data["termination"]) if data.get("termination") else None
        log.epochs = [EpochStats(**e) for e in data.get("epochs", [])]
        log.history = [_record_from(r) for r in data.get("history", [])]
        return log


def _plain(row: dict) -> dict:
    row = dict(row)
    row["phase"] = row["phase"].value if isinstance(row["phase"], Phase) else row["phase"]
    return row


def _optional(value) -> float | None:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return None
    return float(value)


def _record_from(row: dict) -> IterationRecord:
    return IterationRecord(
        iteration=int(row["iteration"]),
        phase=Phase(row["phase"]),
        batch=int(row["batch"]),
        epoch=int(row["epoch"]),
        l_total=float(row["l_total"]),
        l_d=float(row["l_d"]),
        l_n=float(row["l_n"]),
        l_v=float(row["l_v"]),
        l_sigma=float(row["l_sigma"]),
        l_p=float(row["l_p"]),
        l_c=float(row["l_c"]),
        l_test=_optional(row.get("l_test")),
        l_test_proxy=_optional(row.get("l_test_proxy")),
    )
