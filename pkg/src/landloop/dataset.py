"""Append-only store of human-provided (observation, action) pairs.

Rows live in memory and are mirrored to a CSV file as they arrive, so a
crash loses at most the row being written. Exactly one writer (the
interaction loop) appends; any number of readers (the trainer, metrics)
sample concurrently and always see a consistent prefix. Floats are written
as decimal text with 17 significant digits, which round-trips IEEE doubles
exactly.

CSV layout: header ``episode,step,source,o0..o14,a0..a3``, one sample per
row, source either ``demonstration`` or ``intervention``.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DatasetError

OBS_COLUMNS = 15
ACT_COLUMNS = 4
CSV_HEADER = (
    ["episode", "step", "source"]
    + [f"o{i}" for i in range(OBS_COLUMNS)]
    + [f"a{i}" for i in range(ACT_COLUMNS)]
)


class SampleSource(Enum):
    DEMONSTRATION = "demonstration"
    INTERVENTION = "intervention"


@dataclass(frozen=True)
class HumanSample:
    episode_id: int
    step: int
    source: SampleSource
    observation: tuple[float, ...]
    action: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.observation) != OBS_COLUMNS:
            raise ValueError(f"observation must have {OBS_COLUMNS} entries")
        if len(self.action) != ACT_COLUMNS:
            raise ValueError(f"action must have {ACT_COLUMNS} entries")
        if not all(math.isfinite(x) for x in self.observation + self.action):
            raise ValueError("sample contains non-finite values")


def _fmt(x: float) -> str:
    return format(x, ".17g")


class HumanDataset:
    """CSV-backed sample store; one writer, prefix-consistent concurrent readers."""

    def __init__(self, path, samples: list[HumanSample] | None = None) -> None:
        self.path = os.fspath(path)
        self._samples: list[HumanSample] = list(samples or [])
        try:
            exists = os.path.exists(self.path)
            self._fh = open(self.path, "a", newline="")
            if not exists or os.path.getsize(self.path) == 0:
                self._fh.write(",".join(CSV_HEADER) + "\n")
                self._fh.flush()
        except OSError as exc:
            raise DatasetError(f"cannot open dataset file {self.path}: {exc}") from exc

    @classmethod
    def open(cls, path) -> "HumanDataset":
        """Load an existing CSV (or start a fresh one) and continue appending to it."""
        samples: list[HumanSample] = []
        if os.path.exists(path) and os.path.getsize(path) > 0:
            try:
                with open(path, newline="") as fh:
                    reader = csv.reader(fh)
                    header = next(reader)
                    if header != CSV_HEADER:
                        raise DatasetError(f"unexpected CSV header in {path}: {header}")
                    for row in reader:
                        if not row:
                            continue
                        samples.append(HumanSample(
                            episode_id=int(row[0]),
                            step=int(row[1]),
                            source=SampleSource(row[2]),
                            observation=tuple(float(x) for x in row[3:3 + OBS_COLUMNS]),
                            action=tuple(float(x) for x in row[3 + OBS_COLUMNS:]),
                        ))
            except (OSError, ValueError) as exc:
                raise DatasetError(f"cannot read dataset file {path}: {exc}") from exc
        return cls(path, samples)

    def close(self) -> None:
        self._fh.close()

    @property
    def count(self) -> int:
        return len(self._samples)

    def row(self, i: int) -> HumanSample:
        return self._samples[i]

    def append(self, sample: HumanSample) -> None:
        """Persist one row and make it visible to readers. Raises DatasetError on I/O failure."""
        fields = (
            [str(sample.episode_id), str(sample.step), sample.source.value]
            + [_fmt(x) for x in sample.observation]
            + [_fmt(x) for x in sample.action]
        )
        try:
            self._fh.write(",".join(fields) + "\n")
            self._fh.flush()
        except (OSError, ValueError) as exc:
            raise DatasetError(f"cannot append to {self.path}: {exc}") from exc
        # In-memory list grows only after the row is on disk; list.append is
        # atomic under the GIL, so readers never see a half-written sample.
        self._samples.append(sample)

    def new_samples_since(self, watermark: int) -> int:
        return self.count - watermark

    def sample_minibatch(self, n: int, rng: np.random.Generator):
        """Draw n rows uniformly with replacement (valid below n rows too)."""
        from .mlp import Minibatch

        count = self.count
        if count < 1:
            raise DatasetError("cannot sample from an empty dataset")
        rows = [self._samples[i] for i in rng.integers(0, count, size=n)]
        return Minibatch(
            observations=np.array([r.observation for r in rows], dtype=np.float64),
            actions=np.array([r.action for r in rows], dtype=np.float64),
        )

    def source_counts(self) -> dict[SampleSource, int]:
        counts = {SampleSource.DEMONSTRATION: 0, SampleSource.INTERVENTION: 0}
        for s in self._samples:
            counts[s.source] += 1
        return counts
