"""Run selection, trial cutting and length standardisation."""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..dsp import Recording
from .edf import AnnotationEvent

log = logging.getLogger(__name__)

EPOCH_LEN = 640
CLASS_NAMES = ("relax", "left", "right")
MI_RUNS = (2, 4, 6, 8, 10, 12)

# unilateral imagery runs carry left/right fist trials; the remaining
# imagery runs (both fists / feet) only contribute their rest periods
_UNILATERAL = {"T0": "relax", "T1": "left", "T2": "right"}
_BILATERAL = {"T0": "relax"}
DEFAULT_LABEL_MAP = {2: _UNILATERAL, 6: _UNILATERAL, 10: _UNILATERAL,
                     4: _BILATERAL, 8: _BILATERAL, 12: _BILATERAL}

_RUN_NAME = re.compile(r"S(\d{3})R(\d{2})", re.IGNORECASE)


@dataclass
class Epoch:
    data: np.ndarray  # time x channels
    label: int
    subject: int
    run: int

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[0] != EPOCH_LEN:
            raise ValueError(f"epoch must have {EPOCH_LEN} rows, got shape {self.data.shape}")


@dataclass
class RawEpoch:
    data: np.ndarray
    label: int
    subject: int
    run: int
    onset: float


@dataclass
class IngestSummary:
    lengths: Counter = field(default_factory=Counter)
    kept: int = 0
    discarded_short: int = 0
    dropped_overrun: int = 0
    excluded_codes: int = 0

    def merge(self, other: IngestSummary) -> None:
        self.lengths.update(other.lengths)
        self.kept += other.kept
        self.discarded_short += other.discarded_short
        self.dropped_overrun += other.dropped_overrun
        self.excluded_codes += other.excluded_codes

    def to_dict(self) -> dict:
        return {
            "raw_lengths": {str(k): v for k, v in sorted(self.lengths.items())},
            "kept": self.kept,
            "discarded_short": self.discarded_short,
            "dropped_overrun": self.dropped_overrun,
            "excluded_codes": self.excluded_codes,
        }


def parse_run_name(path) -> tuple[int, int] | None:
    m = _RUN_NAME.search(Path(path).name)
    if not m:
        return None
    return int(m.group(1)), int(m.group(2))


def select_mi_runs(subject_files: Iterable, runs: Sequence[int] = MI_RUNS) -> list:
    """Keep only imagery runs (``SxxxRyy`` names), sorted by subject then run."""
    keep = []
    by_subject: dict[int, set[int]] = {}
    for f in subject_files:
        parsed = parse_run_name(f)
        if parsed is None:
            log.warning("skipping %s: name does not follow SxxxRyy", f)
            continue
        subject, run = parsed
        if run in runs:
            keep.append((subject, run, f))
            by_subject.setdefault(subject, set()).add(run)
    for subject, have in sorted(by_subject.items()):
        missing = sorted(set(runs) - have)
        if missing:
            log.warning("subject %03d is missing imagery runs %s", subject, missing)
    keep.sort(key=lambda t: (t[0], t[1]))
    return [f for _, _, f in keep]


def extract_epochs(rec: Recording, events: Sequence[AnnotationEvent], label_map: dict[str, str],
                   subject: int = 0, run: int = 0, classes: Sequence[str] = CLASS_NAMES,
                   summary: IngestSummary | None = None) -> list[RawEpoch]:
    """Cut one raw epoch per annotated trial; codes missing from ``label_map`` are dropped."""
    out = []
    n = rec.data.shape[0]
    for ev in sorted(events, key=lambda e: e.onset):
        name = label_map.get(ev.code)
        if name is None:
            if summary is not None:
                summary.excluded_codes += 1
            continue
        start = int(round(ev.onset * rec.fs))
        stop = int(round((ev.onset + ev.duration) * rec.fs))
        if stop > n:
            log.warning("subject %d run %d: trial at %.2fs runs past the recording end; dropped",
                        subject, run, ev.onset)
            if summary is not None:
                summary.dropped_overrun += 1
            continue
        if stop <= start:
            continue
        out.append(RawEpoch(rec.data[start:stop].copy(), classes.index(name), subject, run, ev.onset))
    return out


def standardize_length(raw: RawEpoch, length: int = EPOCH_LEN) -> Epoch | None:
    """Head-slice over-long trials to ``length`` samples; return None for short ones."""
    if raw.data.shape[0] < length:
        return None
    return Epoch(raw.data[:length], raw.label, raw.subject, raw.run)


def epochs_from_recording(rec: Recording, events, label_map, subject: int, run: int,
                          summary: IngestSummary | None = None, classes: Sequence[str] = CLASS_NAMES) -> list[Epoch]:
    summary = summary if summary is not None else IngestSummary()
    kept = []
    for raw in extract_epochs(rec, events, label_map, subject, run, classes, summary):
        summary.lengths[raw.data.shape[0]] += 1
        ep = standardize_length(raw)
        if ep is None:
            summary.discarded_short += 1
        else:
            summary.kept += 1
            kept.append(ep)
    return kept
