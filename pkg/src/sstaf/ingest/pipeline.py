"""EDF directory -> epoch set, with optional filtering of the continuous recordings."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from ..dsp import PreprocessConfig, preprocess, preprocess_array
from ..tensor import ConfigError
from .edf import read_edf
from .epochs import (CLASS_NAMES, DEFAULT_LABEL_MAP, MI_RUNS, IngestSummary, epochs_from_recording,
                     parse_run_name, select_mi_runs)
from .store import EpochSet

log = logging.getLogger(__name__)

DATASETS = ("eegmmidb",)


@dataclass
class IngestConfig:
    dataset: str = "eegmmidb"
    runs: tuple[int, ...] = MI_RUNS
    # run number -> {annotation code -> class name}
    label_map: dict = field(default_factory=lambda: {str(k): dict(v) for k, v in DEFAULT_LABEL_MAP.items()})
    classes: tuple[str, ...] = CLASS_NAMES

    def __post_init__(self):
        self.runs = tuple(int(r) for r in self.runs)
        self.classes = tuple(self.classes)
        self.label_map = {str(k): dict(v) for k, v in self.label_map.items()}

    def validate(self) -> None:
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}; EDF ingest supports {DATASETS}")
        for run, codes in self.label_map.items():
            if not str(run).isdigit():
                raise ConfigError(f"label_map keys must be run numbers, got {run!r}")
            for code, name in codes.items():
                if name not in self.classes:
                    raise ConfigError(f"label_map run {run} code {code} maps to unknown class {name!r}")

    def map_for_run(self, run: int) -> dict[str, str]:
        return self.label_map.get(str(run), {})


def ingest_directory(in_dir, cfg: IngestConfig | None = None,
                     preprocess_cfg: PreprocessConfig | None = None) -> tuple[EpochSet, IngestSummary]:
    """Parse every imagery-run EDF under ``in_dir`` and cut fixed-length epochs.

    With ``preprocess_cfg`` the band-pass/notch/CAR chain runs on each
    continuous recording before cutting, so filter transients stay out of
    the trials.
    """
    cfg = cfg or IngestConfig()
    cfg.validate()
    root = Path(in_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"{root} is not a directory")
    files = select_mi_runs(sorted({p for p in root.rglob("*") if p.suffix.lower() == ".edf"}), cfg.runs)
    if not files:
        raise FileNotFoundError(f"no imagery-run EDF files (SxxxRyy.edf) under {root}")

    summary = IngestSummary()
    epochs, fs, labels = [], None, None
    for path in files:
        subject, run = parse_run_name(path)
        _, rec, events = read_edf(path)
        if fs is None:
            fs, labels = rec.fs, rec.channel_labels
        elif rec.fs != fs or rec.channel_labels != labels:
            raise ValueError(f"{path}: sampling rate or montage differs from the first recording")
        if preprocess_cfg is not None:
            rec = preprocess(rec, preprocess_cfg)
        epochs.extend(epochs_from_recording(rec, events, cfg.map_for_run(run), subject, run, summary,
                                            cfg.classes))
    log.info("ingest: kept %d epochs, %d short, %d overrun", summary.kept, summary.discarded_short,
             summary.dropped_overrun)
    eps = EpochSet.from_epochs(epochs, fs, labels, cfg.classes)
    eps.meta["ingest_summary"] = summary.to_dict()
    return eps, summary


def preprocess_epochs(eps: EpochSet, cfg: PreprocessConfig | None = None) -> EpochSet:
    """Filter each stored epoch independently (for stores whose recordings are unavailable)."""
    cfg = cfg or PreprocessConfig()
    if len(eps) == 0:
        return eps
    data = preprocess_array(eps.data, eps.fs, cfg, time_axis=1, channel_axis=2)
    out = EpochSet(data, eps.labels, eps.subjects, eps.runs, eps.fs, eps.channel_labels,
                   eps.class_names, dict(eps.meta))
    out.meta["preprocessed"] = True
    return out

