"""On-disk epoch store: ``epochs.bin`` + ``index.json`` + ``meta.json``."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .epochs import CLASS_NAMES, EPOCH_LEN, Epoch


class StoreError(ValueError):
    pass


@dataclass
class EpochSet:
    """Epochs held in memory as one (n, T, C) array plus per-epoch tags."""

    data: np.ndarray
    labels: np.ndarray
    subjects: np.ndarray
    runs: np.ndarray
    fs: float = 160.0
    channel_labels: tuple[str, ...] = ()
    class_names: tuple[str, ...] = CLASS_NAMES
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.subjects = np.asarray(self.subjects, dtype=np.int64)
        self.runs = np.asarray(self.runs, dtype=np.int64)
        n = len(self.data)
        if not (len(self.labels) == len(self.subjects) == len(self.runs) == n):
            raise StoreError("epoch data and tag arrays differ in length")
        if n and self.data.ndim != 3:
            raise StoreError(f"epoch array must be (n, T, C), got {self.data.shape}")
        if not self.channel_labels and n:
            self.channel_labels = tuple(f"Ch{i + 1:02d}" for i in range(self.data.shape[2]))
        self.channel_labels = tuple(self.channel_labels)
        self.class_names = tuple(self.class_names)

    def __len__(self) -> int:
        return len(self.data)

    @property
    def n_channels(self) -> int:
        return self.data.shape[2]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subject_ids(self) -> list[int]:
        return sorted(set(self.subjects.tolist()))

    def keys(self, idx=None) -> list[tuple[int, int, int]]:
        """(subject, run, epoch index) identifiers."""
        idx = np.arange(len(self)) if idx is None else np.asarray(idx)
        return [(int(self.subjects[i]), int(self.runs[i]), int(i)) for i in idx]

    def select(self, idx) -> EpochSet:
        idx = np.asarray(idx, dtype=np.int64)
        return EpochSet(self.data[idx], self.labels[idx], self.subjects[idx], self.runs[idx],
                        self.fs, self.channel_labels, self.class_names, dict(self.meta))

    def subject_mask(self, subjects) -> np.ndarray:
        return np.isin(self.subjects, np.asarray(sorted(subjects), dtype=np.int64))

    @classmethod
    def from_epochs(cls, epochs: Sequence[Epoch], fs: float, channel_labels, class_names=CLASS_NAMES) -> EpochSet:
        if not epochs:
            return cls(np.zeros((0, EPOCH_LEN, len(channel_labels))), [], [], [], fs, channel_labels, class_names)
        return cls(np.stack([e.data for e in epochs]), [e.label for e in epochs],
                   [e.subject for e in epochs], [e.run for e in epochs], fs, channel_labels, class_names)


def is_epoch_store(path) -> bool:
    p = Path(path)
    return (p / "epochs.bin").exists() and (p / "index.json").exists() and (p / "meta.json").exists()


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def write_epoch_store(path, eps: EpochSet, extra_meta: dict | None = None) -> Path:
    """Persist ``eps``; byte-identical for identical inputs."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    n, t, c = (len(eps), *eps.data.shape[1:]) if len(eps) else (0, EPOCH_LEN, len(eps.channel_labels))
    if n and t != EPOCH_LEN:
        raise StoreError(f"epochs must have {EPOCH_LEN} rows, got {t}")
    data = np.ascontiguousarray(eps.data, dtype="<f4")
    rec_bytes = t * c * 4
    (out / "epochs.bin").write_bytes(data.tobytes())
    index = [{"offset": i * rec_bytes, "subject": int(eps.subjects[i]), "run": int(eps.runs[i]),
              "label": int(eps.labels[i])} for i in range(n)]
    _dump(index, out / "index.json")
    meta = {"fs": float(eps.fs), "channel_labels": list(eps.channel_labels),
            "classes": list(eps.class_names), "epoch_len": EPOCH_LEN,
            "n_fft": 128, "hop": 64, "format": "sstaf-epochs-1"}
    meta.update(eps.meta)
    if extra_meta:
        meta.update(extra_meta)
    _dump(meta, out / "meta.json")
    return out


def read_epoch_store(path) -> EpochSet:
    p = Path(path)
    if not is_epoch_store(p):
        raise StoreError(f"{p} is not an epoch store (needs epochs.bin, index.json, meta.json)")
    meta = json.loads((p / "meta.json").read_text())
    index = json.loads((p / "index.json").read_text())
    labels = meta.get("channel_labels")
    if not labels:
        raise StoreError(f"{p}/meta.json has no channel_labels")
    if meta.get("fs", 0) <= 0:
        raise StoreError(f"{p}/meta.json: fs must be positive")
    classes = tuple(meta.get("classes", CLASS_NAMES))
    c = len(labels)
    t = int(meta.get("epoch_len", EPOCH_LEN))
    if t != EPOCH_LEN:
        raise StoreError(f"{p}: epoch length {t} != {EPOCH_LEN}")
    blob = (p / "epochs.bin").read_bytes()
    rec_bytes = t * c * 4
    data = np.empty((len(index), t, c), dtype=np.float32)
    for i, entry in enumerate(index):
        off = int(entry["offset"])
        if off < 0 or off + rec_bytes > len(blob):
            raise StoreError(f"{p}: epoch {i} at offset {off} runs past the end of epochs.bin")
        lab = int(entry["label"])
        if not 0 <= lab < len(classes):
            raise StoreError(f"{p}: epoch {i} has label {lab} outside {classes}")
        data[i] = np.frombuffer(blob, dtype="<f4", count=t * c, offset=off).reshape(t, c)
    if not np.all(np.isfinite(data)):
        raise StoreError(f"{p}: epochs.bin contains non-finite values")
    extra = {k: v for k, v in meta.items()
             if k not in ("fs", "channel_labels", "classes", "epoch_len", "n_fft", "hop", "format")}
    return EpochSet(data.astype(np.float64), [e["label"] for e in index], [e["subject"] for e in index],
                    [e["run"] for e in index], float(meta["fs"]), tuple(labels), classes, extra)
