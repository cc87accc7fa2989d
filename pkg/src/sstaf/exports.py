"""Numeric exports behind the attention and topography figures (CSV only, no plotting)."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from .dsp import ChannelStats, PreprocessConfig, apply_standardize, preprocess_array
from .ingest.store import EpochSet, read_epoch_store
from .model import SstafModel
from .stft import StftConfig, bin_frequencies, read_feature_store, stft_power_batch
from .tensor import DimensionError

log = logging.getLogger(__name__)


def _select(n: int, epochs: Sequence[int] | None) -> np.ndarray:
    idx = np.arange(n) if epochs is None else np.asarray(list(epochs), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"epoch selection outside [0, {n})")
    return idx


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def load_model_features(model_dir, feature_store, epochs: Sequence[int] | None = None):
    """Model plus the exact features it expects for the selected epochs.

    When the model directory carries ``stats.json`` the features are rebuilt
    from the feature store's source epochs with those statistics; otherwise
    the stored (unstandardised) features are used as they are.
    """
    mdir = Path(model_dir)
    model = SstafModel.load(mdir)
    feats, meta = read_feature_store(feature_store)
    idx = _select(len(feats), epochs)
    stats_path, stft_path = mdir / "stats.json", mdir / "stft.json"
    if stats_path.exists():
        stats = ChannelStats.from_dict(json.loads(stats_path.read_text()))
        cfg = StftConfig(**json.loads(stft_path.read_text())) if stft_path.exists() else StftConfig()
        eps = read_epoch_store(meta["source"])
        x = stft_power_batch(apply_standardize(eps.data[idx], stats), cfg)
        labels = eps.channel_labels
    else:
        x = feats[idx]
        labels = tuple(f"Ch{i + 1:02d}" for i in range(feats.shape[1]))
    cfg = model.cfg
    if x.shape[1] != cfg.channels or x.shape[2] != cfg.f_bins:
        raise DimensionError(f"features {x.shape[1:]} do not match the checkpoint "
                             f"(channels={cfg.channels}, f_bins={cfg.f_bins})")
    return model, x, idx, labels, meta


def export_attention(model_dir, feature_store, out, epochs: Sequence[int] | None = None) -> dict[str, Path]:
    """Write ``spectral.csv`` (epochs x bins), ``spatial.csv`` (channels x epochs)
    and ``channel_means.csv`` (channels x epochs, mean input power)."""
    model, x, idx, labels, meta = load_model_features(model_dir, feature_store, epochs)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    w = model.attention_weights(x) if len(x) else {"spectral": np.zeros((0, x.shape[2])),
                                                    "spatial": np.zeros((0, x.shape[1]))}
    freqs = bin_frequencies(StftConfig(n_fft=2 * (x.shape[2] - 1)), float(meta.get("fs", 160.0)))
    cols = [f"epoch_{i}" for i in idx]
    paths = {"spectral": out / "spectral.csv", "spatial": out / "spatial.csv",
             "channel_means": out / "channel_means.csv"}
    _write_csv(paths["spectral"], ["epoch"] + [f"{f:.4f}Hz" for f in freqs],
               ([int(i)] + [_fmt(v) for v in row] for i, row in zip(idx, w["spectral"])))
    _write_csv(paths["spatial"], ["channel"] + cols,
               ([labels[c]] + [_fmt(v) for v in w["spatial"][:, c]] for c in range(x.shape[1])))
    means = x.mean(axis=(2, 3))
    _write_csv(paths["channel_means"], ["channel"] + cols,
               ([labels[c]] + [_fmt(v) for v in means[:, c]] for c in range(x.shape[1])))
    return paths


def channel_amplitudes(eps: EpochSet, variant: str = "raw", dsp: PreprocessConfig | None = None) -> np.ndarray:
    """Per-epoch, per-channel mean amplitude, shape (n, C)."""
    if variant not in ("raw", "preprocessed"):
        raise ValueError(f"variant must be 'raw' or 'preprocessed', got {variant!r}")
    data = eps.data
    if variant == "preprocessed" and len(eps):
        data = preprocess_array(data, eps.fs, dsp or PreprocessConfig(), time_axis=1, channel_axis=2)
    return data.mean(axis=1) if len(eps) else np.zeros((0, eps.n_channels))


def export_topo(epoch_store, out, variant: str = "raw", epochs: Sequence[int] | None = None,
                dsp: PreprocessConfig | None = None) -> Path:
    """One row per (segment, channel) with the channel's mean amplitude."""
    eps = read_epoch_store(epoch_store)
    idx = _select(len(eps), epochs)
    amp = channel_amplitudes(eps.select(idx), variant, dsp)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"topo_{variant}.csv"
    rows = ([int(i), int(eps.subjects[i]), eps.class_names[eps.labels[i]], label, _fmt(amp[k, c])]
            for k, i in enumerate(idx) for c, label in enumerate(eps.channel_labels))
    _write_csv(path, ["segment", "subject", "class", "channel", "mean_amplitude"], rows)
    return path
