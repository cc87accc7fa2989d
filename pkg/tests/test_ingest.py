import json
import logging

import numpy as np
import pytest

from sstaf.dsp import PreprocessConfig, Recording, preprocess
from sstaf.ingest.edf import (AnnotationEvent, EdfHeader, EdfParseError, SignalHeader, encode_tal, parse_edf,
                              parse_tal, write_edf)
from sstaf.ingest.epochs import (CLASS_NAMES, DEFAULT_LABEL_MAP, EPOCH_LEN, IngestSummary, RawEpoch,
                                 epochs_from_recording, extract_epochs, select_mi_runs, standardize_length)
from sstaf.ingest.pipeline import IngestConfig, ingest_directory, preprocess_epochs
from sstaf.ingest.store import EpochSet, StoreError, read_epoch_store, write_epoch_store
from sstaf.tensor import ConfigError

FS = 160.0


def test_midpoint_mapping_golden():
    sig = dict(physical_min=-100.0, physical_max=100.0, digital_min=-32768, digital_max=32767,
               samples_per_record=160)
    hdr = EdfHeader(n_records=1, record_duration=1.0, signals=[SignalHeader("A", **sig), SignalHeader("B", **sig)])
    buf = write_edf(hdr, [np.zeros(160, "<i2"), np.full(160, 32767, "<i2")])
    _, rec, _ = parse_edf(buf)
    assert rec.data[0, 0] == pytest.approx(-100 + 32768 * 200 / 65535, abs=1e-12)
    assert rec.data[0, 0] == pytest.approx(0.0015, abs=1e-4)
    assert rec.data[0, 1] == pytest.approx(100.0)


def test_tal_with_spaced_duration():
    assert parse_tal(b"+1.5\x15 2\x14T1\x14") == [AnnotationEvent(1.5, 2.0, "T1")]


def test_empty_stream_errors_at_zero():
    with pytest.raises(EdfParseError) as err:
        parse_edf(b"")
    assert err.value.offset == 0


def test_annotation_event_invariants():
    with pytest.raises(ValueError):
        AnnotationEvent(-1.0, 1.0, "T0")
    with pytest.raises(ValueError):
        AnnotationEvent(1.0, -1.0, "T0")


# -- run selection ------------------------------------------------------------

def test_select_mi_runs():
    files = [f"S001R{r:02d}.edf" for r in range(1, 15)]
    assert select_mi_runs(files) == [f"S001R{r:02d}.edf" for r in (2, 4, 6, 8, 10, 12)]
    assert select_mi_runs([]) == []
    many = [f"S{s:03d}R{r:02d}.edf" for s in range(1, 104) for r in range(1, 15)]
    assert len(select_mi_runs(many)) == 618


def test_select_mi_runs_warns_on_missing(caplog):
    with caplog.at_level(logging.WARNING):
        kept = select_mi_runs(["S002R04.edf", "S002R02.edf", "notes.txt"])
    assert kept == ["S002R02.edf", "S002R04.edf"]
    assert "missing imagery runs" in caplog.text


# -- trial cutting --------------------------------------------------------------

def _rec(n=2000, c=3):
    data = np.arange(n * c, dtype=float).reshape(n, c)
    return Recording(data, FS, tuple(f"c{i}" for i in range(c)))


def test_extract_epoch_lengths_and_labels():
    rec = _rec()
    events = [AnnotationEvent(0.0, 4.1, "T1"), AnnotationEvent(5.0, 4.0, "T2"), AnnotationEvent(9.5, 1.0, "T0")]
    raw = extract_epochs(rec, events, DEFAULT_LABEL_MAP[6])
    assert [r.data.shape[0] for r in raw] == [656, 640, 160]
    assert [CLASS_NAMES[r.label] for r in raw] == ["left", "right", "relax"]
    np.testing.assert_array_equal(raw[1].data, rec.data[800:1440])
    assert extract_epochs(rec, [], DEFAULT_LABEL_MAP[6]) == []


def test_excluded_codes_and_overrun(caplog):
    rec = _rec(n=2000)
    summary = IngestSummary()
    events = [AnnotationEvent(0.0, 4.0, "T1"), AnnotationEvent(4.0, 4.0, "T0"), AnnotationEvent(10.0, 4.0, "T0")]
    with caplog.at_level(logging.WARNING):
        raw = extract_epochs(rec, events, DEFAULT_LABEL_MAP[4], summary=summary)
    assert len(raw) == 1 and raw[0].label == 0
    assert summary.excluded_codes == 1 and summary.dropped_overrun == 1
    assert "past the recording end" in caplog.text


def test_standardize_length():
    mk = lambda n: RawEpoch(np.arange(n * 2, dtype=float).reshape(n, 2), 1, 3, 4, 0.0)
    long = standardize_length(mk(656))
    assert long.data.shape == (640, 2)
    np.testing.assert_array_equal(long.data, mk(656).data[:640])
    assert standardize_length(mk(640)).data.shape == (640, 2)
    assert standardize_length(mk(416)) is None


def test_epochs_from_recording_summary():
    rec = _rec(n=3000)
    events = [AnnotationEvent(0.0, 4.1, "T1"), AnnotationEvent(5.0, 2.6, "T0"), AnnotationEvent(9.0, 4.0, "T2")]
    summary = IngestSummary()
    eps = epochs_from_recording(rec, events, DEFAULT_LABEL_MAP[2], subject=7, run=2, summary=summary)
    assert len(eps) == 2 and all(e.data.shape == (EPOCH_LEN, 3) for e in eps)
    assert summary.kept == 2 and summary.discarded_short == 1
    assert summary.to_dict()["raw_lengths"] == {"416": 1, "640": 1, "656": 1}
    again = epochs_from_recording(rec, events, DEFAULT_LABEL_MAP[2], subject=7, run=2)
    for a, b in zip(eps, again):
        np.testing.assert_array_equal(a.data, b.data)


# -- epoch store ----------------------------------------------------------------

def _epoch_set(rng, n=6, c=4):
    return EpochSet(rng.standard_normal((n, EPOCH_LEN, c)).astype(np.float32), rng.integers(0, 3, n),
                    np.repeat([1, 2], n // 2), np.arange(n) % 3 + 1, FS, tuple(f"E{i}" for i in range(c)))


def test_store_roundtrip_and_layout(tmp_path, rng):
    eps = _epoch_set(rng)
    write_epoch_store(tmp_path / "s", eps)
    back = read_epoch_store(tmp_path / "s")
    np.testing.assert_array_equal(back.data, eps.data)
    np.testing.assert_array_equal(back.labels, eps.labels)
    np.testing.assert_array_equal(back.subjects, eps.subjects)
    assert back.channel_labels == eps.channel_labels and back.fs == FS
    index = json.loads((tmp_path / "s" / "index.json").read_text())
    assert index[1] == {"offset": EPOCH_LEN * 4 * 4, "subject": int(eps.subjects[1]), "run": int(eps.runs[1]),
                        "label": int(eps.labels[1])}
    raw = (tmp_path / "s" / "epochs.bin").read_bytes()
    np.testing.assert_array_equal(np.frombuffer(raw[:EPOCH_LEN * 16], "<f4").reshape(EPOCH_LEN, 4), eps.data[0])
    meta = json.loads((tmp_path / "s" / "meta.json").read_text())
    assert meta["n_fft"] == 128 and meta["fs"] == FS


def test_store_is_byte_deterministic(tmp_path, rng):
    eps = _epoch_set(rng)
    for name in ("a", "b"):
        write_epoch_store(tmp_path / name, eps)
    for f in ("epochs.bin", "index.json", "meta.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_store_errors(tmp_path, rng):
    with pytest.raises(StoreError):
        read_epoch_store(tmp_path / "missing")
    write_epoch_store(tmp_path / "s", _epoch_set(rng))
    (tmp_path / "s" / "epochs.bin").write_bytes(b"\x00" * 10)
    with pytest.raises(StoreError):
        read_epoch_store(tmp_path / "s")
    with pytest.raises(StoreError):
        write_epoch_store(tmp_path / "bad", EpochSet(np.zeros((1, 100, 2)), [0], [1], [1], FS, ("a", "b")))


# -- directory pipeline ---------------------------------------------------------

def _write_run(path, subject, run, rng, n_sec=30, c=4):
    n = int(n_sec * FS)
    sigs = [SignalHeader(f"C{i}", physical_min=-500.0, physical_max=500.0, digital_min=-32768,
                         digital_max=32767, samples_per_record=160) for i in range(c)]
    sigs.append(SignalHeader("EDF Annotations", physical_dimension="", samples_per_record=60))
    hdr = EdfHeader(reserved="EDF+C", n_records=n_sec, record_duration=1.0, signals=sigs)
    digital = [rng.integers(-3000, 3000, n).astype("<i2") for _ in range(c)]
    events = [AnnotationEvent(0.0, 4.2, "T0"), AnnotationEvent(4.2, 4.1, "T1"), AnnotationEvent(8.3, 4.1, "T2"),
              AnnotationEvent(12.4, 2.0, "T0")]
    path.write_bytes(write_edf(hdr, digital, encode_tal(events, record_onset=0.0)))


def test_ingest_directory(tmp_path, rng):
    for s in (1, 2):
        for r in (1, 2, 4):
            _write_run(tmp_path / f"S{s:03d}R{r:02d}.edf", s, r, rng)
    eps, summary = ingest_directory(tmp_path)
    # run 2 keeps T0/T1/T2 (3 full-length), run 4 keeps T0 only; 2 s trials are short
    assert len(eps) == 2 * (3 + 1)
    assert summary.discarded_short == 4 and summary.excluded_codes == 4
    assert sorted(set(eps.runs.tolist())) == [2, 4]
    assert eps.data.shape[1:] == (EPOCH_LEN, 4)
    pre, _ = ingest_directory(tmp_path, preprocess_cfg=PreprocessConfig())
    assert not np.allclose(pre.data, eps.data)
    np.testing.assert_allclose(pre.data.sum(axis=2), 0, atol=1e-9)


def test_ingest_preprocess_matches_continuous_filtering(tmp_path, rng):
    _write_run(tmp_path / "S001R02.edf", 1, 2, rng)
    from sstaf.ingest.edf import read_edf
    _, rec, events = read_edf(tmp_path / "S001R02.edf")
    filtered = preprocess(rec)
    eps, _ = ingest_directory(tmp_path, preprocess_cfg=PreprocessConfig())
    start = int(round(4.2 * FS))
    np.testing.assert_allclose(eps.data[1], filtered.data[start:start + EPOCH_LEN], atol=1e-12)


def test_ingest_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        IngestConfig(dataset="bci-iv-2a").validate()
    with pytest.raises(ConfigError):
        IngestConfig(label_map={"2": {"T1": "feet"}}).validate()
    with pytest.raises(FileNotFoundError):
        ingest_directory(tmp_path)


def test_preprocess_epochs(rng):
    eps = _epoch_set(rng)
    out = preprocess_epochs(eps)
    np.testing.assert_allclose(out.data.sum(axis=2), 0, atol=1e-9)
    assert out.meta["preprocessed"]
