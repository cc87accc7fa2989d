import csv
import json

import numpy as np
import pytest

from sstaf.cli import main
from sstaf.ingest.edf import AnnotationEvent, EdfHeader, SignalHeader, encode_tal, write_edf
from sstaf.ingest.store import EpochSet, read_epoch_store, write_epoch_store

SMALL = ["--set", "model.d_h=8", "--set", "model.heads=2", "--set", "model.layers=1", "--set", "model.d_ff=16",
         "--set", "train.epochs=1", "--set", "train.batch_size=8"]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(d / "ep"), "--set", "synth.n_subjects=6", "--set",
                 "synth.trials_per_class=2", "--set", "synth.channels=8"]) == 0
    assert main(["features", "--in", str(d / "ep"), "--out", str(d / "feat")]) == 0
    return d


def test_no_arguments_prints_usage(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_bad_flag_is_usage_error(capsys):
    assert main(["eval", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_missing_input_is_io_error(tmp_path, capsys):
    assert main(["features", "--in", str(tmp_path / "nope"), "--out", str(tmp_path / "f")]) == 2
    assert main(["import-epochs", "--in", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2


def test_unknown_config_key_is_validation_error(synth_dir, tmp_path, capsys):
    code = main(["eval", "--features", str(synth_dir / "feat"), "--out", str(tmp_path / "r.json"),
                 "--set", "train.learning_rate=1"])
    assert code == 1
    assert "unknown config keys" in capsys.readouterr().err
    assert not (tmp_path / "r.json").exists()


def test_eval_loso_report(synth_dir, tmp_path):
    out = tmp_path / "report.json"
    assert main(["eval", "--features", str(synth_dir / "feat"), "--scheme", "loso", "--out", str(out)] + SMALL) == 0
    rep = json.loads(out.read_text())
    assert len(rep["folds"]) == 6 and rep["variant"] == "full"
    assert rep["plan"]["scheme"] == "loso"
    assert rep["accuracy"] == pytest.approx(np.mean([f["accuracy"] for f in rep["folds"]]))


def test_ablate_label(synth_dir, tmp_path):
    out = tmp_path / "abl.json"
    assert main(["ablate", "--variant", "no-transformer", "--features", str(synth_dir / "feat"), "--scheme",
                 "kfold", "--k", "2", "--out", str(out)] + SMALL) == 0
    rep = json.loads(out.read_text())
    assert rep["variant"] == "no_transformer" and rep["label"] == "no_transformer"
    assert rep["config"]["model"]["use_transformer"] is False
    assert len(rep["folds"]) == 2


def test_leaky_split_flagged(synth_dir, tmp_path, caplog):
    out = tmp_path / "leaky.json"
    assert main(["eval", "--features", str(synth_dir / "feat"), "--leaky-split", "--k", "2",
                 "--out", str(out)] + SMALL) == 0
    rep = json.loads(out.read_text())
    assert rep["aggregate"]["leaky"] and rep["plan"]["scheme"] == "kfold-epochs"
    assert "leak" in caplog.text


def test_train_and_export_attention(synth_dir, tmp_path):
    split = tmp_path / "split.json"
    split.write_text(json.dumps({"train": [1, 2, 3, 4, 5], "test": [6]}))
    model = tmp_path / "model"
    assert main(["train", "--features", str(synth_dir / "feat"), "--split", str(split), "--out", str(model)]
                + SMALL) == 0
    for name in ("model.ckpt", "model.json", "stats.json", "stft.json", "history.json", "run.json"):
        assert (model / name).exists()
    assert json.loads((model / "run.json").read_text())["test"] == [6]
    out = tmp_path / "attn"
    assert main(["export-attention", "--model", str(model), "--features", str(synth_dir / "feat"),
                 "--epochs", "0,3,5", "--out", str(out)]) == 0
    spectral = _rows(out / "spectral.csv")
    assert len(spectral) == 4 and len(spectral[0]) == 66 and spectral[0][1] == "0.0000Hz"
    for row in spectral[1:]:
        assert sum(float(v) for v in row[1:]) == pytest.approx(1.0, abs=1e-9)
    spatial = _rows(out / "spatial.csv")
    assert spatial[0] == ["channel", "epoch_0", "epoch_3", "epoch_5"] and len(spatial) == 9
    cols = np.array([[float(v) for v in r[1:]] for r in spatial[1:]])
    np.testing.assert_allclose(cols.sum(axis=0), 1.0, atol=1e-9)
    assert len(_rows(out / "channel_means.csv")) == 9


def test_train_rejects_overlapping_split(synth_dir, tmp_path):
    split = tmp_path / "split.json"
    split.write_text(json.dumps({"train": [1, 2], "test": [2]}))
    assert main(["train", "--features", str(synth_dir / "feat"), "--split", str(split),
                 "--out", str(tmp_path / "m")] + SMALL) == 1


def test_export_attention_bad_epoch(synth_dir, tmp_path):
    split = tmp_path / "s.json"
    split.write_text(json.dumps({"train": [1, 2]}))
    assert main(["train", "--features", str(synth_dir / "feat"), "--split", str(split),
                 "--out", str(tmp_path / "m")] + SMALL) == 0
    assert main(["export-attention", "--model", str(tmp_path / "m"), "--features", str(synth_dir / "feat"),
                 "--epochs", "999", "--out", str(tmp_path / "a")]) == 1


def _topo_store(tmp_path, data):
    n, _, c = data.shape
    eps = EpochSet(data, np.arange(n) % 3, np.ones(n, int), np.ones(n, int), 160.0,
                   tuple(f"E{i}" for i in range(c)))
    write_epoch_store(tmp_path / "topo", eps)
    return tmp_path / "topo"


def test_export_topo_rows_and_zero_signal(tmp_path):
    store = _topo_store(tmp_path, np.zeros((2, 640, 64)))
    assert main(["export-topo", "--in", str(store), "--variant", "raw", "--out", str(tmp_path / "t")]) == 0
    rows = _rows(tmp_path / "t" / "topo_raw.csv")
    assert rows[0] == ["segment", "subject", "class", "channel", "mean_amplitude"]
    assert len(rows) == 1 + 2 * 64
    assert sum(1 for r in rows[1:] if r[0] == "0") == 64
    assert all(float(r[4]) == 0.0 for r in rows[1:])


def test_export_topo_preprocessed_car_sum(tmp_path):
    data = np.random.default_rng(0).standard_normal((3, 640, 8)).astype(np.float32) + 5.0
    store = _topo_store(tmp_path, data)
    assert main(["export-topo", "--in", str(store), "--variant", "preprocessed", "--out", str(tmp_path / "t")]) == 0
    rows = _rows(tmp_path / "t" / "topo_preprocessed.csv")
    for seg in ("0", "1", "2"):
        assert abs(sum(float(r[4]) for r in rows[1:] if r[0] == seg)) < 1e-9


def test_reruns_byte_identical(synth_dir, tmp_path):
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        assert main(["synth", "--out", str(d / "ep"), "--set", "synth.n_subjects=2", "--set",
                     "synth.trials_per_class=2", "--set", "synth.channels=4"]) == 0
        assert main(["features", "--in", str(d / "ep"), "--out", str(d / "f")]) == 0
        split = tmp_path / "s.json"
        split.write_text(json.dumps({"train": [1], "test": [2]}))
        assert main(["train", "--features", str(d / "f"), "--split", str(split), "--out", str(d / "m")]
                    + SMALL) == 0
        outs.append(d)
    for rel in ("ep/epochs.bin", "ep/index.json", "f/features.bin", "m/model.ckpt", "m/history.json"):
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes()


def test_ingest_and_import(tmp_path):
    raw = tmp_path / "raw"
    raw.mkdir()
    rng = np.random.default_rng(0)
    sigs = [SignalHeader(f"C{i}", physical_min=-100.0, physical_max=100.0, digital_min=-32768,
                         digital_max=32767, samples_per_record=160) for i in range(3)]
    sigs.append(SignalHeader("EDF Annotations", physical_dimension="", samples_per_record=60))
    hdr = EdfHeader(reserved="EDF+C", n_records=12, record_duration=1.0, signals=sigs)
    ev = [AnnotationEvent(0.0, 4.1, "T1"), AnnotationEvent(4.1, 4.1, "T2")]
    for s in (1, 2):
        data = [rng.integers(-2000, 2000, 12 * 160).astype("<i2") for _ in range(3)]
        (raw / f"S{s:03d}R06.edf").write_bytes(write_edf(hdr, data, encode_tal(ev, record_onset=0.0)))
    assert main(["ingest", "--in", str(raw), "--out", str(tmp_path / "ep"), "--preprocess"]) == 0
    eps = read_epoch_store(tmp_path / "ep")
    assert len(eps) == 4 and eps.class_names[eps.labels[0]] == "left"
    summary = json.loads((tmp_path / "ep" / "summary.json").read_text())
    assert summary["kept"] == 4
    assert main(["import-epochs", "--in", str(tmp_path / "ep"), "--out", str(tmp_path / "imp")]) == 0
    np.testing.assert_array_equal(read_epoch_store(tmp_path / "imp").data, eps.data)
    (raw / "S001R06.edf").write_bytes(b"garbage")
    assert main(["ingest", "--in", str(raw), "--out", str(tmp_path / "ep2")]) == 2
