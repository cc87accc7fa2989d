import json

import pytest

from sstaf.config import (PipelineConfig, apply_overrides, build_config, load_config, parse_override)
from sstaf.tensor import ConfigError


def test_defaults_validate():
    cfg = build_config()
    assert cfg.stft.n_fft == 128 and cfg.model.d_h == 64 and cfg.train.batch_size == 16
    assert cfg.eval.scheme == "kfold" and cfg.eval.k == 5


def test_roundtrip_through_dict():
    cfg = build_config(overrides=["model.heads=4", "train.epochs=3"])
    back = PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg


@pytest.mark.parametrize("tree,where", [({"modle": {}}, "unknown config keys: ['modle']"),
                                        ({"model": {"dh": 3}}, "in model"),
                                        ({"train": {"lr": 1}}, "in train")])
def test_unknown_keys_rejected(tree, where):
    with pytest.raises(ConfigError, match=where.replace("[", r"\[").replace("]", r"\]")):
        build_config(tree)


def test_section_validation_runs_before_work():
    with pytest.raises(ConfigError):
        build_config(overrides=["model.d_h=10", "model.heads=3"])
    with pytest.raises(ConfigError):
        build_config(overrides=["stft.hop=0"])
    with pytest.raises(ConfigError):
        build_config(overrides=["eval.scheme=\"holdout\""])


def test_override_parsing():
    assert parse_override("train.lr_start=0.01") == (["train", "lr_start"], 0.01)
    assert parse_override("eval.scheme=loso") == (["eval", "scheme"], "loso")
    assert parse_override("train.betas=[0.8, 0.9]") == (["train", "betas"], [0.8, 0.9])
    with pytest.raises(ConfigError):
        parse_override("train.epochs")
    with pytest.raises(ConfigError):
        apply_overrides({"train": 3}, ["train.epochs=2"])


def test_overrides_do_not_mutate_input():
    tree = {"train": {"epochs": 5}}
    out = apply_overrides(tree, ["train.epochs=7"])
    assert tree["train"]["epochs"] == 5 and out["train"]["epochs"] == 7


def test_seed_threads_through_stages():
    cfg = build_config(seed=11)
    assert cfg.model.seed == cfg.train.seed == cfg.eval.seed == cfg.synth.seed == 11


def test_load_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"train": {"epochs": 2}, "eval": {"scheme": "loso"}}))
    cfg = load_config(p, ["train.batch_size=4"])
    assert cfg.train.epochs == 2 and cfg.train.batch_size == 4 and cfg.eval.scheme == "loso"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
