"""``sstaf`` command-line entry point.

Exit codes: 0 success, 1 validation/config error, 2 I/O or parse error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import PipelineConfig, build_config, read_json
from .dsp import fit_channel_stats
from .evaluation import SplitPlan, featurize, make_epoch_kfold, make_kfold, make_loso, run_cv
from .exports import export_attention, export_topo
from .ingest.edf import EdfParseError
from .ingest.pipeline import ingest_directory, preprocess_epochs
from .ingest.store import EpochSet, StoreError, is_epoch_store, read_epoch_store, write_epoch_store
from .model import ABLATIONS, SstafModel
from .stft import featurize_store, is_feature_store, read_feature_store
from .synth import generate
from .tensor import ConfigError, DimensionError
from .train import train_run

log = logging.getLogger("sstaf")

_SECTIONS = {f.name for f in dataclasses.fields(PipelineConfig)}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _dump_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _config(args, section: str | None = None, section_file=None) -> PipelineConfig:
    """Config from ``--config`` (a full tree, or a bare subtree for ``section``),
    an optional per-section file, ``--set`` overrides and ``--seed``."""
    tree = {}
    if args.config:
        tree = read_json(args.config)
        if section and not set(tree) <= _SECTIONS:
            tree = {section: tree}
    if section_file:
        tree.setdefault(section, {}).update(read_json(section_file))
    return build_config(tree, args.set, args.seed)


def _epochs_for_features(feature_store) -> tuple[EpochSet, dict]:
    """The source epoch store behind a feature store (or an epoch store given directly)."""
    path = Path(feature_store)
    if is_feature_store(path):
        _, meta = read_feature_store(path)
        return read_epoch_store(meta["source"]), meta
    if is_epoch_store(path):
        return read_epoch_store(path), {}
    raise StoreError(f"{path} is neither a feature store nor an epoch store")


def _check_stft(cfg: PipelineConfig, meta: dict) -> None:
    for key in ("n_fft", "hop", "log_power"):
        if key in meta and meta[key] != getattr(cfg.stft, key):
            raise ConfigError(f"feature store was built with {key}={meta[key]}, config says "
                              f"{getattr(cfg.stft, key)}")


# -- subcommands --------------------------------------------------------------

def cmd_ingest(args) -> None:
    cfg = _config(args, "ingest")
    cfg.ingest = dataclasses.replace(cfg.ingest, dataset=args.dataset)
    cfg.ingest.validate()
    eps, summary = ingest_directory(args.inp, cfg.ingest, cfg.dsp if args.preprocess else None)
    write_epoch_store(args.out, eps, {"preprocessed": bool(args.preprocess)})
    _dump_json(summary.to_dict(), Path(args.out) / "summary.json")
    print(f"{summary.kept} epochs kept, {summary.discarded_short} discarded as short -> {args.out}")


def cmd_import_epochs(args) -> None:
    _config(args)
    eps = read_epoch_store(args.inp)
    if len(eps) == 0:
        raise StoreError(f"{args.inp} holds no epochs")
    write_epoch_store(args.out, eps, {"imported_from": str(Path(args.inp).resolve())})
    print(f"imported {len(eps)} epochs from {len(eps.subject_ids())} subjects -> {args.out}")


def cmd_preprocess(args) -> None:
    cfg = _config(args, "dsp")
    src = Path(args.inp)
    if is_epoch_store(src):
        eps = preprocess_epochs(read_epoch_store(src), cfg.dsp)
        log.warning("filtering stored epochs individually; transients are not excluded")
    else:
        eps, summary = ingest_directory(src, cfg.ingest, cfg.dsp)
        _dump_json(summary.to_dict(), Path(args.out) / "summary.json")
    write_epoch_store(args.out, eps, {"preprocessed": True})
    print(f"{len(eps)} preprocessed epochs -> {args.out}")


def cmd_features(args) -> None:
    over = list(args.set or [])
    if args.n_fft is not None:
        over.append(f"stft.n_fft={args.n_fft}")
    if args.hop is not None:
        over.append(f"stft.hop={args.hop}")
    if args.log_power:
        over.append("stft.log_power=true")
    args.set = over
    cfg = _config(args, "stft")
    featurize_store(args.inp, args.out, cfg.stft)
    print(f"features -> {args.out}")


def cmd_synth(args) -> None:
    cfg = _config(args, "synth")
    eps = generate(cfg.synth)
    write_epoch_store(args.out, eps)
    print(f"{len(eps)} synthetic epochs from {cfg.synth.n_subjects} subjects -> {args.out}")


def _split_subjects(path, fold: int, subjects) -> tuple[list[int], list[int]]:
    if path is None:
        return list(subjects), []
    d = read_json(path)
    if "folds" in d:
        plan = SplitPlan.from_dict(d)
        if not 0 <= fold < len(plan.folds):
            raise ConfigError(f"fold {fold} outside the {len(plan.folds)} folds of {path}")
        return list(plan.folds[fold].train), list(plan.folds[fold].test)
    if "train" not in d:
        raise ConfigError(f"{path} needs either 'folds' or 'train' (and optional 'test') subject lists")
    return list(d["train"]), list(d.get("test", []))


def cmd_train(args) -> None:
    cfg = _config(args, "train", args.train_config)
    eps, meta = _epochs_for_features(args.features)
    _check_stft(cfg, meta)
    train_subj, test_subj = _split_subjects(args.split, args.fold, eps.subject_ids())
    if set(train_subj) & set(test_subj):
        raise ConfigError("split puts the same subject in train and test")
    tr = eps.select(np.flatnonzero(eps.subject_mask(train_subj)))
    if len(tr) == 0:
        raise ConfigError("split selects no training epochs")
    stats = fit_channel_stats(tr.data)
    x_tr = featurize(tr, stats, cfg.stft)
    val = None
    if test_subj:
        te = eps.select(np.flatnonzero(eps.subject_mask(test_subj)))
        val = (featurize(te, stats, cfg.stft), te.labels)
    mcfg = dataclasses.replace(cfg.model, channels=eps.n_channels, f_bins=x_tr.shape[2],
                               t_frames=x_tr.shape[3], n_classes=eps.n_classes)
    model = SstafModel(mcfg)
    result = train_run(model, (x_tr, tr.labels), val, cfg.train)
    out = Path(args.out)
    model.save(out)
    _dump_json(stats.to_dict(), out / "stats.json")
    _dump_json(dataclasses.asdict(cfg.stft), out / "stft.json")
    _dump_json(result.history, out / "history.json")
    _dump_json({"train": train_subj, "test": test_subj, "train_config": cfg.train.to_dict()}, out / "run.json")
    last = result.history[-1]
    print(f"trained {cfg.train.epochs} epochs, final train loss {last['train_loss']:.4f} -> {out}")


def _plan(cfg: PipelineConfig, eps: EpochSet) -> SplitPlan:
    if cfg.eval.leaky_split:
        log.warning("epoch-level split: subjects leak across folds; not a subject-independent estimate")
        return make_epoch_kfold(len(eps), cfg.eval.k, cfg.eval.seed)
    if cfg.eval.scheme == "loso":
        return make_loso(eps.subject_ids())
    return make_kfold(eps.subject_ids(), cfg.eval.k, cfg.eval.seed)


def _eval_args_to_overrides(args) -> None:
    over = list(args.set or [])
    if args.scheme is not None:
        over.append(f"eval.scheme={json.dumps(args.scheme)}")
    if args.k is not None:
        over.append(f"eval.k={args.k}")
    if args.workers is not None:
        over.append(f"eval.workers={args.workers}")
    if args.leaky_split:
        over.append("eval.leaky_split=true")
    args.set = over


def _run_eval(args, variant: str | None = None) -> None:
    _eval_args_to_overrides(args)
    if variant is not None:
        args.set += [f"model.{k}={json.dumps(v)}" for k, v in ABLATIONS[variant].items()]
    cfg = _config(args, "train", args.train_config)
    eps, meta = _epochs_for_features(args.features)
    _check_stft(cfg, meta)
    plan = _plan(cfg, eps)
    label = (variant or "full").replace("-", "_")
    report = run_cv(eps, plan, cfg.train, cfg.model, cfg.stft, cfg.eval.workers, label)
    doc = report.to_dict()
    doc["variant"] = label
    doc["plan"] = plan.to_dict()
    doc["config"] = cfg.to_dict()
    _dump_json(doc, Path(args.out))
    agg = report.aggregate["accuracy"]
    print(f"{label}: {plan.scheme} accuracy {agg['mean']:.4f} +/- {agg['std']:.4f} "
          f"over {len(plan.folds)} folds -> {args.out}")


def cmd_eval(args) -> None:
    _run_eval(args)


def cmd_ablate(args) -> None:
    _run_eval(args, args.variant)


def _parse_epochs(text):
    if text is None:
        return None
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"--epochs expects comma-separated integers, got {text!r}") from exc


def cmd_export_attention(args) -> None:
    _config(args)
    paths = export_attention(args.model, args.features, args.out, _parse_epochs(args.epochs))
    print("wrote " + ", ".join(str(p) for p in paths.values()))


def cmd_export_topo(args) -> None:
    cfg = _config(args, "dsp")
    path = export_topo(args.inp, args.out, args.variant, _parse_epochs(args.epochs), cfg.dsp)
    print(f"wrote {path}")


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON (or the subcommand's own section)")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (JSON-parsed); repeatable")
    common.add_argument("--seed", type=int, help="seed threaded through every stage")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="sstaf", description="Spatial-spectral-temporal attention EEG pipeline")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("ingest", parents=[common], help="EDF directory -> epoch store")
    s.add_argument("--dataset", default="eegmmidb")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--preprocess", action="store_true", help="filter continuous recordings before cutting")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("import-epochs", parents=[common], help="validate and copy an external epoch store")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_import_epochs)

    s = sub.add_parser("preprocess", parents=[common], help="band-pass, notch, CAR -> epoch store")
    s.add_argument("--in", dest="inp", required=True, help="EDF directory or epoch store")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("features", parents=[common], help="epoch store -> STFT feature store")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--n-fft", type=int)
    s.add_argument("--hop", type=int)
    s.add_argument("--log-power", action="store_true")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("synth", parents=[common], help="synthetic epoch store")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="train one model")
    s.add_argument("--features", required=True, help="feature store (or epoch store)")
    s.add_argument("--split", help="split JSON: a saved plan with 'folds' or {'train': [...], 'test': [...]}")
    s.add_argument("--fold", type=int, default=0)
    s.add_argument("--train-config", help="train section JSON")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    for name, func in (("eval", cmd_eval), ("ablate", cmd_ablate)):
        s = sub.add_parser(name, parents=[common], help="cross-validated evaluation"
                           if name == "eval" else "evaluate an ablation variant")
        s.add_argument("--features", required=True)
        s.add_argument("--scheme", choices=("kfold", "loso"))
        s.add_argument("--k", type=int)
        s.add_argument("--workers", type=int)
        s.add_argument("--leaky-split", action="store_true",
                       help="epoch-level k-fold that mixes subjects (comparison only)")
        s.add_argument("--train-config")
        s.add_argument("--out", required=True)
        if name == "ablate":
            s.add_argument("--variant", choices=sorted(ABLATIONS), required=True)
        s.set_defaults(func=func)

    s = sub.add_parser("export-attention", parents=[common], help="attention weights as CSV")
    s.add_argument("--model", required=True, help="checkpoint directory")
    s.add_argument("--features", required=True)
    s.add_argument("--epochs", help="comma-separated epoch indices (default all)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_attention)

    s = sub.add_parser("export-topo", parents=[common], help="per-channel mean amplitudes as CSV")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--variant", choices=("raw", "preprocessed"), default="raw")
    s.add_argument("--epochs")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_topo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (OSError, EdfParseError, StoreError) as exc:
        print(f"sstaf {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, DimensionError, ValueError, IndexError, KeyError) as exc:
        print(f"sstaf {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
