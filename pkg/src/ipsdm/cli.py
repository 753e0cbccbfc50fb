"""Command-line pipeline: prepare | balance | tokenizer-train | train |
evaluate | classify | report.

Stages communicate only through files under the configured output directory:

    prepare         train.csv val.csv test.csv manifest.json
    tokenizer-train vocab.json
    balance         train_balanced.csv balance_report.json
    train           model.ckpt history.json
    evaluate        report_<split>.json
    report          report.csv report.json [report.svg]

A single JSON config file drives every stage; a few flags override individual
values, and the IPSDM_SEED environment variable overrides every seed. Exit
codes: 0 success, 2 input error, 3 numeric failure, 64 usage error.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .balance import balance_corpus, balance_report
from .corpus import (
    Corpus,
    Label,
    SplitSpec,
    load_csv,
    merge,
    read_split_csv,
    save_split_csv,
    split,
)
from .errors import (
    ConfigError,
    InputError,
    IpsdmError,
    NumericError,
    UsageError,
)
from .metrics import (
    ModelReport,
    emit_report_csv,
    emit_report_json,
    render_report_svg,
    split_scores_from_dict,
)
from .model import ModelConfig, predict
from .optim import OptimizerHyperparams
from .tokenizer import load_vocab, save_vocab, train_vocab, vocab_sha256
from .trainer import (
    EarlyStopping,
    TrainingConfig,
    evaluate as evaluate_checkpoint,
    load_checkpoint,
    save_checkpoint,
    train as run_training,
)
from .errors import DivergedLoss

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_USAGE = 64

SEED_ENV_VAR = "IPSDM_SEED"

SPLIT_FILES = {"train": "train.csv", "validation": "val.csv", "test": "test.csv"}


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SourceConfig:
    path: str
    text_column: str = "Email"
    label_column: str = "Category"


@dataclass(frozen=True)
class BalanceSettings:
    enabled: bool = True
    k: int = 5
    beta: float = 1.0


@dataclass(frozen=True)
class TokenizerSettings:
    vocab_size: int = 8192


@dataclass(frozen=True)
class PipelineConfig:
    sources: list
    split: SplitSpec
    balance: BalanceSettings
    tokenizer: TokenizerSettings
    model: dict
    training: dict
    optimizer: OptimizerHyperparams
    early_stopping: EarlyStopping
    output_dir: Path

    def path(self, name: str) -> Path:
        return self.output_dir / name


def _section(doc: dict, key: str, allowed: set[str]) -> dict:
    data = doc.get(key, {})
    if not isinstance(data, dict):
        raise ConfigError(f"config section {key!r} must be an object")
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in config section {key!r}: {sorted(unknown)}")
    return data


_MODEL_DEFAULTS = {
    # desk-scale architecture; vocab_size is taken from the trained vocabulary
    "num_layers": 2,
    "num_heads": 4,
    "d_model": 128,
    "d_ff": 256,
    "max_len": 128,
    "dropout_rate": 0.1,
    "pooling": "first_token",
}

_TRAINING_DEFAULTS = {
    "train_batch_size": 32,
    "val_batch_size": 64,
    "num_epochs": 3,
    "seed": 0,
    "lr_schedule": "constant",
}


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} is not valid JSON: {err}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(doc) - {"data", "split", "balance", "tokenizer", "model", "training", "output_dir"}
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")

    data = _section(doc, "data", {"sources"})
    raw_sources = data.get("sources", [])
    if not isinstance(raw_sources, list):
        raise ConfigError("data.sources must be a list")
    sources = []
    for i, entry in enumerate(raw_sources):
        if not isinstance(entry, dict) or "path" not in entry:
            raise ConfigError(f"data.sources[{i}] must be an object with a 'path'")
        unknown = set(entry) - {"path", "text_column", "label_column"}
        if unknown:
            raise ConfigError(f"unknown keys in data.sources[{i}]: {sorted(unknown)}")
        sources.append(SourceConfig(**entry))

    split_data = _section(
        doc, "split",
        {"train_fraction", "val_fraction", "test_fraction", "seed", "stratified"},
    )
    split_spec = SplitSpec(**split_data)

    balance_data = _section(doc, "balance", {"enabled", "k", "beta"})
    balance_settings = BalanceSettings(**balance_data)

    tokenizer_data = _section(doc, "tokenizer", {"vocab_size"})
    tokenizer_settings = TokenizerSettings(**tokenizer_data)

    model_data = _section(doc, "model", set(_MODEL_DEFAULTS))
    model = {**_MODEL_DEFAULTS, **model_data}

    training_data = _section(
        doc, "training",
        set(_TRAINING_DEFAULTS) | {"optimizer", "early_stopping"},
    )
    optimizer_data = dict(training_data.pop("optimizer", {}))
    unknown = set(optimizer_data) - {
        "learning_rate", "beta1", "beta2", "epsilon", "weight_decay", "variant", "clip_max_norm",
    }
    if unknown:
        raise ConfigError(f"unknown keys in training.optimizer: {sorted(unknown)}")
    # The coupled update rule leaves zero-gradient parameters multiplying by
    # lr*wd/eps each step, which blows up unused embedding rows; the pipeline
    # therefore defaults to the decoupled rule unless the config insists.
    optimizer_data.setdefault("variant", "decoupled")
    stopping_data = training_data.pop("early_stopping", {})
    unknown = set(stopping_data) - {"enabled", "patience", "metric"}
    if unknown:
        raise ConfigError(f"unknown keys in training.early_stopping: {sorted(unknown)}")
    training = {**_TRAINING_DEFAULTS, **training_data}

    try:
        optimizer = OptimizerHyperparams(**optimizer_data)
        early_stopping = EarlyStopping(**stopping_data)
    except TypeError as err:
        raise ConfigError(str(err)) from None

    return PipelineConfig(
        sources=sources,
        split=split_spec,
        balance=balance_settings,
        tokenizer=tokenizer_settings,
        model=model,
        training=training,
        optimizer=optimizer,
        early_stopping=early_stopping,
        output_dir=Path(doc.get("output_dir", "out")),
    )


def _apply_overrides(config: PipelineConfig, args) -> PipelineConfig:
    """Precedence: flags > IPSDM_SEED > config file."""
    split_spec = config.split
    training = dict(config.training)
    tokenizer = config.tokenizer
    output_dir = config.output_dir

    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}")
        split_spec = SplitSpec(
            train_fraction=split_spec.train_fraction,
            val_fraction=split_spec.val_fraction,
            test_fraction=split_spec.test_fraction,
            seed=seed,
            stratified=split_spec.stratified,
        )
        training["seed"] = seed
    if getattr(args, "seed", None) is not None:
        split_spec = SplitSpec(
            train_fraction=split_spec.train_fraction,
            val_fraction=split_spec.val_fraction,
            test_fraction=split_spec.test_fraction,
            seed=args.seed,
            stratified=split_spec.stratified,
        )
        training["seed"] = args.seed
    if getattr(args, "num_epochs", None) is not None:
        training["num_epochs"] = args.num_epochs
    if getattr(args, "vocab_size", None) is not None:
        tokenizer = TokenizerSettings(vocab_size=args.vocab_size)
    if getattr(args, "output_dir", None) is not None:
        output_dir = Path(args.output_dir)

    return PipelineConfig(
        sources=config.sources,
        split=split_spec,
        balance=config.balance,
        tokenizer=tokenizer,
        model=config.model,
        training=training,
        optimizer=config.optimizer,
        early_stopping=config.early_stopping,
        output_dir=output_dir,
    )


def _config_from_args(args) -> PipelineConfig:
    if getattr(args, "config", None) is None:
        raise UsageError("this subcommand requires --config")
    return _apply_overrides(load_config(args.config), args)


def _training_config(config: PipelineConfig, vocab_size: int) -> TrainingConfig:
    model_config = ModelConfig(vocab_size=vocab_size, **config.model)
    return TrainingConfig(
        model=model_config,
        optimizer=config.optimizer,
        early_stopping=config.early_stopping,
        **config.training,
    )


def _file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _class_counts(corpus: Corpus) -> dict[str, int]:
    return {label.name: corpus.class_counts.get(label, 0) for label in Label}


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_prepare(args) -> int:
    config = _config_from_args(args)
    if not config.sources:
        raise ConfigError("config lists no data sources to prepare")
    corpora = []
    source_entries = []
    for source in config.sources:
        corpus, stats = load_csv(
            source.path, text_column=source.text_column, label_column=source.label_column
        )
        log.info(
            "loaded %d samples from %s (skipped: %d unknown label, %d empty)",
            stats.loaded, source.path, stats.unknown_label, stats.empty_text,
        )
        for row, value in stats.unknown_label_rows[:10]:
            log.warning("row %d of %s: unknown label %r", row, source.path, value)
        corpora.append(corpus)
        source_entries.append(
            {
                "path": source.path,
                "sha256": _file_sha256(Path(source.path)),
                "loaded": stats.loaded,
                "skipped_unknown_label": stats.unknown_label,
                "skipped_empty_text": stats.empty_text,
            }
        )
    full = merge(corpora)
    train_split, val_split, test_split = split(full, config.split)

    config.output_dir.mkdir(parents=True, exist_ok=True)
    splits = {"train": train_split, "validation": val_split, "test": test_split}
    manifest_splits = {}
    for name, part in splits.items():
        filename = SPLIT_FILES[name]
        save_split_csv(part, config.path(filename), name)
        manifest_splits[name] = {
            "path": filename,
            "size": len(part),
            "class_counts": _class_counts(part),
        }
    manifest = {
        "total": len(full),
        "class_counts": _class_counts(full),
        "seed": config.split.seed,
        "stratified": config.split.stratified,
        "fractions": {
            "train": config.split.train_fraction,
            "val": config.split.val_fraction,
            "test": config.split.test_fraction,
        },
        "splits": manifest_splits,
        "sources": source_entries,
    }
    _write_json(config.path("manifest.json"), manifest)
    log.info(
        "prepared %d samples -> train %d / val %d / test %d",
        len(full), len(train_split), len(val_split), len(test_split),
    )
    return EXIT_OK


def cmd_tokenizer_train(args) -> int:
    config = _config_from_args(args)
    corpus = read_split_csv(config.path(SPLIT_FILES["train"]))
    vocab = train_vocab(corpus, config.tokenizer.vocab_size)
    save_vocab(vocab, config.path("vocab.json"))
    log.info(
        "trained vocabulary: %d tokens (%d merges), sha256 %s",
        vocab.size, len(vocab.merges), vocab_sha256(vocab)[:12],
    )
    return EXIT_OK


def cmd_balance(args) -> int:
    config = _config_from_args(args)
    if not config.balance.enabled:
        print("balancing is disabled in the config; nothing to do")
        return EXIT_OK
    corpus = read_split_csv(config.path(SPLIT_FILES["train"]))
    vocab = load_vocab(config.path("vocab.json"))
    max_len = int(config.model["max_len"])
    balanced, plan = balance_corpus(
        corpus, vocab,
        k=config.balance.k, beta=config.balance.beta,
        seed=config.split.seed, max_len=max_len,
    )
    save_split_csv(balanced, config.path("train_balanced.csv"), "train")
    report = balance_report(corpus, balanced)
    report["plan"] = {
        "k": plan.k,
        "beta": plan.beta,
        "majority_label": Label(plan.majority_label).name,
        "targets": {Label(c).name: g for c, g in plan.targets},
        "total_synthetic": plan.total_synthetic(),
        "excluded_empty": len(plan.excluded),
    }
    _write_json(config.path("balance_report.json"), report)
    if plan.is_empty:
        print("classes are already balanced; output equals input")
    else:
        log.info(
            "balanced training split: %s -> %s",
            report["before"], report["after"],
        )
    return EXIT_OK


def cmd_train(args) -> int:
    config = _config_from_args(args)
    train_file = "train_balanced.csv" if config.balance.enabled else SPLIT_FILES["train"]
    train_path = config.path(train_file)
    if config.balance.enabled and not train_path.exists():
        raise InputError(
            f"{train_path} not found; run the balance stage first (or disable balancing)"
        )
    train_split = read_split_csv(train_path)
    val_split = read_split_csv(config.path(SPLIT_FILES["validation"]))
    vocab = load_vocab(config.path("vocab.json"))
    training_config = _training_config(config, vocab.size)
    try:
        checkpoint, history = run_training(training_config, train_split, val_split, vocab)
    except DivergedLoss as err:
        if err.checkpoint is not None:
            save_checkpoint(err.checkpoint, config.path("model.diverged.ckpt"))
            log.error("training diverged; last good parameters saved to model.diverged.ckpt")
        raise
    save_checkpoint(checkpoint, config.path("model.ckpt"))
    _write_json(config.path("history.json"), [r.as_dict() for r in history])
    log.info(
        "training finished: best epoch %s (val %s=%.4f), checkpoint %s",
        checkpoint.best_epoch, training_config.early_stopping.metric,
        checkpoint.best_metric, config.path("model.ckpt"),
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _config_from_args(args)
    checkpoint_path = Path(args.checkpoint) if args.checkpoint else config.path("model.ckpt")
    checkpoint = load_checkpoint(checkpoint_path)
    vocab = load_vocab(config.path("vocab.json"))
    corpus = read_split_csv(config.path(SPLIT_FILES[args.split]))
    scores = evaluate_checkpoint(
        checkpoint, corpus, vocab,
        split_name=args.split,
        batch_size=int(config.training["val_batch_size"]),
    )
    model_name = args.model_name or checkpoint_path.stem
    fragment = {"model": model_name, **scores.as_dict()}
    out_path = Path(args.out) if args.out else config.path(f"report_{args.split}.json")
    _write_json(out_path, fragment)
    print(json.dumps(fragment, sort_keys=True))
    return EXIT_OK


def cmd_classify(args) -> int:
    if args.text is None and args.file is None:
        raise UsageError("classify needs --text or --file")
    if args.text is not None and args.file is not None:
        raise UsageError("--text and --file are mutually exclusive")
    checkpoint = load_checkpoint(args.checkpoint)
    if args.vocab:
        vocab_path = Path(args.vocab)
    elif args.config:
        config = _apply_overrides(load_config(args.config), args)
        vocab_path = config.path("vocab.json")
    else:
        raise UsageError("classify needs --vocab (or --config to locate vocab.json)")
    vocab = load_vocab(vocab_path)
    if vocab_sha256(vocab) != checkpoint.vocab_sha256:
        raise InputError(
            f"vocabulary {vocab_path} does not match the checkpoint's vocabulary"
        )
    params = checkpoint.model_parameters()
    if args.text is not None:
        texts = [args.text]
    else:
        with open(args.file, encoding="utf-8") as fh:
            texts = [line.rstrip("\n") for line in fh if line.strip()]
    for text in texts:
        label, probs = predict(params, vocab, text)
        print(
            json.dumps(
                {
                    "label": label.name,
                    "probabilities": {Label(i).name: float(p) for i, p in enumerate(probs)},
                },
                sort_keys=True,
            )
        )
    return EXIT_OK


def cmd_report(args) -> int:
    config = _config_from_args(args)
    fragments = []
    for path in args.fragments:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as err:
            raise InputError(f"{path} is not a valid report fragment: {err}") from None
        if "model" not in doc or "split" not in doc:
            raise InputError(f"{path} lacks 'model'/'split' keys; not an evaluate output")
        fragments.append(doc)
    by_model: dict[str, dict[str, dict]] = {}
    order: list[str] = []
    for doc in fragments:
        if doc["model"] not in by_model:
            order.append(doc["model"])
        by_model.setdefault(doc["model"], {})[doc["split"]] = doc
    reports = []
    for model in order:
        parts = by_model[model]
        missing = {"validation", "test"} - set(parts)
        if missing:
            raise InputError(f"model {model!r} is missing {sorted(missing)} fragment(s)")
        reports.append(
            ModelReport(
                model=model,
                validation=split_scores_from_dict(parts["validation"]),
                test=split_scores_from_dict(parts["test"]),
            )
        )
    config.output_dir.mkdir(parents=True, exist_ok=True)
    emit_report_csv(reports, config.path("report.csv"))
    emit_report_json(reports, config.path("report.json"))
    written = [config.path("report.csv"), config.path("report.json")]
    if args.svg:
        render_report_svg(reports, config.path("report.svg"))
        written.append(config.path("report.svg"))
    for report in reports:
        gap = report.overfit_gap
        marker = " [WARN: gap > 0.05]" if abs(gap) > 0.05 else ""
        print(
            f"{report.model}: val_accuracy={report.validation.scores.accuracy:.4f} "
            f"test_accuracy={report.test.scores.accuracy:.4f} gap={gap:+.4f}{marker}"
        )
    log.info("wrote %s", ", ".join(str(p) for p in written))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; 2 is reserved for input errors here
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ipsdm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="pipeline config JSON")
        p.add_argument("--output-dir", help="override the config's output directory")
        p.add_argument("--seed", type=int, help="override every configured seed")
        return p

    add("prepare", cmd_prepare, "load sources, split, write CSVs + manifest")

    p = add("tokenizer-train", cmd_tokenizer_train, "learn a byte-pair vocabulary from the training split")
    p.add_argument("--vocab-size", type=int, help="override tokenizer.vocab_size")

    add("balance", cmd_balance, "oversample minority classes in the training split")

    p = add("train", cmd_train, "fine-tune the classifier")
    p.add_argument("--num-epochs", type=int, help="override training.num_epochs")

    p = add("evaluate", cmd_evaluate, "score a checkpoint on a split")
    p.add_argument("--checkpoint", help="checkpoint path (default: <output_dir>/model.ckpt)")
    p.add_argument("--split", choices=sorted(SPLIT_FILES), default="test")
    p.add_argument("--model-name", help="name used in report fragments")
    p.add_argument("--out", help="fragment output path")

    p = add("classify", cmd_classify, "classify one text or a file of texts")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", help="vocabulary JSON path")
    p.add_argument("--text", help="single text to classify")
    p.add_argument("--file", help="file with one text per line")

    p = add("report", cmd_report, "combine evaluate outputs into comparison CSV/JSON")
    p.add_argument("fragments", nargs="+", help="evaluate output JSON files")
    p.add_argument("--svg", action="store_true", help="also render a bar chart")

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, FileNotFoundError) as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except IpsdmError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
