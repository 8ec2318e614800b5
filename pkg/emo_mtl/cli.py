"""
Command-line interface: ``emo-mtl train|eval|compare``.

Exit codes: 0 success, 1 runtime failure, 2 invalid input (configuration,
schema, unknown task, missing file).
"""
import argparse
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import dump_config, load_config
from .encoder import EncoderConfig, init_encoder
from .errors import ConfigError, EmoMTLError, IngestionError, RegistryError, SchemaError
from .metrics import comparison_report, load_report, render_comparison, write_comparison
from .multitask import (
    MultitaskModel,
    TaskDataLoader,
    TaskSpec,
    evaluate,
    register_task,
    train,
)
from .text_pipeline import (
    build_lexicon,
    build_vocab,
    corpus_lexicon,
    derive_binary_corpora,
    encode_examples,
    label_distribution,
    load_csv,
    read_table,
    split_train_val,
    write_examples_csv,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INVALID = 2

CHECKPOINT_NAME = "model.ckpt"
TRAINLOG_NAME = "trainlog.jsonl"


def _training_lexicon(tasks):
    "Segmentation lexicon from the plain words of every training file."
    texts = []
    for task in tasks:
        texts.extend(read_table(task.train_path, (task.text_column,))[task.text_column])
    lexicon = corpus_lexicon(texts)
    logger.debug("hashtag lexicon: %d words", len(lexicon))
    return lexicon


def _load_task_data(task, training, seed, out_dir, lexicon):
    examples, _ = load_csv(
        task.train_path,
        task.text_column,
        task.label_column,
        task.label_names,
        task.name,
        lexicon=lexicon,
        rejects_dir=out_dir,
    )
    if not examples:
        raise IngestionError(f"task {task.name}: no usable examples in {task.train_path}")
    if task.val_path is not None:
        val, _ = load_csv(
            task.val_path,
            task.text_column,
            task.label_column,
            task.label_names,
            task.name,
            lexicon=lexicon,
            rejects_dir=out_dir,
        )
        return examples, val
    return split_train_val(
        examples,
        train_fraction=training["train_fraction"],
        seed=seed,
        stratified=training["stratified"],
    )


def cmd_train(args):
    overrides = {"seed": args.seed, "training.epochs": args.epochs}
    config = load_config(args.config, overrides=overrides)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_config(config, out_dir / "run_config.yml")
    training = config.training

    lexicon = _training_lexicon(config.active_tasks())
    splits = {}
    for task in config.active_tasks():
        train_examples, val_examples = _load_task_data(
            task, training, config.seed, out_dir, lexicon
        )
        splits[task.name] = (task, train_examples, val_examples)
        distribution = label_distribution(train_examples + val_examples, task.label_names)
        distribution.to_csv(out_dir / f"{task.name.lower()}.labels.csv")
        logger.info("%s label counts: %s", task.name, distribution["count"].to_dict())
        write_examples_csv(
            val_examples,
            task.label_names,
            out_dir / f"{task.name.lower()}.val.csv",
            text_column=task.text_column,
            label_column=task.label_column,
        )

    vocab = build_vocab(
        (example for _, train_examples, _ in splits.values() for example in train_examples),
        min_frequency=config.vocabulary["min_frequency"],
        max_size=config.vocabulary["max_size"],
    )
    encoder_config = EncoderConfig(vocab_size=len(vocab), **config.encoder)
    model = MultitaskModel(init_encoder(encoder_config, config.seed), vocab=vocab,
                           lr=training["lr"], seed=config.seed)
    loaders = {}
    val_sets = {}
    max_len = encoder_config.max_seq_len
    for index, (task, train_examples, val_examples) in enumerate(splits.values()):
        register_task(model, TaskSpec(**task.spec_kwargs()), seed=config.seed + 1 + index)
        loaders[task.name] = TaskDataLoader(
            task.name,
            encode_examples(train_examples, vocab, max_len),
            batch_size=training["batch_size"],
            seed=config.seed,
        )
        val_sets[task.name] = encode_examples(val_examples, vocab, max_len)
    if training["freeze_encoder"]:
        model.freeze_encoder()
    logger.info("%s training of %s on %s", config.mode, model, ", ".join(loaders))

    with open(out_dir / TRAINLOG_NAME, "w", encoding="utf-8") as log_file:
        train(
            model,
            loaders,
            epochs=training["epochs"],
            seed=config.seed,
            mode=config.mode,
            val_sets=val_sets,
            main_task=config.main_task,
            sampler=training["sampler"],
            log_file=log_file,
        )
    save_checkpoint(model, out_dir / CHECKPOINT_NAME)

    for task_name, examples in val_sets.items():
        if not examples:
            logger.warning("%s: empty validation set, no report written", task_name)
            continue
        report = evaluate(model, task_name, examples, model_label=config.mode)
        paths = report.write(out_dir, stem=task_name.lower())
        logger.info("%s: macro-F1 %.4f, report %s", task_name, report.f1_macro, paths["json"])
    return EXIT_OK


def cmd_eval(args):
    model = load_checkpoint(args.checkpoint)
    if args.task not in model.tasks:
        raise RegistryError(
            f"task {args.task!r} is not in checkpoint {args.checkpoint} "
            f"(tasks: {', '.join(model.tasks)})"
        )
    spec = model.tasks[args.task]
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    examples, rejects = load_csv(
        args.data,
        spec.text_column,
        spec.label_column,
        spec.label_names,
        spec.name,
        lexicon=build_lexicon(model.vocab.words()),
        rejects_dir=out_dir,
    )
    if not examples:
        if rejects and all(reason.startswith("unknown label") for _, reason in rejects):
            raise SchemaError(
                f"{args.data}: no label matches task {spec.name} "
                f"({', '.join(spec.label_names)})"
            )
        raise IngestionError(f"{args.data}: no usable examples")
    encoded = encode_examples(examples, model.vocab, model.encoder.config.max_seq_len)
    report = evaluate(model, spec.name, encoded, model_label=args.label or "")
    paths = report.write(out_dir, stem=args.stem or spec.name.lower())
    print(report.to_text())
    logger.info("wrote %s", ", ".join(str(path) for path in paths.values()))
    return EXIT_OK


def cmd_compare(args):
    reports = []
    for path in args.reports:
        if not Path(path).is_file():
            raise FileNotFoundError(f"report not found: {path}")
        report = load_report(path)
        reports.append((report.model or Path(path).stem, report))
    tasks = sorted({report.task for _, report in reports})
    if len(tasks) > 1:
        raise ConfigError({"reports": f"reports cover different tasks: {', '.join(tasks)}"})
    if len(reports) < 2:
        raise ConfigError({"reports": "need at least two reports to compare"})
    document = comparison_report(reports)
    if args.out:
        write_comparison(document, args.out, stem=f"{tasks[0].lower()}.comparison")
    print(render_comparison(document))
    return EXIT_OK


def cmd_derive(args):
    corpora = derive_binary_corpora(
        args.data,
        text_column=args.text_column,
        class_column=args.class_column,
        out_dir=args.out,
    )
    for key, corpus in corpora.items():
        print(f"{Path(args.out) / f'davidson_{key.lower()}.csv'}: {len(corpus)} rows")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="emo-mtl",
        description="Hate/offensive speech detection with emotion-aware multi-task learning.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    train_parser = commands.add_parser("train", help="train an STL or MTL model")
    train_parser.add_argument("--config", required=True, help="YAML run configuration")
    train_parser.add_argument("--seed", type=int, help="override the configured seed")
    train_parser.add_argument("--epochs", type=int, help="override the configured epochs")
    train_parser.set_defaults(handler=cmd_train)

    eval_parser = commands.add_parser("eval", help="evaluate a checkpoint on a labelled CSV")
    eval_parser.add_argument("--checkpoint", required=True)
    eval_parser.add_argument("--data", required=True)
    eval_parser.add_argument("--task", required=True)
    eval_parser.add_argument("--out", help="report directory (default: next to the checkpoint)")
    eval_parser.add_argument("--label", help="model label recorded in the report, e.g. MTL")
    eval_parser.add_argument("--stem", help="report file stem (default: the task name)")
    eval_parser.set_defaults(handler=cmd_eval)

    compare_parser = commands.add_parser("compare", help="compare EvalReports of one task")
    compare_parser.add_argument("reports", nargs="+", help="*.report.json files")
    compare_parser.add_argument("--out", help="also write the comparison here")
    compare_parser.set_defaults(handler=cmd_compare)

    derive_parser = commands.add_parser(
        "derive", help="split the three-class Davidson CSV into HATE and OFF corpora"
    )
    derive_parser.add_argument("--data", required=True, help="labeled_data.csv")
    derive_parser.add_argument("--out", required=True, help="directory for the two CSVs")
    derive_parser.add_argument("--text-column", default="tweet")
    derive_parser.add_argument("--class-column", default="class")
    derive_parser.set_defaults(handler=cmd_derive)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    try:
        return args.handler(args)
    except (ConfigError, SchemaError, RegistryError, FileNotFoundError) as err:
        logger.error("%s", err)
        return EXIT_INVALID
    except (EmoMTLError, OSError) as err:
        logger.error("%s", err)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
