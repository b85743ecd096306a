"""
Command-line entry point: `ctal <command> [options]`.

Exit status is 0 on success, 1 when the input or configuration is at fault
and 2 on internal errors.
"""
import argparse
import json
import logging
import os
import sys

import pandas as pd

from ctal.audio.cache import extract_to_cache
from ctal.audio.frontend import FrontendConfig
from ctal.cli.ablation import SETTINGS, run_ablation
from ctal.cli.run_config import describe_options, load_run_config, write_config, write_input_hashes
from ctal.data import KINDS, PairDataset, read_manifest, synth_corpus
from ctal.errors import ConfigError, UserError
from ctal.finetune.heads import LabelMap
from ctal.finetune.model import FINETUNE_ONLY, PRETRAINED_ONLY, CtalForFinetuning
from ctal.finetune.trainer import (FineTuner, build_model, embedding_checkpoint, evaluate, load_finetuned,
                                   score_predictions)
from ctal.model import CtalModel, load_checkpoint, load_pretrained, save_checkpoint
from ctal.model.report import parameter_report, report_for_model
from ctal.pretrain.trainer import run_pretraining
from ctal.text import BbpeVocab, train_bbpe

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
_handlers = []


def configure_logging(verbose=0, quiet=False):
    root = logging.getLogger()
    for handler in _handlers:
        root.removeHandler(handler)
        handler.close()
    _handlers.clear()
    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(logging.Formatter(LOG_FORMAT))
    root.setLevel(logging.WARNING if quiet else logging.DEBUG if verbose else logging.INFO)
    root.addHandler(console)
    _handlers.append(console)


def prepare_run_dir(run_dir, config, inputs):
    """Creates the run directory with its resolved config, input hashes and log file."""
    os.makedirs(run_dir, exist_ok=True)
    log_file = logging.FileHandler(os.path.join(run_dir, "log.txt"), encoding="utf-8")
    log_file.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.getLogger().addHandler(log_file)
    _handlers.append(log_file)
    write_config(os.path.join(run_dir, "config.txt"), config)
    write_input_hashes(os.path.join(run_dir, "inputs.sha1"), inputs)
    logger.info("Run directory %s", run_dir)


def _require(value, name):
    if not value:
        raise ConfigError(f"{name} is not set (use --set {name}=... or a config file)")
    return value


def load_vocab(config):
    return BbpeVocab.load(config.vocab) if config.vocab else BbpeVocab()


def load_dataset(config, manifest, vocab, labelled=False):
    entries = read_manifest(manifest, labelled=labelled)
    return PairDataset(entries, vocab, config.feature_dir or None, FrontendConfig(), config.threads)


def write_report(run_dir, report, frame=None):
    with open(os.path.join(run_dir, "metrics.json"), "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    if frame is not None:
        frame.to_csv(os.path.join(run_dir, "predictions.csv"), index=False)
    print(pd.Series(report).to_string())


def cmd_train_tokenizer(args, config):
    if args.corpus.endswith(".tsv"):
        corpus = [entry.transcript for entry in read_manifest(args.corpus, check_audio=False)]
    else:
        if not os.path.isfile(args.corpus):
            raise UserError(f"corpus file {args.corpus} does not exist")
        with open(args.corpus, encoding="utf-8") as f:
            corpus = [line.rstrip("\n") for line in f if line.strip()]
    vocab = train_bbpe(corpus, args.vocab_size)
    vocab.save(args.out)
    logger.info("Wrote %d-token vocabulary to %s", vocab.size, args.out)


def cmd_extract_features(args, config):
    entries = read_manifest(args.manifest)
    extract_to_cache([entry.audio_path for entry in entries], args.out, FrontendConfig(), config.threads,
                     overwrite=args.overwrite)


def cmd_pretrain(args, config):
    manifest = _require(config.train_manifest, "train_manifest")
    prepare_run_dir(args.run_dir, config, [args.config, config.vocab, manifest])
    vocab = load_vocab(config)
    dataset = load_dataset(config, manifest, vocab)
    model = CtalModel(config.model_config(vocab.size), seed=config.seed)
    run_pretraining(config.pretrain_config(), dataset, model, args.run_dir)


def _finetune_model_config(config, vocab, pretrained):
    if pretrained is None:
        return config.model_config(vocab.size)
    model_config = pretrained.model_config()
    if vocab.size > model_config.vocab_size:
        raise ConfigError(f"the vocabulary has {vocab.size} tokens but the checkpoint embeds only "
                          f"{model_config.vocab_size}")
    return model_config


def cmd_finetune(args, config):
    manifest = _require(config.train_manifest, "train_manifest")
    prepare_run_dir(args.run_dir, config, [args.config, config.vocab, manifest, config.test_manifest,
                                           config.checkpoint])
    finetune = config.finetune_config()
    vocab = load_vocab(config)
    train = load_dataset(config, manifest, vocab, labelled=True)
    label_map = LabelMap.fit(finetune.task, train.labels)
    pretrained = load_checkpoint(config.checkpoint) if config.checkpoint else None
    model = build_model(_finetune_model_config(config, vocab, pretrained), label_map, finetune.fusion, pretrained,
                        seed=config.seed)
    FineTuner(model, label_map, finetune, args.run_dir).train(train)
    evaluation = load_dataset(config, config.test_manifest, vocab, labelled=True) if config.test_manifest else train
    report, frame = evaluate(model, evaluation, label_map, finetune.eval_batch_size, config.threads)
    write_report(args.run_dir, report, frame)


def cmd_evaluate(args, config):
    if args.predictions:
        prepare_run_dir(args.run_dir, config, [args.config, args.predictions])
        frame = pd.read_csv(args.predictions, dtype={"example_id": str})
        missing = {"example_id", "prediction", "gold"} - set(frame.columns)
        if missing:
            raise UserError(f"{args.predictions}: missing columns {sorted(missing)}")
        write_report(args.run_dir, score_predictions(frame, config.task))
        return
    checkpoint_path = _require(args.checkpoint or config.checkpoint, "checkpoint")
    manifest = _require(args.manifest or config.test_manifest, "test_manifest")
    prepare_run_dir(args.run_dir, config, [args.config, config.vocab, manifest, checkpoint_path])
    model, label_map = load_finetuned(load_checkpoint(checkpoint_path))
    dataset = load_dataset(config, manifest, load_vocab(config), labelled=True)
    report, frame = evaluate(model, dataset, label_map, config.eval_batch_size, config.threads)
    write_report(args.run_dir, report, frame)


def _embedding_model(checkpoint, seed):
    if checkpoint.metadata.get("kind") == "finetune":
        return load_finetuned(checkpoint)[0]
    # a pre-trained encoder: the pooling layer keeps its seeded random init
    model = CtalForFinetuning(checkpoint.model_config(), "classification", 2, seed=seed)
    load_pretrained(model, checkpoint.tensors, allow_missing=FINETUNE_ONLY, allow_unexpected=PRETRAINED_ONLY)
    return model


def cmd_embed(args, config):
    checkpoint_path = _require(args.checkpoint or config.checkpoint, "checkpoint")
    manifest = _require(args.manifest or config.test_manifest, "test_manifest")
    prepare_run_dir(args.run_dir, config, [args.config, config.vocab, manifest, checkpoint_path])
    model = _embedding_model(load_checkpoint(checkpoint_path), config.seed)
    dataset = load_dataset(config, manifest, load_vocab(config))
    save_checkpoint(args.out, embedding_checkpoint(model, dataset, config.eval_batch_size))
    logger.info("Wrote %d embeddings to %s", len(dataset), args.out)


def cmd_synth(args, config):
    synth_corpus(args.kind, args.count, args.out, seed=config.seed, num_speakers=args.num_speakers,
                 min_duration=args.min_duration, max_duration=args.max_duration)


def _inspect_model(path):
    checkpoint = load_checkpoint(path)
    if checkpoint.metadata.get("kind") == "finetune":
        return load_finetuned(checkpoint)[0]
    heads = any(name.startswith(PRETRAINED_ONLY) for name in checkpoint.tensors)
    model = CtalModel(checkpoint.model_config(), pretraining_heads=heads, initialize=False)
    load_pretrained(model, checkpoint.tensors)
    return model


def cmd_inspect(args, config):
    if args.checkpoint:
        report = report_for_model(_inspect_model(args.checkpoint))
    else:
        report = parameter_report(config.model_config())
    pd.set_option("display.max_rows", None)
    if args.verbose_table:
        print(report.table.to_string(index=False))
    print(report.by_submodule.to_string())
    print(f"total {report.total:,}")
    print(f"without vocabulary tensors {report.architecture_total:,}")


def cmd_plot_losses(args, config):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not os.path.isfile(args.losses):
        raise UserError(f"loss file {args.losses} does not exist")
    frame = pd.read_csv(args.losses)
    if "step" not in frame.columns:
        raise UserError(f"{args.losses}: no step column")
    columns = [c for c in frame.columns if c not in ("step", "epoch", "lr")]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for column in columns:
        ax.plot(frame["step"], frame[column], label=column)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    out = args.out or os.path.splitext(args.losses)[0] + ".png"
    fig.savefig(out)
    plt.close(fig)
    logger.info("Wrote %s", out)


def cmd_ablate(args, config):
    train_manifest = _require(config.train_manifest, "train_manifest")
    test_manifest = _require(config.test_manifest, "test_manifest")
    settings = tuple(s.strip() for s in args.settings.split(",") if s.strip())
    unknown = [s for s in settings if s not in SETTINGS]
    if unknown:
        raise ConfigError(f"unknown ablation settings {unknown}; known: {', '.join(SETTINGS)}")
    prepare_run_dir(args.run_dir, config, [args.config, config.vocab, train_manifest, test_manifest])
    vocab = load_vocab(config)
    train = load_dataset(config, train_manifest, vocab, labelled=True)
    test = load_dataset(config, test_manifest, vocab, labelled=True)
    seeds = [config.seed + i for i in range(args.seeds)]
    run_ablation(config, train, test, seeds, settings, args.run_dir)


def cmd_options(args, config):
    for key, default, doc in describe_options():
        print(f"{key}={default}  # {doc}")


class ArgumentParser(argparse.ArgumentParser):
    """Raises ConfigError on usage errors instead of exiting."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def build_parser():
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value run configuration file")
    common.add_argument("--set", dest="assignments", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--threads", type=int, help="cap on worker threads")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("-q", "--quiet", action="store_true")

    parser = ArgumentParser(prog="ctal", description="Cross-modal text and audio Transformer: "
                                                      "pre-training, fine-tuning and evaluation")
    commands = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help, run_dir=False):
        sub = commands.add_parser(name, parents=[common], help=help)
        sub.set_defaults(func=func)
        if run_dir:
            sub.add_argument("--run-dir", default=os.path.join("runs", name))
        return sub

    sub = command("train-tokenizer", cmd_train_tokenizer, "learn a BBPE vocabulary")
    sub.add_argument("corpus", help="text file with one transcript per line, or a manifest (.tsv)")
    sub.add_argument("--vocab-size", type=int, default=30004)
    sub.add_argument("--out", required=True)

    sub = command("extract-features", cmd_extract_features, "cache acoustic features for a manifest")
    sub.add_argument("manifest")
    sub.add_argument("--out", required=True, help="feature cache directory")
    sub.add_argument("--overwrite", action="store_true")

    command("pretrain", cmd_pretrain, "pre-train on a paired manifest", run_dir=True)

    sub = command("finetune", cmd_finetune, "fine-tune on a labelled manifest", run_dir=True)
    sub.add_argument("--task", choices=("emotion", "sentiment", "speaker"))
    sub.add_argument("--checkpoint", help="pre-trained checkpoint")

    sub = command("evaluate", cmd_evaluate, "score a fine-tuned checkpoint or a prediction dump", run_dir=True)
    sub.add_argument("--checkpoint")
    sub.add_argument("--manifest")
    sub.add_argument("--predictions", help="CSV with example_id, prediction, gold")
    sub.add_argument("--task", choices=("emotion", "sentiment", "speaker"))

    sub = command("embed", cmd_embed, "dump identity embeddings", run_dir=True)
    sub.add_argument("--checkpoint")
    sub.add_argument("--manifest")
    sub.add_argument("--out", required=True)

    sub = command("synth", cmd_synth, "write a synthetic paired corpus")
    sub.add_argument("--kind", choices=KINDS, default="emotion")
    sub.add_argument("--count", type=int, default=100)
    sub.add_argument("--out", required=True)
    sub.add_argument("--num-speakers", type=int, default=4)
    sub.add_argument("--min-duration", type=float, default=0.5)
    sub.add_argument("--max-duration", type=float, default=0.9)

    sub = command("inspect", cmd_inspect, "parameter counts of a checkpoint or preset")
    sub.add_argument("checkpoint", nargs="?")
    sub.add_argument("--preset", help="shorthand for --set preset=...")
    sub.add_argument("--table", dest="verbose_table", action="store_true", help="print every parameter")

    sub = command("plot-losses", cmd_plot_losses, "plot a losses.csv or history.csv")
    sub.add_argument("losses")
    sub.add_argument("--out")

    sub = command("ablate", cmd_ablate, "run the ablation grid over seeds", run_dir=True)
    sub.add_argument("--task", choices=("emotion", "sentiment", "speaker"))
    sub.add_argument("--seeds", type=int, default=5)
    sub.add_argument("--settings", default=",".join(SETTINGS))

    command("options", cmd_options, "list configuration keys with defaults")
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        print(f"ctal: error: {e}", file=sys.stderr)
        return 1
    configure_logging(args.verbose, args.quiet)
    try:
        flags = dict(seed=args.seed, threads=args.threads, task=getattr(args, "task", None),
                     checkpoint=getattr(args, "checkpoint", None) if args.command == "finetune" else None,
                     preset=getattr(args, "preset", None))
        config = load_run_config(args.config, args.assignments, **flags)
        args.func(args, config)
    except (UserError, OSError) as e:
        logger.debug("Failed", exc_info=True)
        print(f"ctal: error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.error("Internal error", exc_info=True)
        print(f"ctal: error: {e}", file=sys.stderr)
        return 2
    finally:
        configure_logging(args.verbose, args.quiet)
    return 0


if __name__ == "__main__":
    sys.exit(main())
