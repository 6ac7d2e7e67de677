import sys
import json
import logging

from pathlib import Path
from argparse import ArgumentParser, Namespace
from typing import List, Optional

from ptr_disentangle import *

logger = logging.getLogger("ptr_disentangle")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    """A command was called without an argument it needs."""


def add_shared_arguments(arg_parser: ArgumentParser):

    arg_parser.add_argument(
        "-c", "--config",
        type=Path, default=None,
        help="Path to a JSON training configuration. Its keys are the TrainConfig field names."
    )

    arg_parser.add_argument(
        "-m", "--model",
        type=Path, default=None,
        help="Path to a model checkpoint."
    )

    arg_parser.add_argument(
        "-d", "--data",
        type=Path, default=None,
        help="A split directory (<name>.annotation.txt next to <name>.ascii.txt, .raw.txt or .jsonl) "
             "or a single log file."
    )

    arg_parser.add_argument(
        "-s", "--seed",
        type=int, default=None,
        help="Random seed, overrides the configuration."
    )

    arg_parser.add_argument(
        "-o", "--out",
        type=Path, default=None,
        help="Output directory (train, gen-synth) or checkpoint path (tune-threshold)."
    )

    arg_parser.add_argument(
        "--annotation-offset",
        type=int, default=0,
        help="Subtracted from every annotated index, for annotations that do not count from 0."
    )

    arg_parser.add_argument(
        "--column-order",
        choices=COLUMN_ORDERS, default="parent_child",
        help="Order of the two index columns of the annotation files."
    )

    verbosity = arg_parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Log debug messages.")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Log warnings only, hide progress bars.")


def parse_cli_args(argv: Optional[List[str]] = None) -> Namespace:

    arg_parser = ArgumentParser(prog="ptr-disentangle", description="Online conversation disentanglement.")
    subparsers = arg_parser.add_subparsers(dest="command", required=True)

    train_parser = subparsers.add_parser("train", help="Train a model, write checkpoints and a report.")
    add_shared_arguments(train_parser)
    train_parser.add_argument("--dev", type=Path, default=None, help="Dev split used for checkpoint selection.")
    train_parser.add_argument("--epochs", type=int, default=None, help="Number of epochs, overrides the configuration.")

    eval_parser = subparsers.add_parser("eval", help="Decode a split and report the metrics.")
    add_shared_arguments(eval_parser)
    eval_parser.add_argument(
        "-t", "--self-link-threshold",
        type=float, default=None,
        help="Self-link threshold; the one stored in the checkpoint when omitted."
    )
    eval_parser.add_argument(
        "--oracle-self-links",
        action="store_true",
        help="Take every self-link decision from the gold annotation."
    )
    eval_parser.add_argument(
        "--offline",
        action="store_true",
        help="Encode all messages of a file in one batch instead of one at a time."
    )

    tune_parser = subparsers.add_parser("tune-threshold", help="Pick the self-link threshold on a dev split.")
    add_shared_arguments(tune_parser)
    tune_parser.add_argument(
        "--grid",
        type=float, nargs="+", default=None,
        help="Thresholds to try; the grid of the checkpoint configuration when omitted."
    )

    stream_parser = subparsers.add_parser("disentangle", help="Read log lines from stdin, write index, parent, thread.")
    add_shared_arguments(stream_parser)
    stream_parser.add_argument("-t", "--self-link-threshold", type=float, default=None)

    stats_parser = subparsers.add_parser("stats", help="Corpus statistics of a split.")
    add_shared_arguments(stats_parser)

    synth_parser = subparsers.add_parser("gen-synth", help="Write synthetic annotated logs.")
    add_shared_arguments(synth_parser)
    synth_parser.add_argument("--threads", type=int, default=3)
    synth_parser.add_argument("--utterances", type=int, default=60)
    synth_parser.add_argument("--mention-rate", type=float, default=0.5)
    synth_parser.add_argument("--self-link-rate", type=float, default=0.)
    synth_parser.add_argument("--files", type=int, default=1)
    synth_parser.add_argument("--concurrency", type=int, default=4, help="Conversations open at the same time.")
    synth_parser.add_argument("--pace", type=float, default=5., help="Messages per minute.")

    return arg_parser.parse_args(argv)


def require(args: Namespace, *names: str):
    for name in names:
        if getattr(args, name) is None:
            raise UsageError(f"{args.command} needs --{name}")


def load_split(path: Path, args: Namespace) -> List[ChatLog]:
    return read_corpus_dir(path, args.annotation_offset, args.column_order)


def print_json(record):
    sys.stdout.write(json.dumps(record, indent=2, sort_keys=True) + "\n")
    sys.stdout.flush()


def run_train(args: Namespace):

    require(args, "data", "out")

    config = TrainConfig() if args.config is None else TrainConfig.from_json(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.epochs is not None:
        config.epochs = args.epochs

    train_logs = load_split(args.data, args)
    dev_logs = None if args.dev is None else load_split(args.dev, args)

    model, report = train(train_logs, config, dev_logs, args.out, progress=not args.quiet)
    model.save(args.out / "model.ckpt.json")

    with open(args.out / "report.json", "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)

    print_json(report.to_dict())


def run_eval(args: Namespace):

    require(args, "model", "data")

    model = DisentanglementModel.load(args.model)
    bundle = evaluate(
        model,
        load_split(args.data, args),
        args.self_link_threshold,
        oracle_self_links=args.oracle_self_links,
        online=not args.offline,
        progress=not args.quiet
    )

    sys.stderr.write(bundle.to_table() + "\n")
    print_json(bundle.to_dict())


def run_tune(args: Namespace):

    require(args, "model", "data")

    model = DisentanglementModel.load(args.model)
    grid = args.grid
    if grid is None:
        grid = model.config.get("self_link_threshold_grid") or TrainConfig().self_link_threshold_grid

    threshold, scores = tune_self_link_threshold(model, load_split(args.data, args), grid, progress=not args.quiet)
    model.self_link_threshold = threshold
    model.save(args.model if args.out is None else args.out)

    logger.info("Best self-link threshold %.2f (dev cluster F1 %.4f)", threshold, scores[threshold])
    sys.stdout.write(f"{threshold}\n")


def run_disentangle(args: Namespace):

    require(args, "model")

    model = DisentanglementModel.load(args.model)
    threshold = model.self_link_threshold if args.self_link_threshold is None else args.self_link_threshold
    state = ThreadState.start(model)

    for line_number, line in enumerate(sys.stdin, start=1):

        try:
            log_line = parse_log_line(line, line_number)
        except LogParseError as error:
            logger.warning("Skipping line %d: %s", line_number, error)
            continue

        if log_line is None:
            continue

        utterance = Utterance.from_log_line(state.next_index, log_line)
        parent, label = step(state, utterance, model, threshold)

        sys.stdout.write(f"{utterance.index}\t{parent}\t{label}\n")
        sys.stdout.flush()


def run_stats(args: Namespace):

    require(args, "data")

    logs = load_split(args.data, args)
    record = split_stats(logs).to_dict()
    record["self_link_categories"] = self_link_taxonomy(logs)
    record["files"] = len(logs)

    print_json(record)


def run_gen_synth(args: Namespace):

    require(args, "out")

    logs = gen_synth_corpus(
        args.out,
        files=args.files,
        threads=args.threads,
        utterances=args.utterances,
        mention_rate=args.mention_rate,
        seed=0 if args.seed is None else args.seed,
        self_link_rate=args.self_link_rate,
        concurrency=args.concurrency,
        pace=args.pace
    )

    print_json([log.name for log in logs])


COMMANDS = {
    "train": run_train,
    "eval": run_eval,
    "tune-threshold": run_tune,
    "disentangle": run_disentangle,
    "stats": run_stats,
    "gen-synth": run_gen_synth
}


def main(argv: Optional[List[str]] = None) -> int:

    try:
        args = parse_cli_args(argv)
    except SystemExit as exit_request:
        # argparse exits with 2 on usage errors
        return EXIT_USAGE if exit_request.code == 2 else exit_request.code

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )

    try:
        COMMANDS[args.command](args)
    except UsageError as error:
        logger.error("%s", error)
        return EXIT_USAGE
    except NumericFailure as error:
        logger.error("%s", error)
        sys.stderr.write(json.dumps(error.diagnostic, sort_keys=True) + "\n")
        return EXIT_NUMERIC
    except (ValueError, OSError) as error:
        logger.error("%s", error)
        return EXIT_DATA

    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
