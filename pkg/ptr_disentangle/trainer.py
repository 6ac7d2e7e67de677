import json
import time
import logging

import numpy as np

from pathlib import Path
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

from tqdm import tqdm

from .corpus import ChatLog, build_vocabulary, utterance_categories
from .encoder import load_embedding_vectors
from .linker import FEATURE_SETS
from .metrics import Clustering, MetricBundle, metric_bundle
from .model import DisentanglementModel, FileTargets, assign_pairs, batch_loss_and_grads, build_link_targets, gold_clustering
from .decoder import decode_log
from .substrate import DTYPES, OptimizerState, adam_step, clip_by_global_norm

logger = logging.getLogger(__name__)


def _default_grid() -> List[float]:
    return [round(0.05 * k, 2) for k in range(20)]


@dataclass
class TrainConfig:

    learning_rate: float = 1e-5
    dropout: float = 0.2
    l2: float = 1e-7
    hidden: int = 256
    embed_dim: int = 128
    window: int = 50
    lambda_pair: float = 1.
    epochs: int = 20
    batch_utterances: int = 32
    seed: int = 0
    embedding_file: Optional[str] = None
    self_link_threshold_grid: List[float] = field(default_factory=_default_grid)
    min_count: int = 1
    pair_ratio: float = 1.
    grad_clip: float = 5.
    feature_set: str = "full"
    dtype: str = "float64"

    @classmethod
    def from_dict(cls, record: dict) -> "TrainConfig":

        known = {config_field.name for config_field in fields(cls)}
        unknown = sorted(set(record) - known)
        if unknown:
            raise ValueError(f"unknown configuration keys: {', '.join(unknown)}")

        config = cls(**record)
        config.validate()
        return config

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "TrainConfig":

        with open(path, "r") as f:
            record = json.load(f)

        if not isinstance(record, dict):
            raise ValueError(f"{path}: the configuration must be a JSON object")

        return cls.from_dict(record)

    def validate(self):

        for name in ("learning_rate", "dropout", "l2", "lambda_pair", "grad_clip"):
            if getattr(self, name) < 0.:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")

        if self.dropout >= 1.:
            raise ValueError(f"dropout must be below 1, got {self.dropout}")
        if self.pair_ratio <= 0.:
            raise ValueError(f"pair_ratio must be positive, got {self.pair_ratio}")

        for name in ("hidden", "embed_dim", "window", "batch_utterances", "min_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")

        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        if self.feature_set not in FEATURE_SETS:
            raise ValueError(f"feature_set must be one of {FEATURE_SETS}, got {self.feature_set!r}")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {DTYPES}, got {self.dtype!r}")

        if not self.self_link_threshold_grid:
            raise ValueError("the self-link threshold grid is empty")
        if any(not (0. <= value <= 1.) for value in self.self_link_threshold_grid):
            raise ValueError("self-link thresholds must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:

    epoch: int
    train_loss: float
    train_link_accuracy: float
    dev_link_f1: Optional[float]
    dev_cluster_f1: Optional[float]
    wall_time: float


@dataclass
class TrainReport:

    epochs: List[EpochRecord] = field(default_factory=list)
    n_targets: int = 0
    n_skipped: int = 0
    best_epoch: Optional[int] = None
    wall_time: float = 0.

    def to_dict(self) -> dict:
        return {
            "epochs": [asdict(record) for record in self.epochs],
            "n_targets": self.n_targets,
            "n_skipped": self.n_skipped,
            "best_epoch": self.best_epoch,
            "wall_time": self.wall_time
        }


def _batches(file_targets: FileTargets, size: int) -> Iterator[list]:
    for start in range(0, len(file_targets.targets), size):
        yield file_targets.targets[start:start + size]


def train(train_logs: Sequence[ChatLog],
          config: TrainConfig,
          dev_logs: Optional[Sequence[ChatLog]] = None,
          out_dir: Union[None, str, Path] = None,
          progress: bool = True) -> Tuple[DisentanglementModel, TrainReport]:
    """
        Trains the joint link + pair objective. Files are shuffled each epoch, the utterances of a
        file always stream in order. With a dev split the parameters of the epoch with the best dev
        cluster F1 are kept; with `out_dir` every epoch and the best one are checkpointed.
    """

    config.validate()
    rng = np.random.default_rng(config.seed)
    start_time = time.perf_counter()

    vocabulary = build_vocabulary((u for log in train_logs for u in log.utterances), config.min_count)
    model = DisentanglementModel.initialize(
        vocabulary, config.hidden, config.embed_dim, config.window, config.feature_set, rng, config.dtype,
        config.to_dict()
    )
    if config.embedding_file is not None:
        load_embedding_vectors(config.embedding_file, vocabulary, model.params["embedding"])

    files = [build_link_targets(log, vocabulary, config.window) for log in train_logs]
    report = TrainReport(
        n_targets=sum(len(file_targets.targets) for file_targets in files),
        n_skipped=sum(file_targets.n_skipped for file_targets in files)
    )
    logger.info(
        "Training on %d files, %d link targets (%d skipped, gold parent outside the window), vocabulary %d",
        len(files), report.n_targets, report.n_skipped, len(vocabulary)
    )

    optimizer = OptimizerState.for_parameters(
        model.params, learning_rate=config.learning_rate, l2=config.l2, dropout=config.dropout
    )

    out_dir = None if out_dir is None else Path(out_dir)
    best_f1, best_params = -1., None

    for epoch in range(1, config.epochs + 1):

        epoch_start = time.perf_counter()
        total_loss, total_targets, total_correct = 0., 0, 0

        n_batches = sum((len(f.targets) + config.batch_utterances - 1) // config.batch_utterances for f in files)
        with tqdm(total=n_batches, desc=f"epoch {epoch}", disable=not progress, leave=False) as bar:
            for file_index in rng.permutation(len(files)):

                file_targets = files[file_index]
                assign_pairs(file_targets, config.window, config.pair_ratio, rng)

                for batch in _batches(file_targets, config.batch_utterances):

                    result = batch_loss_and_grads(
                        model.params, file_targets, batch, config.lambda_pair, config.feature_set, config.dropout, rng
                    )
                    grads, _ = clip_by_global_norm(result.grads, config.grad_clip)
                    adam_step(model.params, grads, optimizer)

                    total_loss += result.loss
                    total_targets += result.n_targets
                    total_correct += result.n_correct
                    bar.update()

        record = EpochRecord(
            epoch=epoch,
            train_loss=total_loss / max(total_targets, 1),
            train_link_accuracy=total_correct / max(total_targets, 1),
            dev_link_f1=None,
            dev_cluster_f1=None,
            wall_time=0.
        )

        if dev_logs:
            bundle = evaluate(model, dev_logs, progress=False)
            record.dev_link_f1, record.dev_cluster_f1 = bundle.link.f1, bundle.exact_match.f1
            if bundle.exact_match.f1 > best_f1:
                best_f1, best_params = bundle.exact_match.f1, model.params.copy()
                report.best_epoch = epoch

        record.wall_time = time.perf_counter() - epoch_start
        report.epochs.append(record)

        logger.info(
            "epoch %d: loss %.4f, train link acc %.3f, dev link F1 %s, dev cluster F1 %s, %.1fs",
            epoch, record.train_loss, record.train_link_accuracy,
            "-" if record.dev_link_f1 is None else f"{record.dev_link_f1:.3f}",
            "-" if record.dev_cluster_f1 is None else f"{record.dev_cluster_f1:.3f}",
            record.wall_time
        )

        if out_dir is not None:
            model.save(out_dir / f"epoch_{epoch:03d}.ckpt.json")
            if report.best_epoch == epoch:
                model.save(out_dir / "best.ckpt.json")

    if best_params is not None:
        model.params = best_params
    elif config.epochs:
        report.best_epoch = config.epochs

    report.wall_time = time.perf_counter() - start_time
    return model, report


def evaluate(model: DisentanglementModel,
             logs: Sequence[ChatLog],
             threshold: Optional[float] = None,
             oracle_self_links: bool = False,
             online: bool = True,
             progress: bool = True) -> MetricBundle:
    """
        Decodes every log and scores the annotated utterances. Indices of different logs are kept
        apart by offsetting them, the clusterings of all logs are joined into one.
    """

    threshold = model.self_link_threshold if threshold is None else threshold

    predicted_links, gold_links, categories = list(), list(), dict()
    predicted_clusterings, gold_clusterings = list(), list()
    n_out_of_window, offset = 0, 0

    for log in tqdm(logs, desc="decoding", disable=not progress, leave=False):

        children = log.annotated_children()
        if not children:
            logger.warning("%s has no annotations, nothing to evaluate", log.name)
            continue

        result = decode_log(log, model, threshold, online, oracle_self_links)
        predicted_parent = {link.child: link.parent for link in result.links}

        predicted_links.extend((child + offset, predicted_parent[child] + offset) for child in children)
        gold_links.extend((link.child + offset, link.parent + offset) for link in log.annotations)
        n_out_of_window += sum(1 for link in log.annotations if link.child - link.parent > model.window)

        for child, category in utterance_categories(log.utterances, log.annotations).items():
            categories[child + offset] = category

        gold_labels = gold_clustering(log).labels()
        predicted_clusterings.append(Clustering.from_labels([result.labels[child] for child in children]))
        gold_clusterings.append(Clustering.from_labels([gold_labels[child] for child in children]))

        offset += len(log)

    return metric_bundle(
        predicted_links,
        gold_links,
        Clustering.concatenate(predicted_clusterings),
        Clustering.concatenate(gold_clusterings),
        categories,
        n_out_of_window
    )


def tune_self_link_threshold(model: DisentanglementModel,
                             dev_logs: Sequence[ChatLog],
                             grid: Sequence[float],
                             progress: bool = True) -> Tuple[float, Dict[float, float]]:
    """Grid value with the best dev cluster F1, the smaller one on ties, and the F1 of every value."""

    if not grid:
        raise ValueError("the self-link threshold grid is empty")
    if any(not (0. <= value <= 1.) for value in grid):
        raise ValueError("self-link thresholds must lie in [0, 1]")

    scores = dict()
    best_threshold, best_f1 = None, -1.
    for threshold in tqdm(sorted(set(grid)), desc="thresholds", disable=not progress, leave=False):

        f1 = evaluate(model, dev_logs, threshold, progress=False).exact_match.f1
        scores[threshold] = f1
        logger.info("self-link threshold %.2f: dev cluster F1 %.4f", threshold, f1)

        if f1 > best_f1:
            best_threshold, best_f1 = threshold, f1

    return best_threshold, scores
