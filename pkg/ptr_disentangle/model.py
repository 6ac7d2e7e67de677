import json
import logging

import numpy as np

from pathlib import Path
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

from scipy.special import log_softmax

from .corpus import ChatLog, Utterance, Vocabulary
from .encoder import EncodedUtterance, describe_utterance, encode_utterance
from .linker import (
    DEFAULT_WINDOW, MentionMemory, PointingDistribution, assemble_features, feature_scales, mention_count,
    pointing_distribution, structural_features, topic_coherence_batch, topic_coherence_batch_backward,
    update_mention_memory, window_start
)
from .metrics import Clustering
from .objectives import PairSample, pair_loss, pair_loss_logit_gradient, sample_pairs
from .substrate import (
    STRUCTURAL_DIM, NumericFailure, ParameterStore, dropout_mask, encode_sequences, encode_sequences_backward, sigmoid
)
from .unionfind import UnionFind

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ptr-disentangle-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class LinkTarget:
    """
        One training example: an annotated utterance, its candidate window (itself last), the
        structural features read under teacher forcing, and the window positions of its gold parents.
    """

    index: int
    candidates: List[int]
    structural: np.ndarray
    gold_positions: List[int]
    pairs: List[Tuple[int, int]] = field(default_factory=list)  # (window position, label)


@dataclass
class FileTargets:

    name: str
    token_ids: List[np.ndarray]
    targets: List[LinkTarget]
    gold: Clustering
    n_annotated: int = 0
    n_skipped: int = 0


def gold_clustering(log: ChatLog) -> Clustering:
    """Connected components of the gold links over every utterance of the log."""

    components = UnionFind(range(len(log)))
    for link in log.annotations:
        components.union(link.child, link.parent)

    return Clustering.from_blocks(components.components())


def update_pair_mentions(memory: MentionMemory,
                         child: EncodedUtterance,
                         parent: EncodedUtterance,
                         vocabulary: Vocabulary):
    """Adds the mentions between a child and its (gold or predicted) parent to the memory."""

    update_mention_memory(
        memory,
        child.speaker_id,
        parent.speaker_id,
        mention_count(child.tokens, parent.speaker_id, vocabulary),
        mention_count(parent.tokens, child.speaker_id, vocabulary)
    )


def build_link_targets(log: ChatLog, vocabulary: Vocabulary, window: int = DEFAULT_WINDOW) -> FileTargets:
    """
        Walks a log in stream order with a fresh mention memory. Each annotated utterance becomes a
        link target, then the memory is updated with its most recent gold parent. Utterances before
        the first annotated one are context only. Targets without a gold parent in the window are
        counted and skipped.
    """

    described = [describe_utterance(utterance, vocabulary) for utterance in log.utterances]
    gold_parents = log.gold_parents()
    memory = MentionMemory(len(vocabulary))

    targets, n_skipped = list(), 0
    for index in sorted(gold_parents):

        enc_i = described[index]
        candidates = list(range(window_start(index, window), index + 1))
        positions = [parent - candidates[0] for parent in gold_parents[index] if parent >= candidates[0]]

        if positions:
            structural = np.stack([
                structural_features(enc_i, described[candidate], memory, vocabulary) for candidate in candidates
            ])
            targets.append(LinkTarget(index, candidates, structural, positions))
        else:
            n_skipped += 1
            logger.debug("%s: gold parents %s of %d lie outside the window", log.name, gold_parents[index], index)

        update_pair_mentions(memory, enc_i, described[max(gold_parents[index])], vocabulary)

    return FileTargets(
        name=log.name,
        token_ids=[enc.token_ids for enc in described],
        targets=targets,
        gold=gold_clustering(log),
        n_annotated=len(gold_parents),
        n_skipped=n_skipped
    )


def assign_pairs(file_targets: FileTargets,
                 window: int,
                 ratio: float,
                 rng: Optional[np.random.Generator] = None) -> int:
    """Samples pair examples among the link targets of a file; returns how many were attached."""

    by_index = {target.index: target for target in file_targets.targets}
    for target in file_targets.targets:
        target.pairs = list()

    if not by_index:
        return 0

    samples: List[PairSample] = sample_pairs(file_targets.gold, window, ratio, rng, eligible=set(by_index))
    for sample in samples:
        target = by_index[sample.index_i]
        target.pairs.append((sample.index_j - target.candidates[0], sample.label))

    return len(samples)


@dataclass
class BatchResult:

    loss: float
    link_loss: float
    pair_loss: float
    n_targets: int
    n_pairs: int
    n_correct: int
    grads: Optional[Dict[str, np.ndarray]] = None


def batch_loss_and_grads(params: ParameterStore,
                         file_targets: FileTargets,
                         targets: Sequence[LinkTarget],
                         lambda_pair: float = 1.,
                         feature_set: str = "full",
                         dropout: float = 0.,
                         rng: Optional[np.random.Generator] = None,
                         with_grads: bool = True) -> BatchResult:
    """
        Joint loss Σ link_loss + λ Σ pair_loss over a batch of link targets of one file, and its
        gradient for every parameter. Messages are encoded once per batch; pair examples reuse
        the feature rows of their link target.
    """

    _, text_scale = feature_scales(feature_set)
    w_link, w_pair = params["w_link"], params["w_pair"]

    needed = sorted({candidate for target in targets for candidate in target.candidates})
    row_of = {index: row for row, index in enumerate(needed)}
    reprs, encoding_cache = encode_sequences([file_targets.token_ids[index] for index in needed], params, dropout, rng)
    d_reprs = [np.zeros_like(output) for output in reprs]

    d_w_link, d_w_pair = np.zeros_like(w_link), np.zeros_like(w_pair)
    link_total, pair_total, n_pairs, n_correct = 0., 0., 0, 0

    for target in targets:

        H_i = reprs[row_of[target.index]]
        coherence, coherence_cache = topic_coherence_batch(H_i, [reprs[row_of[c]] for c in target.candidates])
        features = assemble_features(target.structural, coherence, feature_set)

        mask = dropout_mask(features.shape, dropout, rng, features.dtype)
        if mask is not None:
            features = features * mask

        scores = np.tanh(features @ w_link)
        log_probs = log_softmax(scores)
        link_value = -log_probs[target.gold_positions].sum()
        link_total += link_value
        n_correct += int(np.argmax(log_probs) in target.gold_positions)

        positions = np.array([position for position, _ in target.pairs], dtype=np.int64)
        labels = np.array([label for _, label in target.pairs], dtype=np.float64)
        pair_probs = sigmoid(features[positions] @ w_pair) if len(positions) else np.zeros(0)
        pair_total += sum(pair_loss(prob, label) for prob, label in zip(pair_probs, labels))
        n_pairs += len(positions)

        if not np.isfinite(link_value) or not np.all(np.isfinite(pair_probs)):
            raise NumericFailure(f"non-finite loss at {file_targets.name}:{target.index}", {
                "file": file_targets.name,
                "target": target.index,
                "candidates": [target.candidates[0], target.candidates[-1]],
                "gold_positions": target.gold_positions,
                "link_loss": float(link_value),
                "scores": [float(score) for score in scores]
            })

        if not with_grads:
            continue

        gold = np.zeros_like(scores)
        gold[target.gold_positions] = 1.
        d_scores = len(target.gold_positions) * np.exp(log_probs) - gold
        d_pre = d_scores * (1. - scores ** 2)

        d_w_link += features.T @ d_pre
        d_features = np.outer(d_pre, w_link)

        if len(positions):
            d_logits = lambda_pair * pair_loss_logit_gradient(pair_probs, labels)
            d_w_pair += features[positions].T @ d_logits
            np.add.at(d_features, positions, np.outer(d_logits, w_pair))

        if mask is not None:
            d_features = d_features * mask

        if text_scale:
            d_H_i, d_H_js = topic_coherence_batch_backward(d_features[:, STRUCTURAL_DIM:] * text_scale, coherence_cache)
            d_reprs[row_of[target.index]] += d_H_i
            for candidate, d_H_j in zip(target.candidates, d_H_js):
                d_reprs[row_of[candidate]] += d_H_j

    loss = link_total + lambda_pair * pair_total
    result = BatchResult(float(loss), float(link_total), float(pair_total), len(targets), n_pairs, n_correct)

    if with_grads:
        grads = encode_sequences_backward(d_reprs, encoding_cache, params)
        grads["w_link"] += d_w_link
        grads["w_pair"] += d_w_pair
        result.grads = grads

    return result


@dataclass
class DisentanglementModel:
    """Parameters, the frozen training vocabulary and the inference settings stored with them."""

    params: ParameterStore
    vocabulary: Vocabulary
    window: int = DEFAULT_WINDOW
    feature_set: str = "full"
    self_link_threshold: float = 0.
    config: dict = field(default_factory=dict)

    @classmethod
    def initialize(cls,
                   vocabulary: Vocabulary,
                   hidden: int = 256,
                   embed_dim: int = 128,
                   window: int = DEFAULT_WINDOW,
                   feature_set: str = "full",
                   rng: Optional[np.random.Generator] = None,
                   dtype: str = "float64",
                   config: Optional[dict] = None) -> "DisentanglementModel":

        params = ParameterStore.initialize(len(vocabulary), embed_dim, hidden, rng, dtype)
        return cls(params, vocabulary, window, feature_set, 0., dict(config or dict()))

    def encode(self, utterance: Utterance, vocabulary: Optional[Vocabulary] = None, allow_grow: bool = False) -> EncodedUtterance:
        vocabulary = self.vocabulary if vocabulary is None else vocabulary
        return encode_utterance(utterance, vocabulary, self.params, allow_grow)

    def pointing(self,
                 enc_i: EncodedUtterance,
                 window: Sequence[EncodedUtterance],
                 memory: MentionMemory,
                 vocabulary: Optional[Vocabulary] = None) -> PointingDistribution:
        vocabulary = self.vocabulary if vocabulary is None else vocabulary
        return pointing_distribution(enc_i, window, memory, self.params, vocabulary, self.feature_set)

    def to_json_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "window": self.window,
            "feature_set": self.feature_set,
            "self_link_threshold": self.self_link_threshold,
            "config": self.config,
            "vocabulary": self.vocabulary.to_dict(),
            "parameters": self.params.to_json_dict()
        }

    @classmethod
    def from_json_dict(cls, record: dict) -> "DisentanglementModel":

        if record.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a disentanglement checkpoint")
        if record.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {record.get('version')!r}")

        try:
            return cls(
                params=ParameterStore.from_json_dict(record["parameters"]),
                vocabulary=Vocabulary.from_dict(record["vocabulary"]),
                window=int(record["window"]),
                feature_set=record["feature_set"],
                self_link_threshold=float(record["self_link_threshold"]),
                config=dict(record["config"])
            )
        except (KeyError, TypeError) as error:
            raise ValueError(f"corrupt checkpoint: {error!r}") from error

    def save(self, path: Union[str, Path]):

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(json.dumps(self.to_json_dict(), sort_keys=True))
            f.write("\n")

        logger.debug("Saved checkpoint to %s", path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "DisentanglementModel":

        with open(path, "r", encoding="utf-8") as f:
            try:
                record = json.load(f)
            except json.JSONDecodeError as error:
                raise ValueError(f"corrupt checkpoint {path}: {error}") from error

        model = cls.from_json_dict(record)
        if model.params["embedding"].shape[0] != len(model.vocabulary):
            raise ValueError(f"{path}: embedding rows do not match the vocabulary size")

        return model
