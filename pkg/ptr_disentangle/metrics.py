import logging

import numpy as np

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Hashable, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

from scipy.special import comb, xlogy

from .corpus import SELF_LINK_CATEGORIES

logger = logging.getLogger(__name__)

Link = Tuple[int, int]  # (child, parent)


class PRF(NamedTuple):

    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, correct: int, n_predicted: int, n_gold: int) -> "PRF":
        """An empty side gives 0 for its ratio; F1 is 0 when P + R is 0."""

        precision = correct / n_predicted if n_predicted else 0.
        recall = correct / n_gold if n_gold else 0.
        f1 = 2. * precision * recall / (precision + recall) if precision + recall > 0. else 0.
        return cls(precision, recall, f1)

    def to_dict(self) -> Dict[str, float]:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass(frozen=True)
class Clustering:
    """A partition of the items 0..n-1 into disjoint non-empty blocks, kept sorted by smallest member."""

    blocks: Tuple[FrozenSet[int], ...]

    def __post_init__(self):

        blocks = [frozenset(block) for block in self.blocks]
        if any(len(block) == 0 for block in blocks):
            raise ValueError("clustering blocks must be non-empty")

        blocks = tuple(sorted(blocks, key=min))
        members = sorted(item for block in blocks for item in block)
        if members != list(range(len(members))):
            raise ValueError("clustering blocks must cover 0..n-1 exactly once")

        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def from_blocks(cls, blocks: Iterable[Iterable[int]]) -> "Clustering":
        return cls(tuple(frozenset(block) for block in blocks))

    @classmethod
    def from_labels(cls, labels: Sequence[Hashable]) -> "Clustering":

        groups: Dict[Hashable, List[int]] = dict()
        for item, label in enumerate(labels):
            groups.setdefault(label, list()).append(item)

        return cls.from_blocks(groups.values())

    @classmethod
    def concatenate(cls, clusterings: Sequence["Clustering"]) -> "Clustering":
        """Disjoint union, item indices of later clusterings shifted past the earlier ones."""

        blocks, offset = list(), 0
        for clustering in clusterings:
            blocks.extend(frozenset(item + offset for item in block) for block in clustering.blocks)
            offset += clustering.n

        return cls(tuple(blocks))

    @property
    def n(self) -> int:
        return sum(len(block) for block in self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    def labels(self) -> np.ndarray:

        labels = np.empty(self.n, dtype=np.int64)
        for label, block in enumerate(self.blocks):
            labels[list(block)] = label

        return labels

    def non_singletons(self) -> FrozenSet[FrozenSet[int]]:
        return frozenset(block for block in self.blocks if len(block) > 1)


def contingency_table(x: Clustering, y: Clustering) -> np.ndarray:

    if x.n != y.n:
        raise ValueError(f"clusterings of {x.n} and {y.n} items are not comparable")

    table = np.zeros((len(x), len(y)), dtype=np.int64)
    np.add.at(table, (x.labels(), y.labels()), 1)
    return table


def link_prf(predicted: Iterable[Link], gold: Iterable[Link]) -> PRF:
    """A predicted (child, parent) is correct when it is one of the gold links of that child."""

    predicted, gold = set(predicted), set(gold)
    return PRF.from_counts(len(predicted & gold), len(predicted), len(gold))


def self_link_prf(predicted: Iterable[Link], gold: Iterable[Link]) -> PRF:
    return link_prf(
        (link for link in predicted if link[0] == link[1]),
        (link for link in gold if link[0] == link[1])
    )


def self_link_prf_by_category(predicted: Iterable[Link],
                              gold: Iterable[Link],
                              categories: Mapping[int, str]) -> Dict[str, PRF]:
    """Self-link P/R/F1 restricted to the children of each self-link category."""

    predicted, gold = list(predicted), list(gold)
    out = dict()
    for category in SELF_LINK_CATEGORIES:
        out[category] = self_link_prf(
            (link for link in predicted if categories.get(link[0]) == category),
            (link for link in gold if categories.get(link[0]) == category)
        )

    return out


def scaled_vi(x: Clustering, y: Clustering) -> float:
    """1 - VI(X; Y) / ln(n) with VI = H(X|Y) + H(Y|X) in nats. Fewer than two items give 1."""

    table = contingency_table(x, y)
    n = x.n
    if n < 2:
        return 1.

    joint = table / n
    h_joint = -xlogy(joint, joint).sum()
    p_x, p_y = joint.sum(axis=1), joint.sum(axis=0)
    h_x, h_y = -xlogy(p_x, p_x).sum(), -xlogy(p_y, p_y).sum()

    vi = max(2. * h_joint - h_x - h_y, 0.)
    return float(1. - vi / np.log(n))


def ari(x: Clustering, y: Clustering) -> float:
    """
        Adjusted Rand index from pair counts. When the denominator vanishes (both clusterings
        trivial) the result is 1 for identical clusterings and 0 otherwise.
    """

    table = contingency_table(x, y)

    index = comb(table, 2).sum()
    sum_a = comb(table.sum(axis=1), 2).sum()
    sum_b = comb(table.sum(axis=0), 2).sum()
    n_pairs = comb(x.n, 2)

    expected = sum_a * sum_b / n_pairs if n_pairs else 0.
    denominator = 0.5 * (sum_a + sum_b) - expected

    if abs(denominator) < 1e-12:
        return 1. if x == y else 0.

    return float((index - expected) / denominator)


def exact_match_f1(predicted: Clustering, gold: Clustering) -> PRF:
    """Conversations reproduced exactly, single-message conversations removed from both sides."""

    predicted_blocks, gold_blocks = predicted.non_singletons(), gold.non_singletons()
    if not predicted_blocks and not gold_blocks:
        return PRF(1., 1., 1.)

    return PRF.from_counts(len(predicted_blocks & gold_blocks), len(predicted_blocks), len(gold_blocks))


@dataclass
class MetricBundle:

    link: PRF
    self_link: PRF
    scaled_vi: float
    ari: float
    exact_match: PRF
    self_link_categories: Dict[str, PRF] = field(default_factory=dict)
    n_predicted_links: int = 0
    n_gold_links: int = 0
    n_out_of_window: int = 0

    def to_dict(self) -> dict:
        return {
            "link": self.link.to_dict(),
            "self_link": self.self_link.to_dict(),
            "self_link_categories": {name: prf.to_dict() for name, prf in self.self_link_categories.items()},
            "scaled_vi": self.scaled_vi,
            "ari": self.ari,
            "exact_match": self.exact_match.to_dict(),
            "n_predicted_links": self.n_predicted_links,
            "n_gold_links": self.n_gold_links,
            "n_out_of_window": self.n_out_of_window
        }

    def to_table(self) -> str:
        """Percentages laid out as cluster / link / self-link column groups."""

        header = f"{'VI':>6} {'ARI':>6} {'P':>6} {'R':>6} {'F':>6} | " \
                 f"{'P':>6} {'R':>6} {'F':>6} | {'P':>6} {'R':>6} {'F':>6}"
        groups = f"{'Cluster':<34} | {'Link':<20} | {'Self-link':<20}"

        values = [self.scaled_vi, self.ari, *self.exact_match, *self.link, *self.self_link]
        cells = [f"{100. * value:6.1f}" for value in values]
        row = " ".join(cells[:5]) + " | " + " ".join(cells[5:8]) + " | " + " ".join(cells[8:])

        lines = [groups, header, row]
        for name, prf in self.self_link_categories.items():
            lines.append(f"self-link {name:<9} P {100. * prf.precision:5.1f}  R {100. * prf.recall:5.1f}  F {100. * prf.f1:5.1f}")
        lines.append(
            f"links predicted {self.n_predicted_links}, gold {self.n_gold_links}, "
            f"gold parents outside the window {self.n_out_of_window}"
        )

        return "\n".join(lines)


def metric_bundle(predicted_links: Sequence[Link],
                  gold_links: Sequence[Link],
                  predicted: Clustering,
                  gold: Clustering,
                  categories: Optional[Mapping[int, str]] = None,
                  n_out_of_window: int = 0) -> MetricBundle:

    return MetricBundle(
        link=link_prf(predicted_links, gold_links),
        self_link=self_link_prf(predicted_links, gold_links),
        scaled_vi=scaled_vi(predicted, gold),
        ari=ari(predicted, gold),
        exact_match=exact_match_f1(predicted, gold),
        self_link_categories=dict() if categories is None else self_link_prf_by_category(
            predicted_links, gold_links, categories
        ),
        n_predicted_links=len(set(predicted_links)),
        n_gold_links=len(set(gold_links)),
        n_out_of_window=n_out_of_window
    )
