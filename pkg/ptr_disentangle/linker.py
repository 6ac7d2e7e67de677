import logging

import numpy as np

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

from scipy.special import log_softmax

from .corpus import UNKNOWN_ID, Vocabulary
from .encoder import EncodedUtterance
from .substrate import STRUCTURAL_DIM, ParameterStore, masked_softmax, softmax, softmax_backward

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 50
FEATURE_SETS = ("full", "no_text", "text_only")


class OutsideWindowError(ValueError):
    """No gold parent of a link target lies inside its candidate window."""


class MentionMemory:
    """
        Cumulative mention counts between speaker ids, M[a, b] = how often a mentioned b.
        The table grows to cover any id it is asked about; unseen pairs read as 0.
    """

    def __init__(self, size: int = 0):
        self._counts = np.zeros((size, size), dtype=np.int64)
        self.size = size

    def __repr__(self):
        return f"MentionMemory(size={self.size}, total={int(self._counts.sum())})"

    def grow(self, size: int):

        if size <= self._counts.shape[0]:
            self.size = max(self.size, size)
            return

        capacity = max(size, 2 * self._counts.shape[0])
        counts = np.zeros((capacity, capacity), dtype=np.int64)
        counts[:self._counts.shape[0], :self._counts.shape[0]] = self._counts
        self._counts = counts
        self.size = size

    def get(self, a: int, b: int) -> int:
        if a >= self.size or b >= self.size:
            return 0
        return int(self._counts[a, b])

    def add(self, a: int, b: int, count: int):

        if count < 0:
            raise ValueError(f"mention counts only grow, got {count}")

        self.grow(max(a, b) + 1)
        self._counts[a, b] += count

    def table(self) -> np.ndarray:
        return self._counts[:self.size, :self.size].copy()

    def copy(self) -> "MentionMemory":

        other = MentionMemory()
        other._counts = self._counts.copy()
        other.size = self.size
        return other


def time_difference(t_i: np.ndarray, t_j: np.ndarray, j_precedes_i: bool = True) -> np.ndarray:
    """t_i - t_j in raw [hour, minute] units; a negative hour difference wraps past midnight."""

    diff = np.asarray(t_i, dtype=np.float64) - np.asarray(t_j, dtype=np.float64)
    if j_precedes_i and diff[0] < 0:
        diff[0] += 24.

    return diff


def mention_count(tokens: Iterable[str], speaker_id: int, vocabulary: Vocabulary) -> int:
    """Number of tokens whose vocabulary id is the speaker id (UNKNOWN never counts as a name)."""

    if speaker_id == UNKNOWN_ID:
        return 0

    return sum(1 for token in tokens if vocabulary.lookup(token) == speaker_id)


def update_mention_memory(memory: MentionMemory,
                          s_i: int,
                          s_j: int,
                          mention_ij: int,
                          mention_ji: int) -> MentionMemory:

    memory.add(s_i, s_j, mention_ij)
    memory.add(s_j, s_i, mention_ji)
    return memory


def structural_features(enc_i: EncodedUtterance,
                        enc_j: EncodedUtterance,
                        memory: MentionMemory,
                        vocabulary: Vocabulary) -> np.ndarray:
    """[t_ij (2), mention_ij, mention_ji, M_ij, M_ji] read from the memory as it is now."""

    s_i, s_j = enc_i.speaker_id, enc_j.speaker_id

    if enc_j.index == enc_i.index:
        time_diff = np.zeros(2)
    else:
        time_diff = time_difference(enc_i.time_vec, enc_j.time_vec, enc_j.index < enc_i.index)

    return np.array([
        time_diff[0],
        time_diff[1],
        mention_count(enc_i.tokens, s_j, vocabulary),
        mention_count(enc_j.tokens, s_i, vocabulary),
        memory.get(s_i, s_j),
        memory.get(s_j, s_i)
    ], dtype=np.float64)


@dataclass
class CoherenceCache:

    H_i: np.ndarray
    candidates: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray
    attention_i: np.ndarray
    attention_j: np.ndarray
    attended_i: np.ndarray
    attended_j: np.ndarray
    argmax_i: np.ndarray
    argmax_j: np.ndarray


def _enhance(H: np.ndarray, attended: np.ndarray) -> np.ndarray:
    return np.concatenate([H, attended, H - attended, H * attended], axis=-1)


def topic_coherence_batch(H_i: np.ndarray, H_js: Sequence[np.ndarray]) -> Tuple[np.ndarray, CoherenceCache]:
    """
        Soft-alignment text interaction between one message and K candidate messages.

        Each side attends over the other (row softmax of H_i H_jᵀ and H_j H_iᵀ), every token is
        enhanced to [h; h'; h - h'; h ⊙ h'], each side is pooled by mean ⊕ max over its tokens and
        the two pooled vectors are concatenated. Returns (K, 16·d) for token dimension d.
    """

    d = H_i.shape[1]
    for H_j in H_js:
        if H_j.ndim != 2 or H_j.shape[1] != d or H_j.shape[0] == 0:
            raise ValueError(f"candidate representation of shape {H_j.shape} does not match token dimension {d}")

    n_cand = len(H_js)
    lengths = np.array([H_j.shape[0] for H_j in H_js])
    candidates = np.zeros((n_cand, lengths.max(), d), dtype=H_i.dtype)
    for k, H_j in enumerate(H_js):
        candidates[k, :lengths[k]] = H_j
    mask = np.arange(lengths.max())[None, :] < lengths[:, None]

    energy = np.einsum("pd,kqd->kpq", H_i, candidates)
    attention_i = masked_softmax(energy, mask[:, None, :], axis=2)
    attended_i = np.einsum("kpq,kqd->kpd", attention_i, candidates)

    attention_j = softmax(energy.transpose(0, 2, 1), axis=2)
    attended_j = np.einsum("kqp,pd->kqd", attention_j, H_i)

    enhanced_i = _enhance(np.broadcast_to(H_i, attended_i.shape), attended_i)
    enhanced_j = _enhance(candidates, attended_j)

    mean_i = enhanced_i.mean(axis=1)
    argmax_i = enhanced_i.argmax(axis=1)
    max_i = np.take_along_axis(enhanced_i, argmax_i[:, None, :], axis=1)[:, 0]

    mean_j = (enhanced_j * mask[:, :, None]).sum(axis=1) / lengths[:, None]
    argmax_j = np.where(mask[:, :, None], enhanced_j, -np.inf).argmax(axis=1)
    max_j = np.take_along_axis(enhanced_j, argmax_j[:, None, :], axis=1)[:, 0]

    coherence = np.concatenate([mean_i, max_i, mean_j, max_j], axis=1)
    cache = CoherenceCache(
        H_i, candidates, mask, lengths, attention_i, attention_j, attended_i, attended_j, argmax_i, argmax_j
    )

    return coherence, cache


def topic_coherence_batch_backward(d_coherence: np.ndarray, cache: CoherenceCache) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Returns the gradient for H_i and one gradient per candidate H_j."""

    n_cand, q_len, d = cache.candidates.shape
    p_len = cache.H_i.shape[0]
    width = 4 * d

    d_mean_i, d_max_i, d_mean_j, d_max_j = (d_coherence[:, n * width:(n + 1) * width] for n in range(4))

    d_enh_i = np.broadcast_to(d_mean_i[:, None, :] / p_len, (n_cand, p_len, width)).copy()
    np.put_along_axis(
        d_enh_i, cache.argmax_i[:, None, :],
        np.take_along_axis(d_enh_i, cache.argmax_i[:, None, :], axis=1) + d_max_i[:, None, :], axis=1
    )

    d_enh_j = (d_mean_j[:, None, :] / cache.lengths[:, None, None]) * cache.mask[:, :, None]
    np.put_along_axis(
        d_enh_j, cache.argmax_j[:, None, :],
        np.take_along_axis(d_enh_j, cache.argmax_j[:, None, :], axis=1) + d_max_j[:, None, :], axis=1
    )

    H_b = np.broadcast_to(cache.H_i, cache.attended_i.shape)
    a0, a1, a2, a3 = (d_enh_i[..., n * d:(n + 1) * d] for n in range(4))
    d_H_b = a0 + a2 + a3 * cache.attended_i
    d_attended_i = a1 - a2 + a3 * H_b

    b0, b1, b2, b3 = (d_enh_j[..., n * d:(n + 1) * d] for n in range(4))
    d_candidates = b0 + b2 + b3 * cache.attended_j
    d_attended_j = b1 - b2 + b3 * cache.candidates

    d_H_i = d_H_b.sum(axis=0)

    d_attention_i = np.einsum("kpd,kqd->kpq", d_attended_i, cache.candidates)
    d_candidates += np.einsum("kpq,kpd->kqd", cache.attention_i, d_attended_i)

    d_attention_j = np.einsum("kqd,pd->kqp", d_attended_j, cache.H_i)
    d_H_i += np.einsum("kqp,kqd->pd", cache.attention_j, d_attended_j)

    d_energy = softmax_backward(cache.attention_i, d_attention_i, axis=2)
    d_energy += softmax_backward(cache.attention_j, d_attention_j, axis=2).transpose(0, 2, 1)
    d_energy *= cache.mask[:, None, :]

    d_H_i += np.einsum("kpq,kqd->pd", d_energy, cache.candidates)
    d_candidates += np.einsum("kpq,pd->kqd", d_energy, cache.H_i)

    return d_H_i, [d_candidates[k, :cache.lengths[k]] for k in range(n_cand)]


def topic_coherence(H_i: np.ndarray, H_j: np.ndarray) -> np.ndarray:
    coherence, _ = topic_coherence_batch(H_i, [H_j])
    return coherence[0]


def feature_scales(feature_set: str) -> Tuple[float, float]:
    """Multipliers of the (structural, text) blocks of f_ij for a feature-set ablation."""

    if feature_set not in FEATURE_SETS:
        raise ValueError(f"feature_set must be one of {FEATURE_SETS}, got {feature_set!r}")

    return {"full": (1., 1.), "no_text": (1., 0.), "text_only": (0., 1.)}[feature_set]


def assemble_features(structural: np.ndarray, coherence: np.ndarray, feature_set: str = "full") -> np.ndarray:
    """f_ij = t_ij ⊕ mention_ij ⊕ mention_ji ⊕ M_ij ⊕ M_ji ⊕ h_ij, one row per candidate."""

    structural_scale, text_scale = feature_scales(feature_set)
    return np.concatenate([
        structural.astype(coherence.dtype) * structural_scale,
        coherence * text_scale
    ], axis=-1)


@dataclass
class InteractionFeature:

    time_diff: np.ndarray
    mention_ij: int
    mention_ji: int
    memory_ij: int
    memory_ji: int
    coherence: np.ndarray

    @property
    def dim(self) -> int:
        return STRUCTURAL_DIM + self.coherence.shape[0]

    def vector(self, feature_set: str = "full") -> np.ndarray:
        structural = np.array([
            self.time_diff[0], self.time_diff[1], self.mention_ij, self.mention_ji, self.memory_ij, self.memory_ji
        ])
        return assemble_features(structural, self.coherence, feature_set)

    def to_dict(self) -> dict:
        return {
            "time_diff": [float(x) for x in self.time_diff],
            "mention_ij": self.mention_ij,
            "mention_ji": self.mention_ji,
            "memory_ij": self.memory_ij,
            "memory_ji": self.memory_ji,
            "coherence_norm": float(np.linalg.norm(self.coherence)),
            "coherence_dim": int(self.coherence.shape[0])
        }


def interaction_features(enc_i: EncodedUtterance,
                         enc_j: EncodedUtterance,
                         memory: MentionMemory,
                         vocabulary: Vocabulary) -> InteractionFeature:

    if enc_j.index > enc_i.index:
        raise ValueError(f"candidate {enc_j.index} comes after utterance {enc_i.index}")

    structural = structural_features(enc_i, enc_j, memory, vocabulary)
    return InteractionFeature(
        time_diff=structural[:2],
        mention_ij=int(structural[2]),
        mention_ji=int(structural[3]),
        memory_ij=int(structural[4]),
        memory_ji=int(structural[5]),
        coherence=topic_coherence(enc_i.token_reprs, enc_j.token_reprs)
    )


@dataclass
class PointingDistribution:

    child_index: int
    candidate_indices: List[int]
    probs: np.ndarray
    scores: Optional[np.ndarray] = None

    def prob_of(self, index: int) -> float:
        return float(self.probs[self.candidate_indices.index(index)])

    @property
    def self_prob(self) -> float:
        return float(self.probs[-1])


def window_start(index: int, window: int) -> int:
    return max(0, index - window)


def pointing_distribution(enc_i: EncodedUtterance,
                          window: Sequence[EncodedUtterance],
                          memory: MentionMemory,
                          params: ParameterStore,
                          vocabulary: Vocabulary,
                          feature_set: str = "full") -> PointingDistribution:
    """
        score(U_i, U_j) = tanh(w_linkᵀ f_ij) for every candidate of the window (the last one being
        U_i itself) and the softmax over those scores.
    """

    if not window or window[-1].index != enc_i.index:
        raise ValueError("the candidate window must end with the utterance itself")

    structural = np.stack([structural_features(enc_i, enc_j, memory, vocabulary) for enc_j in window])
    coherence, _ = topic_coherence_batch(enc_i.token_reprs, [enc_j.token_reprs for enc_j in window])
    features = assemble_features(structural, coherence, feature_set)

    scores = np.tanh(features @ params["w_link"])
    return PointingDistribution(enc_i.index, [enc_j.index for enc_j in window], softmax(scores), scores)


def link_loss(distribution: PointingDistribution, gold_parents: Iterable[int]) -> float:
    """-Σ log p over the gold parents inside the window; OutsideWindowError when there is none."""

    positions = [
        distribution.candidate_indices.index(parent)
        for parent in sorted(set(gold_parents))
        if parent in distribution.candidate_indices
    ]
    if not positions:
        raise OutsideWindowError(f"no gold parent of {distribution.child_index} inside its window")

    if distribution.scores is not None:
        log_probs = log_softmax(distribution.scores)
    else:
        log_probs = np.log(distribution.probs)

    return float(-log_probs[positions].sum())
