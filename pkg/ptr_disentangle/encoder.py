import logging

import numpy as np

from pathlib import Path
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

from .corpus import UNKNOWN_ID, Utterance, Vocabulary
from .substrate import ParameterStore, sequence_encode

logger = logging.getLogger(__name__)


@dataclass
class EncodedUtterance:
    """
        The encoder's view of one utterance: raw [hour, minute] vector, speaker id, token ids
        and the Bi-LSTM token representations H (one row per token, or one EMPTY row).
    """

    index: int
    time_vec: np.ndarray
    speaker_id: int
    tokens: Tuple[str, ...]
    token_ids: np.ndarray
    token_reprs: Optional[np.ndarray] = None
    is_system: bool = False


def encode_timestamp(hour: int, minute: int) -> np.ndarray:

    if not (0 <= hour <= 23 and 0 <= minute <= 59):
        raise ValueError(f"timestamp out of range: {hour}:{minute}")

    return np.array([hour, minute], dtype=np.float64)


def encode_speaker(name: str, vocabulary: Vocabulary, allow_grow: bool = False) -> int:
    """Known speakers keep their id; unknown ones get a fresh id when growing, UNKNOWN otherwise."""

    if not name:
        raise ValueError("speaker name must be non-empty")

    speaker_id = vocabulary.speaker_id(name)
    if speaker_id == UNKNOWN_ID and allow_grow:
        speaker_id = vocabulary.add_speaker(name)
        logger.debug("New speaker %r got id %d", name, speaker_id)

    return speaker_id


def message_token_ids(tokens: Sequence[str], vocabulary: Vocabulary) -> np.ndarray:
    """
        Token ids fed to the Bi-LSTM. A message without a single alphanumeric token
        (punctuation-only or empty) yields no ids and is encoded by the EMPTY vector.
    """

    if not any(any(char.isalnum() for char in token) for token in tokens):
        return np.zeros(0, dtype=np.int64)

    return np.array(vocabulary.lookup_all(tokens), dtype=np.int64)


def describe_utterance(utterance: Utterance, vocabulary: Vocabulary, allow_grow: bool = False) -> EncodedUtterance:
    """Everything but the token representations, which need the parameters."""

    return EncodedUtterance(
        index=utterance.index,
        time_vec=encode_timestamp(*utterance.time),
        speaker_id=encode_speaker(utterance.speaker, vocabulary, allow_grow),
        tokens=utterance.tokens,
        token_ids=message_token_ids(utterance.tokens, vocabulary),
        is_system=utterance.is_system
    )


def encode_utterance(utterance: Utterance,
                     vocabulary: Vocabulary,
                     params: ParameterStore,
                     allow_grow: bool = False) -> EncodedUtterance:

    encoded = describe_utterance(utterance, vocabulary, allow_grow)
    encoded.token_reprs = sequence_encode(encoded.token_ids, params)
    return encoded


def load_embedding_vectors(path: Union[str, Path],
                           vocabulary: Vocabulary,
                           embedding: np.ndarray) -> int:
    """
        Overwrites rows of `embedding` with pre-trained vectors from a text file holding one token
        followed by its components per line. Rows of tokens absent from the file keep their random
        initialisation. Returns the number of rows loaded.
    """

    dim = embedding.shape[1]
    loaded = 0
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):

            fields = line.split()
            if len(fields) != dim + 1:
                if line.strip():
                    logger.debug("Skipping embedding line %d with %d fields", line_number, len(fields))
                continue

            token_id = vocabulary.token_to_id.get(fields[0])
            if token_id is None:
                continue

            embedding[token_id] = np.array(fields[1:], dtype=embedding.dtype)
            loaded += 1

    logger.info("Loaded %d of %d embedding rows from %s", loaded, len(vocabulary), path)
    return loaded


def encode_log(utterances: Sequence[Utterance],
               vocabulary: Vocabulary,
               params: ParameterStore,
               allow_grow: bool = False) -> List[EncodedUtterance]:
    return [encode_utterance(utterance, vocabulary, params, allow_grow) for utterance in utterances]
