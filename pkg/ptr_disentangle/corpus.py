import re
import json
import logging

from collections import Counter
from pathlib import Path
from statistics import median_low
from dataclasses import dataclass, field, asdict
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .unionfind import UnionFind

logger = logging.getLogger(__name__)

SYSTEM_SPEAKER = "<system>"
UNKNOWN_TOKEN = "<unk>"
PADDING_TOKEN = "<pad>"
UNKNOWN_ID = 0
PADDING_ID = 1

LOG_SUFFIXES = (".ascii.txt", ".raw.txt", ".jsonl")
ANNOTATION_SUFFIX = ".annotation.txt"
COLUMN_ORDERS = ("parent_child", "child_parent")

_TIMESTAMP_RE = re.compile(r"^\[(\d{1,2}):(\d{1,2})\]\s?(.*)$", re.DOTALL)
_EDGE_PUNCT_RE = re.compile(r"^(\W*)(.*?)(\W*)$", re.DOTALL)


class LogParseError(ValueError):

    def __init__(self, message: str, line_number: Optional[int] = None):
        location = "" if line_number is None else f"line {line_number}: "
        super().__init__(f"{location}{message}")
        self.line_number = line_number


class AnnotationFormatError(ValueError):

    def __init__(self, message: str, line_number: Optional[int] = None):
        location = "" if line_number is None else f"line {line_number}: "
        super().__init__(f"{location}{message}")
        self.line_number = line_number


class CorpusIntegrityError(ValueError):
    pass


@dataclass(frozen=True)
class LogLine:
    """The fields a single raw log line carries before it is placed in a stream."""

    time: Tuple[int, int]
    speaker: str
    raw_text: str
    is_system: bool


@dataclass(frozen=True)
class Utterance:

    index: int
    time: Tuple[int, int]
    speaker: str
    tokens: Tuple[str, ...]
    raw_text: str
    is_system: bool = False

    @property
    def hour(self) -> int:
        return self.time[0]

    @property
    def minute(self) -> int:
        return self.time[1]

    @classmethod
    def from_log_line(cls, index: int, log_line: LogLine) -> "Utterance":
        return cls(
            index,
            log_line.time,
            log_line.speaker,
            tuple(tokenize(log_line.raw_text)),
            log_line.raw_text,
            log_line.is_system
        )

    def to_json_dict(self) -> dict:
        return {
            "i": self.index,
            "h": self.time[0],
            "m": self.time[1],
            "s": self.speaker,
            "sys": self.is_system,
            "text": self.raw_text
        }

    @classmethod
    def from_json_dict(cls, record: dict) -> "Utterance":
        return cls(
            int(record["i"]),
            (int(record["h"]), int(record["m"])),
            str(record["s"]),
            tuple(tokenize(record["text"])),
            str(record["text"]),
            bool(record["sys"])
        )


@dataclass(frozen=True, order=True)
class LinkAnnotation:

    child: int
    parent: int

    @property
    def is_self_link(self) -> bool:
        return self.child == self.parent

    @property
    def distance(self) -> int:
        return self.child - self.parent


def parse_log_line(line: str, line_number: Optional[int] = None) -> Optional[LogLine]:
    """
        Parses `[HH:MM] <speaker> text`, `[HH:MM] * speaker text` (emote) or `[HH:MM] === text`
        (system message). Returns None for an empty line, which callers treat as "skip".
    """

    stripped = line.strip()
    if not stripped:
        return None

    match = _TIMESTAMP_RE.match(stripped)
    if match is None:
        raise LogParseError(f"missing or malformed timestamp in {stripped[:40]!r}", line_number)

    hour, minute, rest = int(match.group(1)), int(match.group(2)), match.group(3).strip()
    if not (0 <= hour <= 23 and 0 <= minute <= 59):
        raise LogParseError(f"timestamp out of range: {hour:02d}:{minute:02d}", line_number)

    if rest.startswith("==="):
        return LogLine((hour, minute), SYSTEM_SPEAKER, rest[3:].strip(), True)

    if rest.startswith("<"):
        closing = rest.find(">")
        if closing <= 1:
            raise LogParseError(f"malformed speaker field in {rest[:40]!r}", line_number)
        return LogLine((hour, minute), rest[1:closing], rest[closing + 1:].strip(), False)

    if rest.startswith("* "):
        emote = rest[2:].strip().split(maxsplit=1)
        if not emote:
            raise LogParseError("emote line without a speaker", line_number)
        return LogLine((hour, minute), emote[0], emote[1] if len(emote) == 2 else "", False)

    raise LogParseError(f"missing speaker field in {rest[:40]!r}", line_number)


def tokenize(raw_text: str) -> List[str]:
    """
        Lowercases, splits on whitespace and peels leading/trailing punctuation off every chunk
        as single-character tokens. Interior punctuation stays, so nicknames such as
        "bashing-om:" keep their core ("bashing-om") and match the speaker vocabulary entry.
    """

    tokens = list()
    for chunk in raw_text.lower().split():

        leading, core, trailing = _EDGE_PUNCT_RE.match(chunk).groups()
        tokens.extend(leading)
        if core:
            tokens.append(core)
        tokens.extend(trailing)

    return tokens


def parse_log(text: str) -> List[Utterance]:

    utterances = list()
    for line_number, line in enumerate(text.split("\n"), start=1):

        log_line = parse_log_line(line, line_number)
        if log_line is None:
            continue

        utterances.append(Utterance.from_log_line(len(utterances), log_line))

    return utterances


def load_annotations(text: str, offset: int = 0, column_order: str = "parent_child") -> List[LinkAnnotation]:
    """
        Reads whitespace separated `parent child [ignored...]` lines (or `child parent` with
        column_order="child_parent"). Indices are shifted down by `offset`. Duplicates are dropped
        and the result is sorted by (child, parent).
    """

    if column_order not in COLUMN_ORDERS:
        raise ValueError(f"column_order must be one of {COLUMN_ORDERS}, got {column_order!r}")

    links = set()
    for line_number, line in enumerate(text.split("\n"), start=1):

        fields = line.split()
        if not fields:
            continue

        if len(fields) < 2:
            raise AnnotationFormatError(f"expected two indices, got {line.strip()!r}", line_number)

        try:
            first, second = int(fields[0]), int(fields[1])
        except ValueError:
            raise AnnotationFormatError(f"non-integer index in {line.strip()!r}", line_number) from None

        parent, child = (first, second) if column_order == "parent_child" else (second, first)
        if parent > child:
            raise AnnotationFormatError(f"parent {parent} comes after child {child}", line_number)

        parent, child = parent - offset, child - offset
        if parent < 0:
            raise AnnotationFormatError(f"index {parent + offset} is below the offset {offset}", line_number)

        links.add(LinkAnnotation(child, parent))

    return sorted(links)


def utterances_to_jsonl(utterances: Iterable[Utterance]) -> str:
    return "".join(json.dumps(utterance.to_json_dict(), ensure_ascii=False) + "\n" for utterance in utterances)


def utterances_from_jsonl(text: str) -> List[Utterance]:

    utterances = list()
    for line_number, line in enumerate(text.split("\n"), start=1):

        if not line.strip():
            continue

        try:
            utterance = Utterance.from_json_dict(json.loads(line))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
            raise LogParseError(f"bad canonical record: {err}", line_number) from None

        if utterance.index != len(utterances):
            raise CorpusIntegrityError(f"line {line_number}: index {utterance.index} is not consecutive")

        utterances.append(utterance)

    return utterances


def annotations_to_text(annotations: Iterable[LinkAnnotation], offset: int = 0) -> str:
    return "".join(f"{link.parent + offset} {link.child + offset} -\n" for link in annotations)


@dataclass
class ChatLog:
    """One contiguous channel log and its (possibly empty) link annotation."""

    name: str
    utterances: List[Utterance]
    annotations: List[LinkAnnotation] = field(default_factory=list)

    def __post_init__(self):

        n = len(self.utterances)
        for link in self.annotations:
            if not (0 <= link.parent <= link.child < n):
                raise CorpusIntegrityError(
                    f"{self.name}: link {link.parent} -> {link.child} outside of the {n} utterances"
                )

    def __len__(self) -> int:
        return len(self.utterances)

    def gold_parents(self) -> Dict[int, List[int]]:

        parents: Dict[int, List[int]] = dict()
        for link in self.annotations:
            parents.setdefault(link.child, list()).append(link.parent)

        return {child: sorted(parent_list) for child, parent_list in sorted(parents.items())}

    def annotated_children(self) -> List[int]:
        return sorted({link.child for link in self.annotations})

    @property
    def first_annotated(self) -> int:
        children = self.annotated_children()
        return children[0] if children else len(self.utterances)


def read_chat_log(log_path: Union[str, Path],
                  annotation_path: Union[None, str, Path] = None,
                  offset: int = 0,
                  column_order: str = "parent_child") -> ChatLog:

    log_path = Path(log_path)
    text = log_path.read_text(encoding="utf-8")
    utterances = utterances_from_jsonl(text) if log_path.suffix == ".jsonl" else parse_log(text)

    annotations = list()
    if annotation_path is not None:
        annotation_text = Path(annotation_path).read_text(encoding="utf-8")
        annotations = load_annotations(annotation_text, offset, column_order)

    name = log_path.name
    for suffix in LOG_SUFFIXES:
        if name.endswith(suffix):
            name = name[:-len(suffix)]
            break

    logger.debug("Read %s: %d utterances, %d links", name, len(utterances), len(annotations))
    return ChatLog(name, utterances, annotations)


def read_corpus_dir(path: Union[str, Path], offset: int = 0, column_order: str = "parent_child") -> List[ChatLog]:
    """
        Reads a split directory laid out as `<name>.annotation.txt` next to `<name>.ascii.txt`,
        `<name>.raw.txt` or `<name>.jsonl`. A single log file may be passed instead of a directory;
        its annotation is picked up when it sits next to it.
    """

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such corpus path: {path}")

    if path.is_file():
        base = str(path)
        for suffix in LOG_SUFFIXES:
            if base.endswith(suffix):
                base = base[:-len(suffix)]
                break
        annotation_path = Path(base + ANNOTATION_SUFFIX)
        return [read_chat_log(path, annotation_path if annotation_path.exists() else None, offset, column_order)]

    logs = list()
    names = sorted({
        entry.name[:-len(suffix)]
        for entry in path.iterdir()
        for suffix in LOG_SUFFIXES
        if entry.name.endswith(suffix)
    })
    for name in names:

        log_path = next(path / (name + suffix) for suffix in LOG_SUFFIXES if (path / (name + suffix)).exists())
        annotation_path = path / (name + ANNOTATION_SUFFIX)
        logs.append(read_chat_log(
            log_path,
            annotation_path if annotation_path.exists() else None,
            offset,
            column_order
        ))

    if not logs:
        raise FileNotFoundError(f"no chat logs ({', '.join(LOG_SUFFIXES)}) found in {path}")

    return logs


class Vocabulary:
    """
        Shared word + speaker vocabulary. Speaker names are case-folded so that a mention of
        "TuxThePenguin" in a message and the speaker "tuxthepenguin" resolve to one id.
    """

    def __init__(self, tokens: Sequence[str], speakers: Iterable[str] = ()):

        self.id_to_token: List[str] = [UNKNOWN_TOKEN, PADDING_TOKEN]
        self.token_to_id: Dict[str, int] = {UNKNOWN_TOKEN: UNKNOWN_ID, PADDING_TOKEN: PADDING_ID}
        self.speakers = set()

        for token in tokens:
            self.add(token)

        for speaker in speakers:
            self.add_speaker(speaker)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) \
            and self.id_to_token == other.id_to_token \
            and self.speakers == other.speakers

    @staticmethod
    def speaker_key(name: str) -> str:
        return name.lower()

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def add(self, token: str) -> int:

        if token in self.token_to_id:
            return self.token_to_id[token]

        self.token_to_id[token] = len(self.id_to_token)
        self.id_to_token.append(token)
        return self.token_to_id[token]

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNKNOWN_ID)

    def lookup_all(self, tokens: Iterable[str]) -> List[int]:
        return [self.token_to_id.get(token, UNKNOWN_ID) for token in tokens]

    def speaker_id(self, name: str) -> int:
        return self.lookup(self.speaker_key(name))

    def add_speaker(self, name: str) -> int:

        key = self.speaker_key(name)
        self.speakers.add(key)
        return self.add(key)

    def fork(self) -> "Vocabulary":
        """An independent copy, so that a stream session can grow it without sharing."""

        copy = Vocabulary(())
        copy.id_to_token = list(self.id_to_token)
        copy.token_to_id = dict(self.token_to_id)
        copy.speakers = set(self.speakers)
        return copy

    def to_dict(self) -> dict:
        return {"tokens": self.id_to_token[2:], "speakers": sorted(self.speakers)}

    @classmethod
    def from_dict(cls, record: dict) -> "Vocabulary":

        vocabulary = cls(record["tokens"])
        vocabulary.speakers = set(record["speakers"])
        missing = vocabulary.speakers - set(vocabulary.token_to_id)
        if missing:
            raise ValueError(f"speakers missing from the token list: {sorted(missing)[:5]}")

        return vocabulary


def build_vocabulary(utterances: Iterable[Utterance], min_count: int = 1) -> Vocabulary:
    """
        Ids are assigned by descending frequency, ties broken lexicographically. Every speaker
        name gets an id regardless of min_count; ids 0 and 1 are reserved for UNKNOWN and PADDING.
    """

    if min_count < 1:
        raise ValueError(f"min_count must be at least 1, got {min_count}")

    counts = Counter()
    speakers = set()
    for utterance in utterances:
        counts.update(utterance.tokens)
        key = Vocabulary.speaker_key(utterance.speaker)
        counts[key] += 1
        speakers.add(key)

    for reserved in (UNKNOWN_TOKEN, PADDING_TOKEN):
        counts.pop(reserved, None)

    kept = [token for token, count in counts.items() if count >= min_count or token in speakers]
    kept.sort(key=lambda token: (-counts[token], token))

    vocabulary = Vocabulary(kept)
    vocabulary.speakers = speakers
    return vocabulary


@dataclass
class CorpusStats:

    total_links: int
    total_conversations: int
    avg_link_distance: float
    median_link_distance: int
    avg_parents_per_utterance: float
    avg_utterances_per_conversation: float
    median_utterances_per_conversation: int

    def to_dict(self) -> dict:
        return asdict(self)


def _collect_structure(n: int, annotations: Sequence[LinkAnnotation]) -> Tuple[List[int], List[int], List[int]]:
    """Link distances, parent counts per child and conversation sizes of one log."""

    threads = UnionFind()
    parent_counts = Counter()
    distances = list()

    for link in annotations:

        if not (0 <= link.parent <= link.child < n):
            raise CorpusIntegrityError(f"link {link.parent} -> {link.child} dangles outside 0..{n - 1}")

        distances.append(link.distance)
        parent_counts[link.child] += 1
        threads.union(link.child, link.parent)

    sizes = [len(component) for component in threads.components()]
    return distances, list(parent_counts.values()), sizes


def _stats_from_values(distances: List[int], parent_counts: List[int], sizes: List[int]) -> CorpusStats:
    return CorpusStats(
        total_links=len(distances),
        total_conversations=len(sizes),
        avg_link_distance=sum(distances) / len(distances) if distances else 0.,
        median_link_distance=median_low(distances) if distances else 0,
        avg_parents_per_utterance=sum(parent_counts) / len(parent_counts) if parent_counts else 0.,
        avg_utterances_per_conversation=sum(sizes) / len(sizes) if sizes else 0.,
        median_utterances_per_conversation=median_low(sizes) if sizes else 0,
    )


def corpus_stats(utterances: Sequence[Utterance], annotations: Sequence[LinkAnnotation]) -> CorpusStats:
    return _stats_from_values(*_collect_structure(len(utterances), annotations))


def split_stats(logs: Sequence[ChatLog]) -> CorpusStats:
    """Statistics over a whole split; conversations never cross file boundaries."""

    distances, parent_counts, sizes = list(), list(), list()
    for log in logs:
        log_distances, log_parent_counts, log_sizes = _collect_structure(len(log.utterances), log.annotations)
        distances += log_distances
        parent_counts += log_parent_counts
        sizes += log_sizes

    return _stats_from_values(distances, parent_counts, sizes)


SELF_LINK_CATEGORIES = ("system", "start", "isolated")


def utterance_categories(utterances: Sequence[Utterance], annotations: Sequence[LinkAnnotation]) -> Dict[int, str]:
    """
        Self-link taxonomy for every annotated child: "system" for system messages, "start" when a
        later utterance replies to it, "isolated" otherwise.
    """

    replied_to = {link.parent for link in annotations if not link.is_self_link}
    categories = dict()
    for child in sorted({link.child for link in annotations}):

        if utterances[child].is_system:
            categories[child] = "system"
        elif child in replied_to:
            categories[child] = "start"
        else:
            categories[child] = "isolated"

    return categories


def self_link_taxonomy(logs: Sequence[ChatLog]) -> Dict[str, float]:
    """Share of gold self-links per category, as fractions summing to 1 (or all 0 without self-links)."""

    counts = Counter()
    for log in logs:
        categories = utterance_categories(log.utterances, log.annotations)
        counts.update(categories[link.child] for link in log.annotations if link.is_self_link)

    total = sum(counts.values())
    return {category: (counts[category] / total if total else 0.) for category in SELF_LINK_CATEGORIES}
