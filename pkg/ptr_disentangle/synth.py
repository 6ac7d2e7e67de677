import logging

import numpy as np

from pathlib import Path
from typing import List, Tuple, Union

from .corpus import ANNOTATION_SUFFIX, ChatLog, LinkAnnotation, annotations_to_text, parse_log

logger = logging.getLogger(__name__)

NICKS = (
    "alice", "bashful", "cedric", "dpkg_fan", "emmy", "fizzbuzz", "grubby", "hal9k", "ionut", "jojo",
    "kernelkid", "lumen", "mira", "nullptr", "oskar", "pingu", "quinn", "rootless", "sudoer", "tux42",
    "ulla", "vimmer", "wifi_woes", "xena", "yuki", "zed"
)

TOPIC_WORDS = (
    "grub", "nvidia", "driver", "wifi", "kernel", "apt", "ppa", "xorg", "wayland", "sound", "pulseaudio",
    "bluetooth", "printer", "cups", "partition", "fstab", "swap", "ext4", "btrfs", "lvm", "luks", "ssh",
    "firewall", "ufw", "samba", "nfs", "docker", "snap", "flatpak", "python", "gcc", "cmake", "locale",
    "keyboard", "touchpad", "suspend", "hibernate", "battery", "firefox", "chromium", "thunderbird",
    "vlc", "codec", "dualboot", "windows", "efi", "bios", "usb", "iso", "livecd", "upgrade", "release",
    "gnome", "kde", "xfce", "lightdm", "gdm", "systemd", "journal", "cron"
)

OPENERS = (
    "how do i fix {0} after the {1} update ?",
    "my {0} still breaks when {1} loads",
    "is {0} compatible with {1} ?",
    "which version of {0} ships with {1} ?",
    "anyone know why {0} fails with {1} ?"
)

REPLIES = (
    "did you try reinstalling {0} and {1}",
    "check the {0} log for {1} errors",
    "{0} works now but {1} does not",
    "you need {0} before configuring {1}",
    "thanks , the {0} trick fixed {1}",
    "paste the output of {0} and {1} please"
)

ISOLATED_LINES = (
    "hello all",
    "anyone around ?",
    "good morning everyone",
    "brb",
    "is this the right channel for help ?"
)


def speaker_names(count: int, rng: np.random.Generator) -> List[str]:
    """`count` distinct nicks, numbered variants of NICKS once the plain ones run out."""

    rounds = -(-count // len(NICKS))
    pool = [nick if k == 0 else f"{nick}_{k}" for k in range(rounds) for nick in NICKS]
    return [pool[k] for k in rng.permutation(len(pool))[:count]]


def topic_words(threads: int, rng: np.random.Generator) -> List[List[str]]:
    """Words per thread, disjoint between threads while TOPIC_WORDS is large enough."""

    size = max(2, min(4, len(TOPIC_WORDS) // threads))
    if size * threads <= len(TOPIC_WORDS):
        order = rng.permutation(len(TOPIC_WORDS))
        return [[TOPIC_WORDS[k] for k in order[t * size:(t + 1) * size]] for t in range(threads)]

    return [[TOPIC_WORDS[k] for k in rng.choice(len(TOPIC_WORDS), size=size, replace=False)] for _ in range(threads)]


def gen_synth(threads: int,
              utterances: int,
              mention_rate: float = 0.5,
              seed: int = 0,
              self_link_rate: float = 0.,
              name: str = "synth",
              concurrency: int = 4,
              pace: float = 5.) -> ChatLog:
    """
        Interleaves `threads` template conversations into one channel log. At most `concurrency`
        conversations are open at a time; when one runs out of messages the next one starts.
        Each conversation is a question by one speaker answered back and forth by a second one,
        every reply links to the latest message of its conversation and addresses its speaker by
        name with probability `mention_rate`.

        With `self_link_rate` a share of the messages are isolated greetings or system join lines
        by guests, which are gold self-links. The clock advances one minute with probability
        1 / `pace` per message, so timestamps never go backwards.
    """

    if threads < 1:
        raise ValueError(f"at least one thread is needed, got {threads}")
    if utterances < threads:
        raise ValueError(f"{utterances} utterances cannot hold {threads} threads")
    if not (0. <= mention_rate <= 1.):
        raise ValueError(f"mention_rate must lie in [0, 1], got {mention_rate}")
    if not (0. <= self_link_rate < 1.):
        raise ValueError(f"self_link_rate must lie in [0, 1), got {self_link_rate}")
    if concurrency < 1:
        raise ValueError(f"concurrency must be at least 1, got {concurrency}")
    if pace < 1.:
        raise ValueError(f"pace must be at least one message per minute, got {pace}")

    rng = np.random.default_rng(seed)

    n_noise = min(int(round(self_link_rate * utterances)), utterances - threads)
    noise_at = set(rng.choice(utterances, size=n_noise, replace=False).tolist())
    remaining = 1 + rng.multinomial(utterances - n_noise - threads, np.full(threads, 1. / threads))

    names = speaker_names(2 * threads, rng)
    participants = [names[2 * t:2 * t + 2] for t in range(threads)]
    topics = topic_words(threads, rng)

    open_threads, waiting = list(range(min(concurrency, threads))), list(range(min(concurrency, threads), threads))
    hour, minute = int(rng.integers(0, 20)), int(rng.integers(0, 5))
    last_message: dict = dict()  # thread -> (index, speaker)
    lines: List[str] = list()
    annotations: List[LinkAnnotation] = list()

    for index in range(utterances):

        minute += int(rng.random() < 1. / pace)
        hour, minute = (hour + minute // 60) % 24, minute % 60
        stamp = f"[{hour:02d}:{minute:02d}]"

        if index in noise_at:
            guest = f"guest{int(rng.integers(100, 1000))}"
            if rng.random() < 0.5:
                lines.append(f"{stamp} === {guest} joined the channel")
            else:
                lines.append(f"{stamp} <{guest}> {ISOLATED_LINES[rng.integers(len(ISOLATED_LINES))]}")
            annotations.append(LinkAnnotation(index, index))
            continue

        slot = open_threads[rng.integers(len(open_threads))]
        words = rng.choice(topics[slot], size=2, replace=False)

        if slot not in last_message:
            speaker = participants[slot][0]
            text = OPENERS[rng.integers(len(OPENERS))].format(*words)
            annotations.append(LinkAnnotation(index, index))
        else:
            parent, parent_speaker = last_message[slot]
            speaker = next(nick for nick in participants[slot] if nick != parent_speaker)
            text = REPLIES[rng.integers(len(REPLIES))].format(*words)
            if rng.random() < mention_rate:
                text = f"{parent_speaker}: {text}"
            annotations.append(LinkAnnotation(index, parent))

        lines.append(f"{stamp} <{speaker}> {text}")
        last_message[slot] = (index, speaker)

        remaining[slot] -= 1
        if remaining[slot] == 0:
            open_threads.remove(slot)
            if waiting:
                open_threads.append(waiting.pop(0))

    logger.debug("Generated %s: %d utterances in %d threads, %d noise lines", name, utterances, threads, n_noise)
    return ChatLog(name, parse_log("\n".join(lines)), annotations)

def log_to_text(log: ChatLog) -> str:
    """Renders a log back into `[HH:MM] <speaker> text` lines."""

    lines = list()
    for utterance in log.utterances:
        stamp = f"[{utterance.hour:02d}:{utterance.minute:02d}]"
        if utterance.is_system:
            lines.append(f"{stamp} === {utterance.raw_text}")
        else:
            lines.append(f"{stamp} <{utterance.speaker}> {utterance.raw_text}")

    return "\n".join(lines) + "\n"


def write_synth(log: ChatLog, out_dir: Union[str, Path]) -> Tuple[Path, Path]:

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    log_path = out_dir / f"{log.name}.ascii.txt"
    annotation_path = out_dir / f"{log.name}{ANNOTATION_SUFFIX}"
    log_path.write_text(log_to_text(log), encoding="utf-8")
    annotation_path.write_text(annotations_to_text(log.annotations), encoding="utf-8")

    return log_path, annotation_path


def gen_synth_corpus(out_dir: Union[str, Path],
                     files: int = 1,
                     threads: int = 3,
                     utterances: int = 60,
                     mention_rate: float = 0.5,
                     seed: int = 0,
                     self_link_rate: float = 0.,
                     concurrency: int = 4,
                     pace: float = 5.) -> List[ChatLog]:
    """Writes `synth_000`, `synth_001`, ... each generated with its own derived seed."""

    if files < 1:
        raise ValueError(f"at least one file is needed, got {files}")

    seeds = np.random.SeedSequence(seed).generate_state(files)
    logs = list()
    for k in range(files):
        log = gen_synth(
            threads, utterances, mention_rate, int(seeds[k]), self_link_rate, f"synth_{k:03d}", concurrency, pace
        )
        write_synth(log, out_dir)
        logs.append(log)

    logger.info("Wrote %d synthetic logs to %s", files, out_dir)
    return logs
