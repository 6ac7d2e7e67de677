from typing import List, Optional

import numpy as np

from ptr_disentangle import ChatLog, DisentanglementModel, LinkAnnotation, build_vocabulary, parse_log

HELP_LOG = """[02:26] === zelot joined the channel
[02:26] <zelot> hi, where can i get some help in regards to issues with mount?
[02:27] <bashing-om> zelot: If you are on a live cd, try booting with nomodeset
[02:27] <TuxThePenguin> anyone know a good ppa for nvidia drivers?
[02:28] <zelot> bashing-om: ok, i will try booting that way
[02:29] <alice> TuxThePenguin, try the graphics-drivers ppa
[02:30] <TuxThePenguin> alice: thanks!
"""

HELP_LINKS = [(0, 0), (1, 1), (2, 1), (3, 3), (4, 2), (5, 3), (6, 5)]


def help_log() -> ChatLog:
    """Two interleaved help conversations plus a join message."""

    annotations = [LinkAnnotation(child, parent) for child, parent in HELP_LINKS]
    return ChatLog("help", parse_log(HELP_LOG), annotations)


def tiny_model(logs: List[ChatLog],
               hidden: int = 4,
               embed_dim: int = 4,
               window: int = 50,
               seed: int = 0,
               feature_set: str = "full",
               scale: Optional[float] = None) -> DisentanglementModel:
    """A randomly initialised double precision model over the vocabulary of `logs`."""

    vocabulary = build_vocabulary(u for log in logs for u in log.utterances)
    model = DisentanglementModel.initialize(
        vocabulary, hidden, embed_dim, window, feature_set, np.random.default_rng(seed)
    )

    if scale is not None:
        for name in model.params.names:
            model.params[name] = model.params[name] * scale

    return model
