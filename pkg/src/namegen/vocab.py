"""Surface/id vocabulary with frequency cutoff and special symbols."""
from __future__ import annotations

import json
from collections import Counter

from .codegraph import CodeGraph, NAME_MASK
from .errors import DataError

PAD = "<PAD>"
BOS = "<BOS>"
EOS = "<EOS>"
UNK = "<UNK>"
NO_KEYWORD = "<NO-KEYWORD>"
SPECIALS = (PAD, BOS, EOS, UNK, NAME_MASK, NO_KEYWORD)


class Vocab:
    def __init__(self, surfaces: list[str], freqs: dict[str, int] | None = None):
        self.id_to_surface = list(SPECIALS) + [s for s in surfaces if s not in SPECIALS]
        self.surface_to_id = {s: i for i, s in enumerate(self.id_to_surface)}
        if len(self.surface_to_id) != len(self.id_to_surface):
            raise DataError("duplicate surfaces in vocabulary")
        self.freqs = dict(freqs or {})
        self.pad_id = self.surface_to_id[PAD]
        self.bos_id = self.surface_to_id[BOS]
        self.eos_id = self.surface_to_id[EOS]
        self.unk_id = self.surface_to_id[UNK]
        self.mask_id = self.surface_to_id[NAME_MASK]
        self.no_keyword_id = self.surface_to_id[NO_KEYWORD]

    def __len__(self) -> int:
        return len(self.id_to_surface)

    def __contains__(self, surface: str) -> bool:
        return surface in self.surface_to_id

    def id_of(self, surface: str) -> int:
        return self.surface_to_id.get(surface, self.unk_id)

    def surface_of(self, idx: int) -> str:
        return self.id_to_surface[idx]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {"surfaces": self.id_to_surface[len(SPECIALS):], "freqs": self.freqs},
                fh, sort_keys=True)

    @staticmethod
    def load(path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            rec = json.load(fh)
        return Vocab(rec["surfaces"], rec.get("freqs"))


def build_vocab(graphs: list[CodeGraph], min_freq: int = 5) -> Vocab:
    """Count node surfaces and reference-name subtokens over the training
    split; surfaces below the cutoff fall back to UNK at lookup time."""
    counts: Counter = Counter()
    for g in graphs:
        for node in g.nodes:
            if node.surface != NAME_MASK:
                counts[node.surface] += 1
        counts.update(g.name_subtokens)
    kept = sorted(s for s, c in counts.items() if c >= min_freq)
    return Vocab(kept, {s: counts[s] for s in kept})
