"""Character alphabet, label encoding, and character-level metrics.

Label ids are 1-based; id 0 is reserved for the blank symbol used by the
alignment loss and never appears in encoded text. The on-disk format is one
character per line, so a character's id is its line number (starting at 1).
"""

from __future__ import annotations

import numpy as np

from .errors import InputError

BLANK = 0

DEFAULT_CHARS = "abcdefgh "


class Alphabet:
    def __init__(self, chars):
        chars = list(chars)
        if not chars:
            raise InputError("alphabet is empty")
        if any(len(c) != 1 for c in chars):
            raise InputError("alphabet entries must be single characters")
        if len(set(chars)) != len(chars):
            raise InputError("alphabet contains duplicate characters")
        self.chars = chars
        self._to_id = {c: i + 1 for i, c in enumerate(chars)}

    @classmethod
    def default(cls) -> "Alphabet":
        return cls(DEFAULT_CHARS)

    @classmethod
    def from_file(cls, path: str) -> "Alphabet":
        chars = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.rstrip("\n")
                if line == "\\s":  # space cannot survive as a bare line
                    line = " "
                if line == "":
                    continue
                chars.append(line)
        return cls(chars)

    def to_file(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for c in self.chars:
                f.write(("\\s" if c == " " else c) + "\n")

    @property
    def size(self) -> int:
        """Number of output classes, blank included."""
        return len(self.chars) + 1

    def encode(self, textstr: str) -> np.ndarray:
        try:
            ids = [self._to_id[c] for c in textstr]
        except KeyError as exc:
            raise InputError(f"character {exc.args[0]!r} not in alphabet") from exc
        return np.asarray(ids, dtype=np.int64)

    def decode(self, ids) -> str:
        out = []
        for i in np.asarray(ids, dtype=np.int64):
            if i == BLANK:
                raise InputError("blank id in label sequence")
            if not 1 <= i <= len(self.chars):
                raise InputError(f"label id {int(i)} out of range")
            out.append(self.chars[i - 1])
        return "".join(out)

    def collapse(self, frame_ids) -> str:
        """Frame-level ids -> text: drop repeats, then blanks (greedy decoding)."""
        out = []
        prev = -1
        for i in np.asarray(frame_ids, dtype=np.int64):
            if i != prev and i != BLANK:
                out.append(self.chars[i - 1])
            prev = i
        return "".join(out)


def count_adjacent_repeats(ids) -> int:
    """Adjacent equal label pairs; each one needs a separating blank frame."""
    ids = np.asarray(ids)
    if ids.size < 2:
        return 0
    return int(np.sum(ids[1:] == ids[:-1]))


def edit_distance(ref: str, hyp: str) -> int:
    """Levenshtein distance with unit costs."""
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    prev = np.arange(len(hyp) + 1)
    for i, rc in enumerate(ref, start=1):
        cur = np.empty_like(prev)
        cur[0] = i
        for j, hc in enumerate(hyp, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (rc != hc))
        prev = cur
    return int(prev[-1])


def cer(ref: str, hyp: str) -> float:
    """Character error rate: edit distance normalized by reference length."""
    if not ref:
        raise InputError("reference text is empty")
    return edit_distance(ref, hyp) / len(ref)
