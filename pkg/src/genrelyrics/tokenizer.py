"""Byte-pair-encoding subword model for lyric lines."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

BOUNDARY = "▁"  # word-boundary marker, prepended to word-initial symbols
BLANK, UNK = "<blank>", "<unk>"
SOS_EOS = "<sos/eos>"
BLANK_ID, UNK_ID = 0, 1
N_SPECIALS = 3

_PUNCT = re.compile(r"[^\w\s']|_", flags=re.UNICODE)


class TokenizerError(ValueError):
    pass


def normalize(text: str) -> str:
    """Lowercase, drop punctuation except apostrophes, collapse whitespace."""
    return " ".join(_PUNCT.sub(" ", text.lower()).split())


def _word_symbols(word: str) -> List[str]:
    return [BOUNDARY + word[0]] + list(word[1:])


@dataclass
class BpeModel:
    merges: List[Tuple[str, str]]
    vocab: Dict[str, int]
    id_to_token: List[str] = field(init=False, repr=False)

    def __post_init__(self):
        ids = sorted(self.vocab.values())
        if ids != list(range(len(ids))):
            raise TokenizerError("vocabulary ids must be dense 0..V-1")
        self.id_to_token = [""] * len(ids)
        for tok, i in self.vocab.items():
            self.id_to_token[i] = tok
        if (self.id_to_token[BLANK_ID], self.id_to_token[UNK_ID], self.id_to_token[-1]) != (BLANK, UNK, SOS_EOS):
            raise TokenizerError("special tokens must sit at blank=0, unk=1, sos/eos=V-1")
        self._ranks = {pair: r for r, pair in enumerate(self.merges)}

    @property
    def vocab_size(self) -> int:
        return len(self.id_to_token)

    @property
    def blank_id(self) -> int:
        return BLANK_ID

    @property
    def unk_id(self) -> int:
        return UNK_ID

    @property
    def sos_eos_id(self) -> int:
        return self.vocab_size - 1

    def _encode_word(self, word: str) -> List[str]:
        syms = _word_symbols(word)
        while len(syms) > 1:
            best, best_rank = -1, None
            for i in range(len(syms) - 1):
                r = self._ranks.get((syms[i], syms[i + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = i, r
            if best < 0:
                break
            syms[best:best + 2] = [syms[best] + syms[best + 1]]
        return syms

    def encode(self, text: str) -> List[int]:
        out = []
        for word in normalize(text).split():
            for s in self._encode_word(word):
                out.append(self.vocab.get(s, UNK_ID))
        return out

    def decode(self, ids: Sequence[int]) -> str:
        parts = []
        for i in ids:
            i = int(i)
            if not 0 <= i < self.vocab_size:
                raise TokenizerError(f"token id {i} outside [0, {self.vocab_size})")
            tok = self.id_to_token[i]
            if i == UNK_ID:
                # word-boundary information of unknown symbols is lost
                parts.append(UNK)
            elif i in (BLANK_ID, self.sos_eos_id):
                raise TokenizerError(f"special id {i} ({tok}) cannot be decoded to text")
            else:
                parts.append(tok.replace(BOUNDARY, " "))
        return " ".join("".join(parts).split())

    # serialisation -------------------------------------------------------

    def save(self, path) -> None:
        lines = [f"bpe-v1 {self.vocab_size}"]
        lines += [f"{i}\t{t}" for i, t in enumerate(self.id_to_token)]
        lines.append("#merges")
        lines += [f"{a}\t{b}" for a, b in self.merges]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BpeModel":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        head = lines[0].split()
        if len(head) != 2 or head[0] != "bpe-v1":
            raise TokenizerError(f"{path}: not a bpe-v1 model file")
        n = int(head[1])
        vocab = {}
        for line in lines[1:1 + n]:
            i, tok = line.split("\t", 1)
            vocab[tok] = int(i)
        if lines[1 + n] != "#merges":
            raise TokenizerError(f"{path}: expected '#merges' after {n} vocab lines")
        merges = [tuple(l.split("\t", 1)) for l in lines[2 + n:] if l]
        return cls(merges, vocab)


def train_bpe(corpus: Sequence[str], vocab_size: int) -> BpeModel:
    """Greedy most-frequent-pair merging, ties broken lexicographically.

    Stops when ``vocab_size`` tokens exist or no adjacent pair occurs twice.
    """
    if not corpus:
        raise TokenizerError("cannot train BPE on an empty corpus")
    word_counts = Counter(w for line in corpus for w in normalize(line).split())
    if not word_counts:
        raise TokenizerError("corpus contains no words after normalisation")
    words = {w: _word_symbols(w) for w in word_counts}
    inventory = sorted({s for syms in words.values() for s in syms})
    if vocab_size < len(inventory) + N_SPECIALS:
        raise TokenizerError(
            f"vocab_size {vocab_size} is below the {len(inventory)} initial symbols + {N_SPECIALS} specials")
    tokens = [BLANK, UNK] + inventory
    known = set(tokens)
    merges: List[Tuple[str, str]] = []
    while len(tokens) + 1 < vocab_size:
        pairs: Counter = Counter()
        for w, syms in words.items():
            c = word_counts[w]
            for a, b in zip(syms, syms[1:]):
                pairs[(a, b)] += c
        if not pairs:
            break
        best_count = max(pairs.values())
        if best_count < 2:
            break
        pair = min(p for p, c in pairs.items() if c == best_count)
        merges.append(pair)
        merged = pair[0] + pair[1]
        for w, syms in words.items():
            i, out = 0, []
            while i < len(syms):
                if i + 1 < len(syms) and (syms[i], syms[i + 1]) == pair:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            words[w] = out
        if merged not in known:
            known.add(merged)
            tokens.append(merged)
    tokens.append(SOS_EOS)
    return BpeModel(merges, {t: i for i, t in enumerate(tokens)})
