"""Word error rate and per-genre score reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class WerResult:
    substitutions: int
    deletions: int
    insertions: int
    ref_words: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / self.ref_words if self.ref_words else 0.0

    def __add__(self, other: "WerResult") -> "WerResult":
        return WerResult(self.substitutions + other.substitutions, self.deletions + other.deletions,
                         self.insertions + other.insertions, self.ref_words + other.ref_words)

    def to_dict(self) -> dict:
        return {**asdict(self), "errors": self.errors, "wer": self.wer}


ZERO = WerResult(0, 0, 0, 0)


def align_counts(ref: Sequence, hyp: Sequence) -> Tuple[int, int, int]:
    """(S, D, I) of a minimum-cost unit-cost alignment.

    Backtrace prefers substitution/match, then deletion, then insertion.
    """
    n, m = len(ref), len(hyp)
    # plain lists: much faster than numpy element access for line-sized inputs
    d = [list(range(m + 1))] + [[i] + [0] * m for i in range(1, n + 1)]
    for i in range(1, n + 1):
        prev, row, r = d[i - 1], d[i], ref[i - 1]
        for j in range(1, m + 1):
            row[j] = min(prev[j - 1] + (r != hyp[j - 1]), prev[j] + 1, row[j - 1] + 1)
    s = dl = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            dl += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return int(s), dl, ins


def wer(ref: str, hyp: str) -> WerResult:
    ref_w = ref.lower().split()
    if not ref_w:
        raise ScoringError("reference is empty")
    s, d, i = align_counts(ref_w, hyp.lower().split())
    return WerResult(s, d, i, len(ref_w))


def corpus_wer(pairs: Iterable[Tuple[str, str]]) -> WerResult:
    """Sum of errors over sum of reference words."""
    total = ZERO
    for ref, hyp in pairs:
        total = total + wer(ref, hyp)
    return total


@dataclass
class ScoreReport:
    overall: WerResult
    per_genre: Dict[str, WerResult]
    per_utterance: Dict[str, WerResult]
    missing: List[str]

    def mean_utterance_wer(self, ids: Optional[Iterable[str]] = None) -> float:
        keys = list(self.per_utterance) if ids is None else list(ids)
        return float(np.mean([self.per_utterance[k].wer for k in keys])) if keys else 0.0

    def to_json(self) -> dict:
        return {
            "overall": self.overall.to_dict(),
            "overall_mean_utterance_wer": self.mean_utterance_wer(),
            "per_genre": {g: r.to_dict() for g, r in self.per_genre.items()},
            "missing": self.missing,
        }

    def to_text(self) -> str:
        rows = [("overall", self.overall)] + list(self.per_genre.items())
        lines = [f"{'set':<10}{'words':>8}{'sub':>6}{'del':>6}{'ins':>6}{'WER%':>9}"]
        for name, r in rows:
            lines.append(f"{name:<10}{r.ref_words:>8}{r.substitutions:>6}{r.deletions:>6}"
                         f"{r.insertions:>6}{100 * r.wer:>9.2f}")
        if self.missing:
            lines.append(f"missing hypotheses: {len(self.missing)}")
        return "\n".join(lines) + "\n"


def score(refs: Dict[str, Tuple[str, str]], hyps: Dict[str, str], strict: bool = False) -> ScoreReport:
    """Score ``hyps[id]`` against ``refs[id] = (text, genre)``.

    Missing hypotheses count as all-deletion lines unless ``strict``.
    Per-genre rows appear in POP, METAL, HIPHOP order for genres present.
    """
    missing = [k for k in refs if k not in hyps]
    if missing and strict:
        raise ScoringError(f"{len(missing)} reference ids lack hypotheses, e.g. {missing[:3]}")
    per_utt, per_genre = {}, {}
    overall = ZERO
    for uid, (text, genre) in refs.items():
        r = wer(text, hyps.get(uid, ""))
        per_utt[uid] = r
        per_genre[genre] = per_genre.get(genre, ZERO) + r
        overall = overall + r
    order = {"pop": 0, "metal": 1, "hiphop": 2}
    per_genre = dict(sorted(per_genre.items(), key=lambda kv: (order.get(kv[0], 9), kv[0])))
    return ScoreReport(overall, per_genre, per_utt, missing)
