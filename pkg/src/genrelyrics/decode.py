"""Joint CTC/attention beam search."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import numeric as nm
from .numeric import Tensor, _log_softmax_np

NEG_INF = -np.inf


class DecodeError(ValueError):
    pass


@dataclass
class DecodeConfig:
    beam: int = 10
    penalty: float = 0.0
    ctc_weight: float = 0.3
    max_len_ratio: float = 1.0

    def __post_init__(self):
        if self.beam < 1:
            raise DecodeError(f"beam must be >= 1, got {self.beam}")
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise DecodeError(f"ctc_weight must be in [0, 1], got {self.ctc_weight}")


# ----------------------------------------------------------------------------
# CTC prefix scoring


@dataclass
class CtcPrefixState:
    """Forward variables of a prefix: log-prob of having emitted it by frame t,
    split into paths ending in a label (``nonblank``) or in blank (``blank``)."""
    nonblank: np.ndarray  # (T,)
    blank: np.ndarray  # (T,)
    score: float = 0.0  # log prefix probability

    @property
    def total(self) -> np.ndarray:
        return np.logaddexp(self.nonblank, self.blank)


class CtcPrefixScorer:
    """Incremental CTC prefix probabilities over frame log-posteriors (T, V)."""

    def __init__(self, logprobs: np.ndarray, blank: int = 0, eos: Optional[int] = None):
        self.x = np.asarray(logprobs, dtype=np.float64)
        self.T, self.V = self.x.shape
        self.blank = blank
        self.eos = eos

    def initial_state(self) -> CtcPrefixState:
        return CtcPrefixState(np.full(self.T, NEG_INF), np.cumsum(self.x[:, self.blank]), 0.0)

    def score(self, prefix: Sequence[int], state: CtcPrefixState,
              candidates: Sequence[int]) -> Tuple[np.ndarray, List[CtcPrefixState]]:
        """Log prefix probability of ``prefix + [c]`` for each candidate ``c``.

        ``prefix`` excludes sos.  For ``c == eos`` the score is the probability
        that the whole output equals ``prefix`` (sum of both endings at the
        last frame).
        """
        cs = np.asarray(candidates, dtype=np.int64)
        n = len(cs)
        xs = self.x[:, cs]  # (T, n)
        r_sum = state.total
        last = prefix[-1] if len(prefix) else None
        # a repeated label can only follow a blank-ending path
        phi = np.repeat(r_sum[:, None], n, axis=1)
        if last is not None:
            same = cs == last
            phi[:, same] = state.blank[:, None]
        r_nb = np.full((self.T, n), NEG_INF)
        r_b = np.full((self.T, n), NEG_INF)
        if len(prefix) == 0:
            r_nb[0] = xs[0]
        psi = r_nb[0].copy()
        for t in range(1, self.T):
            r_nb[t] = np.logaddexp(r_nb[t - 1], phi[t - 1]) + xs[t]
            r_b[t] = np.logaddexp(r_nb[t - 1], r_b[t - 1]) + self.x[t, self.blank]
            psi = np.logaddexp(psi, phi[t - 1] + xs[t])
        if self.eos is not None:
            psi[cs == self.eos] = r_sum[-1]
        states = [CtcPrefixState(r_nb[:, i].copy(), r_b[:, i].copy(), float(psi[i])) for i in range(n)]
        return psi, states


def ctc_prefix_score(ctc_logprobs: np.ndarray, prefix: Sequence[int], next_token: int,
                     state: Optional[CtcPrefixState] = None, blank: int = 0,
                     eos: Optional[int] = None) -> Tuple[float, CtcPrefixState]:
    """Single-candidate convenience wrapper; builds the prefix state if absent."""
    scorer = CtcPrefixScorer(ctc_logprobs, blank, eos)
    if state is None:
        state = scorer.initial_state()
        for i, tok in enumerate(prefix):
            _, (state,) = scorer.score(prefix[:i], state, [tok])
    psi, (new,) = scorer.score(prefix, state, [next_token])
    return float(psi[0]), new


# ----------------------------------------------------------------------------
# beam search


@dataclass
class Hypothesis:
    tokens: List[int]  # starts with sos
    att_logp: float = 0.0
    ctc_state: Optional[CtcPrefixState] = None
    ctc_logp: float = 0.0
    score: float = 0.0
    ended: bool = False

    @property
    def output(self) -> List[int]:
        """Label ids without sos and the terminal eos."""
        return self.tokens[1:-1] if self.ended else self.tokens[1:]

    def sort_key(self):
        # best first: higher score, then shorter, then lexicographically smaller ids
        return (-self.score, len(self.tokens), self.tokens)


@dataclass
class DecodeResult:
    tokens: List[int]
    score: float
    hypotheses: List[Hypothesis] = field(default_factory=list)


def _allowed_tokens(vocab_size: int) -> np.ndarray:
    # every real subword id plus eos; blank (0) and unk (1) are never emitted
    return np.arange(2, vocab_size)


def beam_search(model, H: Tensor, genre=None, cfg: DecodeConfig = DecodeConfig(),
                max_len: Optional[int] = None) -> DecodeResult:
    """Decode one utterance from its encoder output ``H`` of shape (1, T', d)."""
    if H.ndim != 3 or H.shape[0] != 1 or H.shape[1] == 0:
        raise DecodeError(f"beam_search expects a (1, T', d) encoding with T' >= 1, got {H.shape}")
    V = model.config.vocab_size
    sos = eos = model.sos_eos
    T = H.shape[1]
    if max_len is None:
        max_len = max(1, int(cfg.max_len_ratio * T))
    w = cfg.ctc_weight
    cands = _allowed_tokens(V)
    with nm.no_grad():
        use_ctc = w > 0.0
        scorer = None
        if use_ctc:
            ctc_lp = _log_softmax_np(model.ctc_logits(H).data[0], axis=-1)
            scorer = CtcPrefixScorer(ctc_lp, blank=0, eos=eos)
        running = [Hypothesis([sos], ctc_state=scorer.initial_state() if use_ctc else None)]
        ended: List[Hypothesis] = []
        H_lens = np.array([T])
        for step in range(max_len + 1):
            ys = np.array([h.tokens for h in running])
            Hb = Tensor(np.repeat(H.data, len(running), axis=0))
            logits = model.s2s_logits(Hb, np.repeat(H_lens, len(running)), ys, genre).data[:, -1]
            att = _log_softmax_np(logits, axis=-1)
            # at the length limit only eos may follow
            step_cands = cands if step < max_len else np.array([eos])
            expanded: List[Hypothesis] = []
            for h, att_row in zip(running, att):
                if use_ctc:
                    ctc_scores, states = scorer.score(h.tokens[1:], h.ctc_state, step_cands)
                else:
                    ctc_scores, states = np.zeros(len(step_cands)), [None] * len(step_cands)
                for c, cs, st in zip(step_cands, ctc_scores, states):
                    c = int(c)
                    a = h.att_logp + float(att_row[c])
                    toks = h.tokens + [c]
                    n_out = len(toks) - 1
                    score = (1.0 - w) * a + (w * float(cs) if use_ctc else 0.0) + cfg.penalty * n_out
                    expanded.append(Hypothesis(toks, a, st, float(cs), score, ended=(c == eos)))
            expanded.sort(key=Hypothesis.sort_key)
            running = []
            for h in expanded[: cfg.beam]:
                (ended if h.ended else running).append(h)
            if not running:
                break
    if not ended:
        raise DecodeError("beam search produced no finished hypothesis")
    ended.sort(key=Hypothesis.sort_key)
    best = ended[0]
    return DecodeResult(best.output, best.score, ended)


def greedy_search(model, H: Tensor, genre=None, max_len: Optional[int] = None) -> List[int]:
    """Argmax attention decoding over the same token set as :func:`beam_search`."""
    V = model.config.vocab_size
    sos = eos = model.sos_eos
    T = H.shape[1]
    max_len = max(1, T) if max_len is None else max_len
    cands = _allowed_tokens(V)
    ys = [sos]
    with nm.no_grad():
        for _ in range(max_len):
            logits = model.s2s_logits(H, np.array([T]), np.array([ys]), genre).data[0, -1]
            c = int(cands[np.argmax(logits[cands])])
            if c == eos:
                break
            ys.append(c)
    return ys[1:]


def greedy_search_batch(model, H: Tensor, H_lens, genre=None, max_len: Optional[int] = None) -> List[List[int]]:
    """Batched greedy decoding; items finish independently at eos."""
    V = model.config.vocab_size
    sos = eos = model.sos_eos
    B = H.shape[0]
    H_lens = np.asarray(H_lens)
    max_len = int(H_lens.max()) if max_len is None else max_len
    cands = _allowed_tokens(V)
    ys = np.full((B, 1), sos, dtype=np.int64)
    done = np.zeros(B, dtype=bool)
    out: List[List[int]] = [[] for _ in range(B)]
    with nm.no_grad():
        for step in range(max_len):
            logits = model.s2s_logits(H, H_lens, ys, genre).data[:, -1]
            nxt = cands[np.argmax(logits[:, cands], axis=1)]
            for b in range(B):
                if done[b]:
                    continue
                if nxt[b] == eos or step >= H_lens[b]:
                    done[b] = True
                else:
                    out[b].append(int(nxt[b]))
            if done.all():
                break
            ys = np.concatenate([ys, nxt[:, None]], axis=1)
    return out


def transcribe_features(model, feats: np.ndarray, genre=None, cfg: DecodeConfig = DecodeConfig()) -> DecodeResult:
    """Encode one (T, 83) utterance and run joint beam search."""
    with nm.no_grad():
        H, _ = model.encode(feats[None], np.array([feats.shape[0]]), genre)
    return beam_search(model, H, genre, cfg)
