"""CTC forward-backward, attention cross-entropy and their interpolation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from . import numeric as nm
from .numeric import Tensor, _log_softmax_np

NEG_INF = -np.inf


class LossError(ValueError):
    pass


class LengthViolation(LossError):
    pass


@dataclass
class LossConfig:
    alpha: float = 0.3
    label_smoothing: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise LossError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise LossError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")


def ctc_min_frames(target: Sequence[int]) -> int:
    """Frames needed to emit ``target``: one per label plus a blank between repeats."""
    target = list(target)
    return len(target) + sum(a == b for a, b in zip(target, target[1:]))


def ctc_loss(logits: np.ndarray, target: Sequence[int], blank: int = 0) -> Tuple[float, np.ndarray]:
    """Negative log-likelihood of ``target`` under CTC and its gradient w.r.t. ``logits``.

    logits: (T, V) unnormalised scores.  Returns ``(loss, dloss/dlogits)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    T, V = logits.shape
    target = [int(t) for t in target]
    if ctc_min_frames(target) > T:
        raise LengthViolation(f"length violation: target of {len(target)} labels needs "
                              f"{ctc_min_frames(target)} frames, only {T} available")
    if not np.all(np.isfinite(logits)):
        # let the caller see a non-finite loss rather than a spurious length error
        return float("nan"), np.full_like(logits, np.nan)
    logp = _log_softmax_np(logits, axis=1)
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    S = len(ext)
    # transition s-2 -> s allowed for non-blank labels differing from ext[s-2]
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = logp[0, ext[0]]
    if S > 1:
        alpha[0, 1] = logp[0, ext[1]]
    for t in range(1, T):
        prev = alpha[t - 1]
        a = prev.copy()
        a[1:] = np.logaddexp(a[1:], prev[:-1])
        a[2:] = np.where(skip[2:], np.logaddexp(a[2:], prev[:-2]), a[2:])
        alpha[t] = a + logp[t, ext]

    # beta[t, s]: log-prob of emitting the remainder after frame t, given state s at t
    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + logp[t + 1, ext]
        b = nxt.copy()
        b[:-1] = np.logaddexp(b[:-1], nxt[1:])
        b[:-2] = np.where(skip[2:], np.logaddexp(b[:-2], nxt[2:]), b[:-2])
        beta[t] = b

    ll = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2]) if S > 1 else alpha[T - 1, 0]
    if not np.isfinite(ll):
        raise LengthViolation("length violation: target unreachable in the available frames")
    ab = alpha + beta
    occ = np.full((T, V), NEG_INF)
    for s in range(S):
        occ[:, ext[s]] = np.logaddexp(occ[:, ext[s]], ab[:, s])
    grad = np.exp(logp) - np.exp(occ - ll)
    return float(-ll), grad


def ctc_loss_batch(logits: Tensor, lens, targets: np.ndarray, target_lens, blank: int = 0) -> Tensor:
    """Per-utterance CTC losses (B,) for padded (B, T, V) logits."""
    data = logits.data
    B = data.shape[0]
    losses = np.zeros(B)
    grads = np.zeros_like(data)
    for b in range(B):
        T, L = int(lens[b]), int(target_lens[b])
        losses[b], grads[b, :T] = ctc_loss(data[b, :T], targets[b, :L], blank)

    def backward(g):
        return (grads * g[:, None, None],)

    return nm.custom(losses, (logits,), backward)


def s2s_loss_batch(logits: Tensor, targets: np.ndarray, ignore_id: int = -1,
                   label_smoothing: float = 0.0) -> Tensor:
    """Per-utterance mean token cross-entropy (B,) ignoring ``ignore_id`` positions."""
    data = logits.data
    B, L, V = data.shape
    targets = np.asarray(targets)
    valid = targets != ignore_id
    counts = valid.sum(axis=1)
    if (counts == 0).any():
        raise LossError("every target position is ignored for at least one utterance")
    logp = _log_softmax_np(data, axis=-1)
    q = np.zeros_like(data)
    bi, li = np.nonzero(valid)
    q[bi, li, targets[bi, li]] = 1.0 - label_smoothing
    q[valid] += label_smoothing / V
    tok_loss = -(q * logp).sum(axis=-1)
    losses = tok_loss.sum(axis=1) / counts
    dlogits = (np.exp(logp) * valid[..., None] - q) / counts[:, None, None]

    def backward(g):
        return (dlogits * g[:, None, None],)

    return nm.custom(losses, (logits,), backward)


def s2s_loss(logits, target_out: Sequence[int], ignore_id: int = -1, label_smoothing: float = 0.0) -> float:
    """Mean cross-entropy for a single (L, V) sequence."""
    lg = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    out = s2s_loss_batch(Tensor(lg[None]), np.asarray(target_out)[None], ignore_id, label_smoothing)
    return float(out.data[0])


def joint_loss(l_ctc, l_s2s, cfg: LossConfig = LossConfig()):
    """``alpha * ctc + (1 - alpha) * s2s`` for floats or tensors."""
    a = cfg.alpha
    if isinstance(l_ctc, Tensor) or isinstance(l_s2s, Tensor):
        return nm.add(nm.scale(nm.Tensor(l_ctc) if not isinstance(l_ctc, Tensor) else l_ctc, a),
                      nm.scale(nm.Tensor(l_s2s) if not isinstance(l_s2s, Tensor) else l_s2s, 1.0 - a))
    return a * l_ctc + (1.0 - a) * l_s2s


def utterance_losses(model, batch, cfg: LossConfig = LossConfig(), rng=None) -> Tuple[Tensor, Tensor]:
    """Per-utterance (CTC, S2S) loss vectors for one batch."""
    from .model import decoder_io

    ctc_logits, s2s_logits, lens = model.forward(batch, rng)
    _, ys_out = decoder_io(batch.tokens, batch.token_lens, model.sos_eos)
    ctc = ctc_loss_batch(ctc_logits, lens, batch.tokens, batch.token_lens)
    s2s = s2s_loss_batch(s2s_logits, ys_out, label_smoothing=cfg.label_smoothing)
    return ctc, s2s


def batch_loss(model, batch, cfg: LossConfig = LossConfig(), rng=None) -> Tuple[Tensor, dict]:
    """Joint objective averaged over utterances, plus its float components."""
    ctc, s2s = utterance_losses(model, batch, cfg, rng)
    l_ctc, l_s2s = nm.mean(ctc), nm.mean(s2s)
    total = joint_loss(l_ctc, l_s2s, cfg)
    return total, {"ctc": l_ctc.item(), "s2s": l_s2s.item(), "loss": total.item()}
