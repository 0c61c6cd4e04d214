import itertools

import numpy as np

from genrelyrics.decode import DecodeConfig, beam_search, ctc_prefix_score, greedy_search
from genrelyrics.loss import ctc_loss
from genrelyrics.model import GenreTransformer, ModelConfig
from genrelyrics.numeric import Tensor, _log_softmax_np

"""
CTC loss against brute force
"""
# Three frames, blank plus two labels. The CTC probability of "1 2" is the sum
# over every frame labelling that collapses to it.
rng = np.random.default_rng(3)
logits = rng.normal(size=(3, 3))
lp = _log_softmax_np(logits, axis=1)


def collapse(path):
    out = [k for k, _ in itertools.groupby(path)]
    return [k for k in out if k != 0]


brute = np.logaddexp.reduce([lp[range(3), list(p)].sum() for p in itertools.product(range(3), repeat=3)
                             if collapse(p) == [1, 2]])
loss, grad = ctc_loss(logits, [1, 2])
print("forward-backward:", loss, " enumeration:", -brute)
print("gradient rows sum to zero:", np.allclose(grad.sum(axis=1), 0))

"""
Prefix scores
"""
# The prefix score of "1" is the probability that the collapsed output starts
# with 1, whatever follows.
prefix_brute = np.logaddexp.reduce([lp[range(3), list(p)].sum() for p in itertools.product(range(3), repeat=3)
                                    if collapse(p)[:1] == [1]])
print("prefix score:", ctc_prefix_score(lp, [], 1)[0], " enumeration:", prefix_brute)

"""
Joint beam search
"""
# A random tiny model stands in for a trained one; the point is the knobs.
model = GenreTransformer(ModelConfig(vocab_size=8, d_model=8, heads=2, ffn_dim=16, n_enc=1, m_dec=1,
                                     adapter_dim=4), seed=5)
H = Tensor(rng.normal(size=(1, 6, 8)))
print("defaults:", DecodeConfig())
for cfg in [DecodeConfig(beam=1, ctc_weight=0.0), DecodeConfig(), DecodeConfig(beam=10, ctc_weight=1.0)]:
    res = beam_search(model, H, cfg=cfg)
    print(f"beam={cfg.beam:2d} ctc_weight={cfg.ctc_weight}: tokens={res.tokens} score={res.score:.3f}")
print("greedy:", greedy_search(model, H))
