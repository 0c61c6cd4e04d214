import tempfile
from pathlib import Path

import numpy as np

from genrelyrics.data import Sample, synth_corpus
from genrelyrics.features import CmvnStats, apply_cmvn, compute_features, read_wav
from genrelyrics.model import GenreTransformer, ModelConfig, load_checkpoint
from genrelyrics.tokenizer import train_bpe
from genrelyrics.train import (TrainConfig, adapter_phase_census, freeze_for_adapter_tuning, noam_lr, train_loop,
                               validate)

"""
The learning-rate schedule
"""
# Linear warmup, then inverse square-root decay; the peak sits at the warmup step.
for step in (1, 100, 200, 400, 800):
    print(f"step {step:4d}: lr = {noam_lr(step, 32, 200, 0.5):.2e}")

"""
A small synthetic corpus
"""
work = Path(tempfile.mkdtemp())
_, utts = synth_corpus(1, 40, work / "corpus")
feats = [compute_features(read_wav(u.audio)).frames for u in utts]
cmvn = CmvnStats.from_matrices(feats)
bpe = train_bpe([u.text for u in utts], 64)
samples = [Sample(u.id, apply_cmvn(f, cmvn), bpe.encode(u.text), u.genre) for u, f in zip(utts, feats)]
train, dev = samples[:32], samples[32:]

"""
Phase one: the base model
"""
cfg = ModelConfig(vocab_size=bpe.vocab_size, d_model=32, heads=4, ffn_dim=64, n_enc=2, m_dec=2, adapter_dim=16,
                  dropout=0.0)
base = train_loop(TrainConfig(warmup=100, lr_scale=0.5, epochs=6, max_bins=40000), train, dev,
                  GenreTransformer(cfg, seed=0), work / "base", detokenize=bpe.decode)
for rec in base.metrics:
    print(f"epoch {rec['epoch']}: train {rec['train_loss']:.3f}  dev {rec['dev_loss']:.3f}")
print("averaged epochs:", base.best_epochs)

"""
Phase two: genre adapters on a frozen base
"""
config, params = load_checkpoint(work / "base" / "averaged.ckpt")
frozen = {p.name: p.value.data.copy() for p in params}
strategy = freeze_for_adapter_tuning(params, config, "mha")
n_trainable = sum(p.value.data.size for p in params.trainable())
print(f"trainable {n_trainable} of {sum(p.value.data.size for p in params)} "
      f"(closed form {adapter_phase_census(strategy.config)})")

model = GenreTransformer(strategy.config, params)
print("dev loss before any adapter step:", round(validate(model, dev)[0], 6),
      " base:", round(validate(GenreTransformer(base.config, base.params), dev)[0], 6))
adapted = train_loop(TrainConfig(warmup=100, lr_scale=0.2, epochs=3, max_bins=40000, phase="adapter"), train, dev,
                     model, work / "adapt", detokenize=bpe.decode)
untouched = all(np.array_equal(params[n].data, v) for n, v in frozen.items()
                if not params.param(n).trainable)
print("frozen weights untouched:", untouched)
print("dev loss per adapter epoch:", [round(r["dev_loss"], 3) for r in adapted.metrics])
print("dev loss of the averaged adapter model:",
      round(validate(GenreTransformer(adapted.config, adapted.params), dev)[0], 3))
# With a base that has already seen every genre and only eight dev lines, the
# adapters have little to add here. tests/test_acceptance.py measures the
# clearer case: a base pretrained on pop only, adapted on a genre mix.
