import numpy as np

from genrelyrics import numeric as nm
from genrelyrics.data import GenreClass
from genrelyrics.model import (AdapterPlacement, GenreTransformer, ModelConfig, adapter_param_count,
                               adapter_sites, init_params)

"""
Where adapters go
"""
# Encoder blocks get one adapter after self-attention. Decoder blocks get one
# after source-target attention, plus one after masked self-attention for the
# mha-maskmha placement. Genre placements hold three copies of every adapter,
# one per broad genre class; the shared ablation holds a single copy.
for placement in AdapterPlacement:
    cfg = ModelConfig(vocab_size=50, d_model=16, heads=2, ffn_dim=32, n_enc=2, m_dec=1, adapter_dim=4,
                      placement=placement)
    print(f"{placement.value:12} sites={len(adapter_sites(cfg))} adapter params={adapter_param_count(cfg)}")

# one adapter at the published size: 512*256+256 + 256*512+512
big = ModelConfig(vocab_size=5000, placement="mha")
print("per adapter at d=512, m=256:", adapter_param_count(big) // (3 * len(adapter_sites(big))))

"""
Identity at insertion
"""
# The up-projection starts at zero, so a freshly inserted adapter returns its
# input unchanged and the adapted model reproduces the base model exactly.
base_cfg = ModelConfig(vocab_size=50, d_model=16, heads=2, ffn_dim=32, n_enc=2, m_dec=1, adapter_dim=4)
base = GenreTransformer(base_cfg, seed=1)
ps = init_params(base_cfg.with_placement("mha-maskmha"), seed=1)
for p in base.params:
    ps.param(p.name).assign(p.value.data)
adapted = GenreTransformer(base_cfg.with_placement("mha-maskmha"), ps)

rng = np.random.default_rng(0)
feats, lens, ys = rng.normal(size=(1, 40, 83)), np.array([40]), np.array([[49, 7, 8]])
with nm.no_grad():
    outs = []
    for model in (base, adapted):
        H, hl = model.encode(feats, lens, GenreClass.METAL)
        outs.append(model.s2s_logits(H, hl, ys, GenreClass.METAL).data)
print("max |adapted - base| at init:", np.abs(outs[0] - outs[1]).max())

"""
Genre routing
"""
# Once adapters carry weights, each genre takes its own path through the network.
for p in adapted.params:
    if ".adapter" in p.name:
        p.assign(rng.normal(scale=0.2, size=p.value.shape))
with nm.no_grad():
    for g in GenreClass:
        H, hl = adapted.encode(feats, lens, g)
        print(g.value, np.round(adapted.s2s_logits(H, hl, ys, g).data[0, 0, :4], 3))
