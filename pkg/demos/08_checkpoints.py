import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from genrelyrics.model import ModelConfig, init_params, load_checkpoint, save_checkpoint
from genrelyrics.train import average_checkpoints

"""
Writing and reading a checkpoint
"""
cfg = ModelConfig(vocab_size=20, d_model=8, heads=2, ffn_dim=16, n_enc=1, m_dec=1, adapter_dim=4, placement="shared")
params = init_params(cfg, seed=0)
work = Path(tempfile.mkdtemp())
save_checkpoint(work / "a.ckpt", cfg, params)
raw = (work / "a.ckpt").read_bytes()
print("magic:", raw[:4], " bytes:", len(raw))
cfg_len = struct.unpack("<Q", raw[4:12])[0]
print("embedded config:", raw[12:12 + cfg_len].decode()[:80], "...")
print("stored CRC matches:", struct.unpack("<I", raw[-4:])[0] == zlib.crc32(raw[:-4]))

loaded_cfg, loaded = load_checkpoint(work / "a.ckpt")
print("round trip exact:", loaded_cfg == cfg and all(np.array_equal(loaded[p.name].data, p.value.data)
                                                     for p in params))

"""
Corruption is caught
"""
bad = bytearray(raw)
bad[len(bad) // 2] ^= 0xFF
(work / "bad.ckpt").write_bytes(bytes(bad))
try:
    load_checkpoint(work / "bad.ckpt")
except Exception as exc:
    print(type(exc).__name__ + ":", exc)

"""
Averaging
"""
rng = np.random.default_rng(1)
paths = []
for i in range(3):
    ps = init_params(cfg, seed=i)
    for p in ps:
        p.assign(rng.normal(size=p.value.shape))
    paths.append(work / f"e{i}.ckpt")
    save_checkpoint(paths[-1], cfg, ps)
_, avg = average_checkpoints(paths)
name = "decoder.embed.weight"
manual = np.mean([load_checkpoint(p)[1][name].data for p in paths], axis=0)
print("max deviation from elementwise mean:", np.abs(avg[name].data - manual).max())
