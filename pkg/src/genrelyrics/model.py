"""Genre-conditioned transformer with CTC and attention heads.

Encoder block:  self-MHA -> genre adapter -> FFN
Decoder block:  masked self-MHA -> [adapter A] -> source-target MHA -> [adapter B] -> FFN

Residual connection and layer norm wrap each MHA/FFN sublayer (post-norm by
default).  Adapters carry their own skip connection and no normalisation.
"""

from __future__ import annotations

import enum
import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import numeric as nm
from .data import GENRES, Batch, GenreClass
from .features import FEAT_DIM
from .numeric import ModelParams, Tensor

MAGIC = b"lyk1"


class ModelError(ValueError):
    pass


class AdapterPlacement(str, enum.Enum):
    NONE = "none"
    GENRE_MHA = "mha"
    GENRE_MHA_MASKMHA = "mha-maskmha"
    SHARED_ABLATION = "shared"

    @property
    def has_adapters(self) -> bool:
        return self is not AdapterPlacement.NONE

    @property
    def has_site_a(self) -> bool:
        return self is AdapterPlacement.GENRE_MHA_MASKMHA

    @property
    def shared(self) -> bool:
        return self is AdapterPlacement.SHARED_ABLATION


@dataclass
class ModelConfig:
    vocab_size: int = 5000
    d_model: int = 512
    heads: int = 8
    ffn_dim: int = 2048
    n_enc: int = 12
    m_dec: int = 6
    adapter_dim: int = 256
    placement: AdapterPlacement = AdapterPlacement.NONE
    norm_style: str = "post"
    dropout: float = 0.1
    feat_dim: int = FEAT_DIM
    ln_eps: float = 1e-12

    def __post_init__(self):
        self.placement = AdapterPlacement(self.placement)
        if self.d_model % self.heads:
            raise ModelError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if not self.adapter_dim < self.d_model:
            raise ModelError(f"adapter_dim={self.adapter_dim} must be smaller than d_model={self.d_model}")
        if self.norm_style not in ("post", "pre"):
            raise ModelError(f"norm_style must be 'post' or 'pre', got {self.norm_style!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["placement"] = self.placement.value
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def with_placement(self, placement) -> "ModelConfig":
        return ModelConfig.from_dict({**self.to_dict(), "placement": AdapterPlacement(placement).value})

    @property
    def sublayer_feat_dim(self) -> int:
        return _conv_out(_conv_out(self.feat_dim))


def _conv_out(n: int) -> int:
    return (n - 3) // 2 + 1


def subsampled_length(T) -> np.ndarray:
    """Frames left after the two kernel-3 stride-2 convolutions."""
    T = np.asarray(T)
    return ((T - 1) // 2 - 1) // 2


def positional_encoding(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    div = np.power(10000.0, np.arange(0, d, 2) / d)
    pe = np.zeros((length, d))
    pe[:, 0::2] = np.sin(pos / div)
    pe[:, 1::2] = np.cos(pos / div[: d // 2])
    return pe


# ----------------------------------------------------------------------------
# parameter construction


def adapter_sites(config: ModelConfig) -> List[str]:
    if not config.placement.has_adapters:
        return []
    sites = [f"encoder.block{i}.adapter" for i in range(config.n_enc)]
    for i in range(config.m_dec):
        if config.placement.has_site_a:
            sites.append(f"decoder.block{i}.adapter_a")
        sites.append(f"decoder.block{i}.adapter_b")
    return sites


def adapter_sets(config: ModelConfig) -> List[str]:
    return ["shared"] if config.placement.shared else [g.value for g in GENRES]


def adapter_param_count(config: ModelConfig) -> int:
    d, m = config.d_model, config.adapter_dim
    return len(adapter_sets(config)) * len(adapter_sites(config)) * (d * m + m + m * d + d)


def _xavier(rng, fan_in, fan_out, shape):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def _linear_params(ps: ModelParams, rng, prefix: str, din: int, dout: int) -> None:
    ps.create(prefix + ".weight", _xavier(rng, din, dout, (din, dout)))
    ps.create(prefix + ".bias", np.zeros(dout))


def _norm_params(ps: ModelParams, prefix: str, d: int) -> None:
    ps.create(prefix + ".gain", np.ones(d))
    ps.create(prefix + ".bias", np.zeros(d))


def _attn_params(ps, rng, prefix, d):
    for n in ("q", "k", "v", "o"):
        _linear_params(ps, rng, f"{prefix}.{n}", d, d)


def init_base_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Randomly initialised base model (no adapter parameters)."""
    rng = np.random.default_rng(seed)
    d = config.d_model
    ps = ModelParams()
    ps.create("embed.conv1.weight", _xavier(rng, 9, 9 * d, (3, 3, 1, d)))
    ps.create("embed.conv1.bias", np.zeros(d))
    ps.create("embed.conv2.weight", _xavier(rng, 9 * d, 9 * d, (3, 3, d, d)))
    ps.create("embed.conv2.bias", np.zeros(d))
    _linear_params(ps, rng, "embed.out", d * config.sublayer_feat_dim, d)
    for i in range(config.n_enc):
        p = f"encoder.block{i}"
        _attn_params(ps, rng, p + ".self_attn", d)
        _norm_params(ps, p + ".norm1", d)
        _linear_params(ps, rng, p + ".ffn.w1", d, config.ffn_dim)
        _linear_params(ps, rng, p + ".ffn.w2", config.ffn_dim, d)
        _norm_params(ps, p + ".norm2", d)
    if config.norm_style == "pre":
        _norm_params(ps, "encoder.after_norm", d)
    ps.create("decoder.embed.weight", rng.normal(0.0, d ** -0.5, size=(config.vocab_size, d)))
    for i in range(config.m_dec):
        p = f"decoder.block{i}"
        _attn_params(ps, rng, p + ".self_attn", d)
        _norm_params(ps, p + ".norm1", d)
        _attn_params(ps, rng, p + ".src_attn", d)
        _norm_params(ps, p + ".norm2", d)
        _linear_params(ps, rng, p + ".ffn.w1", d, config.ffn_dim)
        _linear_params(ps, rng, p + ".ffn.w2", config.ffn_dim, d)
        _norm_params(ps, p + ".norm3", d)
    if config.norm_style == "pre":
        _norm_params(ps, "decoder.after_norm", d)
    _linear_params(ps, rng, "ctc", d, config.vocab_size)
    _linear_params(ps, rng, "output", d, config.vocab_size)
    return ps


def add_adapter_params(ps: ModelParams, config: ModelConfig, seed: int = 0) -> ModelParams:
    """Append fresh adapters: random down-projection, all-zero up-projection.

    The zero up-projection makes every adapter an exact identity at
    insertion; the random down-projection keeps the up-projection's gradient
    non-zero from the first step.
    """
    rng = np.random.default_rng(seed)
    d, m = config.d_model, config.adapter_dim
    for site in adapter_sites(config):
        for s in adapter_sets(config):
            _linear_params(ps, rng, f"{site}.{s}.down", d, m)
            ps.create(f"{site}.{s}.up.weight", np.zeros((m, d)))
            ps.create(f"{site}.{s}.up.bias", np.zeros(d))
    return ps


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    ps = init_base_params(config, seed)
    return add_adapter_params(ps, config, seed + 1)


def is_adapter_param(name: str) -> bool:
    return ".adapter" in name


def is_norm_param(name: str) -> bool:
    return ".norm" in name or name.startswith(("encoder.after_norm", "decoder.after_norm"))


def is_src_attn_param(name: str) -> bool:
    return name.startswith("decoder.") and ".src_attn." in name


# ----------------------------------------------------------------------------
# forward computation


def multi_head_attention(ps: ModelParams, prefix: str, x: Tensor, mem: Tensor, mask: np.ndarray,
                         heads: int, rng=None, p_drop: float = 0.0, weights_out: Optional[list] = None) -> Tensor:
    """Scaled dot-product attention; ``mask`` is True where a key is hidden."""
    B, L, d = x.shape
    S = mem.shape[1]
    dk = d // heads

    def proj(inp, n, length):
        y = nm.linear(inp, ps[f"{prefix}.{n}.weight"], ps[f"{prefix}.{n}.bias"])
        return nm.transpose(nm.reshape(y, (B, length, heads, dk)), (0, 2, 1, 3))

    q, k, v = proj(x, "q", L), proj(mem, "k", S), proj(mem, "v", S)
    scores = nm.scale(nm.matmul(q, nm.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dk))
    att = nm.softmax(nm.masked_fill(scores, mask, -np.inf), axis=-1)
    if weights_out is not None:
        weights_out.append(att.data)
    att = nm.dropout(att, p_drop, rng)
    ctx = nm.reshape(nm.transpose(nm.matmul(att, v), (0, 2, 1, 3)), (B, L, d))
    return nm.linear(ctx, ps[f"{prefix}.o.weight"], ps[f"{prefix}.o.bias"])


class GenreTransformer:
    """Functional model over a :class:`ModelParams` store.

    Passing ``rng`` to the forward methods enables dropout (training mode);
    ``rng=None`` is deterministic evaluation.
    """

    def __init__(self, config: ModelConfig, params: Optional[ModelParams] = None, seed: int = 0):
        self.config = config
        self.params = init_params(config, seed) if params is None else params
        self.attn_probe: Optional[list] = None

    # building blocks ---------------------------------------------------

    def _ln(self, x, prefix):
        return nm.layer_norm(x, self.params[prefix + ".gain"], self.params[prefix + ".bias"], self.config.ln_eps)

    def _lin(self, x, prefix):
        return nm.linear(x, self.params[prefix + ".weight"], self.params[prefix + ".bias"])

    def _drop(self, x, rng):
        return nm.dropout(x, self.config.dropout, rng)

    def _ffn(self, x, prefix, rng):
        return self._lin(self._drop(nm.relu(self._lin(x, prefix + ".w1")), rng), prefix + ".w2")

    def _sublayer(self, x, norm, fn, rng):
        if self.config.norm_style == "post":
            return self._ln(nm.add(x, self._drop(fn(x), rng)), norm)
        return nm.add(x, self._drop(fn(self._ln(x, norm)), rng))

    def _attn(self, prefix, x, mem, mask, rng):
        return multi_head_attention(self.params, prefix, x, mem, mask, self.config.heads, rng,
                                    self.config.dropout if rng is not None else 0.0, self.attn_probe)

    def adapter_forward(self, h: Tensor, site: str, genre) -> Tensor:
        """``h + Up(ReLU(Down(h)))`` with the genre's (or the shared) parameter set."""
        if not self.config.placement.has_adapters:
            raise ModelError("adapter_forward called on a model without adapters")
        if site not in adapter_sites(self.config):
            raise ModelError(f"adapter site {site!r} does not exist under placement {self.config.placement.value}")
        try:
            genre = GenreClass.parse(genre)
        except ValueError as exc:
            raise ModelError(str(exc)) from None
        key = "shared" if self.config.placement.shared else genre.value
        prefix = f"{site}.{key}"
        z = nm.relu(self._lin(h, prefix + ".down"))
        return nm.add(h, self._lin(z, prefix + ".up"))

    # embeddings --------------------------------------------------------

    def poly_embed(self, X, feat_lens=None, rng=None) -> Tuple[Tensor, np.ndarray]:
        """Conv subsampling of (B, T, 83) features to (B, T', d) plus positional encoding."""
        X = X if isinstance(X, Tensor) else Tensor(X)
        B, T, F = X.shape
        if F != self.config.feat_dim:
            raise ModelError(f"expected {self.config.feat_dim}-dim features, got {F}")
        if subsampled_length(T) < 1:
            raise ModelError(f"need at least 7 frames for subsampling, got {T}")
        d = self.config.d_model
        h = nm.reshape(X, (B, T, F, 1))
        h = nm.relu(nm.conv2d(h, self.params["embed.conv1.weight"], self.params["embed.conv1.bias"]))
        h = nm.relu(nm.conv2d(h, self.params["embed.conv2.weight"], self.params["embed.conv2.bias"]))
        _, Tp, Fp, C = h.shape
        h = self._lin(nm.reshape(h, (B, Tp, Fp * C)), "embed.out")
        h = nm.add(nm.scale(h, math.sqrt(d)), Tensor(positional_encoding(Tp, d)))
        lens = np.full(B, Tp) if feat_lens is None else subsampled_length(np.asarray(feat_lens))
        return self._drop(h, rng), lens

    def lyrics_embed(self, ys, rng=None) -> Tensor:
        ys = np.asarray(ys, dtype=np.int64)
        if ys.ndim == 1:
            ys = ys[None]
        V, d = self.config.vocab_size, self.config.d_model
        if ys.size and (ys.min() < 0 or ys.max() >= V):
            raise ModelError(f"token ids must lie in [0, {V})")
        e = nm.embedding(self.params["decoder.embed.weight"], ys)
        e = nm.add(nm.scale(e, math.sqrt(d)), Tensor(positional_encoding(ys.shape[1], d)))
        return self._drop(e, rng)

    # encoder / decoder -------------------------------------------------

    def encoder_forward(self, Xe: Tensor, lens, genre=None, rng=None) -> Tensor:
        cfg = self.config
        B, T, _ = Xe.shape
        key_pad = (np.arange(T)[None, :] >= np.asarray(lens)[:, None])[:, None, None, :]
        h = Xe
        for i in range(cfg.n_enc):
            p = f"encoder.block{i}"
            h = self._sublayer(h, p + ".norm1", lambda x: self._attn(p + ".self_attn", x, x, key_pad, rng), rng)
            if cfg.placement.has_adapters:
                h = self.adapter_forward(h, p + ".adapter", genre)
            h = self._sublayer(h, p + ".norm2", lambda x: self._ffn(x, p + ".ffn", rng), rng)
        if cfg.norm_style == "pre":
            h = self._ln(h, "encoder.after_norm")
        return h

    def decoder_forward(self, H: Tensor, H_lens, Ye: Tensor, genre=None, rng=None) -> Tensor:
        cfg = self.config
        B, L, _ = Ye.shape
        if H.shape[0] != B or H.shape[2] != Ye.shape[2]:
            raise ModelError(f"encoder output {H.shape} incompatible with decoder input {Ye.shape}")
        causal = np.triu(np.ones((L, L), dtype=bool), k=1)[None, None]
        mem_pad = (np.arange(H.shape[1])[None, :] >= np.asarray(H_lens)[:, None])[:, None, None, :]
        o = Ye
        for i in range(cfg.m_dec):
            p = f"decoder.block{i}"
            o = self._sublayer(o, p + ".norm1", lambda x: self._attn(p + ".self_attn", x, x, causal, rng), rng)
            if cfg.placement.has_site_a:
                o = self.adapter_forward(o, p + ".adapter_a", genre)
            o = self._sublayer(o, p + ".norm2", lambda x: self._attn(p + ".src_attn", x, H, mem_pad, rng), rng)
            if cfg.placement.has_adapters:
                o = self.adapter_forward(o, p + ".adapter_b", genre)
            o = self._sublayer(o, p + ".norm3", lambda x: self._ffn(x, p + ".ffn", rng), rng)
        if cfg.norm_style == "pre":
            o = self._ln(o, "decoder.after_norm")
        return o

    # heads -------------------------------------------------------------

    def encode(self, feats, feat_lens, genre=None, rng=None) -> Tuple[Tensor, np.ndarray]:
        Xe, lens = self.poly_embed(feats, feat_lens, rng)
        return self.encoder_forward(Xe, lens, genre, rng), lens

    def ctc_logits(self, H: Tensor) -> Tensor:
        return self._lin(H, "ctc")

    def s2s_logits(self, H: Tensor, H_lens, ys_in, genre=None, rng=None) -> Tensor:
        O = self.decoder_forward(H, H_lens, self.lyrics_embed(ys_in, rng), genre, rng)
        return self._lin(O, "output")

    def forward(self, batch: Batch, rng=None) -> Tuple[Tensor, Tensor, np.ndarray]:
        """(CTC logits (B, T', V), S2S logits (B, L+1, V), encoder lengths)."""
        H, lens = self.encode(batch.feats, batch.feat_lens, batch.genre, rng)
        ys_in, _ = decoder_io(batch.tokens, batch.token_lens, self.sos_eos)
        return self.ctc_logits(H), self.s2s_logits(H, lens, ys_in, batch.genre, rng), lens

    @property
    def sos_eos(self) -> int:
        return self.config.vocab_size - 1


def decoder_io(tokens: np.ndarray, token_lens, sos_eos: int, ignore_id: int = -1) -> Tuple[np.ndarray, np.ndarray]:
    """Teacher-forcing pairs: input ``[sos] + y`` (pad = eos), target ``y + [eos]`` (pad = ignore)."""
    tokens = np.asarray(tokens)
    B, L = tokens.shape
    ys_in = np.full((B, L + 1), sos_eos, dtype=np.int64)
    ys_out = np.full((B, L + 1), ignore_id, dtype=np.int64)
    for b, n in enumerate(np.asarray(token_lens)):
        ys_in[b, 1:n + 1] = tokens[b, :n]
        ys_out[b, :n] = tokens[b, :n]
        ys_out[b, n] = sos_eos
    return ys_in, ys_out


# ----------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, config: ModelConfig, params: ModelParams) -> None:
    """Write ``lyk1`` | config JSON | count | records | CRC-32, atomically."""
    body = bytearray(MAGIC)
    cfg = config.canonical_json().encode("utf-8")
    body += struct.pack("<Q", len(cfg)) + cfg
    body += struct.pack("<Q", len(params))
    for p in params:
        name = p.name.encode("utf-8")
        arr = np.ascontiguousarray(p.value.data, dtype="<f8")
        body += struct.pack("<Q", len(name)) + name
        body += struct.pack("<Q", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
        body += arr.tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(bytes(body))
    tmp.replace(path)


def load_checkpoint(path) -> Tuple[ModelConfig, ModelParams]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ModelError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 8 or zlib.crc32(raw[:-4]) & 0xFFFFFFFF != struct.unpack("<I", raw[-4:])[0]:
        raise ModelError(f"{path}: CRC mismatch (corrupt checkpoint)")
    pos = 4

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, raw, pos)
        pos += struct.calcsize(fmt)
        return vals

    (n,) = take("<Q")
    config = ModelConfig.from_dict(json.loads(raw[pos:pos + n].decode("utf-8")))
    pos += n
    (count,) = take("<Q")
    ps = ModelParams()
    for _ in range(count):
        (ln,) = take("<Q")
        name = raw[pos:pos + ln].decode("utf-8")
        pos += ln
        (rank,) = take("<Q")
        shape = take(f"<{rank}Q") if rank else ()
        size = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
        ps.create(name, data)
    if pos != len(raw) - 4:
        raise ModelError(f"{path}: {len(raw) - 4 - pos} trailing bytes before CRC")
    return config, ps
