"""Glue between manifests, the feature cache, CMVN, BPE and training samples."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .data import GenreClass, Sample, Utterance, load_manifest, write_manifest
from .features import CmvnStats, apply_cmvn, compute_features, read_feature_cache, read_wav, write_feature_cache
from .tokenizer import BpeModel, train_bpe

CMVN_FILE = "cmvn.json"
BPE_FILE = "bpe.model"
STAMP_FILE = "prepare.json"


def featurize(utt: Utterance, cache_dir: Optional[Path] = None) -> np.ndarray:
    """Raw (un-normalised) 83-dim features, read from / written to the cache."""
    if cache_dir is not None:
        path = Path(cache_dir) / f"{utt.id}.fbk"
        if path.exists():
            return read_feature_cache(path)
    fm = compute_features(read_wav(utt.audio))
    frames = fm.frames.astype("<f4").astype(np.float64)  # cache precision, cached or not
    if cache_dir is not None:
        write_feature_cache(Path(cache_dir) / f"{utt.id}.fbk", frames)
    return frames


def utterance_cmvn(frames: np.ndarray) -> CmvnStats:
    return CmvnStats(frames.mean(axis=0), frames.var(axis=0), frames.shape[0])


def make_samples(utts: Sequence[Utterance], feats: Dict[str, np.ndarray], cmvn: Optional[CmvnStats],
                 bpe: BpeModel) -> List[Sample]:
    """Normalise features (corpus stats, or per utterance when ``cmvn`` is None) and tokenise."""
    out = []
    for u in utts:
        f = feats[u.id]
        stats = cmvn if cmvn is not None else utterance_cmvn(f)
        out.append(Sample(u.id, apply_cmvn(f, stats), bpe.encode(u.text), u.genre))
    return out


def _digest(paths: Sequence, extra: dict) -> str:
    h = hashlib.sha256(json.dumps(extra, sort_keys=True).encode())
    for p in paths:
        h.update(str(p).encode())
        h.update(Path(p).read_bytes())
    return h.hexdigest()


@dataclass
class PreparedData:
    root: Path
    bpe: BpeModel
    cmvn: Optional[CmvnStats]
    cmvn_mode: str

    @classmethod
    def load(cls, root) -> "PreparedData":
        root = Path(root)
        stamp = json.loads((root / STAMP_FILE).read_text())
        mode = stamp.get("cmvn", "corpus")
        cmvn = CmvnStats.from_json(json.loads((root / CMVN_FILE).read_text())) if mode == "corpus" else None
        return cls(root, BpeModel.load(root / BPE_FILE), cmvn, mode)

    def split(self, name: str) -> List[Utterance]:
        return load_manifest(self.root / f"{name}.jsonl")

    def samples(self, name: str) -> List[Sample]:
        utts = self.split(name)
        feats = {u.id: featurize(u, self.root / "feats") for u in utts}
        return make_samples(utts, feats, self.cmvn, self.bpe)

    def features_for(self, utts: Sequence[Utterance]) -> List[np.ndarray]:
        out = []
        for u in utts:
            f = featurize(u)
            out.append(apply_cmvn(f, self.cmvn if self.cmvn is not None else utterance_cmvn(f)))
        return out


def prepare(manifests: Dict[str, Path], outdir, vocab_size: int, genre_table=None,
            default_genre: Optional[GenreClass] = None, cmvn_mode: str = "corpus") -> bool:
    """Feature cache, CMVN stats over ``train`` and a BPE model on its transcripts.

    Returns False (and touches nothing) when a previous run already prepared
    identical inputs.
    """
    outdir = Path(outdir)
    splits = {name: load_manifest(p, genre_table, default_genre) for name, p in manifests.items()}
    if "train" not in splits:
        raise ValueError("prepare needs a 'train' manifest")
    audio = [u.audio for us in splits.values() for u in us]
    key = _digest([*manifests.values(), *audio],
                  {"vocab_size": vocab_size, "cmvn": cmvn_mode, "splits": sorted(manifests),
                   "genres": {u.id: u.genre.value for us in splits.values() for u in us}})
    stamp_path = outdir / STAMP_FILE
    if stamp_path.exists() and json.loads(stamp_path.read_text()).get("key") == key:
        return False
    bpe = train_bpe([u.text for u in splits["train"]], vocab_size)
    feat_dir = outdir / "feats"
    feat_dir.mkdir(parents=True, exist_ok=True)
    feats = {}
    for us in splits.values():
        for u in us:
            feats[u.id] = featurize(u)
            write_feature_cache(feat_dir / f"{u.id}.fbk", feats[u.id])
    cmvn = CmvnStats.from_matrices([feats[u.id] for u in splits["train"]])
    tmp = outdir / (CMVN_FILE + ".tmp")
    tmp.write_text(json.dumps(cmvn.to_json(), sort_keys=True))
    tmp.replace(outdir / CMVN_FILE)
    bpe.save(outdir / (BPE_FILE + ".tmp"))
    (outdir / (BPE_FILE + ".tmp")).replace(outdir / BPE_FILE)
    for name, us in splits.items():
        write_manifest(outdir / f"{name}.jsonl",
                       [{"id": u.id, "audio": str(Path(u.audio).resolve()), "text": u.text, "genre": u.genre.value,
                         "frames": int(feats[u.id].shape[0])} for u in us])
    tmp = outdir / (STAMP_FILE + ".tmp")
    tmp.write_text(json.dumps({"key": key, "cmvn": cmvn_mode, "vocab_size": bpe.vocab_size,
                               "splits": sorted(splits)}, sort_keys=True))
    tmp.replace(stamp_path)
    return True
