"""Shared fixtures: tiny model configs, a finite-difference checker, synthetic corpora."""

from __future__ import annotations

from typing import Callable, Dict

import numpy as np
import pytest

from genrelyrics import numeric as nm
from genrelyrics.data import GenreClass, Sample, synth_corpus
from genrelyrics.features import CmvnStats, apply_cmvn, compute_features, read_wav
from genrelyrics.model import AdapterPlacement, ModelConfig
from genrelyrics.tokenizer import train_bpe


def tiny_config(placement=AdapterPlacement.NONE, vocab_size=6, d_model=8, heads=2, n_enc=2, m_dec=2,
                adapter_dim=4, norm_style="post", feat_dim=83) -> ModelConfig:
    return ModelConfig(vocab_size=vocab_size, d_model=d_model, heads=heads, ffn_dim=2 * d_model, n_enc=n_enc,
                       m_dec=m_dec, adapter_dim=adapter_dim, placement=placement, norm_style=norm_style,
                       dropout=0.0, feat_dim=feat_dim)


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Elementwise relative error; the floor keeps zero-gradient entries from
    turning finite-difference round-off into a huge ratio."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def finite_difference_check(loss_fn: Callable[[nm.ModelParams], nm.Tensor], params: nm.ModelParams,
                            h: float = 1e-5, max_entries: int = 0, seed: int = 0) -> Dict[str, float]:
    """Central differences against ``compute_gradients``; returns max relative error per parameter.

    ``max_entries`` > 0 checks a random subset of entries per parameter.
    """
    grads = nm.compute_gradients(loss_fn(params), params)
    rng = np.random.default_rng(seed)
    errs = {}
    for p in params.trainable():
        base = p.value.data.copy()
        idx = list(np.ndindex(base.shape)) if base.shape else [()]
        if max_entries and len(idx) > max_entries:
            idx = [idx[i] for i in rng.choice(len(idx), max_entries, replace=False)]
        fd = np.zeros(len(idx))
        for n, ix in enumerate(idx):
            for sign in (+1, -1):
                w = base.copy()
                w[ix] += sign * h
                p.assign(w)
                with nm.no_grad():
                    fd[n] += sign * loss_fn(params).item()
            fd[n] /= 2 * h
        p.assign(base)
        an = np.array([grads[p.name][ix] for ix in idx])
        errs[p.name] = max_rel_err(fd, an)
    return errs


def make_params(**arrays) -> nm.ModelParams:
    ps = nm.ModelParams()
    for k, v in arrays.items():
        ps.create(k, np.asarray(v, dtype=np.float64))
    return ps


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def corpus_samples(utts, bpe, cmvn=None):
    feats = [compute_features(read_wav(u.audio)).frames for u in utts]
    cmvn = cmvn or CmvnStats.from_matrices(feats)
    return [Sample(u.id, apply_cmvn(f, cmvn), bpe.encode(u.text), u.genre) for u, f in zip(utts, feats)], cmvn


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """24 synthetic lines with their BPE model and normalised samples."""
    root = tmp_path_factory.mktemp("corpus24")
    manifest, utts = synth_corpus(7, 24, root)
    bpe = train_bpe([u.text for u in utts], 64)
    samples, cmvn = corpus_samples(utts, bpe)
    return {"root": root, "manifest": manifest, "utts": utts, "bpe": bpe, "samples": samples, "cmvn": cmvn}


ALL_GENRES = list(GenreClass)


def overfit_config(vocab_size: int, placement=AdapterPlacement.NONE) -> ModelConfig:
    """The small model used by the training smoke tests and the overfit harness."""
    return ModelConfig(vocab_size=vocab_size, d_model=32, heads=4, ffn_dim=64, n_enc=2, m_dec=2, adapter_dim=16,
                       placement=placement, dropout=0.0)


@pytest.fixture(scope="session")
def ten_line_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus10")
    manifest, utts = synth_corpus(0, 10, root)
    bpe = train_bpe([u.text for u in utts], 64)
    samples, cmvn = corpus_samples(utts, bpe)
    return {"root": root, "manifest": manifest, "utts": utts, "bpe": bpe, "samples": samples, "cmvn": cmvn}


# ----------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion at the end of the run

ACCEPTANCE: Dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
