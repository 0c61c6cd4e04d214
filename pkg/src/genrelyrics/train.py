"""Adam + Noam training, adapter-phase freezing, validation and checkpoint averaging."""

from __future__ import annotations

import enum
import json
import logging
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import numeric as nm
from .data import Sample, make_batches
from .decode import greedy_search_batch
from .loss import LossConfig, batch_loss, utterance_losses
from .model import (AdapterPlacement, GenreTransformer, ModelConfig, ModelError, add_adapter_params,
                    adapter_param_count, init_base_params, is_adapter_param, is_norm_param,
                    is_src_attn_param, load_checkpoint, save_checkpoint)
from .numeric import ModelParams
from .scoring import corpus_wer

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class FreezeViolation(TrainingError):
    pass


class Phase(str, enum.Enum):
    BASE = "base"
    ADAPTER = "adapter"


@dataclass
class TrainConfig:
    warmup: int = 25000
    lr_scale: float = 5.0
    epochs: int = 100
    max_bins: int = 5_000_000
    seed: int = 0
    phase: Phase = Phase.BASE
    keep_best: int = 5
    grad_clip: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9

    def __post_init__(self):
        self.phase = Phase(self.phase)
        if self.warmup < 1:
            raise TrainingError(f"warmup must be >= 1, got {self.warmup}")


def noam_lr(step: int, d_model: int, warmup: int, k: float = 1.0) -> float:
    """``k * d^-0.5 * min(step^-0.5, step * warmup^-1.5)``."""
    if step < 1:
        raise TrainingError(f"noam_lr is defined for step >= 1, got {step}")
    return k * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


# ----------------------------------------------------------------------------
# optimiser


@dataclass
class OptimizerState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "OptimizerState":
        st = cls()
        for p in params.trainable():
            st.m[p.name] = np.zeros_like(p.value.data)
            st.v[p.name] = np.zeros_like(p.value.data)
        return st


def adam_step(params: ModelParams, grads: Dict[str, np.ndarray], state: OptimizerState, lr: float,
              beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-9) -> None:
    """Bias-corrected Adam update of the trainable parameters, in place."""
    for name, g in grads.items():
        if not params.param(name).trainable and np.any(g != 0):
            raise FreezeViolation(f"non-zero gradient for frozen parameter {name!r}")
    trainable = params.trainable()
    missing = [p.name for p in trainable if p.name not in grads]
    if missing:
        raise TrainingError(f"gradients missing for trainable parameters {missing[:3]}")
    state.step += 1
    t = state.step
    c1, c2 = 1.0 - beta1 ** t, 1.0 - beta2 ** t
    for p in trainable:
        g = grads[p.name]
        m = state.m.setdefault(p.name, np.zeros_like(g))
        v = state.v.setdefault(p.name, np.zeros_like(g))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.assign(p.value.data - lr * (m / c1) / (np.sqrt(v / c2) + eps))


def clip_grad_norm(grads: Dict[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm and total > max_norm:
        f = max_norm / (total + 1e-12)
        grads = {k: g * f for k, g in grads.items()}
    return grads, total


# ----------------------------------------------------------------------------
# freezing


def adapter_phase_trainable(name: str) -> bool:
    return is_adapter_param(name) or is_norm_param(name) or is_src_attn_param(name)


@dataclass
class FreezeStrategy:
    config: ModelConfig
    predicate: Callable[[str], bool] = adapter_phase_trainable

    def apply(self, params: ModelParams) -> None:
        for p in params:
            p.set_trainable(self.predicate(p.name))


def freeze_for_adapter_tuning(params: ModelParams, base_config: ModelConfig, placement,
                              seed: int = 0) -> FreezeStrategy:
    """Insert fresh adapters into ``params`` and freeze everything the adapter
    phase leaves untouched.  Returns the strategy carrying the new config."""
    placement = AdapterPlacement(placement)
    if not placement.has_adapters:
        raise TrainingError("adapter tuning needs a placement other than NONE")
    base_cfg = base_config.with_placement(AdapterPlacement.NONE)
    expected = init_base_params(base_cfg, 0)
    missing = [p.name for p in expected if p.name not in params]
    if missing:
        raise TrainingError(f"checkpoint lacks {len(missing)} base weights, e.g. {missing[:3]}")
    for p in expected:
        if params[p.name].shape != p.value.shape:
            raise TrainingError(f"{p.name}: shape {params[p.name].shape} differs from config {p.value.shape}")
    extra = [n for n in params.names() if n not in expected]
    if extra:
        raise TrainingError(f"expected a base checkpoint, found extra parameters {extra[:3]}")
    cfg = base_config.with_placement(placement)
    add_adapter_params(params, cfg, seed)
    strategy = FreezeStrategy(cfg)
    strategy.apply(params)
    return strategy


def adapter_phase_census(config: ModelConfig) -> int:
    """Closed-form trainable count in the adapter phase."""
    d = config.d_model
    n_norms = 2 * config.n_enc + 3 * config.m_dec + (2 if config.norm_style == "pre" else 0)
    src_attn = config.m_dec * 4 * (d * d + d)
    return adapter_param_count(config) + n_norms * 2 * d + src_attn


# ----------------------------------------------------------------------------
# checkpoint averaging


def average_checkpoints(paths: Sequence) -> Tuple[ModelConfig, ModelParams]:
    """Elementwise mean of parameters across checkpoints with identical layouts.

    Uses a running mean, so averaging copies of one checkpoint returns it
    bit-for-bit (a sum followed by a division would not).
    """
    if not paths:
        raise TrainingError("no checkpoints to average")
    config, first = load_checkpoint(paths[0])
    acc = {p.name: p.value.data.copy() for p in first}
    for k, path in enumerate(paths[1:], 2):
        cfg, ps = load_checkpoint(path)
        if cfg.to_dict() != config.to_dict():
            raise TrainingError(f"{path}: config differs from {paths[0]}")
        if ps.names() != list(acc):
            raise TrainingError(f"{path}: parameter names differ from {paths[0]}")
        for p in ps:
            if p.value.shape != acc[p.name].shape:
                raise TrainingError(f"{path}: {p.name} has shape {p.value.shape}, expected {acc[p.name].shape}")
            acc[p.name] += (p.value.data - acc[p.name]) / k
    return config, ModelParams(nm.Parameter(name, nm.Tensor(v)) for name, v in acc.items())


# ----------------------------------------------------------------------------
# validation and the training loop


def validate(model: GenreTransformer, dev: Sequence[Sample], loss_cfg: LossConfig = LossConfig(),
             max_bins: int = 5_000_000, detokenize: Optional[Callable[[List[int]], str]] = None) -> Tuple[float, float]:
    """Mean per-utterance joint loss and greedy-decoding corpus WER over ``dev``."""
    if not dev:
        raise TrainingError("dev set is empty")
    detok = detokenize or (lambda ids: " ".join(str(i) for i in ids))
    total, n = 0.0, 0
    pairs = []
    with nm.no_grad():
        for batch in make_batches(dev, max_bins):
            ctc, s2s = utterance_losses(model, batch, loss_cfg)
            total += float(np.sum(loss_cfg.alpha * ctc.data + (1.0 - loss_cfg.alpha) * s2s.data))
            n += len(batch)
            H, lens = model.encode(batch.feats, batch.feat_lens, batch.genre)
            hyps = greedy_search_batch(model, H, lens, batch.genre)
            for b, h in enumerate(hyps):
                ref = detok(list(batch.tokens[b, :batch.token_lens[b]]))
                pairs.append((ref, detok(h)))
    return total / n, corpus_wer(pairs).wer


@dataclass
class TrainResult:
    outdir: Path
    metrics: List[dict]
    config: ModelConfig
    params: ModelParams
    best_epochs: List[int]


def _state_path(outdir: Path, epoch: int) -> Path:
    return outdir / f"epoch{epoch}.state"


def _write_metrics(path: Path, metrics: List[dict]) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text("".join(json.dumps(m, sort_keys=True) + "\n" for m in metrics), encoding="utf-8")
    tmp.replace(path)


def _last_complete_epoch(outdir: Path) -> int:
    epochs = [int(p.stem[5:]) for p in outdir.glob("epoch*.state") if p.stem[5:].isdigit()]
    epochs = [e for e in epochs if (outdir / f"epoch{e}.ckpt").exists()]
    return max(epochs, default=0)


def train_loop(cfg: TrainConfig, train: Sequence[Sample], dev: Sequence[Sample], model: GenreTransformer,
               outdir, loss_cfg: LossConfig = LossConfig(), resume: bool = False,
               detokenize: Optional[Callable[[List[int]], str]] = None,
               on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train for ``cfg.epochs`` epochs, keep the best-k by dev loss, average them.

    Writes ``epoch<N>.ckpt`` (+ resumable ``epoch<N>.state``), ``metrics.jsonl``
    and ``averaged.ckpt`` under ``outdir``.  Shuffling and dropout draw from
    RNGs seeded by ``(seed, epoch)``, so a resumed run replays exactly.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    params = model.params
    opt = OptimizerState.for_params(params)
    metrics: List[dict] = []
    start = 1
    if resume:
        last = _last_complete_epoch(outdir)
        if last:
            _, saved = load_checkpoint(outdir / f"epoch{last}.ckpt")
            for p in saved:
                params.param(p.name).assign(p.value.data)
            with open(_state_path(outdir, last), "rb") as f:
                st = pickle.load(f)
            opt = OptimizerState(st["m"], st["v"], st["step"])
            metrics = st["metrics"]
            start = last + 1
            log.info("resuming after epoch %d (step %d)", last, opt.step)

    for epoch in range(start, cfg.epochs + 1):
        batches = make_batches(train, cfg.max_bins, shuffle_seed=cfg.seed * 100003 + epoch)
        drop_rng = np.random.default_rng([cfg.seed, epoch])
        loss_sum, n_utt = 0.0, 0
        lr = 0.0
        for bi, batch in enumerate(batches):
            loss, parts = batch_loss(model, batch, loss_cfg, drop_rng)
            if not np.isfinite(parts["loss"]):
                raise TrainingError(f"non-finite loss {parts} at epoch {epoch}, batch {bi} "
                                    f"(ids {batch.ids[:3]}...), step {opt.step + 1}")
            grads = nm.compute_gradients(loss, params)
            grads, _ = clip_grad_norm(grads, cfg.grad_clip)
            lr = noam_lr(opt.step + 1, model.config.d_model, cfg.warmup, cfg.lr_scale)
            adam_step(params, grads, opt, lr, cfg.beta1, cfg.beta2, cfg.eps)
            loss_sum += parts["loss"] * len(batch)
            n_utt += len(batch)
        dev_loss, dev_wer = validate(model, dev, loss_cfg, cfg.max_bins, detokenize)
        rec = {"epoch": epoch, "train_loss": loss_sum / max(n_utt, 1), "dev_loss": dev_loss,
               "dev_wer": dev_wer, "lr": lr, "steps": opt.step}
        metrics.append(rec)
        save_checkpoint(outdir / f"epoch{epoch}.ckpt", model.config, params)
        with open(_state_path(outdir, epoch), "wb") as f:
            pickle.dump({"m": opt.m, "v": opt.v, "step": opt.step, "metrics": metrics}, f, protocol=4)
        _write_metrics(outdir / "metrics.jsonl", metrics)
        log.info("epoch %d train %.4f dev %.4f wer %.3f", epoch, rec["train_loss"], dev_loss, dev_wer)
        if on_epoch is not None:
            on_epoch(rec)

    ranked = sorted(metrics, key=lambda r: (r["dev_loss"], r["epoch"]))[: cfg.keep_best]
    best = sorted(r["epoch"] for r in ranked)
    config, averaged = average_checkpoints([outdir / f"epoch{e}.ckpt" for e in best])
    save_checkpoint(outdir / "averaged.ckpt", config, averaged)
    return TrainResult(outdir, metrics, config, averaged, best)
