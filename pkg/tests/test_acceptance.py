"""Acceptance suite: twelve numbered criteria, each checked at its stated tolerance.

Every test records a one-line PASS/FAIL verdict that is printed in the
"acceptance criteria" section at the end of the pytest run.  The end-to-end
criteria (7, 8, 10) train real models and take a minute or two in total.
"""

import contextlib
import itertools
import json
import time

import numpy as np
import pytest

from genrelyrics import numeric as nm
from genrelyrics.cli import main
from genrelyrics.config import write_config
from genrelyrics.data import GenreClass, Sample, synth_corpus
from genrelyrics.decode import DecodeConfig, beam_search, ctc_prefix_score, greedy_search
from genrelyrics.features import CmvnStats, apply_cmvn, compute_features, read_wav
from genrelyrics.loss import LossConfig, batch_loss, ctc_loss, ctc_loss_batch, ctc_min_frames, s2s_loss_batch
from genrelyrics.model import (AdapterPlacement, GenreTransformer, ModelConfig, init_params, load_checkpoint,
                               multi_head_attention, save_checkpoint)
from genrelyrics.data import collate
from genrelyrics.numeric import Tensor, _log_softmax_np
from genrelyrics.scoring import align_counts, wer
from genrelyrics.tokenizer import train_bpe
from genrelyrics.train import (TrainConfig, adapter_phase_census, average_checkpoints, freeze_for_adapter_tuning,
                               noam_lr, train_loop, validate)

from conftest import ACCEPTANCE, finite_difference_check, make_params, tiny_config
from oracles import all_pairs_edit_distance, ctc_exact_brute, ctc_nll_brute, ctc_prefix_brute

P = AdapterPlacement
ADAPTED = [P.GENRE_MHA, P.GENRE_MHA_MASKMHA, P.SHARED_ABLATION]


@contextlib.contextmanager
def criterion(n, title):
    """Record a PASS/FAIL verdict for criterion ``n``; the body may add notes to the yielded dict."""
    notes = {}
    t0 = time.perf_counter()
    try:
        yield notes
    except BaseException as exc:
        msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        line = f"criterion {n:2d} FAIL  {title}: {msg[:160]}"
        ACCEPTANCE[n] = line
        print(line)
        raise
    detail = ", ".join(f"{k}={v}" for k, v in notes.items())
    line = f"criterion {n:2d} PASS  {title} ({detail}; {time.perf_counter() - t0:.1f} s)"
    ACCEPTANCE[n] = line
    print(line)


def cli(*argv):
    code = main([str(a) for a in argv])
    assert code == 0, f"command {argv[0]} exited with {code}"


def randomize_adapters(model, seed=5):
    r = np.random.default_rng(seed)
    for p in model.params:
        if ".adapter" in p.name:
            p.assign(r.normal(scale=0.3, size=p.value.shape))


def featurize_all(utts):
    return [compute_features(read_wav(u.audio)).frames for u in utts]


def to_samples(utts, feats, cmvn, bpe):
    return [Sample(u.id, apply_cmvn(f, cmvn), bpe.encode(u.text), u.genre) for u, f in zip(utts, feats)]


# ----------------------------------------------------------------------------
# 1-3: oracles and gradients


def test_01_ctc_matches_alignment_enumeration():
    with criterion(1, "CTC forward-backward equals alignment enumeration") as notes:
        rng = np.random.default_rng(2024)
        t0 = time.perf_counter()
        worst, n = 0.0, 0
        while n < 600:
            T, V, L = int(rng.integers(1, 7)), int(rng.integers(2, 5)), int(rng.integers(0, 4))
            target = [int(x) for x in rng.integers(1, V, size=L)]
            if ctc_min_frames(target) > T:
                continue
            logits = rng.normal(size=(T, V)) * float(rng.choice([0.5, 2.0, 5.0]))
            got, _ = ctc_loss(logits, target)
            want = ctc_nll_brute(_log_softmax_np(logits, axis=1), target)
            worst = max(worst, abs(got - want))
            n += 1
        elapsed = time.perf_counter() - t0
        notes.update(instances=n, max_abs_diff=f"{worst:.1e}")
        assert worst < 1e-9
        assert elapsed < 30


def test_02_ctc_prefix_scores_match_enumeration():
    with criterion(2, "CTC prefix scores equal enumeration") as notes:
        rng = np.random.default_rng(77)
        worst, n = 0.0, 0
        for _ in range(400):
            T, V = int(rng.integers(1, 6)), int(rng.integers(2, 5))
            lp = _log_softmax_np(rng.normal(size=(T, V)) * 2.0, axis=1)
            prefix = [int(x) for x in rng.integers(1, V, size=int(rng.integers(0, 2)))]
            nxt = int(rng.integers(1, V))
            got, _ = ctc_prefix_score(lp, prefix, nxt)
            want = ctc_prefix_brute(lp, prefix + [nxt])
            checks = [(got, want)]
            seq = prefix + [nxt]
            if max(seq) < V - 1:
                # with eos = V-1 the continuation scores the complete sequence
                got_eos, _ = ctc_prefix_score(lp, seq, V - 1, eos=V - 1)
                checks.append((got_eos, ctc_exact_brute(lp, seq)))
            for g, w in checks:
                if w == -np.inf:
                    assert g == -np.inf
                else:
                    worst = max(worst, abs(g - w))
            n += 1
        notes.update(instances=n, max_abs_diff=f"{worst:.1e}")
        assert worst < 1e-9


def _weighted(t, seed=99):
    return nm.sum(nm.mul(t, Tensor(np.random.default_rng(seed).normal(size=t.shape))))


def _op_cases(rng):
    x34 = rng.normal(size=(3, 4))
    kinked = np.where(np.abs(x34) < 0.05, 0.5, x34)
    attn = {"x": rng.normal(size=(2, 3, 8)), "m": rng.normal(size=(2, 4, 8))}
    for k in "qkvo":
        attn[f"a.{k}.weight"] = rng.normal(size=(8, 8)) / np.sqrt(8)
        attn[f"a.{k}.bias"] = rng.normal(size=8) * 0.1
    amask = np.zeros((2, 1, 1, 4), dtype=bool)
    amask[1, ..., 3] = True
    fill = rng.random((3, 4)) < 0.3
    ids = np.array([[1, 3], [3, 0]])
    tgt = np.array([[1, 2, -1], [0, 3, 2]])
    return {
        "add/sub/mul": (lambda p: _weighted(nm.mul(nm.sub(p["x"], p["b"]), nm.add(p["x"], p["b"]))),
                        dict(x=rng.normal(size=(2, 3, 4)), b=rng.normal(size=4))),
        "scale": (lambda p: _weighted(nm.scale(p["x"], -1.7)), dict(x=x34)),
        "matmul": (lambda p: _weighted(nm.matmul(p["a"], p["b"])),
                   dict(a=rng.normal(size=(2, 3, 4)), b=rng.normal(size=(2, 4, 2)))),
        "linear": (lambda p: _weighted(nm.linear(p["x"], p["w"], p["b"])),
                   dict(x=x34, w=rng.normal(size=(4, 5)), b=rng.normal(size=5))),
        "relu": (lambda p: _weighted(nm.relu(p["x"])), dict(x=kinked)),
        "exp": (lambda p: _weighted(nm.exp(p["x"])), dict(x=x34)),
        "log": (lambda p: _weighted(nm.log(p["x"])), dict(x=rng.uniform(0.5, 2, size=(3, 4)))),
        "softmax": (lambda p: _weighted(nm.softmax(p["x"])), dict(x=x34)),
        "log_softmax": (lambda p: _weighted(nm.log_softmax(p["x"], axis=0)), dict(x=x34)),
        "layer_norm": (lambda p: _weighted(nm.layer_norm(p["x"], p["g"], p["b"])),
                       dict(x=x34, g=rng.normal(size=4), b=rng.normal(size=4))),
        "reshape/transpose": (lambda p: _weighted(nm.transpose(nm.reshape(p["x"], (2, 6)), (1, 0))), dict(x=x34)),
        "stack": (lambda p: _weighted(nm.stack([p["x"], p["y"]], axis=1)), dict(x=x34, y=rng.normal(size=(3, 4)))),
        "sum/mean": (lambda p: nm.add(_weighted(nm.sum(p["x"], axis=0)), nm.mean(nm.mul(p["x"], p["x"]))),
                     dict(x=x34)),
        "masked_fill": (lambda p: _weighted(nm.masked_fill(p["x"], fill, 0.0)), dict(x=x34)),
        "embedding": (lambda p: _weighted(nm.embedding(p["t"], ids)), dict(t=rng.normal(size=(5, 3)))),
        "conv2d": (lambda p: _weighted(nm.conv2d(p["x"], p["w"], p["b"])),
                   dict(x=rng.normal(size=(2, 7, 9, 2)), w=rng.normal(size=(3, 3, 2, 3)), b=rng.normal(size=3))),
        "multi_head_attention": (lambda p: _weighted(multi_head_attention(p, "a", p["x"], p["m"], amask, 2)), attn),
        "ctc_loss": (lambda p: nm.sum(ctc_loss_batch(p["z"], [5, 5], np.array([[2, 3], [1, 1]]), [2, 2])),
                     dict(z=rng.normal(size=(2, 5, 4)))),
        "cross_entropy": (lambda p: nm.sum(s2s_loss_batch(p["z"], tgt, label_smoothing=0.1)),
                          dict(z=rng.normal(size=(2, 3, 4)))),
    }


def test_03_gradient_checks():
    with criterion(3, "finite-difference gradient checks (ops + tiny model)") as notes:
        t0 = time.perf_counter()
        rng = np.random.default_rng(3)
        worst_op = 0.0
        for name, (fn, arrays) in _op_cases(rng).items():
            errs = finite_difference_check(fn, make_params(**arrays))
            assert max(errs.values()) < 1e-4, (name, errs)
            worst_op = max(worst_op, max(errs.values()))

        cfg = tiny_config(P.GENRE_MHA_MASKMHA)    # d=8, heads=2, 2+2 blocks, V=6, all adapter sites
        model = GenreTransformer(cfg, seed=11)
        randomize_adapters(model)
        feats = rng.normal(size=(2, 15, 83))
        batch = collate([Sample("a", feats[0], [2, 3, 4], GenreClass.METAL),
                         Sample("b", feats[1, :11], [4, 2], GenreClass.METAL)])
        errs = finite_difference_check(lambda ps: batch_loss(model, batch, LossConfig(alpha=0.3))[0], model.params)
        worst_model = max(errs.values())
        n_entries = sum(p.value.data.size for p in model.params)
        notes.update(ops=len(_op_cases(rng)), model_entries=n_entries,
                     max_rel_err_ops=f"{worst_op:.1e}", max_rel_err_model=f"{worst_model:.1e}")
        assert worst_model < 1e-4, sorted(errs.items(), key=lambda kv: -kv[1])[:3]
        assert time.perf_counter() - t0 < 120


# ----------------------------------------------------------------------------
# 4-6: structural invariants


@pytest.fixture(scope="module")
def base_run(small_corpus, tmp_path_factory):
    """A briefly trained base model on the 24-line corpus."""
    out = tmp_path_factory.mktemp("base")
    cfg = ModelConfig(vocab_size=small_corpus["bpe"].vocab_size, d_model=16, heads=2, ffn_dim=32, n_enc=2,
                      m_dec=2, adapter_dim=8, dropout=0.1)
    samples = small_corpus["samples"]
    train_loop(TrainConfig(warmup=30, lr_scale=0.5, epochs=2, max_bins=60000, seed=1), samples[:18], samples[18:],
               GenreTransformer(cfg, seed=1), out, detokenize=small_corpus["bpe"].decode)
    return out / "averaged.ckpt", samples


def test_04_identity_at_init(base_run):
    with criterion(4, "fresh adapters are an exact identity") as notes:
        rng = np.random.default_rng(4)
        feats, lens, ys = rng.normal(size=(2, 24, 83)), np.array([24, 17]), np.array([[5, 2, 3], [5, 4, 5]])
        worst = 0.0
        for norm_style in ("post", "pre"):
            base = GenreTransformer(tiny_config(P.NONE, norm_style=norm_style), seed=3)
            for placement in ADAPTED:
                ps = init_params(tiny_config(placement, norm_style=norm_style), seed=3)
                for p in base.params:
                    ps.param(p.name).assign(p.value.data)
                adapted = GenreTransformer(tiny_config(placement, norm_style=norm_style), ps)
                for g in GenreClass:
                    with nm.no_grad():
                        outs = []
                        for m in (base, adapted):
                            H, hl = m.encode(feats, lens, g)
                            outs.append((H.data, m.ctc_logits(H).data, m.s2s_logits(H, hl, ys, g).data))
                    for a, b in zip(*outs):
                        worst = max(worst, float(np.max(np.abs(a - b))))
        assert worst <= 1e-12

        ckpt, samples = base_run
        dev = samples[18:]
        base_cfg, base_ps = load_checkpoint(ckpt)
        base_loss, _ = validate(GenreTransformer(base_cfg, base_ps), dev)
        gap = 0.0
        for placement in ADAPTED:
            cfg, ps = load_checkpoint(ckpt)
            strategy = freeze_for_adapter_tuning(ps, cfg, placement, seed=9)
            loss, _ = validate(GenreTransformer(strategy.config, ps), dev)
            gap = max(gap, abs(loss - base_loss))
        notes.update(max_output_diff=f"{worst:.1e}", max_step0_dev_loss_gap=f"{gap:.1e}")
        assert gap <= 1e-9


def test_05_freezing_soundness(base_run, tmp_path):
    with criterion(5, "adapter phase leaves frozen weights bit-identical") as notes:
        ckpt, samples = base_run
        _, base_ps = load_checkpoint(ckpt)
        checked = 0
        for placement in ADAPTED:
            cfg, ps = load_checkpoint(ckpt)
            strategy = freeze_for_adapter_tuning(ps, cfg, placement, seed=2)
            model = GenreTransformer(strategy.config, ps)
            census = sum(p.value.data.size for p in ps.trainable())
            assert census == adapter_phase_census(strategy.config), placement
            out = tmp_path / placement.value
            res = train_loop(TrainConfig(warmup=10, lr_scale=1.0, epochs=3, max_bins=60000, seed=2, phase="adapter"),
                             samples[:18], samples[18:], model, out)
            trainable = {p.name for p in ps.trainable()}
            for path in [out / f"epoch{e}.ckpt" for e in (1, 2, 3)] + [out / "averaged.ckpt"]:
                _, saved = load_checkpoint(path)
                for p in base_ps:
                    if p.name not in trainable:
                        assert saved[p.name].data.tobytes() == p.value.data.tobytes(), (placement, p.name)
                        checked += 1
            moved = [n for n in trainable if ".adapter" in n and ".up.weight" in n
                     and np.any(res.params[n].data != 0)]
            assert moved, f"{placement}: adapters never moved"
            notes[placement.value + "_trainable"] = census
        notes["frozen_tensors_compared"] = checked


def test_06_decoder_causality():
    with criterion(6, "decoder outputs never see later tokens") as notes:
        rng = np.random.default_rng(6)
        model = GenreTransformer(tiny_config(P.GENRE_MHA_MASKMHA), seed=6)
        randomize_adapters(model)
        trials = 0
        with nm.no_grad():
            while trials < 1000:
                T = int(rng.integers(8, 30))
                genre = list(GenreClass)[trials % 3]
                H, hl = model.encode(rng.normal(size=(1, T, 83)), np.array([T]), genre)
                L = int(rng.integers(2, 9))
                ys = rng.integers(0, 6, size=(1, L))
                ref = model.s2s_logits(H, hl, ys, genre).data
                for _ in range(10):
                    j = int(rng.integers(1, L))
                    alt = ys.copy()
                    alt[0, j] = (alt[0, j] + int(rng.integers(1, 6))) % 6
                    if rng.random() < 0.5:
                        alt[0, j:] = rng.integers(0, 6, size=L - j)
                    out = model.s2s_logits(H, hl, alt, genre).data
                    assert out[0, :j].tobytes() == ref[0, :j].tobytes(), (trials, j)
                    trials += 1
        notes["trials"] = trials


# ----------------------------------------------------------------------------
# 7-8: desk-scale end-to-end runs


OVERFIT_CFG = """[data]
prepared = prep
[model]
d_model = 32
heads = 4
ffn_dim = 64
n_enc = 2
m_dec = 2
adapter_dim = 16
dropout = 0.0
[train]
warmup = 200
lr_scale = 0.5
epochs = 150
max_bins = 30000
keep_best = 5
"""


@pytest.mark.slow
def test_07_overfit_ten_lines_through_the_cli(tmp_path):
    with criterion(7, "CLI overfit of a 10-line corpus reaches 0% WER") as notes:
        t0 = time.perf_counter()
        manifest, _ = synth_corpus(0, 10, tmp_path / "corpus")
        cli("prepare", manifest, "--outdir", tmp_path / "prep", "--vocab-size", 64)
        (tmp_path / "tiny.cfg").write_text(OVERFIT_CFG)
        cli("train", tmp_path / "tiny.cfg", "--outdir", tmp_path / "run", "--seed", 0)
        cli("transcribe", "--checkpoint", tmp_path / "run" / "averaged.ckpt", "--prepared", tmp_path / "prep",
            "--manifest", manifest, "--output", tmp_path / "hyp.jsonl")
        cli("score", "--hyp", tmp_path / "hyp.jsonl", "--ref", manifest, "--json", tmp_path / "score.json")
        overall = json.loads((tmp_path / "score.json").read_text())["overall"]
        elapsed = time.perf_counter() - t0
        notes.update(wer=f"{100 * overall['wer']:.2f}%", errors=overall["errors"])
        assert overall["wer"] == 0.0
        assert elapsed < 600


@pytest.mark.slow
def test_08_genre_adapters_beat_the_frozen_base(tmp_path):
    with criterion(8, "genre adapters lower held-out loss; shared adapter ranks between") as notes:
        _, train_utts = synth_corpus(1, 200, tmp_path / "train")
        _, dev_utts = synth_corpus(2, 40, tmp_path / "dev", prefix="dev")
        _, held_utts = synth_corpus(3, 60, tmp_path / "held", prefix="held")
        _, pre_utts = synth_corpus(4, 200, tmp_path / "pretrain", genre_mix=(0, 100, 0), prefix="base")
        train_feats = featurize_all(train_utts)
        cmvn = CmvnStats.from_matrices(train_feats)
        bpe = train_bpe([u.text for u in train_utts], 64)
        train = to_samples(train_utts, train_feats, cmvn, bpe)
        dev = to_samples(dev_utts, featurize_all(dev_utts), cmvn, bpe)
        held = to_samples(held_utts, featurize_all(held_utts), cmvn, bpe)
        pretrain = to_samples(pre_utts, featurize_all(pre_utts), cmvn, bpe)
        bins = 8 * 150 * 83

        cfg = ModelConfig(vocab_size=bpe.vocab_size, d_model=32, heads=4, ffn_dim=64, n_enc=2, m_dec=2,
                          adapter_dim=16, dropout=0.0)
        base = train_loop(TrainConfig(warmup=300, lr_scale=0.3, epochs=25, max_bins=bins, seed=0), pretrain, dev,
                          GenreTransformer(cfg, seed=0), tmp_path / "base")
        base_loss, _ = validate(GenreTransformer(base.config, base.params), held, max_bins=bins)

        losses = {}
        for placement in (P.GENRE_MHA, P.SHARED_ABLATION):
            c, ps = load_checkpoint(tmp_path / "base" / "averaged.ckpt")
            strategy = freeze_for_adapter_tuning(ps, c, placement, seed=0)
            res = train_loop(TrainConfig(warmup=100, lr_scale=0.3, epochs=10, max_bins=bins, seed=0, phase="adapter"),
                             train, dev, GenreTransformer(strategy.config, ps), tmp_path / placement.value)
            losses[placement], _ = validate(GenreTransformer(res.config, res.params), held, max_bins=bins)

        mha, shared = losses[P.GENRE_MHA], losses[P.SHARED_ABLATION]
        gain = 1 - mha / base_loss
        notes.update(base=f"{base_loss:.3f}", genre_mha=f"{mha:.3f}", shared=f"{shared:.3f}",
                     mha_gain=f"{100 * gain:.1f}%")
        assert gain >= 0.05
        assert (mha <= shared <= base_loss) or abs(shared - mha) <= 0.02 * mha


# ----------------------------------------------------------------------------
# 9-12: decoding, determinism, schedule, metric


def _sharp_model(seed, V, T):
    r = np.random.default_rng(seed)
    m = GenreTransformer(tiny_config(vocab_size=V), seed=seed)
    for n in ("output.weight", "ctc.weight"):
        m.params.param(n).assign(m.params[n].data * 3.0)
    return m, Tensor(r.normal(size=(1, T, 8)))


def test_09_decoding_degeneracies():
    with criterion(9, "decoding degeneracies and defaults") as notes:
        d = DecodeConfig()
        assert (d.penalty, d.beam, d.ctc_weight) == (0.0, 10, 0.3)
        for seed in range(20):
            m, H = _sharp_model(seed, V=7, T=6)
            assert beam_search(m, H, cfg=DecodeConfig(beam=1, ctc_weight=0.0)).tokens == greedy_search(m, H)
        n_ctc = 0
        for V in (4, 5):
            for seed in range(10):
                m, H = _sharp_model(100 + seed, V=V, T=3)
                res = beam_search(m, H, cfg=DecodeConfig(beam=V ** 3, ctc_weight=1.0), max_len=2)
                with nm.no_grad():
                    lp = _log_softmax_np(m.ctc_logits(H).data[0], axis=-1)
                cands = [list(s) for n in range(3) for s in itertools.product(range(2, V - 1), repeat=n)]
                best = max(cands, key=lambda s: (ctc_exact_brute(lp, s), -len(s), [-t for t in s]))
                assert res.tokens == best, (V, seed, res.tokens, best)
                n_ctc += 1
        notes.update(greedy_cases=20, ctc_argmax_cases=n_ctc)


def _pipeline(root, manifest):
    cli("prepare", manifest, "--outdir", root / "prep", "--vocab-size", 48, "--seed", 3)
    write_config(root / "cfg", root / "prep",
                 ModelConfig(vocab_size=48, d_model=16, heads=2, ffn_dim=32, n_enc=1, m_dec=1, adapter_dim=8,
                             dropout=0.1),
                 TrainConfig(warmup=20, lr_scale=0.5, epochs=3, max_bins=40000, keep_best=2))
    cli("train", root / "cfg", "--outdir", root / "base", "--seed", 3)
    cli("train", root / "cfg", "--phase", "adapter", "--placement", "mha", "--init-from",
        root / "base" / "averaged.ckpt", "--outdir", root / "adapt", "--epochs", 2, "--seed", 3)
    cli("transcribe", "--checkpoint", root / "adapt" / "averaged.ckpt", "--prepared", root / "prep",
        "--manifest", manifest, "--output", root / "hyp.jsonl", "--beam", 3, "--seed", 3)
    cli("score", "--hyp", root / "hyp.jsonl", "--ref", manifest, "--json", root / "score.json",
        "--report", root / "score.txt")


@pytest.mark.slow
def test_10_fixed_seed_reruns_are_bit_identical(tmp_path):
    with criterion(10, "fixed-seed CLI reruns are bit-identical") as notes:
        manifest, _ = synth_corpus(8, 8, tmp_path / "corpus")
        a, b = tmp_path / "a", tmp_path / "b"
        _pipeline(a, manifest)
        _pipeline(b, manifest)
        files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and p.name != "cfg")
        assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file() and p.name != "cfg")
        differ = [str(f) for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
        notes["files_compared"] = len(files)
        assert not differ, differ
        assert any(f.suffix == ".ckpt" for f in files) and any(f.name == "metrics.jsonl" for f in files)


def test_11_noam_schedule_and_checkpoint_averaging(tmp_path):
    with criterion(11, "Noam schedule shape and checkpoint averaging") as notes:
        worst = 0.0
        for d, w, k in [(512, 25000, 1.0), (256, 4000, 5.0), (32, 200, 0.5), (8, 1, 2.0)]:
            peak = noam_lr(w, d, w, k)
            assert abs(peak - k * d ** -0.5 * w ** -0.5) <= 1e-12
            for s in np.unique(np.linspace(1, w, 50).astype(int)):
                assert noam_lr(int(s), d, w, k) == pytest.approx(s * noam_lr(1, d, w, k), rel=1e-12)
            for s in np.unique(np.linspace(w, 20 * w, 50).astype(int)):
                assert noam_lr(int(s), d, w, k) * np.sqrt(s) == pytest.approx(peak * np.sqrt(w), rel=1e-12)
        assert noam_lr(25000, 512, 25000) == pytest.approx(2.7951e-4, rel=1e-4)

        cfg = tiny_config(P.GENRE_MHA)
        rng = np.random.default_rng(11)
        paths, stacks = [], {}
        for i in range(5):
            ps = init_params(cfg, seed=i)
            for p in ps:
                p.assign(rng.normal(size=p.value.shape))
                stacks.setdefault(p.name, []).append(p.value.data.copy())
            paths.append(tmp_path / f"c{i}.ckpt")
            save_checkpoint(paths[-1], cfg, ps)
        _, avg = average_checkpoints(paths)
        for name, arrs in stacks.items():
            worst = max(worst, float(np.max(np.abs(avg[name].data - np.mean(arrs, axis=0)))))
        notes["max_avg_diff"] = f"{worst:.1e}"
        assert worst <= 1e-15


def test_12_wer_matches_brute_force_edit_distance():
    with criterion(12, "WER equals brute-force edit distance on all short pairs") as notes:
        alphabet = ("la", "oh", "yeah")
        seqs = [s for n in range(7) for s in itertools.product(alphabet, repeat=n)]
        oracle = all_pairs_edit_distance({n: [s for s in seqs if len(s) == n] for n in range(7)}, alphabet, 6)
        pairs = 0
        for ref in seqs:
            for hyp in seqs:
                s, d, i = align_counts(ref, hyp)
                assert s + d + i == oracle[(ref, hyp)], (ref, hyp)
                assert len(ref) - d + i == len(hyp)
                pairs += 1
        r = wer("the quick brown fox", "the brown fox")
        assert (r.substitutions, r.deletions, r.insertions) == (0, 1, 0) and r.wer == 0.25
        notes.update(pairs=pairs, fixture=f"{100 * r.wer:.0f}% deletion-only")
