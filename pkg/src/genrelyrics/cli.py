"""Command-line entry point: ``prepare``, ``train``, ``transcribe``, ``score``.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .config import ConfigError, load_config
from .data import DataError, GenreClass, Utterance, load_genre_map, load_manifest
from .decode import DecodeConfig, DecodeError, transcribe_features
from .features import FeatureError
from .model import AdapterPlacement, GenreTransformer, ModelError, load_checkpoint
from .pipeline import PreparedData, prepare
from .scoring import ScoringError, score
from .tokenizer import TokenizerError
from .train import Phase, TrainingError, freeze_for_adapter_tuning, train_loop

log = logging.getLogger("genrelyrics")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


# ----------------------------------------------------------------------------
# commands


def cmd_prepare(args) -> int:
    table = load_genre_map(args.genre_map) if args.genre_map else None
    default = GenreClass.parse(args.default_genre) if args.default_genre else None
    manifests = {"train": Path(args.manifest)}
    if args.dev:
        manifests["dev"] = Path(args.dev)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        changed = prepare(manifests, outdir, args.vocab_size, table, default, args.cmvn)
    except TokenizerError as exc:
        raise UsageError(str(exc)) from None
    print(f"prepared {outdir}" if changed else f"{outdir} is up to date (cache hit)")
    return EXIT_OK


def _placement(value: str) -> AdapterPlacement:
    try:
        return AdapterPlacement(value)
    except ValueError:
        raise UsageError(f"unknown placement {value!r}") from None


def cmd_train(args) -> int:
    exp = load_config(args.config)
    phase = Phase(args.phase)
    placement = _placement(args.placement)
    if phase is Phase.ADAPTER and not placement.has_adapters:
        raise UsageError("--phase adapter needs --placement mha, mha-maskmha or shared")
    if phase is Phase.ADAPTER and not args.init_from:
        raise UsageError("--phase adapter needs --init-from <base checkpoint>")
    if exp.prepared is None:
        raise UsageError("config lacks [data] prepared = <dir>")
    prep = PreparedData.load(exp.prepared)
    train_cfg = exp.train
    train_cfg.phase = phase
    if args.seed is not None:
        train_cfg.seed = args.seed
    if args.epochs is not None:
        train_cfg.epochs = args.epochs
    if phase is Phase.ADAPTER:
        base_cfg, params = load_checkpoint(args.init_from)
        strategy = freeze_for_adapter_tuning(params, base_cfg, placement, seed=train_cfg.seed)
        model = GenreTransformer(strategy.config, params)
    else:
        cfg = exp.model.from_dict({**exp.model.to_dict(), "vocab_size": prep.bpe.vocab_size,
                                   "placement": placement.value})
        if args.init_from:
            _, params = load_checkpoint(args.init_from)
            model = GenreTransformer(cfg, params)
        else:
            model = GenreTransformer(cfg, seed=train_cfg.seed)
    train = prep.samples("train")
    dev = prep.samples("dev") if (prep.root / "dev.jsonl").exists() else train
    result = train_loop(train_cfg, train, dev, model, args.outdir, exp.loss, resume=args.resume,
                        detokenize=prep.bpe.decode)
    print(f"trained {len(result.metrics)} epochs; averaged epochs {result.best_epochs} -> "
          f"{Path(args.outdir) / 'averaged.ckpt'}")
    return EXIT_OK


def _transcribe_inputs(args) -> List[Utterance]:
    if args.wav:
        genre = None
        if args.genre:
            genre = GenreClass.parse(args.genre)
        return [Utterance(Path(args.wav).stem, args.wav, "", genre)]
    default = GenreClass.parse(args.genre) if args.genre else None
    utts = load_manifest(args.manifest, require_text=False, default_genre=default)
    if args.genre:
        for u in utts:
            u.genre = GenreClass.parse(args.genre)
    return utts


def cmd_transcribe(args) -> int:
    if bool(args.manifest) == bool(args.wav):
        raise UsageError("give exactly one of --manifest or --wav")
    config, params = load_checkpoint(args.checkpoint)
    model = GenreTransformer(config, params)
    prep = PreparedData.load(args.prepared)
    if prep.bpe.vocab_size != config.vocab_size:
        raise ModelError(f"tokenizer has {prep.bpe.vocab_size} tokens, checkpoint expects {config.vocab_size}")
    dcfg = DecodeConfig(beam=args.beam, penalty=args.penalty, ctc_weight=args.ctc_weight)
    utts = _transcribe_inputs(args)
    fallback = GenreClass.parse(args.genre_fallback) if args.genre_fallback else None
    for u in utts:
        if u.genre is None:
            if config.placement.has_adapters and fallback is None:
                raise DataError(f"utterance {u.id!r} has no genre and the checkpoint uses genre adapters "
                                f"(pass --genre or --genre-fallback)")
            u.genre = fallback or GenreClass.POP
    feats = prep.features_for(utts)
    lines = []
    for u, f in zip(utts, feats):
        res = transcribe_features(model, f, u.genre, dcfg)
        lines.append(json.dumps({"id": u.id, "text": prep.bpe.decode(res.tokens), "score": res.score},
                                sort_keys=True) + "\n")
    _atomic_write(Path(args.output), "".join(lines))
    print(f"wrote {len(lines)} hypotheses to {args.output}")
    return EXIT_OK


def read_hypotheses(path) -> dict:
    hyps = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            hyps[str(rec["id"])] = rec.get("text", "")
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"{path}:{n}: malformed hypothesis record ({exc})") from None
    return hyps


def cmd_score(args) -> int:
    hyps = read_hypotheses(args.hyp)
    refs = {u.id: (u.text, u.genre.value) for u in load_manifest(args.ref)}
    report = score(refs, hyps, strict=args.strict)
    for uid in report.missing:
        log.warning("no hypothesis for %s; counted as all deletions", uid)
    text = report.to_text()
    sys.stdout.write(text)
    if args.json:
        _atomic_write(Path(args.json), json.dumps(report.to_json(), sort_keys=True, indent=1) + "\n")
    if args.report:
        _atomic_write(Path(args.report), text)
    return EXIT_OK


# ----------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="genrelyrics", description="Genre-conditioned lyrics transcription.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="extract features, CMVN stats and train BPE")
    p.add_argument("manifest", help="training manifest (JSON lines)")
    p.add_argument("--dev", help="development manifest")
    p.add_argument("--outdir", required=True)
    p.add_argument("--vocab-size", type=int, default=5000)
    p.add_argument("--genre-map", help="tag<TAB>broadclass table overriding the shipped one")
    p.add_argument("--default-genre", choices=[g.value for g in GenreClass])
    p.add_argument("--cmvn", choices=["corpus", "utterance"], default="corpus")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; preparation is deterministic")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a base model or genre adapters")
    p.add_argument("config")
    p.add_argument("--phase", choices=[ph.value for ph in Phase], default="base")
    p.add_argument("--placement", default="none", help="none | mha | mha-maskmha | shared")
    p.add_argument("--init-from", help="checkpoint to start from (required for --phase adapter)")
    p.add_argument("--outdir", required=True)
    p.add_argument("--resume", action="store_true", help="continue after the last completed epoch in --outdir")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    d = DecodeConfig()
    p = sub.add_parser("transcribe", help="joint CTC/attention beam search")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prepared", required=True, help="directory written by 'prepare' (BPE + CMVN)")
    p.add_argument("--manifest")
    p.add_argument("--wav")
    p.add_argument("--genre", choices=[g.value for g in GenreClass], help="genre for every input")
    p.add_argument("--genre-fallback", choices=[g.value for g in GenreClass], help="genre for untagged inputs")
    p.add_argument("--beam", type=int, default=d.beam)
    p.add_argument("--penalty", type=float, default=d.penalty)
    p.add_argument("--ctc-weight", type=float, default=d.ctc_weight)
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; decoding is deterministic")
    p.set_defaults(func=cmd_transcribe)

    p = sub.add_parser("score", help="WER report, overall and per genre")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--strict", action="store_true", help="missing hypotheses are an error")
    p.add_argument("--json", help="write the JSON report here")
    p.add_argument("--report", help="write the text table here")
    p.set_defaults(func=cmd_score)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DataError, DecodeError, FeatureError, ModelError, ScoringError, TokenizerError,
            TrainingError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
