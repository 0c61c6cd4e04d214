"""Manifests, genre broadclasses, genre-homogeneous batching and a synthetic corpus."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .features import FEAT_DIM, SAMPLE_RATE, AudioBuffer, write_wav

IGNORE_ID = -1


class DataError(ValueError):
    pass


class GenreClass(str, enum.Enum):
    POP = "pop"
    METAL = "metal"
    HIPHOP = "hiphop"

    @classmethod
    def parse(cls, value) -> "GenreClass":
        if isinstance(value, GenreClass):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise DataError(f"unknown genre broadclass {value!r}") from None


GENRES = (GenreClass.POP, GenreClass.METAL, GenreClass.HIPHOP)


def load_genre_map(path=None) -> Dict[str, GenreClass]:
    """Read a ``tag<TAB>BROADCLASS`` table; the shipped one by default."""
    if path is None:
        text = resources.files("genrelyrics").joinpath("resources/genre_map.tsv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    table = {}
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            tag, cls = line.split("\t")
        except ValueError:
            raise DataError(f"genre map line {n}: expected 'tag<TAB>class', got {line!r}") from None
        table[" ".join(tag.lower().split())] = GenreClass.parse(cls)
    return table


_DEFAULT_MAP: Optional[Dict[str, GenreClass]] = None


def map_genre(tag: str, table: Optional[Dict[str, GenreClass]] = None,
              default: Optional[GenreClass] = None) -> GenreClass:
    """Case-insensitive free-text genre tag -> broadclass.

    Broadclass names themselves ("pop", "metal", "hiphop") always map to
    themselves.  Unmapped tags raise unless ``default`` is given.
    """
    global _DEFAULT_MAP
    if table is None:
        if _DEFAULT_MAP is None:
            _DEFAULT_MAP = load_genre_map()
        table = _DEFAULT_MAP
    key = " ".join(str(tag).lower().split())
    if key in table:
        return table[key]
    if default is not None:
        return GenreClass.parse(default)
    raise DataError(f"unmapped genre tag: {tag!r}")


@dataclass
class Utterance:
    id: str
    audio: Optional[str]
    text: str
    genre: GenreClass
    tag: str = ""


def load_manifest(path, genre_table=None, default_genre: Optional[GenreClass] = None,
                  require_text: bool = True) -> List[Utterance]:
    """Parse a JSON-lines manifest of ``{"id", "audio", "text", "genre"}`` records.

    Relative audio paths are resolved against the manifest's directory.
    """
    path = Path(path)
    utts: List[Utterance] = []
    seen = set()
    unmapped = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            uid = str(rec["id"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"{path}:{n}: malformed manifest record ({exc})") from None
        if uid in seen:
            raise DataError(f"{path}:{n}: duplicate utterance id {uid!r}")
        seen.add(uid)
        text = rec.get("text", "") or ""
        if require_text and not text.strip():
            raise DataError(f"{path}:{n}: empty transcript for {uid!r}")
        tag = rec.get("genre")
        try:
            genre = map_genre(tag, genre_table, default_genre) if tag is not None else default_genre
        except DataError:
            unmapped.append(str(tag))
            genre = None
        audio = rec.get("audio")
        if audio is not None and not Path(audio).is_absolute():
            audio = str(path.parent / audio)
        utts.append(Utterance(uid, audio, text, genre, "" if tag is None else str(tag)))
    if unmapped:
        raise DataError(f"{path}: unmapped genre tags: {sorted(set(unmapped))}")
    return utts


def write_manifest(path, records: Sequence[dict]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n")
    tmp.replace(path)


# ----------------------------------------------------------------------------
# batching


@dataclass
class Sample:
    """One featurised, tokenised utterance ready for batching."""
    id: str
    feats: np.ndarray  # (T, 83), normalised
    tokens: List[int]
    genre: GenreClass

    @property
    def num_frames(self) -> int:
        return self.feats.shape[0]


@dataclass
class Batch:
    ids: List[str]
    feats: np.ndarray  # (B, Tmax, 83), zero padded
    feat_lens: np.ndarray
    tokens: np.ndarray  # (B, Lmax), IGNORE_ID padded
    token_lens: np.ndarray
    genre: GenreClass

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def genres(self) -> List[GenreClass]:
        return [self.genre] * len(self.ids)


def collate(samples: Sequence[Sample]) -> Batch:
    genres = {s.genre for s in samples}
    if len(genres) != 1:
        raise DataError(f"a batch must hold exactly one genre, got {sorted(g.value for g in genres)}")
    B = len(samples)
    tmax = max(s.num_frames for s in samples)
    lmax = max(1, max(len(s.tokens) for s in samples))
    feats = np.zeros((B, tmax, FEAT_DIM))
    toks = np.full((B, lmax), IGNORE_ID, dtype=np.int64)
    for i, s in enumerate(samples):
        feats[i, :s.num_frames] = s.feats
        toks[i, :len(s.tokens)] = s.tokens
    return Batch([s.id for s in samples], feats, np.array([s.num_frames for s in samples]),
                 toks, np.array([len(s.tokens) for s in samples]), genres.pop())


def make_batches(samples: Sequence[Sample], max_bins: int, shuffle_seed: Optional[int] = None) -> List[Batch]:
    """Genre-homogeneous, length-sorted batches within a padded-cell budget.

    A batch's cost is ``B * Tmax * 83`` (padded feature cells).  Batch order is
    shuffled with ``shuffle_seed`` when given, otherwise POP, METAL, HIPHOP.
    """
    batches: List[Batch] = []
    for genre in GENRES:
        group = sorted((s for s in samples if s.genre == genre), key=lambda s: (s.num_frames, s.id))
        cur: List[Sample] = []
        for s in group:
            if s.num_frames * FEAT_DIM > max_bins:
                raise DataError(f"utterance {s.id!r} ({s.num_frames} frames) exceeds max_bins={max_bins}")
            if cur and (len(cur) + 1) * s.num_frames * FEAT_DIM > max_bins:
                batches.append(collate(cur))
                cur = []
            cur.append(s)
        if cur:
            batches.append(collate(cur))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(batches))
        batches = [batches[i] for i in order]
    return batches


# ----------------------------------------------------------------------------
# synthetic corpus

LEXICON = ("la", "na", "oh", "yeah", "baby", "love", "night", "fire", "heart", "dance")

_TAGS = {
    GenreClass.METAL: ("Metal", "Hard Rock", "Death Metal"),
    GenreClass.POP: ("Pop", "Country", "Jazz", "Reggae"),
    GenreClass.HIPHOP: ("Hip Hop", "Rap", "Rhythms & Blues"),
}


@dataclass(frozen=True)
class GenreAcoustics:
    """How a genre renders a sung word: pitch shift, loudness, noise, tempo."""
    shift_steps: int
    vocal_amp: float
    noise_std: float
    drone_amp: float
    word_sec: float
    beat: bool = False


ACOUSTICS = {
    # loud dense accompaniment, vocals sit one lexicon step lower
    GenreClass.METAL: GenreAcoustics(shift_steps=-1, vocal_amp=0.3, noise_std=0.08, drone_amp=0.2, word_sec=0.24),
    GenreClass.POP: GenreAcoustics(shift_steps=0, vocal_amp=0.5, noise_std=0.01, drone_amp=0.0, word_sec=0.24),
    # fast delivery over a beat, one step higher
    GenreClass.HIPHOP: GenreAcoustics(shift_steps=1, vocal_amp=0.45, noise_std=0.02, drone_amp=0.0,
                                      word_sec=0.15, beat=True),
}

_BASE_HZ = 330.0
_STEP = 2.0 ** (1.0 / 4.0)
_GAP_SEC = 0.04
_EDGE_SEC = 0.08


def word_frequency(word: str, genre: GenreClass) -> float:
    k = LEXICON.index(word) + ACOUSTICS[genre].shift_steps
    return _BASE_HZ * _STEP ** k


def render_line(words: Sequence[str], genre: GenreClass, rng: np.random.Generator) -> np.ndarray:
    """Tone-plus-noise rendering of one lyric line at 16 kHz."""
    ac = ACOUSTICS[genre]
    nword = int(round(ac.word_sec * SAMPLE_RATE))
    ngap = int(round(_GAP_SEC * SAMPLE_RATE))
    nedge = int(round(_EDGE_SEC * SAMPLE_RATE))
    total = 2 * nedge + len(words) * nword + (len(words) - 1) * ngap
    sig = np.zeros(total)
    env = np.hanning(nword) ** 0.5
    t = np.arange(nword) / SAMPLE_RATE
    pos = nedge
    for w in words:
        f = word_frequency(w, genre)
        phase = rng.uniform(0, 2 * np.pi)
        tone = np.sin(2 * np.pi * f * t + phase) + 0.5 * np.sin(4 * np.pi * f * t + phase)
        sig[pos:pos + nword] += ac.vocal_amp * env * tone / 1.5
        pos += nword + ngap
    tt = np.arange(total) / SAMPLE_RATE
    sig += ac.noise_std * rng.standard_normal(total)
    if ac.drone_amp:
        sig += ac.drone_amp * sum(np.sin(2 * np.pi * 82.4 * h * tt) / h for h in (1, 2, 3, 4))
    if ac.beat:
        period = int(0.25 * SAMPLE_RATE)
        click = np.exp(-np.arange(400) / 60.0) * np.sin(2 * np.pi * 60 * np.arange(400) / SAMPLE_RATE)
        for start in range(0, total - 400, period):
            sig[start:start + 400] += 0.3 * click
    return np.clip(sig, -1.0, 1.0)


def _split_counts(n: int, mix: Sequence[float]) -> List[int]:
    # largest-remainder apportionment
    w = np.asarray(mix, dtype=np.float64)
    raw = n * w / w.sum()
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


def synth_corpus(seed: int, n_lines: int, outdir, genre_mix: Sequence[float] = (35, 59, 6),
                 prefix: str = "utt", words_per_line: Tuple[int, int] = (3, 5)) -> Tuple[Path, List[Utterance]]:
    """Write ``n_lines`` synthetic sung lines (WAV + ``manifest.jsonl``) to ``outdir``.

    ``genre_mix`` is the METAL/POP/HIPHOP proportion.  Output is a pure function
    of the arguments.
    """
    outdir = Path(outdir)
    (outdir / "wav").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    counts = _split_counts(n_lines, genre_mix)
    genres = ([GenreClass.METAL] * counts[0] + [GenreClass.POP] * counts[1] + [GenreClass.HIPHOP] * counts[2])
    genres = [genres[i] for i in rng.permutation(len(genres))]
    records, utts = [], []
    width = max(4, len(str(n_lines)))
    for i, genre in enumerate(genres):
        uid = f"{prefix}{i:0{width}d}"
        words = list(rng.choice(LEXICON, size=int(rng.integers(words_per_line[0], words_per_line[1] + 1))))
        tag = _TAGS[genre][int(rng.integers(len(_TAGS[genre])))]
        audio = render_line(words, genre, rng)
        rel = f"wav/{uid}.wav"
        write_wav(outdir / rel, AudioBuffer(audio))
        text = " ".join(words)
        records.append({"id": uid, "audio": rel, "text": text, "genre": tag})
        utts.append(Utterance(uid, str(outdir / rel), text, genre, tag))
    manifest = outdir / "manifest.jsonl"
    write_manifest(manifest, records)
    return manifest, utts
