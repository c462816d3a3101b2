"""Synthetic paired (stuttered, fluent, transcript) corpus generation.

Each grapheme is rendered as a fixed two-tone signature so a deterministic
matched-filter transcriber exists for evaluation.  All signature frequencies
are multiples of 100 Hz, which makes every grapheme waveform periodic with a
10 ms period and lets prolongation stretching splice whole periods without
discontinuities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .frontend import DEFAULT_SAMPLE_RATE, Waveform, read_wav, write_wav


class CorpusError(ValueError):
    pass


class DisfluencyKind(str, Enum):
    SOUND_REP = "SoundRep"
    WORD_REP = "WordRep"
    INTERJECTION = "Interjection"
    BLOCK = "Block"
    PROLONGATION = "Prolongation"


@dataclass
class DisfluencyEvent:
    kind: DisfluencyKind
    word_index: int
    repeats: int = 1           # SoundRep / WordRep: extra copies, 1-4
    stretch: float = 2.0       # Prolongation: 1.5-3.0
    pause_ms: float = 400.0    # Block: 200-800 ms

    def __post_init__(self):
        if self.kind in (DisfluencyKind.SOUND_REP, DisfluencyKind.WORD_REP):
            if not 1 <= self.repeats <= 4:
                raise CorpusError("repeats must be in 1..4")
        if self.kind is DisfluencyKind.PROLONGATION and not 1.5 <= self.stretch <= 3.0:
            raise CorpusError("stretch must be in 1.5..3.0")
        if self.kind is DisfluencyKind.BLOCK and not 200.0 <= self.pause_ms <= 800.0:
            raise CorpusError("pause must be in 200..800 ms")


DEFAULT_WORDS = [
    "bat", "cat", "dog", "fan", "gap", "hat", "jam", "kit",
    "lid", "map", "net", "pan", "rat", "sun", "tap", "van",
    "web", "yam", "zip", "cup", "fog", "hen", "mud", "pit",
]

GRAPHEMES = "abcdefghijklmnopqrstuvwxyz'"

# Token vocabulary shared with the transcript decoders.
PAD, SOS, EOS, UNK = 0, 1, 2, 3
VOCAB = ["<pad>", "<sos>", "<eos>", "<unk>", " ", "'"] + list("abcdefghijklmnopqrstuvwxyz")
VOCAB_SIZE = len(VOCAB)
_CHAR_TO_ID = {c: i for i, c in enumerate(VOCAB)}


@dataclass
class Lexicon:
    words: list = field(default_factory=lambda: list(DEFAULT_WORDS))
    grapheme_ms: float = 60.0
    crossfade_ms: float = 5.0
    word_gap_ms: float = 80.0
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if not self.words or any(not w for w in self.words):
            raise CorpusError("lexicon words must be nonempty")
        # f1 in 400..3000 Hz, f2 in 3700..6300 Hz, all multiples of 100 Hz:
        # pairwise distinct and separated by far more than 2 FFT bins (31.25 Hz).
        self.signatures = {
            g: (400.0 + 100.0 * i, 3700.0 + 100.0 * i) for i, g in enumerate(GRAPHEMES)
        }

    @property
    def grapheme_len(self) -> int:
        return int(round(self.grapheme_ms * self.sample_rate_hz / 1000.0))

    @property
    def crossfade_len(self) -> int:
        return int(round(self.crossfade_ms * self.sample_rate_hz / 1000.0))

    @property
    def word_gap_len(self) -> int:
        return int(round(self.word_gap_ms * self.sample_rate_hz / 1000.0))

    @property
    def period_len(self) -> int:
        return self.sample_rate_hz // 100  # all signature tones repeat every 10 ms


@dataclass
class PairedSample:
    id: str
    stuttered: Waveform
    fluent: Waveform
    transcript: str
    events: list


EDGE_SILENCE_MS = 80.0


def _grapheme_tone(g: str, lex: Lexicon) -> np.ndarray:
    if g not in lex.signatures:
        raise CorpusError(f"unknown grapheme: {g!r}")
    f1, f2 = lex.signatures[g]
    t = np.arange(lex.grapheme_len) / lex.sample_rate_hz
    return 0.4 * np.sin(2 * np.pi * f1 * t) + 0.4 * np.sin(2 * np.pi * f2 * t)


def _render_word(word: str, lex: Lexicon):
    """Render one word; returns (samples, grapheme spans relative to word start)."""
    d, x = lex.grapheme_len, lex.crossfade_len
    n = len(word)
    total = n * d - (n - 1) * x
    out = np.zeros(total)
    spans = []
    fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(x) / x)  # raised cosine 0->1
    for k, g in enumerate(word):
        seg = _grapheme_tone(g, lex).copy()
        if k > 0:
            seg[:x] *= fade
        if k < n - 1:
            seg[-x:] *= fade[::-1]
        off = k * (d - x)
        out[off:off + d] += seg
        spans.append((off, off + d))
    return out, spans


def render_fluent(text: str, lex: Lexicon) -> Waveform:
    samples, _, _ = _render_with_spans(text, lex)
    return Waveform(samples, lex.sample_rate_hz)


def _render_with_spans(text: str, lex: Lexicon):
    """Returns (samples, word spans, per-word grapheme spans), spans in absolute samples."""
    words = text.split()
    edge = int(round(EDGE_SILENCE_MS * lex.sample_rate_hz / 1000.0))
    if not words:
        return np.zeros(0), [], []
    chunks, word_spans, grapheme_spans = [], [], []
    pos = edge
    chunks.append(np.zeros(edge))
    for i, word in enumerate(words):
        if i > 0:
            chunks.append(np.zeros(lex.word_gap_len))
            pos += lex.word_gap_len
        samples, spans = _render_word(word, lex)
        word_spans.append((pos, pos + len(samples)))
        grapheme_spans.append([(pos + a, pos + b) for a, b in spans])
        chunks.append(samples)
        pos += len(samples)
    chunks.append(np.zeros(edge))
    return np.concatenate(chunks), word_spans, grapheme_spans


def _insertion_for_event(ev: DisfluencyEvent, samples, word_spans, grapheme_spans,
                         text: str, lex: Lexicon):
    """Compute (position, inserted samples) for one event against the fluent render."""
    words = text.split()
    if not 0 <= ev.word_index < len(words):
        raise CorpusError(f"word index {ev.word_index} out of range")
    w_start, w_end = word_spans[ev.word_index]
    g_spans = grapheme_spans[ev.word_index]
    gap_50 = np.zeros(int(0.050 * lex.sample_rate_hz))
    gap_120 = np.zeros(int(0.120 * lex.sample_rate_hz))
    if ev.kind is DisfluencyKind.SOUND_REP:
        a, b = g_spans[0]
        seg = samples[a:b]
        parts = []
        for _ in range(ev.repeats):
            parts.extend([seg, gap_50])
        return w_start, np.concatenate(parts)
    if ev.kind is DisfluencyKind.WORD_REP:
        seg = samples[w_start:w_end]
        parts = []
        for _ in range(ev.repeats):
            parts.extend([seg, gap_120])
        return w_start, np.concatenate(parts)
    if ev.kind is DisfluencyKind.INTERJECTION:
        um, _ = _render_word("um", lex)
        return w_start, np.concatenate([um, gap_120])
    if ev.kind is DisfluencyKind.BLOCK:
        pause = np.zeros(int(round(ev.pause_ms * lex.sample_rate_hz / 1000.0)))
        if len(g_spans) >= 2:
            point = g_spans[len(g_spans) // 2][0]
        else:
            point = (w_start + w_end) // 2
        return point, pause
    if ev.kind is DisfluencyKind.PROLONGATION:
        a, b = g_spans[0]
        period = lex.period_len
        point = a + 3 * period  # inside the steady region, on a period boundary
        extra = (ev.stretch - 1.0) * lex.grapheme_len
        n_periods = max(1, int(round(extra / period)))
        tile = samples[point - period:point]
        return point, np.tile(tile, n_periods)
    raise CorpusError(f"unhandled kind {ev.kind}")


def apply_disfluency(fluent: Waveform, text: str, ev: DisfluencyEvent,
                     lex: Lexicon) -> Waveform:
    samples, word_spans, grapheme_spans = _render_with_spans(text, lex)
    pos, ins = _insertion_for_event(ev, samples, word_spans, grapheme_spans, text, lex)
    out = np.concatenate([fluent.samples[:pos], ins, fluent.samples[pos:]])
    return Waveform(out, lex.sample_rate_hz)


def apply_disfluencies(text: str, events, lex: Lexicon) -> Waveform:
    """Apply several events to a fluent render, back-to-front so spans stay valid."""
    samples, word_spans, grapheme_spans = _render_with_spans(text, lex)
    insertions = [_insertion_for_event(ev, samples, word_spans, grapheme_spans, text, lex)
                  for ev in events]
    out = samples
    for pos, ins in sorted(insertions, key=lambda pi: pi[0], reverse=True):
        out = np.concatenate([out[:pos], ins, out[pos:]])
    return Waveform(out, lex.sample_rate_hz)


_KIND_CYCLE = [DisfluencyKind.SOUND_REP, DisfluencyKind.WORD_REP,
               DisfluencyKind.INTERJECTION, DisfluencyKind.BLOCK,
               DisfluencyKind.PROLONGATION]


def generate_corpus(n: int, lex: Lexicon | None = None, seed: int = 0,
                    balance: bool = False) -> list[PairedSample]:
    """Deterministic corpus of paired samples; sentences of 3-8 lexicon words,
    1-3 disfluency events each.  With balance, event-kind counts differ by <= 1."""
    lex = lex or Lexicon()
    if balance and n >= 1 and n < 5:
        raise CorpusError("need n >= 5 to balance categories")
    rng = np.random.default_rng(seed)
    samples = []
    kind_counter = 0
    for i in range(n):
        n_words = int(rng.integers(3, 9))
        words = []
        while len(words) < n_words:
            w = lex.words[int(rng.integers(len(lex.words)))]
            if words and words[-1] == w:
                continue  # adjacent duplicates would read as a word repetition
            words.append(w)
        text = " ".join(words)
        n_events = int(rng.integers(1, 4))
        events = []
        for _ in range(n_events):
            if balance:
                kind = _KIND_CYCLE[kind_counter % len(_KIND_CYCLE)]
                kind_counter += 1
            else:
                kind = _KIND_CYCLE[int(rng.integers(len(_KIND_CYCLE)))]
            ev = DisfluencyEvent(
                kind=kind,
                word_index=int(rng.integers(n_words)),
                repeats=int(rng.integers(1, 5)),
                stretch=float(rng.uniform(1.5, 3.0)),
                pause_ms=float(rng.uniform(200.0, 800.0)),
            )
            events.append(ev)
        fluent = render_fluent(text, lex)
        stuttered = apply_disfluencies(text, events, lex)
        samples.append(PairedSample(f"sample{i:04d}", stuttered, fluent, text, events))
    return samples


# -- tokenization ----------------------------------------------------------

def tokenize(text: str) -> list:
    ids = [SOS]
    for ch in text:
        ids.append(_CHAR_TO_ID.get(ch, UNK))
    ids.append(EOS)
    return ids


def detokenize(ids) -> str:
    out = []
    for i in ids:
        i = int(i)
        if i in (SOS, PAD):
            continue
        if i == EOS:
            break
        out.append("?" if i == UNK else VOCAB[i])
    return "".join(out)


# -- matched-filter oracle transcriber -------------------------------------

_ORACLE_WIN = 400   # 25 ms
_ORACLE_HOP = 80    # 5 ms
_MIN_RUN_FRAMES = 4
_WORD_GAP_FRAMES = 8


def _edit_distance_str(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[-1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def oracle_transcribe(w: Waveform, lex: Lexicon | None = None) -> str:
    """Decode synthetic two-tone audio back to text.

    Frame-wise signature matching, run collapsing, silence-based word
    segmentation, then nearest-lexicon-word snapping.  Exact on clean
    render_fluent output; best effort on anything else.
    """
    lex = lex or Lexicon()
    x = w.samples
    if len(x) < _ORACLE_WIN:
        return ""
    n_frames = 1 + (len(x) - _ORACLE_WIN) // _ORACLE_HOP
    idx = np.arange(_ORACLE_WIN)[None, :] + _ORACLE_HOP * np.arange(n_frames)[:, None]
    frames = x[idx]
    window = np.hanning(_ORACLE_WIN)
    graphemes = list(lex.signatures)
    freqs = np.array([f for g in graphemes for f in lex.signatures[g]])
    basis = np.exp(-2j * np.pi * freqs[:, None] * np.arange(_ORACLE_WIN) / lex.sample_rate_hz)
    energies = np.abs((frames * window) @ basis.T)  # (frames, 2 * n_graphemes)
    scores = energies.reshape(n_frames, len(graphemes), 2).sum(axis=2)
    rms = np.sqrt(np.mean(frames ** 2, axis=1))
    thr = 0.1 * np.percentile(rms, 95)
    labels = np.argmax(scores, axis=1)
    labels[rms < max(thr, 1e-6)] = -1  # silence

    # collapse runs; drop blips shorter than _MIN_RUN_FRAMES
    runs = []
    start = 0
    for i in range(1, n_frames + 1):
        if i == n_frames or labels[i] != labels[start]:
            runs.append((labels[start], i - start))
            start = i
    words, current = [], []
    for label, length in runs:
        if label == -1:
            if length >= _WORD_GAP_FRAMES and current:
                words.append("".join(current))
                current = []
            continue
        if length < _MIN_RUN_FRAMES:
            continue
        if current and current[-1] == graphemes[label]:
            continue
        current.append(graphemes[label])
    if current:
        words.append("".join(current))

    snap_vocab = list(lex.words) + ["um"]
    out = []
    for word in words:
        dists = [(_edit_distance_str(word, cand), k) for k, cand in enumerate(snap_vocab)]
        best_d, best_k = min(dists)
        out.append(snap_vocab[best_k] if best_d <= max(1, len(word) // 2) else word)
    return " ".join(out)


# -- corpus and manifest I/O ------------------------------------------------

def load_manifest(path):
    """Read `<wav path>\\t<transcript>` records; validates that files exist."""
    path = Path(path)
    records = []
    problems = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise CorpusError(f"{path}:{lineno}: malformed line (no tab separator)")
            wav, transcript = line.split("\t", 1)
            wav_path = path.parent / wav
            if not wav_path.exists():
                problems.append(f"{path}:{lineno}: missing file {wav}")
                continue
            records.append((wav_path, transcript))
    if problems:
        raise CorpusError("; ".join(problems))
    return records


def write_corpus(samples, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for s in samples:
        stut = f"{s.id}_stuttered.wav"
        flu = f"{s.id}_fluent.wav"
        write_wav(s.stuttered, out_dir / stut)
        write_wav(s.fluent, out_dir / flu)
        kinds = ",".join(ev.kind.value for ev in s.events)
        lines.append(f"{s.id}\t{stut}\t{flu}\t{s.transcript}\t{kinds}\n")
    with open(out_dir / "manifest.tsv", "w", encoding="utf-8") as fh:
        fh.writelines(lines)


def read_corpus(corpus_dir) -> list[PairedSample]:
    corpus_dir = Path(corpus_dir)
    manifest = corpus_dir / "manifest.tsv"
    if not manifest.exists():
        raise CorpusError(f"no manifest.tsv in {corpus_dir}")
    samples = []
    with open(manifest, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise CorpusError(f"{manifest}:{lineno}: expected 5 tab-separated fields")
            sid, stut, flu, transcript, kinds = parts
            events = [DisfluencyEvent(DisfluencyKind(k), 0)
                      for k in kinds.split(",") if k]
            samples.append(PairedSample(
                sid, read_wav(corpus_dir / stut), read_wav(corpus_dir / flu),
                transcript, events))
    return samples
