"""Word and character error rates, a signed-rank significance test, and
end-to-end evaluation of predicted fluent audio through the reference
transcriber.

Error rates are Levenshtein alignments under unit costs.  The significance
test is exact (full sign enumeration) for small samples and a tie-corrected
normal approximation otherwise.
"""

from __future__ import annotations

import csv
import math
import string
from dataclasses import dataclass, field

import numpy as np

from . import corpus as cp
from . import frontend as fe


class MetricsError(ValueError):
    pass


@dataclass
class EditOps:
    substitutions: int
    deletions: int
    insertions: int
    reference_len: int

    @property
    def total(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def edit_distance(ref, hyp) -> EditOps:
    """Minimal-cost alignment of two symbol sequences under unit costs.

    Backtracking prefers substitution over deletion over insertion when
    several alignments share the minimal cost.
    """
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i, j] = min(sub, d[i - 1, j] + 1, d[i, j - 1] + 1)
    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            subs += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditOps(int(subs), int(dels), int(ins), n)


_PUNCT_TABLE = str.maketrans("", "", string.punctuation.replace("'", ""))


def normalize_text(text: str) -> str:
    """Lowercase, strip punctuation except apostrophes, collapse whitespace."""
    return " ".join(text.lower().translate(_PUNCT_TABLE).split())


def wer(ref_text: str, hyp_text: str) -> float:
    ref = normalize_text(ref_text).split()
    hyp = normalize_text(hyp_text).split()
    ops = edit_distance(ref, hyp)
    return ops.total / max(1, ops.reference_len)


def cer(ref_text: str, hyp_text: str) -> float:
    ref = list(normalize_text(ref_text))
    hyp = list(normalize_text(hyp_text))
    ops = edit_distance(ref, hyp)
    return ops.total / max(1, ops.reference_len)


# -- Wilcoxon signed-rank test --------------------------------------------

EXACT_N_MAX = 12


@dataclass
class WilcoxonResult:
    statistic: float
    p_value: float
    n: int
    method: str  # "exact" or "approx"
    zeros_dropped: int


def _signed_ranks(diffs: np.ndarray):
    order = np.argsort(np.abs(diffs), kind="stable")
    ranks = np.empty(len(diffs))
    sorted_abs = np.abs(diffs)[order]
    i = 0
    while i < len(diffs):
        j = i
        while j + 1 < len(diffs) and sorted_abs[j + 1] == sorted_abs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average rank over the tie
        i = j + 1
    return ranks


def wilcoxon_signed_rank(a, b) -> WilcoxonResult:
    """Two-sided paired test on per-sample scores a vs b.

    Zero differences are dropped before ranking.  For n <= 12 the p-value is
    exact over all 2^n sign assignments of the observed ranks; beyond that a
    normal approximation with tie-corrected variance and continuity correction
    is used.  The reported statistic is W = min(W+, W-).
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricsError("paired scores must be equal-length 1-D sequences")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise MetricsError("paired scores must be finite")
    diffs = a - b
    zeros = int(np.sum(diffs == 0.0))
    diffs = diffs[diffs != 0.0]
    n = len(diffs)
    if n < 5:
        raise MetricsError(f"n < 5 after zero removal (n = {n})")
    ranks = _signed_ranks(diffs)
    w_plus = float(ranks[diffs > 0].sum())
    w_minus = float(ranks[diffs < 0].sum())
    w_obs = min(w_plus, w_minus)
    total = n * (n + 1) / 2.0
    if n <= EXACT_N_MAX:
        hits = 0
        for bits in range(1 << n):
            wp = sum(ranks[k] for k in range(n) if bits >> k & 1)
            if min(wp, total - wp) <= w_obs + 1e-12:
                hits += 1
        return WilcoxonResult(w_obs, hits / float(1 << n), n, "exact", zeros)
    mu = total / 2.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, counts = np.unique(np.abs(diffs), return_counts=True)
    var -= float(np.sum(counts ** 3 - counts)) / 48.0
    if var <= 0:
        raise MetricsError("zero variance after tie correction")
    z = (abs(w_plus - mu) - 0.5) / math.sqrt(var)  # continuity correction
    p = min(1.0, math.erfc(max(0.0, z) / math.sqrt(2.0)))
    return WilcoxonResult(w_obs, p, n, "approx", zeros)


# -- end-to-end evaluation -------------------------------------------------

@dataclass
class EvalRow:
    id: str
    wer_audio: float
    cer_audio: float
    wer_text: float
    cer_text: float


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (id, message)

    def summary(self) -> dict:
        out = {}
        for key in ("wer_audio", "cer_audio", "wer_text", "cer_text"):
            vals = np.array([getattr(r, key) for r in self.rows], dtype=float)
            if len(vals):
                out[key] = (float(vals.mean()), float(vals.std()))
            else:
                out[key] = (float("nan"), float("nan"))
        return out

    def values(self, key: str) -> list:
        return [getattr(r, key) for r in self.rows]


def infer_sample(model, stuttered: fe.Waveform, lex=None, fb=None, stft_cfg=None,
                 griffin_lim_iters: int = 60):
    """Stuttered waveform -> (predicted fluent waveform, predicted transcript).

    The predicted frames are de-normalized with the input utterance's own
    feature statistics before phase reconstruction.
    """
    lex = lex or cp.Lexicon()
    stft_cfg = stft_cfg or fe.StftConfig()
    fb = fb or fe.build_mel_filterbank(n_mels=model.cfg.n_mels, cfg=stft_cfg)
    mel = fe.log_mel(stuttered, fb, stft_cfg)
    enc = model.encode(mel.values, training=False)
    denorm = (mel.mean, mel.scale)
    out = model.decode_spectrogram(enc, n_input_frames=mel.n_frames, denorm=denorm)
    frames = (out[0] if isinstance(out, tuple) else out).data
    pred_mel = fe.LogMelSpectrogram(np.asarray(frames, dtype=np.float64),
                                    mel.mean, mel.scale)
    mag = fe.mel_to_linear(pred_mel, fb, stft_cfg)
    audio = fe.griffin_lim(mag, stft_cfg, n_iters=griffin_lim_iters)
    _, pred_ids = model.decode_transcript(enc)
    return audio, cp.detokenize(pred_ids)


def evaluate_model(model, samples, lex=None) -> EvalReport:
    """Free-running decode of every sample; scores audio and text paths.

    Audio path: predicted frames -> linear magnitude -> phase reconstruction ->
    reference transcriber -> WER/CER against the ground-truth transcript.
    Text path: the transcript decoder's own greedy output.
    Samples that fail to decode are recorded and excluded from the means.
    """
    lex = lex or cp.Lexicon()
    stft_cfg = fe.StftConfig()
    fb = fe.build_mel_filterbank(n_mels=model.cfg.n_mels, cfg=stft_cfg)
    report = EvalReport()
    for s in sorted(samples, key=lambda s: s.id):
        try:
            audio, pred_text = infer_sample(model, s.stuttered, lex, fb, stft_cfg)
            heard = cp.oracle_transcribe(audio, lex)
        except Exception as exc:  # noqa: BLE001 - per-sample isolation
            report.failures.append((s.id, str(exc)))
            continue
        report.rows.append(EvalRow(
            id=s.id,
            wer_audio=wer(s.transcript, heard),
            cer_audio=cer(s.transcript, heard),
            wer_text=wer(s.transcript, pred_text),
            cer_text=cer(s.transcript, pred_text),
        ))
    return report


def write_report(report: EvalReport, path, significance: WilcoxonResult | None = None) -> None:
    """Per-sample CSV plus a summary block of mean +/- std per metric."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "wer_audio", "cer_audio", "wer_text", "cer_text"])
        for r in report.rows:
            w.writerow([r.id, f"{r.wer_audio:.6f}", f"{r.cer_audio:.6f}",
                        f"{r.wer_text:.6f}", f"{r.cer_text:.6f}"])
        w.writerow([])
        for key, (mean, std) in report.summary().items():
            w.writerow(["summary", key, f"{mean:.6f}", f"{std:.6f}"])
        w.writerow(["summary", "decode_failures", len(report.failures), ""])
        if significance is not None:
            w.writerow(["significance", "statistic", f"{significance.statistic:.6f}", ""])
            w.writerow(["significance", "n", significance.n, significance.method])
            w.writerow(["significance", "p_value", f"{significance.p_value:.6e}",
                        f"zeros_dropped={significance.zeros_dropped}"])
