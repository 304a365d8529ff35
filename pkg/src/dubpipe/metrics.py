"""Evaluation metrics: WER, corpus BLEU-4, lip-sync error metrics over
pluggable embeddings, Frechet distance between embedding sets, and the
lip-generation composite loss.

The lip-sync and Frechet metrics operate on supplied embedding sequences;
``reference_embedders`` provides a desk-scale stand-in pair (audio RMS vs
measured mouth aperture) so the metrics are exercisable without any
neural embedder.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .media_io import AudioBuffer, FaceTrack, FrameSequence
from .stages import MOUTH_HEIGHT_FRAC, MOUTH_WIDTH_FRAC, frame_window_rms


@dataclass
class EmbeddingSequence:
    """T x dim real matrix, one vector per video frame."""

    dim: int
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[1] != self.dim:
            raise ValidationError(f"vectors must be T x {self.dim}")
        if self.vectors.size and not np.all(np.isfinite(self.vectors)):
            raise ValidationError("embedding vectors must be finite")

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class LossTerms:
    l_cgan: float
    l_img: float
    l_sync: float
    alpha: float = 1.0
    beta: float = 0.05

    def __post_init__(self):
        for name in ("l_cgan", "l_img", "l_sync"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be a non-negative finite real")


def wer(reference, hypothesis) -> float:
    """Word error rate: unit-cost Levenshtein distance over |reference|.

    Case-sensitive, no text normalization; the reference must be non-empty.
    """
    ref = list(reference)
    hyp = list(hypothesis)
    if not ref:
        raise ValidationError("WER reference must be non-empty")
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(
                prev[j] + 1,  # deletion
                cur[j - 1] + 1,  # insertion
                prev[j - 1] + (r != h),  # substitution
            )
        prev = cur
    return prev[-1] / len(ref)


def _ngrams(words, n):
    return Counter(tuple(words[i : i + n]) for i in range(len(words) - n + 1))


def bleu(references, hypotheses, max_n: int = 4) -> float:
    """Corpus BLEU with one reference per segment, no smoothing.

    Geometric mean of clipped modified n-gram precisions (n = 1..max_n)
    times the brevity penalty exp(min(0, 1 - ref_len/hyp_len)); any zero
    precision zeroes the score.
    """
    refs = [list(r) for r in references]
    hyps = [list(h) for h in hypotheses]
    if not refs or len(refs) != len(hyps):
        raise ValidationError("BLEU needs equal, non-empty reference and hypothesis corpora")
    matched = [0] * max_n
    total = [0] * max_n
    ref_len = hyp_len = 0
    for ref, hyp in zip(refs, hyps):
        ref_len += len(ref)
        hyp_len += len(hyp)
        for n in range(1, max_n + 1):
            hyp_counts = _ngrams(hyp, n)
            ref_counts = _ngrams(ref, n)
            total[n - 1] += sum(hyp_counts.values())
            matched[n - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    if any(t == 0 or m == 0 for m, t in zip(matched, total)):
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matched, total)) / max_n
    brevity = math.exp(min(0.0, 1.0 - ref_len / hyp_len))
    return brevity * math.exp(log_precision)


@dataclass(frozen=True)
class LseResult:
    lse_d: float
    lse_c: float
    best_offset: int


def lse(video_emb: EmbeddingSequence, audio_emb: EmbeddingSequence, max_offset: int = 15) -> LseResult:
    """Lip-sync error distance/confidence over a temporal offset search.

    For every video frame t whose full offset window [t-max_offset,
    t+max_offset] lies inside the audio sequence, D(t, o) is the Euclidean
    distance between the video vector at t and the audio vector at t+o.
    lse_d averages the per-frame minima; lse_c averages the margin between
    the per-frame mean and minimum (larger = more confident).
    ``best_offset`` is the offset minimizing the mean distance.
    """
    if video_emb.dim != audio_emb.dim:
        raise ValidationError("embedding dimensions differ")
    tv, ta = len(video_emb), len(audio_emb)
    if tv == 0 or ta == 0:
        raise ValidationError("embedding sequences must be non-empty")
    t_lo = max_offset
    t_hi = min(tv - 1, ta - 1 - max_offset)
    if t_hi < t_lo:
        raise ValidationError("no frame has full offset coverage")
    ts = np.arange(t_lo, t_hi + 1)
    offsets = np.arange(-max_offset, max_offset + 1)
    # distances: frames x offsets
    diffs = video_emb.vectors[ts][:, None, :] - audio_emb.vectors[ts[:, None] + offsets[None, :]]
    dist = np.sqrt((diffs**2).sum(axis=2))
    mins = dist.min(axis=1)
    lse_d = float(mins.mean())
    lse_c = float((dist.mean(axis=1) - mins).mean())
    best = int(offsets[np.argmin(dist.mean(axis=0))])
    return LseResult(lse_d, lse_c, best)


def _sqrt_psd(matrix: np.ndarray) -> np.ndarray:
    sym = (matrix + matrix.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(sym)
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def fid(set_a: EmbeddingSequence, set_b: EmbeddingSequence) -> float:
    """Frechet distance between Gaussian fits of two embedding sets.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)) with unbiased
    covariances; the matrix square root is taken via eigendecomposition of
    the symmetrized product S_a^(1/2) S_b S_a^(1/2) with negative
    eigenvalues clamped at zero, and the result is clamped at zero.
    """
    if set_a.dim != set_b.dim:
        raise ValidationError("embedding dimensions differ")
    if len(set_a) < 2 or len(set_b) < 2:
        raise ValidationError("FID needs at least 2 vectors per set")
    mu_a = set_a.vectors.mean(axis=0)
    mu_b = set_b.vectors.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(set_a.vectors, rowvar=False, ddof=1))
    cov_b = np.atleast_2d(np.cov(set_b.vectors, rowvar=False, ddof=1))
    root_a = _sqrt_psd(cov_a)
    inner = root_a @ cov_b @ root_a
    eigvals = np.clip(np.linalg.eigvalsh((inner + inner.T) / 2.0), 0.0, None)
    tr_sqrt = float(np.sqrt(eigvals).sum())
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)
    return max(value, 0.0)


def l1_image_loss(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute pixel difference with channels scaled to [0, 1]."""
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a.astype(np.float64) - b.astype(np.float64))) / 255.0)


def combine_lipgen_loss(terms: LossTerms) -> float:
    """Composite lip-generation loss: adversarial + alpha*image + beta*sync."""
    return terms.l_cgan + terms.alpha * terms.l_img + terms.beta * terms.l_sync


def reference_embedders(
    audio: AudioBuffer,
    frames: FrameSequence,
    track: FaceTrack,
    cfg=None,
) -> tuple:
    """Desk-scale 1-D embedding pair for lip-sync evaluation.

    Audio: per-frame-period RMS normalized by its maximum (zero when
    silent). Video: the mouth aperture fraction measured from pure-black
    ellipse pixels in the lower half of each face box (assumes frames were
    produced by the energy lip generator, whose background is non-black).
    ``cfg`` is accepted for embedder-protocol parity and unused here.
    """
    n = len(frames)
    rms = frame_window_rms(audio, frames.frame_rate, n)
    peak = rms.max() if n else 0.0
    audio_vals = rms / peak if peak >= 1e-9 else np.zeros(n)

    video_vals = np.zeros(n)
    for f in range(n):
        box = track.box_for(f)
        if box is None:
            continue
        row_lo = box.y + box.h // 2
        region = frames.frames[f][row_lo : box.y + box.h, box.x : box.x + box.w]
        black = np.all(region == 0, axis=2).sum()
        if black == 0:
            continue
        semi_x = (MOUTH_WIDTH_FRAC * box.w) / 2.0
        # invert ellipse area = pi * semi_x * semi_y for the drawn height
        semi_y = black / (math.pi * semi_x)
        video_vals[f] = min(semi_y / ((MOUTH_HEIGHT_FRAC * box.h) / 2.0), 1.0)
    return (
        EmbeddingSequence(1, audio_vals[:, None]),
        EmbeddingSequence(1, video_vals[:, None]),
    )


# --- serialization ----------------------------------------------------------


def emb_to_text(emb: EmbeddingSequence) -> str:
    lines = [f"emb v1 {emb.dim} {len(emb)}"]
    for row in emb.vectors:
        lines.append(" ".join(f"{v:.9g}" for v in row))
    return "\n".join(lines) + "\n"


def emb_from_text(text: str) -> EmbeddingSequence:
    lines = text.strip().splitlines()
    if not lines:
        raise FormatError("empty embedding payload")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "emb" or head[1] != "v1":
        raise FormatError(f"bad embedding header: {lines[0]!r}")
    try:
        dim, t = int(head[2]), int(head[3])
    except ValueError:
        raise FormatError(f"bad embedding header: {lines[0]!r}") from None
    if len(lines) - 1 != t:
        raise FormatError(f"embedding payload has {len(lines) - 1} rows, header says {t}")
    if t == 0:
        return EmbeddingSequence(dim, np.zeros((0, dim)))
    try:
        rows = np.array([[float(v) for v in line.split()] for line in lines[1:]])
    except ValueError:
        raise FormatError("non-numeric embedding row") from None
    if rows.shape != (t, dim):
        raise FormatError("embedding row width does not match header")
    return EmbeddingSequence(dim, rows)


def write_emb(emb: EmbeddingSequence, path) -> None:
    Path(path).write_text(emb_to_text(emb))


def read_emb(path) -> EmbeddingSequence:
    return emb_from_text(Path(path).read_text())
