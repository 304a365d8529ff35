"""Deterministic reference implementations of every cascade stage.

These stand in for the neural models so the full pipeline runs and is
testable end to end: an energy-heuristic ASR emphasis detector over a
provided transcript, a bilingual-lexicon word-for-word MT that exposes
one-hot attention, a harmonic toy TTS driven by the prosody module, a
long-term-average-spectrum voice conversion, and an audio-energy lip
overlay. Every stage is a pure function of its inputs and seed; none of
the constants here (z-score threshold, harmonic amplitudes, pitch contour,
ellipse geometry) carries any authority beyond determinism and
testability, and all are exposed as parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import align, ssml
from .dsp import MelSpectrogram, SpectrogramConfig, griffin_lim, mel_spectrogram
from .errors import FormatError, ValidationError
from .media_io import AudioBuffer, FaceTrack, FrameSequence
from .prosody import (
    EmphasisPolicy,
    Phoneme,
    PhonemeProsody,
    WordSpans,
    apply_emphasis,
    length_regulate,
)

# --- transcripts ------------------------------------------------------------


@dataclass(frozen=True)
class TimedWord:
    text: str
    start_s: float
    end_s: float
    emphasized: bool = False

    def __post_init__(self):
        if not self.text:
            raise ValidationError("transcript words must be non-empty")
        if not (0 <= self.start_s < self.end_s):
            raise ValidationError(f"bad word timing [{self.start_s}, {self.end_s})")


@dataclass
class EmphasisTranscript:
    """Timed words with binary emphasis flags, ordered and non-overlapping."""

    words: list = field(default_factory=list)
    language: str = "en"

    def __post_init__(self):
        for prev, cur in zip(self.words, self.words[1:]):
            if cur.start_s < prev.end_s:
                raise ValidationError(
                    f"words overlap: [{prev.start_s}, {prev.end_s}) then [{cur.start_s}, {cur.end_s})"
                )

    def texts(self) -> list:
        return [w.text for w in self.words]

    def emphasized_indices(self) -> set:
        return {i for i, w in enumerate(self.words) if w.emphasized}


def transcript_to_text(transcript: EmphasisTranscript) -> str:
    doc = {
        "language": transcript.language,
        "words": [
            {"text": w.text, "start_s": w.start_s, "end_s": w.end_s, "emphasized": w.emphasized}
            for w in transcript.words
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def transcript_from_text(text: str) -> EmphasisTranscript:
    try:
        doc = json.loads(text)
        words = [
            TimedWord(
                str(w["text"]),
                float(w["start_s"]),
                float(w["end_s"]),
                bool(w.get("emphasized", False)),
            )
            for w in doc.get("words", [])
        ]
        return EmphasisTranscript(words, str(doc.get("language", "en")))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed transcript: {exc}") from None


def read_transcript(path) -> EmphasisTranscript:
    return transcript_from_text(Path(path).read_text())


def write_transcript(transcript: EmphasisTranscript, path) -> None:
    Path(path).write_text(transcript_to_text(transcript))


# --- reference ASR ----------------------------------------------------------


def stub_asr(
    audio: AudioBuffer,
    transcript: EmphasisTranscript,
    z_threshold: float = 1.0,
) -> EmphasisTranscript:
    """Flag words whose RMS stands out from the rest of the utterance.

    A word is emphasized when the z-score of its RMS over all words (using
    the population standard deviation) exceeds ``z_threshold``. A flat
    utterance (sigma < 1e-9) emphasizes nothing. Word text and timing pass
    through unchanged.
    """
    if not transcript.words:
        return EmphasisTranscript([], transcript.language)
    mono = audio.to_mono()
    n = mono.frame_count
    rms = []
    for w in transcript.words:
        lo = int(math.floor(w.start_s * audio.sample_rate))
        hi = int(math.floor(w.end_s * audio.sample_rate))
        if hi > n or lo >= hi:
            raise ValidationError(
                f"word {w.text!r} spans [{w.start_s}, {w.end_s})s outside the audio"
            )
        rms.append(float(np.sqrt(np.mean(mono.samples[lo:hi] ** 2))))
    rms = np.asarray(rms)
    sigma = float(rms.std())
    if sigma < 1e-9:
        flags = [False] * len(rms)
    else:
        flags = list((rms - rms.mean()) / sigma > z_threshold)
    words = [
        TimedWord(w.text, w.start_s, w.end_s, bool(f))
        for w, f in zip(transcript.words, flags)
    ]
    return EmphasisTranscript(words, transcript.language)


# --- reference MT -----------------------------------------------------------


@dataclass
class LexiconMtConfig:
    """Bilingual word lexicon; keys case-folded, unknown words pass through."""

    lexicon: dict = field(default_factory=dict)
    target_language: str = "de"
    n_heads: int = 8

    def __post_init__(self):
        folded = {}
        for key, value in self.lexicon.items():
            folded.setdefault(key.casefold(), value)  # first entry wins
        self.lexicon = folded

    @classmethod
    def load(cls, path, **kwargs) -> "LexiconMtConfig":
        """Read `source target` lines; '#' starts a comment."""
        pairs = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'source target'")
            pairs.append(parts)
        cfg = cls(**kwargs)
        for src, tgt in pairs:
            cfg.lexicon.setdefault(src.casefold(), tgt)
        return cfg

    def translate_word(self, word: str) -> str:
        return self.lexicon.get(word.casefold(), word)


@dataclass
class MtResult:
    target_words: list
    attention: align.AttentionStack
    emphasized_target: set


def lexicon_mt(src: EmphasisTranscript, cfg: LexiconMtConfig) -> MtResult:
    """Monotone word-for-word translation with one-hot attention.

    Emits ``n_heads`` identical probability heads, each the one-hot matrix
    of the monotone alignment, and derives target emphasis by running the
    normalize/average/argmax transfer path on that stack — the same path a
    real attention stack would take.
    """
    words = src.texts()
    target = [cfg.translate_word(w) for w in words]
    n = len(words)
    head = np.eye(n)
    stack = align.AttentionStack(
        np.repeat(head[None, :, :], cfg.n_heads, axis=0), align.FORM_PROBABILITIES
    )
    alignment = align.TokenAlignment(
        align.average_heads(align.normalize_heads(stack)),
        source_tokens=words,
        target_tokens=target,
    )
    emphasized_src = src.emphasized_indices()
    emphasized_tgt = (
        align.transfer_emphasis(alignment, emphasized_src) if emphasized_src else set()
    )
    return MtResult(target, stack, emphasized_tgt)


# --- reference TTS ----------------------------------------------------------

VOWELS = set("aeiouyäöü")


@dataclass
class TtsLexicon:
    """Word-to-phoneme dictionary plus a voiced/unvoiced inventory.

    Out-of-vocabulary words fall back to one phoneme per letter, voiced
    when the letter is a vowel. Base duration/energy apply to every
    phoneme before prosody modification.
    """

    entries: dict = field(default_factory=dict)
    voiced: dict = field(default_factory=dict)
    base_duration_frames: int = 8
    base_energy: float = 1.0

    def __post_init__(self):
        self.entries = {k.casefold(): list(v) for k, v in self.entries.items()}
        for word, phones in self.entries.items():
            for p in phones:
                if p not in self.voiced:
                    raise ValidationError(
                        f"word {word!r} uses phoneme {p!r} missing from the inventory"
                    )

    @classmethod
    def load(cls, path, **kwargs) -> "TtsLexicon":
        """Read `phoneme <sym> voiced|unvoiced` and `word <w> <p1> <p2>...` lines."""
        voiced, entries = {}, {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "phoneme" and len(parts) == 3 and parts[2] in ("voiced", "unvoiced"):
                voiced[parts[1]] = parts[2] == "voiced"
            elif parts[0] == "word" and len(parts) >= 3:
                entries.setdefault(parts[1].casefold(), parts[2:])
            else:
                raise FormatError(f"{path}:{lineno}: unrecognized lexicon line")
        return cls(entries=entries, voiced=voiced, **kwargs)

    def phonemes_for(self, word: str) -> list:
        """Return (symbol, voiced) pairs; letter-as-phoneme fallback for OOV."""
        key = word.casefold()
        if key in self.entries:
            return [(p, self.voiced[p]) for p in self.entries[key]]
        return [(c, c in VOWELS) for c in key]


@dataclass
class TtsResult:
    audio: AudioBuffer
    mel: MelSpectrogram
    prosody: PhonemeProsody
    spans: WordSpans


HARMONIC_AMPLITUDES = (0.6, 0.25, 0.15)
NOISE_AMPLITUDE = 0.3
PITCH_CONTOUR_HZ = (220.0, 180.0)
PEAK_TARGET = 0.9


def toy_tts(
    ssml_text: str,
    lexicon: TtsLexicon,
    cfg: SpectrogramConfig,
    policy: EmphasisPolicy = EmphasisPolicy(),
    seed: int = 0,
    sample_rate: int = 16000,
) -> TtsResult:
    """Synthesize deterministic audio for an SSML document.

    Words map to phonemes through the lexicon; base prosody is the lexicon
    duration/energy with pitch declining linearly 220 to 180 Hz across the
    voiced phonemes. Emphasized words are modified by the policy. Frames
    render as three pitch harmonics (voiced) or seeded white noise
    (unvoiced), scaled to peak 0.9; the waveform gets an n_fft - hop tail
    so its mel analysis has exactly one frame per prosody frame.
    """
    doc = ssml.parse(ssml_text)
    tokens = doc.tokens()
    emphasized = doc.emphasized()

    phonemes, spans = [], []
    for word_index, word in enumerate(tokens):
        start = len(phonemes)
        phonemes.extend(lexicon.phonemes_for(word))
        spans.append((word_index, start, len(phonemes)))
    word_spans = WordSpans(spans)

    voiced_total = sum(1 for _, v in phonemes if v)
    hi, lo = PITCH_CONTOUR_HZ
    voiced_seen = 0
    track = []
    for symbol, voiced in phonemes:
        if voiced:
            frac = voiced_seen / (voiced_total - 1) if voiced_total > 1 else 0.0
            pitch = hi + (lo - hi) * frac
            voiced_seen += 1
        else:
            pitch = 0.0
        track.append(
            Phoneme(symbol, voiced, lexicon.base_duration_frames, pitch, lexicon.base_energy)
        )
    base = PhonemeProsody(track)
    shaped = apply_emphasis(base, word_spans, emphasized, policy)
    frames = length_regulate(shaped)

    audio = _render_track(frames, cfg, seed, sample_rate)
    mel = mel_spectrogram(audio, cfg)
    return TtsResult(audio, mel, shaped, word_spans)


def _render_track(frames, cfg: SpectrogramConfig, seed: int, sample_rate: int) -> AudioBuffer:
    n_frames = len(frames)
    if n_frames == 0:
        return AudioBuffer(sample_rate, 1, np.zeros(0))
    hop = cfg.hop_length
    length = (n_frames - 1) * hop + cfg.n_fft
    frame_of = np.minimum(np.arange(length) // hop, n_frames - 1)
    pitch = np.array([f.pitch_hz for f in frames])[frame_of]
    energy = np.array([f.energy for f in frames])[frame_of]
    voiced = pitch > 0

    # continuous phase so pitch changes do not click
    theta = np.cumsum(2.0 * np.pi * pitch / sample_rate)
    theta -= theta[0]
    tone = np.zeros(length)
    for k, amp in enumerate(HARMONIC_AMPLITUDES, start=1):
        tone += amp * np.sin(k * theta)
    noise = np.random.default_rng(seed).uniform(-1.0, 1.0, size=length)
    samples = np.where(voiced, energy * tone, NOISE_AMPLITUDE * energy * noise)
    peak = np.abs(samples).max()
    if peak > 0:
        samples *= PEAK_TARGET / peak
    return AudioBuffer(sample_rate, 1, samples)


# --- reference voice conversion ---------------------------------------------


def ltas(mel: MelSpectrogram) -> np.ndarray:
    """Long-term average spectrum: per-band mean of log-mel frames."""
    if mel.frame_count == 0:
        raise ValidationError("LTAS of an empty mel spectrogram is undefined")
    return mel.frames.mean(axis=0)


def apply_ltas_shift(src_mel: MelSpectrogram, tgt_mel: MelSpectrogram) -> MelSpectrogram:
    """Shift every source frame by the target-minus-source LTAS, floored."""
    if src_mel.n_mels != tgt_mel.n_mels:
        raise ValidationError("mel band counts differ")
    if src_mel.frame_count == 0:
        return src_mel
    shift = ltas(tgt_mel) - ltas(src_mel)
    shifted = np.maximum(src_mel.frames + shift, np.log(1e-10))
    return MelSpectrogram(
        src_mel.sample_rate, src_mel.n_fft, src_mel.hop_length, src_mel.n_mels, shifted
    )


@dataclass
class VcResult:
    audio: AudioBuffer
    mel: MelSpectrogram


def formant_shift_vc(
    src_mel: MelSpectrogram,
    target_sample: AudioBuffer,
    cfg: SpectrogramConfig,
    seed: int = 0,
    iterations: int = 32,
) -> VcResult:
    """Move the source spectrum toward the target speaker's LTAS.

    The shifted mel is rendered back to audio with Griffin-Lim under the
    given seed. The target sample must be long enough for at least one
    analysis frame.
    """
    if not src_mel.matches(cfg):
        raise ValidationError("source mel geometry does not match the config")
    target = target_sample.to_mono()
    if target.frame_count < cfg.n_fft:
        raise ValidationError(
            f"target sample has {target.frame_count} samples, need at least n_fft={cfg.n_fft}"
        )
    if target.sample_rate != src_mel.sample_rate:
        raise ValidationError("target sample rate differs from the source mel")
    if src_mel.frame_count == 0:
        return VcResult(AudioBuffer(src_mel.sample_rate, 1, np.zeros(0)), src_mel)
    tgt_mel = mel_spectrogram(target, cfg)
    out_mel = apply_ltas_shift(src_mel, tgt_mel)
    audio = griffin_lim(out_mel, cfg, iterations=iterations, seed=seed)
    return VcResult(audio, out_mel)


# --- reference lip generation -----------------------------------------------

MOUTH_WIDTH_FRAC = 0.30  # of box width
MOUTH_HEIGHT_FRAC = 0.25  # of box height, at full aperture
MOUTH_CENTER_Y_FRAC = 0.75  # of box height, below box top


def draw_mouth(frame: np.ndarray, box, aperture: float) -> np.ndarray:
    """Return a copy with a filled black ellipse in the box's lower half.

    The ellipse is centered at (x + w/2, y + 0.75h), spans 0.30w wide and
    aperture * 0.25h tall, and drawing is clipped to the lower half of the
    box so no other pixel can ever change. aperture <= 0 is a no-op copy.
    """
    out = frame.copy()
    if aperture <= 0:
        return out
    cx = box.x + box.w / 2.0
    cy = box.y + MOUTH_CENTER_Y_FRAC * box.h
    semi_x = (MOUTH_WIDTH_FRAC * box.w) / 2.0
    semi_y = (aperture * MOUTH_HEIGHT_FRAC * box.h) / 2.0
    if semi_x <= 0 or semi_y <= 0:
        return out
    row_lo = box.y + box.h // 2  # lower half of the box, never above
    row_hi = min(box.y + box.h, frame.shape[0])
    col_lo = max(box.x, 0)
    col_hi = min(box.x + box.w, frame.shape[1])
    rows = np.arange(row_lo, row_hi)
    cols = np.arange(col_lo, col_hi)
    if rows.size == 0 or cols.size == 0:
        return out
    # pixel centers against the ellipse equation
    dy = ((rows + 0.5 - cy) / semi_y) ** 2
    dx = ((cols + 0.5 - cx) / semi_x) ** 2
    mask = dy[:, None] + dx[None, :] <= 1.0
    region = out[row_lo:row_hi, col_lo:col_hi]
    region[mask] = 0
    return out


def frame_window_rms(audio: AudioBuffer, frame_rate: Fraction, n_frames: int) -> np.ndarray:
    """RMS of each frame-period window [f/rate, (f+1)/rate) of the audio."""
    mono = audio.to_mono()
    sr = audio.sample_rate
    rate = Fraction(frame_rate)
    out = np.zeros(n_frames)
    for f in range(n_frames):
        lo = (f * sr * rate.denominator) // rate.numerator
        hi = ((f + 1) * sr * rate.denominator) // rate.numerator
        lo, hi = int(lo), int(min(hi, mono.frame_count))
        if hi > lo:
            out[f] = float(np.sqrt(np.mean(mono.samples[lo:hi] ** 2)))
    return out


def energy_lipgen(frames: FrameSequence, track: FaceTrack, audio: AudioBuffer) -> FrameSequence:
    """Overlay a mouth ellipse whose height follows the audio's energy.

    Per tracked frame the aperture is that frame period's RMS divided by
    the maximum RMS over the whole sequence (zero when the sequence is
    silent), so silent input leaves every frame bit-identical. Frames
    without a face box always pass through untouched.
    """
    track.check_bounds(frames)
    n = len(frames)
    last = (n * audio.sample_rate * Fraction(frames.frame_rate).denominator) // Fraction(
        frames.frame_rate
    ).numerator
    if audio.to_mono().frame_count < last:
        raise ValidationError("audio does not cover the frame timeline")
    rms = frame_window_rms(audio, frames.frame_rate, n)
    peak = rms.max() if n else 0.0
    apertures = rms / peak if peak >= 1e-9 else np.zeros(n)
    out = []
    for f, frame in enumerate(frames.frames):
        box = track.box_for(f)
        if box is None or apertures[f] <= 0:
            out.append(frame.copy())
        else:
            out.append(draw_mouth(frame, box, float(apertures[f])))
    return FrameSequence(frames.width, frames.height, frames.frame_rate, out)
