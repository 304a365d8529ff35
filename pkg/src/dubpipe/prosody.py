"""Phoneme-level prosody tracks and word-level emphasis modification.

This is the surface a variance-adaptor-style TTS exposes: per-phoneme
duration, pitch, and energy. Emphasizing a word stretches its phoneme
durations, boosts their energy, and shifts voiced pitch up or down by a
fixed semitone amount — up when the word already sits at or above the
utterance's median voiced pitch, down otherwise (exaggeration rather than
regression to the mean; the rule is a policy field, not a constant).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError


@dataclass(frozen=True)
class Phoneme:
    symbol: str
    voiced: bool
    duration_frames: int
    pitch_hz: float
    energy: float

    def __post_init__(self):
        if not self.symbol:
            raise ValidationError("phoneme symbol must be non-empty")
        if self.duration_frames < 0:
            raise ValidationError("duration_frames must be non-negative")
        if not (math.isfinite(self.pitch_hz) and math.isfinite(self.energy)):
            raise ValidationError("pitch and energy must be finite")
        if self.energy < 0:
            raise ValidationError("energy must be non-negative")
        if self.voiced and self.pitch_hz <= 0:
            raise ValidationError("voiced phonemes need positive pitch")
        if not self.voiced and self.pitch_hz != 0:
            raise ValidationError("unvoiced phonemes must carry pitch 0")


@dataclass
class PhonemeProsody:
    phonemes: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.phonemes)

    @property
    def total_frames(self) -> int:
        return sum(p.duration_frames for p in self.phonemes)

    def voiced_pitches(self) -> list:
        return [p.pitch_hz for p in self.phonemes if p.voiced]


@dataclass
class WordSpans:
    """Half-open (word_index, start, end) phoneme ranges, in order."""

    spans: list

    def __post_init__(self):
        pos = 0
        for word_index, start, end in self.spans:
            if word_index < 0 or start != pos or end < start:
                raise ValidationError("word spans must be contiguous, sorted, non-overlapping")
            pos = end
        self._end = pos

    def validate_for(self, prosody: PhonemeProsody) -> None:
        if self._end != len(prosody):
            raise ValidationError(
                f"word spans cover {self._end} phonemes, prosody has {len(prosody)}"
            )

    def word_indices(self) -> set:
        return {w for w, _, _ in self.spans}


@dataclass(frozen=True)
class EmphasisPolicy:
    duration_mult: float = 1.25
    energy_mult: float = 1.5
    pitch_shift_semitones: float = 2.0

    def __post_init__(self):
        if self.duration_mult < 1.0:
            raise ValidationError("duration_mult must be >= 1")
        if self.energy_mult <= 0.0:
            raise ValidationError("energy_mult must be positive")
        if self.pitch_shift_semitones < 0.0:
            raise ValidationError("pitch_shift_semitones must be >= 0")


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def apply_emphasis(
    prosody: PhonemeProsody,
    spans: WordSpans,
    emphasized_words,
    policy: EmphasisPolicy = EmphasisPolicy(),
) -> PhonemeProsody:
    """Return a copy with emphasized words' phonemes modified.

    Durations are multiplied then rounded half-up to whole frames, energy
    is multiplied, and voiced pitch moves by the policy's semitone shift —
    direction decided per word against the utterance median voiced pitch,
    computed once over the unmodified input. Phonemes outside emphasized
    words are carried through untouched.
    """
    spans.validate_for(prosody)
    emphasized_words = set(emphasized_words)
    unknown = emphasized_words - spans.word_indices()
    if unknown:
        raise ValidationError(f"emphasized word indices outside spans: {sorted(unknown)}")

    voiced = prosody.voiced_pitches()
    median_pitch = float(np.median(voiced)) if voiced else None
    up = 2.0 ** (policy.pitch_shift_semitones / 12.0)
    down = 2.0 ** (-policy.pitch_shift_semitones / 12.0)

    out = list(prosody.phonemes)
    for word_index, start, end in spans.spans:
        if word_index not in emphasized_words:
            continue
        word_voiced = [p.pitch_hz for p in prosody.phonemes[start:end] if p.voiced]
        factor = 1.0
        if word_voiced and median_pitch is not None:
            factor = up if float(np.mean(word_voiced)) >= median_pitch else down
        for i in range(start, end):
            p = prosody.phonemes[i]
            out[i] = Phoneme(
                symbol=p.symbol,
                voiced=p.voiced,
                duration_frames=_round_half_up(p.duration_frames * policy.duration_mult),
                pitch_hz=p.pitch_hz * factor if p.voiced else 0.0,
                energy=p.energy * policy.energy_mult,
            )
    return PhonemeProsody(out)


@dataclass(frozen=True)
class FrameSample:
    symbol: str
    pitch_hz: float
    energy: float


def length_regulate(prosody: PhonemeProsody) -> list:
    """Expand phonemes into frames: each repeated duration_frames times."""
    track = []
    for p in prosody.phonemes:
        sample = FrameSample(p.symbol, p.pitch_hz, p.energy)
        track.extend([sample] * p.duration_frames)
    return track


# --- serialization ----------------------------------------------------------


def prosody_to_text(prosody: PhonemeProsody) -> str:
    lines = [
        f"{p.symbol} {int(p.voiced)} {p.duration_frames} {p.pitch_hz:.9g} {p.energy:.9g}"
        for p in prosody.phonemes
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def prosody_from_text(text: str) -> PhonemeProsody:
    phonemes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise FormatError(f"line {lineno}: expected 'symbol voiced dur pitch energy'")
        try:
            phonemes.append(
                Phoneme(parts[0], bool(int(parts[1])), int(parts[2]), float(parts[3]), float(parts[4]))
            )
        except (ValueError, ValidationError) as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
    return PhonemeProsody(phonemes)


def write_prosody(prosody: PhonemeProsody, path) -> None:
    Path(path).write_text(prosody_to_text(prosody))


def read_prosody(path) -> PhonemeProsody:
    return prosody_from_text(Path(path).read_text())
