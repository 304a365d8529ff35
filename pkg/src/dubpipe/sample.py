"""Deterministic synthetic input bundles for demos and end-to-end tests.

``build_sample`` writes a complete manifest directory: tone-burst audio
with one conspicuously loud word, a static speaker-like frame sequence, a
face track, the transcript sidecar, and toy bilingual/pronunciation
lexicons. Word boundaries are aligned to the frame grid so per-frame
energy windows never straddle a word edge.
"""

from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path

import numpy as np

from .media_io import AudioBuffer, FrameSequence, write_frame_seq, write_wav

SAMPLE_RATE = 16000
FRAME_RATE = Fraction(25)
TONE_HZ = 200.0  # exactly 8 cycles per 25 fps frame window at 16 kHz

# (english, german, phonemes) for the toy lexicons
WORD_TABLE = [
    ("the", "das", "d a s"),
    ("house", "Haus", "h au s"),
    ("burns", "brennt", "b r e n t"),
    ("bright", "hell", "h e l"),
    ("and", "und", "u n d"),
    ("loud", "laut", "l au t"),
    ("fire", "feuer", "f eu er"),
    ("wind", "wind", "w i n d"),
    ("calls", "ruft", "r u f t"),
    ("again", "wieder", "w ie d er"),
]

PHONEME_INVENTORY = {
    "a": True, "au": True, "e": True, "eu": True, "er": True,
    "i": True, "ie": True, "o": True, "u": True,
    "l": True, "m": True, "n": True, "r": True, "w": True,
    "b": False, "d": False, "f": False, "h": False, "s": False, "t": False,
}

QUIET_AMP = 0.1 * np.sqrt(2.0)  # word RMS 0.1
LOUD_AMP = 0.5 * np.sqrt(2.0)  # word RMS 0.5


def _word_plan(duration_s: float, loud_index: int):
    """Lay words on the frame grid: 0.72 s of tone, 0.2 s of gap each."""
    n_words = max(1, int((duration_s - 0.2) // 0.92))
    plan = []
    t = 0.2
    for i in range(n_words):
        english, _, _ = WORD_TABLE[i % len(WORD_TABLE)]
        amp = LOUD_AMP if i == loud_index else QUIET_AMP
        plan.append((english, t, t + 0.72, amp))
        t += 0.92
    return plan


def _speaker_frame(width: int, height: int, box) -> np.ndarray:
    """Static scene: gradient backdrop with a light face patch in the box."""
    col = np.linspace(40, 90, width, dtype=np.float64)
    frame = np.zeros((height, width, 3), dtype=np.uint8)
    frame[:, :, 0] = col[None, :].astype(np.uint8)
    frame[:, :, 1] = 70
    frame[:, :, 2] = np.linspace(90, 40, height)[:, None].astype(np.uint8)
    x, y, w, h = box
    frame[y : y + h, x : x + w] = (205, 170, 150)
    # eyes, to make the demo output legible
    ey = y + h // 4
    for ex in (x + w // 3, x + 2 * w // 3):
        frame[ey - 2 : ey + 3, ex - 3 : ex + 4] = (40, 30, 30)
    return frame


def build_sample(
    directory,
    duration_s: float = 3.0,
    loud_word_index: int = 1,
    frame_size: int = 128,
    box=(16, 16, 96, 96),
) -> Path:
    """Write a complete input bundle and return the manifest directory."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)

    plan = _word_plan(duration_s, loud_word_index)
    n_samples = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n_samples) / SAMPLE_RATE
    samples = np.zeros(n_samples)
    for _, start, end, amp in plan:
        lo, hi = int(start * SAMPLE_RATE), int(end * SAMPLE_RATE)
        samples[lo:hi] = amp * np.sin(2.0 * np.pi * TONE_HZ * t[lo:hi])
    write_wav(AudioBuffer(SAMPLE_RATE, 1, samples), root / "audio.wav")

    n_frames = int(round(duration_s * float(FRAME_RATE)))
    frame = _speaker_frame(frame_size, frame_size, box)
    frames = FrameSequence(frame_size, frame_size, FRAME_RATE, [frame.copy() for _ in range(n_frames)])
    write_frame_seq(frames, root / "frames")

    x, y, w, h = box
    with open(root / "face_track.jsonl", "w") as fh:
        for i in range(n_frames):
            fh.write(json.dumps({"frame": i, "x": x, "y": y, "w": w, "h": h}) + "\n")

    transcript = {
        "language": "en",
        "words": [
            {"text": text, "start_s": start, "end_s": end, "emphasized": False}
            for text, start, end, _ in plan
        ],
    }
    (root / "transcript.json").write_text(json.dumps(transcript, indent=2) + "\n")

    mt_lines = [f"{eng} {ger}" for eng, ger, _ in WORD_TABLE]
    (root / "mt_lexicon.txt").write_text("\n".join(mt_lines) + "\n")

    tts_lines = [
        f"phoneme {sym} {'voiced' if v else 'unvoiced'}" for sym, v in PHONEME_INVENTORY.items()
    ]
    tts_lines += [f"word {ger} {phones}" for _, ger, phones in WORD_TABLE]
    (root / "tts_lexicon.txt").write_text("\n".join(tts_lines) + "\n")

    manifest = {
        "audio": "audio.wav",
        "frames": "frames",
        "face_track": "face_track.jsonl",
        "transcript": "transcript.json",
        "mt_lexicon": "mt_lexicon.txt",
        "tts_lexicon": "tts_lexicon.txt",
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return root
