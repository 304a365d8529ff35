"""Readers and writers for the on-disk formats that carry data in and out.

Audio travels as RIFF/WAVE PCM 16-bit, video as directories of binary PPM
(P6) frames with a one-line ``rate`` sidecar, face boxes as line-delimited
JSON records, and a run's inputs are tied together by a ``manifest.json``.
Everything round-trips bit-exactly at the container level; the only lossy
step is float-to-PCM quantization, which is pinned down precisely so it can
be tested.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

PCM_SCALE = 32768.0  # one LSB of signed 16-bit PCM is 1/32768 full scale


@dataclass
class AudioBuffer:
    """Sampled waveform with rate/channel metadata.

    ``samples`` is a 1-D float64 array in [-1.0, 1.0], interleaved by
    channel; its length must be a multiple of ``channels``.
    """

    sample_rate: int
    channels: int
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.channels <= 0:
            raise ValidationError(f"channels must be positive, got {self.channels}")
        if self.samples.ndim != 1:
            raise ValidationError("samples must be a 1-D interleaved array")
        if self.samples.size % self.channels != 0:
            raise ValidationError(
                f"sample count {self.samples.size} is not a multiple of {self.channels} channels"
            )
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ValidationError("samples contain non-finite values")
        if self.samples.size and (self.samples.min() < -1.0 or self.samples.max() > 1.0):
            raise ValidationError("samples outside [-1.0, 1.0]")

    @property
    def frame_count(self) -> int:
        return self.samples.size // self.channels

    @property
    def duration_s(self) -> float:
        return self.frame_count / self.sample_rate

    def to_mono(self) -> "AudioBuffer":
        """Downmix by averaging channels; identity for mono input."""
        if self.channels == 1:
            return self
        mixed = self.samples.reshape(-1, self.channels).mean(axis=1)
        return AudioBuffer(self.sample_rate, 1, mixed)


@dataclass
class FrameSequence:
    """Ordered RGB frames sharing one geometry, plus the frame rate."""

    width: int
    height: int
    frame_rate: Fraction
    frames: list

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("frame dimensions must be positive")
        self.frame_rate = Fraction(self.frame_rate)
        if self.frame_rate <= 0:
            raise ValidationError("frame_rate must be positive")
        for i, frame in enumerate(self.frames):
            if frame.shape != (self.height, self.width, 3) or frame.dtype != np.uint8:
                raise ValidationError(f"frame {i} does not match {self.width}x{self.height} RGB8")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def duration_s(self) -> float:
        return float(len(self.frames) / self.frame_rate)


@dataclass(frozen=True)
class FaceBox:
    frame_index: int
    x: int
    y: int
    w: int
    h: int


@dataclass
class FaceTrack:
    """Per-frame face boxes with strictly increasing frame indices."""

    entries: list

    def __post_init__(self):
        prev = -1
        for e in self.entries:
            if e.frame_index <= prev:
                raise ValidationError(
                    f"face track frame indices must strictly increase (saw {e.frame_index} after {prev})"
                )
            if e.frame_index < 0 or e.x < 0 or e.y < 0 or e.w <= 0 or e.h <= 0:
                raise ValidationError(f"invalid face box for frame {e.frame_index}")
            prev = e.frame_index
        self._by_frame = {e.frame_index: e for e in self.entries}

    def box_for(self, frame_index: int):
        return self._by_frame.get(frame_index)

    def check_bounds(self, frames: FrameSequence) -> None:
        """Boxes must lie fully inside the frame raster."""
        for e in self.entries:
            if e.frame_index >= len(frames):
                raise ValidationError(f"face box refers to missing frame {e.frame_index}")
            if e.x + e.w > frames.width or e.y + e.h > frames.height:
                raise ValidationError(f"face box for frame {e.frame_index} exceeds frame bounds")


# --- WAV ------------------------------------------------------------------


def read_wav(path) -> AudioBuffer:
    """Read a RIFF/WAVE file containing 16-bit PCM, 1 or 2 channels.

    Integer samples are scaled by 1/32768 into [-1, 1). Raises
    :class:`FormatError` for malformed headers, non-PCM16 payloads, and
    truncated data chunks.
    """
    return wav_from_bytes(Path(path).read_bytes(), name=str(path))


def wav_from_bytes(data: bytes, name: str = "<bytes>") -> AudioBuffer:
    path = name
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4 : pos + 8])
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise FormatError(f"{path}: truncated {cid.decode('ascii', 'replace').strip()} chunk")
        if cid == b"fmt ":
            if size < 16:
                raise FormatError(f"{path}: fmt chunk too short")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if fmt is None or payload is None:
        raise FormatError(f"{path}: missing fmt or data chunk")
    audio_format, channels, sample_rate, _byte_rate, block_align, bits = fmt
    if audio_format != 1:
        raise FormatError(f"{path}: unsupported codec {audio_format} (PCM only)")
    if bits != 16:
        raise FormatError(f"{path}: unsupported bit depth {bits} (16-bit only)")
    if channels not in (1, 2):
        raise FormatError(f"{path}: unsupported channel count {channels}")
    if block_align != 2 * channels:
        raise FormatError(f"{path}: inconsistent block alignment")
    if len(payload) % block_align != 0:
        raise FormatError(f"{path}: truncated data chunk")
    samples = np.frombuffer(payload, dtype="<i2").astype(np.float64) / PCM_SCALE
    return AudioBuffer(sample_rate, channels, samples)


def _quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    # clamp to [-1, 1 - 2^-15], then round half away from zero
    clamped = np.clip(samples, -1.0, (PCM_SCALE - 1) / PCM_SCALE)
    scaled = clamped * PCM_SCALE
    rounded = np.where(scaled >= 0, np.floor(scaled + 0.5), np.ceil(scaled - 0.5))
    return rounded.astype("<i2")


def wav_bytes(buf: AudioBuffer) -> bytes:
    """Serialize to a canonical 44-byte-header PCM16 WAV."""
    pcm = _quantize_pcm16(buf.samples).tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(pcm)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH",
        16,
        1,
        buf.channels,
        buf.sample_rate,
        buf.sample_rate * 2 * buf.channels,
        2 * buf.channels,
        16,
    )
    header += b"data" + struct.pack("<I", len(pcm))
    return header + pcm


def write_wav(buf: AudioBuffer, path) -> None:
    Path(path).write_bytes(wav_bytes(buf))


# --- PPM frame directories --------------------------------------------------

_FRAME_NAME = re.compile(r"^(\d{6})\.ppm$")


def _parse_ppm(data: bytes, name: str) -> np.ndarray:
    pos = 0

    def token():
        nonlocal pos
        while pos < len(data):
            c = data[pos : pos + 1]
            if c == b"#":  # comment runs to end of line
                while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{name}: malformed P6 header")
        return data[start:pos]

    if token() != b"P6":
        raise FormatError(f"{name}: not a P6 portable pixmap")
    try:
        width, height, maxval = int(token()), int(token()), int(token())
    except ValueError:
        raise FormatError(f"{name}: malformed P6 header") from None
    if maxval != 255:
        raise FormatError(f"{name}: maxval must be 255, got {maxval}")
    pos += 1  # exactly one whitespace byte separates header and raster
    raster = data[pos : pos + width * height * 3]
    if len(raster) != width * height * 3:
        raise FormatError(f"{name}: raster truncated")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3).copy()


def _ppm_bytes(frame: np.ndarray) -> bytes:
    h, w, _ = frame.shape
    return b"P6\n%d %d\n255\n" % (w, h) + frame.tobytes()


def read_frame_seq(directory) -> FrameSequence:
    """Load ``%06d.ppm`` frames (contiguous from 000000) plus the ``rate`` file."""
    directory = Path(directory)
    rate_path = directory / "rate"
    if not rate_path.is_file():
        raise FormatError(f"{directory}: missing rate file")
    try:
        rate = Fraction(rate_path.read_text().strip().splitlines()[0])
    except (ValueError, ZeroDivisionError, IndexError):
        raise FormatError(f"{directory}: unparseable rate file") from None
    if rate <= 0:
        raise FormatError(f"{directory}: frame rate must be positive")

    indexed = {}
    for entry in directory.iterdir():
        m = _FRAME_NAME.match(entry.name)
        if m:
            indexed[int(m.group(1))] = entry
    frames = []
    width = height = None
    for i in range(len(indexed)):
        if i not in indexed:
            raise FormatError(f"{directory}: gap in frame numbering at index {i}")
        frame = _parse_ppm(indexed[i].read_bytes(), indexed[i].name)
        if width is None:
            height, width = frame.shape[:2]
        elif frame.shape[:2] != (height, width):
            raise FormatError(f"{directory}: frame {i} dimensions differ from frame 0")
        frames.append(frame)
    if width is None:
        # empty directory: geometry is nominal
        width = height = 1
    return FrameSequence(width, height, rate, frames)


def write_frame_seq(seq: FrameSequence, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "rate").write_text(f"{seq.frame_rate}\n")
    for i, frame in enumerate(seq.frames):
        (directory / f"{i:06d}.ppm").write_bytes(_ppm_bytes(frame))


# --- face tracks ------------------------------------------------------------


def read_face_track(path, frames: FrameSequence | None = None) -> FaceTrack:
    """Parse line-delimited ``{"frame":i,"x":..,"y":..,"w":..,"h":..}`` records.

    When ``frames`` is supplied, every box is additionally checked against
    the frame bounds.
    """
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            entries.append(
                FaceBox(int(rec["frame"]), int(rec["x"]), int(rec["y"]), int(rec["w"]), int(rec["h"]))
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise FormatError(f"{path}:{lineno}: malformed face-track record") from None
    track = FaceTrack(entries)
    if frames is not None:
        track.check_bounds(frames)
    return track


def full_frame_track(frames: FrameSequence) -> FaceTrack:
    """Fallback track covering every frame with a full-frame box."""
    return FaceTrack(
        [FaceBox(i, 0, 0, frames.width, frames.height) for i in range(len(frames))]
    )


# --- input manifest ---------------------------------------------------------

MANIFEST_NAME = "manifest.json"


@dataclass
class InputManifest:
    """Paths bundling one pipeline run's inputs, rooted at a directory."""

    root: Path
    audio_path: Path
    frames_dir: Path
    face_track_path: Path | None = None
    transcript_path: Path | None = None
    mt_lexicon_path: Path | None = None
    tts_lexicon_path: Path | None = None

    @classmethod
    def load(cls, directory) -> "InputManifest":
        root = Path(directory)
        manifest_path = root / MANIFEST_NAME
        if not manifest_path.is_file():
            raise FormatError(f"missing manifest file {manifest_path}")
        try:
            doc = json.loads(manifest_path.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{manifest_path}: invalid JSON ({exc})") from None
        if "audio" not in doc or "frames" not in doc:
            raise FormatError(f"{manifest_path}: audio and frames entries are required")

        def resolve(key):
            return root / doc[key] if key in doc and doc[key] else None

        return cls(
            root=root,
            audio_path=root / doc["audio"],
            frames_dir=root / doc["frames"],
            face_track_path=resolve("face_track"),
            transcript_path=resolve("transcript"),
            mt_lexicon_path=resolve("mt_lexicon"),
            tts_lexicon_path=resolve("tts_lexicon"),
        )

    def validate(self) -> dict:
        """Load and cross-check every referenced input.

        Returns a summary dict (durations, counts). Raises on missing files,
        parse failures, and an audio/video length mismatch of more than one
        frame period.
        """
        for label, p in (("audio", self.audio_path), ("frames", self.frames_dir)):
            if p is None or not p.exists():
                raise FormatError(f"missing {label} input: {p}")
        audio = read_wav(self.audio_path)
        frames = read_frame_seq(self.frames_dir)
        if self.face_track_path is not None:
            if not self.face_track_path.is_file():
                raise FormatError(f"missing face track: {self.face_track_path}")
            track = read_face_track(self.face_track_path, frames)
        else:
            track = full_frame_track(frames)
        frame_period = 1.0 / float(frames.frame_rate)
        if len(frames.frames) and abs(audio.duration_s - frames.duration_s) > frame_period:
            raise ValidationError(
                f"audio duration {audio.duration_s:.3f}s and frame count {len(frames)} "
                f"disagree by more than one frame period"
            )
        return {
            "audio_duration_s": audio.duration_s,
            "sample_rate": audio.sample_rate,
            "channels": audio.channels,
            "frame_count": len(frames),
            "frame_rate": str(frames.frame_rate),
            "tracked_frames": len(track.entries),
        }
