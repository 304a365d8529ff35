"""The cascade engine: stage graph, chunked streaming, and plug-ins.

The pipeline is a fixed shape — an audio chain (recognition, translation,
synthesis, voice conversion) plus a video side branch that joins at lip
generation. Stages run on their own threads and talk only through bounded,
order-checked channels, so a stalled consumer backpressures its producer
and output is a pure function of (config, inputs, seed) regardless of
scheduling or channel capacity.

External stages are subprocesses speaking a line-delimited protocol over
stdin/stdout: a hello object first, then one message object per line with
base64 payloads in the module serialization formats. A watchdog turns a
hung or crashed child into a typed pipeline error instead of a stall.
"""

from __future__ import annotations

import base64
import json
import queue
import shutil
import subprocess
import threading
import time
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import align, dsp, media_io, prosody, ssml, stages
from .errors import ConfigError, ProtocolError, StageError, ValidationError

CONTENT_TYPES = ("audio", "mel", "transcript", "ssml", "prosody", "frames", "attn", "text")

KIND_DATA = "data"
KIND_END = "end"
KIND_ERROR = "error"

PROTOCOL_VERSION = 1
HANDSHAKE_TIMEOUT_S = 5.0


# --- messages and channels ---------------------------------------------------


@dataclass(frozen=True)
class StageMessage:
    stream_id: str
    seq: int
    kind: str
    content_type: str | None = None
    payload: object = None


@dataclass(frozen=True)
class FramePacket:
    """One video frame in flight, with its face box once attached."""

    index: int
    frame: np.ndarray
    frame_rate: Fraction
    box: media_io.FaceBox | None = None


class Channel:
    """Bounded FIFO enforcing per-stream ordering and a single terminal."""

    def __init__(self, name: str, capacity: int):
        if capacity < 1:
            raise ConfigError("channel capacity must be >= 1")
        self.name = name
        self._q = queue.Queue(maxsize=capacity)
        self._next_seq = 0
        self._terminated = False

    def send(self, msg: StageMessage) -> None:
        if self._terminated:
            raise StageError(f"channel {self.name}: message after terminal")
        if msg.seq != self._next_seq:
            raise StageError(
                f"channel {self.name}: out-of-order seq {msg.seq}, expected {self._next_seq}"
            )
        self._next_seq += 1
        if msg.kind != KIND_DATA:
            self._terminated = True
        self._q.put(msg)

    def recv(self) -> StageMessage:
        return self._q.get()


def payload_nbytes(content_type: str | None, payload) -> int:
    """Cheap size estimate for the run report's byte counters."""
    if payload is None:
        return 0
    if content_type == "audio":
        return 44 + 2 * payload.samples.size
    if content_type == "mel":
        return payload.frames.size * 8 + 48
    if content_type == "attn":
        return payload.heads.size * 8 + 48
    if content_type == "frames":
        return payload.frame.size + 32
    if content_type == "transcript":
        return 64 * len(payload.words) + 32
    if content_type == "prosody":
        return 32 * len(payload.phonemes) + 16
    if content_type in ("ssml", "text"):
        return len(str(payload).encode("utf-8"))
    return 0


# --- configuration -----------------------------------------------------------


@dataclass
class StageSpec:
    name: str
    kind: str = "builtin"
    params: dict = field(default_factory=dict)
    command: list | None = None

    def __post_init__(self):
        if self.kind not in ("builtin", "external"):
            raise ConfigError(f"stage {self.name}: unknown kind {self.kind!r}")
        if self.kind == "external" and not self.command:
            raise ConfigError(f"stage {self.name}: external stages need a command")


def default_stage_specs() -> list:
    return [
        StageSpec("asr"),
        StageSpec("mt"),
        StageSpec("tts"),
        StageSpec("vc"),
        StageSpec("faces"),
        StageSpec("lipgen"),
    ]


@dataclass
class PipelineConfig:
    """Everything a run depends on besides the input manifest."""

    stages: list = field(default_factory=default_stage_specs)
    capacity: int = 8
    chunk_seconds: float = 1.0
    seed: int = 0
    sample_rate: int = 16000
    spectrogram: dsp.SpectrogramConfig = field(default_factory=dsp.SpectrogramConfig)
    watchdog_seconds: float = 60.0

    def __post_init__(self):
        if self.capacity < 1:
            raise ConfigError("capacity must be >= 1")
        if self.chunk_seconds <= 0:
            raise ConfigError("chunk_seconds must be positive")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if self.watchdog_seconds <= 0:
            raise ConfigError("watchdog_seconds must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        kwargs = {}
        if "stages" in doc:
            kwargs["stages"] = [
                StageSpec(
                    name=s["name"],
                    kind=s.get("kind", "builtin"),
                    params=s.get("params", {}),
                    command=s.get("command"),
                )
                for s in doc["stages"]
            ]
        for key in ("capacity", "chunk_seconds", "seed", "sample_rate", "watchdog_seconds"):
            if key in doc:
                kwargs[key] = doc[key]
        if "spectrogram" in doc:
            kwargs["spectrogram"] = dsp.SpectrogramConfig(**doc["spectrogram"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad pipeline config: {exc}") from None

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"missing config file {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc)


# --- run context and reporting ------------------------------------------------


@dataclass
class RunContext:
    """Inputs and derived data shared read-only by all stages of one run."""

    config: PipelineConfig
    transcript_sidecar: stages.EmphasisTranscript | None = None
    mt_lexicon: stages.LexiconMtConfig = field(default_factory=stages.LexiconMtConfig)
    tts_lexicon: stages.TtsLexicon = field(default_factory=stages.TtsLexicon)
    face_track: media_io.FaceTrack = field(default_factory=lambda: media_io.FaceTrack([]))
    target_audio: media_io.AudioBuffer | None = None

    def stage_seed(self, stage_name: str) -> int:
        return (self.config.seed * 1000003 + zlib.crc32(stage_name.encode())) % 2**32

    @property
    def spectrogram(self) -> dsp.SpectrogramConfig:
        return self.config.spectrogram

    @property
    def sample_rate(self) -> int:
        return self.config.sample_rate


@dataclass
class StageStats:
    name: str
    wall_s: float = 0.0
    msgs_in: int = 0
    msgs_out: int = 0
    bytes_in: int = 0
    bytes_out: int = 0
    first_output_latency_s: float | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "wall_s": self.wall_s,
            "msgs_in": self.msgs_in,
            "msgs_out": self.msgs_out,
            "bytes_in": self.bytes_in,
            "bytes_out": self.bytes_out,
            "first_output_latency_s": self.first_output_latency_s,
            "error": self.error,
        }


@dataclass
class RunReport:
    status: str
    stages: list
    outputs: dict | None
    error: str | None
    wall_s: float

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "wall_s": self.wall_s,
            "error": self.error,
            "outputs": self.outputs,
            "stages": {s.name: s.to_dict() for s in self.stages},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


# --- stage plumbing ------------------------------------------------------------


class Inbox:
    def __init__(self, channel: Channel, stats: StageStats):
        self._channel = channel
        self._stats = stats
        self.exhausted = False

    def recv(self) -> StageMessage:
        msg = self._channel.recv()
        self._stats.msgs_in += 1
        self._stats.bytes_in += payload_nbytes(msg.content_type, msg.payload)
        if msg.kind != KIND_DATA:
            self.exhausted = True
        return msg

    def drain(self) -> None:
        while not self.exhausted:
            self.recv()


class Emitter:
    """Routes a stage's output: taps always, the next channel when accepted."""

    def __init__(self, stream_id, stats, run_t0, next_channel, next_accepts, taps, produces):
        self._stream_id = stream_id
        self._stats = stats
        self._run_t0 = run_t0
        self._next_channel = next_channel
        self._next_accepts = next_accepts
        self._taps = taps
        self._produces = produces
        self._seq = 0
        self._forward_seq = 0
        self.terminal_sent = False

    def _deliver(self, kind, content_type, payload):
        if self.terminal_sent:
            return
        msg = StageMessage(self._stream_id, self._seq, kind, content_type, payload)
        self._seq += 1
        self._stats.msgs_out += 1
        self._stats.bytes_out += payload_nbytes(content_type, payload)
        if kind == KIND_DATA and self._stats.first_output_latency_s is None:
            self._stats.first_output_latency_s = time.perf_counter() - self._run_t0
        if kind != KIND_DATA:
            self.terminal_sent = True
        for tap in self._taps:
            tap(msg)
        if self._next_channel is not None and (
            kind != KIND_DATA or content_type in self._next_accepts
        ):
            forwarded = StageMessage(self._stream_id, self._forward_seq, kind, content_type, payload)
            self._forward_seq += 1
            self._next_channel.send(forwarded)

    def data(self, content_type: str, payload) -> None:
        if content_type not in self._produces:
            raise StageError(f"stage {self._stream_id} emitted undeclared type {content_type}")
        self._deliver(KIND_DATA, content_type, payload)

    def end(self) -> None:
        self._deliver(KIND_END, None, None)

    def error(self, text: str) -> None:
        self._deliver(KIND_ERROR, "text", text)


class Stage:
    """Base for builtin stages; subclasses define accepts/produces and run."""

    accepts: frozenset = frozenset()
    produces: frozenset = frozenset()

    def __init__(self, name: str, params: dict):
        self.name = name
        self.params = dict(params)

    def run(self, inboxes: dict, emit: Emitter, ctx: RunContext) -> None:
        raise NotImplementedError


class _Buffered(Stage):
    """Collect the single upstream stream fully, transform, emit, end."""

    def run(self, inboxes, emit, ctx):
        items = []
        inbox = inboxes["in"]
        while True:
            msg = inbox.recv()
            if msg.kind == KIND_ERROR:
                emit.error(str(msg.payload))
                return
            if msg.kind == KIND_END:
                break
            items.append(msg)
        for content_type, payload in self.transform(items, ctx):
            emit.data(content_type, payload)
        emit.end()

    def transform(self, items, ctx):
        raise NotImplementedError


def _concat_audio(chunks, sample_rate: int) -> media_io.AudioBuffer:
    if not chunks:
        return media_io.AudioBuffer(sample_rate, 1, np.zeros(0))
    rate = chunks[0].sample_rate
    return media_io.AudioBuffer(rate, 1, np.concatenate([c.samples for c in chunks]))


def _chunk_audio(buf: media_io.AudioBuffer, chunk_seconds: float):
    step = max(1, int(round(chunk_seconds * buf.sample_rate)))
    for lo in range(0, buf.samples.size, step):
        yield media_io.AudioBuffer(buf.sample_rate, 1, buf.samples[lo : lo + step])


class AsrStage(_Buffered):
    accepts = frozenset({"audio"})
    produces = frozenset({"transcript"})

    def transform(self, items, ctx):
        if ctx.transcript_sidecar is None:
            raise StageError("reference asr stage requires a transcript sidecar in the manifest")
        audio = _concat_audio([m.payload for m in items], ctx.sample_rate)
        result = stages.stub_asr(
            audio, ctx.transcript_sidecar, z_threshold=float(self.params.get("z_threshold", 1.0))
        )
        return [("transcript", result)]


class MtStage(_Buffered):
    accepts = frozenset({"transcript"})
    produces = frozenset({"ssml", "attn"})

    def transform(self, items, ctx):
        if not items:
            raise StageError("mt stage received no transcript")
        result = stages.lexicon_mt(items[-1].payload, ctx.mt_lexicon)
        text = ssml.emit(result.target_words, result.emphasized_target)
        return [("attn", result.attention), ("ssml", text)]


class TtsStage(_Buffered):
    accepts = frozenset({"ssml"})
    produces = frozenset({"prosody", "mel", "audio"})

    def transform(self, items, ctx):
        if not items:
            raise StageError("tts stage received no ssml")
        policy = prosody.EmphasisPolicy(
            duration_mult=float(self.params.get("duration_mult", 1.25)),
            energy_mult=float(self.params.get("energy_mult", 1.5)),
            pitch_shift_semitones=float(self.params.get("pitch_shift_semitones", 2.0)),
        )
        result = stages.toy_tts(
            str(items[-1].payload),
            ctx.tts_lexicon,
            ctx.spectrogram,
            policy=policy,
            seed=ctx.stage_seed(self.name),
            sample_rate=ctx.sample_rate,
        )
        out = [("prosody", result.prosody), ("mel", result.mel)]
        out.extend(("audio", c) for c in _chunk_audio(result.audio, ctx.config.chunk_seconds))
        return out


class VcStage(_Buffered):
    accepts = frozenset({"mel"})
    produces = frozenset({"mel", "audio"})

    def transform(self, items, ctx):
        if not items:
            raise StageError("vc stage received no mel input")
        if ctx.target_audio is None:
            raise StageError("vc stage requires the original audio as conversion target")
        result = stages.formant_shift_vc(
            items[-1].payload,
            ctx.target_audio,
            ctx.spectrogram,
            seed=ctx.stage_seed(self.name),
            iterations=int(self.params.get("iterations", 32)),
        )
        out = [("mel", result.mel)]
        out.extend(("audio", c) for c in _chunk_audio(result.audio, ctx.config.chunk_seconds))
        return out


class FacesStage(Stage):
    """Streaming stand-in for the face detector: attaches sidecar boxes."""

    accepts = frozenset({"frames"})
    produces = frozenset({"frames"})

    def run(self, inboxes, emit, ctx):
        inbox = inboxes["in"]
        while True:
            msg = inbox.recv()
            if msg.kind == KIND_ERROR:
                emit.error(str(msg.payload))
                return
            if msg.kind == KIND_END:
                emit.end()
                return
            packet = msg.payload
            emit.data(
                "frames",
                FramePacket(
                    packet.index, packet.frame, packet.frame_rate, ctx.face_track.box_for(packet.index)
                ),
            )


class LipgenStage(Stage):
    """Join stage: drains the converted audio, then streams over frames.

    The aperture normalizer is the maximum frame-window RMS over the
    audio's own timeline; frame windows past the end of the audio read as
    silence, so the speaker's mouth closes when the translated speech runs
    out. Frames stream through one at a time once the audio is in.
    """

    accepts = frozenset({"audio", "frames"})
    produces = frozenset({"frames"})

    def run(self, inboxes, emit, ctx):
        chunks = []
        audio_inbox = inboxes["audio"]
        while True:
            msg = audio_inbox.recv()
            if msg.kind == KIND_ERROR:
                emit.error(str(msg.payload))
                return
            if msg.kind == KIND_END:
                break
            chunks.append(msg.payload)
        audio = _concat_audio(chunks, ctx.sample_rate)

        normalizer = None
        frames_inbox = inboxes["frames"]
        while True:
            msg = frames_inbox.recv()
            if msg.kind == KIND_ERROR:
                emit.error(str(msg.payload))
                return
            if msg.kind == KIND_END:
                emit.end()
                return
            packet = msg.payload
            if normalizer is None:
                rate = Fraction(packet.frame_rate)
                covered = -((-audio.frame_count * rate.numerator) // (audio.sample_rate * rate.denominator))
                window_rms = stages.frame_window_rms(audio, rate, int(covered))
                normalizer = float(window_rms.max()) if covered > 0 else 0.0
            rms = stages.frame_window_rms(audio, packet.frame_rate, packet.index + 1)[packet.index]
            aperture = min(rms / normalizer, 1.0) if normalizer >= 1e-9 else 0.0
            if packet.box is not None and aperture > 0:
                frame = stages.draw_mouth(packet.frame, packet.box, aperture)
            else:
                frame = packet.frame.copy()
            emit.data("frames", FramePacket(packet.index, frame, packet.frame_rate, packet.box))


BUILTIN_STAGES = {
    "asr": AsrStage,
    "mt": MtStage,
    "tts": TtsStage,
    "vc": VcStage,
    "faces": FacesStage,
    "lipgen": LipgenStage,
}
