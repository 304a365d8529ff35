"""Minimal SSML subset carrying word-level emphasis from MT into TTS.

Only ``<speak>`` and ``<emphasis level="...">`` exist. Anything else —
unknown tags, nested emphasis, unknown entities — is rejected loudly
rather than ignored, so emphasis can never be dropped silently. Emphasis
boundaries snap to whitespace-delimited words.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import FormatError, ValidationError

LEVELS = ("reduced", "moderate", "strong")
DEFAULT_LEVEL = "strong"

_ESCAPES = (("&", "&amp;"), ("<", "&lt;"), (">", "&gt;"), ('"', "&quot;"))
_ENTITIES = {"amp": "&", "lt": "<", "gt": ">", "quot": '"'}


@dataclass(frozen=True)
class Run:
    """A maximal span of words sharing one emphasis level (None = plain)."""

    words: tuple
    level: str | None

    def __post_init__(self):
        if not self.words:
            raise ValidationError("runs must contain at least one word")
        for w in self.words:
            _check_word(w)
        if self.level is not None and self.level not in LEVELS:
            raise ValidationError(f"unknown emphasis level {self.level!r}")


@dataclass
class SsmlDocument:
    """Canonical run list: non-empty runs, adjacent runs differ in level."""

    runs: list

    def __post_init__(self):
        for prev, cur in zip(self.runs, self.runs[1:]):
            if prev.level == cur.level:
                raise ValidationError("adjacent runs must differ in emphasis level")

    def tokens(self) -> list:
        return [w for run in self.runs for w in run.words]

    def emphasized(self) -> set:
        out, pos = set(), 0
        for run in self.runs:
            if run.level is not None:
                out.update(range(pos, pos + len(run.words)))
            pos += len(run.words)
        return out

    def to_text(self) -> str:
        parts = []
        for run in self.runs:
            text = " ".join(escape(w) for w in run.words)
            if run.level is None:
                parts.append(text)
            else:
                parts.append(f'<emphasis level="{run.level}">{text}</emphasis>')
        return "<speak>" + " ".join(parts) + "</speak>"


def _check_word(word: str) -> None:
    if not word:
        raise ValidationError("words must be non-empty")
    if any(c.isspace() for c in word):
        raise ValidationError(f"words must not contain whitespace: {word!r}")


def escape(text: str) -> str:
    for raw, entity in _ESCAPES:
        text = text.replace(raw, entity)
    return text


def document(tokens, emphasized, level: str = DEFAULT_LEVEL) -> SsmlDocument:
    """Build the canonical document for a token list and an emphasis set."""
    emphasized = set(emphasized)
    for i in emphasized:
        if not 0 <= i < len(tokens):
            raise ValidationError(f"emphasized index {i} out of range")
    if level not in LEVELS:
        raise ValidationError(f"unknown emphasis level {level!r}")
    runs = []
    for i, tok in enumerate(tokens):
        lvl = level if i in emphasized else None
        if runs and runs[-1][1] == lvl:
            runs[-1][0].append(tok)
        else:
            runs.append(([tok], lvl))
    return SsmlDocument([Run(tuple(words), lvl) for words, lvl in runs])


def emit(tokens, emphasized, level: str = DEFAULT_LEVEL) -> str:
    """Emit SSML wrapping maximal contiguous emphasized spans."""
    return document(tokens, emphasized, level).to_text()


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def eof(self) -> bool:
        return self.pos >= len(self.text)

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take_entity(self) -> str:
        # positioned on '&'
        end = self.text.find(";", self.pos + 1)
        if end == -1 or end - self.pos > 6:
            raise FormatError(f"bad entity at offset {self.pos}")
        name = self.text[self.pos + 1 : end]
        if name not in _ENTITIES:
            raise FormatError(f"unknown entity &{name};")
        self.pos = end + 1
        return _ENTITIES[name]

    def take_tag(self) -> tuple:
        # positioned on '<'; returns (name, attrs, closing)
        end = self.text.find(">", self.pos + 1)
        if end == -1:
            raise FormatError("unterminated tag")
        inner = self.text[self.pos + 1 : end].strip()
        self.pos = end + 1
        closing = inner.startswith("/")
        if closing:
            inner = inner[1:].strip()
        if not inner:
            raise FormatError("empty tag")
        parts = inner.split(None, 1)
        name = parts[0]
        attrs = {}
        if len(parts) == 2:
            if closing:
                raise FormatError(f"closing tag </{name}> must not carry attributes")
            attrs = _parse_attrs(parts[1])
        return name, attrs, closing


def _parse_attrs(text: str) -> dict:
    attrs = {}
    rest = text.strip()
    while rest:
        if "=" not in rest:
            raise FormatError(f"malformed attribute list: {text!r}")
        key, rest = rest.split("=", 1)
        key = key.strip()
        rest = rest.lstrip()
        if not rest.startswith('"'):
            raise FormatError(f"attribute {key} value must be double-quoted")
        end = rest.find('"', 1)
        if end == -1:
            raise FormatError(f"unterminated attribute value for {key}")
        attrs[key] = rest[1:end]
        rest = rest[end + 1 :].strip()
    return attrs


def parse(text: str) -> SsmlDocument:
    """Parse the subset back into a canonical document.

    Rejects unknown tags, emphasis nested in emphasis, a missing
    ``<speak>`` root, unknown entities, and stray ``&``/``<`` outside
    well-formed markup. ``<emphasis>`` without a level defaults to
    moderate.
    """
    sc = _Scanner(text.strip())
    if sc.peek() != "<":
        raise FormatError("document must start with <speak>")
    name, attrs, closing = sc.take_tag()
    if closing or name != "speak":
        raise FormatError("missing <speak> root")
    if attrs:
        raise FormatError("<speak> attributes are not part of the subset")

    runs = []
    buffer = []  # decoded characters of the current plain-text span

    def flush(level):
        words = "".join(buffer).split()
        buffer.clear()
        if words:
            if runs and runs[-1].level == level:
                words = list(runs[-1].words) + words
                runs[-1] = Run(tuple(words), level)
            else:
                runs.append(Run(tuple(words), level))

    while True:
        if sc.eof():
            raise FormatError("unterminated <speak> element")
        c = sc.peek()
        if c == "&":
            buffer.append(sc.take_entity())
        elif c == "<":
            flush(None)
            name, attrs, closing = sc.take_tag()
            if closing and name == "speak":
                break
            if name != "emphasis":
                raise FormatError(f"unknown tag <{name}>")
            if closing:
                raise FormatError("</emphasis> without matching <emphasis>")
            level = attrs.pop("level", "moderate")
            if attrs:
                raise FormatError(f"unsupported emphasis attributes: {sorted(attrs)}")
            if level not in LEVELS:
                raise FormatError(f"unknown emphasis level {level!r}")
            _parse_emphasis_body(sc, buffer)
            flush(level)
        else:
            buffer.append(c)
            sc.pos += 1
    if not sc.eof() and sc.text[sc.pos :].strip():
        raise FormatError("content after </speak>")
    return SsmlDocument(runs)


def _parse_emphasis_body(sc: _Scanner, buffer: list) -> None:
    while True:
        if sc.eof():
            raise FormatError("unterminated <emphasis> element")
        c = sc.peek()
        if c == "&":
            buffer.append(sc.take_entity())
        elif c == "<":
            name, _attrs, closing = sc.take_tag()
            if closing and name == "emphasis":
                return
            if name == "emphasis":
                raise FormatError("emphasis must not nest inside emphasis")
            raise FormatError(f"unknown tag <{name}> inside emphasis")
        else:
            buffer.append(c)
            sc.pos += 1
