"""Attention-based emphasis transfer between source and target tokens.

A translation stage exposes its cross-attention as a stack of per-head
target x source matrices. Heads are softmax-normalized row-wise, averaged
into a single alignment matrix, and each emphasized source token is mapped
to the target token holding the most alignment mass in its column.

The stack begins at per-head scores: query/key projections live inside
whatever model produced them, and logit inputs are assumed already scaled
by 1/sqrt(model_dim) upstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

FORM_LOGITS = "logits"
FORM_PROBABILITIES = "probabilities"

_ROW_SUM_TOL = 1e-6


@dataclass
class AttentionStack:
    """h per-head target x source attention matrices."""

    heads: np.ndarray  # (h, T, S)
    form: str = FORM_LOGITS
    model_dim: int = 512

    def __post_init__(self):
        self.heads = np.asarray(self.heads, dtype=np.float64)
        if self.heads.ndim != 3:
            raise ValidationError("attention stack must be h x T x S")
        if self.heads.shape[0] < 1:
            raise ValidationError("attention stack needs at least one head")
        if self.form not in (FORM_LOGITS, FORM_PROBABILITIES):
            raise ValidationError(f"unknown attention form {self.form!r}")
        if self.model_dim <= 0:
            raise ValidationError("model_dim must be positive")
        if self.form == FORM_PROBABILITIES and self.heads.size:
            if self.heads.min() < 0.0 or self.heads.max() > 1.0:
                raise ValidationError("probability entries must lie in [0, 1]")
            if self.heads.shape[2] > 0:
                sums = self.heads.sum(axis=2)
                if np.abs(sums - 1.0).max() > _ROW_SUM_TOL:
                    raise ValidationError("probability rows must sum to 1")

    @property
    def n_heads(self) -> int:
        return self.heads.shape[0]

    @property
    def shape(self):
        return self.heads.shape[1], self.heads.shape[2]


@dataclass
class TokenAlignment:
    """Head-averaged alignment plus the token context it refers to.

    ``subword_map_src``/``subword_map_tgt`` are optional per-word half-open
    (start, end) token ranges; when present, emphasis transfer first
    aggregates ``alpha`` to word level (sum over a word's source columns,
    max over a word's target rows).
    """

    alpha: np.ndarray  # (T, S)
    source_tokens: list = field(default_factory=list)
    target_tokens: list = field(default_factory=list)
    subword_map_src: list | None = None
    subword_map_tgt: list | None = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.alpha.ndim != 2:
            raise ValidationError("alpha must be a T x S matrix")
        if self.alpha.size:
            if self.alpha.min() < 0.0 or self.alpha.max() > 1.0:
                raise ValidationError("alpha entries must lie in [0, 1]")
            if self.alpha.shape[1] > 0:
                sums = self.alpha.sum(axis=1)
                if np.abs(sums - 1.0).max() > _ROW_SUM_TOL:
                    raise ValidationError("alpha rows must sum to 1")
        for name, ranges, limit in (
            ("subword_map_src", self.subword_map_src, self.alpha.shape[1]),
            ("subword_map_tgt", self.subword_map_tgt, self.alpha.shape[0]),
        ):
            if ranges is None:
                continue
            covered = 0
            for start, end in ranges:
                if start != covered or end < start:
                    raise ValidationError(f"{name} ranges must be contiguous and sorted")
                covered = end
            if covered != limit:
                raise ValidationError(f"{name} must cover all {limit} tokens")


def normalize_heads(stack: AttentionStack) -> AttentionStack:
    """Row-wise softmax per head; identity for probability-form input."""
    if stack.form == FORM_PROBABILITIES:
        return stack
    if stack.heads.size and not np.all(np.isfinite(stack.heads)):
        raise ValidationError("attention logits contain NaN or Inf")
    if stack.heads.shape[2] == 0:
        probs = np.zeros_like(stack.heads)
    else:
        shifted = stack.heads - stack.heads.max(axis=2, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=2, keepdims=True)
    return AttentionStack(probs, FORM_PROBABILITIES, stack.model_dim)


def average_heads(stack: AttentionStack) -> np.ndarray:
    """Elementwise mean over heads of a normalized stack."""
    if stack.form != FORM_PROBABILITIES:
        raise ValidationError("average_heads expects a probability-form stack")
    if stack.n_heads == 0:
        raise ValidationError("cannot average zero heads")
    return stack.heads.mean(axis=0)


def _word_level_alpha(alignment: TokenAlignment) -> np.ndarray:
    alpha = alignment.alpha
    if alignment.subword_map_src is not None:
        cols = [alpha[:, a:b].sum(axis=1) for a, b in alignment.subword_map_src]
        alpha = np.stack(cols, axis=1) if cols else alpha[:, :0]
    if alignment.subword_map_tgt is not None:
        rows = [
            alpha[a:b].max(axis=0) if b > a else np.zeros(alpha.shape[1])
            for a, b in alignment.subword_map_tgt
        ]
        alpha = np.stack(rows, axis=0) if rows else alpha[:0]
    return alpha


def transfer_emphasis(alignment: TokenAlignment, emphasized_src) -> set:
    """Map emphasized source words onto target words via column argmax.

    Ties break to the smallest target index; several sources may land on
    one target, so the result can be smaller than the input set.
    """
    emphasized_src = set(emphasized_src)
    if not emphasized_src:
        return set()
    alpha = _word_level_alpha(alignment)
    n_tgt, n_src = alpha.shape
    for i in emphasized_src:
        if not 0 <= i < n_src:
            raise ValidationError(f"emphasized source index {i} out of range (|S|={n_src})")
    if n_tgt == 0:
        raise ValidationError("cannot transfer emphasis onto an empty target sequence")
    return {int(np.argmax(alpha[:, i])) for i in emphasized_src}


# --- serialization ----------------------------------------------------------


def attn_to_text(stack: AttentionStack) -> str:
    t, s = stack.shape
    lines = [f"attn v1 {stack.n_heads} {t} {s} {stack.form}"]
    for head in stack.heads:
        for row in head:
            lines.append(" ".join(f"{v:.9g}" for v in row))
    return "\n".join(lines) + "\n"


def attn_from_text(text: str) -> AttentionStack:
    lines = text.strip().splitlines()
    if not lines:
        raise FormatError("empty attention payload")
    head = lines[0].split()
    if len(head) != 6 or head[0] != "attn" or head[1] != "v1":
        raise FormatError(f"bad attention header: {lines[0]!r}")
    try:
        h, t, s = int(head[2]), int(head[3]), int(head[4])
    except ValueError:
        raise FormatError(f"bad attention header: {lines[0]!r}") from None
    form = head[5]
    if len(lines) - 1 != h * t:
        raise FormatError(f"attention payload has {len(lines) - 1} rows, expected {h * t}")
    if h * t == 0:
        return AttentionStack(np.zeros((h, t, s)), form)
    try:
        rows = np.array([[float(v) for v in line.split()] for line in lines[1:]])
    except ValueError:
        raise FormatError("non-numeric attention row") from None
    if rows.shape != (h * t, s):
        raise FormatError("attention row width does not match header")
    return AttentionStack(rows.reshape(h, t, s), form)
