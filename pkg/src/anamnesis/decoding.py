"""Turn per-token probabilities into attribute spans."""
from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .corpus import ATTRIBUTE_TYPES, AttributeType, CharSpan
from .encoding import TokenizedPair, tokens_to_char_span

START_END, CONTIGUOUS = "start_end", "contiguous"
METHODS = (START_END, CONTIGUOUS)


@dataclass(frozen=True)
class DecoderConfig:
    startend_threshold: float = 0.7
    contiguous_threshold: float = 0.7
    interior_factor: float = 2 / 3
    max_span_tokens: int = 12
    max_span_tokens_by_type: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("startend_threshold", "contiguous_threshold", "interior_factor"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        caps = [self.max_span_tokens, *self.max_span_tokens_by_type.values()]
        if any(c < 1 for c in caps):
            raise ValueError("span caps must be at least 1")

    def cap_for(self, attribute_type: AttributeType | str | None) -> int:
        if attribute_type is None:
            return self.max_span_tokens
        return self.max_span_tokens_by_type.get(AttributeType(attribute_type).value, self.max_span_tokens)


@dataclass(frozen=True)
class SpanPrediction:
    start: int
    end: int
    score: float
    type: AttributeType | None = None
    char_span: CharSpan | None = None
    text: str | None = None

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"span end {self.end} before start {self.start}")

    @property
    def tokens(self) -> range:
        return range(self.start, self.end + 1)


def decode_start_end(
    p_start: Sequence[float],
    p_end: Sequence[float],
    config: DecoderConfig = DecoderConfig(),
    attribute_type: AttributeType | None = None,
) -> list[SpanPrediction]:
    """Pair start and end probabilities into non-overlapping spans.

    A range (i, j) qualifies when its score ``(p_start[i] + p_end[j]) / 2`` exceeds the
    threshold, it is at most the span cap long, and every strictly interior token has
    both probabilities below ``interior_factor`` times that score. Qualifying ranges are
    accepted greedily by score (ties: smaller i, then shorter), skipping overlaps.
    """
    ps = np.asarray(p_start, dtype=np.float64)
    pe = np.asarray(p_end, dtype=np.float64)
    if ps.shape != pe.shape or ps.ndim != 1:
        raise ValueError(f"start/end length mismatch: {ps.shape} vs {pe.shape}")
    n = len(ps)
    cap = config.cap_for(attribute_type)
    tau, factor = config.startend_threshold, config.interior_factor

    candidates = []
    for i in range(n):
        # Interior maximum over k in (i, j), grown as j advances.
        interior = -np.inf
        for j in range(i, min(n, i + cap)):
            if j >= i + 2:
                interior = max(interior, ps[j - 1], pe[j - 1])
            score = (ps[i] + pe[j]) / 2
            if score > tau and factor * score > interior:
                candidates.append((-score, i, j - i, j))

    candidates.sort()
    taken = np.zeros(n, dtype=bool)
    spans = []
    for neg_score, i, _, j in candidates:
        if taken[i:j + 1].any():
            continue
        taken[i:j + 1] = True
        spans.append(SpanPrediction(i, j, float(-neg_score), attribute_type))
    spans.sort(key=lambda s: s.start)
    return spans


def decode_contiguous(
    p_inside: Sequence[float],
    config: DecoderConfig = DecoderConfig(),
    attribute_type: AttributeType | None = None,
) -> list[SpanPrediction]:
    """Every maximal run of tokens above the threshold, scored by its mean probability."""
    p = np.asarray(p_inside, dtype=np.float64)
    above = p > config.contiguous_threshold
    spans = []
    i, n = 0, len(p)
    while i < n:
        if not above[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and above[j + 1]:
            j += 1
        spans.append(SpanPrediction(i, j, float(p[i:j + 1].mean()), attribute_type))
        i = j + 1
    return spans


def decode_scores(scores: Mapping[AttributeType, Mapping[str, np.ndarray]], method: str,
                  config: DecoderConfig = DecoderConfig()) -> list[SpanPrediction]:
    """Decode a per-type score table as produced by the extractor models."""
    spans: list[SpanPrediction] = []
    for t, channels in scores.items():
        if method == START_END:
            spans.extend(decode_start_end(channels["start"], channels["end"], config, t))
        elif method == CONTIGUOUS:
            spans.extend(decode_contiguous(channels["inside"], config, t))
        else:
            raise ValueError(f"unknown method {method!r}")
    return spans


@dataclass(frozen=True)
class AttributeOutput:
    type: AttributeType
    score: float
    text: str
    char_span: CharSpan


def spans_to_output(pair: TokenizedPair, spans: Sequence[SpanPrediction]) -> list[AttributeOutput]:
    """Map token ranges back to post text, grouped by attribute type then by descending score."""
    rows = []
    for span in spans:
        if span.type is None:
            raise ValueError("span lacks an attribute type")
        char_span = tokens_to_char_span(pair, span.start, span.end)
        text = pair.post_text[char_span.start:char_span.end]
        rows.append(AttributeOutput(AttributeType(span.type), span.score, text, char_span))
    rows.sort(key=lambda r: (ATTRIBUTE_TYPES.index(r.type), -r.score, r.char_span.start))
    return rows
