"""Paired ``[CLS] symptom [SEP] post [SEP]`` encoding and character/token span alignment."""
from __future__ import annotations

import logging
import re
import zlib
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
from tokenizers import Tokenizer, decoders, models, normalizers, pre_tokenizers

from .corpus import ATTRIBUTE_TYPES, AttributeType, CharSpan

logger = logging.getLogger(__name__)

DEFAULT_MAX_LENGTH = 512
SPECIAL_TOKENS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]

SPECIAL, SYMPTOM, POST = "special", "symptom", "post"


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    id: int
    start: int
    end: int


class TextTokenizer(Protocol):
    cls_id: int
    sep_id: int
    pad_id: int
    vocab_size: int

    def tokenize(self, text: str) -> list[Token]: ...


def _wordpiece(vocab: dict[str, int]) -> Tokenizer:
    backend = Tokenizer(models.WordPiece(vocab, unk_token="[UNK]"))
    backend.normalizer = normalizers.BertNormalizer(lowercase=False, strip_accents=False)
    backend.pre_tokenizer = pre_tokenizers.BertPreTokenizer()
    backend.decoder = decoders.WordPiece()
    return backend


class SubwordTokenizer:
    """WordPiece tokenizer reporting code-point offsets into the input string."""

    def __init__(self, backend: Tokenizer):
        self.backend = backend
        self.cls_id = self._require("[CLS]")
        self.sep_id = self._require("[SEP]")
        self.pad_id = self._require("[PAD]")

    def _require(self, token: str) -> int:
        idx = self.backend.token_to_id(token)
        if idx is None:
            raise EncodingError(f"tokenizer vocabulary lacks {token}")
        return idx

    @property
    def vocab_size(self) -> int:
        return self.backend.get_vocab_size()

    def tokenize(self, text: str) -> list[Token]:
        enc = self.backend.encode(text, add_special_tokens=False)
        return [Token(i, s, e) for i, (s, e) in zip(enc.ids, enc.offsets)]

    def id_to_token(self, idx: int) -> str:
        return self.backend.id_to_token(idx) or "[UNK]"

    @classmethod
    def train(cls, texts: Iterable[str], vocab_size: int = 2000, min_frequency: int = 1) -> SubwordTokenizer:
        """Deterministic WordPiece vocabulary: specials, every character (plain and ``##``), then whole words.

        Words are ranked by frequency, ties alphabetically. The library trainer breaks merge
        ties in hash order, which makes vocabularies differ between processes.
        """
        backend = _wordpiece({tok: i for i, tok in enumerate(SPECIAL_TOKENS)})
        counts: Counter[str] = Counter()
        for text in texts:
            normalized = backend.normalizer.normalize_str(text)
            counts.update(w for w, _ in backend.pre_tokenizer.pre_tokenize_str(normalized))
        chars = sorted({c for w in counts for c in w})
        vocab = dict.fromkeys([*SPECIAL_TOKENS, *chars, *("##" + c for c in chars)])
        words = sorted((w for w, n in counts.items() if n >= min_frequency and len(w) > 1), key=lambda w: (-counts[w], w))
        for w in words[:max(0, vocab_size - len(vocab))]:
            vocab.setdefault(w)
        return cls(_wordpiece({tok: i for i, tok in enumerate(vocab)}))

    @classmethod
    def from_dir(cls, path: str | Path) -> SubwordTokenizer:
        """Load ``tokenizer.json``, or build a cased WordPiece model from a BERT ``vocab.txt``."""
        path = Path(path)
        if (path / "tokenizer.json").exists():
            return cls(Tokenizer.from_file(str(path / "tokenizer.json")))
        vocab_file = path / "vocab.txt"
        if not vocab_file.exists():
            raise FileNotFoundError(f"no tokenizer.json or vocab.txt under {path}")
        return cls(_wordpiece({tok: i for i, tok in enumerate(vocab_file.read_text(encoding="utf-8").splitlines())}))

    def save(self, path: str | Path) -> None:
        Path(path).mkdir(parents=True, exist_ok=True)
        self.backend.save(str(Path(path) / "tokenizer.json"))


_WORD_RE = re.compile(r"\w+|[^\w\s]")


class WordTokenizer:
    """Whole-word tokenizer with hashed ids; used by the stub encoder and word-level examples."""

    def __init__(self, vocab_size: int = 1000):
        if vocab_size <= len(SPECIAL_TOKENS):
            raise ValueError("vocab_size too small")
        self.vocab_size = vocab_size
        self.pad_id, self.cls_id, self.sep_id = 0, 2, 3

    def tokenize(self, text: str) -> list[Token]:
        n = self.vocab_size - len(SPECIAL_TOKENS)
        return [
            Token(len(SPECIAL_TOKENS) + zlib.crc32(m.group().encode("utf-8")) % n, m.start(), m.end())
            for m in _WORD_RE.finditer(text)
        ]


@dataclass(frozen=True)
class TokenizedPair:
    token_ids: tuple[int, ...]
    char_offsets: tuple[tuple[int, int] | None, ...]
    sections: tuple[str, ...]
    truncated: bool
    description: str
    post_text: str

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def post_mask(self) -> np.ndarray:
        return np.fromiter((s == POST for s in self.sections), dtype=bool, count=len(self.sections))

    @property
    def special_mask(self) -> np.ndarray:
        return np.fromiter((s == SPECIAL for s in self.sections), dtype=bool, count=len(self.sections))

    @property
    def token_type_ids(self) -> list[int]:
        """Segment ids: 0 up to and including the first [SEP], 1 afterwards."""
        first_sep = self.sections.index(SPECIAL, 1)
        return [0 if i <= first_sep else 1 for i in range(len(self.sections))]

    @property
    def match_mask(self) -> np.ndarray:
        """Description or post tokens whose id also occurs in the other segment."""
        desc = {t for t, s in zip(self.token_ids, self.sections) if s == SYMPTOM}
        post = {t for t, s in zip(self.token_ids, self.sections) if s == POST}
        return np.fromiter(
            ((s == SYMPTOM and t in post) or (s == POST and t in desc) for t, s in zip(self.token_ids, self.sections)),
            dtype=bool, count=len(self.sections),
        )

    @property
    def post_token_indices(self) -> list[int]:
        return [i for i, s in enumerate(self.sections) if s == POST]

    @property
    def covered_chars(self) -> int:
        """End offset of the last kept post token (the truncation boundary)."""
        idx = self.post_token_indices
        return self.char_offsets[idx[-1]][1] if idx else 0


def encode_pair(
    description: str, post_text: str, tokenizer: TextTokenizer, max_length: int = DEFAULT_MAX_LENGTH
) -> TokenizedPair:
    """Lay out the pair; the post tail is cut at a token boundary when it does not fit."""
    if not post_text or not post_text.strip():
        raise EncodingError("empty post text")
    desc_tokens = tokenizer.tokenize(description)
    post_tokens = tokenizer.tokenize(post_text)
    budget = max_length - 3 - len(desc_tokens)
    if budget < 1:
        raise EncodingError(f"symptom description of {len(desc_tokens)} tokens leaves no room for the post")
    truncated = len(post_tokens) > budget
    post_tokens = post_tokens[:budget]

    ids = [tokenizer.cls_id, *(t.id for t in desc_tokens), tokenizer.sep_id, *(t.id for t in post_tokens), tokenizer.sep_id]
    offsets: list[tuple[int, int] | None] = [None] * (len(desc_tokens) + 2)
    offsets += [(t.start, t.end) for t in post_tokens] + [None]
    sections = [SPECIAL, *([SYMPTOM] * len(desc_tokens)), SPECIAL, *([POST] * len(post_tokens)), SPECIAL]
    return TokenizedPair(tuple(ids), tuple(offsets), tuple(sections), truncated, description, post_text)


@dataclass
class TokenTargets:
    """Binary per-token start/end/inside targets for each attribute type."""

    length: int
    start: dict[AttributeType, np.ndarray] = field(default_factory=dict)
    end: dict[AttributeType, np.ndarray] = field(default_factory=dict)
    inside: dict[AttributeType, np.ndarray] = field(default_factory=dict)
    spans: dict[AttributeType, list[tuple[int, int]]] = field(default_factory=dict)
    dropped: int = 0

    def __post_init__(self):
        for t in ATTRIBUTE_TYPES:
            self.start.setdefault(t, np.zeros(self.length, dtype=np.int8))
            self.end.setdefault(t, np.zeros(self.length, dtype=np.int8))
            self.inside.setdefault(t, np.zeros(self.length, dtype=np.int8))
            self.spans.setdefault(t, [])

    def matrix(self, types: Sequence[AttributeType], method: str) -> np.ndarray:
        """Targets shaped ``(tokens, len(types), channels)``: (start, end) or (inside,)."""
        if method == "start_end":
            return np.stack([np.stack([self.start[t], self.end[t]], axis=-1) for t in types], axis=1).astype(np.float32)
        if method == "contiguous":
            return np.stack([self.inside[t][:, None] for t in types], axis=1).astype(np.float32)
        raise ValueError(f"unknown method {method!r}")


def covering_token_range(pair: TokenizedPair, span: CharSpan) -> tuple[int, int] | None:
    """Smallest run of post tokens whose offsets cover ``span``, or None if no post token touches it."""
    first = last = None
    for i in pair.post_token_indices:
        s, e = pair.char_offsets[i]
        if e > span.start and s < span.end:
            if first is None:
                first = i
            last = i
    return None if first is None else (first, last)


def align_spans_to_tokens(pair: TokenizedPair, annotations: Iterable) -> TokenTargets:
    """Project character-level attribute spans onto the pair's post tokens.

    Partially covered tokens are included whole. Spans reaching past the
    truncation boundary are dropped and counted in ``dropped``.
    """
    targets = TokenTargets(len(pair))
    boundary = pair.covered_chars
    for ann in annotations:
        span = ann.span
        if span.end > len(pair.post_text):
            raise EncodingError(f"span {span} outside post text")
        if pair.truncated and span.end > boundary:
            targets.dropped += 1
            continue
        rng = covering_token_range(pair, span)
        if rng is None:
            targets.dropped += 1
            continue
        i, j = rng
        t = AttributeType(ann.type)
        targets.start[t][i] = 1
        targets.end[t][j] = 1
        targets.inside[t][i:j + 1] = 1
        targets.spans[t].append((i, j))
    if targets.dropped:
        logger.warning("dropped %d span(s) beyond the truncation boundary", targets.dropped)
    return targets


def tokens_to_char_span(pair: TokenizedPair, i: int, j: int) -> CharSpan:
    if j < i:
        raise EncodingError(f"empty token range ({i}, {j})")
    if i < 0 or j >= len(pair):
        raise EncodingError(f"token range ({i}, {j}) outside sequence of {len(pair)}")
    if any(pair.sections[k] != POST for k in range(i, j + 1)):
        raise EncodingError(f"token range ({i}, {j}) touches special or symptom tokens")
    return CharSpan(pair.char_offsets[i][0], pair.char_offsets[j][1])
