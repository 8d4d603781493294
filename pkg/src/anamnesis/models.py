"""Encoder backends, the symptom-query classifier, extraction heads and the two baselines."""
from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from sklearn.feature_extraction.text import TfidfVectorizer
from torch import nn
from transformers import BertConfig, BertModel

from .corpus import ATTRIBUTE_TYPES, AttributeType
from .encoding import DEFAULT_MAX_LENGTH, SubwordTokenizer, TextTokenizer, TokenizedPair, WordTokenizer, encode_pair
from .ontology import SymptomOntology

GENERAL = "general"
EPS = 1e-7


class ModelError(ValueError):
    pass


# -- batching -------------------------------------------------------------------------


@dataclass
class Batch:
    input_ids: torch.Tensor
    attention_mask: torch.Tensor
    token_type_ids: torch.Tensor
    special_mask: torch.Tensor
    post_mask: torch.Tensor
    match_mask: torch.Tensor

    @property
    def mean_mask(self) -> torch.Tensor:
        """Real, non-special tokens."""
        return self.attention_mask.bool() & ~self.special_mask


def collate(pairs: Sequence[TokenizedPair], pad_id: int) -> Batch:
    if not pairs:
        raise ModelError("empty batch")
    width = max(len(p) for p in pairs)
    n = len(pairs)
    ids = torch.full((n, width), pad_id, dtype=torch.long)
    attn = torch.zeros((n, width), dtype=torch.long)
    types = torch.zeros((n, width), dtype=torch.long)
    special = torch.zeros((n, width), dtype=torch.bool)
    post = torch.zeros((n, width), dtype=torch.bool)
    match = torch.zeros((n, width), dtype=torch.long)
    for row, pair in enumerate(pairs):
        k = len(pair)
        ids[row, :k] = torch.tensor(pair.token_ids)
        attn[row, :k] = 1
        types[row, :k] = torch.tensor(pair.token_type_ids)
        special[row, :k] = torch.from_numpy(pair.special_mask)
        post[row, :k] = torch.from_numpy(pair.post_mask)
        match[row, :k] = torch.from_numpy(pair.match_mask)
    return Batch(ids, attn, types, special, post, match)


# -- encoder backends -------------------------------------------------------------------


class EncoderBackend(nn.Module):
    """Produces per-token hidden states and the CLS hidden state for a batch of pairs."""

    tokenizer: TextTokenizer
    hidden_size: int
    max_length: int

    def forward(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        raise NotImplementedError

    def encode(self, description: str, post_text: str) -> TokenizedPair:
        return encode_pair(description, post_text, self.tokenizer, self.max_length)

    def set_dropout(self, p: float) -> None:
        pass

    def spec(self) -> dict:
        """JSON-serializable description sufficient to rebuild the architecture."""
        raise NotImplementedError


class TransformerBackend(EncoderBackend):
    """BERT encoder; either a pretrained checkpoint or a reduced randomly initialised one."""

    def __init__(self, tokenizer: SubwordTokenizer, config: BertConfig, bert: BertModel | None = None,
                 match_features: bool = False):
        super().__init__()
        self.tokenizer = tokenizer
        self.config = config
        self.bert = bert if bert is not None else BertModel(config, add_pooling_layer=False)
        # Exact-match flag embedding added to word embeddings; off for pretrained checkpoints.
        self.match_embeddings = nn.Embedding(2, config.hidden_size) if match_features else None
        if self.match_embeddings is not None:
            nn.init.normal_(self.match_embeddings.weight, std=config.initializer_range)
        self.hidden_size = config.hidden_size
        self.max_length = min(DEFAULT_MAX_LENGTH, config.max_position_embeddings)
        self.pretrained_pooler: dict[str, torch.Tensor] | None = None

    @classmethod
    def reduced(
        cls,
        tokenizer: SubwordTokenizer,
        hidden_size: int = 64,
        num_layers: int = 2,
        num_heads: int = 4,
        intermediate_size: int = 128,
        dropout: float = 0.1,
        max_length: int = 256,
        match_features: bool = True,
    ) -> TransformerBackend:
        config = BertConfig(
            vocab_size=tokenizer.vocab_size,
            hidden_size=hidden_size,
            num_hidden_layers=num_layers,
            num_attention_heads=num_heads,
            intermediate_size=intermediate_size,
            hidden_dropout_prob=dropout,
            attention_probs_dropout_prob=dropout,
            max_position_embeddings=max_length,
            pad_token_id=tokenizer.pad_id,
        )
        return cls(tokenizer, config, match_features=match_features)

    @classmethod
    def from_pretrained(cls, path: str | Path) -> TransformerBackend:
        """Load a local BERT checkpoint directory (e.g. a cached ``bert-base-german-cased``)."""
        full = BertModel.from_pretrained(str(path), add_pooling_layer=True)
        bert = BertModel(full.config, add_pooling_layer=False)
        bert.load_state_dict({k: v for k, v in full.state_dict().items() if not k.startswith("pooler.")})
        backend = cls(SubwordTokenizer.from_dir(path), full.config, bert)
        backend.pretrained_pooler = {
            "weight": full.pooler.dense.weight.detach().clone(),
            "bias": full.pooler.dense.bias.detach().clone(),
        }
        return backend

    def forward(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        if self.match_embeddings is None:
            out = self.bert(
                input_ids=batch.input_ids,
                attention_mask=batch.attention_mask,
                token_type_ids=batch.token_type_ids,
            )
        else:
            embeds = self.bert.embeddings.word_embeddings(batch.input_ids) + self.match_embeddings(batch.match_mask)
            out = self.bert(
                inputs_embeds=embeds,
                attention_mask=batch.attention_mask,
                token_type_ids=batch.token_type_ids,
            )
        hidden = out.last_hidden_state
        return hidden, hidden[:, 0]

    def set_dropout(self, p: float) -> None:
        self.config.hidden_dropout_prob = p
        self.config.attention_probs_dropout_prob = p
        for module in self.bert.modules():
            if isinstance(module, nn.Dropout):
                module.p = p

    def spec(self) -> dict:
        return {"kind": "bert", "config": self.config.to_dict(), "match_features": self.match_embeddings is not None}


class StubBackend(EncoderBackend):
    """Frozen random embeddings as hidden states; keeps head maths testable without a real encoder."""

    def __init__(self, hidden_size: int = 8, vocab_size: int = 1000, seed: int = 0, max_length: int = 128,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.tokenizer = WordTokenizer(vocab_size)
        self.hidden_size = hidden_size
        self.max_length = max_length
        self.seed = seed
        gen = torch.Generator().manual_seed(seed)
        self.embeddings = nn.Embedding(vocab_size, hidden_size, dtype=dtype)
        with torch.no_grad():
            self.embeddings.weight.copy_(torch.randn(vocab_size, hidden_size, generator=gen, dtype=dtype))
        self.embeddings.weight.requires_grad_(False)

    def forward(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        hidden = self.embeddings(batch.input_ids)
        return hidden, hidden[:, 0]

    def spec(self) -> dict:
        return {"kind": "stub", "hidden_size": self.hidden_size, "vocab_size": self.tokenizer.vocab_size,
                "seed": self.seed, "max_length": self.max_length}


# -- heads -----------------------------------------------------------------------------


class SQHead(nn.Module):
    """Scores [mean of token states ; tanh(pooler(h_CLS))] with one affine map.

    ``mean_over="non_special"`` averages post and symptom tokens only; ``"all"``
    also includes [CLS] and [SEP].
    """

    def __init__(self, hidden_size: int, mean_over: str = "non_special"):
        super().__init__()
        if mean_over not in ("non_special", "all"):
            raise ValueError(f"mean_over must be 'non_special' or 'all', got {mean_over!r}")
        self.mean_over = mean_over
        self.pooler = nn.Linear(hidden_size, hidden_size)
        self.scorer = nn.Linear(2 * hidden_size, 1)

    def logits(self, hidden: torch.Tensor, cls: torch.Tensor, batch: Batch) -> torch.Tensor:
        if hidden.shape[:2] != batch.input_ids.shape:
            raise ModelError(f"hidden states {tuple(hidden.shape[:2])} do not match tokens {tuple(batch.input_ids.shape)}")
        mask = batch.mean_mask if self.mean_over == "non_special" else batch.attention_mask.bool()
        m = mask.unsqueeze(-1).to(hidden.dtype)
        mean = (hidden * m).sum(1) / m.sum(1).clamp_min(1.0)
        pooled = torch.tanh(self.pooler(cls))
        return self.scorer(torch.cat([mean, pooled], dim=-1)).squeeze(-1)

    def forward(self, hidden: torch.Tensor, cls: torch.Tensor, batch: Batch) -> torch.Tensor:
        return torch.sigmoid(self.logits(hidden, cls, batch))


def head_types(scope: AttributeType | str) -> tuple[AttributeType, ...]:
    if scope == GENERAL:
        return ATTRIBUTE_TYPES
    return (AttributeType(scope),)


class ExtractorHead(nn.Module):
    """Per-token affine map to start/end (or inside) probabilities for each in-scope type."""

    def __init__(self, hidden_size: int, method: str, scope: AttributeType | str):
        super().__init__()
        if method not in ("start_end", "contiguous"):
            raise ValueError(f"unknown extraction method {method!r}")
        self.method = method
        self.scope = GENERAL if scope == GENERAL else AttributeType(scope).value
        self.types = head_types(scope)
        self.channels = 2 if method == "start_end" else 1
        self.linear = nn.Linear(hidden_size, len(self.types) * self.channels)

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        """Probabilities shaped ``(batch, tokens, types, channels)``."""
        out = torch.sigmoid(self.linear(hidden))
        return out.view(*hidden.shape[:2], len(self.types), self.channels)


# -- composite models ------------------------------------------------------------------


class SymptomQueryModel(nn.Module):
    def __init__(self, backend: EncoderBackend, head: SQHead | None = None):
        super().__init__()
        self.backend = backend
        self.head = head if head is not None else SQHead(backend.hidden_size)
        pooler = getattr(backend, "pretrained_pooler", None)
        if head is None and pooler is not None:
            with torch.no_grad():
                self.head.pooler.weight.copy_(pooler["weight"])
                self.head.pooler.bias.copy_(pooler["bias"])

    def logits(self, batch: Batch) -> torch.Tensor:
        hidden, cls = self.backend(batch)
        return self.head.logits(hidden, cls, batch)

    def forward(self, batch: Batch) -> torch.Tensor:
        return torch.sigmoid(self.logits(batch))


class AttributeExtractor(nn.Module):
    def __init__(self, backend: EncoderBackend, method: str, scope: AttributeType | str,
                 head: ExtractorHead | None = None):
        super().__init__()
        self.backend = backend
        self.head = head if head is not None else ExtractorHead(backend.hidden_size, method, scope)

    @property
    def method(self) -> str:
        return self.head.method

    @property
    def types(self) -> tuple[AttributeType, ...]:
        return self.head.types

    def forward(self, batch: Batch) -> torch.Tensor:
        hidden, _ = self.backend(batch)
        probs = self.head(hidden)
        # Only post tokens may carry attributes.
        return probs * batch.post_mask[:, :, None, None].to(probs.dtype)


class EncoderSigmoidBaseline(nn.Module):
    """Encoder followed by a pooler and one sigmoid unit per symptom seen in training."""

    def __init__(self, backend: EncoderBackend, labels: Sequence[str]):
        super().__init__()
        if not labels:
            raise ModelError("baseline needs at least one output symptom")
        self.backend = backend
        self.labels = list(labels)
        self.pooler = nn.Linear(backend.hidden_size, backend.hidden_size)
        self.classifier = nn.Linear(backend.hidden_size, len(self.labels))

    def encode(self, post_text: str) -> TokenizedPair:
        # No symptom query: an empty description gives "[CLS] [SEP] post [SEP]".
        return encode_pair("", post_text, self.backend.tokenizer, self.backend.max_length)

    def logits(self, batch: Batch) -> torch.Tensor:
        _, cls = self.backend(batch)
        return self.classifier(torch.tanh(self.pooler(cls)))

    def forward(self, batch: Batch) -> torch.Tensor:
        return torch.sigmoid(self.logits(batch))


class TfidfMlpBaseline(nn.Module):
    """TF-IDF features into a one-hidden-layer MLP with a sigmoid output per training symptom."""

    def __init__(self, labels: Sequence[str], hidden_width: int = 256, vectorizer: TfidfVectorizer | None = None):
        super().__init__()
        if not labels:
            raise ModelError("baseline needs at least one output symptom")
        self.labels = list(labels)
        self.hidden_width = hidden_width
        self.vectorizer = vectorizer
        self.mlp: nn.Sequential | None = None
        if vectorizer is not None and hasattr(vectorizer, "vocabulary_"):
            self._build(len(vectorizer.vocabulary_))

    def _build(self, n_features: int) -> None:
        self.mlp = nn.Sequential(
            nn.Linear(n_features, self.hidden_width), nn.ReLU(), nn.Linear(self.hidden_width, len(self.labels))
        )

    def fit_vocabulary(self, texts: Iterable[str]) -> TfidfMlpBaseline:
        self.vectorizer = TfidfVectorizer(lowercase=True)
        self.vectorizer.fit(list(texts))
        self._build(len(self.vectorizer.vocabulary_))
        return self

    def features(self, texts: Sequence[str]) -> torch.Tensor:
        if self.vectorizer is None or self.mlp is None:
            raise ModelError("TF-IDF vocabulary not fitted")
        return torch.from_numpy(self.vectorizer.transform(list(texts)).toarray().astype(np.float32))

    def logits(self, features: torch.Tensor) -> torch.Tensor:
        if self.mlp is None:
            raise ModelError("TF-IDF vocabulary not fitted")
        return self.mlp(features)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(features))


# -- operations ------------------------------------------------------------------------


def sq_forward(backend: EncoderBackend, head: SQHead, pair: TokenizedPair) -> float:
    batch = collate([pair], backend.tokenizer.pad_id)
    with torch.no_grad():
        hidden, cls = backend(batch)
        return float(head(hidden, cls, batch)[0])


@torch.no_grad()
def sq_scores(model: SymptomQueryModel, queries: Sequence[tuple[str, str]], batch_size: int = 64) -> np.ndarray:
    """Probabilities for (description, post text) pairs; each query is scored independently."""
    was_training = model.training
    model.eval()
    tok = model.backend.tokenizer
    out = []
    for k in range(0, len(queries), batch_size):
        pairs = [model.backend.encode(d, t) for d, t in queries[k:k + batch_size]]
        out.append(model(collate(pairs, tok.pad_id)).double().numpy())
    model.train(was_training)
    return np.concatenate(out) if out else np.zeros(0)


@dataclass(frozen=True)
class ClassificationResult:
    probabilities: dict[str, float]
    raw: frozenset[str]
    closure: frozenset[str]

    def detected(self) -> list[tuple[str, float]]:
        """Raw detections, most probable first."""
        return sorted(((s, self.probabilities[s]) for s in self.raw), key=lambda x: (-x[1], x[0]))


def classify_post(model: SymptomQueryModel, ontology: SymptomOntology, post_text: str,
                  threshold: float = 0.5, batch_size: int = 64) -> ClassificationResult:
    """Query every ontology symptom with its canonical description."""
    ids = list(ontology)
    probs = sq_scores(model, [(ontology[s].description, post_text) for s in ids], batch_size)
    table = {sid: float(p) for sid, p in zip(ids, probs)}
    raw = frozenset(s for s, p in table.items() if p > threshold)
    return ClassificationResult(table, raw, frozenset(ontology.label_closure(raw)))


@torch.no_grad()
def baseline_forward(model: EncoderSigmoidBaseline | TfidfMlpBaseline, post_text: str | Sequence[str]) -> np.ndarray:
    """Probability vector over the model's training symptoms (one row per text for a list)."""
    texts = [post_text] if isinstance(post_text, str) else list(post_text)
    was_training = model.training
    model.eval()
    if isinstance(model, TfidfMlpBaseline):
        probs = model(model.features(texts))
    else:
        pairs = [model.encode(t) for t in texts]
        probs = model(collate(pairs, model.backend.tokenizer.pad_id))
    model.train(was_training)
    probs = probs.double().numpy()
    return probs[0] if isinstance(post_text, str) else probs


TokenScores = dict[AttributeType, dict[str, np.ndarray]]


def scores_to_table(probs: np.ndarray, types: Sequence[AttributeType], method: str) -> TokenScores:
    """Split a ``(tokens, types, channels)`` array into per-type channel vectors."""
    names = ("start", "end") if method == "start_end" else ("inside",)
    return {t: {name: probs[:, a, c] for c, name in enumerate(names)} for a, t in enumerate(types)}


@torch.no_grad()
def extractor_forward(backend: EncoderBackend, head: ExtractorHead, pair: TokenizedPair) -> TokenScores:
    batch = collate([pair], backend.tokenizer.pad_id)
    hidden, _ = backend(batch)
    probs = head(hidden) * batch.post_mask[:, :, None, None].to(hidden.dtype)
    return scores_to_table(probs[0].double().numpy(), head.types, head.method)


@torch.no_grad()
def extractor_scores(model: AttributeExtractor, pairs: Sequence[TokenizedPair], batch_size: int = 32) -> list[TokenScores]:
    was_training = model.training
    model.eval()
    out = []
    for k in range(0, len(pairs), batch_size):
        chunk = pairs[k:k + batch_size]
        probs = model(collate(chunk, model.backend.tokenizer.pad_id)).double().numpy()
        for row, pair in enumerate(chunk):
            out.append(scores_to_table(probs[row, :len(pair)], model.types, model.method))
    model.train(was_training)
    return out


def weighted_nll_loss(
    probs: torch.Tensor,
    targets: torch.Tensor,
    w_pos: torch.Tensor | float = 1.0,
    w_neg: torch.Tensor | float = 1.0,
    mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Mean of ``-[w_pos*y*log p + w_neg*(1-y)*log(1-p)]`` over unmasked positions.

    ``mask`` broadcasts against ``probs``; probabilities are clamped to [1e-7, 1-1e-7].
    """
    w_pos = torch.as_tensor(w_pos, dtype=probs.dtype)
    w_neg = torch.as_tensor(w_neg, dtype=probs.dtype)
    if (w_pos <= 0).any() or (w_neg <= 0).any():
        raise ModelError("loss weights must be positive")
    if probs.shape != targets.shape:
        raise ModelError(f"shape mismatch: {tuple(probs.shape)} vs {tuple(targets.shape)}")
    p = probs.clamp(EPS, 1 - EPS)
    y = targets.to(probs.dtype)
    loss = -(w_pos * y * torch.log(p) + w_neg * (1 - y) * torch.log(1 - p))
    if mask is None:
        return loss.mean()
    m = mask.to(probs.dtype).expand_as(loss)
    return (loss * m).sum() / m.sum().clamp_min(1.0)


def balanced_weights(targets: torch.Tensor, mask: torch.Tensor | None = None,
                     reduce_dims: tuple[int, ...] = (0, 1)) -> tuple[torch.Tensor, torch.Tensor]:
    """Inverse class-frequency weights ``N/(2*N_pos)`` and ``N/(2*N_neg)`` per output channel.

    A class with no examples gets weight 1.
    """
    y = targets.to(torch.float64)
    m = torch.ones_like(y) if mask is None else mask.to(torch.float64).expand_as(y)
    n = (m).sum(dim=reduce_dims)
    n_pos = (y * m).sum(dim=reduce_dims)
    n_neg = n - n_pos
    w_pos = torch.where(n_pos > 0, n / (2 * n_pos.clamp_min(1)), torch.ones_like(n))
    w_neg = torch.where(n_neg > 0, n / (2 * n_neg.clamp_min(1)), torch.ones_like(n))
    return w_pos.float(), w_neg.float()
