"""Two-stage extraction: detect symptoms, then pull attribute spans for each detection."""
from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import torch
from pydantic import BaseModel, ConfigDict, Field

from ..corpus import ATTRIBUTE_TYPES, AttributeType
from ..decoding import DecoderConfig, decode_scores, spans_to_output
from ..models import (
    GENERAL,
    AttributeExtractor,
    ClassificationResult,
    EncoderSigmoidBaseline,
    SymptomQueryModel,
    TfidfMlpBaseline,
    baseline_forward,
    classify_post,
    extractor_scores,
)
from ..ontology import SymptomOntology
from .artifacts import CLASSIFY, EXTRACT, LoadedArtifact, load_artifact

SCHEMA_PATH = Path("docs") / "structured_summary.schema.json"
AttributeLabel = Literal["Location", "Description", "Time", "Frequency", "Action"]


class PipelineError(ValueError):
    pass


class AttributeRow(BaseModel):
    model_config = ConfigDict(extra="forbid")

    type: AttributeLabel
    probability: float = Field(ge=0.0, le=1.0)
    text: str
    start: int = Field(ge=0, description="Character offset into the request text, inclusive.")
    end: int = Field(gt=0, description="Character offset into the request text, exclusive.")


class SymptomRow(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    name: str
    probability: float = Field(ge=0.0, le=1.0)
    attributes: list[AttributeRow]


class StructuredSummary(BaseModel):
    """Detected symptoms, most probable first, each with its attribute rows grouped by type."""

    model_config = ConfigDict(extra="forbid")

    symptoms: list[SymptomRow]


def summary_schema() -> dict:
    return StructuredSummary.model_json_schema()


def write_schema(path: str | Path = SCHEMA_PATH) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary_schema(), indent=2) + "\n", encoding="utf-8")
    return path


Classifier = SymptomQueryModel | EncoderSigmoidBaseline | TfidfMlpBaseline


def classify_text(model: Classifier, ontology: SymptomOntology, text: str, threshold: float = 0.5) -> ClassificationResult:
    if isinstance(model, SymptomQueryModel):
        return classify_post(model, ontology, text, threshold)
    probs = baseline_forward(model, text)
    table = {sid: float(p) for sid, p in zip(model.labels, probs)}
    raw = frozenset(s for s, p in table.items() if p > threshold)
    return ClassificationResult(table, raw, frozenset(ontology.label_closure(raw)))


def select_extractors(extractors: Sequence[AttributeExtractor]) -> list[AttributeExtractor]:
    """A general extractor, or single-type extractors covering all five types."""
    general = [m for m in extractors if m.head.scope == GENERAL]
    if general:
        return general[:1]
    by_type = {m.types[0]: m for m in extractors}
    missing = [t.label for t in ATTRIBUTE_TYPES if t not in by_type]
    if missing:
        raise PipelineError(f"extractors do not cover: {', '.join(missing)}")
    return [by_type[t] for t in ATTRIBUTE_TYPES]


@dataclass
class Pipeline:
    classifier: Classifier
    extractors: list[AttributeExtractor]
    ontology: SymptomOntology
    decoder: DecoderConfig = DecoderConfig()
    threshold: float = 0.5
    include_ancestors: bool = False

    def __post_init__(self):
        self.extractors = select_extractors(self.extractors)
        self.classifier.eval()
        for m in self.extractors:
            m.eval()

    @classmethod
    def from_artifacts(cls, classifier_dir: str | Path, extractor_dirs: Sequence[str | Path],
                       ontology: SymptomOntology, **kwargs) -> Pipeline:
        classifier: LoadedArtifact = load_artifact(classifier_dir, ontology, CLASSIFY)
        extractors = [load_artifact(d, ontology, EXTRACT).model for d in extractor_dirs]
        return cls(classifier.model, extractors, ontology, **kwargs)

    @torch.no_grad()
    def extract(self, text: str, threshold: float | None = None) -> StructuredSummary:
        if not text or not text.strip():
            raise PipelineError("empty text")
        result = classify_text(self.classifier, self.ontology, text, self.threshold if threshold is None else threshold)
        queried = result.closure if self.include_ancestors else result.raw
        rows = []
        for sid in queried:
            # Closure-added ancestors the baseline cannot score inherit their best descendant's probability.
            prob = result.probabilities.get(sid)
            if prob is None:
                prob = max(result.probabilities[s] for s in result.raw if sid in self.ontology.ancestors(s))
            rows.append((sid, prob))
        rows.sort(key=lambda r: (-r[1], r[0]))

        symptoms = []
        for sid, prob in rows:
            node = self.ontology[sid]
            attributes = []
            for model in self.extractors:
                pair = model.backend.encode(node.description, text)
                scores = extractor_scores(model, [pair])[0]
                spans = decode_scores(scores, model.method, self.decoder)
                attributes.extend(spans_to_output(pair, spans))
            attributes.sort(key=lambda a: (ATTRIBUTE_TYPES.index(a.type), -a.score, a.char_span.start))
            symptoms.append(SymptomRow(
                id=sid,
                name=node.name,
                probability=min(max(prob, 0.0), 1.0),
                attributes=[
                    AttributeRow(type=AttributeType(a.type).label, probability=min(max(a.score, 0.0), 1.0), text=a.text,
                                 start=a.char_span.start, end=a.char_span.end)
                    for a in attributes
                ],
            ))
        return StructuredSummary(symptoms=symptoms)


def extract(classifier: Classifier, extractors: Sequence[AttributeExtractor], ontology: SymptomOntology, text: str,
            decoder: DecoderConfig = DecoderConfig(), threshold: float = 0.5,
            include_ancestors: bool = False) -> StructuredSummary:
    return Pipeline(classifier, list(extractors), ontology, decoder, threshold, include_ancestors).extract(text)
