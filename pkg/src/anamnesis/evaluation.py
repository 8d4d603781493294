"""Run trained models over annotated posts and score them."""
from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .corpus import AnnotatedPost
from .decoding import DecoderConfig, decode_scores
from .encoding import align_spans_to_tokens
from .metrics import EvalReport, classification_metrics, token_extraction_metrics
from .models import (
    AttributeExtractor,
    EncoderSigmoidBaseline,
    SymptomQueryModel,
    TfidfMlpBaseline,
    baseline_forward,
    extractor_scores,
    sq_scores,
)
from .ontology import SymptomOntology

Classifier = SymptomQueryModel | EncoderSigmoidBaseline | TfidfMlpBaseline


def predict_symptoms(
    model: Classifier,
    posts: Sequence[AnnotatedPost],
    ontology: SymptomOntology,
    threshold: float = 0.5,
    closure: bool = True,
    batch_size: int = 64,
) -> dict[str, set[str]]:
    """Predicted symptom set per post id, closure-completed when ``closure`` is set."""
    preds: dict[str, set[str]] = {}
    if not posts:
        return preds
    if isinstance(model, SymptomQueryModel):
        ids = list(ontology)
        queries = [(ontology[s].description, p.text) for p in posts for s in ids]
        probs = sq_scores(model, queries, batch_size).reshape(len(posts), len(ids))
        for post, row in zip(posts, probs):
            preds[post.id] = {s for s, pr in zip(ids, row) if pr > threshold}
    else:
        probs = np.atleast_2d(baseline_forward(model, [p.text for p in posts]))
        for post, row in zip(posts, probs):
            preds[post.id] = {s for s, pr in zip(model.labels, row) if pr > threshold}
    if closure:
        preds = {k: ontology.label_closure(v) for k, v in preds.items()}
    return preds


def gold_symptom_sets(posts: Sequence[AnnotatedPost], ontology: SymptomOntology, closure: bool = True) -> dict[str, set[str]]:
    return {p.id: ontology.label_closure(p.symptom_ids) if closure else set(p.symptom_ids) for p in posts}


def evaluate_classifier(
    model: Classifier,
    posts: Sequence[AnnotatedPost],
    ontology: SymptomOntology,
    threshold: float = 0.5,
    closure: bool = True,
) -> EvalReport:
    pred = predict_symptoms(model, posts, ontology, threshold, closure)
    return classification_metrics(pred, gold_symptom_sets(posts, ontology, closure))


def extraction_instances(model: AttributeExtractor, posts: Sequence[AnnotatedPost], ontology: SymptomOntology):
    """One (key, pair, gold targets) triple per annotated symptom of each post."""
    for post in posts:
        for sid in post.symptom_ids:
            pair = model.backend.encode(ontology[sid].description, post.text)
            targets = align_spans_to_tokens(pair, post.attributes_for(sid))
            yield (post.id, sid), pair, targets


def evaluate_extractor(
    model: AttributeExtractor,
    posts: Sequence[AnnotatedPost],
    ontology: SymptomOntology,
    config: DecoderConfig = DecoderConfig(),
) -> EvalReport:
    keys, pairs, gold, dropped = [], [], {}, 0
    for key, pair, targets in extraction_instances(model, posts, ontology):
        keys.append(key)
        pairs.append(pair)
        gold[key] = {t: targets.spans[t] for t in model.types}
        dropped += targets.dropped
    pred = {}
    for key, scores in zip(keys, extractor_scores(model, pairs)):
        spans = decode_scores(scores, model.method, config)
        by_type: dict = {t: [] for t in model.types}
        for s in spans:
            by_type[s.type].append((s.start, s.end))
        pred[key] = by_type
    return token_extraction_metrics(pred, gold, types=model.types, dropped_spans=dropped)
