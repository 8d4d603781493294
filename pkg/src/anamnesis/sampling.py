"""Positive/negative symptom-query examples and the curriculum over hierarchy distance."""
from __future__ import annotations

import random
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

from .corpus import AnnotatedPost
from .ontology import SymptomOntology

DEFAULT_STAGE_DISTANCES = (4, 3, 2, 1)


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class ClassificationExample:
    post_id: str
    symptom_id: str
    description_text: str
    label: int
    difficulty: float = 0.0


@dataclass(frozen=True)
class CurriculumStage:
    index: int
    min_distance: int

    def __post_init__(self):
        if self.index < 0 or self.min_distance < 1:
            raise ValueError(f"invalid curriculum stage {self}")


FINAL_STAGE = CurriculumStage(0, 1)


def make_stages(distances: Sequence[int] = DEFAULT_STAGE_DISTANCES) -> list[CurriculumStage]:
    if not distances:
        raise SamplingError("curriculum needs at least one stage")
    if any(b >= a for a, b in zip(distances, distances[1:])) or distances[-1] != 1:
        raise SamplingError(f"stage distances must strictly decrease to 1, got {list(distances)}")
    return [CurriculumStage(i, d) for i, d in enumerate(distances)]


def curriculum_schedule(
    epoch: int,
    total_epochs: int,
    stages: Sequence[CurriculumStage],
    fractions: Sequence[float] | None = None,
) -> CurriculumStage:
    """Stage active at ``epoch``; equal-width epoch bands unless ``fractions`` are given."""
    if not stages:
        raise SamplingError("curriculum needs at least one stage")
    if total_epochs < len(stages):
        raise SamplingError(f"{total_epochs} epochs cannot cover {len(stages)} stages")
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if fractions is None:
        return stages[epoch * len(stages) // total_epochs]
    if len(fractions) != len(stages) or any(f <= 0 for f in fractions):
        raise SamplingError("need one positive epoch fraction per stage")
    total = sum(fractions)
    edge = 0.0
    for stage, frac in zip(stages, fractions):
        edge += frac / total * total_epochs
        if epoch < edge - 1e-9:
            return stage
    return stages[-1]


def gold_symptoms(post: AnnotatedPost, closure: bool = True, ontology: SymptomOntology | None = None) -> set[str]:
    ids = set(post.symptom_ids)
    if closure:
        if ontology is None:
            raise ValueError("closure requires an ontology")
        return ontology.label_closure(ids)
    return ids


def positives_for_post(
    post: AnnotatedPost,
    ontology: SymptomOntology,
    pool: Mapping[str, Sequence[str]] | None = None,
    use_augmented: bool = False,
    closure: bool = True,
) -> list[ClassificationExample]:
    """One canonical example per positive symptom, plus one per pool entry when augmenting.

    With ``closure`` (the default) ancestors of annotated symptoms count as positives.
    """
    positives = []
    for sid in sorted(gold_symptoms(post, closure, ontology)):
        positives.append(ClassificationExample(post.id, sid, ontology[sid].description, 1))
        if use_augmented and pool:
            for text in pool.get(sid, ()):
                positives.append(ClassificationExample(post.id, sid, text, 1))
    return positives


def _min_distances(ontology: SymptomOntology, gold: set[str], candidates: list[str]) -> dict[str, int]:
    return {c: min(ontology.distance(c, g) for g in gold) for c in candidates}


def sample_negatives(
    post: AnnotatedPost,
    ontology: SymptomOntology,
    stage: CurriculumStage,
    rng: random.Random,
    count: int | None = None,
    pool: Mapping[str, Sequence[str]] | None = None,
    use_augmented: bool = False,
    closure: bool = True,
) -> list[ClassificationExample]:
    """Draw one negative per positive, at least ``stage.min_distance`` away from every gold symptom.

    Negatives are (symptom, description) pairs drawn without replacement. When the
    stage distance leaves too few pairs, the threshold drops to the largest distance
    that still yields enough.
    """
    if count is None:
        count = len(positives_for_post(post, ontology, pool, use_augmented, closure))
    if count == 0:
        raise SamplingError(f"post {post.id!r} has no positives")
    gold = set(post.symptom_ids)
    excluded = ontology.label_closure(gold)
    candidates = sorted(sid for sid in ontology if sid not in excluded)
    dist = _min_distances(ontology, gold, candidates)

    def descriptions(sid: str) -> list[str]:
        texts = [ontology[sid].description]
        if use_augmented and pool:
            texts.extend(t for t in pool.get(sid, ()) if t not in texts)
        return texts

    n_pairs = {sid: len(descriptions(sid)) for sid in candidates}
    threshold = stage.min_distance
    while threshold > 1 and sum(n for sid, n in n_pairs.items() if dist[sid] >= threshold) < count:
        threshold -= 1
    eligible = [sid for sid in candidates if dist[sid] >= threshold]
    if sum(n_pairs[sid] for sid in eligible) < count:
        raise SamplingError(
            f"post {post.id!r}: {count} negatives needed but only "
            f"{sum(n_pairs[s] for s in eligible)} non-closure pairs exist"
        )

    remaining = {sid: descriptions(sid) for sid in eligible}
    negatives = []
    for _ in range(count):
        open_ids = [sid for sid in eligible if remaining[sid]]
        sid = rng.choice(open_ids)
        text = remaining[sid].pop(rng.randrange(len(remaining[sid])))
        # Closer to gold means harder to tell apart.
        negatives.append(ClassificationExample(post.id, sid, text, 0, 1.0 / dist[sid]))
    return negatives
