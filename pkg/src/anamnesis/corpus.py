"""Annotated posts: data model, JSON-lines I/O, double-label merging, splits, stats."""
from __future__ import annotations

import io
import json
import math
import random
from collections import Counter, defaultdict
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .ontology import SymptomOntology

TEST_FRACTION = 0.20
VALIDATION_FRACTION = 0.10
SPLITS = ("train", "validation", "test")


class CorpusError(ValueError):
    def __init__(self, message: str, post_id: str | None = None):
        super().__init__(message if post_id is None else f"post {post_id!r}: {message}")
        self.post_id = post_id


class AttributeType(str, Enum):
    LOCATION = "location"
    DESCRIPTION = "description"
    TIME = "time"
    FREQUENCY = "frequency"
    ACTION = "action"

    @property
    def label(self) -> str:
        return self.value.capitalize()


# Column order used by every report table.
ATTRIBUTE_TYPES: tuple[AttributeType, ...] = tuple(AttributeType)


@dataclass(frozen=True, order=True)
class CharSpan:
    """Half-open code-point range ``[start, end)`` into a post text."""

    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"invalid span ({self.start}, {self.end})")

    def within(self, text: str) -> bool:
        return self.end <= len(text)

    def overlaps(self, other: CharSpan) -> bool:
        return self.start < other.end and other.start < self.end


@dataclass(frozen=True)
class Post:
    id: str
    text: str

    def __post_init__(self):
        if not self.text:
            raise CorpusError("empty post text", self.id)


@dataclass(frozen=True)
class SymptomAnnotation:
    symptom_id: str
    evidence: tuple[CharSpan, ...] = ()


@dataclass(frozen=True)
class AttributeAnnotation:
    symptom_id: str
    type: AttributeType
    span: CharSpan


@dataclass(frozen=True)
class AnnotatedPost:
    post: Post
    symptoms: tuple[SymptomAnnotation, ...] = ()
    attributes: tuple[AttributeAnnotation, ...] = ()
    double_labeled_correct: bool = False

    def __post_init__(self):
        seen = set()
        for sym in self.symptoms:
            if sym.symptom_id in seen:
                raise CorpusError(f"duplicate symptom {sym.symptom_id!r}", self.id)
            seen.add(sym.symptom_id)
            for span in sym.evidence:
                if not span.within(self.post.text):
                    raise CorpusError(f"evidence span {span} out of range", self.id)
        for attr in self.attributes:
            if attr.symptom_id not in seen:
                raise CorpusError(f"attribute refers to unannotated symptom {attr.symptom_id!r}", self.id)
            if not attr.span.within(self.post.text):
                raise CorpusError(f"attribute span {attr.span} out of range", self.id)

    @property
    def id(self) -> str:
        return self.post.id

    @property
    def text(self) -> str:
        return self.post.text

    @property
    def symptom_ids(self) -> list[str]:
        return [s.symptom_id for s in self.symptoms]

    def attributes_for(self, symptom_id: str) -> list[AttributeAnnotation]:
        return [a for a in self.attributes if a.symptom_id == symptom_id]

    def surface(self, span: CharSpan) -> str:
        return self.post.text[span.start:span.end]


@dataclass
class Corpus:
    posts: list[AnnotatedPost] = field(default_factory=list)
    split: dict[str, str] = field(default_factory=dict)
    pool: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        ids = [p.id for p in self.posts]
        if len(set(ids)) != len(ids):
            dup = next(i for i, c in Counter(ids).items() if c > 1)
            raise CorpusError("duplicate post id", dup)

    def __len__(self) -> int:
        return len(self.posts)

    def __iter__(self):
        return iter(self.posts)

    def get(self, post_id: str) -> AnnotatedPost:
        for post in self.posts:
            if post.id == post_id:
                return post
        raise KeyError(post_id)

    def subset(self, name: str) -> list[AnnotatedPost]:
        """Posts assigned to ``name``; an unsplit corpus counts entirely as train."""
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        if not self.split:
            return list(self.posts) if name == "train" else []
        return [p for p in self.posts if self.split.get(p.id) == name]

    @property
    def train(self) -> list[AnnotatedPost]:
        return self.subset("train")

    @property
    def validation(self) -> list[AnnotatedPost]:
        return self.subset("validation")

    @property
    def test(self) -> list[AnnotatedPost]:
        return self.subset("test")


# -- serialization -----------------------------------------------------------------


def post_to_record(post: AnnotatedPost, split: str | None = None) -> dict:
    record = {
        "id": post.id,
        "text": post.text,
        "symptoms": [
            {"symptom_id": s.symptom_id, "evidence": [{"start": e.start, "end": e.end} for e in s.evidence]}
            for s in post.symptoms
        ],
        "attributes": [
            {"symptom_id": a.symptom_id, "type": a.type.value, "start": a.span.start, "end": a.span.end}
            for a in post.attributes
        ],
        "double_labeled_correct": post.double_labeled_correct,
    }
    if split is not None:
        record["split"] = split
    return record


def post_from_record(record: Mapping, ontology: SymptomOntology | None = None) -> AnnotatedPost:
    post_id = str(record.get("id", "?"))
    try:
        text = record["text"]
        post = Post(id=post_id, text=text)
        symptoms = []
        for s in record.get("symptoms", []):
            evidence = tuple(_span(e, text, post_id) for e in s.get("evidence", []))
            symptoms.append(SymptomAnnotation(symptom_id=str(s["symptom_id"]), evidence=evidence))
        attributes = []
        for a in record.get("attributes", []):
            attributes.append(
                AttributeAnnotation(
                    symptom_id=str(a["symptom_id"]),
                    type=AttributeType(a["type"]),
                    span=_span(a, text, post_id),
                )
            )
        flag = record.get("double_labeled_correct", False)
        if not isinstance(flag, bool):
            raise CorpusError("double_labeled_correct must be a boolean", post_id)
    except CorpusError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusError(f"malformed record ({exc})", post_id) from exc

    if ontology is not None:
        for s in symptoms:
            if s.symptom_id not in ontology:
                raise CorpusError(f"unknown symptom id {s.symptom_id!r}", post_id)
    return AnnotatedPost(
        post=post, symptoms=tuple(symptoms), attributes=tuple(attributes), double_labeled_correct=flag
    )


def _span(raw: Mapping, text: str, post_id: str) -> CharSpan:
    start, end = int(raw["start"]), int(raw["end"])
    if not (0 <= start < end <= len(text)):
        raise CorpusError(f"span ({start}, {end}) out of range for text of length {len(text)}", post_id)
    return CharSpan(start, end)


def load_corpus(source: str | Path | io.TextIOBase, ontology: SymptomOntology | None = None) -> Corpus:
    """Read a JSON-lines corpus; an optional ``split`` field per record restores the split."""
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    else:
        lines = source.read().splitlines()
    posts, split = [], {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(record, dict):
            raise CorpusError(f"line {lineno}: record is not an object")
        post = post_from_record(record, ontology)
        posts.append(post)
        if "split" in record:
            if record["split"] not in SPLITS:
                raise CorpusError(f"unknown split {record['split']!r}", post.id)
            split[post.id] = record["split"]
    return Corpus(posts=posts, split=split)


def dumps_corpus(corpus: Corpus) -> str:
    lines = [
        json.dumps(post_to_record(p, corpus.split.get(p.id)), ensure_ascii=False, sort_keys=True)
        for p in corpus.posts
    ]
    return "".join(line + "\n" for line in lines)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text(dumps_corpus(corpus), encoding="utf-8")


# -- double labelling -----------------------------------------------------------------


def merge_double_labels(a: AnnotatedPost, b: AnnotatedPost) -> tuple[AnnotatedPost, list[dict]]:
    """Keep what both labelers agree on and emit every disagreement as a conflict record.

    The merged post is flagged ``double_labeled_correct`` only when nothing conflicts.
    """
    if a.id != b.id or a.text != b.text:
        raise CorpusError("cannot merge labelings of different posts", a.id)

    conflicts: list[dict] = []
    sym_a = {s.symptom_id: s for s in a.symptoms}
    sym_b = {s.symptom_id: s for s in b.symptoms}

    merged_symptoms = []
    for sid in sorted(sym_a.keys() | sym_b.keys()):
        if sid not in sym_b or sid not in sym_a:
            conflicts.append({"post_id": a.id, "kind": "symptom", "symptom_id": sid,
                              "side": "a" if sid in sym_a else "b"})
            continue
        ev_a, ev_b = set(sym_a[sid].evidence), set(sym_b[sid].evidence)
        for side, only in (("a", ev_a - ev_b), ("b", ev_b - ev_a)):
            for span in sorted(only):
                conflicts.append({"post_id": a.id, "kind": "evidence", "symptom_id": sid, "side": side,
                                  "start": span.start, "end": span.end})
        merged_symptoms.append(SymptomAnnotation(sid, tuple(sorted(ev_a & ev_b))))

    kept = {s.symptom_id for s in merged_symptoms}
    attr_a, attr_b = set(a.attributes), set(b.attributes)
    for side, only in (("a", attr_a - attr_b), ("b", attr_b - attr_a)):
        for attr in sorted(only, key=_attr_key):
            conflicts.append({"post_id": a.id, "kind": "attribute", "symptom_id": attr.symptom_id,
                              "side": side, "type": attr.type.value,
                              "start": attr.span.start, "end": attr.span.end})
    merged_attributes = tuple(sorted((x for x in attr_a & attr_b if x.symptom_id in kept), key=_attr_key))

    merged = AnnotatedPost(
        post=a.post,
        symptoms=tuple(merged_symptoms),
        attributes=merged_attributes,
        double_labeled_correct=not conflicts,
    )
    return merged, conflicts


def _attr_key(attr: AttributeAnnotation):
    return (attr.symptom_id, ATTRIBUTE_TYPES.index(attr.type), attr.span.start, attr.span.end)


def dumps_conflicts(conflicts: Iterable[dict]) -> str:
    return "".join(json.dumps(c, ensure_ascii=False, sort_keys=True) + "\n" for c in conflicts)


# -- splits ---------------------------------------------------------------------------


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_counts(n_correct: int, n_total: int) -> tuple[int, int]:
    """(test, validation) sizes for a corpus with ``n_correct`` verified posts out of ``n_total``."""
    n_test = round_half_up(TEST_FRACTION * n_correct)
    n_val = round_half_up(VALIDATION_FRACTION * (n_total - n_test))
    return n_test, n_val


def split_corpus(corpus: Corpus, seed: int) -> Corpus:
    """Assign posts to train/validation/test.

    Test is drawn only from posts whose double labeling was verified correct;
    validation comes from everything left over.
    """
    correct = sorted(p.id for p in corpus.posts if p.double_labeled_correct)
    if not correct:
        raise CorpusError("no double-labeled-correct posts available for the test split")
    rng = random.Random(seed)
    n_test, n_val = split_counts(len(correct), len(corpus.posts))
    test = set(rng.sample(correct, n_test))
    remainder = sorted(p.id for p in corpus.posts if p.id not in test)
    val = set(rng.sample(remainder, n_val))
    assignment = {}
    for post in corpus.posts:
        assignment[post.id] = "test" if post.id in test else "validation" if post.id in val else "train"
    return replace(corpus, split=assignment, pool={})


# -- augmented descriptions --------------------------------------------------------------


def augment_descriptions(corpus: Corpus, ontology: SymptomOntology) -> dict[str, list[str]]:
    """Map each symptom to the verbatim text segments annotated as it in train posts."""
    pool: dict[str, list[str]] = {}
    for post in corpus.train:
        for sym in post.symptoms:
            if sym.symptom_id not in ontology:
                raise KeyError(f"unknown symptom id {sym.symptom_id!r}")
            for span in sym.evidence:
                segment = post.surface(span)
                entries = pool.setdefault(sym.symptom_id, [])
                if segment not in entries:
                    entries.append(segment)
    return pool


# -- statistics -----------------------------------------------------------------------

STATS_COLUMNS = ("Total Occurrences", "Unique Occurrences", "Mean Attribute Length", "Attribute Length Std Dev")


def corpus_stats(corpus: Corpus, ontology: SymptomOntology | None = None) -> dict:
    """Per-type attribute statistics in the dataset report layout.

    Attribute length is counted in whitespace tokens. "Unique Occurrences" deduplicates
    surface strings corpus-wide; the per-post variant is reported alongside it.
    """
    lengths: dict[AttributeType, list[int]] = defaultdict(list)
    unique: dict[AttributeType, set[str]] = defaultdict(set)
    unique_per_post: dict[AttributeType, set[tuple[str, str]]] = defaultdict(set)
    leaf_counts: Counter[str] = Counter()
    n_symptoms = 0
    for post in corpus.posts:
        n_symptoms += len(post.symptoms)
        leaf_counts.update(post.symptom_ids)
        for attr in post.attributes:
            surface = post.surface(attr.span)
            lengths[attr.type].append(len(surface.split()))
            unique[attr.type].add(surface)
            unique_per_post[attr.type].add((post.id, surface))

    attributes = {}
    for t in ATTRIBUTE_TYPES:
        arr = np.asarray(lengths[t], dtype=float)
        attributes[t.label] = {
            "Total Occurrences": int(arr.size),
            "Unique Occurrences": len(unique[t]),
            "Mean Attribute Length": float(arr.mean()) if arr.size else 0.0,
            "Attribute Length Std Dev": float(arr.std()) if arr.size else 0.0,
        }
    report = {
        "posts": len(corpus.posts),
        "symptom_annotations": n_symptoms,
        "attribute_annotations": sum(v["Total Occurrences"] for v in attributes.values()),
        "unique_attribute_segments": sum(v["Unique Occurrences"] for v in attributes.values()),
        "attributes": attributes,
        "unique_per_post": {t.label: len(unique_per_post[t]) for t in ATTRIBUTE_TYPES},
        "symptoms": dict(leaf_counts.most_common()),
    }
    if ontology is not None:
        report["symptom_names"] = {sid: ontology[sid].name for sid in leaf_counts if sid in ontology}
    return report


def format_stats_table(report: dict) -> str:
    header = f"{'':<12}" + "".join(f"{c:>26}" for c in STATS_COLUMNS)
    rows = [header]
    for label, row in report["attributes"].items():
        cells = [f"{row[c]:>26d}" if isinstance(row[c], int) else f"{row[c]:>26.2f}" for c in STATS_COLUMNS]
        rows.append(f"{label:<12}" + "".join(cells))
    return "\n".join(rows)
