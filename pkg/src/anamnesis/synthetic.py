"""Template-based German forum posts with exact gold spans.

Stands in for the private forum data. Each post mentions one to five leaf
symptoms, one sentence per symptom; that sentence also carries the symptom's
attributes. Distractor sentences without symptoms are interleaved.
"""
from __future__ import annotations

import random

from .corpus import (
    AnnotatedPost,
    AttributeAnnotation,
    AttributeType,
    CharSpan,
    Corpus,
    Post,
    SymptomAnnotation,
    round_half_up,
)
from .ontology import SymptomOntology

DOUBLE_LABELED_FRACTION = 0.60

# Surface variants per fixture leaf; unknown leaves fall back to the node name.
SURFACE_VARIANTS: dict[str, list[str]] = {
    "upper_abdominal_pain": ["Oberbauchschmerzen", "Schmerzen im Oberbauch", "Druck im Oberbauch"],
    "lower_abdominal_pain": ["Unterbauchschmerzen", "Schmerzen im Unterbauch", "Ziehen im Unterbauch"],
    "headache": ["Kopfschmerzen", "Schmerzen im Kopf", "einen dröhnenden Kopf"],
    "back_pain": ["Rückenschmerzen", "Schmerzen im Rücken", "einen verspannten Rücken"],
    "chest_pain": ["Brustschmerzen", "Schmerzen in der Brust", "ein Stechen in der Brust"],
    "diarrhea": ["Durchfall", "flüssigen Stuhlgang", "wässrigen Durchfall"],
    "nausea": ["Übelkeit", "mir ist übel", "so eine Übelkeit"],
    "vomiting": ["Erbrechen", "muss mich übergeben", "heftiges Erbrechen"],
    "flatulence": ["Blähungen", "viele Winde", "starke Blähungen"],
    "bloating": ["Völlegefühl", "einen aufgeblähten Bauch", "ein unangenehmes Völlegefühl"],
    "constipation": ["Verstopfung", "harten Stuhlgang", "eine hartnäckige Verstopfung"],
    "hematochezia": ["Blut im Stuhl", "blutigen Stuhlgang", "hellrotes Blut im Stuhl"],
    "heartburn": ["Sodbrennen", "saures Aufstoßen", "brennendes Sodbrennen"],
    "loss_of_appetite": ["Appetitlosigkeit", "keinen Hunger", "gar keinen Appetit"],
    "cough": ["Husten", "einen trockenen Husten", "ständigen Hustenreiz"],
    "shortness_of_breath": ["Atemnot", "bekomme schlecht Luft", "kurze Atemnot"],
    "dizziness": ["Schwindel", "mir ist schwindelig", "leichten Schwindel"],
    "numbness": ["Taubheitsgefühl", "ein Kribbeln", "ein Taubheitsgefühl in der Haut"],
    "agitation": ["Unruhe", "innere Unruhe", "eine starke Nervosität"],
    "anxiety": ["Angst", "Angstgefühle", "große Sorgen"],
    "fatigue": ["Müdigkeit", "Erschöpfung", "eine bleierne Schlappheit"],
    "fever": ["Fieber", "erhöhte Temperatur", "leichtes Fieber"],
    "weight_loss": ["Gewichtsverlust", "ungewollt abgenommen", "deutlich an Gewicht verloren"],
}

# Phrase banks sized so Action is the longest type and Time/Description the most frequent.
PHRASES: dict[AttributeType, list[str]] = {
    AttributeType.TIME: [
        "seit drei Tagen", "seit gestern", "seit zwei Wochen", "seit einem halben Jahr", "morgens",
        "nachts", "nach dem Aufstehen", "seit letztem Montag", "abends", "vor einem Monat",
        "seit Anfang des Jahres", "seit ein paar Wochen",
    ],
    AttributeType.DESCRIPTION: [
        "stechende", "starke", "dumpfe", "krampfartige", "sehr heftige", "brennende", "leichte",
        "ziemlich unangenehme", "pochende", "kaum auszuhaltende",
    ],
    AttributeType.LOCATION: [
        "auf der linken Seite", "neben dem Bauchnabel", "im rechten Oberbauch", "in der Magengegend",
        "unter den Rippen", "im ganzen Bauch", "links", "hinter dem Brustbein", "im unteren Rücken",
        "rechts", "an der Stirn",
    ],
    AttributeType.FREQUENCY: [
        "ständig", "meistens", "immer wieder", "ab und zu", "mehrmals täglich", "fast jeden Tag",
        "selten", "oft",
    ],
    AttributeType.ACTION: [
        "wenn man draufdrückt", "nach dem Essen", "beim Treppensteigen mit schweren Taschen",
        "wenn ich mich nach vorne beuge", "nachdem ich fettiges Essen gegessen habe",
        "sobald ich mich hinlege und ausruhe", "beim Laufen an der frischen Luft",
        "wenn ich morgens Kaffee trinke",
    ],
}

TYPE_WEIGHTS = {
    AttributeType.TIME: 0.30,
    AttributeType.DESCRIPTION: 0.26,
    AttributeType.LOCATION: 0.17,
    AttributeType.FREQUENCY: 0.14,
    AttributeType.ACTION: 0.13,
}

OPENERS = ["Ich habe", "Außerdem habe ich", "Dazu kommt", "Ich leide unter", "Bei mir gibt es", "Zusätzlich habe ich"]
GREETINGS = ["Hallo,", "Hallo zusammen,", "Hi,", "Liebe Community,", ""]
DISTRACTORS = [
    "Mein Arzt meint, das sei nicht schlimm.",
    "Hat jemand eine Idee, was das sein könnte?",
    "Ich war schon beim Hausarzt, aber der hat nichts gefunden.",
    "Danke schon mal für eure Antworten!",
    "Die Tabletten haben leider überhaupt nicht geholfen.",
    "Ich weiss nicht so recht, was ich machen soll.",
    "Nächste Woche habe ich einen Termin beim Spezialisten.",
    "Vielleicht hat ja jemand etwas Ähnliches erlebt.",
]


def _weighted_types(rng: random.Random, k: int) -> list[AttributeType]:
    types = list(TYPE_WEIGHTS)
    weights = [TYPE_WEIGHTS[t] for t in types]
    return rng.choices(types, weights=weights, k=k)


class _Builder:
    """Accumulates text while recording the character span of tagged pieces."""

    def __init__(self):
        self.parts: list[str] = []
        self.length = 0

    def add(self, piece: str) -> CharSpan | None:
        if not piece:
            return None
        start = self.length
        self.parts.append(piece)
        self.length += len(piece)
        return CharSpan(start, self.length)

    def text(self) -> str:
        return "".join(self.parts)


def _symptom_sentence(b: _Builder, rng: random.Random, surface: str, attrs: list[tuple[AttributeType, str]]):
    """Append one sentence; returns the symptom span and (type, span) for each attribute."""
    # At most one pre-modifier per type, so same-type spans are never adjacent.
    before: list[tuple[AttributeType, str]] = []
    for a in attrs:
        if a[0] in (AttributeType.DESCRIPTION, AttributeType.FREQUENCY) and all(a[0] != t for t, _ in before):
            if rng.random() < 0.6:
                before.append(a)
    after = [a for a in attrs if a not in before]
    rng.shuffle(after)

    spans: list[tuple[AttributeType, CharSpan]] = []
    b.add(rng.choice(OPENERS) + " ")
    for t, phrase in sorted(before, key=lambda a: a[0] != AttributeType.FREQUENCY):
        spans.append((t, b.add(phrase)))
        b.add(" ")
    symptom_span = b.add(surface)
    for i, (t, phrase) in enumerate(after):
        b.add(rng.choice([" ", ", "]) if i == 0 else ", ")
        spans.append((t, b.add(phrase)))
    b.add(".")
    return symptom_span, spans


def generate_post(ontology: SymptomOntology, rng: random.Random, post_id: str, leaves: list[str]) -> AnnotatedPost:
    k = rng.choices([1, 2, 3, 4, 5], weights=[0.3, 0.3, 0.2, 0.12, 0.08])[0]
    chosen = rng.sample(leaves, min(k, len(leaves)))

    sentences: list[str | tuple[str, list[tuple[AttributeType, str]]]] = []
    for sid in chosen:
        n_attr = rng.choices([0, 1, 2, 3, 4], weights=[0.15, 0.3, 0.3, 0.15, 0.1])[0]
        attrs: list[tuple[AttributeType, str]] = []
        for t in _weighted_types(rng, n_attr):
            phrase = rng.choice(PHRASES[t])
            if all(phrase != p for _, p in attrs):
                attrs.append((t, phrase))
        sentences.append((sid, attrs))
    for _ in range(rng.choice([0, 1, 1, 2, 3])):
        sentences.insert(rng.randrange(len(sentences) + 1), rng.choice(DISTRACTORS))

    b = _Builder()
    greeting = rng.choice(GREETINGS)
    if greeting:
        b.add(greeting + " ")
    symptoms, attributes = [], []
    for i, item in enumerate(sentences):
        if i:
            b.add(" ")
        if isinstance(item, str):
            b.add(item)
            continue
        sid, attrs = item
        surface = rng.choice(SURFACE_VARIANTS.get(sid) or [ontology[sid].name])
        symptom_span, spans = _symptom_sentence(b, rng, surface, attrs)
        symptoms.append(SymptomAnnotation(sid, (symptom_span,)))
        attributes.extend(AttributeAnnotation(sid, t, span) for t, span in spans)

    return AnnotatedPost(post=Post(post_id, b.text()), symptoms=tuple(symptoms), attributes=tuple(attributes))


def generate_synthetic_corpus(ontology: SymptomOntology, size: int, seed: int) -> Corpus:
    """Deterministic synthetic corpus of ``size`` posts; 60% flagged double-labeled-correct."""
    if size < 1:
        raise ValueError("size must be at least 1")
    rng = random.Random(seed)
    leaves = sorted(ontology.leaves())
    posts = [generate_post(ontology, rng, f"syn-{seed}-{i:05d}", leaves) for i in range(size)]
    n_correct = round_half_up(DOUBLE_LABELED_FRACTION * size)
    correct = set(rng.sample(range(size), n_correct))
    posts = [
        AnnotatedPost(p.post, p.symptoms, p.attributes, double_labeled_correct=i in correct)
        for i, p in enumerate(posts)
    ]
    return Corpus(posts=posts)
