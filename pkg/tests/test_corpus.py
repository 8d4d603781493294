import io
import json
import random

import pytest

from anamnesis.corpus import (
    STATS_COLUMNS,
    Corpus,
    CorpusError,
    augment_descriptions,
    corpus_stats,
    dumps_conflicts,
    dumps_corpus,
    format_stats_table,
    load_corpus,
    merge_double_labels,
    round_half_up,
    split_corpus,
)
from anamnesis.sampling import positives_for_post
from conftest import find, make_post

TEXT = "Ich habe seit drei Tagen Bauchschmerzen und Durchfall."


def sample_post(correct=True):
    return make_post(
        "p1", TEXT,
        symptoms=[("abdominal_pain", [find(TEXT, "Bauchschmerzen")]), ("diarrhea", [find(TEXT, "Durchfall")])],
        attributes=[("abdominal_pain", "time", *find(TEXT, "seit drei Tagen"))],
        correct=correct,
    )


def test_empty_file_gives_empty_corpus():
    assert len(load_corpus(io.StringIO(""))) == 0


def test_out_of_range_span_names_post():
    record = {"id": "bad-7", "text": "kurz", "symptoms": [{"symptom_id": "cough", "evidence": [{"start": 0, "end": 9}]}]}
    with pytest.raises(CorpusError) as info:
        load_corpus(io.StringIO(json.dumps(record)))
    assert info.value.post_id == "bad-7"


def test_unknown_symptom_rejected(ontology):
    record = {"id": "x", "text": "Husten", "symptoms": [{"symptom_id": "no_such", "evidence": []}]}
    with pytest.raises(CorpusError, match="no_such"):
        load_corpus(io.StringIO(json.dumps(record)), ontology)


def test_malformed_record_rejected():
    with pytest.raises(CorpusError):
        load_corpus(io.StringIO('{"id": "x"}'))
    with pytest.raises(CorpusError, match="line 1"):
        load_corpus(io.StringIO("{not json"))


def test_round_trip_byte_identical(ontology, tmp_path):
    corpus = Corpus([sample_post(), make_post("p2", "Mir ist übel.", ["nausea"])], split={"p1": "test", "p2": "train"})
    text = dumps_corpus(corpus)
    again = load_corpus(io.StringIO(text), ontology)
    assert dumps_corpus(again) == text
    assert again.split == corpus.split


def test_merge_identical_labelings():
    post = sample_post(correct=False)
    merged, conflicts = merge_double_labels(post, post)
    assert conflicts == []
    assert merged.double_labeled_correct
    assert merged.symptoms == post.symptoms and set(merged.attributes) == set(post.attributes)


def test_merge_symptom_only_on_one_side():
    a = sample_post()
    b = make_post("p1", TEXT, symptoms=[("abdominal_pain", [find(TEXT, "Bauchschmerzen")])],
                  attributes=[("abdominal_pain", "time", *find(TEXT, "seit drei Tagen"))])
    merged, conflicts = merge_double_labels(a, b)
    assert {"post_id": "p1", "kind": "symptom", "symptom_id": "diarrhea", "side": "a"} in conflicts
    assert "diarrhea" not in merged.symptom_ids
    assert not merged.double_labeled_correct


def test_merge_differing_attribute_span():
    a = make_post("p", "x" * 20, ["cough"], [("cough", "time", 5, 10), ("cough", "location", 12, 15)])
    b = make_post("p", "x" * 20, ["cough"], [("cough", "time", 5, 12), ("cough", "location", 12, 15)])
    merged, conflicts = merge_double_labels(a, b)
    assert sorted((c["side"], c["start"], c["end"]) for c in conflicts) == [("a", 5, 10), ("b", 5, 12)]
    assert [(x.type.value, x.span.start) for x in merged.attributes] == [("location", 12)]
    lines = dumps_conflicts(conflicts).splitlines()
    assert len(lines) == 2 and all(json.loads(line)["kind"] == "attribute" for line in lines)


def corpus_of(n_correct, n_other):
    posts = [make_post(f"c{i}", "Husten", ["cough"], correct=True) for i in range(n_correct)]
    posts += [make_post(f"o{i}", "Husten", ["cough"]) for i in range(n_other)]
    return Corpus(posts)


def test_split_sizes_ten_and_ten():
    split = split_corpus(corpus_of(10, 10), seed=3)
    assert (len(split.test), len(split.validation), len(split.train)) == (2, 2, 16)


def test_split_all_correct_five():
    split = split_corpus(corpus_of(5, 0), seed=0)
    assert (len(split.test), len(split.validation), len(split.train)) == (1, 0, 4)


def test_split_deterministic_and_requires_correct_posts():
    corpus = corpus_of(7, 13)
    assert split_corpus(corpus, 11).split == split_corpus(corpus, 11).split
    with pytest.raises(CorpusError):
        split_corpus(corpus_of(0, 4), 0)


def test_round_half_up():
    assert [round_half_up(x) for x in (0.4, 0.5, 1.5, 2.5, 1.8)] == [0, 1, 2, 3, 2]


def test_augment_pool_from_train_only(ontology):
    post = make_post("p", "Ich habe Bauchschmerzen.", [("abdominal_pain", [(9, 23)])])
    assert augment_descriptions(Corpus([post]), ontology) == {"abdominal_pain": ["Bauchschmerzen"]}
    assert augment_descriptions(Corpus([make_post("q", "Husten", ["cough"])]), ontology) == {}
    held = Corpus([post], split={"p": "test"})
    assert augment_descriptions(held, ontology) == {}


def test_augmented_positive_ratio_at_least_one(ontology):
    from anamnesis.synthetic import generate_synthetic_corpus

    corpus = generate_synthetic_corpus(ontology, 30, 2)
    pool = augment_descriptions(corpus, ontology)
    plain = sum(len(positives_for_post(p, ontology)) for p in corpus)
    augmented = sum(len(positives_for_post(p, ontology, pool, use_augmented=True)) for p in corpus)
    assert augmented / plain >= 1


def test_stats_empty_and_single():
    empty = corpus_stats(Corpus())
    assert empty["posts"] == 0
    assert all(v == 0 for row in empty["attributes"].values() for v in row.values())
    text = "seit drei Tagen Husten"
    report = corpus_stats(Corpus([make_post("p", text, ["cough"], [("cough", "time", 0, 15)])]))
    assert report["attributes"]["Time"] == {
        "Total Occurrences": 1, "Unique Occurrences": 1, "Mean Attribute Length": 3.0, "Attribute Length Std Dev": 0.0}
    assert all(tuple(row) == STATS_COLUMNS for row in report["attributes"].values())
    assert list(report["attributes"]) == ["Location", "Description", "Time", "Frequency", "Action"]
    assert "Total Occurrences" in format_stats_table(report)


def test_split_random_fractions():
    rng = random.Random(0)
    for _ in range(10):
        n_c, n_o = rng.randint(1, 40), rng.randint(0, 40)
        split = split_corpus(corpus_of(n_c, n_o), rng.randint(0, 999))
        assert set(p.id for p in split.test) <= {f"c{i}" for i in range(n_c)}
