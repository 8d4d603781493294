import random
from collections import Counter

import pytest

from anamnesis.sampling import (
    FINAL_STAGE,
    CurriculumStage,
    SamplingError,
    curriculum_schedule,
    make_stages,
    positives_for_post,
    sample_negatives,
)
from conftest import make_post


def test_positives_follow_closure(ontology):
    post = make_post("p", "Oberbauch tut weh", ["upper_abdominal_pain"])
    positives = positives_for_post(post, ontology)
    assert len(positives) == 4
    assert {p.symptom_id for p in positives} == {"upper_abdominal_pain", "abdominal_pain", "pain", "general_symptom"}
    assert all(p.label == 1 for p in positives)


def test_empty_pool_changes_nothing(ontology):
    post = make_post("p", "Husten", ["cough"])
    assert positives_for_post(post, ontology, {}, use_augmented=True) == positives_for_post(post, ontology)


def test_pool_entries_add_positives(ontology):
    sid = ontology.children(ontology.root_id)[0]
    post = make_post("p", "etwas", [sid])
    pool = {sid: ["a", "b", "c"]}
    mine = [p for p in positives_for_post(post, ontology, pool, use_augmented=True) if p.symptom_id == sid]
    assert len(mine) == 4


def test_final_stage_count_matches_positives(ontology):
    post = make_post("p", "Husten und Fieber", ["cough", "fever"])
    negatives = sample_negatives(post, ontology, FINAL_STAGE, random.Random(0))
    assert len(negatives) == len(positives_for_post(post, ontology))
    closure = ontology.label_closure({"cough", "fever"})
    assert all(n.label == 0 and n.symptom_id not in closure for n in negatives)


def test_min_distance_excludes_sibling(ontology):
    post = make_post("p", "Oberbauch", ["upper_abdominal_pain"])
    stage = CurriculumStage(1, 3)
    for seed in range(50):
        negatives = sample_negatives(post, ontology, stage, random.Random(seed))
        ids = {n.symptom_id for n in negatives}
        assert "lower_abdominal_pain" not in ids
        assert all(ontology.distance(s, "upper_abdominal_pain") >= 3 for s in ids)


def test_same_seed_same_negatives(ontology):
    post = make_post("p", "Husten", ["cough"])
    stage = CurriculumStage(0, 4)
    assert sample_negatives(post, ontology, stage, random.Random(9)) == sample_negatives(post, ontology, stage, random.Random(9))


def test_resampling_varies(ontology):
    post = make_post("p", "Husten", ["cough"])
    draws = {tuple(n.symptom_id for n in sample_negatives(post, ontology, FINAL_STAGE, random.Random(s))) for s in range(20)}
    assert len(draws) > 1


def test_too_many_negatives_requested(ontology):
    post = make_post("p", "Husten", ["cough"])
    with pytest.raises(SamplingError):
        sample_negatives(post, ontology, FINAL_STAGE, random.Random(0), count=len(ontology) + 1)


def test_schedule_single_stage():
    stages = make_stages((1,))
    assert {curriculum_schedule(e, 7, stages) for e in range(7)} == {stages[0]}


def test_schedule_bands():
    stages = make_stages((4, 3, 2, 1))
    got = Counter(curriculum_schedule(e, 40, stages).min_distance for e in range(40))
    assert got == {4: 10, 3: 10, 2: 10, 1: 10}
    assert [curriculum_schedule(e, 40, stages).min_distance for e in (0, 9, 10, 19, 20, 29, 30, 39)] == [4, 4, 3, 3, 2, 2, 1, 1]


def test_schedule_fractions():
    stages = make_stages((2, 1))
    seq = [curriculum_schedule(e, 10, stages, fractions=(0.3, 0.7)).min_distance for e in range(10)]
    assert seq == [2] * 3 + [1] * 7


def test_invalid_stage_lists():
    with pytest.raises(SamplingError):
        make_stages((3, 3, 1))
    with pytest.raises(SamplingError):
        make_stages((4, 2))
    with pytest.raises(SamplingError):
        curriculum_schedule(0, 2, make_stages((4, 3, 2, 1)))
