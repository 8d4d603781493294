import os
import subprocess
import sys

import numpy as np
import pytest

from anamnesis.corpus import AttributeAnnotation, AttributeType, CharSpan
from anamnesis.encoding import (
    EncodingError,
    SubwordTokenizer,
    WordTokenizer,
    align_spans_to_tokens,
    encode_pair,
    tokens_to_char_span,
)
from anamnesis.synthetic import generate_synthetic_corpus

TABLE_TEXT = "I have pain in my right knee and shin"


def ann(text, needle, kind=AttributeType.LOCATION):
    s = text.index(needle)
    return AttributeAnnotation("x", kind, CharSpan(s, s + len(needle)))


@pytest.fixture(scope="module")
def subword(ontology):
    corpus = generate_synthetic_corpus(ontology, 40, 0)
    return SubwordTokenizer.train([p.text for p in corpus] + [ontology[s].description for s in ontology], vocab_size=600)


def test_layout():
    tok = WordTokenizer()
    pair = encode_pair("X", "Y", tok)
    assert pair.sections == ("special", "symptom", "special", "post", "special")
    assert pair.token_ids[0] == tok.cls_id and pair.token_ids[2] == tok.sep_id == pair.token_ids[-1]
    assert pair.token_type_ids == [0, 0, 0, 1, 1]
    with pytest.raises(EncodingError):
        encode_pair("X", "   ", tok)


def test_long_post_truncated():
    pair = encode_pair("Bauchschmerzen", "wort " * 2000, WordTokenizer(), max_length=128)
    assert pair.truncated and len(pair) == 128


def test_table_targets():
    pair = encode_pair("", TABLE_TEXT, WordTokenizer())
    post = pair.post_token_indices
    targets = align_spans_to_tokens(pair, [ann(TABLE_TEXT, "right knee"), ann(TABLE_TEXT, "shin")])
    loc = AttributeType.LOCATION
    rel = lambda v: [k for k, i in enumerate(post) if v[i]]
    assert rel(targets.start[loc]) == [5, 8]
    assert rel(targets.end[loc]) == [6, 8]
    assert rel(targets.inside[loc]) == [5, 6, 8]
    empty = align_spans_to_tokens(pair, [])
    assert not any(v.any() for v in empty.inside.values())


def test_partial_token_is_covered_whole():
    text = "Bauchschmerzen links"
    pair = encode_pair("a", text, WordTokenizer())
    targets = align_spans_to_tokens(pair, [AttributeAnnotation("x", AttributeType.LOCATION, CharSpan(2, 5))])
    (i, j), = targets.spans[AttributeType.LOCATION]
    assert tokens_to_char_span(pair, i, j) == CharSpan(0, 14)


def test_truncated_span_dropped():
    text = "a " * 50 + "links"
    pair = encode_pair("b", text, WordTokenizer(), max_length=20)
    targets = align_spans_to_tokens(pair, [ann(text, "links")])
    assert targets.dropped == 1 and targets.spans[AttributeType.LOCATION] == []


def test_char_span_errors():
    pair = encode_pair("X", "Y Z", WordTokenizer())
    first = pair.post_token_indices[0]
    assert tokens_to_char_span(pair, first, first) == CharSpan(0, 1)
    with pytest.raises(EncodingError):
        tokens_to_char_span(pair, first + 1, first)
    with pytest.raises(EncodingError):
        tokens_to_char_span(pair, 0, first)


def test_subword_offsets_round_trip(ontology, subword):
    corpus = generate_synthetic_corpus(ontology, 30, 4)
    for post in corpus:
        pair = encode_pair("Bauchschmerzen", post.text, subword)
        pieces = "".join(post.text[s:e] for s, e in (pair.char_offsets[i] for i in pair.post_token_indices))
        assert pieces == "".join(post.text.split())


def test_subword_save_load(tmp_path, subword):
    subword.save(tmp_path / "tok")
    again = SubwordTokenizer.from_dir(tmp_path / "tok")
    text = "Seit gestern habe ich Oberbauchschmerzen."
    assert [t.id for t in again.tokenize(text)] == [t.id for t in subword.tokenize(text)]


def test_match_mask():
    pair = encode_pair("Husten", "Ich habe Husten", WordTokenizer())
    mask = pair.match_mask
    assert mask[1] and mask[pair.post_token_indices[2]]
    assert not mask[pair.post_token_indices[0]]
    assert isinstance(mask, np.ndarray)


def test_subword_vocabulary_stable_across_processes():
    script = ("import json; from anamnesis.encoding import SubwordTokenizer; "
              "t = SubwordTokenizer.train(['Seit gestern Bauchschmerzen und Übelkeit.', 'Mir ist übel, Kopfschmerzen.'] * 3); "
              "print(json.dumps(sorted(t.backend.get_vocab().items())))")
    outputs = [
        subprocess.run([sys.executable, "-c", script], capture_output=True, text=True, check=True,
                       env={**os.environ, "PYTHONHASHSEED": str(seed)}).stdout
        for seed in (1, 2)
    ]
    assert outputs[0] == outputs[1]
