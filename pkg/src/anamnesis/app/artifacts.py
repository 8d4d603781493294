"""Model artifact directories: manifest.json, weights.pt and the tokenizer or TF-IDF vocabulary."""
from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch
from sklearn.feature_extraction.text import TfidfVectorizer
from transformers import BertConfig

from ..encoding import SubwordTokenizer
from ..models import (
    AttributeExtractor,
    EncoderBackend,
    EncoderSigmoidBaseline,
    StubBackend,
    SymptomQueryModel,
    TfidfMlpBaseline,
    TransformerBackend,
)
from ..ontology import SymptomOntology

MANIFEST = "manifest.json"
WEIGHTS = "weights.pt"
TOKENIZER_DIR = "tokenizer"
TFIDF_FILE = "tfidf.json"
CLASSIFY, EXTRACT = "classify", "extract"


class ArtifactError(ValueError):
    pass


@dataclass
class LoadedArtifact:
    model: torch.nn.Module
    manifest: dict

    @property
    def task(self) -> str:
        return self.manifest["task"]


def _backend_of(model: torch.nn.Module) -> EncoderBackend | None:
    return getattr(model, "backend", None)


def save_artifact(
    directory: str | Path,
    model: torch.nn.Module,
    task: str,
    ontology: SymptomOntology,
    config_snapshot: dict,
    best_metric: float,
    variant: str | None = None,
    method: str | None = None,
    scope: str | None = None,
    run_record: dict | None = None,
) -> Path:
    if task not in (CLASSIFY, EXTRACT):
        raise ArtifactError(f"unknown task {task!r}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "task": task,
        "variant": variant,
        "method": method,
        "scope": scope,
        "config": config_snapshot,
        "ontology_hash": ontology.content_hash(),
        "best_metric": float(best_metric),
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "steps_unit": "optimizer",
    }
    if isinstance(model, (EncoderSigmoidBaseline, TfidfMlpBaseline)):
        manifest["labels"] = list(model.labels)
    backend = _backend_of(model)
    if backend is not None:
        manifest["backend"] = backend.spec()
        if isinstance(backend, TransformerBackend):
            backend.tokenizer.save(directory / TOKENIZER_DIR)
    if isinstance(model, TfidfMlpBaseline):
        vec = model.vectorizer
        manifest["tfidf_hidden_width"] = model.hidden_width
        (directory / TFIDF_FILE).write_text(json.dumps({
            "vocabulary": {k: int(v) for k, v in vec.vocabulary_.items()},
            "idf": [float(x) for x in vec.idf_],
        }, ensure_ascii=False), encoding="utf-8")
    if run_record is not None:
        (directory / "run_record.json").write_text(json.dumps(run_record, indent=2), encoding="utf-8")
    torch.save(model.state_dict(), directory / WEIGHTS)
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, ensure_ascii=False), encoding="utf-8")
    return directory


def read_manifest(directory: str | Path) -> dict:
    path = Path(directory) / MANIFEST
    if not path.exists():
        raise ArtifactError(f"no {MANIFEST} in {directory}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}: malformed manifest: {exc}") from exc


def _rebuild_backend(spec: dict, directory: Path) -> EncoderBackend:
    kind = spec.get("kind")
    if kind == "bert":
        tokenizer = SubwordTokenizer.from_dir(directory / TOKENIZER_DIR)
        return TransformerBackend(tokenizer, BertConfig.from_dict(spec["config"]),
                                  match_features=spec.get("match_features", False))
    if kind == "stub":
        return StubBackend(spec["hidden_size"], spec["vocab_size"], spec["seed"], spec["max_length"])
    raise ArtifactError(f"unknown backend kind {kind!r}")


def load_artifact(directory: str | Path, ontology: SymptomOntology, task: str | None = None) -> LoadedArtifact:
    """Rebuild a model from its directory; refuses artifacts trained against another ontology."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    if task is not None and manifest.get("task") != task:
        raise ArtifactError(f"{directory} holds a {manifest.get('task')!r} model, expected {task!r}")
    if manifest.get("ontology_hash") != ontology.content_hash():
        raise ArtifactError(f"{directory} was trained against a different ontology (content hash mismatch)")

    if manifest["task"] == CLASSIFY:
        variant = manifest.get("variant") or ""
        if variant == "tfidf_mlp":
            data = json.loads((directory / TFIDF_FILE).read_text(encoding="utf-8"))
            vec = TfidfVectorizer(lowercase=True, vocabulary=data["vocabulary"])
            vec.idf_ = np.asarray(data["idf"], dtype=np.float64)
            model = TfidfMlpBaseline(manifest["labels"], manifest["tfidf_hidden_width"], vectorizer=vec)
        else:
            backend = _rebuild_backend(manifest["backend"], directory)
            if variant == "encoder_sigmoid":
                model = EncoderSigmoidBaseline(backend, manifest["labels"])
            else:
                model = SymptomQueryModel(backend)
    elif manifest["task"] == EXTRACT:
        backend = _rebuild_backend(manifest["backend"], directory)
        model = AttributeExtractor(backend, manifest["method"], manifest["scope"])
    else:
        raise ArtifactError(f"unknown task {manifest.get('task')!r}")

    state = torch.load(directory / WEIGHTS, map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    model.eval()
    return LoadedArtifact(model, manifest)
