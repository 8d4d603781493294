"""``anamnesis`` command line. Exit codes: 0 ok, 1 usage, 2 validation, 3 runtime."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections.abc import Sequence
from pathlib import Path

from ..corpus import CorpusError, corpus_stats, format_stats_table, load_corpus, save_corpus, split_corpus
from ..encoding import EncodingError
from ..evaluation import evaluate_classifier, evaluate_extractor
from ..metrics import format_classification_table, format_extraction_table, summed_f1
from ..models import ModelError, TransformerBackend
from ..ontology import OntologyError, default_ontology, load_ontology
from ..sampling import SamplingError
from ..synthetic import generate_synthetic_corpus
from ..training import (
    CLASSIFIER_VARIANTS,
    EXTRACTION_SCOPES,
    TrainingError,
    default_backend_factory,
    train_classifier,
    train_extractor,
)
from .artifacts import CLASSIFY, EXTRACT, ArtifactError, load_artifact, save_artifact
from .config import ConfigError, RunConfig, load_config, with_seed
from .pipeline import Pipeline, PipelineError

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3
VALIDATION_ERRORS = (OntologyError, CorpusError, ConfigError, ArtifactError, TrainingError, SamplingError,
                     PipelineError, EncodingError, ModelError)

logger = logging.getLogger("anamnesis")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _ontology(args):
    return load_ontology(args.ontology) if args.ontology else default_ontology()


def _existing(path: str | None, what: str) -> Path:
    if path is None or not Path(path).exists():
        raise UsageError(f"{what} not found: {path}")
    return Path(path)


def _config(args) -> RunConfig:
    if args.config is not None:
        _existing(args.config, "config file")
    return with_seed(load_config(args.config, args.set or ()), args.seed)


def _backend_factory(config: RunConfig, corpus, ontology):
    m = config.model
    if m.encoder == "pretrained":
        path = Path(m.pretrained_path)
        cache = os.environ.get("ANAMNESIS_ENCODER_CACHE")
        if not path.is_absolute() and cache:
            path = Path(cache) / path
        _existing(str(path), "pretrained encoder")
        return lambda: TransformerBackend.from_pretrained(path)
    return default_backend_factory(
        corpus, ontology, vocab_size=m.vocab_size, hidden_size=m.hidden_size, num_layers=m.num_layers,
        num_heads=m.num_heads, intermediate_size=m.intermediate_size, dropout=m.dropout, max_length=m.max_length,
        match_features=m.match_features,
    )


# -- handlers ---------------------------------------------------------------------------


def cmd_ontology_validate(args) -> int:
    if args.ontology:
        _existing(args.ontology, "ontology file")
    onto = _ontology(args)
    print(f"ok: {len(onto)} nodes, {len(onto.leaves())} leaves, root {onto.root_id}, hash {onto.content_hash()}")
    return EXIT_OK


def cmd_data_stats(args) -> int:
    onto = _ontology(args)
    corpus = load_corpus(_existing(args.corpus, "corpus"), onto)
    report = corpus_stats(corpus, onto)
    if args.json:
        print(json.dumps(report, indent=2, ensure_ascii=False))
    else:
        print(format_stats_table(report))
    return EXIT_OK


def cmd_data_split(args) -> int:
    onto = _ontology(args)
    corpus = load_corpus(_existing(args.corpus, "corpus"), onto)
    split = split_corpus(corpus, args.seed)
    save_corpus(split, args.out)
    counts = {name: len(split.subset(name)) for name in ("train", "validation", "test")}
    print(json.dumps(counts))
    return EXIT_OK


def cmd_data_synth(args) -> int:
    corpus = generate_synthetic_corpus(_ontology(args), args.size, args.seed)
    if args.split:
        corpus = split_corpus(corpus, args.seed)
    save_corpus(corpus, args.out)
    print(f"wrote {len(corpus.posts)} posts to {args.out}")
    return EXIT_OK


def _training_inputs(args):
    config = _config(args)
    onto = _ontology(args)
    corpus_path = args.corpus or config.data.corpus
    corpus = load_corpus(_existing(corpus_path, "corpus"), onto)
    return config, onto, corpus


def cmd_train_classify(args) -> int:
    config, onto, corpus = _training_inputs(args)
    factory = None if args.variant == "tfidf_mlp" else _backend_factory(config, corpus, onto)
    out = Path(args.out)
    trained = train_classifier(config.training, corpus, onto, args.variant, backend_factory=factory,
                               output_dir=out / "checkpoints", tfidf_hidden_width=config.model.tfidf_hidden_width)
    save_artifact(out, trained.model, CLASSIFY, onto, config.snapshot(), trained.record.best_metric,
                  variant=args.variant, run_record=trained.record.as_dict())
    print(f"best validation micro-F1 {trained.record.best_metric:.4f} ({trained.record.stop_reason}); artifact {out}")
    return EXIT_OK


def cmd_train_extract(args) -> int:
    config, onto, corpus = _training_inputs(args)
    factory = _backend_factory(config, corpus, onto)
    out = Path(args.out)
    trained = train_extractor(config.training, corpus, onto, args.method, args.scope, backend_factory=factory,
                              output_dir=out / "checkpoints", decoder=config.decoder)
    save_artifact(out, trained.model, EXTRACT, onto, config.snapshot(), trained.record.best_metric,
                  method=args.method, scope=args.scope, run_record=trained.record.as_dict())
    print(f"best validation metric {trained.record.best_metric:.4f} ({trained.record.stop_reason}); artifact {out}")
    return EXIT_OK


def cmd_eval_classify(args) -> int:
    onto = _ontology(args)
    artifact = load_artifact(_existing(args.artifact, "artifact"), onto, CLASSIFY)
    corpus = load_corpus(_existing(args.corpus, "corpus"), onto)
    posts = corpus.subset(args.split)
    if not posts:
        raise CorpusError(f"split {args.split!r} is empty")
    report = evaluate_classifier(artifact.model, posts, onto, args.threshold)
    name = artifact.manifest.get("variant") or "classifier"
    print(json.dumps(report.as_dict(), indent=2) if args.json else format_classification_table({name: report}))
    return EXIT_OK


def cmd_eval_extract(args) -> int:
    onto = _ontology(args)
    config = _config(args)
    artifact = load_artifact(_existing(args.artifact, "artifact"), onto, EXTRACT)
    model = artifact.model
    if args.method and args.method != model.method:
        raise ArtifactError(f"artifact was trained with method {model.method!r}, not {args.method!r}")
    if args.scope and args.scope != model.head.scope:
        raise ArtifactError(f"artifact covers scope {model.head.scope!r}, not {args.scope!r}")
    corpus = load_corpus(_existing(args.corpus, "corpus"), onto)
    posts = corpus.subset(args.split)
    if not posts:
        raise CorpusError(f"split {args.split!r} is empty")
    report = evaluate_extractor(model, posts, onto, config.decoder)
    if args.json:
        print(json.dumps({**report.as_dict(), "summed_f1": summed_f1(report)}, indent=2))
    else:
        print(format_extraction_table({f"{model.method} ({model.head.scope})": report}))
        if report.dropped_spans:
            print(f"{report.dropped_spans} gold span(s) fell beyond the truncation boundary")
    return EXIT_OK


def cmd_extract(args) -> int:
    onto = _ontology(args)
    config = _config(args)
    if args.text is not None:
        text = args.text
    elif args.file is not None:
        text = _existing(args.file, "input file").read_text(encoding="utf-8")
    else:
        text = sys.stdin.read()
    pipeline = Pipeline.from_artifacts(
        _existing(args.classifier, "classifier artifact"),
        [_existing(d, "extractor artifact") for d in args.extractor],
        onto, decoder=config.decoder, threshold=args.threshold, include_ancestors=args.include_ancestors,
    )
    summary = pipeline.extract(text)
    print(json.dumps(summary.model_dump(), indent=2, ensure_ascii=False))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ENV_ARTIFACTS, ENV_HOST, ENV_PORT, create_app, discover_artifacts

    onto = _ontology(args)
    config = _config(args)
    root = args.artifacts or os.environ.get(ENV_ARTIFACTS)
    classifier, extractors = discover_artifacts(_existing(root, "artifact directory"))
    app = create_app(
        onto,
        loader=lambda: Pipeline.from_artifacts(classifier, extractors, onto, decoder=config.decoder,
                                               include_ancestors=args.include_ancestors),
        max_chars=args.max_chars,
    )
    host = args.host or os.environ.get(ENV_HOST, "127.0.0.1")
    port = args.port or int(os.environ.get(ENV_PORT, "8000"))
    uvicorn.run(app, host=host, port=port, timeout_graceful_shutdown=30)
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--ontology", help="ontology YAML (default: bundled fixture)")
    common.add_argument("--config", help="YAML config with data/model/training/curriculum/decoder sections")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
    common.add_argument("--seed", type=int, help="seed for every random choice")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="anamnesis", description="German symptom and attribute extraction.")
    groups = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    onto = groups.add_parser("ontology").add_subparsers(dest="action", required=True, parser_class=_Parser)
    onto.add_parser("validate", parents=[common]).set_defaults(func=cmd_ontology_validate)

    data = groups.add_parser("data").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = data.add_parser("stats", parents=[common])
    p.add_argument("--corpus", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_data_stats)
    p = data.add_parser("split", parents=[common])
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_data_split)
    p = data.add_parser("synth", parents=[common])
    p.add_argument("--size", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--split", action="store_true", help="also assign train/validation/test")
    p.set_defaults(func=cmd_data_synth)

    train = groups.add_parser("train").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = train.add_parser("classify", parents=[common])
    p.add_argument("--variant", choices=CLASSIFIER_VARIANTS, default="sq+cl+ad")
    p.add_argument("--corpus")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_classify)
    p = train.add_parser("extract", parents=[common])
    p.add_argument("--method", choices=("start_end", "contiguous"), default="contiguous")
    p.add_argument("--scope", choices=EXTRACTION_SCOPES, default="general")
    p.add_argument("--corpus")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_extract)

    ev = groups.add_parser("eval").add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = ev.add_parser("classify", parents=[common])
    p.add_argument("--artifact", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("train", "validation", "test"), default="test")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval_classify)
    p = ev.add_parser("extract", parents=[common])
    p.add_argument("--artifact", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("train", "validation", "test"), default="test")
    p.add_argument("--method", choices=("start_end", "contiguous"))
    p.add_argument("--scope", choices=EXTRACTION_SCOPES)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval_extract)

    p = groups.add_parser("extract", parents=[common])
    p.add_argument("--classifier", required=True)
    p.add_argument("--extractor", action="append", required=True, help="repeat for per-type extractors")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--text")
    src.add_argument("--file")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--include-ancestors", action="store_true", help="also query closure-added ancestors")
    p.set_defaults(func=cmd_extract)

    p = groups.add_parser("serve", parents=[common])
    p.add_argument("--artifacts", help="directory with classifier/ and extractors/*/ (env ANAMNESIS_ARTIFACTS)")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--max-chars", type=int)
    p.add_argument("--include-ancestors", action="store_true")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VALIDATION_ERRORS as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:
        logger.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
