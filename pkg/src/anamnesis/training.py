"""Training protocol: Adam, effective batch 32 via accumulation, periodic validation, early stopping."""
from __future__ import annotations

import copy
import logging
import random
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .corpus import AnnotatedPost, Corpus, augment_descriptions
from .decoding import DecoderConfig
from .encoding import SubwordTokenizer, TokenizedPair, align_spans_to_tokens
from .evaluation import evaluate_classifier, evaluate_extractor
from .metrics import summed_f1
from .models import (
    GENERAL,
    AttributeExtractor,
    EncoderBackend,
    EncoderSigmoidBaseline,
    SymptomQueryModel,
    TfidfMlpBaseline,
    TransformerBackend,
    balanced_weights,
    collate,
    weighted_nll_loss,
)
from .ontology import SymptomOntology
from .sampling import (
    DEFAULT_STAGE_DISTANCES,
    FINAL_STAGE,
    curriculum_schedule,
    make_stages,
    positives_for_post,
    sample_negatives,
)

logger = logging.getLogger(__name__)

CLASSIFIER_VARIANTS = ("tfidf_mlp", "encoder_sigmoid", "sq", "sq+cl", "sq+ad", "sq+cl+ad")
EXTRACTION_SCOPES = ("location", "description", "time", "frequency", "action", GENERAL)
EXTRACTION_DROPOUT = 0.2


class TrainingError(ValueError):
    pass


@dataclass
class CurriculumConfig:
    distances: tuple[int, ...] = DEFAULT_STAGE_DISTANCES
    fractions: tuple[float, ...] | None = None


@dataclass
class TrainingConfig:
    learning_rate: float = 3e-5
    batch_size: int = 32
    micro_batch_size: int = 32
    epochs: int = 40
    eval_every: int = 50
    patience: int = 20
    # None keeps the encoder's own dropout; extraction always uses EXTRACTION_DROPOUT.
    dropout: float | None = None
    seed: int = 0
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    loss_weighting: str = "balanced"
    threshold: float = 0.5
    closure: bool = True
    deterministic: bool = True
    # Also score the train split at every evaluation (costly; diagnostics only).
    track_train_metric: bool = False

    def __post_init__(self):
        if isinstance(self.curriculum, dict):
            self.curriculum = CurriculumConfig(**self.curriculum)
        for name in ("learning_rate", "batch_size", "micro_batch_size", "epochs", "eval_every", "patience"):
            if getattr(self, name) <= 0:
                raise TrainingError(f"{name} must be positive")
        if self.batch_size % self.micro_batch_size:
            raise TrainingError("batch_size must be a multiple of micro_batch_size")
        if self.loss_weighting not in ("balanced", "none"):
            raise TrainingError(f"unknown loss weighting {self.loss_weighting!r}")

    @property
    def accumulation(self) -> int:
        return self.batch_size // self.micro_batch_size

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvalPoint:
    step: int
    epoch: int
    train_loss: float
    metric: float
    min_distance: int | None = None
    train_metric: float | None = None


@dataclass
class TrainingRunRecord:
    history: list[EvalPoint] = field(default_factory=list)
    best_index: int = -1
    checkpoint: str | None = None
    stop_reason: str = ""
    optimizer_steps: int = 0
    # Evaluation cadence counts optimizer updates, not micro-batches.
    step_unit: str = "optimizer"

    @property
    def best_metric(self) -> float:
        return self.history[self.best_index].metric if self.history else float("nan")

    @property
    def stages(self) -> list[int]:
        return [p.min_distance for p in self.history if p.min_distance is not None]

    def as_dict(self) -> dict:
        return {
            "history": [asdict(p) for p in self.history],
            "best_index": self.best_index,
            "best_metric": self.best_metric,
            "checkpoint": self.checkpoint,
            "stop_reason": self.stop_reason,
            "optimizer_steps": self.optimizer_steps,
            "step_unit": self.step_unit,
        }


def early_stop(history: Sequence[float], patience: int) -> bool:
    """True once the last ``patience`` evaluations all failed to beat the best before them."""
    if not history:
        raise ValueError("empty history")
    best = int(np.argmax(history))
    return len(history) - 1 - best >= patience


def seed_everything(seed: int, deterministic: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)


# -- generic loop ------------------------------------------------------------------------

MicroBatch = Callable[[], torch.Tensor]


def _fit(
    model: torch.nn.Module,
    config: TrainingConfig,
    epoch_batches: Callable[[int], tuple[list[MicroBatch], int | None]],
    evaluate: Callable[[], float],
    evaluate_train: Callable[[], float] | None,
    output_dir: Path | None,
) -> TrainingRunRecord:
    """Shared optimisation loop.

    ``epoch_batches(epoch)`` returns the epoch's micro-batch loss closures and the
    active curriculum distance (None outside curriculum training).
    """
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=config.learning_rate)
    record = TrainingRunRecord()
    best_state = None
    losses: list[float] = []
    pending = 0
    stop = False

    def run_eval(epoch: int, stage: int | None) -> bool:
        nonlocal best_state
        metric = float(evaluate())
        train_metric = float(evaluate_train()) if evaluate_train is not None else None
        model.train()
        record.history.append(EvalPoint(record.optimizer_steps, epoch, float(np.mean(losses)) if losses else float("nan"),
                                        metric, stage, train_metric))
        losses.clear()
        if record.best_index < 0 or metric > record.history[record.best_index].metric:
            record.best_index = len(record.history) - 1
            best_state = copy.deepcopy(model.state_dict())
            if output_dir is not None:
                torch.save(best_state, output_dir / "best.pt")
                record.checkpoint = str(output_dir / "best.pt")
        logger.info("step %d epoch %d loss %.4f metric %.4f", record.optimizer_steps, epoch,
                    record.history[-1].train_loss, metric)
        return early_stop([p.metric for p in record.history], config.patience)

    def optimizer_step(epoch: int, stage: int | None) -> bool:
        nonlocal pending
        torch.nn.utils.clip_grad_norm_(params, 1.0)
        optimizer.step()
        optimizer.zero_grad(set_to_none=True)
        pending = 0
        record.optimizer_steps += 1
        if record.optimizer_steps % config.eval_every == 0:
            return run_eval(epoch, stage)
        return False

    model.train()
    epoch = 0
    stage = None
    for epoch in range(config.epochs):
        batches, stage = epoch_batches(epoch)
        for micro in batches:
            loss = micro()
            (loss / config.accumulation).backward()
            losses.append(float(loss.detach()))
            pending += 1
            if pending == config.accumulation and optimizer_step(epoch, stage):
                stop = True
                break
        if stop:
            record.stop_reason = f"early stopping after {config.patience} evaluations without improvement"
            break
        if pending and optimizer_step(epoch, stage):
            record.stop_reason = f"early stopping after {config.patience} evaluations without improvement"
            break
    else:
        record.stop_reason = "epoch limit"

    if not record.history or record.history[-1].step != record.optimizer_steps:
        run_eval(epoch, stage)
    if output_dir is not None:
        torch.save(model.state_dict(), output_dir / "last.pt")
    if best_state is not None:
        model.load_state_dict(best_state)
    return record


def _chunks(items: list, size: int) -> list[list]:
    return [items[k:k + size] for k in range(0, len(items), size)]


def _selection_posts(corpus: Corpus) -> list[AnnotatedPost]:
    val = corpus.validation
    if val:
        return val
    logger.warning("empty validation split; selecting on train posts")
    return corpus.train


# -- classification ----------------------------------------------------------------------


@dataclass
class TrainedClassifier:
    model: SymptomQueryModel | EncoderSigmoidBaseline | TfidfMlpBaseline
    record: TrainingRunRecord
    variant: str
    labels: list[str] | None = None


def default_backend_factory(
    corpus: Corpus, ontology: SymptomOntology, vocab_size: int = 2000, **reduced_kwargs
) -> Callable[[], EncoderBackend]:
    """Reduced BERT with a WordPiece vocabulary learned from train posts and symptom descriptions."""
    texts = [p.text for p in corpus.train] + [n.description for n in ontology.nodes.values()]
    tokenizer = SubwordTokenizer.train(texts, vocab_size=vocab_size)
    return lambda: TransformerBackend.reduced(tokenizer, **reduced_kwargs)


def _parse_variant(variant: str) -> tuple[str, bool, bool]:
    if variant not in CLASSIFIER_VARIANTS:
        raise TrainingError(f"unknown classifier variant {variant!r}; expected one of {CLASSIFIER_VARIANTS}")
    parts = variant.split("+")
    return parts[0], "cl" in parts, "ad" in parts


def train_classifier(
    config: TrainingConfig,
    corpus: Corpus,
    ontology: SymptomOntology,
    variant: str,
    backend_factory: Callable[[], EncoderBackend] | None = None,
    output_dir: str | Path | None = None,
    tfidf_hidden_width: int = 256,
) -> TrainedClassifier:
    kind, use_cl, use_ad = _parse_variant(variant)
    train_posts = corpus.train
    if not train_posts:
        raise TrainingError("empty train split")
    seed_everything(config.seed, config.deterministic)
    out = Path(output_dir) if output_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    select_on = _selection_posts(corpus)

    if kind == "sq":
        if backend_factory is None:
            backend_factory = default_backend_factory(corpus, ontology)
        backend = backend_factory()
        if config.dropout is not None:
            backend.set_dropout(config.dropout)
        model = SymptomQueryModel(backend)
        record = _train_sq(model, config, corpus, ontology, use_cl, use_ad, select_on, out)
        return TrainedClassifier(model, record, variant)

    labels = sorted(set().union(*(ontology.label_closure(p.symptom_ids) if config.closure else set(p.symptom_ids)
                                  for p in train_posts)))
    if not labels:
        raise TrainingError("train split carries no symptom labels")
    if kind == "tfidf_mlp":
        model = TfidfMlpBaseline(labels, hidden_width=tfidf_hidden_width).fit_vocabulary(p.text for p in train_posts)
        inputs = model.features([p.text for p in train_posts])

        def forward(rows: list[int]) -> torch.Tensor:
            return model.logits(inputs[rows])
    else:
        if backend_factory is None:
            backend_factory = default_backend_factory(corpus, ontology)
        backend = backend_factory()
        if config.dropout is not None:
            backend.set_dropout(config.dropout)
        model = EncoderSigmoidBaseline(backend, labels)
        pairs = [model.encode(p.text) for p in train_posts]

        def forward(rows: list[int]) -> torch.Tensor:
            return model.logits(collate([pairs[r] for r in rows], backend.tokenizer.pad_id))

    index = {s: k for k, s in enumerate(labels)}
    y = torch.zeros((len(train_posts), len(labels)))
    for r, post in enumerate(train_posts):
        gold = ontology.label_closure(post.symptom_ids) if config.closure else set(post.symptom_ids)
        for s in gold:
            y[r, index[s]] = 1.0
    rng = random.Random(config.seed)
    bce = torch.nn.BCEWithLogitsLoss()

    def epoch_batches(epoch: int):
        order = list(range(len(train_posts)))
        rng.shuffle(order)
        return [(lambda rows=rows: bce(forward(rows), y[rows])) for rows in _chunks(order, config.micro_batch_size)], None

    record = _fit(model, config, epoch_batches, *_classifier_scorers(model, config, ontology, select_on, train_posts),
                  output_dir=out)
    return TrainedClassifier(model, record, variant, labels)


def _classifier_scorers(model, config: TrainingConfig, ontology: SymptomOntology, select_on, train_posts):
    def score(posts):
        return lambda: evaluate_classifier(model, posts, ontology, config.threshold, config.closure).micro.f1

    return score(select_on), (score(train_posts) if config.track_train_metric else None)


def _train_sq(model: SymptomQueryModel, config: TrainingConfig, corpus: Corpus, ontology: SymptomOntology,
              use_cl: bool, use_ad: bool, select_on: list[AnnotatedPost], out: Path | None) -> TrainingRunRecord:
    pool = augment_descriptions(corpus, ontology) if use_ad else {}
    train_posts = corpus.train
    stages = make_stages(config.curriculum.distances) if use_cl else [FINAL_STAGE]
    if use_cl and config.epochs < len(stages):
        raise TrainingError(f"{config.epochs} epochs cannot cover {len(stages)} curriculum stages")
    rng = random.Random(config.seed)
    cache: dict[tuple[str, str], TokenizedPair] = {}
    bce = torch.nn.BCEWithLogitsLoss()
    pad = model.backend.tokenizer.pad_id

    def pair_for(description: str, post: AnnotatedPost) -> TokenizedPair:
        key = (description, post.id)
        if key not in cache:
            cache[key] = model.backend.encode(description, post.text)
        return cache[key]

    def epoch_batches(epoch: int):
        stage = curriculum_schedule(epoch, config.epochs, stages, config.curriculum.fractions) if use_cl else FINAL_STAGE
        examples = []
        for post in train_posts:
            pos = positives_for_post(post, ontology, pool, use_ad, config.closure)
            neg = sample_negatives(post, ontology, stage, rng, len(pos), pool, use_ad, config.closure)
            examples.extend((post, ex) for ex in pos + neg)
        rng.shuffle(examples)
        batches = []
        for chunk in _chunks(examples, config.micro_batch_size):
            pairs = [pair_for(ex.description_text, post) for post, ex in chunk]
            labels = torch.tensor([float(ex.label) for _, ex in chunk])
            batches.append(lambda pairs=pairs, labels=labels: bce(model.logits(collate(pairs, pad)), labels))
        return batches, stage.min_distance if use_cl else None

    return _fit(model, config, epoch_batches, *_classifier_scorers(model, config, ontology, select_on, train_posts),
                output_dir=out)


# -- extraction --------------------------------------------------------------------------


@dataclass
class TrainedExtractor:
    model: AttributeExtractor
    record: TrainingRunRecord
    method: str
    scope: str


def train_extractor(
    config: TrainingConfig,
    corpus: Corpus,
    ontology: SymptomOntology,
    method: str,
    scope: str,
    backend_factory: Callable[[], EncoderBackend] | None = None,
    output_dir: str | Path | None = None,
    decoder: DecoderConfig = DecoderConfig(),
) -> TrainedExtractor:
    """Train one extraction model. Validation metric: token F1, summed over types for ``general``."""
    if scope not in EXTRACTION_SCOPES:
        raise TrainingError(f"unknown scope {scope!r}")
    if method not in ("start_end", "contiguous"):
        raise TrainingError(f"unknown method {method!r}")
    train_posts = corpus.train
    if not train_posts:
        raise TrainingError("empty train split")
    seed_everything(config.seed, config.deterministic)
    out = Path(output_dir) if output_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if backend_factory is None:
        backend_factory = default_backend_factory(corpus, ontology)
    backend = backend_factory()
    backend.set_dropout(EXTRACTION_DROPOUT)
    model = AttributeExtractor(backend, method, scope)

    instances = []
    for post in train_posts:
        for sid in post.symptom_ids:
            pair = backend.encode(ontology[sid].description, post.text)
            targets = align_spans_to_tokens(pair, post.attributes_for(sid))
            instances.append((pair, torch.from_numpy(targets.matrix(model.types, method))))
    if not instances:
        raise TrainingError("train split has no symptom annotations to query")

    # Class weights per output channel over all unmasked train tokens.
    flat_targets = torch.cat([t for _, t in instances], dim=0)
    flat_mask = torch.cat([torch.from_numpy(p.post_mask) for p, _ in instances], dim=0)
    if config.loss_weighting == "balanced":
        w_pos, w_neg = balanced_weights(flat_targets, flat_mask[:, None, None], reduce_dims=(0,))
    else:
        w_pos = w_neg = torch.ones(flat_targets.shape[1:])

    rng = random.Random(config.seed)
    pad = backend.tokenizer.pad_id

    def loss_for(chunk) -> torch.Tensor:
        batch = collate([p for p, _ in chunk], pad)
        width = batch.input_ids.shape[1]
        target = torch.zeros((len(chunk), width, *instances[0][1].shape[1:]))
        for r, (pair, t) in enumerate(chunk):
            target[r, :len(pair)] = t
        probs = model(batch)
        return weighted_nll_loss(probs, target, w_pos, w_neg, batch.post_mask[:, :, None, None])

    def epoch_batches(epoch: int):
        order = list(instances)
        rng.shuffle(order)
        return [(lambda c=c: loss_for(c)) for c in _chunks(order, config.micro_batch_size)], None

    select_on = _selection_posts(corpus)

    def evaluate() -> float:
        report = evaluate_extractor(model, select_on, ontology, decoder)
        return summed_f1(report) if scope == GENERAL else report.micro.f1

    evaluate_train = None
    if config.track_train_metric:
        def evaluate_train() -> float:
            report = evaluate_extractor(model, train_posts, ontology, decoder)
            return summed_f1(report) if scope == GENERAL else report.micro.f1

    record = _fit(model, config, epoch_batches, evaluate, evaluate_train, out)
    return TrainedExtractor(model, record, method, scope)
