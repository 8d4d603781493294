"""Micro-averaged classification metrics and token-wise extraction metrics, with report tables."""
from __future__ import annotations

from collections import defaultdict
from collections.abc import Hashable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field

from .corpus import ATTRIBUTE_TYPES, AttributeType


@dataclass(frozen=True)
class PRF:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other: PRF) -> PRF:
        return PRF(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @classmethod
    def from_sets(cls, pred: set, gold: set) -> PRF:
        return cls(len(pred & gold), len(pred - gold), len(gold - pred))

    def as_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "tp": self.tp, "fp": self.fp, "fn": self.fn}


@dataclass
class EvalReport:
    micro: PRF
    per_class: dict[str, PRF] = field(default_factory=dict)
    dropped_spans: int = 0

    def as_dict(self) -> dict:
        return {
            "micro": self.micro.as_dict(),
            "per_class": {k: v.as_dict() for k, v in self.per_class.items()},
            "dropped_spans": self.dropped_spans,
        }


def classification_metrics(
    pred: Mapping[Hashable, Iterable[str]], gold: Mapping[Hashable, Iterable[str]]
) -> EvalReport:
    """Count tp/fp/fn over (post, symptom) pairs and micro-average them.

    ``gold`` is expected closure-completed already.
    """
    if set(pred) != set(gold):
        missing = set(gold) ^ set(pred)
        raise ValueError(f"prediction and gold cover different posts: {sorted(map(str, missing))[:5]}")
    per_class: dict[str, PRF] = defaultdict(PRF)
    for post_id in gold:
        p, g = set(pred[post_id]), set(gold[post_id])
        for sid in p | g:
            per_class[sid] = per_class[sid] + PRF.from_sets(p & {sid}, g & {sid})
    micro = sum(per_class.values(), PRF())
    return EvalReport(micro=micro, per_class=dict(sorted(per_class.items())))


def macro_f1(report: EvalReport) -> float:
    if not report.per_class:
        return 0.0
    return sum(v.f1 for v in report.per_class.values()) / len(report.per_class)


def _span_tokens(spans: Iterable[tuple[int, int]], check_overlap: bool) -> set[int]:
    tokens: set[int] = set()
    for i, j in spans:
        rng = set(range(i, j + 1))
        if check_overlap and tokens & rng:
            raise AssertionError(f"overlapping predicted spans at tokens {sorted(tokens & rng)}")
        tokens |= rng
    return tokens


def token_extraction_metrics(
    pred: Mapping[Hashable, Mapping[AttributeType, Sequence[tuple[int, int]]]],
    gold: Mapping[Hashable, Mapping[AttributeType, Sequence[tuple[int, int]]]],
    types: Sequence[AttributeType] = ATTRIBUTE_TYPES,
    dropped_spans: int = 0,
) -> EvalReport:
    """Token-wise PRF per attribute type.

    Keys identify one query instance, typically ``(post_id, symptom_id)``; values map
    attribute types to inclusive token ranges. Missing keys count as empty.
    """
    per_type = {t: PRF() for t in types}
    for key in set(pred) | set(gold):
        p_inst, g_inst = pred.get(key, {}), gold.get(key, {})
        for t in types:
            p = _span_tokens(p_inst.get(t, ()), check_overlap=True)
            g = _span_tokens(g_inst.get(t, ()), check_overlap=False)
            per_type[t] = per_type[t] + PRF.from_sets(p, g)
    micro = sum(per_type.values(), PRF())
    return EvalReport(micro=micro, per_class={t.label: v for t, v in per_type.items()}, dropped_spans=dropped_spans)


def summed_f1(report: EvalReport) -> float:
    """Model-selection score for general extractors: the five per-type F1s added up."""
    return sum(v.f1 for v in report.per_class.values())


def per_symptom_report(
    preds: Mapping[str, Mapping[Hashable, Iterable[str]]],
    gold: Mapping[Hashable, Iterable[str]],
    train_frequencies: Mapping[str, int],
    only_different: bool = False,
    names: Mapping[str, str] | None = None,
) -> list[dict]:
    """Per-symptom F1 of two models side by side, sorted by their difference (first minus second)."""
    if len(preds) != 2:
        raise ValueError("per-symptom comparison needs exactly two models")
    (name_a, pred_a), (name_b, pred_b) = preds.items()
    rep_a = classification_metrics(pred_a, gold).per_class
    rep_b = classification_metrics(pred_b, gold).per_class
    rows = []
    for sid in sorted(set(rep_a) | set(rep_b)):
        f_a = rep_a.get(sid, PRF()).f1
        f_b = rep_b.get(sid, PRF()).f1
        if only_different and f_a == f_b:
            continue
        rows.append({
            "symptom": (names or {}).get(sid, sid),
            "symptom_id": sid,
            "train_frequency": int(train_frequencies.get(sid, 0)),
            name_a: f_a,
            name_b: f_b,
            "difference": f_a - f_b,
        })
    rows.sort(key=lambda r: (r["difference"], r["symptom_id"]))
    return rows


def format_extraction_table(reports: Mapping[str, EvalReport], metric: str = "f1") -> str:
    """Rows per method, one column per attribute type in the fixed report order."""
    headers = [t.label for t in ATTRIBUTE_TYPES]
    width = max([len("Method"), *map(len, reports)]) + 2
    lines = ["Method".ljust(width) + "".join(h.rjust(13) for h in headers)]
    for name, report in reports.items():
        cells = []
        for h in headers:
            prf = report.per_class.get(h)
            cells.append(("-" if prf is None else f"{getattr(prf, metric):.2f}").rjust(13))
        lines.append(name.ljust(width) + "".join(cells))
    return "\n".join(lines)


def format_classification_table(reports: Mapping[str, EvalReport]) -> str:
    width = max([len("Method"), *map(len, reports)]) + 2
    lines = ["Method".ljust(width) + "F1".rjust(8) + "Prec.".rjust(8) + "Rec.".rjust(8)]
    for name, report in reports.items():
        m = report.micro
        lines.append(name.ljust(width) + f"{m.f1:8.3f}{m.precision:8.3f}{m.recall:8.3f}")
    return "\n".join(lines)


def format_symptom_table(rows: Sequence[dict], models: Sequence[str]) -> str:
    lines = ["Symptom".ljust(28) + "Train freq".rjust(11) + "".join(m.rjust(14) for m in models) + "Difference".rjust(12)]
    for row in rows:
        lines.append(
            str(row["symptom"]).ljust(28) + str(row["train_frequency"]).rjust(11)
            + "".join(f"{row[m]:14.2f}" for m in models) + f"{row['difference']:12.2f}"
        )
    return "\n".join(lines)
