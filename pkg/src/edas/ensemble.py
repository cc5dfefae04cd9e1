"""Fusion of the five annotator predictions into one label per utterance.

Decision stages, first match wins:

AM  all five labels agree.
CM  all three context models agree; or exactly two agree and at least one
    non-context model produced the same label.
BM  among the three most confident predictions, some label occurs twice or more.
NM  otherwise; the utterance is labelled ``xx``.
"""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Mapping

from .annotators import (
    CONTEXT_KINDS,
    NON_CONTEXT_KINDS,
    POOL_ORDER,
    AnnotatorKind,
    AnnotatorModel,
    Prediction,
    predict_corpus,
)
from .corpus import (
    UNDETERMINED,
    Corpus,
    Schemes,
    TagInventory,
    Utterance,
    dumps_record,
    group_dialogues,
    iter_records,
    utterance_from_record,
    utterance_record,
)
from .errors import CorpusParseError, DataError, InventoryMismatchError


class DecisionCategory(str, Enum):
    AM = "AM"
    CM = "CM"
    BM = "BM"
    NM = "NM"


# Tie-break order when two predictions have equal confidence.
PRIORITY = (
    AnnotatorKind.CONTEXT_1,
    AnnotatorKind.CONTEXT_2,
    AnnotatorKind.CONTEXT_3,
    AnnotatorKind.UTT_LEVEL_1,
    AnnotatorKind.UTT_LEVEL_2,
)


@dataclass(frozen=True)
class Vote:
    """The part of a prediction fusion looks at."""

    label: str
    confidence: float


@dataclass(frozen=True)
class EnsembleDecision:
    label: str
    category: DecisionCategory


def _as_vote(p: Prediction | Vote | tuple) -> Vote:
    if isinstance(p, Vote):
        return p
    if isinstance(p, Prediction):
        return Vote(p.label, p.confidence)
    label, confidence = p
    return Vote(label, float(confidence))


def make_bundle(predictions: Mapping[AnnotatorKind | str, Prediction | Vote | tuple]) -> dict[AnnotatorKind, Vote]:
    bundle = {AnnotatorKind(k): _as_vote(v) for k, v in predictions.items()}
    if set(bundle) != set(POOL_ORDER):
        missing = sorted(k.value for k in set(POOL_ORDER) - set(bundle))
        raise DataError(f"prediction bundle must hold all five annotators; missing {missing}")
    for kind, vote in bundle.items():
        if vote.label == UNDETERMINED:
            raise DataError(f"{kind.value} predicted the reserved label {UNDETERMINED!r}")
    return bundle


def confidence_match(bundle: Mapping[AnnotatorKind, Vote]) -> str | None:
    """BM stage: a label occurring at least twice among the top three votes by
    confidence (ties broken by ``PRIORITY``); the largest summed confidence wins."""
    ranked = sorted(PRIORITY, key=lambda k: (-bundle[k].confidence, PRIORITY.index(k)))
    top = [bundle[k] for k in ranked[:3]]
    counts = Counter(v.label for v in top)
    repeated = [label for label, n in counts.items() if n >= 2]
    if not repeated:
        return None
    return max(repeated, key=lambda lab: sum(v.confidence for v in top if v.label == lab))


def fuse(predictions: Mapping[AnnotatorKind | str, Prediction | Vote | tuple]) -> EnsembleDecision:
    bundle = make_bundle(predictions)
    labels = {k: v.label for k, v in bundle.items()}

    if len(set(labels.values())) == 1:
        return EnsembleDecision(labels[AnnotatorKind.UTT_LEVEL_1], DecisionCategory.AM)

    context = Counter(labels[k] for k in CONTEXT_KINDS)
    label, n = context.most_common(1)[0]
    if n == 3:
        return EnsembleDecision(label, DecisionCategory.CM)
    if n == 2 and any(labels[k] == label for k in NON_CONTEXT_KINDS):
        return EnsembleDecision(label, DecisionCategory.CM)

    label = confidence_match(bundle)
    if label is not None:
        return EnsembleDecision(label, DecisionCategory.BM)
    return EnsembleDecision(UNDETERMINED, DecisionCategory.NM)


# --- corpus level ----------------------------------------------------------------------

@dataclass(frozen=True)
class AnnotatedUtterance:
    utterance: Utterance
    votes: dict[AnnotatorKind, Vote]
    decision: EnsembleDecision

    def record(self) -> dict:
        rec = utterance_record(self.utterance)
        rec["eda"] = self.decision.label
        rec["eda_category"] = self.decision.category.value
        rec["annotators"] = {k.value: self.votes[k].label for k in POOL_ORDER}
        rec["confidences"] = {k.value: self.votes[k].confidence for k in POOL_ORDER}
        return rec


@dataclass(frozen=True)
class EnsembleStats:
    counts: dict[DecisionCategory, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def percentages(self) -> dict[DecisionCategory, float]:
        total = self.total
        return {c: (100.0 * self.counts[c] / total if total else 0.0) for c in DecisionCategory}

    @classmethod
    def from_decisions(cls, decisions: Iterable[EnsembleDecision]) -> EnsembleStats:
        counts = Counter(d.category for d in decisions)
        return cls({c: counts.get(c, 0) for c in DecisionCategory})

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category", "count", "percent"])
        pct = self.percentages
        for c in DecisionCategory:
            w.writerow([c.value, self.counts[c], f"{pct[c]:.4f}"])
        return buf.getvalue()


@dataclass(frozen=True)
class AnnotatedCorpus:
    items: tuple[AnnotatedUtterance, ...]
    inventory: TagInventory
    schemes: Schemes

    def __len__(self) -> int:
        return len(self.items)

    def stats(self) -> EnsembleStats:
        return EnsembleStats.from_decisions(a.decision for a in self.items)

    def label_sequences(self) -> dict[AnnotatorKind, list[str]]:
        return {k: [a.votes[k].label for a in self.items] for k in POOL_ORDER}


def annotate_corpus(models: Mapping[AnnotatorKind | str, AnnotatorModel],
                    corpus: Corpus) -> tuple[AnnotatedCorpus, EnsembleStats]:
    models = {AnnotatorKind(k): m for k, m in models.items()}
    if set(models) != set(POOL_ORDER):
        missing = sorted(k.value for k in set(POOL_ORDER) - set(models))
        raise DataError(f"need one model per annotator kind; missing {missing}")
    for kind, m in models.items():
        if m.kind is not kind:
            raise DataError(f"model registered as {kind.value} is a {m.kind.value}")
        if m.inventory.digest() != corpus.inventory.digest():
            raise InventoryMismatchError(f"{kind.value} model was built for a different tag inventory")
    per_kind = {k: predict_corpus(models[k], corpus) for k in POOL_ORDER}
    items = []
    for j, u in enumerate(corpus.utterances()):
        votes = make_bundle({k: per_kind[k][j] for k in POOL_ORDER})
        items.append(AnnotatedUtterance(u, votes, fuse(votes)))
    annotated = AnnotatedCorpus(tuple(items), corpus.inventory, corpus.schemes)
    return annotated, annotated.stats()


@dataclass(frozen=True)
class EnsembleAccuracy:
    accuracy: float
    scored: int
    excluded: int


def ensemble_accuracy(annotated: AnnotatedCorpus, count_xx_as_error: bool = True) -> EnsembleAccuracy:
    """Exact-match accuracy of fused labels. With ``count_xx_as_error`` off,
    ``xx`` decisions are left out and reported in ``excluded``."""
    if len(annotated) == 0:
        raise DataError("cannot score an empty corpus")
    hits = scored = excluded = 0
    for a in annotated.items:
        gold = a.utterance.gold_da
        if gold is None:
            raise DataError(f"utterance {a.utterance.dialogue_id}/{a.utterance.turn_index} has no gold label")
        if a.decision.label == UNDETERMINED and not count_xx_as_error:
            excluded += 1
            continue
        scored += 1
        hits += a.decision.label == gold
    return EnsembleAccuracy(hits / scored if scored else 0.0, scored, excluded)


def accuracy_report(annotated: AnnotatedCorpus, count_xx_as_error: bool = True) -> dict[str, float]:
    """Per-annotator and fused accuracy on a gold-labelled annotated corpus."""
    golds = [a.utterance.gold_da for a in annotated.items]
    if not golds or any(g is None for g in golds):
        raise DataError("accuracy report needs a nonempty, fully gold-labelled corpus")
    report = {}
    for kind, seq in annotated.label_sequences().items():
        report[kind.value] = sum(p == g for p, g in zip(seq, golds)) / len(golds)
    report["Ensemble"] = ensemble_accuracy(annotated, count_xx_as_error).accuracy
    return report


# --- annotated JSONL ---------------------------------------------------------------------

def serialize_annotated(annotated: AnnotatedCorpus) -> bytes:
    return "".join(dumps_record(a.record()) + "\n" for a in annotated.items).encode("utf-8")


def parse_annotated(stream: IO[bytes] | IO[str], inventory: TagInventory,
                    schemes: Schemes = Schemes()) -> AnnotatedCorpus:
    items = []
    for line_no, rec in iter_records(stream):
        u = utterance_from_record(rec, line_no, inventory, schemes)
        try:
            labels = rec["annotators"]
            confs = rec.get("confidences", {})
            votes = make_bundle({k: Vote(labels[k], float(confs.get(k, 1.0))) for k in labels})
            decision = EnsembleDecision(rec["eda"], DecisionCategory(rec["eda_category"]))
        except (KeyError, TypeError, ValueError, DataError) as exc:
            raise CorpusParseError(line_no, f"bad annotation fields ({exc})") from None
        for label in [v.label for v in votes.values()] + [decision.label]:
            if label not in inventory:
                raise CorpusParseError(line_no, f"unknown dialogue-act tag {label!r}")
        items.append((line_no, AnnotatedUtterance(u, votes, decision)))
    # sequencing checks only; order is kept as written
    group_dialogues((n, a.utterance) for n, a in items)
    return AnnotatedCorpus(tuple(a for _, a in items), inventory, schemes)


def read_annotated(path: str | Path, inventory: TagInventory, schemes: Schemes = Schemes()) -> AnnotatedCorpus:
    with open(path, "rb") as fh:
        return parse_annotated(fh, inventory, schemes)
