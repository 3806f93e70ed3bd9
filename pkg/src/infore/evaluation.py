"""Scoring and aggregation: token F1, run reports, rank scores, error tallies."""

from __future__ import annotations

import re
import string
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .core import InfoReError, Sample
from .reasoning import ReasoningResult


class EmptyRunError(InfoReError):
    """evaluate_run was handed no results."""


class UnknownSampleError(InfoReError):
    """A result references a sample id that was not provided."""


class InvalidTallyError(InfoReError):
    """Rank proportions do not sum to one."""


class EmptyAnnotationsError(InfoReError):
    """No error annotations to aggregate."""


_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


def normalize_answer(text: str) -> list[str]:
    """Lowercase, strip punctuation and articles, split on whitespace."""
    lowered = text.lower()
    no_punct = "".join(ch for ch in lowered if ch not in _PUNCT)
    no_articles = _ARTICLES.sub(" ", no_punct)
    return no_articles.split()


def token_f1(prediction: str, golds: Sequence[str]) -> float:
    """Best token-multiset F1 of the prediction against any gold answer.

    F1 is 0 whenever either side normalizes to no tokens. Verification labels
    are single tokens after normalization, so for them this reduces to exact
    label match.
    """
    if not golds:
        raise ValueError("golds must be non-empty")
    pred_tokens = normalize_answer(prediction)
    best = 0.0
    for gold in golds:
        gold_tokens = normalize_answer(gold)
        if not pred_tokens or not gold_tokens:
            continue
        overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
        if overlap == 0:
            continue
        precision = overlap / len(pred_tokens)
        recall = overlap / len(gold_tokens)
        best = max(best, 2 * precision * recall / (precision + recall))
    return best


@dataclass(frozen=True)
class SampleScore:
    sample_id: str
    strategy: str
    f1: float
    failed: bool = False

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "strategy": self.strategy,
            "f1": self.f1,
            "failed": self.failed,
        }


@dataclass
class RunReport:
    """Per-sample F1 rows plus the aggregates recomputable from them."""

    per_sample: list[SampleScore]
    by_dataset: dict[str, float]
    by_strategy: dict[str, float]
    by_hops: dict[str, dict[int, float]]
    format_failures: int
    skipped_samples: int
    backend_calls: int = 0

    def to_dict(self) -> dict:
        return {
            "per_sample": [s.to_dict() for s in self.per_sample],
            "by_dataset": dict(self.by_dataset),
            "by_strategy": dict(self.by_strategy),
            "by_hops": {k: {str(h): v for h, v in d.items()} for k, d in self.by_hops.items()},
            "format_failures": self.format_failures,
            "skipped_samples": self.skipped_samples,
            "backend_calls": self.backend_calls,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        return cls(
            per_sample=[
                SampleScore(r["sample_id"], r["strategy"], r["f1"], r.get("failed", False))
                for r in data["per_sample"]
            ],
            by_dataset=dict(data["by_dataset"]),
            by_strategy=dict(data["by_strategy"]),
            by_hops={
                k: {int(h): v for h, v in d.items()} for k, d in data["by_hops"].items()
            },
            format_failures=data["format_failures"],
            skipped_samples=data["skipped_samples"],
            backend_calls=data.get("backend_calls", 0),
        )


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def evaluate_run(
    results: Sequence[ReasoningResult],
    samples: Iterable[Sample] | Mapping[str, Sample],
    dataset_labels: Mapping[str, str] | None = None,
    backend_calls: int = 0,
) -> RunReport:
    """Score every result and aggregate unweighted means.

    Format failures score 0 and are counted rather than excluded, so means
    stay comparable across strategies. ``dataset_labels`` maps sample ids to a
    dataset name for the per-dataset table (everything defaults to "all").
    Samples that never appear in the results are counted as skipped.
    """
    if not results:
        raise EmptyRunError("no results to evaluate")
    if isinstance(samples, Mapping):
        by_id = dict(samples)
    else:
        by_id = {s.id: s for s in samples}

    per_sample: list[SampleScore] = []
    format_failures = 0
    seen_ids: set[str] = set()
    for result in results:
        sample = by_id.get(result.sample_id)
        if sample is None:
            raise UnknownSampleError(f"result references unknown sample {result.sample_id!r}")
        seen_ids.add(sample.id)
        if result.failure is not None:
            format_failures += 1
            f1 = 0.0
            failed = True
        else:
            f1 = token_f1(result.answer or "", sample.gold_answers)
            failed = False
        per_sample.append(SampleScore(sample.id, result.strategy.name.value, f1, failed))

    dataset_of = dict(dataset_labels or {})
    groups_dataset: dict[str, list[float]] = defaultdict(list)
    groups_strategy: dict[str, list[float]] = defaultdict(list)
    groups_hops: dict[str, dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
    for score in per_sample:
        sample = by_id[score.sample_id]
        groups_dataset[dataset_of.get(score.sample_id, "all")].append(score.f1)
        groups_strategy[score.strategy].append(score.f1)
        if sample.hops is not None:
            groups_hops[score.strategy][sample.hops].append(score.f1)

    return RunReport(
        per_sample=per_sample,
        by_dataset={k: _mean(v) for k, v in sorted(groups_dataset.items())},
        by_strategy={k: _mean(v) for k, v in sorted(groups_strategy.items())},
        by_hops={
            strat: {h: _mean(v) for h, v in sorted(hops.items())}
            for strat, hops in sorted(groups_hops.items())
        },
        format_failures=format_failures,
        skipped_samples=len(by_id) - len(seen_ids),
        backend_calls=backend_calls,
    )


@dataclass(frozen=True)
class RankTally:
    """Proportions of 1st/2nd/3rd ranks assigned to one method."""

    proportions: tuple[float, float, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "proportions", tuple(self.proportions))
        if len(self.proportions) != 3:
            raise ValueError("a rank tally has exactly three proportions")
        if any(not 0 <= p <= 1 for p in self.proportions):
            raise ValueError("rank proportions must lie in [0, 1]")


def quality_rank_score(tally: RankTally) -> float:
    """Weighted average rank score: 1st/2nd/3rd weighted 3/2/1."""
    p1, p2, p3 = tally.proportions
    if abs(p1 + p2 + p3 - 1.0) > 1e-9:
        raise InvalidTallyError(f"rank proportions sum to {p1 + p2 + p3}, expected 1")
    return 3.0 * p1 + 2.0 * p2 + 1.0 * p3


ERROR_CATEGORIES = ("CM", "FE", "ME", "UQ")


@dataclass(frozen=True)
class ErrorAnnotation:
    """A categorized baseline error. ``corrected`` is computed from the run
    report (baseline wrong, re-organized run fully right), never hand-entered."""

    sample_id: str
    category: str
    corrected: bool

    def __post_init__(self) -> None:
        if self.category not in ERROR_CATEGORIES:
            raise ValueError(
                f"category must be one of {ERROR_CATEGORIES}, got {self.category!r}"
            )

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "category": self.category,
            "corrected": self.corrected,
        }


@dataclass(frozen=True)
class ErrorDistribution:
    proportions: dict[str, float]
    corrected_fraction: float


def error_distribution(annotations: Sequence[ErrorAnnotation]) -> ErrorDistribution:
    """Category proportions over all annotations plus the corrected fraction.

    Every annotation records an error originally made by the baseline, so the
    corrected fraction is over all annotations.
    """
    if not annotations:
        raise EmptyAnnotationsError("no annotations to aggregate")
    total = len(annotations)
    counts = Counter(a.category for a in annotations)
    proportions = {cat: counts.get(cat, 0) / total for cat in ERROR_CATEGORIES}
    corrected = sum(1 for a in annotations if a.corrected) / total
    return ErrorDistribution(proportions=proportions, corrected_fraction=corrected)
