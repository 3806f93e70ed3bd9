"""Adapters from benchmark-native files to the unified sample schema.

Each adapter reads the benchmark's published JSON/JSONL shape and emits
validated :class:`~infore.core.Sample` records in file order. Field mappings
are documented in docs/datasets.md. Benchmarks whose official releases keep
evidence in a separate corpus (HOVER, FEVEROUS, SCIFACT) are ingested from
preprocessed records carrying an inline ``context`` field.

When a reference count is set, a larger source is subsampled with a seeded
uniform draw and a smaller one raises :class:`CountMismatchError`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .core import Document, InfoReError, Sample, Task, write_jsonl


class IngestError(InfoReError):
    """A source record is malformed; the message names the line."""


class CountMismatchError(InfoReError):
    """The ingested count disagrees with the expected benchmark size."""


class DatasetName(str, Enum):
    HOVER = "HOVER"
    FEVEROUS = "FEVEROUS"
    SCIFACT = "SCIFACT"
    TWO_WIKI_MULTIHOP_QA = "2WikiMultiHopQA"
    STRATEGY_QA = "StrategyQA"
    MUSIQUE = "MuSiQue"
    HOTPOT_QA = "HotpotQA"
    WIKIHOP = "WIKIHOP"


# Benchmark sizes used for verification (pairs per split).
REFERENCE_COUNTS: dict[tuple[DatasetName, str], int] = {
    (DatasetName.FEVEROUS, "train"): 2000,
    (DatasetName.FEVEROUS, "test"): 2959,
    (DatasetName.HOVER, "train"): 2000,
    (DatasetName.HOVER, "test"): 4000,
    (DatasetName.SCIFACT, "train"): 200,
    (DatasetName.SCIFACT, "test"): 212,
    (DatasetName.TWO_WIKI_MULTIHOP_QA, "train"): 2000,
    (DatasetName.TWO_WIKI_MULTIHOP_QA, "test"): 500,
    (DatasetName.STRATEGY_QA, "train"): 1000,
    (DatasetName.STRATEGY_QA, "test"): 229,
    (DatasetName.MUSIQUE, "train"): 2000,
    (DatasetName.MUSIQUE, "test"): 2417,
    (DatasetName.HOTPOT_QA, "train"): 2000,
    (DatasetName.HOTPOT_QA, "test"): 500,
    (DatasetName.WIKIHOP, "train"): 2000,
    (DatasetName.WIKIHOP, "test"): 500,
}


@dataclass(frozen=True)
class DatasetSpec:
    name: DatasetName
    split: str = "test"
    expected_count: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "name", DatasetName(self.name))
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        if self.expected_count is not None:
            reference = REFERENCE_COUNTS[(self.name, self.split)]
            if self.expected_count != reference:
                raise ValueError(
                    f"expected_count {self.expected_count} does not match the "
                    f"{self.name.value} {self.split} benchmark size {reference}"
                )


def _documents_from(raw: object, where: str) -> tuple[Document, ...]:
    """Normalize the common context encodings into Document tuples."""
    docs: list[Document] = []
    if not isinstance(raw, list):
        raise IngestError(f"{where}: context must be a list")
    for item in raw:
        if isinstance(item, str):
            if item:
                docs.append(Document(title="", body=item))
        elif isinstance(item, dict):
            title = item.get("title", "")
            body = item.get("text") or item.get("body") or item.get("paragraph_text")
            if body is None and "sentences" in item:
                body = " ".join(item["sentences"])
            if not body:
                raise IngestError(f"{where}: document has no text")
            docs.append(Document(title=title, body=body))
        elif isinstance(item, (list, tuple)) and len(item) == 2:
            title, body = item
            if isinstance(body, list):
                body = " ".join(str(s) for s in body)
            if not body:
                raise IngestError(f"{where}: document has no text")
            docs.append(Document(title=str(title), body=str(body)))
        else:
            raise IngestError(f"{where}: unrecognized context entry {type(item).__name__}")
    return tuple(docs)


def _require(record: dict, key: str, where: str) -> object:
    if key not in record or record[key] in (None, ""):
        raise IngestError(f"{where}: missing field {key!r}")
    return record[key]


def _adapt_hotpot_style(record: dict, where: str, task: Task) -> Sample:
    """HotpotQA and 2WikiMultiHopQA share one shape: _id, question, answer,
    context as [title, [sentences]] pairs."""
    return Sample(
        id=str(record.get("_id") or record.get("id") or _require(record, "_id", where)),
        task=task,
        context=_documents_from(_require(record, "context", where), where),
        question=str(_require(record, "question", where)),
        gold_answers=(str(_require(record, "answer", where)),),
    )


def _adapt_hotpotqa(record: dict, where: str) -> Sample:
    return _adapt_hotpot_style(record, where, Task.QUESTION_ANSWERING)


def _adapt_2wiki(record: dict, where: str) -> Sample:
    return _adapt_hotpot_style(record, where, Task.QUESTION_ANSWERING)


def _adapt_musique(record: dict, where: str) -> Sample:
    golds = [str(_require(record, "answer", where))]
    golds.extend(str(a) for a in record.get("answer_aliases", []) if a)
    return Sample(
        id=str(_require(record, "id", where)),
        task=Task.QUESTION_ANSWERING,
        context=_documents_from(_require(record, "paragraphs", where), where),
        question=str(_require(record, "question", where)),
        gold_answers=tuple(golds),
    )


def _adapt_strategyqa(record: dict, where: str) -> Sample:
    answer = record.get("answer")
    if not isinstance(answer, bool):
        raise IngestError(f"{where}: StrategyQA answer must be boolean")
    context = record.get("context") or record.get("facts") or record.get("evidence")
    if not context:
        raise IngestError(f"{where}: missing context/facts")
    return Sample(
        id=str(record.get("qid") or record.get("id") or _require(record, "qid", where)),
        task=Task.QUESTION_ANSWERING,
        context=_documents_from(context, where),
        question=str(_require(record, "question", where)),
        gold_answers=("yes" if answer else "no",),
    )


def _adapt_wikihop(record: dict, where: str) -> Sample:
    candidates = tuple(str(c) for c in _require(record, "candidates", where))
    return Sample(
        id=str(_require(record, "id", where)),
        task=Task.READING_COMPREHENSION,
        context=_documents_from(_require(record, "supports", where), where),
        question=str(_require(record, "query", where)),
        gold_answers=(str(_require(record, "answer", where)),),
        candidates=candidates,
    )


def _adapt_hover(record: dict, where: str) -> Sample:
    hops = record.get("num_hops") or record.get("hops")
    if hops is not None:
        hops = int(hops)
    return Sample(
        id=str(record.get("uid") or record.get("id") or _require(record, "uid", where)),
        task=Task.CLAIM_VERIFICATION,
        context=_documents_from(_require(record, "context", where), where),
        question=str(_require(record, "claim", where)),
        gold_answers=(str(_require(record, "label", where)),),
        hops=hops,
    )


def _adapt_feverous(record: dict, where: str) -> Sample:
    return Sample(
        id=str(_require(record, "id", where)),
        task=Task.CLAIM_VERIFICATION,
        context=_documents_from(_require(record, "context", where), where),
        question=str(_require(record, "claim", where)),
        gold_answers=(str(_require(record, "label", where)),),
    )


def _adapt_scifact(record: dict, where: str) -> Sample:
    label = record.get("label")
    if not label:
        evidence = record.get("evidence") or {}
        verdicts = {
            entry.get("label")
            for entries in evidence.values()
            for entry in (entries if isinstance(entries, list) else [entries])
        }
        if "SUPPORT" in verdicts:
            label = "SUPPORT"
        elif "CONTRADICT" in verdicts:
            label = "CONTRADICT"
        else:
            label = "NOT_ENOUGH_INFO"
    return Sample(
        id=str(_require(record, "id", where)),
        task=Task.CLAIM_VERIFICATION,
        context=_documents_from(_require(record, "context", where), where),
        question=str(_require(record, "claim", where)),
        gold_answers=(str(label),),
    )


_ADAPTERS: dict[DatasetName, Callable[[dict, str], Sample]] = {
    DatasetName.HOTPOT_QA: _adapt_hotpotqa,
    DatasetName.TWO_WIKI_MULTIHOP_QA: _adapt_2wiki,
    DatasetName.MUSIQUE: _adapt_musique,
    DatasetName.STRATEGY_QA: _adapt_strategyqa,
    DatasetName.WIKIHOP: _adapt_wikihop,
    DatasetName.HOVER: _adapt_hover,
    DatasetName.FEVEROUS: _adapt_feverous,
    DatasetName.SCIFACT: _adapt_scifact,
}


def _read_records(path: Path) -> list[tuple[str, dict]]:
    """Read a JSON array or JSONL file into (location, record) pairs."""
    text = path.read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        data = json.loads(text)
        return [(f"record {i + 1}", record) for i, record in enumerate(data)]
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            records.append((f"line {lineno}", json.loads(line)))
        except json.JSONDecodeError as exc:
            raise IngestError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
    return records


def ingest(spec: DatasetSpec, source: str | Path, seed: int = 0) -> list[Sample]:
    """Read a benchmark file into validated samples, order preserved.

    With ``expected_count`` set, an oversized source is subsampled uniformly
    (seeded, order preserved) and an undersized one raises
    :class:`CountMismatchError`.
    """
    path = Path(source)
    if not path.exists():
        raise IngestError(f"source file {path} does not exist")
    adapter = _ADAPTERS[spec.name]
    samples: list[Sample] = []
    for where, record in _read_records(path):
        if not isinstance(record, dict):
            raise IngestError(f"{where}: expected a JSON object")
        try:
            samples.append(adapter(record, where))
        except IngestError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestError(f"{where}: {exc}") from exc

    if spec.expected_count is not None:
        if len(samples) < spec.expected_count:
            raise CountMismatchError(
                f"{spec.name.value} {spec.split}: got {len(samples)} samples, "
                f"expected {spec.expected_count}"
            )
        if len(samples) > spec.expected_count:
            rng = np.random.default_rng(seed)
            chosen = rng.choice(len(samples), size=spec.expected_count, replace=False)
            samples = [samples[i] for i in sorted(chosen)]
    return samples


def save_samples(samples: Iterable[Sample], path) -> None:
    write_jsonl(path, (s.to_dict() for s in samples))


def load_samples(path) -> list[Sample]:
    from .core import iter_jsonl

    return [Sample.from_dict(row) for row in iter_jsonl(path)]
