"""Reasoning prompts for the four strategies and tagged answer extraction.

All four strategies share one template skeleton: a Documents block, the
question, an answer-format instruction requiring the final answer inside
<answer></answer> tags, and a trailing "Answer:" cue. The chain-of-thought
variants add "Let's think step by step." before the cue; the re-organized
variants put the mind-map outline in the Documents block instead of the
original context (optionally followed by it).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable

from .core import (
    GenParams,
    InfoReError,
    MindMap,
    PrunedMindMap,
    Sample,
    Strategy,
    StrategyName,
    Task,
    iter_jsonl,
    render_mindmap,
    write_jsonl,
)
from .gateway import CompletionRequest, Gateway
from .extraction import render_documents


class MissingMindMapError(InfoReError):
    """A mind-map strategy was asked to build a prompt without one."""


class FormatError(InfoReError):
    """The completion carries no well-formed <answer></answer> span."""


ANSWER_INSTRUCTION = (
    "Your final answer should be enclosed in XML tag <answer></answer>, "
    "like this: <answer>{final_answer}</answer>, at the end of your response."
)

COT_TRIGGER = "Let's think step by step."

_TEMPLATES = {
    StrategyName.STANDARD: (
        "Documents: [EVIDENCE]\n"
        "Question: [CLAIM]?\n"
        "Please answer the question based on Documents.\n"
        + ANSWER_INSTRUCTION
        + "\nAnswer:"
    ),
    StrategyName.COT: (
        "Documents: [EVIDENCE]\n"
        "Question: [CLAIM]?\n"
        "Please answer the question based on Documents.\n"
        + ANSWER_INSTRUCTION
        + "\n"
        + COT_TRIGGER
        + "\nAnswer:"
    ),
    StrategyName.INFORE: (
        "Documents: [MINDMAP]\n"
        "Question: [CLAIM]?\n"
        "Please answer the question based on Documents.\n"
        + ANSWER_INSTRUCTION
        + "\nAnswer:"
    ),
    StrategyName.INFORE_COT: (
        "Documents: [MINDMAP]\n"
        "Question: [CLAIM]?\n"
        "Please answer the question based on Documents.\n"
        + ANSWER_INSTRUCTION
        + "\n"
        + COT_TRIGGER
        + "\nAnswer:"
    ),
}


def build_reasoning_prompt(
    strategy: Strategy, sample: Sample, reorganized: str | None = None
) -> str:
    """Render the strategy's template for one sample.

    The Documents block holds the original context for standard/cot, the
    re-organized outline for the mind-map strategies, or outline followed by
    the original context when ``include_original_context`` is set. Reading
    comprehension samples with candidates get a "Candidates:" line after the
    question. The template appends one "?" to the question slot, so a single
    trailing "?" on the question itself is dropped first.
    """
    if strategy.uses_mindmap:
        if reorganized is None:
            raise MissingMindMapError(
                f"strategy {strategy.name.value} requires re-organized context"
            )
        documents = reorganized
        if strategy.include_original_context:
            documents = reorganized + "\n\n" + render_documents(sample.context)
        template = _TEMPLATES[strategy.name].replace("[MINDMAP]", documents)
    else:
        template = _TEMPLATES[strategy.name].replace(
            "[EVIDENCE]", render_documents(sample.context)
        )

    question = sample.question.rstrip()
    if question.endswith("?"):
        question = question[:-1]
    prompt = template.replace("[CLAIM]", question)

    if sample.task is Task.READING_COMPREHENSION and sample.candidates:
        candidates_line = "Candidates: " + ", ".join(sample.candidates)
        lines = prompt.split("\n")
        question_index = next(
            i for i, line in enumerate(lines) if line.startswith("Question: ")
        )
        lines.insert(question_index + 1, candidates_line)
        prompt = "\n".join(lines)
    return prompt


_ANSWER_SPAN = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)


def extract_answer(completion: str) -> str:
    """Content of the last well-formed <answer>...</answer> span, trimmed."""
    spans = _ANSWER_SPAN.findall(completion)
    if not spans:
        raise FormatError("no <answer></answer> span in completion")
    return spans[-1].strip()


@dataclass(frozen=True)
class ReasoningResult:
    """Outcome of one (sample, strategy) reasoning call. Exactly one of
    ``answer`` / ``failure`` is set."""

    sample_id: str
    strategy: Strategy
    prompt: str
    completion: str
    answer: str | None = None
    failure: str | None = None

    def __post_init__(self) -> None:
        if (self.answer is None) == (self.failure is None):
            raise ValueError("exactly one of answer/failure must be set")

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "strategy": self.strategy.name.value,
            "include_original_context": self.strategy.include_original_context,
            "prompt": self.prompt,
            "completion": self.completion,
            "answer": self.answer,
            "failure": self.failure,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReasoningResult":
        return cls(
            sample_id=data["sample_id"],
            strategy=Strategy(
                StrategyName(data["strategy"]),
                data.get("include_original_context", False),
            ),
            prompt=data["prompt"],
            completion=data["completion"],
            answer=data.get("answer"),
            failure=data.get("failure"),
        )


def reason(
    sample: Sample,
    strategy: Strategy,
    gateway: Gateway,
    model_id: str,
    reorganized: PrunedMindMap | MindMap | None = None,
    params: GenParams | None = None,
) -> ReasoningResult:
    """Build the prompt, obtain a completion, and extract the tagged answer.

    A missing/malformed answer tag is recorded as a failure (the sample will
    score 0 downstream) rather than raised; gateway errors propagate.
    """
    outline: str | None = None
    if strategy.uses_mindmap:
        if reorganized is None:
            raise MissingMindMapError(
                f"strategy {strategy.name.value} requires a mind map"
            )
        tree = reorganized.tree() if isinstance(reorganized, PrunedMindMap) else reorganized
        outline = render_mindmap(tree)
    prompt = build_reasoning_prompt(strategy, sample, outline)
    completion = gateway.complete(
        CompletionRequest(model_id, prompt, params or GenParams())
    )
    try:
        answer = extract_answer(completion)
    except FormatError:
        return ReasoningResult(
            sample.id, strategy, prompt, completion, failure="format_error"
        )
    return ReasoningResult(sample.id, strategy, prompt, completion, answer=answer)


def save_results(results: Iterable[ReasoningResult], path) -> None:
    write_jsonl(path, (r.to_dict() for r in results))


def load_results(path) -> list[ReasoningResult]:
    return [ReasoningResult.from_dict(row) for row in iter_jsonl(path)]
