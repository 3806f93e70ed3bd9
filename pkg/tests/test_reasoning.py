from __future__ import annotations

from pathlib import Path

import pytest

from infore.core import (
    Document,
    PrunedMindMap,
    Sample,
    Strategy,
    StrategyName,
    Task,
    render_mindmap,
)
from infore.gateway import Gateway, MockBackend
from infore.reasoning import (
    ANSWER_INSTRUCTION,
    COT_TRIGGER,
    FormatError,
    MissingMindMapError,
    ReasoningResult,
    build_reasoning_prompt,
    extract_answer,
    load_results,
    reason,
    save_results,
)

GOLDEN = Path(__file__).parent / "golden"


def golden(name: str) -> str:
    # goldens are stored with one trailing newline
    return (GOLDEN / name).read_text(encoding="utf-8")[:-1]


class TestGoldenPrompts:
    def test_standard(self, movie_sample):
        prompt = build_reasoning_prompt(Strategy(StrategyName.STANDARD), movie_sample)
        assert prompt == golden("reasoning_standard.txt")

    def test_cot(self, movie_sample):
        prompt = build_reasoning_prompt(Strategy(StrategyName.COT), movie_sample)
        assert prompt == golden("reasoning_cot.txt")

    def test_infore(self, movie_sample, movie_tree):
        prompt = build_reasoning_prompt(
            Strategy(StrategyName.INFORE), movie_sample, render_mindmap(movie_tree)
        )
        assert prompt == golden("reasoning_infore.txt")

    def test_infore_cot(self, movie_sample, movie_tree):
        prompt = build_reasoning_prompt(
            Strategy(StrategyName.INFORE_COT), movie_sample, render_mindmap(movie_tree)
        )
        assert prompt == golden("reasoning_infore_cot.txt")

    def test_extraction_prompt_golden(self, movie_sample):
        from infore.extraction import build_extraction_prompt

        prompt = build_extraction_prompt(movie_sample)
        assert prompt.rendered == golden("extraction_prompt.txt")


class TestPromptAssembly:
    def test_cot_ends_with_trigger_then_answer(self, movie_sample):
        prompt = build_reasoning_prompt(Strategy(StrategyName.COT), movie_sample)
        assert prompt.endswith("Let's think step by step.\nAnswer:")

    def test_standard_contains_instruction_line(self, movie_sample):
        prompt = build_reasoning_prompt(Strategy(StrategyName.STANDARD), movie_sample)
        assert "Please answer the question based on Documents." in prompt

    def test_answer_instruction_exactly_once(self, movie_sample, movie_tree):
        outline = render_mindmap(movie_tree)
        for name in StrategyName:
            strategy = Strategy(name)
            reorganized = outline if strategy.uses_mindmap else None
            prompt = build_reasoning_prompt(strategy, movie_sample, reorganized)
            assert prompt.count(ANSWER_INSTRUCTION) == 1

    def test_infore_documents_block_is_outline_only(self, movie_sample, movie_tree):
        outline = render_mindmap(movie_tree)
        prompt = build_reasoning_prompt(Strategy(StrategyName.INFORE), movie_sample, outline)
        assert f"Documents: {outline}\nQuestion:" in prompt
        for doc in movie_sample.context:
            assert doc.body not in prompt

    def test_no_context_leakage_beyond_longest_value(self, movie_sample, movie_tree):
        # no original-document substring longer than the longest relation value
        from infore.core import flatten

        outline = render_mindmap(movie_tree)
        window = max(len(p.value) for p in flatten(movie_tree)) + 1
        for name in (StrategyName.INFORE, StrategyName.INFORE_COT):
            prompt = build_reasoning_prompt(Strategy(name), movie_sample, outline)
            for doc in movie_sample.context:
                for start in range(len(doc.body) - window + 1):
                    assert doc.body[start : start + window] not in prompt

    def test_include_original_context_appends_documents(self, movie_sample, movie_tree):
        outline = render_mindmap(movie_tree)
        strategy = Strategy(StrategyName.INFORE, include_original_context=True)
        prompt = build_reasoning_prompt(strategy, movie_sample, outline)
        assert outline in prompt
        for doc in movie_sample.context:
            assert doc.body in prompt
        assert prompt.index(outline) < prompt.index(movie_sample.context[0].body)

    def test_missing_mindmap_raises(self, movie_sample):
        with pytest.raises(MissingMindMapError):
            build_reasoning_prompt(Strategy(StrategyName.INFORE), movie_sample)

    def test_question_gets_single_question_mark(self, movie_sample):
        prompt = build_reasoning_prompt(Strategy(StrategyName.STANDARD), movie_sample)
        question = movie_sample.question.rstrip("?")
        assert f"Question: {question}?\n" in prompt
        assert f"{question}??" not in prompt

    def test_claim_without_question_mark_gets_one(self):
        sample = Sample(
            "c1",
            Task.CLAIM_VERIFICATION,
            (Document("", "evidence text"),),
            "The film was produced in 1953.",
            ("SUPPORTED",),
        )
        prompt = build_reasoning_prompt(Strategy(StrategyName.STANDARD), sample)
        assert "Question: The film was produced in 1953.?\n" in prompt

    def test_candidates_line_for_reading_comprehension(self):
        sample = Sample(
            "rc1",
            Task.READING_COMPREHENSION,
            (Document("", "body"),),
            "country of origin",
            ("france",),
            candidates=("france", "spain", "italy"),
        )
        prompt = build_reasoning_prompt(Strategy(StrategyName.STANDARD), sample)
        lines = prompt.split("\n")
        q_index = lines.index("Question: country of origin?")
        assert lines[q_index + 1] == "Candidates: france, spain, italy"

    def test_no_candidates_line_for_qa_task(self, movie_sample):
        prompt = build_reasoning_prompt(Strategy(StrategyName.STANDARD), movie_sample)
        assert "Candidates:" not in prompt


class TestExtractAnswer:
    def test_simple(self):
        assert extract_answer("<answer>SUPPORTED</answer>") == "SUPPORTED"

    def test_last_span_wins(self):
        assert extract_answer("<answer>A</answer> and later <answer>B</answer>") == "B"

    def test_whitespace_trimmed(self):
        assert extract_answer("<answer>\n  yes \n</answer>") == "yes"

    def test_multiline_answer(self):
        assert extract_answer("text <answer>two\nwords</answer>") == "two\nwords"

    def test_no_tags(self):
        with pytest.raises(FormatError):
            extract_answer("no tags at all")

    def test_unclosed_tag(self):
        with pytest.raises(FormatError):
            extract_answer("<answer>never closed")


class TestReason:
    def test_answer_extracted(self, movie_sample):
        gateway = Gateway(MockBackend(handler=lambda r: "<answer>yes</answer>"))
        result = reason(movie_sample, Strategy(StrategyName.STANDARD), gateway, "m")
        assert result.answer == "yes"
        assert result.failure is None

    def test_untagged_prose_records_failure(self, movie_sample):
        gateway = Gateway(MockBackend(handler=lambda r: "I think the answer is London."))
        result = reason(movie_sample, Strategy(StrategyName.STANDARD), gateway, "m")
        assert result.answer is None
        assert result.failure == "format_error"

    def test_pruned_mindmap_rendered(self, movie_sample, movie_tree):
        prompts = []

        def handler(request):
            prompts.append(request.prompt)
            return "<answer>x</answer>"

        pruned = PrunedMindMap.keep_all(movie_tree)
        gateway = Gateway(MockBackend(handler=handler))
        reason(movie_sample, Strategy(StrategyName.INFORE), gateway, "m", pruned)
        assert "Production Company: Metro-Goldwyn-Mayer" in prompts[0]

    def test_missing_mindmap_raises(self, movie_sample):
        gateway = Gateway(MockBackend(handler=lambda r: "<answer>x</answer>"))
        with pytest.raises(MissingMindMapError):
            reason(movie_sample, Strategy(StrategyName.INFORE), gateway, "m")

    def test_deterministic_under_replay(self, movie_sample, tmp_path):
        from infore.gateway import ReplayBackend, record_fixture
        from infore.core import GenParams
        from infore.gateway import CompletionRequest

        prompt = build_reasoning_prompt(Strategy(StrategyName.STANDARD), movie_sample)
        path = record_fixture(
            MockBackend(handler=lambda r: "<answer>London</answer>"),
            [CompletionRequest("m", prompt, GenParams())],
            tmp_path / "f.jsonl",
        )
        first = reason(movie_sample, Strategy(StrategyName.STANDARD), Gateway(ReplayBackend(path)), "m")
        second = reason(movie_sample, Strategy(StrategyName.STANDARD), Gateway(ReplayBackend(path)), "m")
        assert first == second

    def test_result_requires_exactly_one_outcome(self):
        with pytest.raises(ValueError):
            ReasoningResult("s", Strategy(StrategyName.STANDARD), "p", "c")
        with pytest.raises(ValueError):
            ReasoningResult(
                "s", Strategy(StrategyName.STANDARD), "p", "c", answer="a", failure="f"
            )

    def test_results_jsonl_roundtrip(self, movie_sample, tmp_path):
        gateway = Gateway(MockBackend(handler=lambda r: "<answer>yes</answer>"))
        results = [reason(movie_sample, Strategy(StrategyName.STANDARD), gateway, "m")]
        path = tmp_path / "results.jsonl"
        save_results(results, path)
        assert load_results(path) == results
