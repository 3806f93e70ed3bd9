from __future__ import annotations

import pytest

from infore.core import Document, MindMap, MindMapNode, Sample, Task
from infore.pruning import HashingScorer


@pytest.fixture
def movie_tree() -> MindMap:
    """Reference tree: a film with six first-level relations, one of which
    (Producer) fans out into three leaf paths."""
    root = MindMapNode(
        "Julius Caesar",
        None,
        (
            MindMapNode("Production Company", "Metro-Goldwyn-Mayer"),
            MindMapNode("Director", "Joseph L. Mankiewicz"),
            MindMapNode(
                "Producer",
                None,
                (
                    MindMapNode("Name", "John Houseman"),
                    MindMapNode("Education", "Clifton College, England"),
                    MindMapNode("Occupation", "Grain Trade, London"),
                ),
            ),
            MindMapNode("Adaptation", "Play by Shakespeare"),
        ),
    )
    return MindMap(root=root, sample_id="movie-1", producer_model="test-model")


@pytest.fixture
def movie_question() -> str:
    return "Where did the producer of Julius Caesar study or work?"


@pytest.fixture
def movie_sample(movie_question) -> Sample:
    return Sample(
        id="movie-1",
        task=Task.QUESTION_ANSWERING,
        context=(
            Document(
                title="Julius Caesar (1953 film)",
                body=(
                    "Julius Caesar is a 1953 epic film produced by John Houseman "
                    "and directed by Joseph L. Mankiewicz for Metro-Goldwyn-Mayer, "
                    "adapted from the play by Shakespeare."
                ),
            ),
            Document(
                title="John Houseman",
                body=(
                    "John Houseman was educated at Clifton College in England and "
                    "worked in the grain trade in London before moving to theatre."
                ),
            ),
        ),
        question=movie_question,
        gold_answers=("Grain Trade, London",),
    )


@pytest.fixture
def hash_scorer() -> HashingScorer:
    return HashingScorer(64)


def pytest_terminal_summary(terminalreporter):
    """Print one PASS/FAIL line per acceptance criterion at the end."""
    lines = []
    for outcome in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance" not in nodeid:
                continue
            if getattr(report, "when", "call") not in ("call", "setup"):
                continue
            if outcome == "passed" and report.when != "call":
                continue
            name = nodeid.split("::")[-1]
            lines.append((outcome.upper(), name))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for outcome, name in sorted(set(lines), key=lambda x: x[1]):
            terminalreporter.write_line(f"{outcome}: {name}")
