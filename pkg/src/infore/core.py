"""Shared domain types: samples, mind maps, relation paths, and strategies.

Everything here is an immutable value object; instances can be shared freely
between concurrent workers. The canonical mind-map serialization is a
2-space-indented outline ("label:" opens a branch, "label: value" is a leaf)
and round-trips through :func:`parse_outline` / :func:`render_mindmap`.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator


class InfoReError(Exception):
    """Base class for errors raised by this package."""


class ParseError(InfoReError):
    """A completion or outline could not be parsed into a mind map."""


def _reject_newlines(name: str, text: str) -> None:
    if "\n" in text or "\r" in text:
        raise ValueError(f"{name} must not contain newline characters: {text!r}")


def clean_text(text: str) -> str:
    """Collapse embedded newlines to spaces so labels/values stay line-safe."""
    return " ".join(text.replace("\r", "\n").split("\n"))


class Task(str, Enum):
    CLAIM_VERIFICATION = "claim_verification"
    QUESTION_ANSWERING = "question_answering"
    READING_COMPREHENSION = "reading_comprehension"


@dataclass(frozen=True)
class Document:
    """One evidence document. The title may be empty, the body may not."""

    title: str
    body: str

    def __post_init__(self) -> None:
        if not self.body:
            raise ValueError("document body must be non-empty")


@dataclass(frozen=True)
class Sample:
    """One evaluation instance: context documents, a question (or claim for
    verification tasks), gold answers, and optional candidates / hop count."""

    id: str
    task: Task
    context: tuple[Document, ...]
    question: str
    gold_answers: tuple[str, ...]
    candidates: tuple[str, ...] | None = None
    hops: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "task", Task(self.task))
        object.__setattr__(self, "context", tuple(self.context))
        object.__setattr__(self, "gold_answers", tuple(self.gold_answers))
        if self.candidates is not None:
            object.__setattr__(self, "candidates", tuple(self.candidates))
        if not self.id:
            raise ValueError("sample id must be non-empty")
        if not self.gold_answers:
            raise ValueError(f"sample {self.id}: gold_answers must be non-empty")
        if self.hops is not None and self.hops not in (2, 3, 4):
            raise ValueError(f"sample {self.id}: hops must be one of 2/3/4, got {self.hops}")
        if self.task is Task.READING_COMPREHENSION and self.candidates:
            missing = [a for a in self.gold_answers if a not in self.candidates]
            if missing:
                raise ValueError(
                    f"sample {self.id}: gold answers {missing} not among candidates"
                )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "task": self.task.value,
            "context": [{"title": d.title, "body": d.body} for d in self.context],
            "question": self.question,
            "gold_answers": list(self.gold_answers),
            "candidates": list(self.candidates) if self.candidates is not None else None,
            "hops": self.hops,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Sample":
        return cls(
            id=data["id"],
            task=Task(data["task"]),
            context=tuple(Document(d["title"], d["body"]) for d in data["context"]),
            question=data["question"],
            gold_answers=tuple(data["gold_answers"]),
            candidates=tuple(data["candidates"]) if data.get("candidates") else None,
            hops=data.get("hops"),
        )


@dataclass(frozen=True)
class MindMapNode:
    """A node in the relation tree. Internal nodes carry no value; leaves may
    carry one (or none, for a bare "label:" line)."""

    label: str
    value: str | None = None
    children: tuple["MindMapNode", ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "children", tuple(self.children))
        if not self.label:
            raise ValueError("node label must be non-empty")
        _reject_newlines("node label", self.label)
        if self.value is not None:
            _reject_newlines("node value", self.value)
        if self.children and self.value is not None:
            raise ValueError(f"node {self.label!r}: internal nodes cannot carry a value")

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class MindMap:
    """The extracted relation tree for one sample."""

    root: MindMapNode
    sample_id: str = ""
    producer_model: str = ""


@dataclass(frozen=True)
class RelationPath:
    """One first-level relation flattened to its leaf: key chain plus value."""

    keys: tuple[str, ...]
    value: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "keys", tuple(self.keys))
        if not self.keys:
            raise ValueError("relation path needs at least one key")

    def render(self) -> str:
        return ": ".join(self.keys) + ": " + self.value


def render_relation(path: RelationPath) -> str:
    """Canonical text form of a relation path: "k1: k2: ...: value"."""
    return path.render()


def flatten(m: MindMap) -> list[RelationPath]:
    """First-level relations of a mind map, one per leaf, in document order.

    Each first-level child of the root yields one path per leaf in its
    subtree; the key chain starts at the first-level label (the root label is
    not part of the chain).
    """
    paths: list[RelationPath] = []

    def walk(node: MindMapNode, prefix: tuple[str, ...]) -> None:
        keys = prefix + (node.label,)
        if node.children:
            for child in node.children:
                walk(child, keys)
        else:
            paths.append(RelationPath(keys, node.value or ""))

    for child in m.root.children:
        walk(child, ())
    return paths


def reconstruct(source: MindMap, kept: Iterable[int]) -> MindMap:
    """Rebuild a tree keeping only the leaf paths at the given flatten indices.

    Internal nodes left without children are dropped; the root always remains.
    Leaf identity is preserved structurally, so duplicate labels stay distinct.
    """
    kept_set = frozenset(kept)
    counter = itertools.count()

    def prune(node: MindMapNode) -> MindMapNode | None:
        if node.children:
            children = tuple(c for c in map(prune, node.children) if c is not None)
            if not children:
                return None
            return MindMapNode(node.label, None, children)
        return node if next(counter) in kept_set else None

    root = source.root
    children = tuple(c for c in map(prune, root.children) if c is not None)
    new_root = MindMapNode(root.label, root.value if not children else None, children)
    return MindMap(new_root, source.sample_id, source.producer_model)


@dataclass(frozen=True)
class PrunedMindMap:
    """A mind map together with the set of relation indices kept by pruning."""

    source: MindMap
    kept: frozenset[int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "kept", frozenset(self.kept))
        n = len(flatten(self.source))
        bad = [i for i in self.kept if not 0 <= i < n]
        if bad:
            raise ValueError(f"kept indices {bad} out of range for {n} relations")

    def tree(self) -> MindMap:
        return reconstruct(self.source, self.kept)

    def relations(self) -> list[RelationPath]:
        paths = flatten(self.source)
        return [paths[i] for i in sorted(self.kept)]

    @classmethod
    def keep_all(cls, source: MindMap) -> "PrunedMindMap":
        return cls(source, frozenset(range(len(flatten(source)))))


def render_mindmap(m: MindMap) -> str:
    """Serialize a mind map as a 2-space-indented outline, root at depth 0."""
    lines: list[str] = []

    def walk(node: MindMapNode, depth: int) -> None:
        pad = "  " * depth
        if node.children:
            lines.append(f"{pad}{node.label}:")
            for child in node.children:
                walk(child, depth + 1)
        elif node.value is None:
            lines.append(f"{pad}{node.label}:")
        else:
            lines.append(f"{pad}{node.label}: {node.value}")

    walk(m.root, 0)
    return "\n".join(lines)


def parse_outline(text: str) -> MindMapNode:
    """Parse an indented outline into a tree.

    Tabs count as two spaces and blank lines are skipped. Any increase in
    indentation opens a child level, so ragged indents (3 or 5 spaces) still
    parse. Multiple top-level entries are wrapped under a synthetic
    "Mind Map" root.
    """
    entries: list[tuple[int, str, str | None]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.replace("\t", "  ")
        if not line.strip():
            continue
        body = line.lstrip(" ")
        indent = len(line) - len(body)
        label, colon, rest = body.partition(":")
        if not colon:
            raise ParseError(f"line {lineno}: expected 'label:' or 'label: value'")
        if not label:
            raise ParseError(f"line {lineno}: empty label")
        if rest == "":
            value: str | None = None
        elif rest.startswith(" "):
            value = rest[1:]
        else:
            value = rest
        entries.append((indent, label, value))

    if not entries:
        raise ParseError("empty outline")
    if entries[0][0] != 0:
        raise ParseError("first outline line must not be indented")

    class _Builder:
        __slots__ = ("indent", "label", "value", "children")

        def __init__(self, indent: int, label: str, value: str | None):
            self.indent = indent
            self.label = label
            self.value = value
            self.children: list[_Builder] = []

    tops: list[_Builder] = []
    stack: list[_Builder] = []
    for indent, label, value in entries:
        b = _Builder(indent, label, value)
        while stack and stack[-1].indent >= indent:
            stack.pop()
        if stack:
            stack[-1].children.append(b)
        else:
            tops.append(b)
        stack.append(b)

    def build(b: _Builder) -> MindMapNode:
        if b.children and b.value is not None:
            raise ParseError(f"branch {b.label!r} cannot also carry a value")
        return MindMapNode(b.label, b.value, tuple(build(c) for c in b.children))

    if len(tops) == 1:
        return build(tops[0])
    return MindMapNode("Mind Map", None, tuple(build(t) for t in tops))


class StrategyName(str, Enum):
    STANDARD = "standard"
    COT = "cot"
    INFORE = "infore"
    INFORE_COT = "infore_cot"


@dataclass(frozen=True)
class Strategy:
    """One of the four reasoning modes. They differ only in prompt assembly:
    the two infore modes replace the documents block with a mind-map outline
    (optionally followed by the original context)."""

    name: StrategyName
    include_original_context: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "name", StrategyName(self.name))
        if self.include_original_context and not self.uses_mindmap:
            raise ValueError(
                f"include_original_context only applies to mind-map strategies, not {self.name.value}"
            )

    @property
    def uses_mindmap(self) -> bool:
        return self.name in (StrategyName.INFORE, StrategyName.INFORE_COT)

    @property
    def chain_of_thought(self) -> bool:
        return self.name in (StrategyName.COT, StrategyName.INFORE_COT)


@dataclass(frozen=True)
class GenParams:
    """Decoding settings sent with every completion request."""

    temperature: float = 0.0
    top_p: float = 1.0
    max_output: int = 1024

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_output <= 0:
            raise ValueError("max_output must be positive")


def iter_jsonl(path) -> Iterator[dict]:
    """Yield one parsed object per non-blank line of a JSONL file."""
    import json

    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_jsonl(path, rows: Iterable[dict]) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
