"""Mind-map extraction: prompt construction, completion parsing, flattening.

The extraction prompt asks the model to summarize the evidence as a mind map
in strict JSON. Responses are accepted either as ``{"mind_map": "<outline>"}``
with an indented text outline, or with a nested JSON object in place of the
outline string; both become the same tree type.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import (
    Document,
    InfoReError,
    MindMap,
    MindMapNode,
    ParseError,
    RelationPath,
    Sample,
    clean_text,
    flatten,
    iter_jsonl,
    parse_outline,
    write_jsonl,
)
from .core import GenParams
from .gateway import CompletionRequest, Gateway

__all__ = [
    "EXTRACTION_TEMPLATE",
    "EmptyContextError",
    "ExtractionPrompt",
    "build_extraction_prompt",
    "extract",
    "flatten",
    "load_mindmaps",
    "parse_mindmap_response",
    "render_documents",
    "save_mindmaps",
]


class EmptyContextError(InfoReError):
    """The sample has no context documents to extract from."""


EXTRACTION_TEMPLATE = (
    "Given a claim and corresponding evidence, please summarize the evidence "
    "as a mind map according to the claim. The output must be in a strict "
    'JSON format: {"mind_map": "mind_map"}.\n'
    "CLAIM: [CLAIM]\n"
    "EVIDENCE: [EVIDENCE]"
)

REPAIR_INSTRUCTION = "Return only valid JSON."


def render_documents(documents: Sequence[Document]) -> str:
    """Render documents as "Title: <title>" and body blocks joined by blank lines."""
    return "\n\n".join(f"Title: {d.title}\n{d.body}" for d in documents)


@dataclass(frozen=True)
class ExtractionPrompt:
    template_id: str
    rendered: str

    def __post_init__(self) -> None:
        for marker in ("[CLAIM]", "[EVIDENCE]"):
            if marker in self.rendered:
                raise ValueError(f"placeholder {marker} left unsubstituted")


def build_extraction_prompt(sample: Sample) -> ExtractionPrompt:
    if not sample.context:
        raise EmptyContextError(f"sample {sample.id} has no context documents")
    rendered = EXTRACTION_TEMPLATE.replace("[CLAIM]", sample.question).replace(
        "[EVIDENCE]", render_documents(sample.context)
    )
    return ExtractionPrompt(template_id="mindmap-extraction-v1", rendered=rendered)


def _strip_code_fences(text: str) -> str:
    import re

    match = re.search(r"```[A-Za-z]*\n?(.*?)```", text, re.DOTALL)
    return match.group(1) if match else text


def _outer_json_object(text: str) -> dict:
    decoder = json.JSONDecoder()
    start = text.find("{")
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            start = text.find("{", start + 1)
            continue
        if isinstance(obj, dict):
            return obj
        start = text.find("{", start + 1)
    raise ParseError("no JSON object found in completion")


def _node_from_json(label: object, value: object) -> MindMapNode:
    name = clean_text(str(label))
    if isinstance(value, dict):
        children = tuple(_node_from_json(k, v) for k, v in value.items())
        return MindMapNode(name, None, children)
    if isinstance(value, list):
        children: list[MindMapNode] = []
        for item in value:
            if isinstance(item, dict):
                children.extend(_node_from_json(k, v) for k, v in item.items())
            else:
                children.append(MindMapNode(clean_text(str(item))))
        if children:
            return MindMapNode(name, None, tuple(children))
        return MindMapNode(name)
    if value is None:
        return MindMapNode(name)
    return MindMapNode(name, clean_text(str(value)))


def parse_mindmap_response(
    text: str, sample_id: str = "", producer_model: str = ""
) -> MindMap:
    """Parse a completion into a mind map.

    Accepts the JSON object anywhere in the text (code fences are stripped
    first); the "mind_map" key may hold an outline string or a nested object.
    """
    obj = _outer_json_object(_strip_code_fences(text))
    if "mind_map" not in obj:
        raise ParseError('completion JSON has no "mind_map" key')
    payload = obj["mind_map"]
    if isinstance(payload, str):
        root = parse_outline(payload)
    elif isinstance(payload, dict):
        if len(payload) == 1:
            key, value = next(iter(payload.items()))
            root = _node_from_json(key, value)
        else:
            root = MindMapNode(
                "Mind Map", None, tuple(_node_from_json(k, v) for k, v in payload.items())
            )
    else:
        raise ParseError(f'"mind_map" must be an outline string or object, got {type(payload).__name__}')
    return MindMap(root=root, sample_id=sample_id, producer_model=producer_model)


def extract(
    sample: Sample,
    gateway: Gateway,
    model_id: str,
    params: GenParams | None = None,
) -> MindMap:
    """Ask the model to re-organize the sample's context into a mind map.

    One automatic repair retry is made when the first completion fails to
    parse; the retry appends a terse corrective instruction to the prompt.
    """
    params = params or GenParams()
    prompt = build_extraction_prompt(sample)
    completion = gateway.complete(CompletionRequest(model_id, prompt.rendered, params))
    try:
        return parse_mindmap_response(completion, sample.id, model_id)
    except ParseError:
        repair = prompt.rendered + "\n" + REPAIR_INSTRUCTION
        completion = gateway.complete(CompletionRequest(model_id, repair, params))
        return parse_mindmap_response(completion, sample.id, model_id)


def save_mindmaps(maps: Iterable[MindMap], path) -> None:
    from .core import render_mindmap

    write_jsonl(
        path,
        (
            {
                "sample_id": m.sample_id,
                "producer_model": m.producer_model,
                "mind_map": render_mindmap(m),
            }
            for m in maps
        ),
    )


def load_mindmaps(path) -> list[MindMap]:
    maps = []
    for row in iter_jsonl(path):
        maps.append(
            MindMap(
                root=parse_outline(row["mind_map"]),
                sample_id=row["sample_id"],
                producer_model=row.get("producer_model", ""),
            )
        )
    return maps
