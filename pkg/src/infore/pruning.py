"""Relevance pruning of relation paths with a reinforcement-learned policy.

The policy scores each flattened relation against the question and emits a
keep probability through a logistic head on top of a pluggable text encoder.
Actions are independent per-relation keep/delete bits; the reward is the
minimum of the rescaled downstream F1 and the clipped joint action
probability, and training ascends the advantage-weighted log-likelihood of
the sampled actions. A cosine-similarity pruner is included as the ablation
baseline.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .core import InfoReError, MindMap, PrunedMindMap, Sample, flatten

PROB_FLOOR = 1e-6


class EmptyRelationsError(InfoReError):
    """The pruning input builder needs at least one relation."""


class LengthMismatchError(InfoReError):
    """An action vector does not match the mind map's relation count."""


def build_prune_input(relations: Sequence[str], question: str) -> str:
    """Concatenate relations and question into the encoder input sequence.

    One "[CLS] segment [SEP]" pair per relation, with the question as the
    final segment.
    """
    if not relations:
        raise EmptyRelationsError("cannot build pruning input from zero relations")
    segments = list(relations) + [question]
    return " ".join(f"[CLS] {segment} [SEP]" for segment in segments)


class RelationScorer(Protocol):
    """Maps (relations, question) to one representation vector per relation."""

    @property
    def dim(self) -> int: ...

    @property
    def identifier(self) -> str: ...

    def encode(self, relations: Sequence[str], question: str) -> np.ndarray: ...


class HashingScorer:
    """Deterministic test encoder: each (relation, question) pair is hashed
    into a fixed pseudo-random vector in [-1, 1). Platform- and
    version-independent, so golden outputs stay stable."""

    def __init__(self, dim: int = 64) -> None:
        if dim <= 0:
            raise ValueError("dim must be positive")
        self._dim = dim

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def identifier(self) -> str:
        return f"hash-{self._dim}"

    def _vector(self, text: str) -> np.ndarray:
        seed = hashlib.sha256(text.encode("utf-8")).digest()
        values: list[float] = []
        counter = 0
        while len(values) < self._dim:
            block = hashlib.sha256(seed + counter.to_bytes(4, "big")).digest()
            for i in range(0, 32, 8):
                word = int.from_bytes(block[i : i + 8], "big")
                values.append(word / 2**64 * 2.0 - 1.0)
            counter += 1
        return np.array(values[: self._dim])

    def encode(self, relations: Sequence[str], question: str) -> np.ndarray:
        return np.stack([self._vector(f"{r}\x1f{question}") for r in relations])


class TransformerScorer:
    """Production encoder: runs the concatenated [CLS]/[SEP] sequence through
    a bidirectional transformer and reads one hidden vector per [CLS] slot.

    Requires the optional ``encoder`` extra (torch + transformers) and a
    local or downloadable checkpoint; the encoder itself is consumed frozen.
    """

    def __init__(self, model_name_or_path: str = "bert-base-uncased") -> None:
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise ImportError(
                "TransformerScorer needs the 'encoder' extra: pip install infore[encoder]"
            ) from exc
        self._torch = torch
        self._tokenizer = AutoTokenizer.from_pretrained(model_name_or_path)
        self._model = AutoModel.from_pretrained(model_name_or_path)
        self._model.eval()
        self._name = model_name_or_path

    @property
    def dim(self) -> int:
        return self._model.config.hidden_size

    @property
    def identifier(self) -> str:
        return f"transformer:{self._name}"

    def encode(self, relations: Sequence[str], question: str) -> np.ndarray:
        text = build_prune_input(relations, question)
        encoded = self._tokenizer(
            text,
            add_special_tokens=False,
            return_tensors="pt",
            truncation=True,
            max_length=self._tokenizer.model_max_length,
        )
        with self._torch.no_grad():
            hidden = self._model(**encoded).last_hidden_state[0]
        cls_positions = (
            (encoded["input_ids"][0] == self._tokenizer.cls_token_id).nonzero().flatten()
        )
        if len(cls_positions) < len(relations):
            raise ValueError(
                f"sequence truncated: {len(cls_positions)} [CLS] slots for "
                f"{len(relations)} relations"
            )
        return hidden[cls_positions[: len(relations)]].numpy()


def make_scorer(identifier: str) -> RelationScorer:
    """Build a scorer from its identifier, e.g. "hash-64" or "transformer:...". """
    if identifier.startswith("hash-"):
        return HashingScorer(int(identifier.split("-", 1)[1]))
    if identifier.startswith("transformer:"):
        return TransformerScorer(identifier.split(":", 1)[1])
    raise ValueError(f"unknown scorer identifier {identifier!r}")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class PruningPolicy:
    """Keep/delete policy: scorer representations through an affine map and a
    logistic squashing. Probabilities are clamped to (0, 1) exclusive."""

    def __init__(
        self,
        scorer: RelationScorer,
        weights: np.ndarray | None = None,
        bias: float = 0.0,
    ) -> None:
        self.scorer = scorer
        self.weights = (
            np.zeros(scorer.dim) if weights is None else np.asarray(weights, dtype=float)
        )
        if self.weights.shape != (scorer.dim,):
            raise ValueError(f"weights must have shape ({scorer.dim},)")
        self.bias = float(bias)

    def probabilities_from(self, vectors: np.ndarray) -> np.ndarray:
        logits = vectors @ self.weights + self.bias
        return np.clip(_sigmoid(logits), PROB_FLOOR, 1.0 - PROB_FLOOR)

    def probabilities(self, relations: Sequence[str], question: str) -> np.ndarray:
        return self.probabilities_from(self.scorer.encode(relations, question))

    def action_log_prob(self, vectors: np.ndarray, bits: np.ndarray) -> float:
        p = self.probabilities_from(vectors)
        return float(np.sum(np.where(bits == 1, np.log(p), np.log1p(-p))))

    def log_prob_grad(
        self, vectors: np.ndarray, bits: np.ndarray
    ) -> tuple[np.ndarray, float]:
        """Analytic gradient of the action log-likelihood wrt (weights, bias)."""
        p = self.probabilities_from(vectors)
        residual = bits - p
        return residual @ vectors, float(residual.sum())


def keep_probabilities(
    policy: PruningPolicy, relations: Sequence[str], question: str
) -> list[float]:
    """Per-relation keep probability, strictly inside (0, 1)."""
    if not relations:
        raise EmptyRelationsError("no relations to score")
    return [float(p) for p in policy.probabilities(relations, question)]


@dataclass(frozen=True)
class ActionVector:
    """Per-relation keep(1)/delete(0) bits with their joint probability.

    The joint probability is accumulated in log space; ``joint_prob`` is its
    exponential and may underflow to 0.0 for very long relation lists, in
    which case ``log_prob`` remains authoritative.
    """

    bits: tuple[int, ...]
    joint_prob: float
    log_prob: float


def sample_actions(probs: Sequence[float], rng: np.random.Generator) -> ActionVector:
    """Independent per-relation draws from the keep probabilities."""
    p = np.asarray(probs, dtype=float)
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("probabilities must lie strictly in (0, 1)")
    bits = (rng.random(len(p)) < p).astype(int)
    log_prob = float(np.sum(np.where(bits == 1, np.log(p), np.log1p(-p))))
    return ActionVector(
        bits=tuple(int(b) for b in bits),
        joint_prob=float(np.exp(log_prob)),
        log_prob=log_prob,
    )


def apply_actions(m: MindMap, actions: ActionVector) -> PrunedMindMap:
    """Keep the relations whose bit is 1; internal nodes left childless by the
    deletions disappear from the reconstructed tree."""
    n = len(flatten(m))
    if len(actions.bits) != n:
        raise LengthMismatchError(
            f"got {len(actions.bits)} action bits for {n} relations"
        )
    kept = frozenset(i for i, bit in enumerate(actions.bits) if bit == 1)
    return PrunedMindMap(source=m, kept=kept)


@dataclass(frozen=True)
class RewardConfig:
    """Reward shape: F1 rescaling coefficient and the clip range half-width."""

    f1_coefficient: float = 10.0
    epsilon: float = 0.2

    def __post_init__(self) -> None:
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must be in (0, 1)")
        if self.f1_coefficient <= 0:
            raise ValueError("f1_coefficient must be positive")


def compute_reward(f1: float, joint_prob: float, cfg: RewardConfig) -> float:
    """min(coefficient * F1, clip(joint_prob, 1 - eps, 1 + eps))."""
    if not 0.0 <= f1 <= 1.0:
        raise ValueError(f"f1 must be in [0, 1], got {f1}")
    clipped = min(max(joint_prob, 1.0 - cfg.epsilon), 1.0 + cfg.epsilon)
    return min(cfg.f1_coefficient * f1, clipped)


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 1000
    epochs: int = 5
    batch_size: int = 4
    learning_rate: float = 2e-6
    seed: int = 0
    reward_mode: str = "paper"

    def __post_init__(self) -> None:
        for name in ("episodes", "epochs", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.reward_mode not in ("paper", "advantage_clip"):
            raise ValueError("reward_mode must be 'paper' or 'advantage_clip'")


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    mean_reward: float
    skip_count: int


@dataclass
class TrainingHistory:
    records: list[EpisodeRecord] = field(default_factory=list)
    total_skipped: int = 0

    def mean_reward(self, last: int | None = None) -> float:
        records = self.records if last is None else self.records[-last:]
        if not records:
            return 0.0
        return sum(r.mean_reward for r in records) / len(records)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", "mean_reward", "skip_count"])
            for record in self.records:
                writer.writerow([record.episode, repr(record.mean_reward), record.skip_count])

    @classmethod
    def from_csv(cls, path) -> "TrainingHistory":
        records = []
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                records.append(
                    EpisodeRecord(
                        int(row["episode"]), float(row["mean_reward"]), int(row["skip_count"])
                    )
                )
        return cls(records=records, total_skipped=sum(r.skip_count for r in records))


Answerer = Callable[[PrunedMindMap, Sample], float]


def train(
    policy: PruningPolicy,
    samples: Sequence[tuple[MindMap, Sample]],
    answerer: Answerer,
    cfg: TrainConfig,
    rcfg: RewardConfig,
) -> tuple[PruningPolicy, TrainingHistory]:
    """Policy-gradient training loop.

    Per episode: draw a batch with replacement, sample actions, score the
    pruned map with the answerer (an F1 in [0, 1]), form the reward, and take
    ``cfg.epochs`` ascent steps on the advantage-weighted action
    log-likelihood. The baseline is the running mean of all rewards seen.
    Samples whose mind map flattens to zero relations are skipped and counted;
    if every sample is empty the history has no records and the total skip
    counter equals the sample count. Deterministic under a fixed seed.

    reward_mode "advantage_clip" swaps the literal reward objective for a
    conventional clipped-surrogate update on the rescaled-F1 advantage.
    """
    if not samples:
        raise ValueError("samples must be non-empty")
    relation_lists = [[p.render() for p in flatten(m)] for m, _ in samples]
    if all(not rels for rels in relation_lists):
        return policy, TrainingHistory(records=[], total_skipped=len(samples))

    encoded: dict[int, np.ndarray] = {}

    def vectors_for(index: int) -> np.ndarray:
        if index not in encoded:
            _, sample = samples[index]
            encoded[index] = policy.scorer.encode(relation_lists[index], sample.question)
        return encoded[index]

    rng = np.random.default_rng(cfg.seed)
    baseline = 0.0
    reward_count = 0
    history = TrainingHistory()

    for episode in range(cfg.episodes):
        indices = rng.integers(0, len(samples), size=cfg.batch_size)
        batch = []
        rewards = []
        skips = 0
        for index in indices:
            mindmap, sample = samples[int(index)]
            if not relation_lists[int(index)]:
                skips += 1
                continue
            vectors = vectors_for(int(index))
            probs = policy.probabilities_from(vectors)
            actions = sample_actions(probs, rng)
            pruned = apply_actions(mindmap, actions)
            f1 = answerer(pruned, sample)
            if cfg.reward_mode == "paper":
                reward = compute_reward(f1, actions.joint_prob, rcfg)
            else:
                reward = rcfg.f1_coefficient * f1
            reward_count += 1
            advantage = reward - baseline
            baseline += (reward - baseline) / reward_count
            bits = np.array(actions.bits)
            batch.append((vectors, bits, advantage, actions.log_prob))
            rewards.append(reward)

        if batch:
            for _ in range(cfg.epochs):
                grad_w = np.zeros_like(policy.weights)
                grad_b = 0.0
                for vectors, bits, advantage, old_log_prob in batch:
                    gw, gb = policy.log_prob_grad(vectors, bits)
                    if cfg.reward_mode == "paper":
                        grad_w += advantage * gw
                        grad_b += advantage * gb
                    else:
                        ratio = math.exp(
                            policy.action_log_prob(vectors, bits) - old_log_prob
                        )
                        clipped_out = (ratio > 1 + rcfg.epsilon and advantage > 0) or (
                            ratio < 1 - rcfg.epsilon and advantage < 0
                        )
                        if not clipped_out:
                            grad_w += advantage * ratio * gw
                            grad_b += advantage * ratio * gb
                policy.weights = policy.weights + cfg.learning_rate * grad_w / len(batch)
                policy.bias = policy.bias + cfg.learning_rate * grad_b / len(batch)

        history.total_skipped += skips
        mean_reward = sum(rewards) / len(rewards) if rewards else 0.0
        history.records.append(EpisodeRecord(episode, mean_reward, skips))

    return policy, history


def greedy_prune(
    policy: PruningPolicy, m: MindMap, question: str, threshold: float = 0.5
) -> PrunedMindMap:
    """Keep every relation whose probability clears the threshold; if none
    does, keep the single highest-probability relation so the re-organized
    context is never empty."""
    relations = [p.render() for p in flatten(m)]
    if not relations:
        return PrunedMindMap(source=m, kept=frozenset())
    probs = np.asarray(keep_probabilities(policy, relations, question))
    kept = {i for i, p in enumerate(probs) if p >= threshold}
    if not kept:
        kept = {int(np.argmax(probs))}
    return PrunedMindMap(source=m, kept=frozenset(kept))


def similarity_prune(
    relations: Sequence[str],
    question: str,
    embedder: RelationScorer,
    drop_ratio: float = 0.3,
) -> frozenset[int]:
    """Ablation pruner: drop the floor(drop_ratio * n) relations whose
    representations are least cosine-similar to the question's; on ties the
    earlier index is kept."""
    if not 0 <= drop_ratio < 1:
        raise ValueError("drop_ratio must be in [0, 1)")
    n = len(relations)
    if n == 0:
        return frozenset()
    vectors = embedder.encode(relations, question)
    question_vec = embedder.encode([question], question)[0]
    denom = np.linalg.norm(vectors, axis=1) * np.linalg.norm(question_vec)
    denom = np.where(denom == 0, 1.0, denom)
    sims = vectors @ question_vec / denom
    n_drop = math.floor(drop_ratio * n)
    dropped = sorted(range(n), key=lambda i: (sims[i], -i))[:n_drop]
    return frozenset(set(range(n)) - set(dropped))


CHECKPOINT_VERSION = 1


def save_policy(policy: PruningPolicy, rcfg: RewardConfig, path) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "scorer": policy.scorer.identifier,
        "dim": policy.scorer.dim,
        "weights": [float(w) for w in policy.weights],
        "bias": policy.bias,
        "reward": {"f1_coefficient": rcfg.f1_coefficient, "epsilon": rcfg.epsilon},
    }
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def load_policy(
    path, scorer: RelationScorer | None = None
) -> tuple[PruningPolicy, RewardConfig]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version in {path}")
    if scorer is None:
        scorer = make_scorer(payload["scorer"])
    elif scorer.identifier != payload["scorer"]:
        raise ValueError(
            f"checkpoint was trained with scorer {payload['scorer']!r}, "
            f"got {scorer.identifier!r}"
        )
    policy = PruningPolicy(
        scorer, weights=np.array(payload["weights"]), bias=payload["bias"]
    )
    reward = RewardConfig(
        f1_coefficient=payload["reward"]["f1_coefficient"],
        epsilon=payload["reward"]["epsilon"],
    )
    return policy, reward
