"""Context re-organization pipeline for multi-hop reasoning over LLMs."""

from .core import (
    Document,
    GenParams,
    InfoReError,
    MindMap,
    MindMapNode,
    ParseError,
    PrunedMindMap,
    RelationPath,
    Sample,
    Strategy,
    StrategyName,
    Task,
    flatten,
    parse_outline,
    render_mindmap,
    render_relation,
)
from .gateway import (
    BackendError,
    CompletionRequest,
    Gateway,
    HttpBackend,
    MockBackend,
    MockMissError,
    ReplayBackend,
    record_fixture,
    request_digest,
)
from .extraction import build_extraction_prompt, extract, parse_mindmap_response
from .pruning import (
    ActionVector,
    HashingScorer,
    PruningPolicy,
    RewardConfig,
    TrainConfig,
    apply_actions,
    build_prune_input,
    compute_reward,
    greedy_prune,
    keep_probabilities,
    sample_actions,
    similarity_prune,
    train,
)
from .reasoning import (
    FormatError,
    ReasoningResult,
    build_reasoning_prompt,
    extract_answer,
    reason,
)
from .evaluation import (
    ErrorAnnotation,
    RankTally,
    RunReport,
    error_distribution,
    evaluate_run,
    normalize_answer,
    quality_rank_score,
    token_f1,
)

__version__ = "0.1.0"
