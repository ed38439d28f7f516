"""Controlled complexity evolution of instruction-tuning datasets.

Instructions are parsed into semantic trees, grown by a target number of
noun/verb nodes through an LLM backend (or a deterministic offline
stand-in), validated by tree re-extraction, judged for consistency and
preference with position-swap debiasing, and finally budgeted and
scheduled into curriculum manifests for downstream fine-tuning.
"""

from .budget import BudgetMatch, TokenStats, dataset_tokens, match_budget
from .curriculum import (
    CurriculumManifest,
    ManifestEntry,
    build_curriculum,
    lint_manifest,
    read_manifest,
    write_manifest,
)
from .dataset_io import (
    Conversation,
    ConversationSet,
    DatasetError,
    InstructionSample,
    SampleSet,
    SchemaError,
    Turn,
    load_alpaca,
    load_dataset,
    load_jsonl,
    load_sharegpt,
    sample_subset,
    select_evolvable_turns,
    write_dataset,
)
from .evolution import (
    AttemptLog,
    BatchResult,
    BatchSummary,
    EvolutionConfig,
    EvolutionRecord,
    ExtractionError,
    evolve_conversation,
    evolve_sample,
    extract_tree,
    run_batch,
)
from .judge import (
    JudgeParseError,
    JudgeVerdict,
    WinRateReport,
    WinRateStats,
    compute_win_rate,
    judge_consistency,
    judge_pairwise,
)
from .llm_backend import (
    Backend,
    BackendError,
    ChatRequest,
    ChatResponse,
    OfflineBackend,
    PermanentError,
    ProtocolError,
    RateLimiter,
    RemoteBackend,
    ResponseCache,
    TransportError,
    Usage,
    cache_key,
    heuristic_tree,
    offline_expand,
    offline_verbalize,
)
from .prompts import build_deepening_prompt, build_tree_instruct_prompt
from .prng import SplitMix64, derive_seed
from .semantic_tree import (
    ImbalanceError,
    NoTreeError,
    SemanticTree,
    TagError,
    TreeMetrics,
    TreeNode,
    TreeParseError,
    content_delta,
    metrics,
    parse_tree,
    serialize_tree,
)
from .tokens import count_tokens

__version__ = "0.1.0"
