"""rankwise: sliding-window listwise reranking over LLM backends, with
ranking metrics and rewards, GRPO training math, and a reasoning-data
synthesis pipeline."""

from .backends import (
    Backend,
    BackendConfig,
    ChatRequest,
    ChatResponse,
    FlakyBackend,
    FunctionBackend,
    Gateway,
    HttpBackend,
    IdentityBackend,
    MalformedBackend,
    Message,
    NoisyBackend,
    OracleBackend,
    ReverseBackend,
    make_backend,
)
from .errors import (
    DatasetError,
    ProtocolError,
    RankwiseError,
    RecordSkipped,
    RerankError,
    TransportError,
)
from .io import DatasetBundle, load_dataset, load_records, load_rollout_groups, write_run
from .metrics import (
    RewardBreakdown,
    RewardParams,
    final_reward,
    gated_reward,
    multi_view_reward,
    ndcg_at_k,
    rbo,
    recall_at_k,
)
from .parsing import (
    FormatStatus,
    ModelResponse,
    RepairReport,
    parse_ranking,
    parse_response,
    validate_answer_grammar,
)
from .synthesis import (
    ListwiseLabel,
    SynthesisRecord,
    assemble_training_list,
    generate_listwise_label,
    select_hard_negatives,
    select_positives,
    self_consistency_filter,
    split_document,
    synthesize_records,
)
from .training import (
    GrpoParams,
    GrpoResult,
    Rollout,
    RolloutGroup,
    SftLoss,
    group_advantages,
    grpo_loss,
    kl_token,
    sft_nll,
)
from .types import CandidateList, Passage, Query, RankedList
from .windows import WindowParams, WindowPlan, apply_window, plan_windows, rerank_query

__version__ = "0.1.0"

__all__ = [
    "Backend", "BackendConfig", "ChatRequest", "ChatResponse", "FlakyBackend",
    "FunctionBackend", "Gateway", "HttpBackend", "IdentityBackend",
    "MalformedBackend", "Message", "NoisyBackend", "OracleBackend",
    "ReverseBackend", "make_backend",
    "DatasetError", "ProtocolError", "RankwiseError", "RecordSkipped",
    "RerankError", "TransportError",
    "DatasetBundle", "load_dataset", "load_records", "load_rollout_groups", "write_run",
    "RewardBreakdown", "RewardParams", "final_reward", "gated_reward",
    "multi_view_reward", "ndcg_at_k", "rbo", "recall_at_k",
    "FormatStatus", "ModelResponse", "RepairReport", "parse_ranking",
    "parse_response", "validate_answer_grammar",
    "ListwiseLabel", "SynthesisRecord", "assemble_training_list",
    "generate_listwise_label", "select_hard_negatives", "select_positives",
    "self_consistency_filter", "split_document", "synthesize_records",
    "GrpoParams", "GrpoResult", "Rollout", "RolloutGroup", "SftLoss",
    "group_advantages", "grpo_loss", "kl_token", "sft_nll",
    "CandidateList", "Passage", "Query", "RankedList",
    "WindowParams", "WindowPlan", "apply_window", "plan_windows", "rerank_query",
    "__version__",
]
