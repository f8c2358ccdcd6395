"""Policy-enforcing question answering gateway over private documents.

Questions are answered through a four-layer enforcement pipeline (query
screening, policy-filtered retrieval, policy-conditioned prompting, and
post-generation checks with virtual redaction) under machine-readable
usage policies bound to contract agreements.
"""

from .policy import (
    Action,
    Constraint,
    Decision,
    DecisionOutcome,
    LeftOperand,
    Operator,
    Policy,
    Rule,
    RuleKind,
    SensitivityTag,
    SessionPolicyContext,
    TriState,
    collect_duties,
    evaluate_disclosure,
    parse_policy,
    serialize_policy,
)
from .ingest import Chunk, ChunkMetadata, DocumentSource, IngestConfig, ingest_asset, segment_document, tag_sensitivity
from .index import EMBED_DIM, IndexEntry, MetadataFilter, VectorIndex, cosine_similarity, embed_text
from .session import ContractAgreement, SessionManager, SessionToken
from .guard import (
    Verdict,
    attribute_spans,
    compliance_verdict,
    detect_entities,
    find_verbatim_runs,
    redact_spans,
)
from .pipeline import (
    DraftAnswer,
    Enforcer,
    EnforcementFlags,
    FinalResponse,
    GeneratorConfig,
    Prompt,
    ScreenResult,
    assemble_prompt,
    generate,
    policy_filtered_retrieve,
    screen_query,
)
from .audit import AuditLog, AuditRecord
from .service import GatewayConfig, GatewayService

__version__ = "0.1.0"
