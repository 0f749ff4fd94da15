//! Conversational automated program repair.
//!
//! A [`RepairTask`] pairs a [`BugInstance`] with its bug-exposing failure.
//! [`conversational_repair`] then alternates model queries through a [`ChatBackend`] with
//! validation through a [`Validator`], turning each validation result into the next
//! conversational turn, and finally collects alternative plausible patches.

pub mod ablation;
pub mod bug;
pub mod engine;
#[cfg(feature = "process")]
pub mod exec;
pub mod failure;
pub mod llm;
pub mod prompt;

pub use ablation::{run_ablation, write_ablation_csv, AblationRow, AblationRun};
pub use bug::{
    apply_patch, load_corpus, parse_corpus, parse_corpus_with, split_context, BugError,
    BugInstance, LineSpan, Patch, PatchOrigin, RepairScenario, SplitContext,
};
pub use engine::{
    compute_cost, conversational_repair, normalize_patch, AbortKind, CostLedger, EngineConfig,
    EngineError, EventVerdict, Phase, RepairAbort, RepairEvent, RepairOutcome, RepairTask,
};
pub use failure::{
    extract_failure_info, same_original_failure, InfraError, MemoValidator, TableValidator,
    TestFailureInfo, ValidationResult, Validator,
};
pub use llm::{
    BackendConfig, BackendKind, ChatBackend, ChatMessage, LlmError, Role, ScriptedBackend, Session,
    TokenUsage,
};
pub use prompt::{
    build_alt_instruction, build_feedback, build_initial_prompt, extract_patch, FeedbackLevel,
    FeedbackVariant, PromptLevel, PromptVariant, SystemMessage,
};
